// Copyright 2026 The Prolif Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end. `run_cli` is separate from main() so tests can
// drive it in process.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace prolif::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDependency = 3;
inline constexpr int kExitNumeric = 4;

/// `args` excludes the program name. Errors are written to `out` as one JSON
/// object; the return value is the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out);

}  // namespace prolif::cli
