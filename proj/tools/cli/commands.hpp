/* Copyright 2026 The AOD Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef AOD_TOOLS_CLI_COMMANDS_HPP_
#define AOD_TOOLS_CLI_COMMANDS_HPP_

#include <ostream>
#include <string>
#include <vector>

namespace aod::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Entry point shared by the `aod` binary and the in-process CLI tests.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace aod::cli

#endif  // AOD_TOOLS_CLI_COMMANDS_HPP_
