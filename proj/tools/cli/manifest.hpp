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

#ifndef AOD_TOOLS_CLI_MANIFEST_HPP_
#define AOD_TOOLS_CLI_MANIFEST_HPP_

#include <chrono>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <string>

namespace aod::cli {

// One per run, written next to the outputs. `config` holds every resolved
// value, defaults included, so the run can be replayed from the manifest.
struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
  std::uint64_t seed = 0;
  std::string version;
  double duration_seconds = 0.0;

  nlohmann::json to_json() const;
};

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void write_manifest(const RunManifest& manifest, const std::filesystem::path& dir);

void write_json(const nlohmann::json& j, const std::filesystem::path& path);

}  // namespace aod::cli

#endif  // AOD_TOOLS_CLI_MANIFEST_HPP_
