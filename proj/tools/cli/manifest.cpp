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

#include "cli/manifest.hpp"

#include <fstream>

#include "aod/error.hpp"

namespace aod::cli {

nlohmann::json RunManifest::to_json() const {
  return {{"command", command},   {"config", config},
          {"inputs", inputs},     {"outputs", outputs},
          {"seed", seed},         {"version", version},
          {"duration_seconds", duration_seconds}};
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
}

void write_manifest(const RunManifest& manifest, const std::filesystem::path& dir) {
  write_json(manifest.to_json(), dir / "manifest.json");
}

}  // namespace aod::cli
