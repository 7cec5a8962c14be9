// Copyright 2026 The CMSS Authors. All Rights Reserved.
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

#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace cmss {

// Artifact root: $CMSS_RUNS_DIR when set, otherwise ./runs.
std::filesystem::path runs_root();

// Exclusive writer lock on a run directory (a `.lock` file created with
// O_EXCL). Released on destruction.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct RunManifest {
  std::string run_id;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string started_at;
  std::string finished_at;
  std::vector<std::filesystem::path> artifacts;  // relative to the run dir
};

// Fails with ArtifactError when any listed artifact is missing.
void write_run_manifest(const RunManifest& manifest, const std::filesystem::path& run_dir);

std::string utc_timestamp();

}  // namespace cmss
