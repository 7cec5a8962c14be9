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

#include "cmss/run_dir.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <fstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "cmss/errors.hpp"

namespace cmss {

std::filesystem::path runs_root() {
  const char* env = std::getenv("CMSS_RUNS_DIR");
  if (env != nullptr && *env != '\0') return std::filesystem::path(env);
  return std::filesystem::path("runs");
}

RunLock::RunLock(const std::filesystem::path& run_dir) : path_(run_dir / ".lock") {
  std::filesystem::create_directories(run_dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) {
      throw ArtifactError(fmt::format("run directory {} is locked by another writer", run_dir.string()));
    }
    throw ArtifactError(fmt::format("cannot create {}: {}", path_.string(), std::strerror(errno)));
  }
  const std::string pid = std::to_string(::getpid());
  [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

void write_run_manifest(const RunManifest& manifest, const std::filesystem::path& run_dir) {
  nlohmann::json artifacts = nlohmann::json::array();
  for (const auto& rel : manifest.artifacts) {
    if (!std::filesystem::exists(run_dir / rel)) {
      throw ArtifactError(fmt::format("manifest lists missing artifact {}", rel.string()));
    }
    artifacts.push_back(rel.generic_string());
  }
  const nlohmann::json j = {{"run_id", manifest.run_id},
                            {"config_hash", manifest.config_hash},
                            {"seed", manifest.seed},
                            {"started_at", manifest.started_at},
                            {"finished_at", manifest.finished_at},
                            {"artifacts", artifacts}};
  const auto path = run_dir / "manifest.json";
  const auto tmp = run_dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw ArtifactError(fmt::format("cannot write {}", tmp.string()));
    out << j.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace cmss
