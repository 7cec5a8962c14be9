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

#include "cmss/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>
#include <sstream>

#include <fmt/format.h>

#include "cmss/binary_io.hpp"

namespace cmss {

std::string InputShape::to_string() const {
  return fmt::format("{}x{}x{}", channels, height, width);
}

DomainDataset::DomainDataset(InputShape shape, int n_classes, int n_source_domains,
                             Matrix source_inputs, std::vector<int> source_labels,
                             std::vector<int> source_domains, Matrix target_inputs,
                             Matrix target_test_inputs,
                             std::vector<int> target_test_labels)
    : shape_(shape),
      n_classes_(n_classes),
      n_source_domains_(n_source_domains),
      source_inputs_(std::move(source_inputs)),
      source_labels_(std::move(source_labels)),
      source_domains_(std::move(source_domains)),
      target_inputs_(std::move(target_inputs)),
      target_test_inputs_(std::move(target_test_inputs)),
      target_test_labels_(std::move(target_test_labels)) {
  if (n_classes_ < 2) throw ConfigError("n_classes must be at least 2");
  if (n_source_domains_ < 1) throw ConfigError("need at least one source domain");
  const auto dim = static_cast<Eigen::Index>(shape_.size());
  auto check_cols = [&](const Matrix& m, const char* name) {
    if (m.rows() > 0 && m.cols() != dim) {
      throw ArtifactError(fmt::format("{} has {} columns, input shape {} needs {}", name,
                                      m.cols(), shape_.to_string(), dim));
    }
  };
  check_cols(source_inputs_, "source pool");
  check_cols(target_inputs_, "target pool");
  check_cols(target_test_inputs_, "target test set");
  const auto ns = static_cast<std::size_t>(source_inputs_.rows());
  if (source_labels_.size() != ns || source_domains_.size() != ns) {
    throw ArtifactError("source labels/domains do not match the source pool size");
  }
  if (target_test_labels_.size() != static_cast<std::size_t>(target_test_inputs_.rows())) {
    throw ArtifactError("target test labels do not match the target test size");
  }
  for (int y : source_labels_) {
    if (y < 0 || y >= n_classes_) throw ArtifactError(fmt::format("source label {} out of range", y));
  }
  for (int y : target_test_labels_) {
    if (y < 0 || y >= n_classes_) throw ArtifactError(fmt::format("target label {} out of range", y));
  }
  for (int d : source_domains_) {
    if (d < 0 || d >= n_source_domains_) throw ArtifactError(fmt::format("domain id {} out of range", d));
  }
}

std::uint64_t DomainDataset::checksum() const {
  io::Fnv1a h;
  auto add_matrix = [&](const Matrix& m) {
    const std::int64_t dims[2] = {m.rows(), m.cols()};
    h.update(dims, sizeof(dims));
    h.update(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  };
  auto add_ints = [&](const std::vector<int>& v) {
    const std::uint64_t n = v.size();
    h.update(&n, sizeof(n));
    h.update(v.data(), sizeof(int) * v.size());
  };
  const int header[5] = {shape_.channels, shape_.height, shape_.width, n_classes_,
                         n_source_domains_};
  h.update(header, sizeof(header));
  add_matrix(source_inputs_);
  add_ints(source_labels_);
  add_ints(source_domains_);
  add_matrix(target_inputs_);
  add_matrix(target_test_inputs_);
  add_ints(target_test_labels_);
  return h.digest();
}

int DiagnosticsView::hidden_domain(std::size_t sample_id) const {
  const std::size_t ns = data_->source_size();
  if (sample_id < ns) return data_->source_domains_[sample_id];
  if (sample_id < ns + data_->target_size()) return data_->n_source_domains_;
  throw ArtifactError(fmt::format("sample id {} out of range", sample_id));
}

namespace {

double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

void draw_domain(const SyntheticConfig& config, double rotation_deg, int count, Rng& rng,
                 Matrix& inputs, std::vector<int>& labels, Eigen::Index row) {
  const double rotation = rotation_deg * std::numbers::pi / 180.0;
  for (int i = 0; i < count; ++i, ++row) {
    const int label = i % config.n_classes;
    const double angle = 2.0 * std::numbers::pi * label / config.n_classes + rotation;
    // Both normals are drawn even at zero noise to keep the stream aligned.
    const double nx = standard_normal(rng);
    const double ny = standard_normal(rng);
    inputs(row, 0) = round_to_float(std::cos(angle) + config.noise_std * nx);
    inputs(row, 1) = round_to_float(std::sin(angle) + config.noise_std * ny);
    labels.push_back(label);
  }
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

}  // namespace

DomainDataset generate_synthetic(const SyntheticConfig& config) {
  if (config.n_source_domains < 2) throw ConfigError("synthetic data needs at least 2 source domains");
  if (config.n_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (config.samples_per_domain <= 0) throw ConfigError("samples_per_domain must be positive");
  if (config.test_samples < 0) throw ConfigError("test_samples must be non-negative");
  if (std::isnan(config.noise_std) || config.noise_std < 0.0 || std::isinf(config.noise_std)) {
    throw ConfigError("noise_std must be a finite non-negative number");
  }
  if (config.rotations_deg.size() != static_cast<std::size_t>(config.n_source_domains) + 1) {
    throw ConfigError(fmt::format("rotations must list {} angles (sources then target), got {}",
                                  config.n_source_domains + 1, config.rotations_deg.size()));
  }
  for (double r : config.rotations_deg) {
    if (!std::isfinite(r)) throw ConfigError("rotation angles must be finite");
  }

  Rng rng(config.seed);
  const int per = config.samples_per_domain;
  const int n_sources = config.n_source_domains;
  const Eigen::Index ns = static_cast<Eigen::Index>(per) * n_sources;

  Matrix pooled(ns, 2);
  std::vector<int> pooled_labels;
  std::vector<int> pooled_domains;
  pooled_labels.reserve(static_cast<std::size_t>(ns));
  for (int d = 0; d < n_sources; ++d) {
    draw_domain(config, config.rotations_deg[static_cast<std::size_t>(d)], per, rng, pooled,
                pooled_labels, static_cast<Eigen::Index>(d) * per);
    pooled_domains.insert(pooled_domains.end(), static_cast<std::size_t>(per), d);
  }

  std::vector<std::size_t> order(static_cast<std::size_t>(ns));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(std::span(order), rng);
  Matrix source = gather_rows(pooled, order);
  std::vector<int> source_labels(order.size());
  std::vector<int> source_domains(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    source_labels[i] = pooled_labels[order[i]];
    source_domains[i] = pooled_domains[order[i]];
  }

  const double target_rotation = config.rotations_deg.back();
  Matrix target(per, 2);
  std::vector<int> discarded;
  draw_domain(config, target_rotation, per, rng, target, discarded, 0);
  // Target pool order is shuffled as well, so labels cannot be read off ids.
  std::vector<std::size_t> target_order(static_cast<std::size_t>(per));
  for (std::size_t i = 0; i < target_order.size(); ++i) target_order[i] = i;
  shuffle(std::span(target_order), rng);
  target = gather_rows(target, target_order);

  const int n_test = config.test_samples > 0 ? config.test_samples : per;
  Matrix test(n_test, 2);
  std::vector<int> test_labels;
  draw_domain(config, target_rotation, n_test, rng, test, test_labels, 0);

  return DomainDataset(InputShape{2, 1, 1}, config.n_classes, n_sources, std::move(source),
                       std::move(source_labels), std::move(source_domains), std::move(target),
                       std::move(test), std::move(test_labels));
}

DomainDataset standardize_inputs(const DomainDataset& data) {
  const TrainingView train = data.training_view();
  const DiagnosticsView diag = data.diagnostics_view();
  const Matrix& src = train.source_inputs();
  Eigen::RowVectorXd mean = src.colwise().mean();
  Eigen::RowVectorXd stddev =
      ((src.rowwise() - mean).array().square().colwise().sum() / std::max<Eigen::Index>(1, src.rows()))
          .sqrt();
  for (Eigen::Index j = 0; j < stddev.size(); ++j) {
    if (stddev(j) < 1e-12) stddev(j) = 1.0;
  }
  auto apply = [&](const Matrix& m) -> Matrix {
    if (m.rows() == 0) return m;
    Matrix out = (m.rowwise() - mean).array().rowwise() / stddev.array();
    return out;
  };
  return DomainDataset(
      train.input_shape(), train.n_classes(), diag.n_source_domains(), apply(src),
      std::vector<int>(train.source_labels().begin(), train.source_labels().end()),
      std::vector<int>(diag.source_domains().begin(), diag.source_domains().end()),
      apply(train.target_inputs()), apply(diag.target_test_inputs()),
      std::vector<int>(diag.target_test_labels().begin(), diag.target_test_labels().end()));
}

DomainDataset assemble_domains(const std::vector<LabeledSet>& sources,
                               const LabeledSet& target_train, const LabeledSet& target_test,
                               int n_classes, std::optional<std::size_t> per_domain_limit,
                               std::uint64_t seed) {
  if (sources.empty()) throw ConfigError("need at least one source domain");
  const InputShape shape = target_train.shape;
  Rng rng(seed);
  auto pick = [&](const LabeledSet& set) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(set.inputs.rows()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (per_domain_limit && *per_domain_limit < idx.size()) {
      shuffle(std::span(idx), rng);
      idx.resize(*per_domain_limit);
      std::sort(idx.begin(), idx.end());
    }
    return idx;
  };

  std::vector<std::size_t> total_rows;
  Eigen::Index ns = 0;
  std::vector<std::vector<std::size_t>> picks;
  for (const auto& s : sources) {
    if (!(s.shape == shape)) {
      throw ArtifactError(fmt::format("source shape {} differs from target shape {}",
                                      s.shape.to_string(), shape.to_string()));
    }
    picks.push_back(pick(s));
    ns += static_cast<Eigen::Index>(picks.back().size());
  }
  Matrix pooled(ns, static_cast<Eigen::Index>(shape.size()));
  std::vector<int> labels;
  std::vector<int> domains;
  Eigen::Index row = 0;
  for (std::size_t d = 0; d < sources.size(); ++d) {
    for (std::size_t i : picks[d]) {
      pooled.row(row++) = sources[d].inputs.row(static_cast<Eigen::Index>(i));
      labels.push_back(sources[d].labels[i]);
      domains.push_back(static_cast<int>(d));
    }
  }
  std::vector<std::size_t> order(static_cast<std::size_t>(ns));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(std::span(order), rng);
  std::vector<int> shuffled_labels(order.size());
  std::vector<int> shuffled_domains(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    shuffled_labels[i] = labels[order[i]];
    shuffled_domains[i] = domains[order[i]];
  }

  auto target_idx = pick(target_train);
  auto test_idx = pick(target_test);
  std::vector<int> test_labels;
  for (std::size_t i : test_idx) test_labels.push_back(target_test.labels[i]);

  return DomainDataset(shape, n_classes, static_cast<int>(sources.size()),
                       gather_rows(pooled, order), std::move(shuffled_labels),
                       std::move(shuffled_domains), gather_rows(target_train.inputs, target_idx),
                       gather_rows(target_test.inputs, test_idx), std::move(test_labels));
}

// ---- IDX ------------------------------------------------------------------

namespace {

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::kIo, fmt::format("cannot open {}", path.string()));
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

struct IdxHeader {
  std::vector<std::uint32_t> dims;
  std::size_t payload_offset;
  std::size_t element_count;
};

IdxHeader parse_idx_header(const std::vector<unsigned char>& bytes, std::uint32_t expected_magic,
                           const std::filesystem::path& path) {
  if (bytes.size() < 4) {
    throw IdxError(IdxError::Kind::kTruncated, fmt::format("{}: truncated IDX header", path.string()));
  }
  const std::uint32_t magic = io::load_be_u32(bytes.data());
  if (magic != expected_magic) {
    throw IdxError(IdxError::Kind::kBadMagic,
                   fmt::format("{}: magic 0x{:08x}, expected 0x{:08x}", path.string(), magic,
                               expected_magic));
  }
  const std::size_t ndims = magic & 0xffu;
  IdxHeader header;
  header.payload_offset = 4 + 4 * ndims;
  if (bytes.size() < header.payload_offset) {
    throw IdxError(IdxError::Kind::kTruncated, fmt::format("{}: truncated IDX header", path.string()));
  }
  // Anything above 2^40 elements cannot be a real dataset file.
  constexpr std::size_t kMaxElements = std::size_t{1} << 40;
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    const std::uint32_t d = io::load_be_u32(bytes.data() + 4 + 4 * i);
    header.dims.push_back(d);
    if (d != 0 && count > kMaxElements / d) {
      throw IdxError(IdxError::Kind::kDimOverflow,
                     fmt::format("{}: IDX dimensions overflow", path.string()));
    }
    count *= d;
  }
  header.element_count = count;
  if (bytes.size() - header.payload_offset < count) {
    throw IdxError(IdxError::Kind::kTruncated,
                   fmt::format("{}: payload has {} bytes, header declares {}", path.string(),
                               bytes.size() - header.payload_offset, count));
  }
  return header;
}

}  // namespace

LabeledSet load_idx_images(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const IdxHeader header = parse_idx_header(bytes, kIdxImageMagic, path);
  const auto n = static_cast<Eigen::Index>(header.dims[0]);
  LabeledSet set;
  set.shape = InputShape{1, static_cast<int>(header.dims[1]), static_cast<int>(header.dims[2])};
  const auto dim = static_cast<Eigen::Index>(set.shape.size());
  set.inputs.resize(n, dim);
  const unsigned char* p = bytes.data() + header.payload_offset;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) set.inputs(i, j) = p[i * dim + j] / 255.0;
  }
  return set;
}

std::vector<int> load_idx_labels(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const IdxHeader header = parse_idx_header(bytes, kIdxLabelMagic, path);
  const unsigned char* p = bytes.data() + header.payload_offset;
  return std::vector<int>(p, p + header.dims[0]);
}

LabeledSet load_idx_dataset(const std::filesystem::path& images_path,
                            const std::filesystem::path& labels_path) {
  LabeledSet set = load_idx_images(images_path);
  set.labels = load_idx_labels(labels_path);
  if (set.labels.size() != static_cast<std::size_t>(set.inputs.rows())) {
    throw IdxError(IdxError::Kind::kCountMismatch,
                   fmt::format("{} images but {} labels", set.inputs.rows(), set.labels.size()));
  }
  return set;
}

// ---- CSV manifest -----------------------------------------------------------

namespace {

std::string next_pgm_token(std::istream& in) {
  std::string token;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      token.push_back(c);
      break;
    }
  }
  while (in.get(c) && !std::isspace(static_cast<unsigned char>(c))) token.push_back(c);
  return token;
}

Eigen::RowVectorXd load_pgm(const std::filesystem::path& path, InputShape& shape) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError(fmt::format("cannot open image {}", path.string()));
  if (next_pgm_token(in) != "P5") throw ArtifactError(fmt::format("{}: not a binary PGM", path.string()));
  int width = 0, height = 0, maxval = 0;
  try {
    width = std::stoi(next_pgm_token(in));
    height = std::stoi(next_pgm_token(in));
    maxval = std::stoi(next_pgm_token(in));
  } catch (const std::exception&) {
    throw ArtifactError(fmt::format("{}: malformed PGM header", path.string()));
  }
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
    throw ArtifactError(fmt::format("{}: unsupported PGM geometry", path.string()));
  }
  shape = InputShape{1, height, width};
  std::vector<unsigned char> px(shape.size());
  in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (in.gcount() != static_cast<std::streamsize>(px.size())) {
    throw ArtifactError(fmt::format("{}: truncated PGM payload", path.string()));
  }
  Eigen::RowVectorXd row(static_cast<Eigen::Index>(px.size()));
  for (std::size_t i = 0; i < px.size(); ++i) row(static_cast<Eigen::Index>(i)) = px[i] / double(maxval);
  return row;
}

}  // namespace

std::vector<LabeledSet> load_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw ArtifactError(fmt::format("cannot open manifest {}", manifest.string()));
  std::map<int, std::vector<std::pair<Eigen::RowVectorXd, int>>> by_domain;
  std::optional<InputShape> shape;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string path, label, domain;
    if (!std::getline(ss, path, ',') || !std::getline(ss, label, ',') || !std::getline(ss, domain)) {
      throw ArtifactError(fmt::format("{}:{}: expected path,label,domain", manifest.string(), line_no));
    }
    int y = 0, d = 0;
    try {
      y = std::stoi(label);
      d = std::stoi(domain);
    } catch (const std::exception&) {
      throw ArtifactError(fmt::format("{}:{}: label and domain must be integers", manifest.string(), line_no));
    }
    if (d < 0) throw ArtifactError(fmt::format("{}:{}: negative domain id", manifest.string(), line_no));
    std::filesystem::path image = path;
    if (image.is_relative()) image = manifest.parent_path() / image;
    InputShape s;
    auto row = load_pgm(image, s);
    if (shape && !(*shape == s)) {
      throw ArtifactError(fmt::format("{}:{}: image shape {} differs from {}", manifest.string(),
                                      line_no, s.to_string(), shape->to_string()));
    }
    shape = s;
    by_domain[d].emplace_back(std::move(row), y);
  }
  if (by_domain.empty()) throw ArtifactError(fmt::format("manifest {} is empty", manifest.string()));
  std::vector<LabeledSet> sets(static_cast<std::size_t>(by_domain.rbegin()->first) + 1);
  for (auto& set : sets) {
    set.shape = *shape;
    set.inputs.resize(0, static_cast<Eigen::Index>(shape->size()));
  }
  for (auto& [d, rows] : by_domain) {
    auto& set = sets[static_cast<std::size_t>(d)];
    set.inputs.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(shape->size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      set.inputs.row(static_cast<Eigen::Index>(i)) = rows[i].first;
      set.labels.push_back(rows[i].second);
    }
  }
  return sets;
}

// ---- synthetic export -------------------------------------------------------

void write_synthetic_export(const DomainDataset& data, const std::filesystem::path& path) {
  const TrainingView train = data.training_view();
  const DiagnosticsView diag = data.diagnostics_view();
  if (train.input_shape().size() != 2) {
    throw ArtifactError("synthetic export only supports 2-D inputs");
  }
  const Matrix& test = diag.target_test_inputs();
  const std::uint32_t count = static_cast<std::uint32_t>(train.source_size() + train.target_size() +
                                                         static_cast<std::size_t>(test.rows()));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArtifactError(fmt::format("cannot write {}", path.string()));
  io::write_le<std::uint32_t>(out, kSyntheticExportVersion);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(diag.n_source_domains()));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(train.n_classes()));
  io::write_le<std::uint32_t>(out, count);
  auto write_rows = [&](const Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      io::write_le<float>(out, static_cast<float>(m(i, 0)));
      io::write_le<float>(out, static_cast<float>(m(i, 1)));
    }
  };
  write_rows(train.source_inputs());
  write_rows(train.target_inputs());
  write_rows(test);
  for (int y : train.source_labels()) io::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(y));
  for (std::size_t i = 0; i < train.target_size(); ++i) io::write_le<std::uint8_t>(out, kUnlabeled);
  for (int y : diag.target_test_labels()) io::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(y));
  for (int d : diag.source_domains()) io::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(d));
  const auto target_domain = static_cast<std::uint8_t>(diag.n_source_domains());
  for (std::size_t i = 0; i < train.target_size() + static_cast<std::size_t>(test.rows()); ++i) {
    io::write_le<std::uint8_t>(out, target_domain);
  }
  if (!out) throw ArtifactError(fmt::format("write failed for {}", path.string()));
}

DomainDataset read_synthetic_export(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError(fmt::format("cannot open {}", path.string()));
  const auto version = io::read_le<std::uint32_t>(in, "export version");
  if (version != kSyntheticExportVersion) {
    throw ArtifactError(fmt::format("{}: unsupported export version {}", path.string(), version));
  }
  const auto n_sources = io::read_le<std::uint32_t>(in, "S");
  const auto n_classes = io::read_le<std::uint32_t>(in, "n_classes");
  const auto count = io::read_le<std::uint32_t>(in, "count");
  std::vector<float> xs(2 * static_cast<std::size_t>(count));
  for (auto& v : xs) v = io::read_le<float>(in, "rows");
  std::vector<std::uint8_t> labels(count), domains(count);
  for (auto& v : labels) v = io::read_le<std::uint8_t>(in, "labels");
  for (auto& v : domains) v = io::read_le<std::uint8_t>(in, "domains");

  std::vector<std::size_t> src, tgt, test;
  for (std::size_t i = 0; i < count; ++i) {
    if (domains[i] < n_sources) {
      if (labels[i] == kUnlabeled) throw ArtifactError("source row without a label");
      src.push_back(i);
    } else if (domains[i] == n_sources) {
      (labels[i] == kUnlabeled ? tgt : test).push_back(i);
    } else {
      throw ArtifactError(fmt::format("{}: domain id {} out of range", path.string(), domains[i]));
    }
  }
  auto rows = [&](const std::vector<std::size_t>& idx) {
    Matrix m(static_cast<Eigen::Index>(idx.size()), 2);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      m(static_cast<Eigen::Index>(r), 0) = xs[2 * idx[r]];
      m(static_cast<Eigen::Index>(r), 1) = xs[2 * idx[r] + 1];
    }
    return m;
  };
  std::vector<int> src_labels, src_domains, test_labels;
  for (std::size_t i : src) {
    src_labels.push_back(labels[i]);
    src_domains.push_back(domains[i]);
  }
  for (std::size_t i : test) test_labels.push_back(labels[i]);
  return DomainDataset(InputShape{2, 1, 1}, static_cast<int>(n_classes),
                       static_cast<int>(n_sources), rows(src), std::move(src_labels),
                       std::move(src_domains), rows(tgt), rows(test), std::move(test_labels));
}

// ---- batching ---------------------------------------------------------------

Batcher::Batcher(TrainingView view, std::size_t source_batch, std::size_t target_batch,
                 std::uint64_t seed)
    : view_(view),
      source_batch_(source_batch),
      target_batch_(target_batch),
      source_rng_(derive_seed(seed, 0)),
      target_rng_(derive_seed(seed, 1)) {
  if (source_batch_ == 0 || target_batch_ == 0) throw ConfigError("batch sizes must be positive");
  if (source_batch_ > view_.source_size()) {
    throw ConfigError(fmt::format("source batch {} exceeds source pool {}", source_batch_,
                                  view_.source_size()));
  }
  if (target_batch_ > view_.target_size()) {
    throw ConfigError(fmt::format("target batch {} exceeds target pool {}", target_batch_,
                                  view_.target_size()));
  }
  source_order_.resize(view_.source_size());
  target_order_.resize(view_.target_size());
  for (std::size_t i = 0; i < source_order_.size(); ++i) source_order_[i] = i;
  for (std::size_t i = 0; i < target_order_.size(); ++i) target_order_[i] = view_.source_size() + i;
  reshuffle_source();
  reshuffle_target();
}

void Batcher::reshuffle_source() {
  shuffle(std::span(source_order_), source_rng_);
  source_cursor_ = 0;
}

void Batcher::reshuffle_target() {
  shuffle(std::span(target_order_), target_rng_);
  target_cursor_ = 0;
}

Batch Batcher::next() {
  if (source_cursor_ + source_batch_ > source_order_.size()) {
    reshuffle_source();
    ++epoch_;
  }
  if (target_cursor_ + target_batch_ > target_order_.size()) reshuffle_target();

  Batch batch;
  const auto dim = static_cast<Eigen::Index>(view_.input_shape().size());
  const std::size_t ns = view_.source_size();
  batch.source_inputs.resize(static_cast<Eigen::Index>(source_batch_), dim);
  batch.target_inputs.resize(static_cast<Eigen::Index>(target_batch_), dim);
  for (std::size_t i = 0; i < source_batch_; ++i) {
    const std::size_t id = source_order_[source_cursor_ + i];
    batch.source_inputs.row(static_cast<Eigen::Index>(i)) =
        view_.source_inputs().row(static_cast<Eigen::Index>(id));
    batch.source_labels.push_back(view_.source_labels()[id]);
    batch.source_ids.push_back(id);
  }
  for (std::size_t i = 0; i < target_batch_; ++i) {
    const std::size_t id = target_order_[target_cursor_ + i];
    batch.target_inputs.row(static_cast<Eigen::Index>(i)) =
        view_.target_inputs().row(static_cast<Eigen::Index>(id - ns));
    batch.target_ids.push_back(id);
  }
  source_cursor_ += source_batch_;
  target_cursor_ += target_batch_;
  return batch;
}

BatcherState Batcher::state() const {
  return BatcherState{source_order_, target_order_, source_cursor_, target_cursor_,
                      epoch_,        rng_state(source_rng_), rng_state(target_rng_)};
}

void Batcher::restore(const BatcherState& state) {
  if (state.source_order.size() != view_.source_size() ||
      state.target_order.size() != view_.target_size()) {
    throw ArtifactError("batcher state does not match the dataset sizes");
  }
  source_order_ = state.source_order;
  target_order_ = state.target_order;
  source_cursor_ = state.source_cursor;
  target_cursor_ = state.target_cursor;
  epoch_ = state.epoch;
  source_rng_ = rng_from_state(state.source_rng);
  target_rng_ = rng_from_state(state.target_rng);
}

}  // namespace cmss
