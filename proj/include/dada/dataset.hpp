#pragma once

// Series ingestion, channel splitting, windowing and per-window normalization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dada/error.hpp"

namespace dada {

using Labels = std::vector<std::uint8_t>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using LabelMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kStdFloor = 1e-8;

struct TimeSeries {
  std::string name;
  std::string domain_tag;
  RowMatrix values;  // T x C
  std::optional<Labels> labels;
  std::optional<std::string> sample_interval;

  std::size_t length() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t channels() const { return static_cast<std::size_t>(values.cols()); }
};

struct ChannelView {
  std::string parent;
  std::size_t channel_index = 0;
  std::vector<double> values;
  std::optional<Labels> labels;
};

struct WindowOrigin {
  std::string series;
  std::size_t channel = 0;
  std::size_t start = 0;
  // Number of real points; the rest of a padded tail repeats the last value.
  std::size_t valid = 0;
  bool padded = false;
};

struct WindowStats {
  double mean = 0.0;
  double std = 1.0;
};

struct WindowBatch {
  RowMatrix windows;  // N x W
  std::optional<LabelMatrix> labels;
  std::vector<WindowOrigin> origin;
  std::vector<WindowStats> stats;

  std::size_t size() const { return static_cast<std::size_t>(windows.rows()); }
  std::size_t width() const { return static_cast<std::size_t>(windows.cols()); }
};

enum class WindowMode { kTrain, kTest };

enum class Role { kNormal, kAbnormal, kTest };

struct ManifestEntry {
  std::string path;
  Role role = Role::kNormal;
  std::string domain_tag;
  std::string format = "csv";
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline bool is_missing(const std::string& cell) {
  return cell.empty() || cell == "nan" || cell == "NaN" || cell == "NA" || cell == "null";
}

}  // namespace detail

// Fills non-finite entries by linear interpolation between the nearest finite
// neighbours; leading/trailing gaps hold the nearest finite value.
inline void impute_linear(std::vector<double>& x) {
  const std::size_t n = x.size();
  std::size_t prev = n;  // index of last finite value
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(x[i])) continue;
    if (prev == n) {
      for (std::size_t j = 0; j < i; ++j) x[j] = x[i];
    } else if (i > prev + 1) {
      const double span = static_cast<double>(i - prev);
      for (std::size_t j = prev + 1; j < i; ++j) {
        const double a = static_cast<double>(j - prev) / span;
        x[j] = (1.0 - a) * x[prev] + a * x[i];
      }
    }
    prev = i;
  }
  if (prev == n) throw DataError("MalformedFile", "channel contains no finite values");
  for (std::size_t j = prev + 1; j < n; ++j) x[j] = x[prev];
}

inline TimeSeries load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("MalformedFile", "cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw DataError("MalformedFile", "missing header in " + path.string());
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);  // BOM
  const auto header = detail::split_csv_line(line);
  if (header.empty()) throw DataError("MalformedFile", "empty header in " + path.string());

  const bool has_label = header.back() == "label";
  const std::size_t channels = header.size() - (has_label ? 1 : 0);
  if (channels == 0) throw DataError("MalformedFile", "no channel columns in " + path.string());
  for (std::size_t c = 0; c < channels; ++c) {
    if (header[c] != "c" + std::to_string(c)) {
      throw DataError("MalformedFile", "unexpected column '" + header[c] + "' in " + path.string());
    }
  }

  std::vector<std::vector<double>> cols(channels);
  Labels labels;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) {
      throw DataError("MalformedFile", path.string() + ":" + std::to_string(row) + ": expected " +
                                           std::to_string(header.size()) + " cells, got " +
                                           std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c < channels; ++c) {
      double v = std::numeric_limits<double>::quiet_NaN();
      if (!detail::is_missing(cells[c])) {
        try {
          std::size_t used = 0;
          v = std::stod(cells[c], &used);
          if (used != cells[c].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
          throw DataError("MalformedFile", path.string() + ":" + std::to_string(row) +
                                               ": bad number '" + cells[c] + "'");
        }
      }
      cols[c].push_back(v);
    }
    if (has_label) {
      const auto& lab = cells.back();
      if (lab != "0" && lab != "1") {
        throw DataError("MalformedFile", path.string() + ":" + std::to_string(row) +
                                             ": label must be 0 or 1");
      }
      labels.push_back(lab == "1" ? 1 : 0);
    }
  }

  const std::size_t t = cols[0].size();
  if (t == 0) throw DataError("EmptySeries", path.string() + " has no rows");

  TimeSeries ts;
  ts.name = path.stem().string();
  ts.values.resize(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(channels));
  for (std::size_t c = 0; c < channels; ++c) {
    impute_linear(cols[c]);
    for (std::size_t i = 0; i < t; ++i) ts.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = cols[c][i];
  }
  if (has_label) ts.labels = std::move(labels);
  return ts;
}

inline void write_csv(const std::filesystem::path& path, const TimeSeries& ts) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("MalformedFile", "cannot write " + path.string());
  const auto c = ts.channels();
  for (std::size_t j = 0; j < c; ++j) out << (j ? "," : "") << 'c' << j;
  if (ts.labels) out << ",label";
  out << '\n' << std::setprecision(17);
  for (Eigen::Index i = 0; i < ts.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < ts.values.cols(); ++j) out << (j ? "," : "") << ts.values(i, j);
    if (ts.labels) out << ',' << static_cast<int>((*ts.labels)[static_cast<std::size_t>(i)]);
    out << '\n';
  }
}

inline std::vector<ChannelView> split_channels(const TimeSeries& ts) {
  std::vector<ChannelView> views;
  views.reserve(ts.channels());
  for (std::size_t c = 0; c < ts.channels(); ++c) {
    ChannelView v;
    v.parent = ts.name;
    v.channel_index = c;
    const auto col = ts.values.col(static_cast<Eigen::Index>(c));
    v.values.resize(ts.length());
    for (std::size_t i = 0; i < ts.length(); ++i) v.values[i] = col(static_cast<Eigen::Index>(i));
    v.labels = ts.labels;
    views.push_back(std::move(v));
  }
  return views;
}

// Inverse of split_channels for views sharing one parent.
inline RowMatrix stack_channels(const std::vector<ChannelView>& views) {
  if (views.empty()) return {};
  const auto t = static_cast<Eigen::Index>(views.front().values.size());
  RowMatrix m(t, static_cast<Eigen::Index>(views.size()));
  for (std::size_t c = 0; c < views.size(); ++c) {
    for (Eigen::Index i = 0; i < t; ++i) m(i, static_cast<Eigen::Index>(c)) = views[c].values[static_cast<std::size_t>(i)];
  }
  return m;
}

// Slices a channel into length-W windows. Test mode forces stride = W and the
// final partial window is padded by repeating the last value.
inline WindowBatch make_windows(const ChannelView& cv, std::size_t w, std::size_t stride,
                                WindowMode mode = WindowMode::kTrain) {
  const std::size_t t = cv.values.size();
  if (w == 0 || stride == 0) throw ConfigError("window length and stride must be positive");
  if (t < w) {
    throw DataError("SeriesTooShort", cv.parent + " has " + std::to_string(t) +
                                          " points, window needs " + std::to_string(w));
  }
  if (mode == WindowMode::kTest) stride = w;

  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + w <= t; s += stride) starts.push_back(s);
  const std::size_t covered = starts.back() + w;
  if (covered < t && starts.back() + stride < t) starts.push_back(starts.back() + stride);

  WindowBatch batch;
  const auto n = static_cast<Eigen::Index>(starts.size());
  batch.windows.resize(n, static_cast<Eigen::Index>(w));
  if (cv.labels) batch.labels = LabelMatrix::Zero(n, static_cast<Eigen::Index>(w));
  for (Eigen::Index k = 0; k < n; ++k) {
    const std::size_t s = starts[static_cast<std::size_t>(k)];
    const std::size_t valid = std::min(w, t - s);
    for (std::size_t i = 0; i < w; ++i) {
      const std::size_t src = s + std::min(i, valid - 1);
      batch.windows(k, static_cast<Eigen::Index>(i)) = cv.values[src];
      if (cv.labels) (*batch.labels)(k, static_cast<Eigen::Index>(i)) = i < valid ? (*cv.labels)[src] : 0;
    }
    batch.origin.push_back({cv.parent, cv.channel_index, s, valid, valid < w});
    batch.stats.push_back({});
  }
  return batch;
}

// Per-window z-score; the statistics are kept for de-normalization.
inline WindowBatch normalize(WindowBatch batch) {
  const auto w = static_cast<double>(batch.width());
  for (Eigen::Index k = 0; k < batch.windows.rows(); ++k) {
    auto row = batch.windows.row(k);
    const double mean = row.sum() / w;
    const double var = (row.array() - mean).square().sum() / w;
    const double sd = std::max(std::sqrt(var), kStdFloor);
    row = (row.array() - mean) / sd;
    batch.stats[static_cast<std::size_t>(k)] = {mean, sd};
  }
  return batch;
}

inline RowMatrix denormalize(const RowMatrix& normalized, const std::vector<WindowStats>& stats) {
  RowMatrix out = normalized;
  for (Eigen::Index k = 0; k < out.rows(); ++k) {
    const auto& s = stats[static_cast<std::size_t>(k)];
    out.row(k) = out.row(k).array() * s.std + s.mean;
  }
  return out;
}

// Concatenates batches in order.
inline WindowBatch concat(const std::vector<WindowBatch>& parts) {
  WindowBatch out;
  Eigen::Index rows = 0, cols = 0;
  bool labelled = !parts.empty();
  for (const auto& p : parts) {
    rows += p.windows.rows();
    if (p.windows.cols()) cols = p.windows.cols();
    labelled = labelled && p.labels.has_value();
  }
  out.windows.resize(rows, cols);
  if (labelled) out.labels = LabelMatrix(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    if (p.windows.rows() == 0) continue;
    out.windows.middleRows(r, p.windows.rows()) = p.windows;
    if (labelled) out.labels->middleRows(r, p.windows.rows()) = *p.labels;
    out.origin.insert(out.origin.end(), p.origin.begin(), p.origin.end());
    out.stats.insert(out.stats.end(), p.stats.begin(), p.stats.end());
    r += p.windows.rows();
  }
  return out;
}

inline WindowBatch select_rows(const WindowBatch& b, const std::vector<std::size_t>& rows) {
  WindowBatch out;
  const auto n = static_cast<Eigen::Index>(rows.size());
  out.windows.resize(n, b.windows.cols());
  if (b.labels) out.labels = LabelMatrix(n, b.windows.cols());
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto src = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(k)]);
    out.windows.row(k) = b.windows.row(src);
    if (b.labels) out.labels->row(k) = b.labels->row(src);
    out.origin.push_back(b.origin[static_cast<std::size_t>(src)]);
    out.stats.push_back(b.stats[static_cast<std::size_t>(src)]);
  }
  return out;
}

// Deterministic permutation of [0, n) for a given seed.
inline std::vector<std::size_t> seeded_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

// ---- manifest ----

inline std::string to_string(Role r) {
  switch (r) {
    case Role::kNormal: return "normal";
    case Role::kAbnormal: return "abnormal";
    case Role::kTest: return "test";
  }
  return "normal";
}

inline Role role_from_string(const std::string& s) {
  if (s == "normal") return Role::kNormal;
  if (s == "abnormal") return Role::kAbnormal;
  if (s == "test") return Role::kTest;
  throw ConfigError("unknown manifest role '" + s + "'");
}

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"path", e.path}, {"role", to_string(e.role)}, {"domain_tag", e.domain_tag},
                       {"format", e.format}});
  }
  return {{"entries", entries}, {"seed", m.seed}};
}

// Relative entry paths resolve against base_dir.
inline DatasetManifest manifest_from_json(const nlohmann::json& j,
                                          const std::filesystem::path& base_dir = {}) {
  DatasetManifest m;
  try {
    for (const auto& [key, _] : j.items()) {
      if (key != "entries" && key != "seed") throw ConfigError("unknown manifest key '" + key + "'");
    }
    m.seed = j.value("seed", std::uint64_t{0});
    for (const auto& e : j.at("entries")) {
      ManifestEntry me;
      for (const auto& [key, _] : e.items()) {
        if (key != "path" && key != "role" && key != "domain_tag" && key != "format") {
          throw ConfigError("unknown manifest entry key '" + key + "'");
        }
      }
      std::filesystem::path p = e.at("path").get<std::string>();
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      me.path = p.string();
      me.role = role_from_string(e.at("role").get<std::string>());
      me.domain_tag = e.value("domain_tag", std::string{});
      me.format = e.value("format", std::string{"csv"});
      if (me.format != "csv") throw ConfigError("unsupported format '" + me.format + "'");
      m.entries.push_back(std::move(me));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("manifest: ") + ex.what());
  }
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError("manifest " + path.string() + ": " + ex.what());
  }
  auto m = manifest_from_json(j, path.parent_path());
  for (const auto& e : m.entries) {
    if (!std::filesystem::is_regular_file(e.path)) throw ConfigError("manifest path not found: " + e.path);
  }
  return m;
}

inline void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << to_json(m).dump(2) << '\n';
}

inline TimeSeries load(const ManifestEntry& e) {
  auto ts = load_csv(e.path);
  ts.domain_tag = e.domain_tag;
  return ts;
}

// Training windows (normalized) from every entry of the given role.
inline WindowBatch training_windows(const DatasetManifest& m, Role role, std::size_t w,
                                    std::size_t stride) {
  std::vector<WindowBatch> parts;
  for (const auto& e : m.entries) {
    if (e.role != role) continue;
    const auto ts = load(e);
    for (const auto& cv : split_channels(ts)) {
      if (cv.values.size() < w) continue;
      parts.push_back(normalize(make_windows(cv, w, stride, WindowMode::kTrain)));
    }
  }
  return concat(parts);
}

}  // namespace dada
