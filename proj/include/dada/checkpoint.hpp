#pragma once

// Binary checkpoint archive.
//
// Layout: 8-byte magic "DADACKPT", uint32 format version, uint64 header
// length, a JSON header, then the tensors as little-endian float64 in header
// order. The header carries the net config, tensor names/shapes and any
// trainer state (optimizer step, RNG state, epoch).

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dada/error.hpp"
#include "dada/network.hpp"

namespace dada {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'D', 'A', 'D', 'A', 'C', 'K', 'P', 'T'};

struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, net::Mat<double>>> tensors;

  const net::Mat<double>* find(const std::string& name) const {
    for (const auto& [n, m] : tensors) {
      if (n == name) return &m;
    }
    return nullptr;
  }
  bool contains(const std::string& name) const { return find(name) != nullptr; }
};

inline void save_archive(const std::filesystem::path& path, const Archive& a) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian");
  nlohmann::json header = a.meta;
  nlohmann::json index = nlohmann::json::array();
  for (const auto& [name, m] : a.tensors) index.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  header["tensors"] = index;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("CheckpointIO", "cannot write " + path.string());
  const std::uint64_t len = text.size();
  out.write(kCheckpointMagic, 8);
  out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof kCheckpointVersion);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [_, m] : a.tensors) {
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!out) throw DataError("CheckpointIO", "short write to " + path.string());
}

inline Archive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("CheckpointIO", "cannot open " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw DataError("CheckpointIO", path.string() + " is not a checkpoint");
  if (version != kCheckpointVersion) {
    throw DataError("CheckpointIO", "unsupported checkpoint version " + std::to_string(version));
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  Archive a;
  try {
    a.meta = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw DataError("CheckpointIO", std::string("corrupt header: ") + ex.what());
  }
  for (const auto& t : a.meta.at("tensors")) {
    net::Mat<double> m(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    a.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
  }
  if (!in) throw DataError("CheckpointIO", "truncated checkpoint " + path.string());
  a.meta.erase("tensors");
  return a;
}

template <class T>
void put_params(Archive& a, const net::Params<T>& p, const std::string& prefix = "") {
  p.for_each([&](const std::string& name, net::Group, const net::Mat<T>& m) {
    a.tensors.emplace_back(prefix + name, m.template cast<double>());
  });
}

// Fills every tensor of p (shapes already set) from the archive.
template <class T>
void get_params(const Archive& a, net::Params<T>& p, const std::string& prefix = "") {
  p.for_each([&](const std::string& name, net::Group, net::Mat<T>& m) {
    const auto* src = a.find(prefix + name);
    if (src == nullptr) throw DataError("CheckpointIO", "missing tensor " + prefix + name);
    if (src->rows() != m.rows() || src->cols() != m.cols()) {
      throw DataError("CheckpointIO", "shape mismatch for " + prefix + name);
    }
    m = src->template cast<T>();
  });
}

template <class T>
Archive make_checkpoint(const net::Network<T>& model) {
  Archive a;
  a.meta["format_version"] = kCheckpointVersion;
  a.meta["net"] = net::to_json(model.config());
  put_params(a, model.params());
  return a;
}

template <class T>
net::Network<T> network_from_archive(const Archive& a) {
  const auto cfg = net::net_config_from_json(a.meta.at("net"));
  net::Network<T> model(cfg, std::uint64_t{0});
  get_params(a, model.params());
  return model;
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const net::Network<T>& model) {
  save_archive(path, make_checkpoint(model));
}

template <class T>
net::Network<T> load_checkpoint(const std::filesystem::path& path) {
  return network_from_archive<T>(load_archive(path));
}

}  // namespace dada
