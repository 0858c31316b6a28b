#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "isfl/data.hpp"
#include "isfl/errors.hpp"

namespace isfl {

namespace le {

inline void put_u16(std::ostream& os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)};
  os.write(b, 2);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 8);
}

inline void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

template <std::size_t N>
inline std::array<unsigned char, N> read_bytes(std::istream& is) {
  std::array<unsigned char, N> b{};
  is.read(reinterpret_cast<char*>(b.data()), N);
  if (!is) throw IoError("unexpected end of stream");
  return b;
}

inline std::uint16_t get_u16(std::istream& is) {
  auto b = read_bytes<2>(is);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t get_u32(std::istream& is) {
  auto b = read_bytes<4>(is);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
  return v;
}

inline std::uint64_t get_u64(std::istream& is) {
  auto b = read_bytes<8>(is);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
  return v;
}

inline float get_f32(std::istream& is) { return std::bit_cast<float>(get_u32(is)); }
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

}  // namespace le

inline constexpr char kDatasetMagic[] = "ISFLDS1";  // 7 bytes on disk, no terminator

/// Binary container: magic, u32 N, u32 d, u32 C (little-endian), then N*d
/// row-major f32 features and N u16 labels. Features are narrowed to f32.
inline void write_dataset(std::ostream& os, const Dataset& ds) {
  os.write(kDatasetMagic, 7);
  le::put_u32(os, static_cast<std::uint32_t>(ds.size()));
  le::put_u32(os, static_cast<std::uint32_t>(ds.dim()));
  le::put_u32(os, static_cast<std::uint32_t>(ds.classes()));
  for (double v : ds.features()) le::put_f32(os, static_cast<float>(v));
  for (int y : ds.labels()) le::put_u16(os, static_cast<std::uint16_t>(y));
  if (!os) throw IoError("write_dataset: stream failure");
}

inline Dataset read_dataset(std::istream& is) {
  char magic[7];
  is.read(magic, 7);
  if (!is || std::memcmp(magic, kDatasetMagic, 7) != 0) throw IoError("read_dataset: bad magic");
  const auto n = le::get_u32(is);
  const auto d = le::get_u32(is);
  const auto c = le::get_u32(is);
  if (n == 0 || d == 0 || c == 0) throw IoError("read_dataset: empty header dimensions");
  std::vector<double> f(static_cast<std::size_t>(n) * d);
  for (auto& v : f) v = static_cast<double>(le::get_f32(is));
  std::vector<int> y(n);
  for (auto& v : y) v = le::get_u16(is);
  try {
    return Dataset(std::move(f), std::move(y), d, c);
  } catch (const ArgumentError& e) {
    throw IoError(std::string("read_dataset: invalid contents: ") + e.what());
  }
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_dataset(os, ds);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_dataset(is);
}

/// CSV rows `label,f0,f1,...`. A first line that does not start with a digit
/// is treated as a header. C is max(label) + 1 unless `classes` is given.
inline Dataset read_dataset_csv(std::istream& is, std::size_t classes = 0) {
  std::vector<double> f;
  std::vector<int> y;
  std::size_t dim = 0;
  std::string line;
  std::size_t lineno = 0;
  int max_label = -1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && !(line[0] >= '0' && line[0] <= '9')) continue;
    std::vector<std::string_view> cells;
    std::string_view rest(line);
    while (true) {
      auto pos = rest.find(',');
      cells.push_back(rest.substr(0, pos));
      if (pos == std::string_view::npos) break;
      rest.remove_prefix(pos + 1);
    }
    if (cells.size() < 2) throw IoError("csv line " + std::to_string(lineno) + ": need label and features");
    if (dim == 0) dim = cells.size() - 1;
    if (cells.size() - 1 != dim) throw IoError("csv line " + std::to_string(lineno) + ": ragged row");
    int label = 0;
    auto [p, ec] = std::from_chars(cells[0].data(), cells[0].data() + cells[0].size(), label);
    if (ec != std::errc() || label < 0) throw IoError("csv line " + std::to_string(lineno) + ": bad label");
    y.push_back(label);
    max_label = std::max(max_label, label);
    for (std::size_t j = 1; j < cells.size(); ++j) {
      try {
        f.push_back(std::stod(std::string(cells[j])));
      } catch (const std::exception&) {
        throw IoError("csv line " + std::to_string(lineno) + ": bad feature value");
      }
    }
  }
  if (y.empty()) throw IoError("csv: no samples");
  const std::size_t c = classes ? classes : static_cast<std::size_t>(max_label + 1);
  try {
    return Dataset(std::move(f), std::move(y), dim, c);
  } catch (const ArgumentError& e) {
    throw IoError(std::string("csv: ") + e.what());
  }
}

inline Dataset load_dataset_csv(const std::string& path, std::size_t classes = 0) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  return read_dataset_csv(is, classes);
}

/// Partition manifest: {"config": {...}, "clients": [{"client_id", "indices", "histogram"}]}.
inline nlohmann::json partition_manifest(const Dataset& ds, const PartitionConfig& cfg,
                                         std::span<const ClientShard> shards) {
  nlohmann::json j;
  j["config"] = {{"clients", cfg.clients},
                 {"shard_size", cfg.shard_size},
                 {"shards_per_client", cfg.shards_per_client},
                 {"nr", cfg.nr},
                 {"seed", cfg.seed}};
  j["classes"] = ds.classes();
  auto& arr = j["clients"] = nlohmann::json::array();
  for (const auto& s : shards) {
    arr.push_back({{"client_id", s.client_id}, {"indices", s.indices}, {"histogram", s.histogram(ds)}});
  }
  return j;
}

/// Rebuilds shards from a manifest, checking indices and histograms against `ds`.
inline std::vector<ClientShard> shards_from_manifest(const Dataset& ds, const nlohmann::json& j) {
  std::vector<ClientShard> out;
  try {
    for (const auto& c : j.at("clients")) {
      ClientShard s;
      s.client_id = c.at("client_id").get<int>();
      s.indices = c.at("indices").get<std::vector<std::size_t>>();
      for (auto r : s.indices)
        if (r >= ds.size()) throw IoError("manifest index out of range");
      const auto h = s.histogram(ds);
      if (c.contains("histogram") && c.at("histogram").get<std::vector<std::size_t>>() != h)
        throw IoError("manifest histogram does not match dataset labels");
      s.local_distribution = CategoryDistribution::from_counts(h);
      out.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed partition manifest: ") + e.what());
  }
  return out;
}

}  // namespace isfl
