#pragma once

// On-disk formats.
//
// Binary grid / tensor file (little-endian):
//   char[8]  magic "UCNTGRD\0"
//   u32      version (1)
//   u32      dtype code (1 = float64)
//   u32      rank
//   u64      extents[rank]
//   f64      values[prod(extents)], row-major
//
// Named-tensor container (checkpoints):
//   char[8]  magic "UCNTTNS\0"
//   u32      version (1)
//   u32      metadata byte length, followed by UTF-8 "key=value\n" text
//   u32      tensor count, then per tensor:
//              u32 name length, name bytes, u32 dtype, u32 rank, u64 extents[rank], f64 values
//
// Dot annotations: text, one "x,y" pair per line.
// Split files: text, one sample id per line.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ucount/data/grid.hpp"
#include "ucount/data/sample.hpp"
#include "ucount/error.hpp"
#include "ucount/numerics/tensor.hpp"

namespace ucount {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::uint32_t kDtypeFloat64 = 1;
inline constexpr std::string_view kGridMagic{"UCNTGRD\0", 8};
inline constexpr std::string_view kContainerMagic{"UCNTTNS\0", 8};

namespace fs = std::filesystem;

namespace detail {

template <typename T>
T to_little_endian(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}

class ByteWriter {
 public:
  void raw(std::string_view bytes) { buf_.append(bytes); }

  template <typename T>
  void put(T v) {
    v = to_little_endian(v);
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    buf_.append(b, sizeof(T));
  }

  void put_tensor_body(const Tensor& t) {
    put<std::uint32_t>(kDtypeFloat64);
    put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put<std::uint64_t>(e);
    for (double v : t.data()) put<double>(v);
  }

  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  std::string_view raw(std::size_t n) {
    need(n);
    std::string_view out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return to_little_endian(v);
  }

  void expect_magic(std::string_view magic) {
    if (bytes_.size() < magic.size() || bytes_.substr(0, magic.size()) != magic) {
      throw FormatError(FormatError::Kind::kBadMagic, source_ + " is not a " + describe(magic) + " file");
    }
    pos_ = magic.size();
    if (bytes_.size() < pos_ + 4) throw FormatError(FormatError::Kind::kTruncated, source_ + ": missing version");
    const auto version = get<std::uint32_t>();
    if (version != kFormatVersion) {
      throw FormatError(FormatError::Kind::kVersionMismatch, source_ + ": file version " + std::to_string(version) +
                                                                ", reader supports " + std::to_string(kFormatVersion));
    }
  }

  Tensor get_tensor_body() {
    const auto dtype = get<std::uint32_t>();
    if (dtype != kDtypeFloat64) {
      throw FormatError(FormatError::Kind::kMalformedHeader, source_ + ": unknown dtype code " + std::to_string(dtype));
    }
    const auto rank = get<std::uint32_t>();
    if (rank > 8) throw FormatError(FormatError::Kind::kMalformedHeader, source_ + ": implausible rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t volume = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto e = get<std::uint64_t>();
      if (e == 0 || e > (std::uint64_t{1} << 32)) {
        throw FormatError(FormatError::Kind::kMalformedHeader, source_ + ": invalid extent " + std::to_string(e));
      }
      volume *= e;
      if (volume > (std::uint64_t{1} << 34)) throw FormatError(FormatError::Kind::kMalformedHeader, source_ + ": tensor too large");
      shape.push_back(static_cast<std::size_t>(e));
    }
    need(static_cast<std::size_t>(volume) * sizeof(double));
    std::vector<double> data(static_cast<std::size_t>(volume));
    for (double& v : data) v = get<double>();
    return Tensor(std::move(shape), std::move(data));
  }

  void expect_end() const {
    if (pos_ != bytes_.size()) {
      throw FormatError(FormatError::Kind::kMalformedHeader,
                        source_ + ": " + std::to_string(bytes_.size() - pos_) + " unexpected trailing bytes");
    }
  }

 private:
  static std::string describe(std::string_view magic) { return magic == kGridMagic ? "grid" : "tensor container"; }

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(FormatError::Kind::kTruncated, source_ + ": needs " + std::to_string(n) + " more bytes at offset " +
                                                          std::to_string(pos_));
    }
  }

  std::string_view bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatError::Kind::kIo, "short write to " + path.string());
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Grids and tensors

inline std::string encode_tensor(const Tensor& t) {
  detail::ByteWriter w;
  w.raw(kGridMagic);
  w.put<std::uint32_t>(kFormatVersion);
  w.put_tensor_body(t);
  return w.bytes();
}

inline Tensor decode_tensor(std::string_view bytes, const std::string& source = "<memory>") {
  detail::ByteReader r(bytes, source);
  r.expect_magic(kGridMagic);
  Tensor t = r.get_tensor_body();
  r.expect_end();
  return t;
}

inline void save_tensor(const fs::path& path, const Tensor& t) { detail::write_file(path, encode_tensor(t)); }
inline Tensor load_tensor(const fs::path& path) { return decode_tensor(detail::read_file(path), path.string()); }

inline void save_grid(const fs::path& path, const DenseGrid& g) {
  save_tensor(path, Tensor(Shape{g.height(), g.width()}, g.values()));
}

inline DenseGrid load_grid(const fs::path& path) {
  Tensor t = load_tensor(path);
  if (t.rank() != 2) {
    throw FormatError(FormatError::Kind::kMalformedHeader, path.string() + ": expected a rank-2 grid, found rank " +
                                                              std::to_string(t.rank()));
  }
  return DenseGrid::from_tensor(t);
}

// ---------------------------------------------------------------------------
// Named-tensor container

struct TensorContainer {
  std::string metadata;
  std::map<std::string, Tensor> tensors;
};

inline std::string encode_container(const TensorContainer& c) {
  detail::ByteWriter w;
  w.raw(kContainerMagic);
  w.put<std::uint32_t>(kFormatVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.metadata.size()));
  w.raw(c.metadata);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.raw(name);
    w.put_tensor_body(t);
  }
  return w.bytes();
}

inline TensorContainer decode_container(std::string_view bytes, const std::string& source = "<memory>") {
  detail::ByteReader r(bytes, source);
  r.expect_magic(kContainerMagic);
  TensorContainer c;
  c.metadata = std::string(r.raw(r.get<std::uint32_t>()));
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name(r.raw(r.get<std::uint32_t>()));
    if (name.empty() || c.tensors.contains(name)) {
      throw FormatError(FormatError::Kind::kMalformedHeader, source + ": empty or duplicate tensor name");
    }
    c.tensors.emplace(std::move(name), r.get_tensor_body());
  }
  r.expect_end();
  return c;
}

inline void save_container(const fs::path& path, const TensorContainer& c) {
  detail::write_file(path, encode_container(c));
}
inline TensorContainer load_container(const fs::path& path) {
  return decode_container(detail::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Text formats

inline std::string format_double(double v) {
  // shortest text that parses back to the same bits
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& field, const std::string& where) {
  const char* begin = field.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (field.empty() || end != begin + field.size()) {
    throw FormatError(FormatError::Kind::kMalformedHeader, where + ": not a number: '" + field + "'");
  }
  return v;
}

inline void save_dots(const fs::path& path, const DotSet& dots) {
  std::string text;
  for (const Point& p : dots.points()) text += format_double(p.x) + "," + format_double(p.y) + "\n";
  detail::write_file(path, text);
}

inline DotSet load_dots(const fs::path& path, std::size_t height, std::size_t width) {
  std::istringstream in(detail::read_file(path));
  std::vector<Point> pts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (comma == std::string::npos) throw FormatError(FormatError::Kind::kMalformedHeader, where + ": expected 'x,y'");
    pts.push_back({parse_double(detail::trim(line.substr(0, comma)), where),
                   parse_double(detail::trim(line.substr(comma + 1)), where)});
  }
  return DotSet(height, width, std::move(pts));
}

inline void save_split(const fs::path& path, const std::vector<std::string>& ids) {
  std::string text;
  for (const auto& id : ids) text += id + "\n";
  detail::write_file(path, text);
}

inline std::vector<std::string> load_split(const fs::path& path) {
  std::istringstream in(detail::read_file(path));
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

// ---------------------------------------------------------------------------
// Sample store: <dir>/<id>.image.grid, <id>.density.grid, <id>.dots.csv

class SampleStore {
 public:
  explicit SampleStore(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const noexcept { return root_; }
  bool exists() const { return fs::is_directory(root_); }

  void save(const Sample& s) const {
    fs::create_directories(root_);
    save_grid(root_ / (s.id + ".image.grid"), s.image);
    save_grid(root_ / (s.id + ".density.grid"), s.gt_density);
    save_dots(root_ / (s.id + ".dots.csv"), s.dots);
  }

  void save_all(const std::vector<Sample>& samples) const {
    for (const Sample& s : samples) save(s);
  }

  bool contains(const std::string& id) const { return fs::exists(root_ / (id + ".image.grid")); }

  Sample load(const std::string& id) const {
    if (!contains(id)) throw ArgumentError("sample '" + id + "' not found in " + root_.string());
    Sample s;
    s.id = id;
    s.image = load_grid(root_ / (id + ".image.grid"));
    s.gt_density = load_grid(root_ / (id + ".density.grid"));
    if (!s.image.same_shape(s.gt_density)) {
      throw FormatError(FormatError::Kind::kMalformedHeader, id + ": image and density extents differ");
    }
    s.dots = load_dots(root_ / (id + ".dots.csv"), s.image.height(), s.image.width());
    return s;
  }

  /// All ids in the store, ascending.
  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    if (!exists()) return out;
    const std::string suffix = ".image.grid";
    for (const auto& entry : fs::directory_iterator(root_)) {
      const std::string name = entry.path().filename().string();
      if (name.size() > suffix.size() && name.ends_with(suffix)) out.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  std::vector<Sample> load_all() const { return resolve(ids()); }

  /// Samples for the given ids, in the given order.
  std::vector<Sample> resolve(const std::vector<std::string>& wanted) const {
    std::vector<Sample> out;
    out.reserve(wanted.size());
    for (const auto& id : wanted) out.push_back(load(id));
    return out;
  }

 private:
  fs::path root_;
};

}  // namespace ucount
