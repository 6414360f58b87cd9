#pragma once

// Dataset ingestion and seeded experiment-set construction.
//
// File formats:
//   CSV     one point per row, comma separated, optional header line; with
//           labels the last column is an integer class label.
//   RawF64  little-endian: u64 d, u64 N, d·N f64 column-major, one flag byte
//           (1 = labeled), then N u32 labels when the flag is set.
//   IDX     big-endian handwritten-digit files: images 0x00000803 (N, rows,
//           cols, u8 pixels), labels 0x00000801 (N, u8 labels). Pixels are
//           rescaled to [0, 1]; each image becomes one column.

#include "gmlot/adapt.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gmlot {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RawDataset {
  Matrix features;          // d×N, one sample per column
  std::vector<int> labels;  // empty when unlabeled
  int class_count = 0;
  int image_rows = 0;       // nonzero for image data
  int image_cols = 0;

  Index size() const { return features.cols(); }
  Index dim() const { return features.rows(); }
  bool labeled() const { return !labels.empty(); }

  void validate() const {
    if (features.cols() < 1 || features.rows() < 1) throw DataError("dataset is empty");
    if (!labels.empty() && static_cast<Index>(labels.size()) != features.cols()) {
      throw DataError("dataset has " + std::to_string(labels.size()) + " labels for " +
                      std::to_string(features.cols()) + " samples");
    }
    for (int l : labels) {
      if (l < 0 || l >= class_count) throw DataError("label " + std::to_string(l) + " outside [0, class_count)");
    }
  }

  LabeledCloud as_cloud() const { return LabeledCloud(features, labels); }
};

enum class FileFormat { CSV, RawF64, IDX };

inline FileFormat parse_format(std::string_view s) {
  if (s == "csv" || s == "CSV") return FileFormat::CSV;
  if (s == "rawf64" || s == "RawF64" || s == "f64") return FileFormat::RawF64;
  if (s == "idx" || s == "IDX") return FileFormat::IDX;
  throw std::invalid_argument("unknown file format '" + std::string(s) + "' (expected csv, rawf64, idx)");
}

/// Guesses the format from the extension; anything unrecognised is treated as IDX.
inline FileFormat format_from_path(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".csv") return FileFormat::CSV;
  if (ext == ".f64" || ext == ".rawf64" || ext == ".bin") return FileFormat::RawF64;
  return FileFormat::IDX;
}

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline int finalize_class_count(const std::vector<int>& labels) {
  if (labels.empty()) return 0;
  return *std::max_element(labels.begin(), labels.end()) + 1;
}

inline std::optional<double> parse_double(std::string_view field) {
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) field.remove_suffix(1);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    const size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::uint64_t read_be32(const std::string& buf, size_t off) {
  return (static_cast<std::uint64_t>(static_cast<unsigned char>(buf[off])) << 24) |
         (static_cast<std::uint64_t>(static_cast<unsigned char>(buf[off + 1])) << 16) |
         (static_cast<std::uint64_t>(static_cast<unsigned char>(buf[off + 2])) << 8) |
         static_cast<std::uint64_t>(static_cast<unsigned char>(buf[off + 3]));
}

inline std::uint64_t read_le(const std::string& buf, size_t off, int bytes) {
  std::uint64_t v = 0;
  for (int b = bytes - 1; b >= 0; --b) v = (v << 8) | static_cast<unsigned char>(buf[off + static_cast<size_t>(b)]);
  return v;
}

inline void append_le(std::string& out, std::uint64_t v, int bytes) {
  for (int b = 0; b < bytes; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFFu));
}

}  // namespace detail

/// Writes via a sibling temp file and rename, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw DataError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
  }
}

inline RawDataset parse_csv(const std::string& text, bool labeled) {
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::istringstream in(text);
  std::string line;
  size_t width = 0;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto fields = detail::split_commas(line);
    std::vector<double> values;
    values.reserve(fields.size());
    bool numeric = true;
    for (auto f : fields) {
      const auto v = detail::parse_double(f);
      if (!v) {
        numeric = false;
        break;
      }
      values.push_back(*v);
    }
    if (!numeric) {
      if (rows.empty() && labels.empty()) continue;  // header
      throw DataError("CSV line " + std::to_string(line_no) + ": non-numeric field");
    }
    if (width == 0) width = values.size();
    if (values.size() != width) {
      throw DataError("CSV line " + std::to_string(line_no) + ": expected " + std::to_string(width) + " fields");
    }
    if (labeled) {
      if (values.size() < 2) throw DataError("labeled CSV needs at least one feature column and a label");
      const double l = values.back();
      if (l < 0 || l != std::floor(l)) throw DataError("CSV line " + std::to_string(line_no) + ": bad label");
      labels.push_back(static_cast<int>(l));
      values.pop_back();
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw DataError("CSV contains no data rows");
  RawDataset ds;
  ds.features.resize(static_cast<Index>(rows.front().size()), static_cast<Index>(rows.size()));
  for (size_t j = 0; j < rows.size(); ++j) {
    for (size_t i = 0; i < rows[j].size(); ++i) ds.features(static_cast<Index>(i), static_cast<Index>(j)) = rows[j][i];
  }
  ds.labels = std::move(labels);
  ds.class_count = detail::finalize_class_count(ds.labels);
  ds.validate();
  return ds;
}

inline std::string format_csv(const Matrix& features, const std::vector<int>& labels = {}) {
  std::string out;
  char buf[32];
  for (Index j = 0; j < features.cols(); ++j) {
    for (Index i = 0; i < features.rows(); ++i) {
      if (i > 0) out.push_back(',');
      const auto res = std::to_chars(buf, buf + sizeof buf, features(i, j));
      out.append(buf, res.ptr);
    }
    if (!labels.empty()) {
      out.push_back(',');
      out += std::to_string(labels[static_cast<size_t>(j)]);
    }
    out.push_back('\n');
  }
  return out;
}

inline std::string encode_rawf64(const Matrix& m, const std::vector<int>& labels = {}) {
  if (!labels.empty() && static_cast<Index>(labels.size()) != m.cols()) {
    throw DataError("encode_rawf64: label count does not match column count");
  }
  std::string out;
  out.reserve(17 + static_cast<size_t>(m.size()) * 8 + labels.size() * 4);
  detail::append_le(out, static_cast<std::uint64_t>(m.rows()), 8);
  detail::append_le(out, static_cast<std::uint64_t>(m.cols()), 8);
  for (Index k = 0; k < m.size(); ++k) {
    std::uint64_t bits = 0;
    const double v = m.data()[k];
    std::memcpy(&bits, &v, sizeof bits);
    detail::append_le(out, bits, 8);
  }
  out.push_back(labels.empty() ? '\0' : '\1');
  for (int l : labels) detail::append_le(out, static_cast<std::uint32_t>(l), 4);
  return out;
}

inline RawDataset decode_rawf64(const std::string& buf) {
  if (buf.size() < 16) throw DataError("RawF64: truncated header");
  const std::uint64_t d = detail::read_le(buf, 0, 8);
  const std::uint64_t n = detail::read_le(buf, 8, 8);
  if (d == 0 || n == 0 || d > (1ull << 32) || n > (1ull << 32)) throw DataError("RawF64: implausible shape");
  const std::uint64_t payload = d * n * 8;
  if (buf.size() < 16 + payload) throw DataError("RawF64: truncated payload");
  RawDataset ds;
  ds.features.resize(static_cast<Index>(d), static_cast<Index>(n));
  for (std::uint64_t k = 0; k < d * n; ++k) {
    const std::uint64_t bits = detail::read_le(buf, 16 + 8 * k, 8);
    std::memcpy(ds.features.data() + k, &bits, sizeof bits);
  }
  size_t off = 16 + payload;
  const bool labeled = off < buf.size() && buf[off] != '\0';
  if (labeled) {
    ++off;
    if (buf.size() < off + n * 4) throw DataError("RawF64: truncated labels");
    ds.labels.resize(n);
    for (std::uint64_t j = 0; j < n; ++j) {
      ds.labels[j] = static_cast<int>(detail::read_le(buf, off + 4 * j, 4));
    }
  }
  ds.class_count = detail::finalize_class_count(ds.labels);
  ds.validate();
  return ds;
}

inline void write_rawf64(const std::filesystem::path& path, const Matrix& m, const std::vector<int>& labels = {}) {
  write_file_atomic(path, encode_rawf64(m, labels));
}

inline RawDataset decode_idx_images(const std::string& buf) {
  if (buf.size() < 16) throw DataError("IDX images: truncated header");
  const std::uint64_t magic = detail::read_be32(buf, 0);
  if (magic != 0x00000803) {
    std::ostringstream os;
    os << "IDX images: bad magic 0x" << std::hex << magic << " (expected 0x803)";
    throw DataError(os.str());
  }
  const std::uint64_t n = detail::read_be32(buf, 4);
  const std::uint64_t rows = detail::read_be32(buf, 8);
  const std::uint64_t cols = detail::read_be32(buf, 12);
  const std::uint64_t d = rows * cols;
  if (n == 0 || d == 0) throw DataError("IDX images: empty");
  if (buf.size() < 16 + n * d) throw DataError("IDX images: truncated pixel data");
  RawDataset ds;
  ds.features.resize(static_cast<Index>(d), static_cast<Index>(n));
  // The file stores each image row by row; features are flattened column-major
  // (pixel (r, c) lands at c·rows + r).
  const auto* px = reinterpret_cast<const unsigned char*>(buf.data() + 16);
  for (std::uint64_t s = 0; s < n; ++s) {
    for (std::uint64_t r = 0; r < rows; ++r) {
      for (std::uint64_t c = 0; c < cols; ++c) {
        ds.features(static_cast<Index>(c * rows + r), static_cast<Index>(s)) = px[s * d + r * cols + c] / 255.0;
      }
    }
  }
  ds.image_rows = static_cast<int>(rows);
  ds.image_cols = static_cast<int>(cols);
  return ds;
}

inline std::vector<int> decode_idx_labels(const std::string& buf) {
  if (buf.size() < 8) throw DataError("IDX labels: truncated header");
  const std::uint64_t magic = detail::read_be32(buf, 0);
  if (magic != 0x00000801) {
    std::ostringstream os;
    os << "IDX labels: bad magic 0x" << std::hex << magic << " (expected 0x801)";
    throw DataError(os.str());
  }
  const std::uint64_t n = detail::read_be32(buf, 4);
  if (buf.size() < 8 + n) throw DataError("IDX labels: truncated");
  std::vector<int> labels(n);
  for (std::uint64_t j = 0; j < n; ++j) labels[j] = static_cast<unsigned char>(buf[8 + j]);
  return labels;
}

inline std::string encode_idx_images(const Matrix& pixels01, int rows, int cols) {
  if (static_cast<Index>(rows) * cols != pixels01.rows()) throw DataError("encode_idx_images: shape mismatch");
  std::string out;
  const auto be32 = [&out](std::uint64_t v) {
    for (int b = 3; b >= 0; --b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFFu));
  };
  be32(0x00000803);
  be32(static_cast<std::uint64_t>(pixels01.cols()));
  be32(static_cast<std::uint64_t>(rows));
  be32(static_cast<std::uint64_t>(cols));
  for (Index s = 0; s < pixels01.cols(); ++s) {
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const double v = std::clamp(pixels01(static_cast<Index>(c) * rows + r, s), 0.0, 1.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
    }
  }
  return out;
}

inline std::string encode_idx_labels(const std::vector<int>& labels) {
  std::string out;
  const auto be32 = [&out](std::uint64_t v) {
    for (int b = 3; b >= 0; --b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFFu));
  };
  be32(0x00000801);
  be32(labels.size());
  for (int l : labels) out.push_back(static_cast<char>(static_cast<unsigned char>(l)));
  return out;
}

/// Loads a single file. IDX here means an image file; use `load_idx` to pair
/// images with their label file. `labeled` applies to CSV only (RawF64
/// carries its own flag).
inline RawDataset load_matrix(const std::filesystem::path& path, FileFormat format, bool labeled = false) {
  const std::string buf = detail::read_file(path);
  switch (format) {
    case FileFormat::CSV:
      return parse_csv(buf, labeled);
    case FileFormat::RawF64:
      return decode_rawf64(buf);
    case FileFormat::IDX: {
      RawDataset ds = decode_idx_images(buf);
      ds.validate();
      return ds;
    }
  }
  throw DataError("unknown format");
}

inline RawDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  RawDataset ds = decode_idx_images(detail::read_file(images));
  ds.labels = decode_idx_labels(detail::read_file(labels));
  if (static_cast<Index>(ds.labels.size()) != ds.size()) {
    throw DataError("IDX: " + std::to_string(ds.labels.size()) + " labels for " + std::to_string(ds.size()) +
                    " images");
  }
  ds.class_count = detail::finalize_class_count(ds.labels);
  ds.validate();
  return ds;
}

/// 2×2 average pooling of image data (odd trailing rows/cols are dropped).
inline RawDataset downsample2x(const RawDataset& ds) {
  if (ds.image_rows < 2 || ds.image_cols < 2) throw DataError("downsample2x: dataset has no image shape");
  const int r2 = ds.image_rows / 2;
  const int c2 = ds.image_cols / 2;
  RawDataset out;
  out.features.resize(static_cast<Index>(r2) * c2, ds.size());
  for (Index s = 0; s < ds.size(); ++s) {
    const auto src = ds.features.col(s);
    for (int r = 0; r < r2; ++r) {
      for (int c = 0; c < c2; ++c) {
        const auto at = [&](int rr, int cc) { return src(static_cast<Index>(cc) * ds.image_rows + rr); };
        out.features(static_cast<Index>(c) * r2 + r, s) =
            0.25 * (at(2 * r, 2 * c) + at(2 * r, 2 * c + 1) + at(2 * r + 1, 2 * c) + at(2 * r + 1, 2 * c + 1));
      }
    }
  }
  out.labels = ds.labels;
  out.class_count = ds.class_count;
  out.image_rows = r2;
  out.image_cols = c2;
  return out;
}

// ---------------------------------------------------------------------------
// Seeded sampling

struct SkewSpec {
  int skew_class = 0;
  double skew_percent = 10.0;
  int sample_size = 0;

  void validate(int class_count) const {
    if (skew_class < 0 || skew_class >= class_count) throw std::invalid_argument("SkewSpec: class out of range");
    if (!(skew_percent >= 10.0 && skew_percent < 100.0)) {
      throw std::invalid_argument("SkewSpec: skew percent must lie in [10, 100)");
    }
    if (skew_percent < 100.0 / class_count - 1e-12) {
      throw std::invalid_argument("SkewSpec: skew percent below the uniform share");
    }
    if (sample_size < 1) throw std::invalid_argument("SkewSpec: sample size must be positive");
  }
};

struct Sample {
  LabeledCloud cloud;
  std::vector<Index> indices;  // ascending dataset indices
};

/// Per-class counts as equal as possible; the first (n mod K) classes get one extra.
inline std::vector<int> uniform_counts(int n, int class_count) {
  if (class_count < 1 || n < 0) throw std::invalid_argument("uniform_counts: bad arguments");
  std::vector<int> counts(static_cast<size_t>(class_count), n / class_count);
  for (int k = 0; k < n % class_count; ++k) ++counts[static_cast<size_t>(k)];
  return counts;
}

/// round(w·n/100) points of the skew class; the rest apportioned by largest
/// remainder over the other classes (equal shares, so ties go to the lowest class).
inline std::vector<int> skewed_counts(const SkewSpec& spec, int class_count) {
  spec.validate(class_count);
  const int skew = static_cast<int>(std::lround(spec.skew_percent * spec.sample_size / 100.0));
  const int rest = spec.sample_size - skew;
  std::vector<int> counts(static_cast<size_t>(class_count), 0);
  counts[static_cast<size_t>(spec.skew_class)] = skew;
  const int others = class_count - 1;
  if (others == 0) {
    counts[static_cast<size_t>(spec.skew_class)] = spec.sample_size;
    return counts;
  }
  int extra = rest % others;
  for (int k = 0; k < class_count; ++k) {
    if (k == spec.skew_class) continue;
    counts[static_cast<size_t>(k)] = rest / others + (extra > 0 ? 1 : 0);
    if (extra > 0) --extra;
  }
  return counts;
}

namespace detail {

// Unbiased draw in [0, bound) from raw 64-bit engine output, so sampling does
// not depend on the standard library's distribution implementations.
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t v = rng();
  while (v >= limit) v = rng();
  return v % bound;
}

inline void shuffle(std::vector<Index>& v, std::mt19937_64& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(bounded(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace detail

/// Draws several samples with the given per-class counts from mutually
/// disjoint index sets of `ds`. Deterministic in (ds, counts, seed).
inline std::vector<Sample> draw_disjoint(const RawDataset& ds, const std::vector<std::vector<int>>& counts,
                                         std::uint64_t seed) {
  ds.validate();
  if (!ds.labeled()) throw DataError("sampling requires a labeled dataset");
  const int classes = ds.class_count;
  std::vector<std::vector<Index>> by_class(static_cast<size_t>(classes));
  for (Index j = 0; j < ds.size(); ++j) by_class[static_cast<size_t>(ds.labels[static_cast<size_t>(j)])].push_back(j);

  std::vector<std::vector<Index>> picked(counts.size());
  std::mt19937_64 rng(seed);
  for (int k = 0; k < classes; ++k) {
    int need = 0;
    for (const auto& c : counts) {
      if (static_cast<int>(c.size()) != classes) throw std::invalid_argument("draw_disjoint: count vector size");
      need += c[static_cast<size_t>(k)];
    }
    auto& pool = by_class[static_cast<size_t>(k)];
    if (need > static_cast<int>(pool.size())) {
      throw DataError("insufficient population for class " + std::to_string(k) + ": need " + std::to_string(need) +
                      ", have " + std::to_string(pool.size()));
    }
    detail::shuffle(pool, rng);
    size_t offset = 0;
    for (size_t s = 0; s < counts.size(); ++s) {
      const auto take = static_cast<size_t>(counts[s][static_cast<size_t>(k)]);
      picked[s].insert(picked[s].end(), pool.begin() + static_cast<std::ptrdiff_t>(offset),
                       pool.begin() + static_cast<std::ptrdiff_t>(offset + take));
      offset += take;
    }
  }

  std::vector<Sample> out;
  out.reserve(counts.size());
  for (auto& idx : picked) {
    std::sort(idx.begin(), idx.end());
    std::vector<int> labels;
    labels.reserve(idx.size());
    for (Index j : idx) labels.push_back(ds.labels[static_cast<size_t>(j)]);
    Sample s;
    s.cloud = LabeledCloud(ds.features(Eigen::all, idx), std::move(labels));
    s.indices = std::move(idx);
    out.push_back(std::move(s));
  }
  return out;
}

inline Sample uniform_sample(const RawDataset& ds, int n, std::uint64_t seed) {
  if (!ds.labeled()) throw DataError("sampling requires a labeled dataset");
  return std::move(draw_disjoint(ds, {uniform_counts(n, ds.class_count)}, seed).front());
}

inline Sample skewed_sample(const RawDataset& ds, const SkewSpec& spec, std::uint64_t seed) {
  if (!ds.labeled()) throw DataError("sampling requires a labeled dataset");
  return std::move(draw_disjoint(ds, {skewed_counts(spec, ds.class_count)}, seed).front());
}

/// Two samples from disjoint index sets, each with its own skew composition.
inline std::pair<Sample, Sample> disjoint_split(const RawDataset& ds, const SkewSpec& spec_t, const SkewSpec& spec_e,
                                                std::uint64_t seed) {
  auto s = draw_disjoint(ds, {skewed_counts(spec_t, ds.class_count), skewed_counts(spec_e, ds.class_count)}, seed);
  return {std::move(s[0]), std::move(s[1])};
}

/// Class histogram of a label vector.
inline std::vector<int> class_histogram(const std::vector<int>& labels, int class_count) {
  std::vector<int> h(static_cast<size_t>(class_count), 0);
  for (int l : labels) ++h.at(static_cast<size_t>(l));
  return h;
}

}  // namespace gmlot
