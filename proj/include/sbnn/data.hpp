#pragma once

// Dataset ingestion and synthetic data generators: IDX-format readers with a
// matching writer, the correlated logistic-regression benchmark, the
// five-Gaussian cluster benchmark, and evaluation grids.

#include <zlib.h>

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sbnn/rng.hpp"
#include "sbnn/tensor.hpp"

namespace sbnn {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Dataset {
  Tensor features;          // n x d
  std::vector<int> labels;  // n entries in [0, n_classes)
  std::string name;
  std::size_t n_classes = 0;
  bool scaled = false;
};

// ---------------------------------------------------------------------------
// IDX binary format (big-endian header, unsigned-byte payload, optional gzip).
// ---------------------------------------------------------------------------

struct IdxData {
  std::vector<std::size_t> dims;
  std::vector<std::uint8_t> bytes;  // row-major payload, dims product entries
};

namespace detail {

class GzReader {
 public:
  explicit GzReader(const std::string& path) : f_(gzopen(path.c_str(), "rb")) {
    if (f_ == nullptr) throw DataError("read_idx: cannot open '" + path + "'");
  }
  ~GzReader() {
    if (f_ != nullptr) gzclose(f_);
  }
  GzReader(const GzReader&) = delete;
  GzReader& operator=(const GzReader&) = delete;

  void read_exact(void* dst, std::size_t n, const char* what) {
    int got = gzread(f_, dst, static_cast<unsigned>(n));
    if (got < 0 || static_cast<std::size_t>(got) != n)
      throw DataError(std::string("read_idx: truncated ") + what);
  }
  bool at_eof() {
    std::uint8_t probe = 0;
    return gzread(f_, &probe, 1) == 0;
  }

 private:
  gzFile f_;
};

inline std::uint32_t read_be32(GzReader& r, const char* what) {
  std::uint8_t b[4];
  r.read_exact(b, 4, what);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline void write_be32(std::ostream& os, std::uint32_t v) {
  std::uint8_t b[4] = {std::uint8_t(v >> 24), std::uint8_t(v >> 16), std::uint8_t(v >> 8),
                       std::uint8_t(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

// Reads any IDX file of unsigned bytes. Validates the magic (two zero bytes,
// type code 0x08, rank 1..4), guards the dimension product against overflow,
// and insists the payload length matches the header exactly.
inline IdxData read_idx(const std::string& path) {
  detail::GzReader r(path);
  std::uint32_t magic = detail::read_be32(r, "magic");
  if ((magic & 0xFFFFFF00u) != 0x00000800u)
    throw DataError("read_idx: bad magic (expected unsigned-byte IDX)");
  std::size_t rank = magic & 0xFFu;
  if (rank < 1 || rank > 4) throw DataError("read_idx: unsupported rank in magic");

  IdxData out;
  std::size_t total = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    std::uint32_t d = detail::read_be32(r, "dimension header");
    if (d == 0 || d > (1u << 28)) throw DataError("read_idx: dimension out of range");
    if (total > std::numeric_limits<std::size_t>::max() / d)
      throw DataError("read_idx: dimension product overflow");
    total *= d;
    out.dims.push_back(d);
  }
  if (total > (std::size_t{1} << 31)) throw DataError("read_idx: payload too large");

  out.bytes.resize(total);
  r.read_exact(out.bytes.data(), total, "payload");
  if (!r.at_eof()) throw DataError("read_idx: trailing bytes after payload");
  return out;
}

// Writes an unsigned-byte IDX file (plain, never gzipped); the reader accepts
// both, so round-trips through this writer are exact.
inline void write_idx(const std::string& path, const std::vector<std::size_t>& dims,
                      const std::vector<std::uint8_t>& bytes) {
  if (dims.empty() || dims.size() > 4) throw DataError("write_idx: rank must be 1..4");
  std::size_t total = 1;
  for (std::size_t d : dims) {
    if (d == 0 || d > (1u << 28)) throw DataError("write_idx: dimension out of range");
    total *= d;
  }
  if (total != bytes.size()) throw DataError("write_idx: payload size mismatch");

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("write_idx: cannot open '" + path + "'");
  detail::write_be32(os, 0x00000800u | static_cast<std::uint32_t>(dims.size()));
  for (std::size_t d : dims) detail::write_be32(os, static_cast<std::uint32_t>(d));
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("write_idx: write failed");
}

// Image file (magic rank 3, n x rows x cols) -> Tensor(n x rows*cols) in [0,1].
inline Tensor read_idx_images(const std::string& path) {
  IdxData raw = read_idx(path);
  if (raw.dims.size() != 3) throw DataError("read_idx_images: expected rank-3 image file");
  std::size_t n = raw.dims[0], d = raw.dims[1] * raw.dims[2];
  Tensor out({n, d});
  for (std::size_t i = 0; i < raw.bytes.size(); ++i) out[i] = raw.bytes[i] / 255.0;
  return out;
}

// Label file (magic rank 1) -> integer vector.
inline std::vector<int> read_idx_labels(const std::string& path) {
  IdxData raw = read_idx(path);
  if (raw.dims.size() != 1) throw DataError("read_idx_labels: expected rank-1 label file");
  return std::vector<int>(raw.bytes.begin(), raw.bytes.end());
}

// Pairs an image file with its label file into a ready-to-train dataset.
inline Dataset load_mnist(const std::string& image_path, const std::string& label_path,
                          std::size_t limit = 0) {
  Tensor images = read_idx_images(image_path);
  std::vector<int> labels = read_idx_labels(label_path);
  if (images.rows() != labels.size())
    throw DataError("load_mnist: image/label count mismatch");
  std::size_t n = limit == 0 ? images.rows() : std::min(limit, images.rows());
  Dataset ds;
  ds.features = Tensor({n, images.cols()});
  std::copy(images.data(), images.data() + n * images.cols(), ds.features.data());
  ds.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
  ds.name = "mnist";
  ds.n_classes = 10;
  ds.scaled = true;
  for (int y : ds.labels)
    if (y < 0 || y > 9) throw DataError("load_mnist: label outside 0..9");
  return ds;
}

// ---------------------------------------------------------------------------
// Correlated logistic-regression benchmark.
// ---------------------------------------------------------------------------

// Fixed regression coefficients of the benchmark; exactly 9 are nonzero (one
// of them negligibly small, which variable selection should treat as zero).
inline const std::vector<double>& logreg_beta() {
  static const std::vector<double> beta = {-4, 0, 1,   0, 0, 0,  1,        0,  0, 0,
                                           1.2, 0, 37.1, 0, 0, 50, -0.00005, 10, 3, 0};
  return beta;
}

struct LogregBlock {
  std::size_t begin, end;  // half-open coordinate range
  double rho;              // equicorrelation of the underlying Gaussians
};

inline const std::array<LogregBlock, 4>& logreg_blocks() {
  static const std::array<LogregBlock, 4> blocks = {
      LogregBlock{0, 6, 0.9}, LogregBlock{6, 12, 0.8}, LogregBlock{12, 16, 0.7},
      LogregBlock{16, 20, 0.0}};
  return blocks;
}

// Coordinates reported as binary; they are thresholded at zero after the
// correlated Gaussian draw (1 if positive). Spread across all four blocks.
inline const std::array<std::size_t, 8>& logreg_binary_coords() {
  static const std::array<std::size_t, 8> coords = {1, 3, 7, 9, 13, 16, 17, 19};
  return coords;
}

struct LogregData {
  Dataset data;              // 20 covariates, binary response
  std::vector<double> beta;  // true coefficients, verbatim
  std::vector<double> eta;   // latent linear predictor actually drawn
};

// Draws n rows: each covariate block is an equicorrelated Gaussian
// (x_i = sqrt(rho) * g_block + sqrt(1-rho) * g_i), designated coordinates are
// thresholded at 0 into {0,1}, then eta ~ N(beta.x, variance 0.5) and
// y ~ Bernoulli(logistic(eta)).
inline LogregData gen_logreg(std::size_t n, std::uint64_t seed) {
  const auto& beta = logreg_beta();
  const auto& blocks = logreg_blocks();
  RngStream rng(seed);

  LogregData out;
  out.beta = beta;
  out.eta.resize(n);
  out.data.features = Tensor({n, 20});
  out.data.labels.resize(n);
  out.data.name = "logreg";
  out.data.n_classes = 2;

  std::array<bool, 20> is_binary{};
  for (std::size_t c : logreg_binary_coords()) is_binary[c] = true;

  for (std::size_t row = 0; row < n; ++row) {
    double x[20];
    for (const LogregBlock& b : blocks) {
      double g_block = b.rho > 0.0 ? rng.normal() : 0.0;
      for (std::size_t i = b.begin; i < b.end; ++i)
        x[i] = std::sqrt(b.rho) * g_block + std::sqrt(1.0 - b.rho) * rng.normal();
    }
    for (std::size_t i = 0; i < 20; ++i) {
      if (is_binary[i]) x[i] = x[i] > 0.0 ? 1.0 : 0.0;
      out.data.features.at(row, i) = x[i];
    }
    double mean = 0.0;
    for (std::size_t i = 0; i < 20; ++i) mean += beta[i] * x[i];
    double eta = mean + std::sqrt(0.5) * rng.normal();
    out.eta[row] = eta;
    double p = 1.0 / (1.0 + std::exp(-eta));
    out.data.labels[row] = rng.uniform() < p ? 1 : 0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Five-Gaussian cluster benchmark.
// ---------------------------------------------------------------------------

struct ClusterSpec {
  std::array<double, 2> mean;
  std::array<std::array<double, 2>, 2> raw;       // matrix as printed
  std::array<std::array<double, 2>, 2> repaired;  // symmetric, eigenvalues >= 0.1
};

namespace detail {

inline std::array<std::array<double, 2>, 2> repair_covariance(
    const std::array<std::array<double, 2>, 2>& raw, double floor_ev) {
  Eigen::Matrix2d a;
  a << raw[0][0], raw[0][1], raw[1][0], raw[1][1];
  Eigen::Matrix2d sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(sym);
  Eigen::Vector2d ev = es.eigenvalues().cwiseMax(floor_ev);
  Eigen::Matrix2d fixed = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return {{{fixed(0, 0), fixed(0, 1)}, {fixed(1, 0), fixed(1, 1)}}};
}

}  // namespace detail

// The five printed (mean, matrix) pairs; matrices 2..5 are not valid
// covariances as printed, so each carries its symmetrized eigenvalue-floored
// repair alongside the raw numbers.
inline std::array<ClusterSpec, 5> cluster_specs() {
  const double floor_ev = 0.1;
  std::array<ClusterSpec, 5> specs;
  specs[0] = {{-8, -8}, {{{6, -1}, {-1, 3.5}}}, {}};
  specs[1] = {{6, 6}, {{{0, 3}, {3, 0}}}, {}};
  specs[2] = {{-7, 8}, {{{-3, 4}, {-5, 1}}}, {}};
  specs[3] = {{8, -8}, {{{0, 5}, {4, 2}}}, {}};
  specs[4] = {{0, 0}, {{{0, 9}, {9, 0}}}, {}};
  for (ClusterSpec& s : specs) s.repaired = detail::repair_covariance(s.raw, floor_ev);
  return specs;
}

// Draws samples_per_class points from each repaired Gaussian (classes in
// order, two normals per point through the Cholesky factor), then min-max
// scales the pooled features to [0,1] per coordinate.
inline Dataset gen_clusters(std::size_t samples_per_class, std::uint64_t seed,
                            bool scale = true) {
  auto specs = cluster_specs();
  RngStream rng(seed);
  std::size_t n = samples_per_class * specs.size();

  Dataset ds;
  ds.features = Tensor({n, 2});
  ds.labels.resize(n);
  ds.name = "clusters";
  ds.n_classes = specs.size();
  ds.scaled = scale;

  std::size_t row = 0;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    Eigen::Matrix2d cov;
    cov << specs[k].repaired[0][0], specs[k].repaired[0][1], specs[k].repaired[1][0],
        specs[k].repaired[1][1];
    Eigen::Matrix2d chol = Eigen::LLT<Eigen::Matrix2d>(cov).matrixL();
    for (std::size_t i = 0; i < samples_per_class; ++i, ++row) {
      double g0 = rng.normal(), g1 = rng.normal();
      ds.features.at(row, 0) = specs[k].mean[0] + chol(0, 0) * g0;
      ds.features.at(row, 1) = specs[k].mean[1] + chol(1, 0) * g0 + chol(1, 1) * g1;
      ds.labels[row] = static_cast<int>(k);
    }
  }

  if (scale) {
    for (std::size_t c = 0; c < 2; ++c) {
      double lo = ds.features.at(0, c), hi = lo;
      for (std::size_t r = 0; r < n; ++r) {
        lo = std::min(lo, ds.features.at(r, c));
        hi = std::max(hi, ds.features.at(r, c));
      }
      for (std::size_t r = 0; r < n; ++r)
        ds.features.at(r, c) = (ds.features.at(r, c) - lo) / (hi - lo);
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Evaluation grids and CSV export.
// ---------------------------------------------------------------------------

// Uniform resolution x resolution lattice on [lo,hi]^2, row-major with the
// second coordinate varying fastest; both extremes are hit exactly.
inline Tensor grid(std::size_t resolution, double lo, double hi) {
  if (resolution < 2) throw DataError("grid: resolution must be at least 2");
  if (!(lo < hi)) throw DataError("grid: requires lo < hi");
  std::vector<double> ticks(resolution);
  for (std::size_t k = 0; k < resolution; ++k) {
    double t = static_cast<double>(k) / static_cast<double>(resolution - 1);
    ticks[k] = lo * (1.0 - t) + hi * t;
  }
  Tensor out({resolution * resolution, 2});
  std::size_t row = 0;
  for (std::size_t i = 0; i < resolution; ++i)
    for (std::size_t j = 0; j < resolution; ++j, ++row) {
      out.at(row, 0) = ticks[i];
      out.at(row, 1) = ticks[j];
    }
  return out;
}

// Shortest decimal form that round-trips a double exactly.
inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Minimal RFC-4180-style writer: comma separators, LF line endings, one
// header line. Numeric cells never need quoting.
inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("write_csv: cannot open '" + path + "'");
  for (std::size_t c = 0; c < header.size(); ++c)
    os << (c ? "," : "") << header[c];
  os << "\n";
  for (const auto& row : rows) {
    if (row.size() != header.size()) throw DataError("write_csv: ragged row");
    for (std::size_t c = 0; c < row.size(); ++c)
      os << (c ? "," : "") << format_g17(row[c]);
    os << "\n";
  }
  if (!os) throw DataError("write_csv: write failed");
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

// Strict reader for the CSV artifacts this project writes: LF line endings
// only, no quoting, non-empty fields, uniform column counts, fully numeric
// data rows. Any deviation throws, so tests can assert that every emitted
// file stays machine-readable.
inline CsvTable read_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("read_csv: cannot open '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (text.empty()) throw DataError("read_csv: empty file '" + path + "'");
  if (text.find('\r') != std::string::npos)
    throw DataError("read_csv: CR byte in '" + path + "'");
  if (text.find('"') != std::string::npos)
    throw DataError("read_csv: unexpected quoted field in '" + path + "'");
  if (text.back() != '\n') throw DataError("read_csv: missing final newline in '" + path + "'");

  CsvTable table;
  std::size_t pos = 0;
  bool have_header = false;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) throw DataError("read_csv: blank line in '" + path + "'");
    std::vector<std::string> fields;
    std::size_t f = 0;
    for (;;) {
      std::size_t comma = line.find(',', f);
      fields.push_back(line.substr(f, comma == std::string::npos ? comma : comma - f));
      if (comma == std::string::npos) break;
      f = comma + 1;
    }
    for (const std::string& fld : fields)
      if (fld.empty()) throw DataError("read_csv: empty field in '" + path + "'");
    if (!have_header) {
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size())
      throw DataError("read_csv: ragged row in '" + path + "'");
    std::vector<double> row;
    row.reserve(fields.size());
    for (const std::string& fld : fields) {
      char* end = nullptr;
      double v = std::strtod(fld.c_str(), &end);
      if (end != fld.c_str() + fld.size())
        throw DataError("read_csv: non-numeric cell '" + fld + "' in '" + path + "'");
      row.push_back(v);
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline void write_dataset_csv(const std::string& path, const Dataset& ds) {
  std::vector<std::string> header;
  for (std::size_t c = 0; c < ds.features.cols(); ++c)
    header.push_back("x" + std::to_string(c));
  header.push_back("label");
  std::vector<std::vector<double>> rows(ds.features.rows());
  for (std::size_t r = 0; r < ds.features.rows(); ++r) {
    rows[r].reserve(header.size());
    for (std::size_t c = 0; c < ds.features.cols(); ++c)
      rows[r].push_back(ds.features.at(r, c));
    rows[r].push_back(static_cast<double>(ds.labels[r]));
  }
  write_csv(path, header, rows);
}

}  // namespace sbnn
