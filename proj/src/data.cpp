#include "bayesmesh/data.hpp"

#include <zlib.h>

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <iomanip>

#include "bayesmesh/errors.hpp"
#include "bayesmesh/parallel.hpp"
#include "bayesmesh/rng.hpp"

namespace bayesmesh {

namespace {

using cplx = std::complex<double>;

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;
constexpr std::uint32_t kCacheVersion = 1;

// gzread passes plain files through untouched, so this handles both.
std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("cannot open " + path.string());
  gzFile f = gzopen(path.c_str(), "rb");
  if (f == nullptr) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 1 << 16> buf{};
  for (;;) {
    const int n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()));
    if (n < 0) {
      gzclose(f);
      throw IoError("read error in " + path.string());
    }
    if (n == 0) break;
    out.insert(out.end(), buf.begin(), buf.begin() + n);
  }
  gzclose(f);
  if (out.empty()) throw IoError("empty file " + path.string());
  return out;
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off,
                        const std::filesystem::path& path) {
  if (off + 4 > b.size()) throw IoError("truncated header in " + path.string());
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

template <class T>
void put_le(std::ostream& os, T v) {
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
  }
  os.write(bytes.data(), bytes.size());
}

template <class T>
T get_le(std::istream& is, const std::filesystem::path& path) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!is.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw IoError("truncated feature cache " + path.string());
  }
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t{bytes[i]} << (8 * i);
  return static_cast<T>(v);
}

std::filesystem::path find_file(const std::filesystem::path& dir, const std::string& stem) {
  for (const auto* suffix : {"", ".gz"}) {
    const auto p = dir / (stem + suffix);
    if (std::filesystem::exists(p)) return p;
  }
  throw IoError("missing " + stem + " in " + dir.string());
}

std::vector<cplx> twiddles(std::size_t n, int first_freq) {
  std::vector<cplx> w(kFeatureBlock * n);
  for (std::size_t k = 0; k < kFeatureBlock; ++k) {
    const double f = first_freq + static_cast<int>(k);
    for (std::size_t t = 0; t < n; ++t) {
      // Reduce f*t mod n exactly before scaling to keep the angle accurate.
      const long m = ((static_cast<long>(f) * static_cast<long>(t)) % static_cast<long>(n) +
                      static_cast<long>(n)) % static_cast<long>(n);
      w[k * n + t] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(m) /
                                         static_cast<double>(n));
    }
  }
  return w;
}

template <class Pixel>
std::vector<cplx> features_impl(std::span<const Pixel> image, std::size_t rows, std::size_t cols) {
  if (rows < kFeatureBlock || cols < kFeatureBlock || image.size() != rows * cols) {
    throw InvalidArgument("fourier_features: image shape mismatch");
  }
  // Shifted index j holds frequency j - n/2; the block starts at n/2 - 2.
  const auto row_w = twiddles(rows, -2);
  const auto col_w = twiddles(cols, -2);
  std::vector<cplx> partial(rows * kFeatureBlock);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t kx = 0; kx < kFeatureBlock; ++kx) {
      cplx acc = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        acc += static_cast<double>(image[r * cols + c]) * col_w[kx * cols + c];
      }
      partial[r * kFeatureBlock + kx] = acc;
    }
  }
  std::vector<cplx> out(kFeatureCount);
  double norm2 = 0.0;
  for (std::size_t ky = 0; ky < kFeatureBlock; ++ky) {
    for (std::size_t kx = 0; kx < kFeatureBlock; ++kx) {
      cplx acc = 0.0;
      for (std::size_t r = 0; r < rows; ++r) acc += row_w[ky * rows + r] * partial[r * kFeatureBlock + kx];
      out[ky * kFeatureBlock + kx] = acc;
      norm2 += std::norm(acc);
    }
  }
  if (!(norm2 > 0.0)) throw InvalidArgument("fourier_features: image has no energy in the central block");
  const double inv = 1.0 / std::sqrt(norm2);
  for (cplx& v : out) v *= inv;
  return out;
}

}  // namespace

RawImages load_idx(const std::filesystem::path& images_path,
                   const std::filesystem::path& labels_path) {
  const auto img = read_all(images_path);
  const auto lab = read_all(labels_path);
  if (read_be32(img, 0, images_path) != kImageMagic) {
    throw FormatError("bad IDX image magic in " + images_path.string());
  }
  if (read_be32(lab, 0, labels_path) != kLabelMagic) {
    throw FormatError("bad IDX label magic in " + labels_path.string());
  }
  RawImages raw;
  raw.count = read_be32(img, 4, images_path);
  raw.rows = read_be32(img, 8, images_path);
  raw.cols = read_be32(img, 12, images_path);
  const std::size_t n_labels = read_be32(lab, 4, labels_path);
  if (raw.rows == 0 || raw.cols == 0) throw FormatError("zero image dimension in " + images_path.string());
  if (raw.count != n_labels) {
    throw ConsistencyError("image count " + std::to_string(raw.count) + " != label count " +
                           std::to_string(n_labels));
  }
  const std::size_t pixel_bytes = raw.count * raw.rows * raw.cols;
  if (img.size() < 16 + pixel_bytes) throw IoError("truncated image data in " + images_path.string());
  if (lab.size() < 8 + n_labels) throw IoError("truncated label data in " + labels_path.string());
  raw.pixels.assign(img.begin() + 16, img.begin() + 16 + static_cast<std::ptrdiff_t>(pixel_bytes));
  raw.labels.assign(lab.begin() + 8, lab.begin() + 8 + static_cast<std::ptrdiff_t>(n_labels));
  return raw;
}

std::vector<cplx> fourier_features(std::span<const double> image, std::size_t rows,
                                   std::size_t cols) {
  return features_impl(image, rows, cols);
}

std::vector<cplx> fourier_features(std::span<const std::uint8_t> image, std::size_t rows,
                                   std::size_t cols) {
  return features_impl(image, rows, cols);
}

std::vector<Sample> extract_features(const RawImages& raw, std::size_t workers) {
  std::vector<Sample> out(raw.count);
  parallel_for(raw.count, workers, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      out[i].features = fourier_features(raw.image(i), raw.rows, raw.cols);
      out[i].label = raw.labels[i];
    }
  });
  return out;
}

std::string file_checksum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[static_cast<std::size_t>(i)]);
      h *= 0x100000001b3ULL;
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

DatasetSplit load_mnist(const std::filesystem::path& dir, std::size_t workers) {
  const auto tri = find_file(dir, "train-images-idx3-ubyte");
  const auto trl = find_file(dir, "train-labels-idx1-ubyte");
  const auto tei = find_file(dir, "t10k-images-idx3-ubyte");
  const auto tel = find_file(dir, "t10k-labels-idx1-ubyte");
  DatasetSplit split;
  split.train = extract_features(load_idx(tri, trl), workers);
  split.test = extract_features(load_idx(tei, tel), workers);
  for (const auto& p : {tri, trl, tei, tel}) split.checksums.push_back(file_checksum(p));
  return split;
}

void write_feature_cache(const std::filesystem::path& path, std::span<const Sample> samples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write("BMFC", 4);
  put_le<std::uint32_t>(out, kCacheVersion);
  put_le<std::uint64_t>(out, samples.size());
  for (const Sample& s : samples) {
    if (s.features.size() != kFeatureCount) throw ShapeError("feature cache: expected 16 features");
    for (const cplx& v : s.features) {
      put_le(out, std::bit_cast<std::uint64_t>(v.real()));
      put_le(out, std::bit_cast<std::uint64_t>(v.imag()));
    }
  }
  for (const Sample& s : samples) out.put(static_cast<char>(s.label));
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<Sample> read_feature_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4)) throw IoError("empty feature cache " + path.string());
  if (std::memcmp(magic.data(), "BMFC", 4) != 0) throw FormatError("bad feature cache magic");
  if (get_le<std::uint32_t>(in, path) != kCacheVersion) throw FormatError("unsupported feature cache version");
  const auto count = get_le<std::uint64_t>(in, path);
  std::vector<Sample> out(count);
  for (auto& s : out) {
    s.features.resize(kFeatureCount);
    for (auto& v : s.features) {
      const double re = std::bit_cast<double>(get_le<std::uint64_t>(in, path));
      const double im = std::bit_cast<double>(get_le<std::uint64_t>(in, path));
      v = cplx(re, im);
    }
  }
  for (auto& s : out) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw IoError("truncated feature cache labels");
    s.label = static_cast<std::size_t>(c);
  }
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0x5348554646ULL, epoch));
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

std::span<const Sample> take_fraction(std::span<const Sample> samples, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("dataset fraction must be in (0, 1]");
  const auto n = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(samples.size())));
  return samples.first(std::min(n, samples.size()));
}

}  // namespace bayesmesh
