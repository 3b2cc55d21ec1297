#include <doctest.h>

#include <unistd.h>
#include <zlib.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "bayesmesh/data.hpp"
#include "bayesmesh/errors.hpp"
#include "test_util.hpp"

using namespace bayesmesh;
using testutil::cplx;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> be32(std::uint32_t v) {
  return {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
          static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
}

std::vector<std::uint8_t> idx_images(std::uint32_t magic, std::uint32_t count, std::uint32_t rows,
                                     std::uint32_t cols, const std::vector<std::uint8_t>& pixels) {
  std::vector<std::uint8_t> out;
  for (auto v : {magic, count, rows, cols}) {
    auto b = be32(v);
    out.insert(out.end(), b.begin(), b.end());
  }
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

std::vector<std::uint8_t> idx_labels(std::uint32_t magic, const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> out = be32(magic);
  auto n = be32(static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), n.begin(), n.end());
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes, bool gz = false) {
  if (gz) {
    gzFile f = gzopen(p.c_str(), "wb");
    REQUIRE(f != nullptr);
    if (!bytes.empty()) gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    gzclose(f);
    return;
  }
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("bayesmesh_data_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Full 2D DFT, shifted so frequency f sits at index f + n/2, then the 4x4
// block at n/2 - 2, normalized.
std::vector<cplx> dft_oracle(const std::vector<double>& img, std::size_t rows, std::size_t cols) {
  std::vector<cplx> out;
  double n2 = 0.0;
  for (int fy = -2; fy < 2; ++fy) {
    for (int fx = -2; fx < 2; ++fx) {
      cplx acc = 0.0;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          acc += img[r * cols + c] *
                 std::polar(1.0, -2.0 * std::numbers::pi * (fy * static_cast<double>(r) / rows +
                                                            fx * static_cast<double>(c) / cols));
      out.push_back(acc);
      n2 += std::norm(acc);
    }
  }
  for (auto& v : out) v /= std::sqrt(n2);
  return out;
}

std::vector<double> random_image(Rng& rng) {
  std::vector<double> img(28 * 28);
  for (auto& v : img) v = static_cast<double>(rng.index(256));
  return img;
}

}  // namespace

TEST_CASE("idx loading, plain and gzip") {
  TempDir dir;
  std::vector<std::uint8_t> pixels(3 * 5 * 6);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<std::uint8_t>(i * 7);
  const std::vector<std::uint8_t> labels{4, 0, 9};
  for (bool gz : {false, true}) {
    const auto ip = dir.path / (gz ? "img.gz" : "img");
    const auto lp = dir.path / (gz ? "lab.gz" : "lab");
    write_bytes(ip, idx_images(0x803, 3, 5, 6, pixels), gz);
    write_bytes(lp, idx_labels(0x801, labels), gz);
    auto raw = load_idx(ip, lp);
    CHECK(raw.count == 3);
    CHECK(raw.rows == 5);
    CHECK(raw.cols == 6);
    CHECK(raw.pixels == pixels);
    CHECK(raw.labels == labels);
    CHECK(raw.image(1)[0] == pixels[30]);
  }
}

TEST_CASE("idx error kinds") {
  TempDir dir;
  const auto ip = dir.path / "img";
  const auto lp = dir.path / "lab";
  std::vector<std::uint8_t> pixels(2 * 4 * 4, 1);
  write_bytes(lp, idx_labels(0x801, {1, 2}));

  write_bytes(ip, idx_images(0x802, 2, 4, 4, pixels));
  CHECK_THROWS_AS(load_idx(ip, lp), FormatError);

  write_bytes(ip, idx_images(0x803, 3, 4, 4, std::vector<std::uint8_t>(48, 1)));
  CHECK_THROWS_AS(load_idx(ip, lp), ConsistencyError);

  write_bytes(ip, idx_images(0x803, 2, 4, 4, std::vector<std::uint8_t>(20, 1)));
  CHECK_THROWS_AS(load_idx(ip, lp), IoError);

  write_bytes(ip, {});
  CHECK_THROWS_AS(load_idx(ip, lp), IoError);

  CHECK_THROWS_AS(load_idx(dir.path / "missing", lp), IoError);
  CHECK_THROWS_AS(load_mnist(dir.path), IoError);
}

TEST_CASE("fourier features") {
  std::vector<double> flat(28 * 28, 3.0);
  auto f = fourier_features(flat, 28, 28);
  REQUIRE(f.size() == 16);
  for (std::size_t k = 0; k < 16; ++k) {
    CHECK(std::abs(f[k] - (k == 10 ? cplx(1.0) : cplx(0.0))) <= 1e-12);
  }

  Rng rng(6);
  for (int draw = 0; draw < 5; ++draw) {
    auto img = random_image(rng);
    auto feats = fourier_features(img, 28, 28);
    auto ref = dft_oracle(img, 28, 28);
    double n2 = 0.0;
    for (std::size_t k = 0; k < 16; ++k) {
      CHECK(std::abs(feats[k] - ref[k]) <= 1e-10);
      n2 += std::norm(feats[k]);
    }
    CHECK(std::abs(n2 - 1.0) <= 1e-12);

    // A circular shift changes phases only.
    const std::size_t dy = rng.index(28), dx = rng.index(28);
    std::vector<double> shifted(img.size());
    for (std::size_t r = 0; r < 28; ++r)
      for (std::size_t c = 0; c < 28; ++c) shifted[((r + dy) % 28) * 28 + (c + dx) % 28] = img[r * 28 + c];
    auto fs2 = fourier_features(shifted, 28, 28);
    for (std::size_t k = 0; k < 16; ++k) CHECK(std::abs(std::abs(fs2[k]) - std::abs(feats[k])) <= 1e-10);

    auto scaled = img;
    for (auto& v : scaled) v *= 0.37;
    auto fsc = fourier_features(scaled, 28, 28);
    for (std::size_t k = 0; k < 16; ++k) CHECK(std::abs(fsc[k] - feats[k]) <= 1e-12);

    std::vector<std::uint8_t> bytes(img.begin(), img.end());
    auto fb = fourier_features(std::span<const std::uint8_t>(bytes), 28, 28);
    for (std::size_t k = 0; k < 16; ++k) CHECK(std::abs(fb[k] - feats[k]) <= 1e-14);
  }

  std::vector<double> zero(28 * 28, 0.0);
  CHECK_THROWS_AS(fourier_features(zero, 28, 28), InvalidArgument);
  std::vector<double> tiny(9, 1.0);
  CHECK_THROWS_AS(fourier_features(tiny, 3, 3), InvalidArgument);
}

TEST_CASE("extract features is worker independent") {
  RawImages raw;
  raw.count = 40;
  raw.rows = 28;
  raw.cols = 28;
  Rng rng(7);
  for (std::size_t i = 0; i < raw.count; ++i) {
    auto img = random_image(rng);
    raw.pixels.insert(raw.pixels.end(), img.begin(), img.end());
    raw.labels.push_back(static_cast<std::uint8_t>(i % 10));
  }
  auto a = extract_features(raw, 1);
  auto b = extract_features(raw, 3);
  REQUIRE(a.size() == 40);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].features == b[i].features);
    CHECK(a[i].label == i % 10);
  }
}

TEST_CASE("feature cache round trip") {
  TempDir dir;
  Rng rng(8);
  auto samples = testutil::random_samples(rng, 25);
  const auto p = dir.path / "cache.bin";
  write_feature_cache(p, samples);
  CHECK(fs::file_size(p) == 16 + 25 * 16 * 16 + 25);
  auto back = read_feature_cache(p);
  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].features == samples[i].features);
    CHECK(back[i].label == samples[i].label);
  }
  CHECK(file_checksum(p).size() == 16);

  write_bytes(p, {'X', 'X', 'X', 'X', 1, 0, 0, 0});
  CHECK_THROWS_AS(read_feature_cache(p), FormatError);
  write_bytes(p, {'B', 'M', 'F', 'C', 1, 0, 0, 0, 5, 0, 0, 0, 0, 0, 0, 0, 1, 2});
  CHECK_THROWS_AS(read_feature_cache(p), IoError);
}

TEST_CASE("epoch order and fractions") {
  auto a = epoch_order(1000, 5, 0);
  auto b = epoch_order(1000, 5, 0);
  auto c = epoch_order(1000, 5, 1);
  CHECK(a == b);
  CHECK(a != c);
  std::set<std::size_t> uniq(a.begin(), a.end());
  CHECK(uniq.size() == 1000);
  CHECK(*uniq.rbegin() == 999);

  std::vector<Sample> s(10);
  CHECK(take_fraction(s, 0.25).size() == 3);
  CHECK(take_fraction(s, 1.0).size() == 10);
  CHECK_THROWS_AS(take_fraction(s, 0.0), InvalidArgument);
  CHECK_THROWS_AS(take_fraction(s, 1.5), InvalidArgument);
}
