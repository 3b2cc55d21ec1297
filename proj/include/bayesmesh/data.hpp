#pragma once

// MNIST ingestion and Fourier feature extraction.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bayesmesh/sample.hpp"

namespace bayesmesh {

inline constexpr std::size_t kFeatureBlock = 4;  // 4x4 central coefficients
inline constexpr std::size_t kFeatureCount = kFeatureBlock * kFeatureBlock;

struct RawImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols, row-major
  std::vector<std::uint8_t> labels;

  [[nodiscard]] std::span<const std::uint8_t> image(std::size_t i) const {
    return std::span<const std::uint8_t>(pixels).subspan(i * rows * cols, rows * cols);
  }
};

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Gzip-compressed files are decompressed transparently.
/// Throws IoError (missing, empty, truncated), FormatError (bad magic or
/// dimensions) or ConsistencyError (count mismatch).
RawImages load_idx(const std::filesystem::path& images_path,
                   const std::filesystem::path& labels_path);

/// 2D DFT (negative exponent, unscaled), spectrum centered so DC sits at
/// index rows/2, cols/2, then the 4x4 block starting two bins before DC on
/// each axis in row-major order, normalized to unit L2 norm. For 28x28 that
/// is rows/cols 12..15 of the shifted spectrum, with DC at slot 10.
/// Throws InvalidArgument for an all-zero image or a side shorter than 4.
std::vector<std::complex<double>> fourier_features(std::span<const double> image,
                                                   std::size_t rows, std::size_t cols);
std::vector<std::complex<double>> fourier_features(std::span<const std::uint8_t> image,
                                                   std::size_t rows, std::size_t cols);

/// Feature extraction for every image, split across `workers` threads.
std::vector<Sample> extract_features(const RawImages& raw, std::size_t workers = 0);

struct DatasetSplit {
  std::vector<Sample> train;
  std::vector<Sample> test;
  std::vector<std::string> checksums;  // FNV-1a 64 of each source file, hex
};

/// Finds the four standard MNIST files (optionally with .gz) in `dir`.
DatasetSplit load_mnist(const std::filesystem::path& dir, std::size_t workers = 0);

/// FNV-1a 64 of a file's raw bytes, as 16 hex digits.
std::string file_checksum(const std::filesystem::path& path);

/// Feature cache: header {"BMFC", u32 version, u64 count} (16 bytes, little
/// endian), then count * kFeatureCount (re, im) f64 pairs, then count label
/// bytes.
void write_feature_cache(const std::filesystem::path& path, std::span<const Sample> samples);
std::vector<Sample> read_feature_cache(const std::filesystem::path& path);

/// Deterministic shuffled order of [0, n) for one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

/// First ceil(fraction * size) samples, fraction in (0, 1].
std::span<const Sample> take_fraction(std::span<const Sample> samples, double fraction);

}  // namespace bayesmesh
