#pragma once

// Rectangular MZI meshes and forward field propagation.
//
// Layout convention (version 1), stable because phase vectors are persisted:
//   * N ports, N columns. Column c (zero-based) couples port pairs
//     (0,1),(2,3),... when c is even and (1,2),(3,4),... when c is odd.
//   * MZIs are numbered column by column, top to bottom. MZI k owns phase
//     indices 2k (external) and 2k+1 (internal).
//   * The N output phases follow at indices N(N-1) .. N^2-1, one per port,
//     applied after the last column.

#include <array>
#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace bayesmesh {

using cplx = std::complex<double>;

inline constexpr int kLayoutConventionVersion = 1;

/// Row-major 2x2 complex matrix acting on (top, bottom) port amplitudes.
struct Mat2 {
  std::array<cplx, 4> m{};
  [[nodiscard]] cplx operator()(int r, int c) const { return m[2 * r + c]; }
};

/// Transfer matrix of one MZI node followed by its external phase.
/// Throws InvalidArgument on non-finite input.
Mat2 mzi_node_matrix(double phi_ext, double phi_mzi);

struct MziNode {
  std::size_t ext_index = 0;
  std::size_t mzi_index = 0;
  std::size_t top_port = 0;
  std::size_t bottom_port = 0;
};

struct MeshLayout {
  std::size_t ports = 0;
  std::vector<std::vector<MziNode>> columns;
  std::vector<std::size_t> output_phases;
  std::size_t n_phases = 0;

  [[nodiscard]] std::size_t mzi_count() const;
};

/// Throws UnsupportedSize for N < 2 or odd N.
MeshLayout build_mesh_layout(std::size_t ports);

/// Precomputed node matrices for one phase assignment; applying it to many
/// fields avoids recomputing sin/cos per sample.
class MeshTransfer {
 public:
  MeshTransfer(const MeshLayout& layout, std::span<const double> phases);

  [[nodiscard]] std::size_t ports() const noexcept { return ports_; }

  /// In-place Z = U x. Throws ShapeError if field.size() != ports().
  void apply(std::span<cplx> field) const;

 private:
  struct Stage {
    std::size_t top;
    Mat2 u;
  };
  std::size_t ports_;
  std::vector<Stage> stages_;
  std::vector<cplx> output_factors_;
};

/// Z = U(phases) x by sequential node application.
std::vector<cplx> apply_mesh(const MeshLayout& layout,
                             std::span<const double> phases,
                             std::span<const cplx> x);

/// Column-major N*N matrix assembled by propagating each basis vector.
std::vector<cplx> mesh_matrix(const MeshLayout& layout,
                              std::span<const double> phases);

/// Maps any finite angle onto [0, 2pi).
double wrap_phase(double radians);

/// Shortest signed displacement on the circle, in [-pi, pi).
double signed_wrap(double radians);

struct PhaseLayoutDescriptor {
  std::size_t ports = 0;
  std::size_t layer_count = 0;
  int convention_version = kLayoutConventionVersion;

  friend bool operator==(const PhaseLayoutDescriptor&,
                         const PhaseLayoutDescriptor&) = default;
};

/// All tunable phases of a network, canonically on [0, 2pi).
class PhaseVector {
 public:
  PhaseVector() = default;
  /// Wraps every entry; throws InvalidArgument on non-finite values.
  explicit PhaseVector(std::vector<double> radians);

  [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
  [[nodiscard]] double operator[](std::size_t i) const { return values_[i]; }
  [[nodiscard]] std::span<const double> values() const noexcept {
    return values_;
  }
  [[nodiscard]] std::span<const double> slice(std::size_t offset,
                                              std::size_t count) const;
  void set(std::size_t i, double radians);

  friend bool operator==(const PhaseVector&, const PhaseVector&) = default;

 private:
  std::vector<double> values_;
};

nlohmann::json phases_to_json(const PhaseVector& phases,
                              const PhaseLayoutDescriptor& layout);
/// Throws ConfigError on malformed documents or a size/descriptor mismatch.
std::pair<PhaseVector, PhaseLayoutDescriptor> phases_from_json(
    const nlohmann::json& doc);

}  // namespace bayesmesh
