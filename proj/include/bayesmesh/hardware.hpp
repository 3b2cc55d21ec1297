#pragma once

// Fabricated-device imperfections and drive planning: passive phase offsets,
// actuator quantization, thermal crosstalk (phi_chip = offset + T [dphi]_q),
// actuator deactivation, and drive power accounting.

#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "bayesmesh/mesh.hpp"

namespace bayesmesh {

struct VariationalPosterior;

/// Drive power per radian of commanded shift, in mW.
inline constexpr double kMilliwattPerRadian = 10.0 / std::numbers::pi;
inline constexpr double kDefaultSlack = 0.9;
inline constexpr int kMaxBits = 24;

struct DeviceInstance {
  std::vector<double> offset;    // passive phases at zero drive, [0, 2pi)
  std::vector<double> measured;  // equals offset (ideal pre-characterization)
  std::uint64_t seed = 0;

  [[nodiscard]] std::size_t size() const noexcept { return offset.size(); }
};

/// I.i.d. uniform offsets on [0, 2pi). Throws InvalidArgument for n == 0.
DeviceInstance sample_device(std::size_t n_phases, std::uint64_t seed);

/// Nearest of the 2^bits levels k * 2pi / 2^bits on the circle; the result
/// lies on [0, 2pi) and a value rounding up to 2pi maps to level 0.
/// Throws InvalidArgument for bits outside [1, 24].
double quantize(double radians, int bits);

class ThermalMatrix {
 public:
  ThermalMatrix() = default;
  static ThermalMatrix identity(std::size_t n);

  [[nodiscard]] std::size_t size() const noexcept { return n_; }
  [[nodiscard]] double coefficient() const noexcept { return ct_; }
  [[nodiscard]] double operator()(std::size_t i, std::size_t j) const { return t_[i * n_ + j]; }

  /// T * drive. Throws ShapeError on size mismatch.
  [[nodiscard]] std::vector<double> apply(std::span<const double> drive) const;

 private:
  friend ThermalMatrix sample_thermal_matrix(std::size_t, double, std::uint64_t);
  std::size_t n_ = 0;
  double ct_ = 0.0;
  std::vector<double> t_;  // row-major
};

/// Unit diagonal, off-diagonals i.i.d. U(0, ct). Throws InvalidArgument for
/// negative or non-finite ct.
ThermalMatrix sample_thermal_matrix(std::size_t n_phases, double ct, std::uint64_t seed);

/// How a phase displacement becomes a commanded shift.
///   Shortest:   the signed shortest displacement on the circle, [-pi, pi);
///               power is accounted on |dphi|.
///   HeaterOnly: the non-negative shift on [0, 2pi).
/// Both quantize onto the same 2^B levels modulo 2pi.
enum class DriveConvention { Shortest, HeaterOnly };

/// Bayesian actuator target when the offset lies outside mu +- sigma.
///   IntervalEdge: mu backed off by u*sigma toward the passive offset.
///   Literal:      the offset-free expression mu - u*sigma.
enum class BayesDriveRule { IntervalEdge, Literal };

std::string to_string(DriveConvention c);
std::string to_string(BayesDriveRule r);
/// "shortest" / "heater_only"; throws ConfigError otherwise.
DriveConvention parse_drive_convention(const std::string& name);
/// "interval_edge" / "literal"; throws ConfigError otherwise.
BayesDriveRule parse_bayes_drive_rule(const std::string& name);

struct DrivePlan {
  std::vector<double> dphi;          // quantized commanded shifts
  std::vector<std::uint8_t> deactivated;
  int bits = 8;
  std::vector<double> slack;         // empty for MAP plans
  DriveConvention convention = DriveConvention::Shortest;

  [[nodiscard]] std::size_t size() const noexcept { return dphi.size(); }
  [[nodiscard]] std::size_t deactivated_count() const;
  /// sum_i |dphi_i|
  [[nodiscard]] double l1_norm() const;
};

/// Quantized commanded shift for a raw displacement under `convention`.
double quantize_drive(double displacement, int bits, DriveConvention convention);

/// MAP path: dphi = [phi - measured]_q; deactivated where it quantizes to 0.
DrivePlan plan_drive(std::span<const double> phases, const DeviceInstance& device, int bits,
                     DriveConvention convention = DriveConvention::Shortest);

/// Bayesian path: actuators whose measured offset lies within mu +- sigma
/// (circular distance) are deactivated; the rest are driven per `rule`.
/// Throws InvalidArgument unless every slack value is in [0, 1).
DrivePlan plan_drive(const VariationalPosterior& posterior, const DeviceInstance& device,
                     std::span<const double> slack, int bits,
                     DriveConvention convention = DriveConvention::Shortest,
                     BayesDriveRule rule = BayesDriveRule::IntervalEdge);

/// phi_chip = wrap(offset + T * d) where d is the plan's drive with
/// deactivated actuators forced to 0.
PhaseVector realize_chip_phases(const DeviceInstance& device, const DrivePlan& plan,
                                const ThermalMatrix& thermal);

struct PowerReport {
  double l_norm = 0.0;    // mean over devices of sum |dphi|, radians
  double power_mw = 0.0;  // l_norm * 10/pi
  std::size_t n_devices = 0;
};

/// Throws InvalidArgument for an empty plan list.
PowerReport power_report(std::span<const DrivePlan> plans);

/// Replay record for one (device, thermal trial).
struct TrialManifest {
  std::uint64_t device_seed = 0;
  std::uint64_t ct_seed = 0;
  double ct = 0.0;
  int bits = 8;
  double u = kDefaultSlack;

  friend bool operator==(const TrialManifest&, const TrialManifest&) = default;
};

nlohmann::json manifest_to_json(const TrialManifest& m);
TrialManifest manifest_from_json(const nlohmann::json& doc);

}  // namespace bayesmesh
