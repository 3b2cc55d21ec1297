#pragma once

// Unitary optical network: L meshes of N ports, each followed by an
// elementwise detection nonlinearity, then a softmax over the first K outputs.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "bayesmesh/mesh.hpp"
#include "bayesmesh/sample.hpp"
#include "bayesmesh/tape.hpp"

namespace bayesmesh {

enum class Nonlinearity { Modulus, ModulusSquared };

inline constexpr double kLogFloor = 1e-12;
inline constexpr double kDefaultInputPower = 100.0;

struct NetworkSpec {
  std::size_t ports = 16;
  std::size_t layers = 2;
  std::vector<Nonlinearity> nonlinearities{Nonlinearity::Modulus,
                                           Nonlinearity::ModulusSquared};
  std::size_t classes = 10;
  /// Optical power launched into the first mesh; features are unit-norm, so
  /// the input field is sqrt(input_power) * x. Sets the softmax sharpness.
  double input_power = kDefaultInputPower;

  /// Layers count N^2 phases each, laid out consecutively.
  [[nodiscard]] std::size_t phases_per_layer() const { return ports * ports; }
  [[nodiscard]] std::size_t n_phases() const { return layers * phases_per_layer(); }
  [[nodiscard]] PhaseLayoutDescriptor descriptor() const { return {ports, layers}; }

  /// Throws ConfigError when the fields are inconsistent.
  void validate() const;
};

/// L layers with |z| everywhere except |z|^2 on the last layer.
NetworkSpec make_network_spec(std::size_t ports, std::size_t layers, std::size_t classes = 10,
                              double input_power = kDefaultInputPower);

struct ForwardState {
  std::vector<std::vector<cplx>> inputs;  // X_l
  std::vector<std::vector<cplx>> linear;  // Z_l = U^l X_l
  std::vector<double> intensities;        // f_L(Z_L), all N ports; sums to P*|x|^2
  std::vector<double> probabilities;      // softmax of the first K
};

/// Full forward pass keeping every intermediate. Throws ShapeError on size
/// mismatches, InvalidArgument for a zero input, NumericFailure on NaN.
ForwardState forward(const NetworkSpec& spec, std::span<const double> phases,
                     std::span<const cplx> x);

/// Class probabilities for one input.
std::vector<double> forward_infer(const NetworkSpec& spec, std::span<const double> phases,
                                  std::span<const cplx> x);

/// Meshes compiled once for a fixed phase assignment, for bulk inference.
class CompiledNetwork {
 public:
  CompiledNetwork(const NetworkSpec& spec, std::span<const double> phases);

  /// Writes class probabilities into `probs` (size K). `scratch` must hold N.
  void probabilities(std::span<const cplx> x, std::span<cplx> scratch,
                     std::span<double> probs) const;
  /// Argmax class; ties go to the lowest index.
  [[nodiscard]] std::size_t predict(std::span<const cplx> x) const;

 private:
  NetworkSpec spec_;
  double amplitude_;
  std::vector<MeshTransfer> meshes_;
};

/// -ln p[target] with a floor of kLogFloor inside the log.
double cross_entropy(std::span<const double> probabilities, std::size_t target);

/// Softmax over `logits`, shifted by the max for stability.
std::vector<double> softmax(std::span<const double> logits);

/// Fraction of samples whose argmax matches the label. Work is split over
/// `workers` threads (0 = default worker count); the result does not depend
/// on the split.
double evaluate_accuracy(const NetworkSpec& spec, std::span<const double> phases,
                         std::span<const Sample> dataset, std::size_t workers = 0);

/// Nodes produced when the network is recorded on a tape for one batch.
struct TapeForward {
  std::vector<GradientTape::NodeId> probabilities;  // K nodes, width = batch
  GradientTape::NodeId mean_cross_entropy = 0;      // width 1
};

/// Records the forward pass and mean cross-entropy of `batch` on `tape`
/// (which is reset). Phase i becomes leaf i. Throws NumericFailure with the
/// offending layer index if the forward values are not finite.
TapeForward record_network(GradientTape& tape, const NetworkSpec& spec,
                           std::span<const double> phases, std::span<const Sample> batch);

nlohmann::json spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& doc);

std::string to_string(Nonlinearity n);

}  // namespace bayesmesh
