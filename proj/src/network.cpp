#include "bayesmesh/network.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include <nlohmann/json.hpp>

#include "bayesmesh/errors.hpp"
#include "bayesmesh/parallel.hpp"

namespace bayesmesh {

void NetworkSpec::validate() const {
  if (ports < 2 || ports % 2 != 0) throw ConfigError("network: port count must be even and >= 2");
  if (layers == 0) throw ConfigError("network: at least one layer is required");
  if (nonlinearities.size() != layers) {
    throw ConfigError("network: need exactly one nonlinearity per layer");
  }
  if (classes == 0 || classes > ports) throw ConfigError("network: classes must be in [1, N]");
  if (!(input_power > 0.0) || !std::isfinite(input_power)) {
    throw ConfigError("network: input power must be positive");
  }
}

NetworkSpec make_network_spec(std::size_t ports, std::size_t layers, std::size_t classes,
                              double input_power) {
  NetworkSpec spec;
  spec.input_power = input_power;
  spec.ports = ports;
  spec.layers = layers;
  spec.classes = classes;
  spec.nonlinearities.assign(layers, Nonlinearity::Modulus);
  if (layers > 0) spec.nonlinearities.back() = Nonlinearity::ModulusSquared;
  spec.validate();
  return spec;
}

std::string to_string(Nonlinearity n) {
  return n == Nonlinearity::Modulus ? "modulus" : "modulus_squared";
}

namespace {

void check_inputs(const NetworkSpec& spec, std::span<const double> phases,
                  std::span<const cplx> x) {
  if (phases.size() != spec.n_phases()) {
    throw ShapeError("network: expected " + std::to_string(spec.n_phases()) +
                     " phases, got " + std::to_string(phases.size()));
  }
  if (x.size() != spec.ports) {
    throw ShapeError("network: expected " + std::to_string(spec.ports) +
                     " input fields, got " + std::to_string(x.size()));
  }
  double power = 0.0;
  for (const cplx& v : x) power += std::norm(v);
  if (!(power > 0.0)) throw InvalidArgument("network: input vector must be non-zero");
}

void apply_nonlinearity(Nonlinearity n, std::span<cplx> field) {
  for (cplx& v : field) v = n == Nonlinearity::Modulus ? std::abs(v) : std::norm(v);
}

const MeshLayout& layout_for(std::size_t ports) {
  // Meshes are small and immutable; build on demand per call site.
  thread_local MeshLayout cached;
  if (cached.ports != ports) cached = build_mesh_layout(ports);
  return cached;
}

}  // namespace

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

double cross_entropy(std::span<const double> probabilities, std::size_t target) {
  if (target >= probabilities.size()) throw InvalidArgument("cross_entropy: target out of range");
  return -std::log(std::max(probabilities[target], kLogFloor));
}

ForwardState forward(const NetworkSpec& spec, std::span<const double> phases,
                     std::span<const cplx> x) {
  check_inputs(spec, phases, x);
  const MeshLayout& layout = layout_for(spec.ports);
  const std::size_t per_layer = spec.phases_per_layer();
  ForwardState st;
  const double amplitude = std::sqrt(spec.input_power);
  std::vector<cplx> field(x.size());
  for (std::size_t p = 0; p < x.size(); ++p) field[p] = amplitude * x[p];
  for (std::size_t l = 0; l < spec.layers; ++l) {
    st.inputs.push_back(field);
    MeshTransfer(layout, phases.subspan(l * per_layer, per_layer)).apply(field);
    st.linear.push_back(field);
    apply_nonlinearity(spec.nonlinearities[l], field);
    for (const cplx& v : field) {
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
        throw NumericFailure("network: non-finite field in layer " + std::to_string(l), l);
      }
    }
  }
  st.intensities.reserve(spec.ports);
  for (const cplx& v : field) st.intensities.push_back(v.real());
  st.probabilities =
      softmax(std::span<const double>(st.intensities).first(spec.classes));
  return st;
}

std::vector<double> forward_infer(const NetworkSpec& spec, std::span<const double> phases,
                                  std::span<const cplx> x) {
  return forward(spec, phases, x).probabilities;
}

CompiledNetwork::CompiledNetwork(const NetworkSpec& spec, std::span<const double> phases)
    : spec_(spec), amplitude_(std::sqrt(spec.input_power)) {
  spec_.validate();
  if (phases.size() != spec_.n_phases()) {
    throw ShapeError("CompiledNetwork: expected " + std::to_string(spec_.n_phases()) + " phases");
  }
  const MeshLayout layout = build_mesh_layout(spec_.ports);
  const std::size_t per_layer = spec_.phases_per_layer();
  for (std::size_t l = 0; l < spec_.layers; ++l) {
    meshes_.emplace_back(layout, phases.subspan(l * per_layer, per_layer));
  }
}

void CompiledNetwork::probabilities(std::span<const cplx> x, std::span<cplx> scratch,
                                    std::span<double> probs) const {
  if (x.size() != spec_.ports || scratch.size() != spec_.ports ||
      probs.size() != spec_.classes) {
    throw ShapeError("CompiledNetwork::probabilities: size mismatch");
  }
  for (std::size_t p = 0; p < x.size(); ++p) scratch[p] = amplitude_ * x[p];
  for (std::size_t l = 0; l < spec_.layers; ++l) {
    meshes_[l].apply(scratch);
    apply_nonlinearity(spec_.nonlinearities[l], scratch);
  }
  double mx = scratch[0].real();
  for (std::size_t k = 1; k < spec_.classes; ++k) mx = std::max(mx, scratch[k].real());
  double z = 0.0;
  for (std::size_t k = 0; k < spec_.classes; ++k) {
    probs[k] = std::exp(scratch[k].real() - mx);
    z += probs[k];
  }
  for (double& p : probs) p /= z;
}

std::size_t CompiledNetwork::predict(std::span<const cplx> x) const {
  if (x.size() != spec_.ports) throw ShapeError("CompiledNetwork::predict: size mismatch");
  std::vector<cplx> field(x.size());
  for (std::size_t p = 0; p < x.size(); ++p) field[p] = amplitude_ * x[p];
  for (std::size_t l = 0; l < spec_.layers; ++l) {
    meshes_[l].apply(field);
    apply_nonlinearity(spec_.nonlinearities[l], field);
  }
  // Softmax is monotone, so the argmax of the intensities is the prediction.
  std::size_t best = 0;
  for (std::size_t k = 1; k < spec_.classes; ++k) {
    if (field[k].real() > field[best].real()) best = k;
  }
  return best;
}

double evaluate_accuracy(const NetworkSpec& spec, std::span<const double> phases,
                         std::span<const Sample> dataset, std::size_t workers) {
  if (dataset.empty()) throw InvalidArgument("evaluate_accuracy: empty dataset");
  const CompiledNetwork net(spec, phases);
  std::atomic<std::size_t> correct{0};
  parallel_for(dataset.size(), workers, [&](std::size_t begin, std::size_t end) {
    std::size_t local = 0;
    for (std::size_t i = begin; i < end; ++i) {
      if (net.predict(dataset[i].features) == dataset[i].label) ++local;
    }
    correct += local;
  });
  return static_cast<double>(correct.load()) / static_cast<double>(dataset.size());
}

TapeForward record_network(GradientTape& tape, const NetworkSpec& spec,
                           std::span<const double> phases, std::span<const Sample> batch) {
  if (batch.empty()) throw InvalidArgument("record_network: empty batch");
  if (phases.size() != spec.n_phases()) {
    throw ShapeError("record_network: expected " + std::to_string(spec.n_phases()) + " phases");
  }
  using NodeId = GradientTape::NodeId;
  const std::size_t n = spec.ports;
  const std::size_t bsz = batch.size();
  tape.reset(bsz);

  std::vector<NodeId> field(n);
  std::vector<cplx> column(bsz);
  const double amplitude = std::sqrt(spec.input_power);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t b = 0; b < bsz; ++b) {
      if (batch[b].features.size() != n) throw ShapeError("record_network: feature size mismatch");
      column[b] = amplitude * batch[b].features[p];
    }
    field[p] = tape.constant(column);
  }

  const MeshLayout& layout = layout_for(n);
  const std::size_t per_layer = spec.phases_per_layer();
  for (std::size_t l = 0; l < spec.layers; ++l) {
    const std::size_t base = l * per_layer;
    for (const auto& col : layout.columns) {
      for (const auto& node : col) {
        const NodeId ext = tape.phase_leaf(base + node.ext_index, phases[base + node.ext_index]);
        const NodeId mzi = tape.phase_leaf(base + node.mzi_index, phases[base + node.mzi_index]);
        const NodeId half = tape.cis(mzi, 0.5);
        const NodeId s = tape.sin(mzi, 0.5);
        const NodeId c = tape.cos(mzi, 0.5);
        const NodeId g = tape.mul(half, tape.cis(ext, 1.0));
        const NodeId u00 = tape.mul(g, s);
        const NodeId u01 = tape.mul(g, c);
        const NodeId u10 = tape.mul(half, c);
        const NodeId u11 = tape.neg(tape.mul(half, s));
        const NodeId top = field[node.top_port];
        const NodeId bot = field[node.bottom_port];
        field[node.top_port] = tape.add(tape.mul(u00, top), tape.mul(u01, bot));
        field[node.bottom_port] = tape.add(tape.mul(u10, top), tape.mul(u11, bot));
      }
    }
    for (std::size_t p = 0; p < n; ++p) {
      const std::size_t idx = base + layout.output_phases[p];
      field[p] = tape.mul(tape.cis(tape.phase_leaf(idx, phases[idx]), 1.0), field[p]);
      field[p] = spec.nonlinearities[l] == Nonlinearity::Modulus ? tape.abs(field[p])
                                                                 : tape.abs2(field[p]);
      for (const cplx& v : tape.value(field[p])) {
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
          throw NumericFailure("network: non-finite field in layer " + std::to_string(l), l);
        }
      }
    }
  }

  TapeForward out;
  out.probabilities = tape.softmax(std::span<const NodeId>(field).first(spec.classes));
  std::vector<std::size_t> labels(bsz);
  for (std::size_t b = 0; b < bsz; ++b) {
    if (batch[b].label >= spec.classes) throw InvalidArgument("record_network: label out of range");
    labels[b] = batch[b].label;
  }
  const NodeId picked = tape.gather(out.probabilities, labels);
  out.mean_cross_entropy = tape.neg(tape.mean(tape.log(picked, kLogFloor)));
  return out;
}

nlohmann::json spec_to_json(const NetworkSpec& spec) {
  nlohmann::json nl = nlohmann::json::array();
  for (auto n : spec.nonlinearities) nl.push_back(to_string(n));
  return {{"N", spec.ports},
          {"L", spec.layers},
          {"nonlinearities", nl},
          {"classes", spec.classes},
          {"input_power", spec.input_power}};
}

NetworkSpec spec_from_json(const nlohmann::json& doc) {
  try {
    NetworkSpec spec;
    spec.ports = doc.at("N").get<std::size_t>();
    spec.layers = doc.at("L").get<std::size_t>();
    spec.classes = doc.value("classes", std::size_t{10});
    spec.input_power = doc.value("input_power", kDefaultInputPower);
    spec.nonlinearities.clear();
    for (const auto& s : doc.at("nonlinearities")) {
      const auto name = s.get<std::string>();
      if (name == "modulus") {
        spec.nonlinearities.push_back(Nonlinearity::Modulus);
      } else if (name == "modulus_squared") {
        spec.nonlinearities.push_back(Nonlinearity::ModulusSquared);
      } else {
        throw ConfigError("unknown nonlinearity '" + name + "'");
      }
    }
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed network spec: ") + e.what());
  }
}

}  // namespace bayesmesh
