#include "bayesmesh/mesh.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include <nlohmann/json.hpp>

#include "bayesmesh/errors.hpp"

namespace bayesmesh {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

Mat2 mzi_node_matrix(double phi_ext, double phi_mzi) {
  if (!std::isfinite(phi_ext) || !std::isfinite(phi_mzi)) {
    throw InvalidArgument("mzi_node_matrix: phases must be finite");
  }
  const double s = std::sin(0.5 * phi_mzi);
  const double c = std::cos(0.5 * phi_mzi);
  const cplx global = std::polar(1.0, 0.5 * phi_mzi);
  const cplx ext = std::polar(1.0, phi_ext);
  Mat2 u;
  u.m[0] = global * ext * s;
  u.m[1] = global * ext * c;
  u.m[2] = global * c;
  u.m[3] = -global * s;
  return u;
}

std::size_t MeshLayout::mzi_count() const {
  std::size_t n = 0;
  for (const auto& col : columns) n += col.size();
  return n;
}

MeshLayout build_mesh_layout(std::size_t ports) {
  if (ports < 2 || ports % 2 != 0) {
    throw UnsupportedSize("build_mesh_layout: port count must be even and >= 2, got " +
                          std::to_string(ports));
  }
  MeshLayout layout;
  layout.ports = ports;
  layout.columns.resize(ports);
  std::size_t next = 0;
  for (std::size_t c = 0; c < ports; ++c) {
    for (std::size_t top = c % 2; top + 1 < ports; top += 2) {
      layout.columns[c].push_back(MziNode{next, next + 1, top, top + 1});
      next += 2;
    }
  }
  for (std::size_t p = 0; p < ports; ++p) layout.output_phases.push_back(next++);
  layout.n_phases = next;
  return layout;
}

MeshTransfer::MeshTransfer(const MeshLayout& layout,
                           std::span<const double> phases)
    : ports_(layout.ports) {
  if (phases.size() != layout.n_phases) {
    throw ShapeError("MeshTransfer: expected " + std::to_string(layout.n_phases) +
                     " phases, got " + std::to_string(phases.size()));
  }
  stages_.reserve(layout.mzi_count());
  for (const auto& col : layout.columns) {
    for (const auto& node : col) {
      stages_.push_back(
          {node.top_port, mzi_node_matrix(phases[node.ext_index], phases[node.mzi_index])});
    }
  }
  output_factors_.reserve(ports_);
  for (std::size_t idx : layout.output_phases) {
    if (!std::isfinite(phases[idx])) throw InvalidArgument("MeshTransfer: non-finite phase");
    output_factors_.push_back(std::polar(1.0, phases[idx]));
  }
}

void MeshTransfer::apply(std::span<cplx> field) const {
  if (field.size() != ports_) {
    throw ShapeError("MeshTransfer::apply: field has " + std::to_string(field.size()) +
                     " entries, mesh has " + std::to_string(ports_) + " ports");
  }
  for (const auto& st : stages_) {
    const cplx a = field[st.top];
    const cplx b = field[st.top + 1];
    field[st.top] = st.u.m[0] * a + st.u.m[1] * b;
    field[st.top + 1] = st.u.m[2] * a + st.u.m[3] * b;
  }
  for (std::size_t p = 0; p < ports_; ++p) field[p] *= output_factors_[p];
}

std::vector<cplx> apply_mesh(const MeshLayout& layout,
                             std::span<const double> phases,
                             std::span<const cplx> x) {
  if (x.size() != layout.ports) {
    throw ShapeError("apply_mesh: input has " + std::to_string(x.size()) +
                     " entries, mesh has " + std::to_string(layout.ports) + " ports");
  }
  MeshTransfer transfer(layout, phases);
  std::vector<cplx> out(x.begin(), x.end());
  transfer.apply(out);
  return out;
}

std::vector<cplx> mesh_matrix(const MeshLayout& layout,
                              std::span<const double> phases) {
  const std::size_t n = layout.ports;
  MeshTransfer transfer(layout, phases);
  std::vector<cplx> u(n * n);
  for (std::size_t k = 0; k < n; ++k) {
    std::span<cplx> col(u.data() + k * n, n);
    col[k] = 1.0;
    transfer.apply(col);
  }
  return u;
}

double wrap_phase(double radians) {
  double w = std::fmod(radians, kTwoPi);
  if (w < 0.0) w += kTwoPi;
  // fmod of a tiny negative number can round up to exactly 2pi.
  if (w >= kTwoPi) w = 0.0;
  return w;
}

double signed_wrap(double radians) {
  double w = wrap_phase(radians);
  if (w >= std::numbers::pi) w -= kTwoPi;
  return w;
}

PhaseVector::PhaseVector(std::vector<double> radians) : values_(std::move(radians)) {
  for (double& v : values_) {
    if (!std::isfinite(v)) throw InvalidArgument("PhaseVector: non-finite phase");
    v = wrap_phase(v);
  }
}

std::span<const double> PhaseVector::slice(std::size_t offset, std::size_t count) const {
  if (offset + count > values_.size()) {
    throw ShapeError("PhaseVector::slice: range exceeds vector length");
  }
  return std::span<const double>(values_).subspan(offset, count);
}

void PhaseVector::set(std::size_t i, double radians) {
  if (!std::isfinite(radians)) throw InvalidArgument("PhaseVector: non-finite phase");
  values_.at(i) = wrap_phase(radians);
}

nlohmann::json phases_to_json(const PhaseVector& phases,
                              const PhaseLayoutDescriptor& layout) {
  nlohmann::json doc;
  doc["layout"] = {{"N", layout.ports},
                   {"layer_count", layout.layer_count},
                   {"convention_version", layout.convention_version}};
  doc["phases"] = std::vector<double>(phases.values().begin(), phases.values().end());
  return doc;
}

std::pair<PhaseVector, PhaseLayoutDescriptor> phases_from_json(const nlohmann::json& doc) {
  try {
    PhaseLayoutDescriptor layout;
    const auto& l = doc.at("layout");
    layout.ports = l.at("N").get<std::size_t>();
    layout.layer_count = l.at("layer_count").get<std::size_t>();
    layout.convention_version = l.at("convention_version").get<int>();
    if (layout.convention_version != kLayoutConventionVersion) {
      throw ConfigError("phase layout convention " +
                        std::to_string(layout.convention_version) + " is not supported");
    }
    auto values = doc.at("phases").get<std::vector<double>>();
    if (values.size() != layout.layer_count * layout.ports * layout.ports) {
      throw ConfigError("phase count does not match layout descriptor");
    }
    return {PhaseVector(std::move(values)), layout};
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed phase vector document: ") + e.what());
  }
}

}  // namespace bayesmesh
