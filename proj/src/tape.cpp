#include "bayesmesh/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bayesmesh/errors.hpp"

namespace bayesmesh {

using cplx = GradientTape::cplx;

GradientTape::GradientTape(std::size_t batch) { reset(batch); }

void GradientTape::reset(std::size_t batch) {
  if (batch == 0) throw InvalidArgument("GradientTape: batch must be non-empty");
  batch_ = batch;
  nodes_.clear();
  values_.clear();
  adjoints_.clear();
  ops_.clear();
  extra_.clear();
  gather_index_.clear();
  for (const auto& [param, node] : leaves_) leaf_of_param_[param] = -1;
  leaves_.clear();
}

GradientTape::NodeId GradientTape::new_node(std::size_t width) {
  const auto id = static_cast<NodeId>(nodes_.size());
  nodes_.push_back({static_cast<std::uint32_t>(values_.size()),
                    static_cast<std::uint32_t>(width)});
  values_.resize(values_.size() + width);
  return id;
}

GradientTape::NodeId GradientTape::phase_leaf(std::size_t param, double value) {
  if (param >= leaf_of_param_.size()) leaf_of_param_.resize(param + 1, -1);
  if (leaf_of_param_[param] >= 0) {
    throw InvalidArgument("GradientTape: phase " + std::to_string(param) +
                          " registered twice");
  }
  const NodeId id = new_node(1);
  *vals(id) = value;
  leaf_of_param_[param] = id;
  leaves_.emplace_back(param, id);
  return id;
}

GradientTape::NodeId GradientTape::constant(std::span<const cplx> values) {
  if (values.size() != 1 && values.size() != batch_) {
    throw ShapeError("GradientTape::constant: width must be 1 or the batch size");
  }
  const NodeId id = new_node(values.size());
  std::copy(values.begin(), values.end(), vals(id));
  return id;
}

GradientTape::NodeId GradientTape::unary(OpKind kind, NodeId a, double param,
                                         std::size_t width) {
  const NodeId out = new_node(width);
  ops_.push_back({kind, out, a, 0, param, 0, 0});
  forward_op(ops_.back());
  return out;
}

GradientTape::NodeId GradientTape::binary(OpKind kind, NodeId a, NodeId b) {
  const std::size_t wa = nodes_[a].width;
  const std::size_t wb = nodes_[b].width;
  if (wa != wb && wa != 1 && wb != 1) throw ShapeError("GradientTape: incompatible widths");
  const NodeId out = new_node(std::max(wa, wb));
  ops_.push_back({kind, out, a, b, 0.0, 0, 0});
  forward_op(ops_.back());
  return out;
}

GradientTape::NodeId GradientTape::cis(NodeId phase, double scale) {
  return unary(OpKind::Cis, phase, scale, 1);
}
GradientTape::NodeId GradientTape::cos(NodeId phase, double scale) {
  return unary(OpKind::Cos, phase, scale, 1);
}
GradientTape::NodeId GradientTape::sin(NodeId phase, double scale) {
  return unary(OpKind::Sin, phase, scale, 1);
}
GradientTape::NodeId GradientTape::add(NodeId a, NodeId b) { return binary(OpKind::Add, a, b); }
GradientTape::NodeId GradientTape::mul(NodeId a, NodeId b) { return binary(OpKind::Mul, a, b); }
GradientTape::NodeId GradientTape::neg(NodeId a) {
  return unary(OpKind::Neg, a, 0.0, nodes_[a].width);
}
GradientTape::NodeId GradientTape::scale(NodeId a, double k) {
  return unary(OpKind::Scale, a, k, nodes_[a].width);
}
GradientTape::NodeId GradientTape::abs(NodeId a) {
  return unary(OpKind::Abs, a, 0.0, nodes_[a].width);
}
GradientTape::NodeId GradientTape::abs2(NodeId a) {
  return unary(OpKind::Abs2, a, 0.0, nodes_[a].width);
}
GradientTape::NodeId GradientTape::log(NodeId a, double floor) {
  return unary(OpKind::Log, a, floor, nodes_[a].width);
}
GradientTape::NodeId GradientTape::mean(NodeId a) { return unary(OpKind::Mean, a, 0.0, 1); }

std::vector<GradientTape::NodeId> GradientTape::softmax(std::span<const NodeId> logits) {
  if (logits.empty()) throw ShapeError("GradientTape::softmax: no inputs");
  for (NodeId id : logits) {
    if (nodes_[id].width != batch_) throw ShapeError("GradientTape::softmax: width must equal batch");
  }
  std::vector<NodeId> outs;
  outs.reserve(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) outs.push_back(new_node(batch_));
  const auto begin = static_cast<std::uint32_t>(extra_.size());
  extra_.insert(extra_.end(), logits.begin(), logits.end());
  extra_.insert(extra_.end(), outs.begin(), outs.end());
  ops_.push_back({OpKind::Softmax, outs.front(), 0, 0, 0.0, begin,
                  static_cast<std::uint32_t>(logits.size())});
  forward_op(ops_.back());
  return outs;
}

GradientTape::NodeId GradientTape::gather(std::span<const NodeId> rows,
                                          std::span<const std::size_t> index) {
  if (index.size() != batch_) throw ShapeError("GradientTape::gather: one index per sample");
  for (NodeId id : rows) {
    if (nodes_[id].width != batch_) throw ShapeError("GradientTape::gather: width must equal batch");
  }
  for (std::size_t i : index) {
    if (i >= rows.size()) throw InvalidArgument("GradientTape::gather: index out of range");
  }
  const NodeId out = new_node(batch_);
  const auto begin = static_cast<std::uint32_t>(extra_.size());
  extra_.insert(extra_.end(), rows.begin(), rows.end());
  const auto index_begin = static_cast<NodeId>(gather_index_.size());
  gather_index_.insert(gather_index_.end(), index.begin(), index.end());
  ops_.push_back({OpKind::Gather, out, 0, index_begin, 0.0, begin,
                  static_cast<std::uint32_t>(rows.size())});
  forward_op(ops_.back());
  return out;
}

std::span<const cplx> GradientTape::value(NodeId id) const {
  return {vals(id), nodes_[id].width};
}

void GradientTape::forward_op(const Op& op) {
  cplx* out = vals(op.out);
  const std::size_t w = nodes_[op.out].width;
  switch (op.kind) {
    case OpKind::Cis: {
      const double t = op.param * vals(op.a)->real();
      out[0] = cplx(std::cos(t), std::sin(t));
      break;
    }
    case OpKind::Cos:
      out[0] = std::cos(op.param * vals(op.a)->real());
      break;
    case OpKind::Sin:
      out[0] = std::sin(op.param * vals(op.a)->real());
      break;
    case OpKind::Add:
    case OpKind::Mul: {
      const cplx* a = vals(op.a);
      const cplx* b = vals(op.b);
      const std::size_t sa = nodes_[op.a].width == 1 ? 0 : 1;
      const std::size_t sb = nodes_[op.b].width == 1 ? 0 : 1;
      if (op.kind == OpKind::Add) {
        for (std::size_t j = 0; j < w; ++j) out[j] = a[j * sa] + b[j * sb];
      } else {
        for (std::size_t j = 0; j < w; ++j) out[j] = a[j * sa] * b[j * sb];
      }
      break;
    }
    case OpKind::Neg: {
      const cplx* a = vals(op.a);
      for (std::size_t j = 0; j < w; ++j) out[j] = -a[j];
      break;
    }
    case OpKind::Scale: {
      const cplx* a = vals(op.a);
      for (std::size_t j = 0; j < w; ++j) out[j] = op.param * a[j];
      break;
    }
    case OpKind::Abs: {
      const cplx* a = vals(op.a);
      for (std::size_t j = 0; j < w; ++j) out[j] = std::abs(a[j]);
      break;
    }
    case OpKind::Abs2: {
      const cplx* a = vals(op.a);
      for (std::size_t j = 0; j < w; ++j) out[j] = std::norm(a[j]);
      break;
    }
    case OpKind::Log: {
      const cplx* a = vals(op.a);
      for (std::size_t j = 0; j < w; ++j) out[j] = std::log(std::max(a[j].real(), op.param));
      break;
    }
    case OpKind::Mean: {
      const cplx* a = vals(op.a);
      const std::size_t wa = nodes_[op.a].width;
      cplx s = 0.0;
      for (std::size_t j = 0; j < wa; ++j) s += a[j];
      out[0] = s / static_cast<double>(wa);
      break;
    }
    case OpKind::Softmax: {
      const std::size_t k = op.extra_count;
      const NodeId* in = extra_.data() + op.extra_begin;
      const NodeId* outs = in + k;
      for (std::size_t j = 0; j < batch_; ++j) {
        double mx = vals(in[0])[j].real();
        for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, vals(in[c])[j].real());
        double z = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
          const double e = std::exp(vals(in[c])[j].real() - mx);
          vals(outs[c])[j] = e;
          z += e;
        }
        for (std::size_t c = 0; c < k; ++c) vals(outs[c])[j] /= z;
      }
      break;
    }
    case OpKind::Gather: {
      const NodeId* rows = extra_.data() + op.extra_begin;
      const std::size_t* idx = gather_index_.data() + op.b;
      for (std::size_t j = 0; j < batch_; ++j) out[j] = vals(rows[idx[j]])[j];
      break;
    }
  }
}

void GradientTape::replay() {
  for (const Op& op : ops_) forward_op(op);
}

void GradientTape::backward(NodeId root, std::span<double> param_grad) {
  if (nodes_.at(root).width != 1) throw ShapeError("GradientTape::backward: root must be scalar");
  adjoints_.assign(values_.size(), cplx(0.0, 0.0));
  *adjs(root) = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) backward_op(*it);
  for (const auto& [param, node] : leaves_) {
    if (param >= param_grad.size()) {
      throw ShapeError("GradientTape::backward: gradient buffer too small");
    }
    param_grad[param] += adjs(node)->real();
  }
}

void GradientTape::backward_op(const Op& op) {
  const cplx* g = adjs(op.out);
  const std::size_t w = nodes_[op.out].width;
  switch (op.kind) {
    case OpKind::Cis: {
      // d/dphi exp(i s phi) = i s z
      const cplx z = *vals(op.out);
      const cplx dz = cplx(0.0, op.param) * z;
      *adjs(op.a) += (std::conj(g[0]) * dz).real();
      break;
    }
    case OpKind::Cos: {
      const double t = op.param * vals(op.a)->real();
      *adjs(op.a) += -op.param * std::sin(t) * g[0].real();
      break;
    }
    case OpKind::Sin: {
      const double t = op.param * vals(op.a)->real();
      *adjs(op.a) += op.param * std::cos(t) * g[0].real();
      break;
    }
    case OpKind::Add: {
      for (NodeId in : {op.a, op.b}) {
        cplx* ga = adjs(in);
        if (nodes_[in].width == 1) {
          cplx s = 0.0;
          for (std::size_t j = 0; j < w; ++j) s += g[j];
          ga[0] += s;
        } else {
          for (std::size_t j = 0; j < w; ++j) ga[j] += g[j];
        }
      }
      break;
    }
    case OpKind::Mul: {
      const cplx* a = vals(op.a);
      const cplx* b = vals(op.b);
      const std::size_t sa = nodes_[op.a].width == 1 ? 0 : 1;
      const std::size_t sb = nodes_[op.b].width == 1 ? 0 : 1;
      cplx* ga = adjs(op.a);
      cplx* gb = adjs(op.b);
      for (std::size_t j = 0; j < w; ++j) {
        ga[j * sa] += g[j] * std::conj(b[j * sb]);
        gb[j * sb] += g[j] * std::conj(a[j * sa]);
      }
      break;
    }
    case OpKind::Neg: {
      cplx* ga = adjs(op.a);
      for (std::size_t j = 0; j < w; ++j) ga[j] -= g[j];
      break;
    }
    case OpKind::Scale: {
      cplx* ga = adjs(op.a);
      for (std::size_t j = 0; j < w; ++j) ga[j] += op.param * g[j];
      break;
    }
    case OpKind::Abs: {
      const cplx* a = vals(op.a);
      const cplx* r = vals(op.out);
      cplx* ga = adjs(op.a);
      for (std::size_t j = 0; j < w; ++j) {
        if (r[j].real() > 0.0) ga[j] += g[j].real() * a[j] / r[j].real();
      }
      break;
    }
    case OpKind::Abs2: {
      const cplx* a = vals(op.a);
      cplx* ga = adjs(op.a);
      for (std::size_t j = 0; j < w; ++j) ga[j] += 2.0 * g[j].real() * a[j];
      break;
    }
    case OpKind::Log: {
      const cplx* a = vals(op.a);
      cplx* ga = adjs(op.a);
      for (std::size_t j = 0; j < w; ++j) {
        if (a[j].real() > op.param) ga[j] += g[j].real() / a[j].real();
      }
      break;
    }
    case OpKind::Mean: {
      cplx* ga = adjs(op.a);
      const std::size_t wa = nodes_[op.a].width;
      const cplx share = g[0] / static_cast<double>(wa);
      for (std::size_t j = 0; j < wa; ++j) ga[j] += share;
      break;
    }
    case OpKind::Softmax: {
      const std::size_t k = op.extra_count;
      const NodeId* in = extra_.data() + op.extra_begin;
      const NodeId* outs = in + k;
      for (std::size_t j = 0; j < batch_; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
          dot += adjs(outs[c])[j].real() * vals(outs[c])[j].real();
        }
        for (std::size_t c = 0; c < k; ++c) {
          const double p = vals(outs[c])[j].real();
          adjs(in[c])[j] += p * (adjs(outs[c])[j].real() - dot);
        }
      }
      break;
    }
    case OpKind::Gather: {
      const NodeId* rows = extra_.data() + op.extra_begin;
      const std::size_t* idx = gather_index_.data() + op.b;
      for (std::size_t j = 0; j < batch_; ++j) adjs(rows[idx[j]])[j] += g[j];
      break;
    }
  }
}

}  // namespace bayesmesh
