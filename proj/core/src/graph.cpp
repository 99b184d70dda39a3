#include "simofdm/wavemath/graph.hpp"

#include <cmath>
#include <string>

#include "simofdm/error.hpp"

namespace simofdm::wave {

namespace {

std::string shape(int r, int c) { return std::to_string(r) + "x" + std::to_string(c); }

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// ParameterSet

Parameter& ParameterSet::add(std::string name, RMat value, bool phase) {
  auto [it, inserted] = params_.try_emplace(name);
  if (!inserted) throw ConfigError("parameter '" + name + "' already exists");
  it->second.name = std::move(name);
  it->second.value = std::move(value);
  it->second.phase = phase;
  return it->second;
}

Parameter& ParameterSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

const Parameter& ParameterSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

bool ParameterSet::operator==(const ParameterSet& other) const {
  if (params_.size() != other.params_.size()) return false;
  auto a = params_.begin();
  auto b = other.params_.begin();
  for (; a != params_.end(); ++a, ++b) {
    if (a->first != b->first || a->second.phase != b->second.phase) return false;
    const RMat& x = a->second.value;
    const RMat& y = b->second.value;
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if (x.data()[i] != y.data()[i]) return false;
    }
  }
  return true;
}

const char* op_name(Op op) {
  switch (op) {
    case Op::kParam: return "param";
    case Op::kConstReal: return "const_real";
    case Op::kConstComplex: return "const_complex";
    case Op::kMatMul: return "matmul";
    case Op::kPhaseLeft: return "phase_left";
    case Op::kPhaseRight: return "phase_right";
    case Op::kAdd: return "add";
    case Op::kAffine: return "affine";
    case Op::kRelu: return "relu";
    case Op::kSigmoid: return "sigmoid";
    case Op::kBatchNorm: return "batch_norm";
    case Op::kPowerScale: return "power_scale";
    case Op::kPack: return "pack";
    case Op::kConcat: return "concat";
    case Op::kBce: return "bce";
    case Op::kSumRealPart: return "sum_real_part";
    case Op::kSumAbs2: return "sum_abs2";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Graph construction

NodeId Graph::push(Node n) {
  for (NodeId i : n.in) {
    if (i >= nodes_.size()) throw ConfigError("graph: input node does not exist");
    if (nodes_[i].needs_grad) n.needs_grad = true;
  }
  nodes_.push_back(std::move(n));
  forwarded_ = false;
  return nodes_.size() - 1;
}

const Graph::Node& Graph::node(NodeId id) const {
  if (id >= nodes_.size()) throw ConfigError("graph: node id out of range");
  return nodes_[id];
}

NodeId Graph::param(const Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return it->second;
  Node n{.op = Op::kParam};
  n.param = &p;
  n.rows = static_cast<int>(p.value.rows());
  n.cols = static_cast<int>(p.value.cols());
  n.needs_grad = p.trainable;
  NodeId id = push(std::move(n));
  param_nodes_.emplace(&p, id);
  return id;
}

NodeId Graph::constant(RMat value) {
  Node n{.op = Op::kConstReal};
  n.rows = static_cast<int>(value.rows());
  n.cols = static_cast<int>(value.cols());
  n.r = std::move(value);
  return push(std::move(n));
}

NodeId Graph::constant(CMat value) {
  Node n{.op = Op::kConstComplex};
  n.is_complex = true;
  n.rows = static_cast<int>(value.rows());
  n.cols = static_cast<int>(value.cols());
  n.c = std::move(value);
  return push(std::move(n));
}

NodeId Graph::constant_ref(const CMat& value) {
  Node n{.op = Op::kConstComplex};
  n.is_complex = true;
  n.rows = static_cast<int>(value.rows());
  n.cols = static_cast<int>(value.cols());
  n.cref = &value;
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const Node& x = node(a);
  const Node& y = node(b);
  if (!x.is_complex || !y.is_complex) throw ConfigError("graph matmul: complex operands required");
  if (x.cols != y.rows) {
    throw ConfigError("graph matmul: dimension mismatch " + shape(x.rows, x.cols) + " * " +
                      shape(y.rows, y.cols));
  }
  Node n{.op = Op::kMatMul, .in = {a, b}, .is_complex = true};
  n.rows = x.rows;
  n.cols = y.cols;
  return push(std::move(n));
}

NodeId Graph::phase_left(NodeId theta, NodeId a) {
  const Node& t = node(theta);
  const Node& x = node(a);
  if (t.is_complex || t.cols != 1 || !x.is_complex || t.rows != x.rows) {
    throw ConfigError("graph phase_left: phases " + shape(t.rows, t.cols) +
                      " incompatible with signal " + shape(x.rows, x.cols));
  }
  Node n{.op = Op::kPhaseLeft, .in = {theta, a}, .is_complex = true};
  n.rows = x.rows;
  n.cols = x.cols;
  return push(std::move(n));
}

NodeId Graph::phase_right(NodeId a, NodeId theta) {
  const Node& x = node(a);
  const Node& t = node(theta);
  if (t.is_complex || t.cols != 1 || !x.is_complex || t.rows != x.cols) {
    throw ConfigError("graph phase_right: phases " + shape(t.rows, t.cols) +
                      " incompatible with signal " + shape(x.rows, x.cols));
  }
  Node n{.op = Op::kPhaseRight, .in = {a, theta}, .is_complex = true};
  n.rows = x.rows;
  n.cols = x.cols;
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  const Node& x = node(a);
  const Node& y = node(b);
  if (x.is_complex != y.is_complex || x.rows != y.rows || x.cols != y.cols) {
    throw ConfigError("graph add: operand mismatch " + shape(x.rows, x.cols) + " + " +
                      shape(y.rows, y.cols));
  }
  Node n{.op = Op::kAdd, .in = {a, b}, .is_complex = x.is_complex};
  n.rows = x.rows;
  n.cols = x.cols;
  return push(std::move(n));
}

NodeId Graph::affine(NodeId x, NodeId w, NodeId b) {
  const Node& xn = node(x);
  const Node& wn = node(w);
  const Node& bn = node(b);
  if (xn.is_complex || wn.is_complex || bn.is_complex || wn.cols != xn.cols || bn.rows != 1 ||
      bn.cols != wn.rows) {
    throw ConfigError("graph affine: input " + shape(xn.rows, xn.cols) + ", weight " +
                      shape(wn.rows, wn.cols) + ", bias " + shape(bn.rows, bn.cols));
  }
  Node n{.op = Op::kAffine, .in = {x, w, b}};
  n.rows = xn.rows;
  n.cols = wn.rows;
  return push(std::move(n));
}

NodeId Graph::relu(NodeId x) {
  const Node& xn = node(x);
  if (xn.is_complex) throw ConfigError("graph relu: real input required");
  Node n{.op = Op::kRelu, .in = {x}};
  n.rows = xn.rows;
  n.cols = xn.cols;
  return push(std::move(n));
}

NodeId Graph::sigmoid(NodeId x) {
  const Node& xn = node(x);
  if (xn.is_complex) throw ConfigError("graph sigmoid: real input required");
  Node n{.op = Op::kSigmoid, .in = {x}};
  n.rows = xn.rows;
  n.cols = xn.cols;
  return push(std::move(n));
}

NodeId Graph::batch_norm(NodeId x, NodeId gamma, NodeId beta, const BatchNormStats* running,
                         bool training, double eps) {
  const Node& xn = node(x);
  const Node& g = node(gamma);
  const Node& b = node(beta);
  if (xn.is_complex || g.rows != 1 || g.cols != xn.cols || b.rows != 1 || b.cols != xn.cols) {
    throw ConfigError("graph batch_norm: input " + shape(xn.rows, xn.cols) + ", gamma " +
                      shape(g.rows, g.cols) + ", beta " + shape(b.rows, b.cols));
  }
  if (!training && running == nullptr) {
    throw ConfigError("graph batch_norm: evaluation mode requires running statistics");
  }
  Node n{.op = Op::kBatchNorm, .in = {x, gamma, beta}};
  n.rows = xn.rows;
  n.cols = xn.cols;
  n.running = running;
  n.training = training;
  n.eps = eps;
  return push(std::move(n));
}

NodeId Graph::power_scale(NodeId x, RMat targets) {
  const Node& xn = node(x);
  if (xn.is_complex || targets.rows() != xn.rows || targets.cols() < 1 ||
      xn.cols % targets.cols() != 0) {
    throw ConfigError("graph power_scale: input " + shape(xn.rows, xn.cols) + ", targets " +
                      shape(static_cast<int>(targets.rows()), static_cast<int>(targets.cols())));
  }
  Node n{.op = Op::kPowerScale, .in = {x}};
  n.rows = xn.rows;
  n.cols = xn.cols;
  n.aux = std::move(targets);
  return push(std::move(n));
}

NodeId Graph::pack(NodeId x, int offset, int count) {
  const Node& xn = node(x);
  if (xn.is_complex || offset < 0 || count < 1 || offset + 2 * count > xn.cols) {
    throw ConfigError("graph pack: cannot read " + std::to_string(count) +
                      " complex values at offset " + std::to_string(offset) + " from " +
                      shape(xn.rows, xn.cols));
  }
  Node n{.op = Op::kPack, .in = {x}, .is_complex = true};
  n.rows = count;
  n.cols = xn.rows;
  n.offset = offset;
  n.count = count;
  return push(std::move(n));
}

NodeId Graph::concat(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw ConfigError("graph concat: no inputs");
  int batch = node(parts.front()).cols;
  int width = 0;
  for (NodeId p : parts) {
    const Node& pn = node(p);
    if (!pn.is_complex || pn.cols != batch) throw ConfigError("graph concat: incompatible part");
    width += 2 * pn.rows;
  }
  Node n{.op = Op::kConcat, .in = parts};
  n.rows = batch;
  n.cols = width;
  return push(std::move(n));
}

NodeId Graph::bce(NodeId soft, RMat targets, double p_min) {
  const Node& s = node(soft);
  if (s.is_complex || targets.rows() != s.rows || targets.cols() != s.cols) {
    throw ConfigError("graph bce: soft bits " + shape(s.rows, s.cols) + " vs targets " +
                      shape(static_cast<int>(targets.rows()), static_cast<int>(targets.cols())));
  }
  Node n{.op = Op::kBce, .in = {soft}};
  n.rows = 1;
  n.cols = 1;
  n.aux = std::move(targets);
  n.eps = p_min;
  return push(std::move(n));
}

NodeId Graph::sum_real_part(NodeId x) {
  if (!node(x).is_complex) throw ConfigError("graph sum_real_part: complex input required");
  Node n{.op = Op::kSumRealPart, .in = {x}};
  n.rows = 1;
  n.cols = 1;
  return push(std::move(n));
}

NodeId Graph::sum_abs2(NodeId x) {
  if (!node(x).is_complex) throw ConfigError("graph sum_abs2: complex input required");
  Node n{.op = Op::kSumAbs2, .in = {x}};
  n.rows = 1;
  n.cols = 1;
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Values

const RMat& Graph::real_value(NodeId id) const {
  const Node& n = node(id);
  if (n.is_complex) throw StateError("graph: node is complex");
  if (n.op == Op::kParam) return n.param->value;
  if (!forwarded_ && n.op != Op::kConstReal) throw StateError("graph: forward has not run");
  return n.r;
}

const CMat& Graph::complex_value(NodeId id) const {
  const Node& n = node(id);
  if (!n.is_complex) throw StateError("graph: node is real");
  if (n.cref != nullptr) return *n.cref;
  if (!forwarded_ && n.op != Op::kConstComplex) throw StateError("graph: forward has not run");
  return n.c;
}

double Graph::scalar(NodeId id) const {
  const RMat& v = real_value(id);
  if (v.size() != 1) throw StateError("graph: node is not a scalar");
  return v(0, 0);
}

const RMat& Graph::batch_mean(NodeId id) const {
  const Node& n = node(id);
  if (n.op != Op::kBatchNorm || !n.training || !forwarded_) {
    throw StateError("graph: batch statistics unavailable");
  }
  return n.aux2;
}

const RMat& Graph::batch_var(NodeId id) const {
  const Node& n = node(id);
  if (n.op != Op::kBatchNorm || !n.training || !forwarded_) {
    throw StateError("graph: batch statistics unavailable");
  }
  return n.aux3;
}

// ---------------------------------------------------------------------------
// Forward

void Graph::forward() {
  forwarded_ = true;  // lets eval() read already computed inputs
  try {
    for (Node& n : nodes_) eval(n);
  } catch (...) {
    forwarded_ = false;
    throw;
  }
}

void Graph::eval(Node& n) {
  auto rv = [this](NodeId i) -> const RMat& { return real_value(i); };
  auto cv = [this](NodeId i) -> const CMat& { return complex_value(i); };

  switch (n.op) {
    case Op::kParam:
    case Op::kConstReal:
    case Op::kConstComplex:
      return;
    case Op::kMatMul:
      n.c.resize(n.rows, n.cols);
      n.c.noalias() = cv(n.in[0]) * cv(n.in[1]);
      return;
    case Op::kPhaseLeft: {
      const RMat& t = rv(n.in[0]);
      const CMat& a = cv(n.in[1]);
      n.c.resize(n.rows, n.cols);
      for (int r = 0; r < n.rows; ++r) n.c.row(r) = std::polar(1.0, t(r, 0)) * a.row(r);
      return;
    }
    case Op::kPhaseRight: {
      const CMat& a = cv(n.in[0]);
      const RMat& t = rv(n.in[1]);
      n.c.resize(n.rows, n.cols);
      for (int c = 0; c < n.cols; ++c) n.c.col(c) = a.col(c) * std::polar(1.0, t(c, 0));
      return;
    }
    case Op::kAdd:
      if (n.is_complex) {
        n.c = cv(n.in[0]) + cv(n.in[1]);
      } else {
        n.r = rv(n.in[0]) + rv(n.in[1]);
      }
      return;
    case Op::kAffine: {
      const RMat& x = rv(n.in[0]);
      const RMat& w = rv(n.in[1]);
      const RMat& b = rv(n.in[2]);
      n.r.resize(n.rows, n.cols);
      n.r.noalias() = x * w.transpose();
      n.r.rowwise() += b.row(0);
      return;
    }
    case Op::kRelu:
      // NaN passes through
      n.r = rv(n.in[0]).unaryExpr([](double v) { return v < 0.0 ? 0.0 : v; });
      return;
    case Op::kSigmoid:
      n.r = rv(n.in[0]).unaryExpr([](double v) { return stable_sigmoid(v); });
      return;
    case Op::kBatchNorm: {
      const RMat& x = rv(n.in[0]);
      const RMat& gamma = rv(n.in[1]);
      const RMat& beta = rv(n.in[2]);
      RMat mean;
      RMat var;
      if (n.training) {
        mean = x.colwise().mean();
        var = (x.rowwise() - mean.row(0)).array().square().colwise().mean().matrix();
        n.aux2 = mean;
        n.aux3 = var;
      } else if (n.running->initialized) {
        mean = n.running->mean;
        var = n.running->var;
      } else {
        mean = RMat::Zero(1, n.cols);
        var = RMat::Ones(1, n.cols);
      }
      RMat inv = (var.array() + n.eps).rsqrt().matrix();
      n.aux = (x.rowwise() - mean.row(0)).array().rowwise() * inv.row(0).array();
      n.r = (n.aux.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
      if (!n.training) n.aux3 = var;
      return;
    }
    case Op::kPowerScale: {
      const RMat& x = rv(n.in[0]);
      const int blocks = static_cast<int>(n.aux.cols());
      const int width = n.cols / blocks;
      n.r.resize(n.rows, n.cols);
      n.aux2.resize(n.rows, blocks);
      for (int b = 0; b < n.rows; ++b) {
        for (int k = 0; k < blocks; ++k) {
          auto seg = x.row(b).segment(k * width, width);
          const double norm2 = seg.squaredNorm();
          // non-finite input propagates so the caller can locate it
          if (norm2 == 0.0) {
            throw DegenerateInputError(static_cast<std::size_t>(b),
                                       "power control: sample " + std::to_string(b) + " has zero transmit signal");
          }
          n.aux2(b, k) = norm2;
          n.r.row(b).segment(k * width, width) = seg * std::sqrt(n.aux(b, k) / norm2);
        }
      }
      return;
    }
    case Op::kPack: {
      const RMat& x = rv(n.in[0]);
      n.c.resize(n.rows, n.cols);
      for (int b = 0; b < n.cols; ++b) {
        for (int a = 0; a < n.count; ++a) {
          n.c(a, b) = cdouble(x(b, n.offset + 2 * a), x(b, n.offset + 2 * a + 1));
        }
      }
      return;
    }
    case Op::kConcat: {
      n.r.resize(n.rows, n.cols);
      int off = 0;
      for (NodeId p : n.in) {
        const CMat& c = cv(p);
        for (int b = 0; b < n.rows; ++b) {
          for (Eigen::Index a = 0; a < c.rows(); ++a) {
            n.r(b, off + 2 * a) = c(a, b).real();
            n.r(b, off + 2 * a + 1) = c(a, b).imag();
          }
        }
        off += 2 * static_cast<int>(c.rows());
      }
      return;
    }
    case Op::kBce: {
      const RMat& s = rv(n.in[0]);
      const double lo = n.eps;
      const double hi = 1.0 - n.eps;
      double sum = 0.0;
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        for (Eigen::Index c = 0; c < s.cols(); ++c) {
          const double p = std::clamp(s(r, c), lo, hi);
          const double t = n.aux(r, c);
          // exact zero terms keep L == 0 when the soft bits equal the targets
          if (t != 0.0) sum += t * std::log(s(r, c) == 1.0 ? 1.0 : p);
          if (t != 1.0) sum += (1.0 - t) * std::log(s(r, c) == 0.0 ? 1.0 : 1.0 - p);
        }
      }
      n.r.resize(1, 1);
      n.r(0, 0) = -sum / static_cast<double>(s.rows());
      return;
    }
    case Op::kSumRealPart:
      n.r.resize(1, 1);
      n.r(0, 0) = cv(n.in[0]).real().sum();
      return;
    case Op::kSumAbs2:
      n.r.resize(1, 1);
      n.r(0, 0) = cv(n.in[0]).squaredNorm();
      return;
  }
}

// ---------------------------------------------------------------------------
// Backward
//
// Complex gradients use G = dL/dRe + j dL/dIm, so that dL = Re(conj(G) dZ).
// For Z = A B this gives G_A = G_Z B^H and G_B = A^H G_Z; for
// Z = e^{j theta} a it gives dL/dtheta = Im(G_Z conj(Z)).

GradientMap Graph::backward(NodeId loss) const {
  if (!forwarded_) throw StateError("graph: backward called before forward");
  const Node& ln = node(loss);
  if (ln.is_complex || ln.rows != 1 || ln.cols != 1) {
    throw StateError("graph: loss node must be a real scalar");
  }

  const std::size_t count = loss + 1;
  std::vector<RMat> gr(count);
  std::vector<CMat> gc(count);
  std::vector<bool> has(count, false);

  auto acc_r = [&](NodeId i, const RMat& g) {
    if (!nodes_[i].needs_grad) return;
    if (has[i]) {
      gr[i] += g;
    } else {
      gr[i] = g;
      has[i] = true;
    }
  };
  auto acc_c = [&](NodeId i, const CMat& g) {
    if (!nodes_[i].needs_grad) return;
    if (has[i]) {
      gc[i] += g;
    } else {
      gc[i] = g;
      has[i] = true;
    }
  };

  gr[loss] = RMat::Ones(1, 1);
  has[loss] = true;
  GradientMap out;

  for (std::size_t idx = count; idx-- > 0;) {
    if (!has[idx]) continue;
    const Node& n = nodes_[idx];
    switch (n.op) {
      case Op::kParam:
        if (n.param->trainable) out[n.param->name] = gr[idx];
        break;
      case Op::kConstReal:
      case Op::kConstComplex:
        break;
      case Op::kMatMul: {
        const CMat& g = gc[idx];
        if (nodes_[n.in[0]].needs_grad) acc_c(n.in[0], g * complex_value(n.in[1]).adjoint());
        if (nodes_[n.in[1]].needs_grad) acc_c(n.in[1], complex_value(n.in[0]).adjoint() * g);
        break;
      }
      case Op::kPhaseLeft: {
        const CMat& g = gc[idx];
        const RMat& t = real_value(n.in[0]);
        if (nodes_[n.in[0]].needs_grad) {
          RMat gt(n.rows, 1);
          for (int r = 0; r < n.rows; ++r) {
            gt(r, 0) = (g.row(r).array() * n.c.row(r).array().conjugate()).imag().sum();
          }
          acc_r(n.in[0], gt);
        }
        if (nodes_[n.in[1]].needs_grad) {
          CMat ga(n.rows, n.cols);
          for (int r = 0; r < n.rows; ++r) ga.row(r) = std::polar(1.0, -t(r, 0)) * g.row(r);
          acc_c(n.in[1], ga);
        }
        break;
      }
      case Op::kPhaseRight: {
        const CMat& g = gc[idx];
        const RMat& t = real_value(n.in[1]);
        if (nodes_[n.in[1]].needs_grad) {
          RMat gt(n.cols, 1);
          for (int c = 0; c < n.cols; ++c) {
            gt(c, 0) = (g.col(c).array() * n.c.col(c).array().conjugate()).imag().sum();
          }
          acc_r(n.in[1], gt);
        }
        if (nodes_[n.in[0]].needs_grad) {
          CMat ga(n.rows, n.cols);
          for (int c = 0; c < n.cols; ++c) ga.col(c) = g.col(c) * std::polar(1.0, -t(c, 0));
          acc_c(n.in[0], ga);
        }
        break;
      }
      case Op::kAdd:
        if (n.is_complex) {
          acc_c(n.in[0], gc[idx]);
          acc_c(n.in[1], gc[idx]);
        } else {
          acc_r(n.in[0], gr[idx]);
          acc_r(n.in[1], gr[idx]);
        }
        break;
      case Op::kAffine: {
        const RMat& g = gr[idx];
        if (nodes_[n.in[0]].needs_grad) acc_r(n.in[0], g * real_value(n.in[1]));
        if (nodes_[n.in[1]].needs_grad) acc_r(n.in[1], g.transpose() * real_value(n.in[0]));
        if (nodes_[n.in[2]].needs_grad) acc_r(n.in[2], g.colwise().sum());
        break;
      }
      case Op::kRelu: {
        const RMat& x = real_value(n.in[0]);
        acc_r(n.in[0], (x.array() > 0.0).select(gr[idx], 0.0));
        break;
      }
      case Op::kSigmoid:
        acc_r(n.in[0], (gr[idx].array() * n.r.array() * (1.0 - n.r.array())).matrix());
        break;
      case Op::kBatchNorm: {
        const RMat& g = gr[idx];
        const RMat& gamma = real_value(n.in[1]);
        const RMat& var = n.aux3;
        RMat inv = (var.array() + n.eps).rsqrt().matrix();
        if (nodes_[n.in[1]].needs_grad) {
          acc_r(n.in[1], (g.array() * n.aux.array()).colwise().sum().matrix());
        }
        if (nodes_[n.in[2]].needs_grad) acc_r(n.in[2], g.colwise().sum());
        if (nodes_[n.in[0]].needs_grad) {
          RMat gxhat = (g.array().rowwise() * gamma.row(0).array()).matrix();
          if (n.training) {
            const double batch = static_cast<double>(n.rows);
            RMat sum_g = gxhat.colwise().sum();
            RMat sum_gx = (gxhat.array() * n.aux.array()).colwise().sum().matrix();
            RMat gx = ((batch * gxhat.array()).rowwise() - sum_g.row(0).array() -
                       n.aux.array().rowwise() * sum_gx.row(0).array())
                          .rowwise() *
                      (inv.row(0).array() / batch);
            acc_r(n.in[0], gx);
          } else {
            acc_r(n.in[0], (gxhat.array().rowwise() * inv.row(0).array()).matrix());
          }
        }
        break;
      }
      case Op::kPowerScale: {
        const RMat& x = real_value(n.in[0]);
        const RMat& g = gr[idx];
        const int blocks = static_cast<int>(n.aux.cols());
        const int width = n.cols / blocks;
        RMat gx(n.rows, n.cols);
        for (int b = 0; b < n.rows; ++b) {
          for (int k = 0; k < blocks; ++k) {
            auto xs = x.row(b).segment(k * width, width);
            auto gs = g.row(b).segment(k * width, width);
            const double norm2 = n.aux2(b, k);
            const double s = std::sqrt(n.aux(b, k) / norm2);
            const double proj = gs.dot(xs) / norm2;
            gx.row(b).segment(k * width, width) = s * (gs - proj * xs);
          }
        }
        acc_r(n.in[0], gx);
        break;
      }
      case Op::kPack: {
        const CMat& g = gc[idx];
        const Node& src = nodes_[n.in[0]];
        RMat gx = RMat::Zero(src.rows, src.cols);
        for (int b = 0; b < n.cols; ++b) {
          for (int a = 0; a < n.count; ++a) {
            gx(b, n.offset + 2 * a) = g(a, b).real();
            gx(b, n.offset + 2 * a + 1) = g(a, b).imag();
          }
        }
        acc_r(n.in[0], gx);
        break;
      }
      case Op::kConcat: {
        const RMat& g = gr[idx];
        int off = 0;
        for (NodeId p : n.in) {
          const int rows = nodes_[p].rows;
          if (nodes_[p].needs_grad) {
            CMat gp(rows, n.rows);
            for (int b = 0; b < n.rows; ++b) {
              for (int a = 0; a < rows; ++a) {
                gp(a, b) = cdouble(g(b, off + 2 * a), g(b, off + 2 * a + 1));
              }
            }
            acc_c(p, gp);
          }
          off += 2 * rows;
        }
        break;
      }
      case Op::kBce: {
        const RMat& s = real_value(n.in[0]);
        const double scale = gr[idx](0, 0) / static_cast<double>(s.rows());
        const double lo = n.eps;
        const double hi = 1.0 - n.eps;
        RMat gs(s.rows(), s.cols());
        for (Eigen::Index r = 0; r < s.rows(); ++r) {
          for (Eigen::Index c = 0; c < s.cols(); ++c) {
            const double p = std::clamp(s(r, c), lo, hi);
            const double t = n.aux(r, c);
            gs(r, c) = -scale * (t / p - (1.0 - t) / (1.0 - p));
          }
        }
        acc_r(n.in[0], gs);
        break;
      }
      case Op::kSumRealPart: {
        const Node& src = nodes_[n.in[0]];
        acc_c(n.in[0], CMat::Constant(src.rows, src.cols, cdouble(gr[idx](0, 0), 0.0)));
        break;
      }
      case Op::kSumAbs2:
        acc_c(n.in[0], (2.0 * gr[idx](0, 0)) * complex_value(n.in[0]));
        break;
    }
  }
  return out;
}

}  // namespace simofdm::wave
