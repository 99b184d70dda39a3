#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "simofdm/wavemath/linalg.hpp"

namespace simofdm::wave {

/// A named real parameter array. Phases are stored as column vectors and
/// enter the graph only through e^{j theta}, so the unit-modulus constraint
/// holds for any value.
struct Parameter {
  std::string name;
  RMat value;
  bool trainable = true;
  bool phase = false;
};

/// Ordered, address-stable parameter storage.
class ParameterSet {
 public:
  Parameter& add(std::string name, RMat value, bool phase = false);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  bool operator==(const ParameterSet& other) const;

 private:
  std::map<std::string, Parameter> params_;
};

using GradientMap = std::map<std::string, RMat>;
using NodeId = std::size_t;

enum class Op : std::uint8_t {
  kParam,
  kConstReal,
  kConstComplex,
  kMatMul,
  kPhaseLeft,
  kPhaseRight,
  kAdd,
  kAffine,
  kRelu,
  kSigmoid,
  kBatchNorm,
  kPowerScale,
  kPack,
  kConcat,
  kBce,
  kSumRealPart,
  kSumAbs2,
};

const char* op_name(Op op);

/// Running statistics of one batch-norm layer (row vectors, 1 x features).
struct BatchNormStats {
  RMat mean;
  RMat var;
  bool initialized = false;
};

/// Recorded forward computation over the fixed EMNN vocabulary.
///
/// Nodes are appended in topological order (inputs always precede the
/// node). forward() evaluates every node from the current parameter values,
/// so the same graph can be re-evaluated after perturbing a parameter.
/// Real activations are batch x features; complex signals are
/// features x batch so the wave-domain chain is a plain left product.
class Graph {
 public:
  /// Leaf bound to a parameter. One node per parameter; repeated calls
  /// return the same node so gradients accumulate on a single leaf.
  NodeId param(const Parameter& p);
  NodeId constant(RMat value);
  NodeId constant(CMat value);
  /// Constant that references external storage which must outlive the graph.
  NodeId constant_ref(const CMat& value);

  NodeId matmul(NodeId a, NodeId b);
  /// diag(e^{j theta}) * a
  NodeId phase_left(NodeId theta, NodeId a);
  /// a * diag(e^{j theta})
  NodeId phase_right(NodeId a, NodeId theta);
  NodeId add(NodeId a, NodeId b);
  /// x * w^T + b, with w: out x in and b: 1 x out
  NodeId affine(NodeId x, NodeId w, NodeId b);
  NodeId relu(NodeId x);
  NodeId sigmoid(NodeId x);
  /// Training mode normalises with batch statistics; evaluation mode uses
  /// `running` (mean 0 / var 1 when not yet initialised).
  NodeId batch_norm(NodeId x, NodeId gamma, NodeId beta, const BatchNormStats* running,
                    bool training, double eps);
  /// Rescales each row block of width cols/blocks to the target power in
  /// targets(row, block). Throws DegenerateInputError on an all-zero block.
  NodeId power_scale(NodeId x, RMat targets);
  /// Real batch x D -> complex count x batch, reading (re, im) pairs from
  /// column `offset`.
  NodeId pack(NodeId x, int offset, int count);
  /// Complex parts (A_k x batch) -> real batch x sum(2 A_k), (re, im) interleaved.
  NodeId concat(const std::vector<NodeId>& parts);
  /// Mean-over-batch binary cross-entropy, natural log, soft clamped to
  /// [p_min, 1 - p_min].
  NodeId bce(NodeId soft, RMat targets, double p_min);
  NodeId sum_real_part(NodeId x);
  NodeId sum_abs2(NodeId x);

  void forward();
  /// Gradients of the real scalar `loss` with respect to every trainable
  /// parameter leaf. Non-trainable leaves and constants are absent.
  GradientMap backward(NodeId loss) const;

  bool forwarded() const { return forwarded_; }
  std::size_t size() const { return nodes_.size(); }
  Op op(NodeId id) const { return nodes_.at(id).op; }
  bool is_complex(NodeId id) const { return nodes_.at(id).is_complex; }
  int rows(NodeId id) const { return nodes_.at(id).rows; }
  int cols(NodeId id) const { return nodes_.at(id).cols; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).in; }

  const RMat& real_value(NodeId id) const;
  const CMat& complex_value(NodeId id) const;
  double scalar(NodeId id) const;

  /// Batch statistics computed by a training-mode batch-norm node.
  const RMat& batch_mean(NodeId id) const;
  const RMat& batch_var(NodeId id) const;

 private:
  struct Node {
    Op op;
    std::vector<NodeId> in;
    bool is_complex = false;
    bool needs_grad = false;
    int rows = 0;
    int cols = 0;
    RMat r;
    CMat c;
    const Parameter* param = nullptr;
    const CMat* cref = nullptr;
    // op-specific data
    RMat aux;         // bce targets, power targets, batch-norm xhat
    RMat aux2;        // batch-norm batch mean / power-scale norms
    RMat aux3;        // batch-norm inverse std / batch var
    const BatchNormStats* running = nullptr;
    bool training = false;
    double eps = 0.0;
    int offset = 0;
    int count = 0;
  };

  NodeId push(Node node);
  const Node& node(NodeId id) const;
  void eval(Node& n);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, NodeId> param_nodes_;
  bool forwarded_ = false;
};

}  // namespace simofdm::wave
