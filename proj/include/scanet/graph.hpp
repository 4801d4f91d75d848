#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "scanet/tensor.hpp"

namespace scanet {

using NodeId = int32_t;

// Closed op set. Every op has a hand-written forward kernel and a VJP builder
// that expresses its gradient with ops from this same set, so gradients of
// gradients (needed for the critic's gradient penalty) come out of the same
// machinery. Ops below the "internal" line are emitted by VJP builders only.
enum class Op : uint8_t {
  kInput,
  kParam,
  kConst,
  kAdd,
  kMul,
  kDiv,
  kMatMul,
  kConv1d,
  kBiasAdd,
  kRelu,
  kSigmoid,
  kSoftmax,
  kConcat,
  kSlice,
  kReshape,
  kMean,
  kSquare,
  kSqrt,
  kAbs,
  kBce,
  // internal: gradient kernels
  kConvDataGrad,
  kConvWeightGrad,
  kBiasGrad,
  kStep,      // d(relu)/dx; derivative defined as zero everywhere
  kSign,      // d(abs)/dx; derivative defined as zero everywhere
  kSoftmaxGrad,  // no second-order rule
  kBceGrad,      // no second-order rule
};

const char* op_name(Op op);

struct Node {
  Op op = Op::kConst;
  Shape shape;
  std::vector<NodeId> inputs;
  std::string name;
  // attributes
  int axis = 0;                 // bias_add/bias_grad/softmax/concat/slice
  int64_t start = 0;            // slice
  int64_t length = 0;           // slice
  int dilation = 1;             // conv family
  int kernel = 0;               // conv_weight_grad result kernel size
  bool trans_a = false;         // matmul
  bool trans_b = false;
  bool reduce_batch = false;    // matmul: sum the batch dimension away
  // state
  Tensor value;                 // last evaluated value (inputs: bound tensor)
  std::shared_ptr<Tensor> param;  // kParam storage, shared with the optimizer
  bool bound = false;
};

// Gradient tensors keyed by parameter node id.
using GradientMap = std::unordered_map<NodeId, Tensor>;

// Record of differentiable operations over tensors. Nodes are appended in
// topological order and evaluated in that order; an instance is confined to
// one thread at a time. Parameter storage is shared (the optimizer mutates it
// between evaluations), so nothing is cached across eval calls.
class Graph {
 public:
  // leaves
  NodeId input(Shape shape, std::string name = {});
  NodeId parameter(std::shared_ptr<Tensor> storage, std::string name);
  NodeId constant(Tensor value, std::string name = {});
  NodeId constant(double scalar_value);

  // ops; add/mul/div accept equal shapes or a 1-element operand on either side
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  // 2-D [R,C] and batched 3-D [N,R,C] operands; a 2-D operand broadcasts over
  // the batch. reduce_batch sums the batch dimension out of a 3-D product.
  NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false,
                bool reduce_batch = false);
  // x [N,Cin,L], w [Cout,Cin,K] -> [N,Cout,L]; stride 1, zero "same" padding,
  // cross-correlation convention, left pad = floor((K-1)*dilation/2).
  NodeId conv1d(NodeId x, NodeId w, int dilation = 1);
  NodeId bias_add(NodeId x, NodeId b, int axis);
  NodeId relu(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId softmax(NodeId x, int axis);
  NodeId concat(const std::vector<NodeId>& xs, int axis);
  NodeId slice(NodeId x, int axis, int64_t start, int64_t length);
  NodeId reshape(NodeId x, Shape shape);
  NodeId mean(NodeId x);  // over all elements -> scalar
  NodeId square(NodeId x);
  NodeId sqrt(NodeId x);
  NodeId abs(NodeId x);
  // mean of -[o*ln(p) + (1-o)*ln(1-p)] with p clamped to [1e-7, 1-1e-7];
  // targets must be exactly 0 or 1. Not differentiable w.r.t. o.
  NodeId bce(NodeId p, NodeId o);

  // conveniences built from the set above
  NodeId scale(NodeId x, double c);
  NodeId sub(NodeId a, NodeId b);
  NodeId sum(NodeId x);  // scale(mean(x), size)

  // evaluation
  void bind(NodeId input_id, Tensor value);
  const Tensor& eval(NodeId id);
  void eval_many(std::span<const NodeId> ids);
  const Tensor& value(NodeId id) const;

  // reverse-mode differentiation; output must be a 1-element tensor
  GradientMap backward(NodeId scalar_output);
  // Gradient of the output w.r.t. a bound input, recorded on the graph so it
  // can be differentiated again (the WGAN-GP second-order path).
  NodeId input_gradient(NodeId scalar_output, NodeId input_id);
  std::vector<NodeId> gradient_nodes(NodeId scalar_output, std::span<const NodeId> wrt);

  // Test oracle: worst relative error between backward() and central finite
  // differences of the output w.r.t. every element of `wrt`.
  double finite_difference_check(NodeId scalar_output, NodeId wrt, double eps,
                                 double rel_floor = 1e-6);

  const std::vector<NodeId>& parameters() const { return params_; }
  // by value: nodes_ reallocates as the graph grows, so no references out
  Shape shape_of(NodeId id) const { return node(id).shape; }
  const Node& node(NodeId id) const;
  int64_t node_count() const { return static_cast<int64_t>(nodes_.size()); }
  std::string describe(NodeId id) const;

 private:
  Node& node_mut(NodeId id) { return nodes_[static_cast<size_t>(id)]; }
  NodeId push(Node n);
  NodeId zeros_like(const Shape& shape);
  NodeId ones_like(const Shape& shape);
  // Reduce a gradient to a 1-element shape when the forward operand was scalar.
  NodeId reduce_to_scalar_if(Shape target, NodeId g);
  void emit_vjps(NodeId id, std::unordered_map<NodeId, NodeId>& adjoint);
  void accumulate(std::unordered_map<NodeId, NodeId>& adjoint, NodeId target, NodeId g);
  const std::unordered_map<NodeId, NodeId>& adjoints_for(NodeId output);
  const std::vector<NodeId>& plan_for(NodeId id);
  void eval_node(NodeId id);

  std::vector<Node> nodes_;
  std::vector<NodeId> params_;
  std::map<NodeId, std::unordered_map<NodeId, NodeId>> adjoint_cache_;
  std::map<NodeId, std::vector<NodeId>> plan_cache_;
  std::map<std::pair<int, int64_t>, NodeId> const_cache_;  // (kind, bits) -> node
};

}  // namespace scanet
