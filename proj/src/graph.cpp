#include "scanet/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace scanet {

const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kParam: return "param";
    case Op::kConst: return "const";
    case Op::kAdd: return "add";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kMatMul: return "matmul";
    case Op::kConv1d: return "conv1d";
    case Op::kBiasAdd: return "bias_add";
    case Op::kRelu: return "relu";
    case Op::kSigmoid: return "sigmoid";
    case Op::kSoftmax: return "softmax";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kReshape: return "reshape";
    case Op::kMean: return "mean";
    case Op::kSquare: return "square";
    case Op::kSqrt: return "sqrt";
    case Op::kAbs: return "abs";
    case Op::kBce: return "bce";
    case Op::kConvDataGrad: return "conv1d_data_grad";
    case Op::kConvWeightGrad: return "conv1d_weight_grad";
    case Op::kBiasGrad: return "bias_grad";
    case Op::kStep: return "step";
    case Op::kSign: return "sign";
    case Op::kSoftmaxGrad: return "softmax_grad";
    case Op::kBceGrad: return "bce_grad";
  }
  return "?";
}

namespace {

// (outer, len, inner) decomposition of `shape` around `axis`
struct AxisSplit {
  int64_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < static_cast<int>(shape.size()); ++i) {
    if (i < axis) s.outer *= shape[static_cast<size_t>(i)];
    else if (i == axis) s.len = shape[static_cast<size_t>(i)];
    else s.inner *= shape[static_cast<size_t>(i)];
  }
  return s;
}

int conv_pad_left(int kernel, int dilation) { return ((kernel - 1) * dilation) / 2; }

}  // namespace

const Node& Graph::node(NodeId id) const {
  if (id < 0 || id >= static_cast<NodeId>(nodes_.size())) {
    throw Error("invalid node id " + std::to_string(id));
  }
  return nodes_[static_cast<size_t>(id)];
}

std::string Graph::describe(NodeId id) const {
  const Node& n = node(id);
  std::string s = "#" + std::to_string(id) + ":" + op_name(n.op);
  if (!n.name.empty()) s += "('" + n.name + "')";
  s += shape_str(n.shape);
  return s;
}

NodeId Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::input(Shape shape, std::string name) {
  Node n;
  n.op = Op::kInput;
  n.shape = std::move(shape);
  n.name = std::move(name);
  if (shape_size(n.shape) <= 0) throw Error("input with empty shape");
  return push(std::move(n));
}

NodeId Graph::parameter(std::shared_ptr<Tensor> storage, std::string name) {
  if (!storage) throw Error("null parameter storage for '" + name + "'");
  Node n;
  n.op = Op::kParam;
  n.shape = storage->shape();
  n.param = std::move(storage);
  n.name = std::move(name);
  NodeId id = push(std::move(n));
  params_.push_back(id);
  return id;
}

NodeId Graph::constant(Tensor value, std::string name) {
  Node n;
  n.op = Op::kConst;
  n.shape = value.shape();
  n.value = std::move(value);
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::constant(double scalar_value) {
  int64_t bits;
  std::memcpy(&bits, &scalar_value, sizeof(bits));
  auto key = std::make_pair(0, bits);
  auto it = const_cache_.find(key);
  if (it != const_cache_.end()) return it->second;
  NodeId id = constant(Tensor::scalar(scalar_value));
  const_cache_[key] = id;
  return id;
}

NodeId Graph::zeros_like(const Shape& shape) { return constant(Tensor(shape)); }
NodeId Graph::ones_like(const Shape& shape) { return constant(Tensor::full(shape, 1.0)); }

// ---- builders ------------------------------------------------------------

static void require_broadcastable(const Graph& g, const char* op, NodeId a, NodeId b) {
  const Shape& sa = g.shape_of(a);
  const Shape& sb = g.shape_of(b);
  if (sa == sb || shape_size(sa) == 1 || shape_size(sb) == 1) return;
  throw Error(std::string(op) + ": shape mismatch between " + g.describe(a) + " and " +
              g.describe(b));
}

static Shape broadcast_shape(const Graph& g, NodeId a, NodeId b) {
  const Shape& sa = g.shape_of(a);
  const Shape& sb = g.shape_of(b);
  if (shape_size(sa) == 1 && shape_size(sb) > 1) return sb;
  return sa;
}

NodeId Graph::add(NodeId a, NodeId b) {
  require_broadcastable(*this, "add", a, b);
  Node n;
  n.op = Op::kAdd;
  n.inputs = {a, b};
  n.shape = broadcast_shape(*this, a, b);
  return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  require_broadcastable(*this, "mul", a, b);
  Node n;
  n.op = Op::kMul;
  n.inputs = {a, b};
  n.shape = broadcast_shape(*this, a, b);
  return push(std::move(n));
}

NodeId Graph::div(NodeId a, NodeId b) {
  require_broadcastable(*this, "div", a, b);
  Node n;
  n.op = Op::kDiv;
  n.inputs = {a, b};
  n.shape = broadcast_shape(*this, a, b);
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b, bool trans_a, bool trans_b, bool reduce_batch) {
  const Shape& sa = shape_of(a);
  const Shape& sb = shape_of(b);
  if ((sa.size() != 2 && sa.size() != 3) || (sb.size() != 2 && sb.size() != 3)) {
    throw Error("matmul: operands must be 2-D or 3-D, got " + describe(a) + " and " + describe(b));
  }
  int64_t na = sa.size() == 3 ? sa[0] : 1;
  int64_t nb = sb.size() == 3 ? sb[0] : 1;
  if (na != nb && na != 1 && nb != 1) {
    throw Error("matmul: batch mismatch between " + describe(a) + " and " + describe(b));
  }
  int64_t ra = sa[sa.size() - 2], ca = sa[sa.size() - 1];
  int64_t rb = sb[sb.size() - 2], cb = sb[sb.size() - 1];
  int64_t rows = trans_a ? ca : ra;
  int64_t ka = trans_a ? ra : ca;
  int64_t kb = trans_b ? cb : rb;
  int64_t cols = trans_b ? rb : cb;
  if (ka != kb) {
    throw Error("matmul: inner dimension mismatch between " + describe(a) + " and " + describe(b));
  }
  bool batched = sa.size() == 3 || sb.size() == 3;
  if (reduce_batch && !batched) {
    throw Error("matmul: reduce_batch requires a 3-D operand");
  }
  Node n;
  n.op = Op::kMatMul;
  n.inputs = {a, b};
  n.trans_a = trans_a;
  n.trans_b = trans_b;
  n.reduce_batch = reduce_batch;
  if (batched && !reduce_batch) n.shape = {std::max(na, nb), rows, cols};
  else n.shape = {rows, cols};
  return push(std::move(n));
}

NodeId Graph::conv1d(NodeId x, NodeId w, int dilation) {
  const Shape& sx = shape_of(x);
  const Shape& sw = shape_of(w);
  if (sx.size() != 3) throw Error("conv1d: x must be [N,C,L], got " + describe(x));
  if (sw.size() != 3) throw Error("conv1d: w must be [Cout,Cin,K], got " + describe(w));
  if (sx[1] != sw[1]) {
    throw Error("conv1d: channel mismatch between " + describe(x) + " and " + describe(w));
  }
  if (dilation < 1) throw Error("conv1d: dilation must be >= 1");
  Node n;
  n.op = Op::kConv1d;
  n.inputs = {x, w};
  n.dilation = dilation;
  n.shape = {sx[0], sw[0], sx[2]};
  return push(std::move(n));
}

NodeId Graph::bias_add(NodeId x, NodeId b, int axis) {
  const Shape& sx = shape_of(x);
  const Shape& sb = shape_of(b);
  if (axis < 0 || axis >= static_cast<int>(sx.size())) {
    throw Error("bias_add: axis out of range for " + describe(x));
  }
  if (sb.size() != 1 || sb[0] != sx[static_cast<size_t>(axis)]) {
    throw Error("bias_add: bias " + describe(b) + " does not match axis " +
                std::to_string(axis) + " of " + describe(x));
  }
  Node n;
  n.op = Op::kBiasAdd;
  n.inputs = {x, b};
  n.axis = axis;
  n.shape = sx;
  return push(std::move(n));
}

NodeId Graph::relu(NodeId x) {
  Node n;
  n.op = Op::kRelu;
  n.inputs = {x};
  n.shape = shape_of(x);
  return push(std::move(n));
}

NodeId Graph::sigmoid(NodeId x) {
  Node n;
  n.op = Op::kSigmoid;
  n.inputs = {x};
  n.shape = shape_of(x);
  return push(std::move(n));
}

NodeId Graph::softmax(NodeId x, int axis) {
  const Shape& s = shape_of(x);
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw Error("softmax: axis out of range for " + describe(x));
  }
  Node n;
  n.op = Op::kSoftmax;
  n.inputs = {x};
  n.axis = axis;
  n.shape = s;
  return push(std::move(n));
}

NodeId Graph::concat(const std::vector<NodeId>& xs, int axis) {
  if (xs.empty()) throw Error("concat: no inputs");
  Shape out = shape_of(xs[0]);
  if (axis < 0 || axis >= static_cast<int>(out.size())) {
    throw Error("concat: axis out of range for " + describe(xs[0]));
  }
  for (size_t i = 1; i < xs.size(); ++i) {
    const Shape& s = shape_of(xs[i]);
    if (s.size() != out.size()) {
      throw Error("concat: rank mismatch at " + describe(xs[i]));
    }
    for (size_t d = 0; d < s.size(); ++d) {
      if (static_cast<int>(d) == axis) continue;
      if (s[d] != out[d]) {
        throw Error("concat: shape mismatch between " + describe(xs[0]) + " and " + describe(xs[i]));
      }
    }
    out[static_cast<size_t>(axis)] += s[static_cast<size_t>(axis)];
  }
  Node n;
  n.op = Op::kConcat;
  n.inputs = xs;
  n.axis = axis;
  n.shape = std::move(out);
  return push(std::move(n));
}

NodeId Graph::slice(NodeId x, int axis, int64_t start, int64_t length) {
  const Shape& s = shape_of(x);
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw Error("slice: axis out of range for " + describe(x));
  }
  if (start < 0 || length < 1 || start + length > s[static_cast<size_t>(axis)]) {
    throw Error("slice: range [" + std::to_string(start) + "," + std::to_string(start + length) +
                ") out of bounds for " + describe(x));
  }
  Node n;
  n.op = Op::kSlice;
  n.inputs = {x};
  n.axis = axis;
  n.start = start;
  n.length = length;
  n.shape = s;
  n.shape[static_cast<size_t>(axis)] = length;
  return push(std::move(n));
}

NodeId Graph::reshape(NodeId x, Shape shape) {
  if (shape_size(shape) != shape_size(shape_of(x))) {
    throw Error("reshape: size mismatch, " + describe(x) + " to " + shape_str(shape));
  }
  Node n;
  n.op = Op::kReshape;
  n.inputs = {x};
  n.shape = std::move(shape);
  return push(std::move(n));
}

NodeId Graph::mean(NodeId x) {
  Node n;
  n.op = Op::kMean;
  n.inputs = {x};
  n.shape = {1};
  return push(std::move(n));
}

NodeId Graph::square(NodeId x) {
  Node n;
  n.op = Op::kSquare;
  n.inputs = {x};
  n.shape = shape_of(x);
  return push(std::move(n));
}

NodeId Graph::sqrt(NodeId x) {
  Node n;
  n.op = Op::kSqrt;
  n.inputs = {x};
  n.shape = shape_of(x);
  return push(std::move(n));
}

NodeId Graph::abs(NodeId x) {
  Node n;
  n.op = Op::kAbs;
  n.inputs = {x};
  n.shape = shape_of(x);
  return push(std::move(n));
}

NodeId Graph::bce(NodeId p, NodeId o) {
  if (shape_of(p) != shape_of(o)) {
    throw Error("bce: shape mismatch between " + describe(p) + " and " + describe(o));
  }
  Node n;
  n.op = Op::kBce;
  n.inputs = {p, o};
  n.shape = {1};
  return push(std::move(n));
}

NodeId Graph::scale(NodeId x, double c) { return mul(x, constant(c)); }

NodeId Graph::sub(NodeId a, NodeId b) { return add(a, scale(b, -1.0)); }

NodeId Graph::sum(NodeId x) {
  return scale(mean(x), static_cast<double>(shape_size(shape_of(x))));
}

// ---- evaluation ----------------------------------------------------------

void Graph::bind(NodeId input_id, Tensor value) {
  Node& n = node_mut(input_id);
  if (n.op != Op::kInput) throw Error("bind: " + describe(input_id) + " is not an input");
  if (value.shape() != n.shape) {
    throw Error("bind: tensor " + shape_str(value.shape()) + " does not match " +
                describe(input_id));
  }
  n.value = std::move(value);
  n.bound = true;
}

const Tensor& Graph::value(NodeId id) const {
  const Node& n = node(id);
  if (n.op == Op::kParam) return *n.param;
  return n.value;
}

const std::vector<NodeId>& Graph::plan_for(NodeId id) {
  auto it = plan_cache_.find(id);
  if (it != plan_cache_.end()) return it->second;
  std::vector<bool> seen(nodes_.size(), false);
  std::vector<NodeId> stack{id};
  std::vector<NodeId> order;
  seen[static_cast<size_t>(id)] = true;
  while (!stack.empty()) {
    NodeId cur = stack.back();
    stack.pop_back();
    order.push_back(cur);
    for (NodeId in : node(cur).inputs) {
      if (!seen[static_cast<size_t>(in)]) {
        seen[static_cast<size_t>(in)] = true;
        stack.push_back(in);
      }
    }
  }
  std::sort(order.begin(), order.end());
  return plan_cache_.emplace(id, std::move(order)).first->second;
}

const Tensor& Graph::eval(NodeId id) {
  for (NodeId step : plan_for(id)) eval_node(step);
  return value(id);
}

void Graph::eval_many(std::span<const NodeId> ids) {
  std::vector<bool> seen(nodes_.size(), false);
  std::vector<NodeId> merged;
  for (NodeId id : ids) {
    for (NodeId step : plan_for(id)) {
      if (!seen[static_cast<size_t>(step)]) {
        seen[static_cast<size_t>(step)] = true;
        merged.push_back(step);
      }
    }
  }
  std::sort(merged.begin(), merged.end());
  for (NodeId step : merged) eval_node(step);
}

// ---- kernels ---------------------------------------------------------------

namespace {

void ew_add(const Tensor& a, const Tensor& b, Tensor& out) {
  const int64_t n = out.size();
  double* o = out.data();
  if (a.size() == b.size()) {
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t i = 0; i < n; ++i) o[i] = pa[i] + pb[i];
  } else if (a.size() == 1) {
    const double av = a.at(0);
    const double* pb = b.data();
    for (int64_t i = 0; i < n; ++i) o[i] = av + pb[i];
  } else {
    const double bv = b.at(0);
    const double* pa = a.data();
    for (int64_t i = 0; i < n; ++i) o[i] = pa[i] + bv;
  }
}

void ew_mul(const Tensor& a, const Tensor& b, Tensor& out) {
  const int64_t n = out.size();
  double* o = out.data();
  if (a.size() == b.size()) {
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t i = 0; i < n; ++i) o[i] = pa[i] * pb[i];
  } else if (a.size() == 1) {
    const double av = a.at(0);
    const double* pb = b.data();
    for (int64_t i = 0; i < n; ++i) o[i] = av * pb[i];
  } else {
    const double bv = b.at(0);
    const double* pa = a.data();
    for (int64_t i = 0; i < n; ++i) o[i] = pa[i] * bv;
  }
}

void ew_div(const Tensor& a, const Tensor& b, Tensor& out) {
  const int64_t n = out.size();
  double* o = out.data();
  if (a.size() == b.size()) {
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t i = 0; i < n; ++i) o[i] = pa[i] / pb[i];
  } else if (a.size() == 1) {
    const double av = a.at(0);
    const double* pb = b.data();
    for (int64_t i = 0; i < n; ++i) o[i] = av / pb[i];
  } else {
    const double bv = b.at(0);
    const double* pa = a.data();
    for (int64_t i = 0; i < n; ++i) o[i] = pa[i] / bv;
  }
}

// Fixed-order four-lane dot product: bit-reproducible and wide enough for the
// compiler to vectorize without reassociation.
inline double dot_fixed(const double* a, const double* b, int64_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  int64_t k = 0;
  for (; k + 4 <= n; k += 4) {
    s0 += a[k] * b[k];
    s1 += a[k + 1] * b[k + 1];
    s2 += a[k + 2] * b[k + 2];
    s3 += a[k + 3] * b[k + 3];
  }
  double tail = 0.0;
  for (; k < n; ++k) tail += a[k] * b[k];
  return ((s0 + s1) + (s2 + s3)) + tail;
}

// one output row C[i,:] += op(A) row i times op(B), single batch item
void matmul_row(const double* a, const double* b, double* crow, int64_t i, int64_t klen,
                int64_t cols_c, int64_t cols_a, int64_t cols_b, bool trans_a, bool trans_b) {
  if (!trans_a && !trans_b) {
    const double* arow = a + i * cols_a;
    for (int64_t k = 0; k < klen; ++k) {
      const double av = arow[k];
      const double* brow = b + k * cols_b;
      for (int64_t j = 0; j < cols_c; ++j) crow[j] += av * brow[j];
    }
  } else if (!trans_a && trans_b) {
    const double* arow = a + i * cols_a;
    for (int64_t j = 0; j < cols_c; ++j) {
      crow[j] += dot_fixed(arow, b + j * cols_b, klen);
    }
  } else if (trans_a && !trans_b) {
    for (int64_t k = 0; k < klen; ++k) {
      const double av = a[k * cols_a + i];
      const double* brow = b + k * cols_b;
      for (int64_t j = 0; j < cols_c; ++j) crow[j] += av * brow[j];
    }
  } else {
    for (int64_t j = 0; j < cols_c; ++j) {
      const double* brow = b + j * cols_b;
      double acc = 0.0;
      for (int64_t k = 0; k < klen; ++k) acc += a[k * cols_a + i] * brow[k];
      crow[j] += acc;
    }
  }
}

void matmul_eval(const Node& n, const Tensor& ta, const Tensor& tb, Tensor& out) {
  const Shape& sa = ta.shape();
  const Shape& sb = tb.shape();
  const int64_t na = sa.size() == 3 ? sa[0] : 1;
  const int64_t nb = sb.size() == 3 ? sb[0] : 1;
  const int64_t batches = std::max(na, nb);
  const int64_t ra = sa[sa.size() - 2], ca = sa[sa.size() - 1];
  const int64_t rb = sb[sb.size() - 2], cb = sb[sb.size() - 1];
  const int64_t rows = n.trans_a ? ca : ra;
  const int64_t klen = n.trans_a ? ra : ca;
  const int64_t cols = n.trans_b ? rb : cb;
  const int64_t astride = na > 1 ? ra * ca : 0;
  const int64_t bstride = nb > 1 ? rb * cb : 0;
  const double* pa = ta.data();
  const double* pb = tb.data();
  out.fill(0.0);
  double* po = out.data();
  if (n.reduce_batch) {
    parallel_for(rows, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) {
        double* crow = po + i * cols;
        for (int64_t bi = 0; bi < batches; ++bi) {
          matmul_row(pa + bi * astride, pb + bi * bstride, crow, i, klen, cols, ca, cb,
                     n.trans_a, n.trans_b);
        }
      }
    });
  } else {
    parallel_for(batches * rows, [&](int64_t lo, int64_t hi) {
      for (int64_t w = lo; w < hi; ++w) {
        const int64_t bi = w / rows;
        const int64_t i = w % rows;
        matmul_row(pa + bi * astride, pb + bi * bstride, po + (bi * rows + i) * cols, i, klen,
                   cols, ca, cb, n.trans_a, n.trans_b);
      }
    });
  }
}

void conv1d_eval(const Tensor& tx, const Tensor& tw, int dilation, Tensor& out) {
  const int64_t batch = tx.dim(0), cin = tx.dim(1), len = tx.dim(2);
  const int64_t cout = tw.dim(0), kernel = tw.dim(2);
  const int pad_left = conv_pad_left(static_cast<int>(kernel), dilation);
  const double* px = tx.data();
  const double* pw = tw.data();
  out.fill(0.0);
  double* po = out.data();
  parallel_for(batch * cout, [&](int64_t lo, int64_t hi) {
    for (int64_t w = lo; w < hi; ++w) {
      const int64_t n = w / cout;
      const int64_t o = w % cout;
      double* yrow = po + (n * cout + o) * len;
      for (int64_t c = 0; c < cin; ++c) {
        const double* xrow = px + (n * cin + c) * len;
        const double* wrow = pw + (o * cin + c) * kernel;
        for (int64_t k = 0; k < kernel; ++k) {
          const double wv = wrow[k];
          if (wv == 0.0) continue;
          const int64_t off = k * dilation - pad_left;
          const int64_t t0 = std::max<int64_t>(0, -off);
          const int64_t t1 = std::min<int64_t>(len, len - off);
          const double* xs = xrow + off;
          for (int64_t t = t0; t < t1; ++t) yrow[t] += wv * xs[t];
        }
      }
    }
  });
}

// gx[n,c,u] = sum_{o,k} w[o,c,k] * gy[n,o,u + pad_left - k*dilation]
void conv1d_data_grad_eval(const Tensor& tg, const Tensor& tw, int dilation, Tensor& out) {
  const int64_t batch = tg.dim(0), cout = tg.dim(1), len = tg.dim(2);
  const int64_t cin = tw.dim(1), kernel = tw.dim(2);
  const int pad_left = conv_pad_left(static_cast<int>(kernel), dilation);
  const double* pg = tg.data();
  const double* pw = tw.data();
  out.fill(0.0);
  double* po = out.data();
  parallel_for(batch * cin, [&](int64_t lo, int64_t hi) {
    for (int64_t w = lo; w < hi; ++w) {
      const int64_t n = w / cin;
      const int64_t c = w % cin;
      double* gxr = po + (n * cin + c) * len;
      for (int64_t o = 0; o < cout; ++o) {
        const double* grow = pg + (n * cout + o) * len;
        const double* wrow = pw + (o * cin + c) * kernel;
        for (int64_t k = 0; k < kernel; ++k) {
          const double wv = wrow[k];
          if (wv == 0.0) continue;
          const int64_t off = pad_left - k * dilation;
          const int64_t t0 = std::max<int64_t>(0, -off);
          const int64_t t1 = std::min<int64_t>(len, len - off);
          const double* gs = grow + off;
          for (int64_t u = t0; u < t1; ++u) gxr[u] += wv * gs[u];
        }
      }
    }
  });
}

// gw[o,c,k] = sum_{n,t} gy[n,o,t] * x[n,c,t + k*dilation - pad_left]
void conv1d_weight_grad_eval(const Tensor& tg, const Tensor& tx, int dilation, int kernel,
                             Tensor& out) {
  const int64_t batch = tg.dim(0), cout = tg.dim(1), len = tg.dim(2);
  const int64_t cin = tx.dim(1);
  const int pad_left = conv_pad_left(kernel, dilation);
  const double* pg = tg.data();
  const double* px = tx.data();
  double* po = out.data();
  parallel_for(cout * cin, [&](int64_t lo, int64_t hi) {
    for (int64_t w = lo; w < hi; ++w) {
      const int64_t o = w / cin;
      const int64_t c = w % cin;
      for (int64_t k = 0; k < kernel; ++k) {
        const int64_t off = k * dilation - pad_left;
        const int64_t t0 = std::max<int64_t>(0, -off);
        const int64_t t1 = std::min<int64_t>(len, len - off);
        double acc = 0.0;
        for (int64_t n = 0; n < batch; ++n) {
          const double* grow = pg + (n * cout + o) * len;
          const double* xs = px + (n * cin + c) * len + off;
          acc += dot_fixed(grow + t0, xs + t0, t1 - t0);
        }
        po[(o * cin + c) * kernel + k] = acc;
      }
    }
  });
}

void softmax_eval(const Tensor& tx, int axis, Tensor& out) {
  const AxisSplit sp = split_axis(tx.shape(), axis);
  const double* px = tx.data();
  double* po = out.data();
  parallel_for(sp.outer, [&](int64_t lo, int64_t hi) {
    for (int64_t ou = lo; ou < hi; ++ou) {
      for (int64_t in = 0; in < sp.inner; ++in) {
        const int64_t base = ou * sp.len * sp.inner + in;
        double mx = px[base];
        for (int64_t k = 1; k < sp.len; ++k) {
          mx = std::max(mx, px[base + k * sp.inner]);
        }
        double total = 0.0;
        for (int64_t k = 0; k < sp.len; ++k) {
          const double e = std::exp(px[base + k * sp.inner] - mx);
          po[base + k * sp.inner] = e;
          total += e;
        }
        const double inv = 1.0 / total;
        for (int64_t k = 0; k < sp.len; ++k) po[base + k * sp.inner] *= inv;
      }
    }
  });
}

// gx = s .* (g - sum_axis(g .* s))
void softmax_grad_eval(const Tensor& ts, const Tensor& tg, int axis, Tensor& out) {
  const AxisSplit sp = split_axis(ts.shape(), axis);
  const double* ps = ts.data();
  const double* pg = tg.data();
  double* po = out.data();
  parallel_for(sp.outer, [&](int64_t lo, int64_t hi) {
    for (int64_t ou = lo; ou < hi; ++ou) {
      for (int64_t in = 0; in < sp.inner; ++in) {
        const int64_t base = ou * sp.len * sp.inner + in;
        double dot = 0.0;
        for (int64_t k = 0; k < sp.len; ++k) {
          const int64_t idx = base + k * sp.inner;
          dot += pg[idx] * ps[idx];
        }
        for (int64_t k = 0; k < sp.len; ++k) {
          const int64_t idx = base + k * sp.inner;
          po[idx] = ps[idx] * (pg[idx] - dot);
        }
      }
    }
  });
}

constexpr double kBceClamp = 1e-7;

}  // namespace

void Graph::eval_node(NodeId id) {
  Node& n = node_mut(id);
  switch (n.op) {
    case Op::kParam:
    case Op::kConst:
      return;
    case Op::kInput:
      if (!n.bound) throw Error("unbound input " + describe(id));
      return;
    default:
      break;
  }
  if (n.value.shape() != n.shape) n.value = Tensor(n.shape);
  const auto in = [&](size_t i) -> const Tensor& { return value(n.inputs[i]); };
  switch (n.op) {
    case Op::kAdd:
      ew_add(in(0), in(1), n.value);
      break;
    case Op::kMul:
      ew_mul(in(0), in(1), n.value);
      break;
    case Op::kDiv:
      ew_div(in(0), in(1), n.value);
      break;
    case Op::kMatMul:
      matmul_eval(n, in(0), in(1), n.value);
      break;
    case Op::kConv1d:
      conv1d_eval(in(0), in(1), n.dilation, n.value);
      break;
    case Op::kConvDataGrad:
      conv1d_data_grad_eval(in(0), in(1), n.dilation, n.value);
      break;
    case Op::kConvWeightGrad:
      conv1d_weight_grad_eval(in(0), in(1), n.dilation, n.kernel, n.value);
      break;
    case Op::kBiasAdd: {
      const AxisSplit sp = split_axis(n.shape, n.axis);
      const double* px = in(0).data();
      const double* pb = in(1).data();
      double* po = n.value.data();
      for (int64_t ou = 0; ou < sp.outer; ++ou) {
        for (int64_t a = 0; a < sp.len; ++a) {
          const double bv = pb[a];
          const int64_t base = (ou * sp.len + a) * sp.inner;
          for (int64_t i = 0; i < sp.inner; ++i) po[base + i] = px[base + i] + bv;
        }
      }
      break;
    }
    case Op::kBiasGrad: {
      const AxisSplit sp = split_axis(in(0).shape(), n.axis);
      const double* pg = in(0).data();
      double* po = n.value.data();
      for (int64_t a = 0; a < sp.len; ++a) {
        double acc = 0.0;
        for (int64_t ou = 0; ou < sp.outer; ++ou) {
          const int64_t base = (ou * sp.len + a) * sp.inner;
          for (int64_t i = 0; i < sp.inner; ++i) acc += pg[base + i];
        }
        po[a] = acc;
      }
      break;
    }
    case Op::kRelu: {
      const double* px = in(0).data();
      double* po = n.value.data();
      for (int64_t i = 0, e = n.value.size(); i < e; ++i) po[i] = px[i] > 0.0 ? px[i] : 0.0;
      break;
    }
    case Op::kStep: {
      const double* px = in(0).data();
      double* po = n.value.data();
      for (int64_t i = 0, e = n.value.size(); i < e; ++i) po[i] = px[i] > 0.0 ? 1.0 : 0.0;
      break;
    }
    case Op::kSign: {
      const double* px = in(0).data();
      double* po = n.value.data();
      for (int64_t i = 0, e = n.value.size(); i < e; ++i) {
        po[i] = px[i] > 0.0 ? 1.0 : (px[i] < 0.0 ? -1.0 : 0.0);
      }
      break;
    }
    case Op::kSigmoid: {
      const double* px = in(0).data();
      double* po = n.value.data();
      for (int64_t i = 0, e = n.value.size(); i < e; ++i) {
        const double x = px[i];
        if (x >= 0.0) {
          po[i] = 1.0 / (1.0 + std::exp(-x));
        } else {
          const double ex = std::exp(x);
          po[i] = ex / (1.0 + ex);
        }
      }
      break;
    }
    case Op::kSoftmax:
      softmax_eval(in(0), n.axis, n.value);
      break;
    case Op::kSoftmaxGrad:
      softmax_grad_eval(in(0), in(1), n.axis, n.value);
      break;
    case Op::kConcat: {
      const AxisSplit sp = split_axis(n.shape, n.axis);
      double* po = n.value.data();
      int64_t offset = 0;
      for (size_t idx = 0; idx < n.inputs.size(); ++idx) {
        const Tensor& t = in(idx);
        const int64_t alen = t.shape()[static_cast<size_t>(n.axis)];
        const double* px = t.data();
        for (int64_t ou = 0; ou < sp.outer; ++ou) {
          std::memcpy(po + (ou * sp.len + offset) * sp.inner, px + ou * alen * sp.inner,
                      static_cast<size_t>(alen * sp.inner) * sizeof(double));
        }
        offset += alen;
      }
      break;
    }
    case Op::kSlice: {
      const Tensor& t = in(0);
      const AxisSplit sp = split_axis(t.shape(), n.axis);
      const double* px = t.data();
      double* po = n.value.data();
      for (int64_t ou = 0; ou < sp.outer; ++ou) {
        std::memcpy(po + ou * n.length * sp.inner, px + (ou * sp.len + n.start) * sp.inner,
                    static_cast<size_t>(n.length * sp.inner) * sizeof(double));
      }
      break;
    }
    case Op::kReshape:
      std::memcpy(n.value.data(), in(0).data(), static_cast<size_t>(n.value.size()) * sizeof(double));
      break;
    case Op::kMean: {
      const double* px = in(0).data();
      double acc = 0.0;
      const int64_t e = in(0).size();
      for (int64_t i = 0; i < e; ++i) acc += px[i];
      n.value.at(0) = acc / static_cast<double>(e);
      break;
    }
    case Op::kSquare: {
      const double* px = in(0).data();
      double* po = n.value.data();
      for (int64_t i = 0, e = n.value.size(); i < e; ++i) po[i] = px[i] * px[i];
      break;
    }
    case Op::kSqrt: {
      const double* px = in(0).data();
      double* po = n.value.data();
      for (int64_t i = 0, e = n.value.size(); i < e; ++i) po[i] = std::sqrt(px[i]);
      break;
    }
    case Op::kAbs: {
      const double* px = in(0).data();
      double* po = n.value.data();
      for (int64_t i = 0, e = n.value.size(); i < e; ++i) po[i] = std::fabs(px[i]);
      break;
    }
    case Op::kBce: {
      const double* pp = in(0).data();
      const double* po_t = in(1).data();
      const int64_t e = in(0).size();
      double acc = 0.0;
      for (int64_t i = 0; i < e; ++i) {
        const double o = po_t[i];
        if (o != 0.0 && o != 1.0) {
          throw Error("bce: target outside {0,1} at " + describe(id));
        }
        const double p = std::clamp(pp[i], kBceClamp, 1.0 - kBceClamp);
        acc -= o * std::log(p) + (1.0 - o) * std::log(1.0 - p);
      }
      n.value.at(0) = acc / static_cast<double>(e);
      break;
    }
    case Op::kBceGrad: {
      const double* pp = in(0).data();
      const double* po_t = in(1).data();
      double* po = n.value.data();
      const int64_t e = n.value.size();
      const double inv_n = 1.0 / static_cast<double>(e);
      for (int64_t i = 0; i < e; ++i) {
        const double p = std::clamp(pp[i], kBceClamp, 1.0 - kBceClamp);
        po[i] = (p - po_t[i]) / (p * (1.0 - p)) * inv_n;
      }
      break;
    }
    default:
      throw Error("eval: unhandled op " + std::string(op_name(n.op)));
  }
  if (checked_mode()) n.value.check_finite(describe(id));
}

// ---- differentiation -------------------------------------------------------

void Graph::accumulate(std::unordered_map<NodeId, NodeId>& adjoint, NodeId target, NodeId g) {
  // invariant: an adjoint always has the exact shape of its node
  if (shape_of(g) != shape_of(target)) {
    if (shape_size(shape_of(g)) != shape_size(shape_of(target))) {
      throw Error("internal: adjoint shape " + shape_str(shape_of(g)) + " for " +
                  describe(target));
    }
    g = reshape(g, shape_of(target));
  }
  auto it = adjoint.find(target);
  if (it == adjoint.end()) adjoint.emplace(target, g);
  else it->second = add(it->second, g);
}

NodeId Graph::reduce_to_scalar_if(const Shape target, NodeId g) {
  if (shape_size(target) == 1 && shape_size(shape_of(g)) > 1) {
    return reshape(sum(g), target);
  }
  if (shape_size(target) == 1 && shape_of(g) != target) {
    return reshape(g, target);
  }
  return g;
}

void Graph::emit_vjps(NodeId id, std::unordered_map<NodeId, NodeId>& adjoint) {
  const NodeId g = adjoint.at(id);
  // copy the descriptor fields (not the value): push() may reallocate nodes_
  struct Desc {
    Op op;
    std::vector<NodeId> inputs;
    int axis;
    int64_t start, length;
    int dilation;
    bool trans_a, trans_b;
  };
  const Desc n = [&] {
    const Node& src = node(id);
    return Desc{src.op, src.inputs, src.axis, src.start, src.length,
                src.dilation, src.trans_a, src.trans_b};
  }();
  switch (n.op) {
    case Op::kInput:
    case Op::kParam:
    case Op::kConst:
      return;
    case Op::kAdd: {
      accumulate(adjoint, n.inputs[0], reduce_to_scalar_if(shape_of(n.inputs[0]), g));
      accumulate(adjoint, n.inputs[1], reduce_to_scalar_if(shape_of(n.inputs[1]), g));
      return;
    }
    case Op::kMul: {
      const NodeId a = n.inputs[0], b = n.inputs[1];
      accumulate(adjoint, a, reduce_to_scalar_if(shape_of(a), mul(g, b)));
      accumulate(adjoint, b, reduce_to_scalar_if(shape_of(b), mul(g, a)));
      return;
    }
    case Op::kDiv: {
      const NodeId a = n.inputs[0], b = n.inputs[1];
      accumulate(adjoint, a, reduce_to_scalar_if(shape_of(a), div(g, b)));
      const NodeId gb = scale(mul(g, div(a, mul(b, b))), -1.0);
      accumulate(adjoint, b, reduce_to_scalar_if(shape_of(b), gb));
      return;
    }
    case Op::kMatMul: {
      const NodeId a = n.inputs[0], b = n.inputs[1];
      const bool ta = n.trans_a, tb = n.trans_b;
      const int rank_a = static_cast<int>(shape_of(a).size());
      const int rank_b = static_cast<int>(shape_of(b).size());
      const int rank_g = static_cast<int>(shape_of(g).size());
      const bool reduce_a = rank_a == 2 && (rank_g == 3 || rank_b == 3);
      const bool reduce_b = rank_b == 2 && (rank_g == 3 || rank_a == 3);
      const NodeId da = !ta ? matmul(g, b, false, !tb, reduce_a)
                            : matmul(b, g, tb, true, reduce_a);
      const NodeId db = !tb ? matmul(a, g, !ta, false, reduce_b)
                            : matmul(g, a, true, ta, reduce_b);
      accumulate(adjoint, a, da);
      accumulate(adjoint, b, db);
      return;
    }
    case Op::kConv1d: {
      const NodeId x = n.inputs[0], w = n.inputs[1];
      Node gxn;
      gxn.op = Op::kConvDataGrad;
      gxn.inputs = {g, w};
      gxn.dilation = n.dilation;
      gxn.shape = shape_of(x);
      accumulate(adjoint, x, push(std::move(gxn)));
      Node gwn;
      gwn.op = Op::kConvWeightGrad;
      gwn.inputs = {g, x};
      gwn.dilation = n.dilation;
      gwn.kernel = static_cast<int>(shape_of(w)[2]);
      gwn.shape = shape_of(w);
      accumulate(adjoint, w, push(std::move(gwn)));
      return;
    }
    case Op::kConvDataGrad: {
      // id = A_w^T gy (transposed convolution); bilinear in (gy, w)
      const NodeId gy = n.inputs[0], w = n.inputs[1];
      accumulate(adjoint, gy, conv1d(g, w, n.dilation));
      Node gwn;
      gwn.op = Op::kConvWeightGrad;
      gwn.inputs = {gy, g};
      gwn.dilation = n.dilation;
      gwn.kernel = static_cast<int>(shape_of(w)[2]);
      gwn.shape = shape_of(w);
      accumulate(adjoint, w, push(std::move(gwn)));
      return;
    }
    case Op::kConvWeightGrad: {
      const NodeId gy = n.inputs[0], x = n.inputs[1];
      accumulate(adjoint, gy, conv1d(x, g, n.dilation));
      Node gxn;
      gxn.op = Op::kConvDataGrad;
      gxn.inputs = {gy, g};
      gxn.dilation = n.dilation;
      gxn.shape = shape_of(x);
      accumulate(adjoint, x, push(std::move(gxn)));
      return;
    }
    case Op::kBiasAdd: {
      accumulate(adjoint, n.inputs[0], g);
      Node gbn;
      gbn.op = Op::kBiasGrad;
      gbn.inputs = {g};
      gbn.axis = n.axis;
      gbn.shape = shape_of(n.inputs[1]);
      accumulate(adjoint, n.inputs[1], push(std::move(gbn)));
      return;
    }
    case Op::kBiasGrad: {
      accumulate(adjoint, n.inputs[0], bias_add(zeros_like(shape_of(n.inputs[0])), g, n.axis));
      return;
    }
    case Op::kRelu: {
      Node sn;
      sn.op = Op::kStep;
      sn.inputs = {n.inputs[0]};
      sn.shape = shape_of(n.inputs[0]);
      accumulate(adjoint, n.inputs[0], mul(g, push(std::move(sn))));
      return;
    }
    case Op::kStep:
    case Op::kSign:
      return;  // derivative defined as zero everywhere
    case Op::kSigmoid: {
      const NodeId one_minus = add(constant(1.0), scale(id, -1.0));
      accumulate(adjoint, n.inputs[0], mul(g, mul(id, one_minus)));
      return;
    }
    case Op::kSoftmax: {
      Node sg;
      sg.op = Op::kSoftmaxGrad;
      sg.inputs = {id, g};
      sg.axis = n.axis;
      sg.shape = shape_of(id);
      accumulate(adjoint, n.inputs[0], push(std::move(sg)));
      return;
    }
    case Op::kConcat: {
      int64_t offset = 0;
      for (NodeId in_id : n.inputs) {
        const int64_t alen = shape_of(in_id)[static_cast<size_t>(n.axis)];
        accumulate(adjoint, in_id, slice(g, n.axis, offset, alen));
        offset += alen;
      }
      return;
    }
    case Op::kSlice: {
      const Shape full = shape_of(n.inputs[0]);
      const int64_t total = full[static_cast<size_t>(n.axis)];
      std::vector<NodeId> parts;
      if (n.start > 0) {
        Shape pre = full;
        pre[static_cast<size_t>(n.axis)] = n.start;
        parts.push_back(zeros_like(pre));
      }
      parts.push_back(g);
      if (n.start + n.length < total) {
        Shape post = full;
        post[static_cast<size_t>(n.axis)] = total - n.start - n.length;
        parts.push_back(zeros_like(post));
      }
      accumulate(adjoint, n.inputs[0],
                 parts.size() == 1 ? g : concat(parts, n.axis));
      return;
    }
    case Op::kReshape: {
      accumulate(adjoint, n.inputs[0], reshape(g, shape_of(n.inputs[0])));
      return;
    }
    case Op::kMean: {
      const Shape sx = shape_of(n.inputs[0]);
      const NodeId s = scale(g, 1.0 / static_cast<double>(shape_size(sx)));
      accumulate(adjoint, n.inputs[0], mul(ones_like(sx), s));
      return;
    }
    case Op::kSquare: {
      accumulate(adjoint, n.inputs[0], mul(g, scale(n.inputs[0], 2.0)));
      return;
    }
    case Op::kSqrt: {
      accumulate(adjoint, n.inputs[0], div(g, scale(id, 2.0)));
      return;
    }
    case Op::kAbs: {
      Node sn;
      sn.op = Op::kSign;
      sn.inputs = {n.inputs[0]};
      sn.shape = shape_of(n.inputs[0]);
      accumulate(adjoint, n.inputs[0], mul(g, push(std::move(sn))));
      return;
    }
    case Op::kBce: {
      Node bg;
      bg.op = Op::kBceGrad;
      bg.inputs = {n.inputs[0], n.inputs[1]};
      bg.shape = shape_of(n.inputs[0]);
      accumulate(adjoint, n.inputs[0], mul(push(std::move(bg)), g));
      // targets are labels; no gradient path to them
      return;
    }
    case Op::kSoftmaxGrad:
    case Op::kBceGrad:
      throw Error("op lacks a second-order rule: " + describe(id));
  }
}

const std::unordered_map<NodeId, NodeId>& Graph::adjoints_for(NodeId output) {
  auto cached = adjoint_cache_.find(output);
  if (cached != adjoint_cache_.end()) return cached->second;
  if (shape_size(shape_of(output)) != 1) {
    throw Error("backward: output must be scalar, got " + describe(output));
  }
  // ancestor set of the output (plan is sorted ascending)
  std::vector<bool> ancestor(nodes_.size(), false);
  for (NodeId id : plan_for(output)) ancestor[static_cast<size_t>(id)] = true;

  std::unordered_map<NodeId, NodeId> adjoint;
  adjoint.emplace(output, constant(Tensor::full(shape_of(output), 1.0)));
  for (NodeId id = output; id >= 0; --id) {
    if (!ancestor[static_cast<size_t>(id)]) continue;
    if (adjoint.find(id) == adjoint.end()) continue;  // zero-derivative path
    emit_vjps(id, adjoint);
  }
  return adjoint_cache_.emplace(output, std::move(adjoint)).first->second;
}

std::vector<NodeId> Graph::gradient_nodes(NodeId scalar_output, std::span<const NodeId> wrt) {
  const auto& adjoint = adjoints_for(scalar_output);
  std::vector<NodeId> out;
  out.reserve(wrt.size());
  for (NodeId target : wrt) {
    auto it = adjoint.find(target);
    out.push_back(it != adjoint.end() ? it->second : zeros_like(shape_of(target)));
  }
  return out;
}

GradientMap Graph::backward(NodeId scalar_output) {
  const auto& adjoint = adjoints_for(scalar_output);
  std::vector<NodeId> touched;
  std::vector<NodeId> gnodes;
  for (NodeId p : params_) {
    auto it = adjoint.find(p);
    if (it == adjoint.end()) continue;
    touched.push_back(p);
    gnodes.push_back(it->second);
  }
  eval_many(gnodes);
  GradientMap result;
  for (size_t i = 0; i < touched.size(); ++i) {
    result.emplace(touched[i], value(gnodes[i]));
  }
  return result;
}

NodeId Graph::input_gradient(NodeId scalar_output, NodeId input_id) {
  const Node& n = node(input_id);
  if (n.op != Op::kInput) {
    throw Error("input_gradient: " + describe(input_id) + " is not an input");
  }
  const auto& adjoint = adjoints_for(scalar_output);
  auto it = adjoint.find(input_id);
  if (it == adjoint.end()) {
    throw Error("input_gradient: no gradient path from " + describe(scalar_output) + " to " +
                describe(input_id));
  }
  return it->second;
}

double Graph::finite_difference_check(NodeId scalar_output, NodeId wrt, double eps,
                                      double rel_floor) {
  if (eps <= 0.0) throw Error("finite_difference_check: eps must be positive");
  const NodeId wrt_arr[1] = {wrt};
  const NodeId gnode = gradient_nodes(scalar_output, wrt_arr)[0];
  const Tensor analytic = eval(gnode);  // copy; perturbation below re-evaluates

  Node& n = node_mut(wrt);
  Tensor* storage = nullptr;
  if (n.op == Op::kParam) storage = n.param.get();
  else if (n.op == Op::kInput && n.bound) storage = &n.value;
  else throw Error("finite_difference_check: " + describe(wrt) + " is not a parameter or bound input");

  double worst = 0.0;
  for (int64_t i = 0; i < storage->size(); ++i) {
    const double orig = storage->at(i);
    storage->at(i) = orig + eps;
    const double f_plus = eval(scalar_output).item();
    storage->at(i) = orig - eps;
    const double f_minus = eval(scalar_output).item();
    storage->at(i) = orig;
    const double numeric = (f_plus - f_minus) / (2.0 * eps);
    const double a = analytic.at(i);
    const double denom = std::max({std::fabs(a), std::fabs(numeric), rel_floor});
    worst = std::max(worst, std::fabs(a - numeric) / denom);
  }
  eval(scalar_output);  // restore values computed from unperturbed state
  return worst;
}

}  // namespace scanet
