#include "scanet/layers.hpp"

#include <cmath>

namespace scanet {

Tensor he_normal_init(Shape shape, int64_t fan_in, uint64_t seed) {
  if (fan_in < 1) throw Error("he_normal_init: fan_in must be >= 1");
  Tensor t(std::move(shape));
  RandomStream rng(seed);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.size(); ++i) t.at(i) = rng.normal(0.0, stddev);
  return t;
}

Conv1DLayer Conv1DLayer::create(int in_channels, int out_channels, int kernel_size, int dilation,
                                uint64_t seed) {
  if (in_channels < 1 || out_channels < 1 || kernel_size < 1 || dilation < 1) {
    throw Error("conv layer: channels, kernel and dilation must be positive");
  }
  Conv1DLayer l;
  l.in_channels = in_channels;
  l.out_channels = out_channels;
  l.kernel_size = kernel_size;
  l.dilation = dilation;
  l.weights = std::make_shared<Tensor>(
      he_normal_init({out_channels, in_channels, kernel_size},
                     static_cast<int64_t>(in_channels) * kernel_size, seed));
  l.bias = std::make_shared<Tensor>(Shape{out_channels});
  return l;
}

Tensor conv1d_forward(const Conv1DLayer& layer, const Tensor& z) {
  if (z.rank() != 2 || z.dim(0) != layer.in_channels) {
    throw Error("conv1d_forward: expected [" + std::to_string(layer.in_channels) +
                ",L] input, got " + shape_str(z.shape()));
  }
  const int64_t len = z.dim(1);
  Graph g;
  NodeId x = g.input({1, layer.in_channels, len});
  NodeId y = g.bias_add(g.conv1d(x, g.constant(*layer.weights), layer.dilation),
                        g.constant(*layer.bias), 1);
  Tensor batched({1, layer.in_channels, len}, std::vector<double>(z.data(), z.data() + z.size()));
  g.bind(x, std::move(batched));
  const Tensor& out = g.eval(y);
  return Tensor({layer.out_channels, len},
                std::vector<double>(out.data(), out.data() + out.size()));
}

DenseLayer DenseLayer::create(int in_dim, int out_dim, uint64_t seed) {
  if (in_dim < 1 || out_dim < 1) throw Error("dense layer: dimensions must be positive");
  DenseLayer l;
  l.in_dim = in_dim;
  l.out_dim = out_dim;
  l.weights = std::make_shared<Tensor>(he_normal_init({out_dim, in_dim}, in_dim, seed));
  l.bias = std::make_shared<Tensor>(Shape{out_dim});
  return l;
}

Tensor dense_forward(const DenseLayer& layer, const Tensor& v) {
  if (v.size() != layer.in_dim) {
    throw Error("dense_forward: expected " + std::to_string(layer.in_dim) +
                " inputs, got " + shape_str(v.shape()));
  }
  Tensor out({layer.out_dim});
  const double* w = layer.weights->data();
  for (int64_t o = 0; o < layer.out_dim; ++o) {
    double acc = layer.bias->at(o);
    const double* wrow = w + o * layer.in_dim;
    for (int64_t i = 0; i < layer.in_dim; ++i) acc += wrow[i] * v.at(i);
    out.at(o) = acc;
  }
  return out;
}

SelfAttentionBlock SelfAttentionBlock::create(int channels, int reduced_channels, uint64_t seed) {
  if (channels < 1 || reduced_channels < 1) {
    throw Error("attention block: channel counts must be positive");
  }
  SelfAttentionBlock b;
  b.channels = channels;
  b.reduced_channels = reduced_channels;
  b.w_g = std::make_shared<Tensor>(
      he_normal_init({reduced_channels, channels}, channels, derive_seed(seed, 1)));
  b.w_h = std::make_shared<Tensor>(
      he_normal_init({reduced_channels, channels}, channels, derive_seed(seed, 2)));
  b.w_d = std::make_shared<Tensor>(
      he_normal_init({channels, channels}, channels, derive_seed(seed, 3)));
  b.gamma = std::make_shared<Tensor>(Shape{1});  // exactly 0 at start
  return b;
}

namespace {

// S[n,i,j] = exp(a~[i,j]) / sum_l exp(a~[l,j]); A = S^T per batch item
NodeId emit_attention_scores(Graph& g, const SelfAttentionBlock& block, NodeId z) {
  NodeId gm = g.matmul(g.constant(*block.w_g), z);  // [N,Cbar,L]
  NodeId hm = g.matmul(g.constant(*block.w_h), z);
  NodeId scores = g.matmul(gm, hm, true, false);    // a~[i,j], [N,L,L]
  return g.softmax(scores, 1);                      // normalize over i
}

}  // namespace

Tensor attention_matrix(const SelfAttentionBlock& block, const Tensor& z) {
  if (z.rank() != 2 || z.dim(0) != block.channels) {
    throw Error("attention_matrix: expected [" + std::to_string(block.channels) +
                ",L] input, got " + shape_str(z.shape()));
  }
  const int64_t len = z.dim(1);
  Graph g;
  NodeId zc = g.constant(Tensor({1, block.channels, len},
                                std::vector<double>(z.data(), z.data() + z.size())));
  const Tensor& s = g.eval(emit_attention_scores(g, block, zc));
  Tensor a({len, len});
  for (int64_t j = 0; j < len; ++j) {
    for (int64_t i = 0; i < len; ++i) a.at2(j, i) = s.at3(0, i, j);
  }
  return a;
}

AttentionForward self_attention_forward(const SelfAttentionBlock& block, const Tensor& z) {
  if (z.rank() != 2 || z.dim(0) != block.channels) {
    throw Error("self_attention_forward: expected [" + std::to_string(block.channels) +
                ",L] input, got " + shape_str(z.shape()));
  }
  const int64_t len = z.dim(1);
  Graph g;
  NodeId zc = g.constant(Tensor({1, block.channels, len},
                                std::vector<double>(z.data(), z.data() + z.size())));
  AttentionNodes nodes = emit_self_attention(g, block, zc, "attn");
  const NodeId ids[2] = {nodes.output, nodes.scores};
  g.eval_many(ids);
  const Tensor& out = g.value(nodes.output);
  const Tensor& s = g.value(nodes.scores);
  AttentionForward result;
  result.output = Tensor({block.channels, len},
                         std::vector<double>(out.data(), out.data() + out.size()));
  result.attention = Tensor({len, len});
  for (int64_t j = 0; j < len; ++j) {
    for (int64_t i = 0; i < len; ++i) result.attention.at2(j, i) = s.at3(0, i, j);
  }
  return result;
}

NodeId emit_conv_layer(Graph& g, const Conv1DLayer& layer, NodeId x, const std::string& name) {
  NodeId w = g.parameter(layer.weights, name + ".w");
  NodeId b = g.parameter(layer.bias, name + ".b");
  return g.bias_add(g.conv1d(x, w, layer.dilation), b, 1);
}

NodeId emit_dense_layer(Graph& g, const DenseLayer& layer, NodeId x, const std::string& name) {
  NodeId w = g.parameter(layer.weights, name + ".w");
  NodeId b = g.parameter(layer.bias, name + ".b");
  return g.bias_add(g.matmul(x, w, false, true), b, 1);
}

AttentionNodes emit_self_attention(Graph& g, const SelfAttentionBlock& block, NodeId z,
                                   const std::string& name) {
  NodeId wg = g.parameter(block.w_g, name + ".wg");
  NodeId wh = g.parameter(block.w_h, name + ".wh");
  NodeId wd = g.parameter(block.w_d, name + ".wd");
  NodeId gamma = g.parameter(block.gamma, name + ".gamma");
  NodeId gm = g.matmul(wg, z);
  NodeId hm = g.matmul(wh, z);
  NodeId scores = g.softmax(g.matmul(gm, hm, true, false), 1);  // S = A^T
  NodeId dm = g.matmul(wd, z);
  // r[c,m] = sum_j d[c,j] A[j,m] = (d S^T)[c,m]
  NodeId r = g.matmul(dm, scores, false, true);
  AttentionNodes out;
  out.output = g.add(z, g.mul(r, gamma));
  out.scores = scores;
  return out;
}

}  // namespace scanet
