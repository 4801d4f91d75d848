#pragma once

#include <memory>

#include "scanet/graph.hpp"
#include "scanet/rng.hpp"

namespace scanet {

// Normal(0, sqrt(2/fan_in)) draws; deterministic for a fixed seed.
Tensor he_normal_init(Shape shape, int64_t fan_in, uint64_t seed);

// Stride-1 dilated 1-D convolution with zero "same" padding: output length
// equals input length. Cross-correlation convention, no kernel flip. Even
// kernels pad floor((K-1)*d/2) left and the remainder right.
struct Conv1DLayer {
  int in_channels = 0;
  int out_channels = 0;
  int kernel_size = 0;
  int dilation = 1;
  std::shared_ptr<Tensor> weights;  // [out, in, kernel]
  std::shared_ptr<Tensor> bias;     // [out]

  static Conv1DLayer create(int in_channels, int out_channels, int kernel_size, int dilation,
                            uint64_t seed);
};

// out[o,t] = bias[o] + sum_{c,k} w[o,c,k] * z_padded[c, t + (k - floor(K/2))*d]
Tensor conv1d_forward(const Conv1DLayer& layer, const Tensor& z);  // z [C,L]

struct DenseLayer {
  int in_dim = 0;
  int out_dim = 0;
  std::shared_ptr<Tensor> weights;  // [out, in]
  std::shared_ptr<Tensor> bias;     // [out]

  static DenseLayer create(int in_dim, int out_dim, uint64_t seed);
};

Tensor dense_forward(const DenseLayer& layer, const Tensor& v);  // v [in] -> [out]

// Self-attention over a [C,L] feature map. W_g, W_h map to a reduced channel
// count, W_d stays at C; all three are kernel-size-1 convolutions without
// bias. gamma starts at exactly 0 so the block is the identity until trained.
struct SelfAttentionBlock {
  int channels = 0;          // C
  int reduced_channels = 0;  // C-bar
  std::shared_ptr<Tensor> w_g;    // [C-bar, C]
  std::shared_ptr<Tensor> w_h;    // [C-bar, C]
  std::shared_ptr<Tensor> w_d;    // [C, C]
  std::shared_ptr<Tensor> gamma;  // [1], init 0

  static SelfAttentionBlock create(int channels, int reduced_channels, uint64_t seed);
};

// A[j,i] = exp(a~_{i,j}) / sum_l exp(a~_{l,j}) with a~ = g(z)^T h(z).
// Every row sums to 1; softmax is stabilized by per-column max subtraction.
Tensor attention_matrix(const SelfAttentionBlock& block, const Tensor& z);  // -> [L,L]

struct AttentionForward {
  Tensor output;     // z + gamma * r, [C,L]
  Tensor attention;  // A, [L,L]
};
AttentionForward self_attention_forward(const SelfAttentionBlock& block, const Tensor& z);

// ---- graph emission --------------------------------------------------------

// conv + bias over [N,C,L] activations (no activation function)
NodeId emit_conv_layer(Graph& g, const Conv1DLayer& layer, NodeId x, const std::string& name);

// dense over [N,in] activations (no activation function)
NodeId emit_dense_layer(Graph& g, const DenseLayer& layer, NodeId x, const std::string& name);

struct AttentionNodes {
  NodeId output = -1;  // [N,C,L]
  NodeId scores = -1;  // S = A^T per batch item, [N,L,L]; columns of A sum to 1
};

AttentionNodes emit_self_attention(Graph& g, const SelfAttentionBlock& block, NodeId z,
                                   const std::string& name);

}  // namespace scanet
