#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scanet/layers.hpp"

namespace scanet {

enum class ModelKind { kScanet, kSgn, kSeq2point, kClassifierOnly };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

// Architecture hyperparameters. Defaults follow the REDD setup; ukdale() and
// reduced() swap in the smaller windows/kernels.
struct ModelConfig {
  int s = 64;   // output sequence length
  int w = 400;  // context pad on each side
  std::vector<int> conv_filters{30, 30, 40, 50, 50, 50};
  std::vector<int> kernel_sizes{10, 8, 6, 5, 5, 5};
  std::vector<int> branch_dilations{1, 2, 3};
  int branch_split_layer = 4;  // 1-based conv layer where branches start
  int merge_filters = 64;      // C, the 1x1 merge conv
  int attention_reduced = 32;  // C-bar
  int fc_hidden = 1024;
  bool use_branches = true;    // multi-scale branches + branch-wise gates
  bool use_attention = true;   // self-attention blocks

  int input_length() const { return s + 2 * w; }
  void validate() const;

  static ModelConfig redd();
  static ModelConfig ukdale();
  // desk-scale: s=32, w=100, filters halved
  static ModelConfig reduced();
};

struct NamedParam {
  std::string name;
  std::shared_ptr<Tensor> value;
};

struct ForwardOptions {
  bool with_taps = false;
  bool bypass_attention = false;            // feed merge output straight to the head
  std::optional<double> override_on_output; // replace o-hat with a constant
  std::optional<double> override_gates;     // replace every branch gate with a constant
};

struct ForwardNodes {
  NodeId x = -1;      // [N,1,s+2w]
  NodeId y_hat = -1;  // [N,s] gated output (scanet/sgn), [N,1] (seq2point)
  NodeId o_hat = -1;  // [N,s] on-state probabilities, -1 for seq2point
  NodeId power = -1;  // [N,s] regression sub-network output, -1 for classifier-only
  std::map<std::string, NodeId> taps;
};

// A NILM network: parameter storage plus a graph emitter. Parameters are
// shared with every graph the model is emitted into, so the optimizer's
// updates are visible to all of them.
class Model {
 public:
  Model(ModelKind kind, ModelConfig config, uint64_t seed);

  ModelKind kind() const { return kind_; }
  const ModelConfig& config() const { return config_; }
  const std::vector<NamedParam>& params() const { return params_; }
  int64_t param_count() const;
  int output_length() const { return kind_ == ModelKind::kSeq2point ? 1 : config_.s; }

  ForwardNodes emit_forward(Graph& g, int batch, const ForwardOptions& opts = {}) const;

  // single-window convenience (builds a throwaway graph)
  struct WindowOutput {
    std::vector<double> y_hat;
    std::vector<double> o_hat;
    std::vector<double> power;
  };
  WindowOutput forward_window(const std::vector<double>& x) const;

 private:
  struct SubNet {
    std::vector<Conv1DLayer> prefix;                 // layers before the split
    std::vector<std::vector<Conv1DLayer>> branches;  // [branch][layer]
    std::optional<Conv1DLayer> merge;                // 1x1 conv to C
    std::optional<SelfAttentionBlock> attention;
    DenseLayer fc1;
    DenseLayer fc2;
  };

  SubNet build_subnet(const std::string& net_name, bool dual_activation, int out_dim,
                      uint64_t seed);
  void register_conv(const std::string& name, const Conv1DLayer& layer);
  void register_dense(const std::string& name, const DenseLayer& layer);
  void register_attention(const std::string& name, const SelfAttentionBlock& block);

  struct SubNetNodes {
    NodeId head = -1;                    // pre-activation head output [N,out]
    std::vector<NodeId> branch_out;      // relu branch ends
    std::vector<NodeId> branch_gate;     // sigmoid branch ends (dual activation)
    NodeId merged = -1;                  // p3 / s3
    NodeId attended = -1;                // p4 / s4
    NodeId attention_scores = -1;        // S = A^T
  };
  SubNetNodes emit_subnet(Graph& g, const SubNet& net, const std::string& net_name, NodeId x,
                          bool dual_activation, const std::vector<NodeId>& gates,
                          const ForwardOptions& opts) const;

  ModelKind kind_;
  ModelConfig config_;
  std::optional<SubNet> power_net_;
  std::optional<SubNet> on_net_;
  std::vector<NamedParam> params_;

  friend class CheckpointIO;
};

// Eq.-style branch gating: p2_j = p1_j (.) s~1_j, elementwise per branch.
std::vector<Tensor> branch_gate(const std::vector<Tensor>& p_branches,
                                const std::vector<Tensor>& s_tilde_branches);

}  // namespace scanet
