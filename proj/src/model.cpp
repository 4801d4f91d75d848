#include "scanet/model.hpp"

#include <algorithm>

namespace scanet {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kScanet: return "scanet";
    case ModelKind::kSgn: return "sgn";
    case ModelKind::kSeq2point: return "seq2point";
    case ModelKind::kClassifierOnly: return "classifier-only";
  }
  return "?";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "scanet") return ModelKind::kScanet;
  if (name == "sgn") return ModelKind::kSgn;
  if (name == "seq2point") return ModelKind::kSeq2point;
  if (name == "classifier-only" || name == "classifier_only") return ModelKind::kClassifierOnly;
  throw Error("unknown model kind '" + name + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error("invalid model config: " + what); };
  if (s < 1) fail("s must be >= 1");
  if (w < 0) fail("w must be >= 0");
  if (conv_filters.empty()) fail("conv_filters is empty");
  if (conv_filters.size() != kernel_sizes.size()) {
    fail("conv_filters and kernel_sizes must have equal length");
  }
  for (int f : conv_filters) {
    if (f < 1) fail("conv filter counts must be positive");
  }
  for (int k : kernel_sizes) {
    if (k < 1) fail("kernel sizes must be positive");
  }
  if (branch_split_layer < 2 || branch_split_layer > static_cast<int>(conv_filters.size())) {
    fail("branch_split_layer must lie within the conv stack");
  }
  if (branch_dilations.empty()) fail("branch_dilations is empty");
  for (int d : branch_dilations) {
    if (d < 1) fail("branch dilations must be positive");
  }
  if (merge_filters < 1) fail("merge_filters must be positive");
  if (attention_reduced < 1) fail("attention_reduced must be positive");
  if (fc_hidden < 1) fail("fc_hidden must be positive");
}

ModelConfig ModelConfig::redd() { return ModelConfig{}; }

ModelConfig ModelConfig::ukdale() {
  ModelConfig c;
  c.s = 32;
  c.w = 200;
  c.kernel_sizes = {5, 4, 3, 3, 3, 3};
  return c;
}

ModelConfig ModelConfig::reduced() {
  ModelConfig c;
  c.s = 32;
  c.w = 100;
  c.conv_filters = {15, 15, 20, 25, 25, 25};
  c.kernel_sizes = {5, 4, 3, 3, 3, 3};
  c.merge_filters = 32;
  c.attention_reduced = 16;
  c.fc_hidden = 512;
  return c;
}

std::vector<Tensor> branch_gate(const std::vector<Tensor>& p_branches,
                                const std::vector<Tensor>& s_tilde_branches) {
  if (p_branches.size() != s_tilde_branches.size()) {
    throw Error("branch_gate: branch count mismatch");
  }
  std::vector<Tensor> out;
  out.reserve(p_branches.size());
  for (size_t j = 0; j < p_branches.size(); ++j) {
    const Tensor& p = p_branches[j];
    const Tensor& s = s_tilde_branches[j];
    if (!p.same_shape(s)) {
      throw Error("branch_gate: shape mismatch in branch " + std::to_string(j + 1));
    }
    Tensor gated(p.shape());
    for (int64_t i = 0; i < p.size(); ++i) gated.at(i) = p.at(i) * s.at(i);
    out.push_back(std::move(gated));
  }
  return out;
}

void Model::register_conv(const std::string& name, const Conv1DLayer& layer) {
  params_.push_back({name + ".w", layer.weights});
  params_.push_back({name + ".b", layer.bias});
}

void Model::register_dense(const std::string& name, const DenseLayer& layer) {
  params_.push_back({name + ".w", layer.weights});
  params_.push_back({name + ".b", layer.bias});
}

void Model::register_attention(const std::string& name, const SelfAttentionBlock& block) {
  params_.push_back({name + ".wg", block.w_g});
  params_.push_back({name + ".wh", block.w_h});
  params_.push_back({name + ".wd", block.w_d});
  params_.push_back({name + ".gamma", block.gamma});
}

Model::SubNet Model::build_subnet(const std::string& net_name, bool /*dual_activation*/,
                                  int out_dim, uint64_t seed) {
  const ModelConfig& c = config_;
  const int n_layers = static_cast<int>(c.conv_filters.size());
  const int split = c.use_branches ? c.branch_split_layer : n_layers + 1;
  uint64_t counter = 0;
  SubNet net;

  int channels = 1;
  for (int layer = 1; layer < split; ++layer) {
    Conv1DLayer l = Conv1DLayer::create(channels, c.conv_filters[layer - 1],
                                        c.kernel_sizes[layer - 1], 1,
                                        derive_seed(seed, counter++));
    register_conv(net_name + ".conv" + std::to_string(layer), l);
    channels = c.conv_filters[layer - 1];
    net.prefix.push_back(std::move(l));
  }

  int tail_channels = channels;
  if (c.use_branches) {
    for (size_t b = 0; b < c.branch_dilations.size(); ++b) {
      std::vector<Conv1DLayer> branch;
      int ch = channels;
      for (int layer = split; layer <= n_layers; ++layer) {
        Conv1DLayer l = Conv1DLayer::create(ch, c.conv_filters[layer - 1],
                                            c.kernel_sizes[layer - 1], c.branch_dilations[b],
                                            derive_seed(seed, counter++));
        register_conv(net_name + ".br" + std::to_string(b + 1) + ".conv" + std::to_string(layer),
                      l);
        ch = c.conv_filters[layer - 1];
        branch.push_back(std::move(l));
      }
      tail_channels = ch;
      net.branches.push_back(std::move(branch));
    }
    tail_channels *= static_cast<int>(c.branch_dilations.size());
  }

  int head_channels = tail_channels;
  if (c.use_branches || c.use_attention) {
    Conv1DLayer merge = Conv1DLayer::create(tail_channels, c.merge_filters, 1, 1,
                                            derive_seed(seed, counter++));
    register_conv(net_name + ".merge", merge);
    net.merge = std::move(merge);
    head_channels = c.merge_filters;
  }
  if (c.use_attention) {
    SelfAttentionBlock attn = SelfAttentionBlock::create(c.merge_filters, c.attention_reduced,
                                                         derive_seed(seed, counter++));
    register_attention(net_name + ".attn", attn);
    net.attention = std::move(attn);
  }

  const int flat = head_channels * c.input_length();
  net.fc1 = DenseLayer::create(flat, c.fc_hidden, derive_seed(seed, counter++));
  register_dense(net_name + ".fc1", net.fc1);
  net.fc2 = DenseLayer::create(c.fc_hidden, out_dim, derive_seed(seed, counter++));
  register_dense(net_name + ".fc2", net.fc2);
  return net;
}

Model::Model(ModelKind kind, ModelConfig config, uint64_t seed)
    : kind_(kind), config_(std::move(config)) {
  if (kind_ == ModelKind::kSgn || kind_ == ModelKind::kSeq2point) {
    config_.use_branches = false;
    config_.use_attention = false;
  }
  config_.validate();
  switch (kind_) {
    case ModelKind::kScanet:
    case ModelKind::kSgn:
      power_net_ = build_subnet("power", false, config_.s, derive_seed(seed, 0xA0));
      on_net_ = build_subnet("on", true, config_.s, derive_seed(seed, 0xB0));
      break;
    case ModelKind::kClassifierOnly:
      on_net_ = build_subnet("on", true, config_.s, derive_seed(seed, 0xB0));
      break;
    case ModelKind::kSeq2point:
      power_net_ = build_subnet("net", false, 1, derive_seed(seed, 0xA0));
      break;
  }
}

int64_t Model::param_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.value->size();
  return n;
}

Model::SubNetNodes Model::emit_subnet(Graph& g, const SubNet& net, const std::string& net_name,
                                      NodeId x, bool dual_activation,
                                      const std::vector<NodeId>& gates,
                                      const ForwardOptions& opts) const {
  const ModelConfig& c = config_;
  SubNetNodes out;

  NodeId h = x;
  int layer_no = 1;
  for (const Conv1DLayer& l : net.prefix) {
    h = g.relu(emit_conv_layer(g, l, h, net_name + ".conv" + std::to_string(layer_no)));
    ++layer_no;
  }

  std::vector<NodeId> branch_feats;
  if (c.use_branches) {
    for (size_t b = 0; b < net.branches.size(); ++b) {
      NodeId bh = h;
      const auto& branch = net.branches[b];
      for (size_t li = 0; li < branch.size(); ++li) {
        const std::string name = net_name + ".br" + std::to_string(b + 1) + ".conv" +
                                 std::to_string(layer_no + static_cast<int>(li));
        NodeId pre = emit_conv_layer(g, branch[li], bh, name);
        if (li + 1 < branch.size()) {
          bh = g.relu(pre);
        } else {
          // branch end: relu features always; sigmoid gates when dual
          out.branch_out.push_back(g.relu(pre));
          if (dual_activation) {
            NodeId gate = g.sigmoid(pre);
            if (opts.override_gates) {
              gate = g.constant(Tensor::full(g.shape_of(gate), *opts.override_gates));
            }
            out.branch_gate.push_back(gate);
          }
        }
      }
    }
    // gated regression branches: p2_j = p1_j (.) s~1_j
    if (!gates.empty()) {
      for (size_t b = 0; b < out.branch_out.size(); ++b) {
        branch_feats.push_back(g.mul(out.branch_out[b], gates[b]));
      }
    } else {
      branch_feats = out.branch_out;
    }
    h = g.concat(branch_feats, 1);
  }

  if (net.merge) {
    h = g.relu(emit_conv_layer(g, *net.merge, h, net_name + ".merge"));
  }
  out.merged = h;

  NodeId headed = h;
  if (net.attention && !opts.bypass_attention) {
    AttentionNodes attn = emit_self_attention(g, *net.attention, h, net_name + ".attn");
    headed = attn.output;
    out.attention_scores = attn.scores;
  } else if (net.attention && opts.bypass_attention) {
    // parameters still registered so checkpoints stay complete
    AttentionNodes attn = emit_self_attention(g, *net.attention, h, net_name + ".attn");
    out.attention_scores = attn.scores;
    headed = h;
  }
  out.attended = headed;

  const Shape& hs = g.shape_of(headed);
  NodeId flat = g.reshape(headed, {hs[0], hs[1] * hs[2]});
  NodeId fc1 = g.relu(emit_dense_layer(g, net.fc1, flat, net_name + ".fc1"));
  out.head = emit_dense_layer(g, net.fc2, fc1, net_name + ".fc2");
  return out;
}

ForwardNodes Model::emit_forward(Graph& g, int batch, const ForwardOptions& opts) const {
  if (batch < 1) throw Error("emit_forward: batch must be >= 1");
  const int64_t len = config_.input_length();
  ForwardNodes out;
  out.x = g.input({batch, 1, len}, "x");

  if (kind_ == ModelKind::kSeq2point) {
    SubNetNodes net = emit_subnet(g, *power_net_, "net", out.x, false, {}, opts);
    out.power = net.head;
    out.y_hat = net.head;  // linear scalar output
    return out;
  }

  SubNetNodes on_nodes = emit_subnet(g, *on_net_, "on", out.x, true, {}, opts);
  NodeId o_hat = g.sigmoid(on_nodes.head);
  if (opts.override_on_output) {
    o_hat = g.constant(Tensor::full(g.shape_of(o_hat), *opts.override_on_output));
  }
  out.o_hat = o_hat;

  if (kind_ == ModelKind::kClassifierOnly) {
    out.y_hat = o_hat;
  } else {
    SubNetNodes power_nodes =
        emit_subnet(g, *power_net_, "power", out.x, false, on_nodes.branch_gate, opts);
    out.power = power_nodes.head;
    out.y_hat = g.mul(o_hat, power_nodes.head);  // Eq.-style output gating
    if (opts.with_taps) {
      for (size_t b = 0; b < power_nodes.branch_out.size(); ++b) {
        out.taps["p1_" + std::to_string(b + 1)] = power_nodes.branch_out[b];
      }
      if (power_nodes.merged >= 0) out.taps["p3"] = power_nodes.merged;
      if (power_nodes.attended >= 0) out.taps["p4"] = power_nodes.attended;
      if (power_nodes.attention_scores >= 0) out.taps["att_p"] = power_nodes.attention_scores;
    }
  }

  if (opts.with_taps) {
    for (size_t b = 0; b < on_nodes.branch_out.size(); ++b) {
      out.taps["s1_" + std::to_string(b + 1)] = on_nodes.branch_out[b];
      if (b < on_nodes.branch_gate.size()) {
        out.taps["s1t_" + std::to_string(b + 1)] = on_nodes.branch_gate[b];
      }
    }
    if (on_nodes.merged >= 0) out.taps["s3"] = on_nodes.merged;
    if (on_nodes.attended >= 0) out.taps["s4"] = on_nodes.attended;
    if (on_nodes.attention_scores >= 0) out.taps["att_s"] = on_nodes.attention_scores;
    out.taps["o_hat"] = out.o_hat;
    if (out.power >= 0) out.taps["power"] = out.power;
  }
  return out;
}

Model::WindowOutput Model::forward_window(const std::vector<double>& x) const {
  const int64_t len = config_.input_length();
  if (static_cast<int64_t>(x.size()) != len) {
    throw Error("forward_window: expected " + std::to_string(len) + " values, got " +
                std::to_string(x.size()));
  }
  Graph g;
  ForwardNodes nodes = emit_forward(g, 1);
  g.bind(nodes.x, Tensor({1, 1, len}, std::vector<double>(x)));
  std::vector<NodeId> want{nodes.y_hat};
  if (nodes.o_hat >= 0) want.push_back(nodes.o_hat);
  if (nodes.power >= 0) want.push_back(nodes.power);
  g.eval_many(want);
  WindowOutput out;
  const Tensor& y = g.value(nodes.y_hat);
  out.y_hat.assign(y.data(), y.data() + y.size());
  if (nodes.o_hat >= 0) {
    const Tensor& o = g.value(nodes.o_hat);
    out.o_hat.assign(o.data(), o.data() + o.size());
  }
  if (nodes.power >= 0) {
    const Tensor& p = g.value(nodes.power);
    out.power.assign(p.data(), p.data() + p.size());
  }
  return out;
}

}  // namespace scanet
