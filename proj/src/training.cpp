#include "scanet/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

namespace scanet {

void TrainingConfig::validate() const {
  if (learning_rate <= 0.0) throw Error("training config: learning_rate must be positive");
  if (epochs < 1) throw Error("training config: epochs must be >= 1");
  if (batch_size < 0) throw Error("training config: batch_size must be >= 0");
  if (lambda_adv < 0.0) throw Error("training config: lambda_adv must be >= 0");
  if (lambda_gp < 0.0) throw Error("training config: lambda_gp must be >= 0");
  if (n_critic < 1) throw Error("training config: n_critic must be >= 1");
  augment.validate();
}

CriticNet::CriticNet(int input_length, const CriticConfig& config, uint64_t seed)
    : input_length_(input_length), config_(config) {
  if (input_length < 1) throw Error("critic: input length must be >= 1");
  int channels = 1;
  for (int i = 0; i < config_.conv_layers; ++i) {
    Conv1DLayer l = Conv1DLayer::create(channels, config_.filters, config_.kernel, 1,
                                        derive_seed(seed, static_cast<uint64_t>(i)));
    const std::string name = "critic.conv" + std::to_string(i + 1);
    params_.push_back({name + ".w", l.weights});
    params_.push_back({name + ".b", l.bias});
    channels = config_.filters;
    convs_.push_back(std::move(l));
  }
  fc1_ = DenseLayer::create(channels * input_length, config_.fc_hidden, derive_seed(seed, 100));
  params_.push_back({"critic.fc1.w", fc1_.weights});
  params_.push_back({"critic.fc1.b", fc1_.bias});
  fc2_ = DenseLayer::create(config_.fc_hidden, 1, derive_seed(seed, 101));
  params_.push_back({"critic.fc2.w", fc2_.weights});
  params_.push_back({"critic.fc2.b", fc2_.bias});
}

NodeId CriticNet::emit_score(Graph& g, NodeId a) const {
  const Shape& s = g.shape_of(a);
  if (s.size() != 3 || s[1] != 1 || s[2] != input_length_) {
    throw Error("critic: expected [N,1," + std::to_string(input_length_) + "] input, got " +
                shape_str(s));
  }
  NodeId h = a;
  for (size_t i = 0; i < convs_.size(); ++i) {
    h = g.relu(emit_conv_layer(g, convs_[i], h, "critic.conv" + std::to_string(i + 1)));
  }
  const Shape& hs = g.shape_of(h);
  NodeId flat = g.reshape(h, {hs[0], hs[1] * hs[2]});
  NodeId fc1 = g.relu(emit_dense_layer(g, fc1_, flat, "critic.fc1"));
  return emit_dense_layer(g, fc2_, fc1, "critic.fc2");  // unbounded score
}

double mse_loss(const Tensor& y_hat, const Tensor& y) {
  if (!y_hat.same_shape(y)) throw Error("mse_loss: shape mismatch");
  double acc = 0.0;
  for (int64_t i = 0; i < y_hat.size(); ++i) {
    const double d = y_hat.at(i) - y.at(i);
    acc += d * d;
  }
  return acc / static_cast<double>(y_hat.size());
}

double bce_loss(const Tensor& o_hat, const Tensor& o) {
  if (!o_hat.same_shape(o)) throw Error("bce_loss: shape mismatch");
  double acc = 0.0;
  for (int64_t i = 0; i < o_hat.size(); ++i) {
    const double target = o.at(i);
    if (target != 0.0 && target != 1.0) throw Error("bce_loss: target outside {0,1}");
    const double p = std::clamp(o_hat.at(i), 1e-7, 1.0 - 1e-7);
    acc -= target * std::log(p) + (1.0 - target) * std::log(1.0 - p);
  }
  return acc / static_cast<double>(o_hat.size());
}

NodeId emit_mse(Graph& g, NodeId y_hat, NodeId y) {
  return g.mean(g.square(g.sub(y_hat, y)));
}

GradientPenaltyNodes emit_gradient_penalty(Graph& g, const CriticNet& critic, int batch) {
  const int64_t s = critic.input_length();
  GradientPenaltyNodes out;
  out.interp = g.input({batch, 1, s}, "a_interp");
  NodeId score = critic.emit_score(g, out.interp);  // [N,1]
  NodeId score_sum = g.sum(score);
  out.interp_grad = g.input_gradient(score_sum, out.interp);  // [N,1,s]
  NodeId sum_sq = g.matmul(g.square(out.interp_grad), g.constant(Tensor::full({s, 1}, 1.0)));
  // +1e-12 keeps sqrt differentiable when the critic is flat
  NodeId norm = g.sqrt(g.add(sum_sq, g.constant(1e-12)));
  out.penalty = g.mean(g.square(g.sub(norm, g.constant(1.0))));
  return out;
}

namespace {

Tensor interpolate_pairs(const Tensor& real, const Tensor& fake, RandomStream& rng) {
  if (!real.same_shape(fake)) throw Error("gradient_penalty: batch shape mismatch");
  const int64_t batch = real.dim(0);
  const int64_t stride = real.size() / batch;
  Tensor out(real.shape());
  for (int64_t n = 0; n < batch; ++n) {
    const double u = rng.uniform();
    for (int64_t i = 0; i < stride; ++i) {
      const int64_t idx = n * stride + i;
      out.at(idx) = u * real.at(idx) + (1.0 - u) * fake.at(idx);
    }
  }
  return out;
}

Tensor as_batch3(const Tensor& t) {
  if (t.rank() == 3) return t;
  if (t.rank() == 2) {
    return Tensor({t.dim(0), 1, t.dim(1)},
                  std::vector<double>(t.data(), t.data() + t.size()));
  }
  throw Error("expected [N,s] or [N,1,s] batch, got " + shape_str(t.shape()));
}

}  // namespace

namespace {

NodeId emit_penalty_for(Graph& g, const ScoreEmitter& score, NodeId interp, int64_t s) {
  NodeId score_sum = g.sum(score(g, interp));
  NodeId interp_grad = g.input_gradient(score_sum, interp);
  NodeId sum_sq = g.matmul(g.square(interp_grad), g.constant(Tensor::full({s, 1}, 1.0)));
  NodeId norm = g.sqrt(g.add(sum_sq, g.constant(1e-12)));
  return g.mean(g.square(g.sub(norm, g.constant(1.0))));
}

}  // namespace

double gradient_penalty(const ScoreEmitter& score, const Tensor& real, const Tensor& fake,
                        RandomStream& rng) {
  const Tensor r3 = as_batch3(real);
  const Tensor f3 = as_batch3(fake);
  Graph g;
  NodeId interp = g.input(r3.shape(), "a_interp");
  NodeId penalty = emit_penalty_for(g, score, interp, r3.dim(2));
  g.bind(interp, interpolate_pairs(r3, f3, rng));
  return g.eval(penalty).item();
}

double gradient_penalty(const CriticNet& critic, const Tensor& real, const Tensor& fake,
                        RandomStream& rng) {
  const Tensor r3 = as_batch3(real);
  const Tensor f3 = as_batch3(fake);
  Graph g;
  GradientPenaltyNodes nodes = emit_gradient_penalty(g, critic, static_cast<int>(r3.dim(0)));
  g.bind(nodes.interp, interpolate_pairs(r3, f3, rng));
  return g.eval(nodes.penalty).item();
}

double generator_adv_loss_value(const ScoreEmitter& score, const Tensor& fake) {
  const Tensor f3 = as_batch3(fake);
  Graph g;
  NodeId a = g.input(f3.shape(), "a_fake");
  NodeId loss = g.scale(g.mean(score(g, a)), -1.0);
  g.bind(a, f3);
  return g.eval(loss).item();
}

double critic_loss_value(const CriticNet& critic, const Tensor& real, const Tensor& fake,
                         double lambda_gp, RandomStream& rng) {
  const Tensor r3 = as_batch3(real);
  const Tensor f3 = as_batch3(fake);
  Graph g;
  NodeId a_real = g.input(r3.shape(), "a_real");
  NodeId a_fake = g.input(f3.shape(), "a_fake");
  NodeId w_dist = g.sub(g.mean(critic.emit_score(g, a_fake)), g.mean(critic.emit_score(g, a_real)));
  GradientPenaltyNodes gp = emit_gradient_penalty(g, critic, static_cast<int>(r3.dim(0)));
  NodeId loss = g.add(w_dist, g.scale(gp.penalty, lambda_gp));
  g.bind(a_real, r3);
  g.bind(a_fake, f3);
  g.bind(gp.interp, interpolate_pairs(r3, f3, rng));
  return g.eval(loss).item();
}

double generator_adv_loss_value(const CriticNet& critic, const Tensor& fake) {
  const Tensor f3 = as_batch3(fake);
  Graph g;
  NodeId a = g.input(f3.shape(), "a_fake");
  NodeId loss = g.scale(g.mean(critic.emit_score(g, a)), -1.0);
  g.bind(a, f3);
  return g.eval(loss).item();
}

AdamOptimizer::AdamOptimizer(std::vector<std::shared_ptr<Tensor>> params, double learning_rate,
                             double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p->shape());
    v_.emplace_back(p->shape());
  }
}

void AdamOptimizer::step(const std::vector<const Tensor*>& grads) {
  if (grads.size() != params_.size()) throw Error("adam: gradient count mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = *params_[k];
    const Tensor& g = *grads[k];
    if (!p.same_shape(g)) throw Error("adam: gradient shape mismatch for parameter " + std::to_string(k));
    double* pm = m_[k].data();
    double* pv = v_[k].data();
    double* pp = p.data();
    const double* pg = g.data();
    for (int64_t i = 0, e = p.size(); i < e; ++i) {
      pm[i] = beta1_ * pm[i] + (1.0 - beta1_) * pg[i];
      pv[i] = beta2_ * pv[i] + (1.0 - beta2_) * pg[i] * pg[i];
      const double m_hat = pm[i] / bc1;
      const double v_hat = pv[i] / bc2;
      pp[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

namespace {

struct GenGraph {
  Graph g;
  ForwardNodes fwd;
  NodeId y_target = -1;
  NodeId o_target = -1;
  NodeId l_output = -1;
  NodeId l_on = -1;
  NodeId l_adv = -1;
  NodeId total = -1;
  std::vector<NodeId> grad_nodes;                  // aligned with storages
  std::vector<std::shared_ptr<Tensor>> storages;   // model parameters only
  std::vector<NodeId> eval_set;                    // grads + loss components
};

struct CriticGraph {
  Graph g;
  NodeId real = -1;
  NodeId fake = -1;
  NodeId loss = -1;
  GradientPenaltyNodes gp;
  std::vector<NodeId> grad_nodes;
  std::vector<std::shared_ptr<Tensor>> storages;
  std::vector<NodeId> eval_set;
};

}  // namespace

TrainResult train_model(Model& model, const std::vector<Sample>& data, const TrainingConfig& cfg,
                        const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.empty()) throw Error("train: empty dataset");
  const bool adversarial = cfg.adversarial && cfg.lambda_adv > 0.0;
  if (adversarial &&
      (model.kind() == ModelKind::kClassifierOnly || model.kind() == ModelKind::kSeq2point)) {
    throw Error("train: adversarial loss needs length-s power outputs; " +
                to_string(model.kind()) + " has none");
  }
  const bool classification_only = model.kind() == ModelKind::kClassifierOnly;
  const bool seq2point = model.kind() == ModelKind::kSeq2point;
  const int batch = cfg.effective_batch();
  if (static_cast<size_t>(batch) > data.size()) {
    throw Error("train: batch size " + std::to_string(batch) + " exceeds dataset size " +
                std::to_string(data.size()));
  }
  const int s = model.config().s;
  const int64_t x_len = model.config().input_length();
  const int out_len = model.output_length();

  // sanity: samples must match the model window
  if (static_cast<int64_t>(data.front().x.size()) != x_len ||
      static_cast<int>(data.front().y.size()) != s) {
    throw Error("train: sample window (s=" + std::to_string(data.front().y.size()) +
                ", len=" + std::to_string(data.front().x.size()) +
                ") does not match the model config");
  }

  std::optional<CriticNet> critic;
  if (adversarial) critic.emplace(s, cfg.critic, derive_seed(cfg.seed, 0xC817));

  // generator graph
  GenGraph gen;
  gen.fwd = model.emit_forward(gen.g, batch);
  std::vector<NodeId> loss_parts;
  if (!classification_only) {
    gen.y_target = gen.g.input({batch, out_len}, "y");
    gen.l_output = emit_mse(gen.g, gen.fwd.y_hat, gen.y_target);
    loss_parts.push_back(gen.l_output);
  }
  if (!seq2point) {
    gen.o_target = gen.g.input({batch, s}, "o");
    gen.l_on = gen.g.bce(gen.fwd.o_hat, gen.o_target);
    loss_parts.push_back(gen.l_on);
  }
  if (adversarial) {
    NodeId fake3 = gen.g.reshape(gen.fwd.y_hat, {batch, 1, s});
    gen.l_adv = gen.g.scale(gen.g.mean(critic->emit_score(gen.g, fake3)), -1.0);
    loss_parts.push_back(gen.g.scale(gen.l_adv, cfg.lambda_adv));
  }
  gen.total = loss_parts.front();
  for (size_t i = 1; i < loss_parts.size(); ++i) gen.total = gen.g.add(gen.total, loss_parts[i]);

  // pick out the model's own parameters (the graph may also hold critic ones)
  {
    std::unordered_set<const Tensor*> own;
    for (const auto& p : model.params()) own.insert(p.value.get());
    std::vector<NodeId> targets;
    for (NodeId pid : gen.g.parameters()) {
      const auto& node = gen.g.node(pid);
      if (own.count(node.param.get())) {
        targets.push_back(pid);
        gen.storages.push_back(node.param);
      }
    }
    gen.grad_nodes = gen.g.gradient_nodes(gen.total, targets);
  }
  gen.eval_set = gen.grad_nodes;
  if (gen.l_output >= 0) gen.eval_set.push_back(gen.l_output);
  if (gen.l_on >= 0) gen.eval_set.push_back(gen.l_on);
  if (gen.l_adv >= 0) gen.eval_set.push_back(gen.l_adv);
  gen.eval_set.push_back(gen.total);

  AdamOptimizer gen_opt(gen.storages, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                        cfg.adam_eps);

  // critic graph
  std::optional<CriticGraph> cg;
  std::optional<AdamOptimizer> critic_opt;
  if (adversarial) {
    cg.emplace();
    cg->real = cg->g.input({batch, 1, s}, "a_real");
    cg->fake = cg->g.input({batch, 1, s}, "a_fake");
    NodeId w_dist = cg->g.sub(cg->g.mean(critic->emit_score(cg->g, cg->fake)),
                              cg->g.mean(critic->emit_score(cg->g, cg->real)));
    cg->gp = emit_gradient_penalty(cg->g, *critic, batch);
    cg->loss = cg->g.add(w_dist, cg->g.scale(cg->gp.penalty, cfg.lambda_gp));
    std::vector<NodeId> targets = cg->g.parameters();
    for (NodeId pid : targets) cg->storages.push_back(cg->g.node(pid).param);
    cg->grad_nodes = cg->g.gradient_nodes(cg->loss, targets);
    cg->eval_set = cg->grad_nodes;
    cg->eval_set.push_back(cg->loss);
    critic_opt.emplace(cg->storages, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                       cfg.adam_eps);
  }

  TrainResult result;
  const int64_t n = static_cast<int64_t>(data.size());
  int64_t step = 0;
  RandomStream interp_rng(derive_seed(cfg.seed, 0x11E8));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int64_t> order(n);
    for (int64_t i = 0; i < n; ++i) order[i] = i;
    RandomStream shuffle_rng(derive_seed(cfg.seed, 0xE000 + static_cast<uint64_t>(epoch)));
    for (int64_t i = n - 1; i > 0; --i) {
      const int64_t j = shuffle_rng.uniform_int(i + 1);
      std::swap(order[i], order[j]);
    }

    for (int64_t start = 0; start + batch <= n; start += batch) {
      Tensor xb({batch, 1, x_len});
      Tensor yb({batch, out_len});
      Tensor ob({batch, s});
      for (int bi = 0; bi < batch; ++bi) {
        const int64_t idx = order[start + bi];
        Sample sample = data[idx];
        if (cfg.augment.enabled()) {
          RandomStream aug_rng(derive_seed(derive_seed(cfg.seed, 0xA7000 + epoch),
                                           static_cast<uint64_t>(idx)));
          sample = on_state_augment(std::move(sample), cfg.augment, aug_rng);
        }
        std::copy(sample.x.begin(), sample.x.end(), xb.data() + bi * x_len);
        if (seq2point) {
          yb.at(bi) = sample.y[static_cast<size_t>(s / 2)];
        } else {
          std::copy(sample.y.begin(), sample.y.end(), yb.data() + bi * s);
        }
        for (int i = 0; i < s; ++i) ob.at2(bi, i) = sample.o[i] ? 1.0 : 0.0;
      }

      gen.g.bind(gen.fwd.x, std::move(xb));
      if (gen.y_target >= 0) gen.g.bind(gen.y_target, yb);
      if (gen.o_target >= 0) gen.g.bind(gen.o_target, std::move(ob));

      double critic_loss = 0.0;
      if (adversarial) {
        const Tensor fake = gen.g.eval(gen.fwd.y_hat);  // detached copy
        Tensor real3({batch, 1, s}, std::vector<double>(yb.data(), yb.data() + yb.size()));
        Tensor fake3({batch, 1, s},
                     std::vector<double>(fake.data(), fake.data() + fake.size()));
        for (int c = 0; c < cfg.n_critic; ++c) {
          cg->g.bind(cg->real, real3);
          cg->g.bind(cg->fake, fake3);
          cg->g.bind(cg->gp.interp, interpolate_pairs(real3, fake3, interp_rng));
          cg->g.eval_many(cg->eval_set);
          critic_loss = cg->g.value(cg->loss).item();
          if (!std::isfinite(critic_loss)) {
            throw Error("train: non-finite critic loss at step " + std::to_string(step));
          }
          std::vector<const Tensor*> grads;
          grads.reserve(cg->grad_nodes.size());
          for (NodeId id : cg->grad_nodes) grads.push_back(&cg->g.value(id));
          critic_opt->step(grads);
        }
      }

      gen.g.eval_many(gen.eval_set);
      LossHistoryRow row;
      row.step = step;
      row.l_output = gen.l_output >= 0 ? gen.g.value(gen.l_output).item() : 0.0;
      row.l_on = gen.l_on >= 0 ? gen.g.value(gen.l_on).item() : 0.0;
      row.l_adv = gen.l_adv >= 0 ? gen.g.value(gen.l_adv).item() : 0.0;
      row.critic_loss = critic_loss;
      if (!std::isfinite(row.l_output) || !std::isfinite(row.l_on) || !std::isfinite(row.l_adv)) {
        throw Error("train: non-finite loss at step " + std::to_string(step));
      }
      std::vector<const Tensor*> grads;
      grads.reserve(gen.grad_nodes.size());
      for (NodeId id : gen.grad_nodes) grads.push_back(&gen.g.value(id));
      gen_opt.step(grads);
      result.history.push_back(row);
      ++step;
    }
    if (on_epoch) on_epoch(epoch + 1, model);
  }
  return result;
}

void write_loss_history_csv(const std::string& path, const std::vector<LossHistoryRow>& rows) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os << "step,l_output,l_on,l_adv,critic_loss\n";
  for (const auto& r : rows) {
    os << r.step << "," << fmt17(r.l_output) << "," << fmt17(r.l_on) << "," << fmt17(r.l_adv)
       << "," << fmt17(r.critic_loss) << "\n";
  }
  if (!os) throw Error("write failed for '" + path + "'");
}

}  // namespace scanet
