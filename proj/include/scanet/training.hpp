#pragma once

#include <functional>

#include "scanet/data.hpp"
#include "scanet/model.hpp"

namespace scanet {

struct CriticConfig {
  int conv_layers = 4;
  int filters = 32;
  int kernel = 3;
  int fc_hidden = 256;
};

struct TrainingConfig {
  double learning_rate = 1e-4;
  int epochs = 5;
  int batch_size = 0;  // 0 = auto: 16 supervised, 32 adversarial
  double lambda_adv = 0.5;
  double lambda_gp = 10.0;
  int n_critic = 5;  // critic updates per generator update
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 1;
  bool adversarial = false;
  AugmentSpec augment;
  CriticConfig critic;

  int effective_batch() const {
    if (batch_size > 0) return batch_size;
    return adversarial ? 32 : 16;
  }
  void validate() const;
};

// WGAN-GP critic: conv stack then a dense head to one unbounded score.
class CriticNet {
 public:
  CriticNet(int input_length, const CriticConfig& config, uint64_t seed);

  // a [N,1,s] -> scores [N,1]
  NodeId emit_score(Graph& g, NodeId a) const;
  const std::vector<NamedParam>& params() const { return params_; }
  int input_length() const { return input_length_; }

 private:
  int input_length_;
  CriticConfig config_;
  std::vector<Conv1DLayer> convs_;
  DenseLayer fc1_;
  DenseLayer fc2_;
  std::vector<NamedParam> params_;
};

// numeric loss helpers (shapes must match)
double mse_loss(const Tensor& y_hat, const Tensor& y);
double bce_loss(const Tensor& o_hat, const Tensor& o);

// graph builders
NodeId emit_mse(Graph& g, NodeId y_hat, NodeId y);

// Mean over the batch of (||grad_a D(a_interp)|| - 1)^2, built on the graph so
// it can be differentiated w.r.t. the critic parameters (second-order path).
struct GradientPenaltyNodes {
  NodeId interp = -1;       // input to bind the interpolated batch to
  NodeId interp_grad = -1;  // grad of sum(D) w.r.t. the interpolated batch
  NodeId penalty = -1;      // scalar
};
GradientPenaltyNodes emit_gradient_penalty(Graph& g, const CriticNet& critic, int batch);

// Numeric forms used by tests and by the operation surface. The interpolation
// draws one u ~ U(0,1) per sample pair from `rng`. The ScoreEmitter overloads
// accept any critic-shaped scoring graph ([N,1,s] -> [N,1]).
using ScoreEmitter = std::function<NodeId(Graph&, NodeId)>;
double gradient_penalty(const ScoreEmitter& score, const Tensor& real, const Tensor& fake,
                        RandomStream& rng);
double gradient_penalty(const CriticNet& critic, const Tensor& real, const Tensor& fake,
                        RandomStream& rng);
double generator_adv_loss_value(const ScoreEmitter& score, const Tensor& fake);
double critic_loss_value(const CriticNet& critic, const Tensor& real, const Tensor& fake,
                         double lambda_gp, RandomStream& rng);
double generator_adv_loss_value(const CriticNet& critic, const Tensor& fake);

class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<std::shared_ptr<Tensor>> params, double learning_rate, double beta1,
                double beta2, double eps);
  // grads aligned with the parameter list; updates parameters in place
  void step(const std::vector<const Tensor*>& grads);
  int64_t step_count() const { return t_; }

 private:
  std::vector<std::shared_ptr<Tensor>> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

struct LossHistoryRow {
  int64_t step = 0;
  double l_output = 0.0;
  double l_on = 0.0;
  double l_adv = 0.0;
  double critic_loss = 0.0;
};

struct TrainResult {
  std::vector<LossHistoryRow> history;
};

using EpochCallback = std::function<void(int epoch, const Model& model)>;

// Supervised or WGAN-GP training over prepared samples. Incomplete trailing
// batches are dropped; per-step rows land in the returned history. Throws on
// an empty dataset and aborts loudly on a non-finite loss.
TrainResult train_model(Model& model, const std::vector<Sample>& data, const TrainingConfig& cfg,
                        const EpochCallback& on_epoch = {});

void write_loss_history_csv(const std::string& path, const std::vector<LossHistoryRow>& rows);

}  // namespace scanet
