#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "scanet/training.hpp"

using namespace scanet;

namespace {

ModelConfig mini_config() {
  ModelConfig c;
  c.s = 8;
  c.w = 4;  // input length 16
  c.conv_filters = {3, 3, 4, 4, 4, 4};
  c.kernel_sizes = {3, 3, 3, 3, 3, 3};
  c.merge_filters = 6;
  c.attention_reduced = 3;
  c.fc_hidden = 12;
  return c;
}

// square-wave appliance riding on a small base load, already normalized
std::vector<Sample> square_wave_samples(int count, double on_level = 0.5) {
  const int64_t len = count + 64;
  std::vector<double> app(len, 0.0);
  for (int64_t t = 0; t < len; ++t) {
    if (t % 20 < 8) app[t] = on_level;
  }
  std::vector<double> agg(len);
  for (int64_t t = 0; t < len; ++t) agg[t] = app[t] + 0.05;
  std::vector<uint8_t> on(len);
  for (int64_t t = 0; t < len; ++t) on[t] = app[t] > 0.0 ? 1 : 0;
  WindowSpec spec;
  spec.s = 8;
  spec.w = 4;
  spec.train_step = 1;
  auto samples = make_windows(agg, app, on, spec);
  samples.resize(static_cast<size_t>(count));
  return samples;
}

ScoreEmitter linear_critic(const Tensor& w) {
  return [w](Graph& g, NodeId a) {
    const Shape& s = g.shape_of(a);
    return g.matmul(g.reshape(a, {s[0], s[2]}), g.constant(w));  // [N,1]
  };
}

}  // namespace

TEST_SUITE_BEGIN("training");

TEST_CASE("mse: zero, hand value, homogeneity") {
  CHECK(mse_loss(Tensor({2}, {1, 3}), Tensor({2}, {1, 3})) == 0.0);
  CHECK(mse_loss(Tensor({2}, {0, 0}), Tensor({2}, {1, 3})) == doctest::Approx(5.0));
  const double base = mse_loss(Tensor({2}, {1, 2}), Tensor({2}, {3, 5}));
  const double twice = mse_loss(Tensor({2}, {2, 4}), Tensor({2}, {6, 10}));
  CHECK(twice == doctest::Approx(4.0 * base));
  CHECK_THROWS_AS(mse_loss(Tensor({2}), Tensor({3})), Error);
}

TEST_CASE("bce: hand values and target validation") {
  CHECK(bce_loss(Tensor({1}, {0.5}), Tensor({1}, {1.0})) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce_loss(Tensor({1}, {1.0}), Tensor({1}, {1.0})) < 1e-6);  // clamp-scale loss
  CHECK(bce_loss(Tensor({2}, {0.9, 0.1}), Tensor({2}, {1.0, 0.0})) ==
        doctest::Approx(-std::log(0.9)).epsilon(1e-12));
  CHECK_THROWS_AS(bce_loss(Tensor({1}, {0.5}), Tensor({1}, {0.5})), Error);
}

TEST_CASE("gradient penalty: unit-norm linear critic has zero penalty") {
  RandomStream rng(9);
  Tensor w({6, 1});
  w.at(0) = 1.0;  // ||w|| = 1
  Tensor real({2, 1, 6});
  Tensor fake({2, 1, 6});
  for (int64_t i = 0; i < real.size(); ++i) {
    real.at(i) = rng.uniform(-1, 1);
    fake.at(i) = rng.uniform(-1, 1);
  }
  CHECK(gradient_penalty(linear_critic(w), real, fake, rng) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("gradient penalty: norm-3 linear critic pays (3-1)^2") {
  RandomStream rng(10);
  Tensor w({4, 1});
  w.at(0) = 3.0;
  Tensor real({3, 1, 4});
  Tensor fake({3, 1, 4});
  for (int64_t i = 0; i < real.size(); ++i) {
    real.at(i) = rng.uniform(-1, 1);
    fake.at(i) = rng.uniform(-1, 1);
  }
  CHECK(gradient_penalty(linear_critic(w), real, fake, rng) == doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("gradient penalty parameter gradients match second-order finite differences") {
  CriticConfig cc;
  cc.conv_layers = 2;
  cc.filters = 3;
  cc.fc_hidden = 8;
  CriticNet critic(8, cc, 77);
  Graph g;
  GradientPenaltyNodes gp = emit_gradient_penalty(g, critic, 2);
  RandomStream rng(5);
  Tensor interp({2, 1, 8});
  for (int64_t i = 0; i < interp.size(); ++i) interp.at(i) = rng.uniform(-1, 1);
  g.bind(gp.interp, interp);
  for (NodeId p : g.parameters()) {
    CAPTURE(g.describe(p));
    CHECK(g.finite_difference_check(gp.penalty, p, 1e-5) < 1e-3);
  }
}

TEST_CASE("critic loss: zeroed critic with lambda 1 costs exactly the unit penalty") {
  CriticConfig cc;
  cc.conv_layers = 2;
  cc.filters = 2;
  cc.fc_hidden = 4;
  CriticNet critic(6, cc, 3);
  for (const auto& p : critic.params()) p.value->fill(0.0);  // D == 0 everywhere
  RandomStream rng(4);
  Tensor real({2, 1, 6});
  Tensor fake({2, 1, 6});
  for (int64_t i = 0; i < real.size(); ++i) {
    real.at(i) = rng.uniform(0, 1);
    fake.at(i) = rng.uniform(0, 1);
  }
  // 0 - 0 + 1 * (0 - 1)^2
  CHECK(critic_loss_value(critic, real, fake, 1.0, rng) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("critic loss: identical batches with no penalty cost zero") {
  CriticConfig cc;
  cc.conv_layers = 2;
  cc.filters = 2;
  cc.fc_hidden = 4;
  CriticNet critic(6, cc, 13);
  RandomStream rng(6);
  Tensor real({2, 1, 6});
  for (int64_t i = 0; i < real.size(); ++i) real.at(i) = rng.uniform(0, 1);
  CHECK(critic_loss_value(critic, real, real, 0.0, rng) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("a trained critic separates real from fake") {
  CriticConfig cc;
  cc.conv_layers = 2;
  cc.filters = 4;
  cc.fc_hidden = 8;
  const int s = 6, batch = 8;
  CriticNet critic(s, cc, 21);

  Graph g;
  NodeId real_in = g.input({batch, 1, s});
  NodeId fake_in = g.input({batch, 1, s});
  NodeId mean_real = g.mean(critic.emit_score(g, real_in));
  NodeId mean_fake = g.mean(critic.emit_score(g, fake_in));
  NodeId w_dist = g.sub(mean_fake, mean_real);
  GradientPenaltyNodes gp = emit_gradient_penalty(g, critic, batch);
  NodeId loss = g.add(w_dist, g.scale(gp.penalty, 10.0));
  std::vector<NodeId> targets = g.parameters();
  std::vector<NodeId> grads = g.gradient_nodes(loss, targets);
  std::vector<std::shared_ptr<Tensor>> storages;
  for (NodeId pid : targets) storages.push_back(g.node(pid).param);
  AdamOptimizer opt(storages, 1e-3, 0.9, 0.999, 1e-8);

  RandomStream rng(31);
  auto make_batch = [&](double level) {
    Tensor t({batch, 1, s});
    for (int64_t i = 0; i < t.size(); ++i) t.at(i) = level + 0.05 * rng.uniform(-1, 1);
    return t;
  };
  for (int iter = 0; iter < 150; ++iter) {
    Tensor real = make_batch(1.0);
    Tensor fake = make_batch(0.0);
    g.bind(gp.interp, [&] {
      Tensor t({batch, 1, s});
      for (int64_t n = 0; n < batch; ++n) {
        const double u = rng.uniform();
        for (int64_t i = 0; i < s; ++i) {
          t.at(n * s + i) = u * real.at(n * s + i) + (1 - u) * fake.at(n * s + i);
        }
      }
      return t;
    }());
    g.bind(real_in, std::move(real));
    g.bind(fake_in, std::move(fake));
    std::vector<NodeId> eval_set = grads;
    eval_set.push_back(mean_real);
    eval_set.push_back(mean_fake);
    g.eval_many(eval_set);
    std::vector<const Tensor*> gptrs;
    for (NodeId id : grads) gptrs.push_back(&g.value(id));
    opt.step(gptrs);
  }
  g.bind(real_in, make_batch(1.0));
  g.bind(fake_in, make_batch(0.0));
  const NodeId want[] = {mean_real, mean_fake};
  g.eval_many(want);
  CHECK(g.value(mean_real).item() > g.value(mean_fake).item());
}

TEST_CASE("generator adversarial loss: hand values") {
  CriticConfig cc;
  cc.conv_layers = 2;
  cc.filters = 2;
  cc.fc_hidden = 4;
  CriticNet zeroed(4, cc, 3);
  for (const auto& p : zeroed.params()) p.value->fill(0.0);
  Tensor fake({1, 1, 4}, {0.3, -0.2, 0.9, 0.1});
  CHECK(generator_adv_loss_value(zeroed, fake) == doctest::Approx(0.0));

  // D(a) = sum(a): -E[D(fake)] with fake=[[1,2]] is -3
  Tensor w({2, 1}, {1.0, 1.0});
  Tensor fake2({1, 1, 2}, {1.0, 2.0});
  CHECK(generator_adv_loss_value(linear_critic(w), fake2) == doctest::Approx(-3.0));
}

TEST_CASE("adam: first step moves by about minus the learning rate") {
  auto p = std::make_shared<Tensor>(Shape{1});
  p->at(0) = 2.0;
  const double lr = 0.05;
  AdamOptimizer opt({p}, lr, 0.9, 0.999, 1e-8);
  Tensor g({1}, {1.0});
  opt.step({&g});
  CHECK(std::fabs((p->at(0) - 2.0) + lr) < lr * 1e-6);
}

TEST_CASE("adam: zero gradients leave parameters untouched") {
  auto p = std::make_shared<Tensor>(Shape{3});
  p->at(0) = 1.0;
  p->at(1) = -2.0;
  p->at(2) = 0.5;
  AdamOptimizer opt({p}, 0.1, 0.9, 0.999, 1e-8);
  Tensor g({3});
  for (int i = 0; i < 5; ++i) opt.step({&g});
  CHECK(p->at(0) == 1.0);
  CHECK(p->at(1) == -2.0);
  CHECK(p->at(2) == 0.5);
}

TEST_CASE("adam: sign-flip symmetry") {
  auto pa = std::make_shared<Tensor>(Shape{2});
  auto pb = std::make_shared<Tensor>(Shape{2});
  pa->at(0) = 0.7;
  pa->at(1) = -0.3;
  pb->at(0) = -0.7;
  pb->at(1) = 0.3;
  AdamOptimizer oa({pa}, 0.01, 0.9, 0.999, 1e-8);
  AdamOptimizer ob({pb}, 0.01, 0.9, 0.999, 1e-8);
  RandomStream rng(17);
  for (int i = 0; i < 20; ++i) {
    Tensor g({2}, {rng.uniform(-1, 1), rng.uniform(-1, 1)});
    Tensor gneg({2}, {-g.at(0), -g.at(1)});
    oa.step({&g});
    ob.step({&gneg});
    CHECK(pa->at(0) == doctest::Approx(-pb->at(0)).epsilon(1e-14));
    CHECK(pa->at(1) == doctest::Approx(-pb->at(1)).epsilon(1e-14));
  }
}

TEST_CASE("total loss gradient equals the sum of component gradients") {
  Model m(ModelKind::kScanet, mini_config(), 3);
  const int batch = 4;
  Graph g;
  ForwardNodes f = m.emit_forward(g, batch);
  NodeId y = g.input({batch, m.config().s}, "y");
  NodeId o = g.input({batch, m.config().s}, "o");
  NodeId l_out = emit_mse(g, f.y_hat, y);
  NodeId l_on = g.bce(f.o_hat, o);
  NodeId total = g.add(l_out, l_on);

  auto samples = square_wave_samples(batch);
  Tensor xb({batch, 1, m.config().input_length()});
  Tensor yb({batch, m.config().s});
  Tensor ob({batch, m.config().s});
  for (int bi = 0; bi < batch; ++bi) {
    std::copy(samples[bi].x.begin(), samples[bi].x.end(),
              xb.data() + bi * m.config().input_length());
    std::copy(samples[bi].y.begin(), samples[bi].y.end(), yb.data() + bi * m.config().s);
    for (int i = 0; i < m.config().s; ++i) ob.at2(bi, i) = samples[bi].o[i];
  }
  g.bind(f.x, std::move(xb));
  g.bind(y, std::move(yb));
  g.bind(o, std::move(ob));

  std::vector<NodeId> params = g.parameters();
  auto g_total = g.gradient_nodes(total, params);
  auto g_out = g.gradient_nodes(l_out, params);
  auto g_on = g.gradient_nodes(l_on, params);
  std::vector<NodeId> eval_set;
  for (auto& v : {g_total, g_out, g_on}) eval_set.insert(eval_set.end(), v.begin(), v.end());
  g.eval_many(eval_set);
  for (size_t k = 0; k < params.size(); ++k) {
    const Tensor& t = g.value(g_total[k]);
    const Tensor& a = g.value(g_out[k]);
    const Tensor& b = g.value(g_on[k]);
    for (int64_t i = 0; i < t.size(); ++i) {
      CHECK(t.at(i) == doctest::Approx(a.at(i) + b.at(i)).epsilon(1e-10));
    }
  }
}

TEST_CASE("supervised training reduces the output loss (3-seed majority)") {
  auto samples = square_wave_samples(220);
  int wins = 0;
  for (uint64_t seed : {11ULL, 22ULL, 33ULL}) {
    Model m(ModelKind::kScanet, mini_config(), seed);
    TrainingConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 16;
    cfg.learning_rate = 3e-4;
    cfg.seed = seed;
    TrainResult r = train_model(m, samples, cfg);
    REQUIRE(r.history.size() > 20);
    const double first = r.history.front().l_output;
    const double last = r.history.back().l_output;
    if (last < first) ++wins;
  }
  CHECK(wins >= 2);
}

TEST_CASE("training is deterministic for identical seeds") {
  auto samples = square_wave_samples(60);
  TrainingConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.seed = 5;

  Model a(ModelKind::kScanet, mini_config(), 42);
  Model b(ModelKind::kScanet, mini_config(), 42);
  TrainResult ra = train_model(a, samples, cfg);
  TrainResult rb = train_model(b, samples, cfg);
  REQUIRE(ra.history.size() == rb.history.size());
  for (size_t i = 0; i < ra.history.size(); ++i) {
    CHECK(ra.history[i].l_output == rb.history[i].l_output);
  }
  for (size_t i = 0; i < a.params().size(); ++i) {
    const Tensor& ta = *a.params()[i].value;
    const Tensor& tb = *b.params()[i].value;
    CHECK(std::memcmp(ta.data(), tb.data(), sizeof(double) * ta.size()) == 0);
  }
}

TEST_CASE("lambda_adv=0 runs the supervised path bit for bit") {
  auto samples = square_wave_samples(60);
  Model a(ModelKind::kScanet, mini_config(), 7);
  Model b(ModelKind::kScanet, mini_config(), 7);

  TrainingConfig plain;
  plain.epochs = 1;
  plain.batch_size = 8;
  plain.seed = 9;

  TrainingConfig disabled = plain;
  disabled.adversarial = true;  // requested, but lambda_adv = 0 disables it
  disabled.lambda_adv = 0.0;
  disabled.batch_size = 8;

  train_model(a, samples, plain);
  train_model(b, samples, disabled);
  for (size_t i = 0; i < a.params().size(); ++i) {
    const Tensor& ta = *a.params()[i].value;
    const Tensor& tb = *b.params()[i].value;
    CHECK(std::memcmp(ta.data(), tb.data(), sizeof(double) * ta.size()) == 0);
  }
}

TEST_CASE("adversarial training keeps all losses in the history") {
  auto samples = square_wave_samples(70);
  Model m(ModelKind::kScanet, mini_config(), 15);
  TrainingConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.adversarial = true;
  cfg.lambda_adv = 0.5;
  cfg.n_critic = 2;
  cfg.seed = 3;
  TrainResult r = train_model(m, samples, cfg);
  REQUIRE(!r.history.empty());
  bool any_adv = false;
  bool any_critic = false;
  for (const auto& row : r.history) {
    any_adv = any_adv || row.l_adv != 0.0;
    any_critic = any_critic || row.critic_loss != 0.0;
  }
  CHECK(any_adv);
  CHECK(any_critic);
}

TEST_CASE("empty dataset and non-finite losses abort loudly") {
  Model m(ModelKind::kScanet, mini_config(), 1);
  TrainingConfig cfg;
  CHECK_THROWS_WITH_AS(train_model(m, {}, cfg), doctest::Contains("empty"), Error);

  // blow the loss up with an absurd learning rate on huge targets
  auto samples = square_wave_samples(40, 1e6);
  TrainingConfig hot;
  hot.epochs = 3;
  hot.batch_size = 8;
  hot.learning_rate = 1e18;
  hot.seed = 2;
  set_checked_mode(false);
  CHECK_THROWS_WITH_AS(train_model(m, samples, hot), doctest::Contains("step"), Error);
  set_checked_mode(true);
}

TEST_CASE("on-state augmentation is applied online during training") {
  // with a huge positive-only offset the fit target moves up; the model
  // trained with augmentation should predict higher values on on-windows
  auto samples = square_wave_samples(80);
  TrainingConfig plain;
  plain.epochs = 2;
  plain.batch_size = 8;
  plain.learning_rate = 1e-3;
  plain.seed = 4;
  TrainingConfig aug = plain;
  aug.augment.e_minus = 0.0;
  aug.augment.e_plus = 0.0;  // same as plain
  Model a(ModelKind::kScanet, mini_config(), 9);
  Model b(ModelKind::kScanet, mini_config(), 9);
  train_model(a, samples, plain);
  train_model(b, samples, aug);
  // zero-width augmentation must not change anything
  for (size_t i = 0; i < a.params().size(); ++i) {
    const Tensor& ta = *a.params()[i].value;
    const Tensor& tb = *b.params()[i].value;
    CHECK(std::memcmp(ta.data(), tb.data(), sizeof(double) * ta.size()) == 0);
  }
}

TEST_CASE("loss history csv has the documented columns") {
  std::vector<LossHistoryRow> rows{{0, 0.5, 0.25, 0.0, 0.0}, {1, 0.4, 0.2, -0.1, 1.5}};
  const std::string path = "build_test_history.csv";
  write_loss_history_csv(path, rows);
  std::ifstream is(path);
  std::string header;
  std::getline(is, header);
  CHECK(header == "step,l_output,l_on,l_adv,critic_loss");
  std::string line;
  int count = 0;
  while (std::getline(is, line)) {
    if (!line.empty()) ++count;
  }
  CHECK(count == 2);
  is.close();
  std::remove(path.c_str());
}

TEST_SUITE_END();
