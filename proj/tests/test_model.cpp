#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>

#include "scanet/checkpoint.hpp"
#include "scanet/model.hpp"

using namespace scanet;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.s = 8;
  c.w = 10;  // input length 28
  c.conv_filters = {4, 4, 5, 6, 6, 6};
  c.kernel_sizes = {5, 4, 3, 3, 3, 3};
  c.merge_filters = 8;
  c.attention_reduced = 4;
  c.fc_hidden = 16;
  return c;
}

std::vector<double> ramp_input(int64_t n) {
  std::vector<double> x(n);
  for (int64_t i = 0; i < n; ++i) x[i] = 0.1 + 0.01 * static_cast<double>(i % 37);
  return x;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("paper configs give the documented input lengths") {
  CHECK(ModelConfig::redd().input_length() == 864);    // 64 + 2*400
  CHECK(ModelConfig::ukdale().input_length() == 432);  // 32 + 2*200
  CHECK(ModelConfig::reduced().input_length() == 232);
}

TEST_CASE("invalid configs are rejected with the violated constraint") {
  ModelConfig c = tiny_config();
  c.kernel_sizes.pop_back();
  CHECK_THROWS_WITH_AS(Model(ModelKind::kScanet, c, 1), doctest::Contains("equal length"), Error);
  ModelConfig c2 = tiny_config();
  c2.branch_split_layer = 9;
  CHECK_THROWS_WITH_AS(Model(ModelKind::kScanet, c2, 1), doctest::Contains("split"), Error);
}

TEST_CASE("equal seeds build identical parameters") {
  Model a(ModelKind::kScanet, tiny_config(), 99);
  Model b(ModelKind::kScanet, tiny_config(), 99);
  REQUIRE(a.params().size() == b.params().size());
  CHECK(a.param_count() == b.param_count());
  for (size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params()[i].name == b.params()[i].name);
    const Tensor& ta = *a.params()[i].value;
    const Tensor& tb = *b.params()[i].value;
    REQUIRE(ta.size() == tb.size());
    CHECK(std::memcmp(ta.data(), tb.data(), sizeof(double) * ta.size()) == 0);
  }
  // gamma starts at exactly zero in both attention blocks
  int gammas = 0;
  for (const auto& p : a.params()) {
    if (p.name.find("gamma") != std::string::npos) {
      ++gammas;
      CHECK(p.value->at(0) == 0.0);
    }
  }
  CHECK(gammas == 2);
}

TEST_CASE("branch_gate: closed, open, and hand-computed") {
  std::vector<Tensor> p{Tensor({2}, {2, 3})};
  std::vector<Tensor> closed{Tensor({2}, {0, 0})};
  std::vector<Tensor> open{Tensor({2}, {1, 1})};
  std::vector<Tensor> half{Tensor({2}, {0.5, 1})};
  CHECK(branch_gate(p, closed)[0].at(0) == 0.0);
  CHECK(branch_gate(p, closed)[0].at(1) == 0.0);
  CHECK(branch_gate(p, open)[0].at(0) == 2.0);
  CHECK(branch_gate(p, open)[0].at(1) == 3.0);
  CHECK(branch_gate(p, half)[0].at(0) == doctest::Approx(1.0));
  CHECK(branch_gate(p, half)[0].at(1) == doctest::Approx(3.0));
  std::vector<Tensor> bad{Tensor({3})};
  CHECK_THROWS_AS(branch_gate(p, bad), Error);
}

TEST_CASE("output gating: forced on-state output") {
  Model m(ModelKind::kScanet, tiny_config(), 7);
  const auto x = ramp_input(m.config().input_length());

  Graph g0;
  ForwardOptions zero;
  zero.override_on_output = 0.0;
  ForwardNodes n0 = m.emit_forward(g0, 1, zero);
  g0.bind(n0.x, Tensor({1, 1, m.config().input_length()}, std::vector<double>(x)));
  const Tensor& y0 = g0.eval(n0.y_hat);
  for (int64_t i = 0; i < y0.size(); ++i) CHECK(y0.at(i) == 0.0);

  Graph g1;
  ForwardOptions one;
  one.override_on_output = 1.0;
  ForwardNodes n1 = m.emit_forward(g1, 1, one);
  g1.bind(n1.x, Tensor({1, 1, m.config().input_length()}, std::vector<double>(x)));
  const NodeId want[] = {n1.y_hat, n1.power};
  g1.eval_many(want);
  const Tensor& y1 = g1.value(n1.y_hat);
  const Tensor& p1 = g1.value(n1.power);
  for (int64_t i = 0; i < y1.size(); ++i) CHECK(y1.at(i) == p1.at(i));
}

TEST_CASE("output gating identity holds elementwise") {
  Model m(ModelKind::kScanet, tiny_config(), 13);
  const auto x = ramp_input(m.config().input_length());
  Graph g;
  ForwardOptions opts;
  opts.with_taps = true;
  ForwardNodes n = m.emit_forward(g, 1, opts);
  g.bind(n.x, Tensor({1, 1, m.config().input_length()}, std::vector<double>(x)));
  const NodeId want[] = {n.y_hat, n.o_hat, n.power};
  g.eval_many(want);
  const Tensor& y = g.value(n.y_hat);
  const Tensor& o = g.value(n.o_hat);
  const Tensor& p = g.value(n.power);
  for (int64_t i = 0; i < y.size(); ++i) {
    CHECK(y.at(i) == o.at(i) * p.at(i));  // exact, it is the same multiply
    CHECK(o.at(i) > 0.0);
    CHECK(o.at(i) < 1.0);
  }
}

TEST_CASE("forward is bitwise reproducible") {
  Model m(ModelKind::kScanet, tiny_config(), 21);
  const auto x = ramp_input(m.config().input_length());
  auto a = m.forward_window(x);
  auto b = m.forward_window(x);
  REQUIRE(a.y_hat.size() == b.y_hat.size());
  CHECK(std::memcmp(a.y_hat.data(), b.y_hat.data(), sizeof(double) * a.y_hat.size()) == 0);
}

TEST_CASE("zeroed branch gates leave only merge-layer bias in p3") {
  Model m(ModelKind::kScanet, tiny_config(), 31);
  const auto x = ramp_input(m.config().input_length());
  Graph g;
  ForwardOptions opts;
  opts.with_taps = true;
  opts.override_gates = 0.0;
  ForwardNodes n = m.emit_forward(g, 1, opts);
  g.bind(n.x, Tensor({1, 1, m.config().input_length()}, std::vector<double>(x)));
  const Tensor& p3 = g.eval(n.taps.at("p3"));
  // merge conv over an all-zero map leaves relu(bias), constant in time
  const Tensor* merge_bias = nullptr;
  for (const auto& p : m.params()) {
    if (p.name == "power.merge.b") merge_bias = p.value.get();
  }
  REQUIRE(merge_bias != nullptr);
  const int64_t channels = p3.dim(1), len = p3.dim(2);
  for (int64_t c = 0; c < channels; ++c) {
    const double expect = std::max(0.0, merge_bias->at(c));
    for (int64_t t = 0; t < len; ++t) CHECK(p3.at3(0, c, t) == expect);
  }
}

TEST_CASE("gamma=0 model equals the attention-free forward exactly") {
  Model m(ModelKind::kScanet, tiny_config(), 41);
  const auto x = ramp_input(m.config().input_length());

  Graph g_full;
  ForwardNodes nf = m.emit_forward(g_full, 1);
  g_full.bind(nf.x, Tensor({1, 1, m.config().input_length()}, std::vector<double>(x)));
  const Tensor yf = g_full.eval(nf.y_hat);

  Graph g_cut;
  ForwardOptions opts;
  opts.bypass_attention = true;
  ForwardNodes nc = m.emit_forward(g_cut, 1, opts);
  g_cut.bind(nc.x, Tensor({1, 1, m.config().input_length()}, std::vector<double>(x)));
  const Tensor& yc = g_cut.eval(nc.y_hat);

  REQUIRE(yf.size() == yc.size());
  for (int64_t i = 0; i < yf.size(); ++i) CHECK(yf.at(i) == yc.at(i));
}

TEST_CASE("receptive field of each branch is respected exactly") {
  for (int dilation : {1, 2, 3}) {
    ModelConfig c = tiny_config();
    c.branch_dilations = {dilation};
    c.use_attention = false;
    Model m(ModelKind::kScanet, c, 51);
    const int64_t len = c.input_length();

    // conv stack interval around an output index: layers 1..3 then the branch
    int64_t lo = 0, hi = 0;
    auto apply_layer = [&](int kernel, int dil) {
      const int64_t pad_left = static_cast<int64_t>(kernel - 1) * dil / 2;
      lo -= pad_left;
      hi += static_cast<int64_t>(kernel - 1) * dil - pad_left;
    };
    for (int layer = 0; layer < 3; ++layer) apply_layer(c.kernel_sizes[layer], 1);
    for (int layer = 3; layer < 6; ++layer) apply_layer(c.kernel_sizes[layer], dilation);

    const int64_t t = len / 2;
    ForwardOptions opts;
    opts.with_taps = true;

    auto tap_at_t = [&](const std::vector<double>& xv) {
      Graph g;
      ForwardNodes n = m.emit_forward(g, 1, opts);
      g.bind(n.x, Tensor({1, 1, len}, std::vector<double>(xv)));
      const Tensor& p1 = g.eval(n.taps.at("p1_1"));
      std::vector<double> col;
      for (int64_t ch = 0; ch < p1.dim(1); ++ch) col.push_back(p1.at3(0, ch, t));
      return col;
    };

    auto x = ramp_input(len);
    const auto base = tap_at_t(x);

    auto x_out = x;  // perturb strictly outside [t+lo, t+hi]
    bool touched = false;
    for (int64_t i = 0; i < len; ++i) {
      if (i < t + lo || i > t + hi) {
        x_out[i] += 5.0;
        touched = true;
      }
    }
    REQUIRE(touched);
    const auto same = tap_at_t(x_out);
    for (size_t i = 0; i < base.size(); ++i) CHECK(same[i] == base[i]);

    auto x_in = x;  // perturbing inside the field must show up
    x_in[t] += 5.0;
    const auto changed = tap_at_t(x_in);
    bool any = false;
    for (size_t i = 0; i < base.size(); ++i) any = any || changed[i] != base[i];
    CHECK(any);
  }
}

TEST_CASE("sgn builds without branches or attention and gates its output") {
  ModelConfig c = tiny_config();
  Model m(ModelKind::kSgn, c, 61);
  CHECK_FALSE(m.config().use_branches);
  CHECK_FALSE(m.config().use_attention);
  for (const auto& p : m.params()) {
    CHECK(p.name.find("attn") == std::string::npos);
    CHECK(p.name.find(".br") == std::string::npos);
  }
  const auto x = ramp_input(c.input_length());
  Graph g;
  ForwardOptions one;
  one.override_on_output = 1.0;
  ForwardNodes n = m.emit_forward(g, 1, one);
  g.bind(n.x, Tensor({1, 1, c.input_length()}, std::vector<double>(x)));
  const NodeId want[] = {n.y_hat, n.power};
  g.eval_many(want);
  for (int64_t i = 0; i < c.s; ++i) {
    CHECK(g.value(n.y_hat).at(i) == g.value(n.power).at(i));
  }
}

TEST_CASE("seq2point outputs one value per window") {
  Model m(ModelKind::kSeq2point, tiny_config(), 71);
  auto out = m.forward_window(ramp_input(m.config().input_length()));
  CHECK(out.y_hat.size() == 1);
  CHECK(m.output_length() == 1);
}

TEST_CASE("classifier-only stays within [0,1] and is deterministic") {
  Model m(ModelKind::kClassifierOnly, tiny_config(), 81);
  for (const auto& p : m.params()) CHECK(p.name.rfind("on.", 0) == 0);
  const auto x = ramp_input(m.config().input_length());
  auto a = m.forward_window(x);
  auto b = m.forward_window(x);
  for (size_t i = 0; i < a.o_hat.size(); ++i) {
    CHECK(a.o_hat[i] >= 0.0);
    CHECK(a.o_hat[i] <= 1.0);
    CHECK(a.o_hat[i] == b.o_hat[i]);
  }
}

TEST_CASE("classifier-only with a zero head answers 0.5 everywhere") {
  Model m(ModelKind::kClassifierOnly, tiny_config(), 91);
  for (const auto& p : m.params()) {
    if (p.name == "on.fc2.w" || p.name == "on.fc2.b") p.value->fill(0.0);
  }
  auto out = m.forward_window(ramp_input(m.config().input_length()));
  for (double v : out.o_hat) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("checkpoint round trip is exact") {
  Model m(ModelKind::kScanet, tiny_config(), 101);
  // nudge a few parameters so the file is not all init values
  m.params()[0].value->at(0) = 0.123456789012345678;
  const std::string path = "build_test_ckpt.bin";
  save_checkpoint(path, m, {{"appliance", "fridge"}, {"scale", "612"}});
  Checkpoint loaded = load_checkpoint(path);
  std::remove(path.c_str());

  CHECK(loaded.kind == ModelKind::kScanet);
  CHECK(loaded.meta.at("appliance") == "fridge");
  CHECK(loaded.config.s == m.config().s);
  REQUIRE(loaded.model.params().size() == m.params().size());
  for (size_t i = 0; i < m.params().size(); ++i) {
    const Tensor& a = *m.params()[i].value;
    const Tensor& b = *loaded.model.params()[i].value;
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0);
  }
}

TEST_SUITE_END();
