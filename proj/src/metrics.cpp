#include "scanet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace scanet {

double mae(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw Error("mae: length mismatch");
  if (pred.empty()) throw Error("mae: empty input");
  double acc = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) acc += std::fabs(pred[i] - truth[i]);
  return acc / static_cast<double>(pred.size());
}

double sae(std::span<const double> pred, std::span<const double> truth, int n_periods) {
  if (pred.size() != truth.size()) throw Error("sae: length mismatch");
  const int64_t total = static_cast<int64_t>(pred.size());
  if (n_periods < 1 || n_periods > total) {
    throw Error("sae: n_periods must lie in [1, T]");
  }
  const int64_t m = total / n_periods;
  double acc = 0.0;
  for (int n = 0; n < n_periods; ++n) {
    double rp = 0.0, rt = 0.0;
    for (int64_t i = n * m; i < (n + 1) * m; ++i) {
      rp += pred[static_cast<size_t>(i)];
      rt += truth[static_cast<size_t>(i)];
    }
    acc += std::fabs(rt - rp) / static_cast<double>(m);
  }
  return acc / static_cast<double>(n_periods);
}

F1Result f1_from_states(std::span<const double> probabilities, std::span<const uint8_t> truth,
                        double threshold) {
  if (probabilities.size() != truth.size()) throw Error("f1: length mismatch");
  F1Result r;
  for (size_t i = 0; i < probabilities.size(); ++i) {
    const bool on = probabilities[i] >= threshold;
    const bool truly_on = truth[i] != 0;
    if (on && truly_on) ++r.tp;
    else if (on && !truly_on) ++r.fp;
    else if (!on && truly_on) ++r.fn;
    else ++r.tn;
  }
  r.precision = r.tp + r.fp > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp) : 0.0;
  r.recall = r.tp + r.fn > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 0.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                                      : 0.0;
  return r;
}

std::vector<double> overlap_average(int64_t total_len, int out_len,
                                    const std::vector<int64_t>& starts,
                                    const std::vector<std::vector<double>>& window_preds) {
  if (starts.size() != window_preds.size()) throw Error("overlap_average: size mismatch");
  std::vector<double> sum(static_cast<size_t>(total_len), 0.0);
  std::vector<int32_t> count(static_cast<size_t>(total_len), 0);
  for (size_t wi = 0; wi < starts.size(); ++wi) {
    const auto& pred = window_preds[wi];
    if (static_cast<int>(pred.size()) != out_len) {
      throw Error("overlap_average: window " + std::to_string(wi) + " has wrong length");
    }
    for (int i = 0; i < out_len; ++i) {
      const int64_t idx = starts[wi] + i;
      if (idx < 0 || idx >= total_len) continue;
      sum[static_cast<size_t>(idx)] += pred[static_cast<size_t>(i)];
      ++count[static_cast<size_t>(idx)];
    }
  }
  for (int64_t i = 0; i < total_len; ++i) {
    if (count[static_cast<size_t>(i)] > 0) {
      sum[static_cast<size_t>(i)] /= static_cast<double>(count[static_cast<size_t>(i)]);
    }
  }
  return sum;
}

std::vector<double> infer_full(const Model& model, std::span<const double> aggregate_watts,
                               const WindowSpec& spec, double scale, int batch) {
  spec.validate();
  const int64_t total = static_cast<int64_t>(aggregate_watts.size());
  const int s = model.config().s;
  const int64_t x_len = model.config().input_length();
  if (total < s) {
    throw Error("infer_full: sequence length " + std::to_string(total) + " shorter than s=" +
                std::to_string(s));
  }
  if (spec.s != s || spec.w != model.config().w) {
    throw Error("infer_full: window spec does not match the model config");
  }
  const bool classifier = model.kind() == ModelKind::kClassifierOnly;
  const bool seq2point = model.kind() == ModelKind::kSeq2point;
  const int out_len = model.output_length();

  const std::vector<double> norm = normalize(aggregate_watts, scale);
  std::vector<int64_t> window_starts;
  for (int64_t t0 = 0; t0 + s <= total; t0 += spec.test_step) window_starts.push_back(t0);
  if (window_starts.back() != total - s) window_starts.push_back(total - s);

  std::vector<int64_t> pred_starts;
  std::vector<std::vector<double>> preds;
  preds.reserve(window_starts.size());

  auto fill_x = [&](Tensor& xb, int row, int64_t t0) {
    double* dst = xb.data() + static_cast<int64_t>(row) * x_len;
    for (int64_t i = 0; i < x_len; ++i) {
      const int64_t src = t0 - spec.w + i;
      dst[i] = (src >= 0 && src < total) ? norm[static_cast<size_t>(src)] : 0.0;
    }
  };

  const int big = std::max(1, std::min<int>(batch, static_cast<int>(window_starts.size())));
  Graph g;
  ForwardNodes nodes = model.emit_forward(g, big);
  Graph g1;
  ForwardNodes nodes1 = model.emit_forward(g1, 1);

  size_t wi = 0;
  while (wi < window_starts.size()) {
    const size_t left = window_starts.size() - wi;
    if (left >= static_cast<size_t>(big)) {
      Tensor xb({big, 1, x_len});
      for (int r = 0; r < big; ++r) fill_x(xb, r, window_starts[wi + r]);
      g.bind(nodes.x, std::move(xb));
      const Tensor& y = g.eval(nodes.y_hat);
      for (int r = 0; r < big; ++r) {
        preds.emplace_back(y.data() + static_cast<int64_t>(r) * out_len,
                           y.data() + static_cast<int64_t>(r + 1) * out_len);
        pred_starts.push_back(window_starts[wi + r] + (seq2point ? s / 2 : 0));
      }
      wi += static_cast<size_t>(big);
    } else {
      Tensor xb({1, 1, x_len});
      fill_x(xb, 0, window_starts[wi]);
      g1.bind(nodes1.x, std::move(xb));
      const Tensor& y = g1.eval(nodes1.y_hat);
      preds.emplace_back(y.data(), y.data() + out_len);
      pred_starts.push_back(window_starts[wi] + (seq2point ? s / 2 : 0));
      ++wi;
    }
  }

  std::vector<double> merged = overlap_average(total, out_len, pred_starts, preds);
  if (classifier) return merged;  // probabilities, no denormalization
  for (double& v : merged) v = std::max(0.0, v * scale);
  return merged;
}

void write_report(const std::string& path, const MetricsReport& r) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os << "appliance=" << r.appliance << "\n";
  os << "mae=" << fmt17(r.mae) << "\n";
  os << "sae=" << fmt17(r.sae) << "\n";
  os << "precision=" << fmt17(r.precision) << "\n";
  os << "recall=" << fmt17(r.recall) << "\n";
  os << "f1=" << fmt17(r.f1) << "\n";
  os << "n_periods=" << r.n_periods << "\n";
  os << "period_len=" << r.period_len << "\n";
  if (!os) throw Error("write failed for '" + path + "'");
}

MetricsReport read_report(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open report '" + path + "'");
  MetricsReport r;
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "appliance") r.appliance = value;
    else if (key == "mae") r.mae = std::stod(value);
    else if (key == "sae") r.sae = std::stod(value);
    else if (key == "precision") r.precision = std::stod(value);
    else if (key == "recall") r.recall = std::stod(value);
    else if (key == "f1") r.f1 = std::stod(value);
    else if (key == "n_periods") r.n_periods = std::stoi(value);
    else if (key == "period_len") r.period_len = std::stoll(value);
  }
  return r;
}

void append_report_csv(const std::string& path, const MetricsReport& r) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream os(path, std::ios::app);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  if (fresh) os << "appliance,mae,sae,precision,recall,f1,n_periods,period_len\n";
  os << r.appliance << "," << fmt17(r.mae) << "," << fmt17(r.sae) << "," << fmt17(r.precision)
     << "," << fmt17(r.recall) << "," << fmt17(r.f1) << "," << r.n_periods << ","
     << r.period_len << "\n";
  if (!os) throw Error("write failed for '" + path + "'");
}

}  // namespace scanet
