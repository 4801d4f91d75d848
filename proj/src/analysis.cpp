#include "scanet/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace scanet {

namespace {

constexpr double kPowerIterTol = 1e-10;
constexpr int kPowerIterMax = 10000;

// top eigenpair of a symmetric matrix; returns eigenvalue, writes the vector
double power_iteration(const std::vector<double>& m, int64_t dim, std::vector<double>& vec) {
  vec.assign(static_cast<size_t>(dim), 0.0);
  for (int64_t i = 0; i < dim; ++i) {
    vec[static_cast<size_t>(i)] = 1.0 + 1e-3 * static_cast<double>(i);  // deterministic start
  }
  auto normalize_vec = [&](std::vector<double>& v) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    for (double& x : v) x /= norm;
    return norm;
  };
  normalize_vec(vec);
  std::vector<double> next(static_cast<size_t>(dim));
  for (int iter = 0; iter < kPowerIterMax; ++iter) {
    for (int64_t i = 0; i < dim; ++i) {
      double acc = 0.0;
      for (int64_t j = 0; j < dim; ++j) {
        acc += m[static_cast<size_t>(i * dim + j)] * vec[static_cast<size_t>(j)];
      }
      next[static_cast<size_t>(i)] = acc;
    }
    if (normalize_vec(next) == 0.0) {
      std::fill(vec.begin(), vec.end(), 0.0);
      return 0.0;
    }
    // align signs before measuring the step
    double dot = 0.0;
    for (int64_t i = 0; i < dim; ++i) dot += next[static_cast<size_t>(i)] * vec[static_cast<size_t>(i)];
    if (dot < 0.0) {
      for (double& x : next) x = -x;
    }
    double delta = 0.0;
    for (int64_t i = 0; i < dim; ++i) {
      delta = std::max(delta, std::fabs(next[static_cast<size_t>(i)] - vec[static_cast<size_t>(i)]));
    }
    vec.swap(next);
    if (delta < kPowerIterTol) break;
  }
  // deterministic sign: largest-magnitude entry positive
  int64_t arg = 0;
  for (int64_t i = 1; i < dim; ++i) {
    if (std::fabs(vec[static_cast<size_t>(i)]) > std::fabs(vec[static_cast<size_t>(arg)])) arg = i;
  }
  if (vec[static_cast<size_t>(arg)] < 0.0) {
    for (double& x : vec) x = -x;
  }
  double lambda = 0.0;
  for (int64_t i = 0; i < dim; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < dim; ++j) {
      acc += m[static_cast<size_t>(i * dim + j)] * vec[static_cast<size_t>(j)];
    }
    lambda += vec[static_cast<size_t>(i)] * acc;
  }
  return lambda;
}

}  // namespace

PcaResult pca_modes(const std::vector<std::vector<double>>& sequences) {
  if (sequences.size() < 2) throw Error("pca_modes: needs at least 2 sequences");
  const int64_t dim = static_cast<int64_t>(sequences.front().size());
  for (const auto& s : sequences) {
    if (static_cast<int64_t>(s.size()) != dim) throw Error("pca_modes: ragged sequences");
  }
  const int64_t n = static_cast<int64_t>(sequences.size());

  std::vector<double> mean(static_cast<size_t>(dim), 0.0);
  for (const auto& s : sequences) {
    for (int64_t i = 0; i < dim; ++i) mean[static_cast<size_t>(i)] += s[static_cast<size_t>(i)];
  }
  for (double& v : mean) v /= static_cast<double>(n);

  std::vector<double> cov(static_cast<size_t>(dim * dim), 0.0);
  for (const auto& s : sequences) {
    for (int64_t i = 0; i < dim; ++i) {
      const double di = s[static_cast<size_t>(i)] - mean[static_cast<size_t>(i)];
      for (int64_t j = i; j < dim; ++j) {
        const double dj = s[static_cast<size_t>(j)] - mean[static_cast<size_t>(j)];
        cov[static_cast<size_t>(i * dim + j)] += di * dj;
      }
    }
  }
  const double denom = static_cast<double>(n - 1);
  for (int64_t i = 0; i < dim; ++i) {
    for (int64_t j = i; j < dim; ++j) {
      const double v = cov[static_cast<size_t>(i * dim + j)] / denom;
      cov[static_cast<size_t>(i * dim + j)] = v;
      cov[static_cast<size_t>(j * dim + i)] = v;
    }
  }

  PcaResult out;
  out.mean = mean;
  for (int64_t i = 0; i < dim; ++i) out.total_variance += cov[static_cast<size_t>(i * dim + i)];

  for (int comp = 0; comp < 2; ++comp) {
    std::vector<double> vec;
    const double lambda = power_iteration(cov, dim, vec);
    out.eigenvalues[static_cast<size_t>(comp)] = lambda;
    out.components[static_cast<size_t>(comp)] = vec;
    // deflate
    for (int64_t i = 0; i < dim; ++i) {
      for (int64_t j = 0; j < dim; ++j) {
        cov[static_cast<size_t>(i * dim + j)] -=
            lambda * vec[static_cast<size_t>(i)] * vec[static_cast<size_t>(j)];
      }
    }
  }

  out.points.resize(static_cast<size_t>(n));
  for (int64_t k = 0; k < n; ++k) {
    for (int comp = 0; comp < 2; ++comp) {
      double acc = 0.0;
      const auto& vec = out.components[static_cast<size_t>(comp)];
      if (!vec.empty()) {
        for (int64_t i = 0; i < dim; ++i) {
          acc += (sequences[static_cast<size_t>(k)][static_cast<size_t>(i)] -
                  mean[static_cast<size_t>(i)]) *
                 vec[static_cast<size_t>(i)];
        }
      }
      out.points[static_cast<size_t>(k)][static_cast<size_t>(comp)] = acc;
    }
  }
  return out;
}

std::array<double, 2> pca_project(const PcaResult& basis, std::span<const double> sequence) {
  if (sequence.size() != basis.mean.size()) throw Error("pca_project: dimension mismatch");
  std::array<double, 2> out{0.0, 0.0};
  for (int comp = 0; comp < 2; ++comp) {
    const auto& vec = basis.components[static_cast<size_t>(comp)];
    if (vec.empty()) continue;
    double acc = 0.0;
    for (size_t i = 0; i < sequence.size(); ++i) {
      acc += (sequence[i] - basis.mean[i]) * vec[i];
    }
    out[static_cast<size_t>(comp)] = acc;
  }
  return out;
}

int fixed_radius_cluster_count(const std::vector<std::array<double, 2>>& points, double radius) {
  if (radius <= 0.0) throw Error("fixed_radius_cluster_count: radius must be positive");
  std::vector<std::array<double, 2>> leaders;
  for (const auto& p : points) {
    double best = radius;
    bool found = false;
    for (const auto& l : leaders) {
      const double dx = p[0] - l[0];
      const double dy = p[1] - l[1];
      const double d = std::sqrt(dx * dx + dy * dy);
      if (d <= best) {
        best = d;
        found = true;
      }
    }
    if (!found) leaders.push_back(p);
  }
  return static_cast<int>(leaders.size());
}

void write_matrix_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  if (!header.empty()) {
    for (size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << "\n";
  }
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << fmt17(row[i]);
    os << "\n";
  }
  if (!os) throw Error("write failed for '" + path + "'");
}

std::vector<std::vector<double>> read_matrix_csv(const std::string& path,
                                                 std::vector<std::string>* header) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      // a header line contains something unparsable as a number
      char* end = nullptr;
      std::strtod(line.c_str(), &end);
      const bool numeric = end != line.c_str() && (*end == ',' || *end == '\0' || *end == '\r');
      if (!numeric) {
        if (header) {
          std::stringstream ss(line);
          std::string tok;
          while (std::getline(ss, tok, ',')) header->push_back(tok);
        }
        continue;
      }
    }
    std::vector<double> row;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) row.push_back(std::stod(tok));
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

struct TapRun {
  Graph g;
  ForwardNodes nodes;
};

void run_taps(const Model& model, const std::vector<double>& x_norm, TapRun& run,
              bool bypass = false) {
  const int64_t len = model.config().input_length();
  if (static_cast<int64_t>(x_norm.size()) != len) {
    throw Error("analysis: expected a window of " + std::to_string(len) + " values");
  }
  ForwardOptions opts;
  opts.with_taps = true;
  opts.bypass_attention = bypass;
  run.nodes = model.emit_forward(run.g, 1, opts);
  run.g.bind(run.nodes.x, Tensor({1, 1, len}, std::vector<double>(x_norm)));
}

std::vector<std::vector<double>> tap_to_rows(const Tensor& t, bool center_crop) {
  // [1,C,L] -> C rows of L values, optionally cropped to the middle 256 steps
  const int64_t channels = t.dim(1);
  const int64_t len = t.dim(2);
  int64_t lo = 0, hi = len;
  if (center_crop && len > 256) {
    lo = (len - 256) / 2;
    hi = lo + 256;
  }
  std::vector<std::vector<double>> rows;
  rows.reserve(static_cast<size_t>(channels));
  for (int64_t c = 0; c < channels; ++c) {
    std::vector<double> row;
    row.reserve(static_cast<size_t>(hi - lo));
    for (int64_t i = lo; i < hi; ++i) row.push_back(t.at3(0, c, i));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

std::vector<std::string> export_attention(const Model& model, const std::vector<double>& x_norm,
                                          const std::string& dir) {
  if (!model.config().use_attention) {
    throw Error("export_attention: model '" + to_string(model.kind()) +
                "' has no attention taps");
  }
  std::filesystem::create_directories(dir);
  TapRun run;
  run_taps(model, x_norm, run);
  std::vector<std::string> written;
  const std::vector<std::pair<std::string, std::string>> which = {
      {"att_p", "attention_power.csv"}, {"att_s", "attention_on.csv"}};
  for (const auto& [tap, filename] : which) {
    auto it = run.nodes.taps.find(tap);
    if (it == run.nodes.taps.end()) continue;  // classifier-only has no power net
    const Tensor& s = run.g.eval(it->second);  // S = A^T, [1,L,L]
    const int64_t len = s.dim(1);
    // rows of A are columns of S; validate they sum to one before writing
    for (int64_t j = 0; j < len; ++j) {
      double row_sum = 0.0;
      for (int64_t i = 0; i < len; ++i) row_sum += s.at3(0, i, j);
      if (std::fabs(row_sum - 1.0) > 1e-9) {
        throw Error("export_attention: attention row " + std::to_string(j) +
                    " does not sum to 1");
      }
    }
    std::vector<std::vector<double>> rows;
    rows.reserve(static_cast<size_t>(len));
    for (int64_t i = 0; i < len; ++i) {
      std::vector<double> row;
      row.reserve(static_cast<size_t>(len));
      for (int64_t j = 0; j < len; ++j) row.push_back(s.at3(0, i, j));
      rows.push_back(std::move(row));
    }
    const std::string path = (std::filesystem::path(dir) / filename).string();
    write_matrix_csv(path, {}, rows);
    written.push_back(path);
  }
  return written;
}

std::vector<std::string> export_feature_maps(const Model& model, const std::vector<double>& x_norm,
                                             const std::string& dir,
                                             const std::vector<std::string>& taps,
                                             bool center_crop) {
  std::filesystem::create_directories(dir);
  TapRun run;
  run_taps(model, x_norm, run);
  std::vector<std::string> written;
  for (const std::string& tap : taps) {
    auto it = run.nodes.taps.find(tap);
    if (it == run.nodes.taps.end()) {
      throw Error("export_feature_maps: unknown tap name '" + tap + "'");
    }
    const Tensor& t = run.g.eval(it->second);
    if (t.rank() != 3) {
      throw Error("export_feature_maps: tap '" + tap + "' is not a feature map");
    }
    const std::string path = (std::filesystem::path(dir) / ("feature_" + tap + ".csv")).string();
    write_matrix_csv(path, {}, tap_to_rows(t, center_crop));
    written.push_back(path);
  }
  return written;
}

BypassResult attention_bypass_compare(const Model& model, const std::vector<double>& x_norm) {
  if (!model.config().use_attention) {
    throw Error("attention_bypass_compare: model has no attention block");
  }
  BypassResult out;
  {
    TapRun run;
    run_taps(model, x_norm, run);
    const Tensor& o = run.g.eval(run.nodes.o_hat);
    out.with_attention.assign(o.data(), o.data() + o.size());
  }
  {
    TapRun run;
    run_taps(model, x_norm, run, /*bypass=*/true);
    const Tensor& o = run.g.eval(run.nodes.o_hat);
    out.without_attention.assign(o.data(), o.data() + o.size());
  }
  return out;
}

std::string write_bypass_csv(const BypassResult& result, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::vector<double>> rows;
  for (size_t i = 0; i < result.with_attention.size(); ++i) {
    rows.push_back({result.with_attention[i], result.without_attention[i]});
  }
  const std::string path = (std::filesystem::path(dir) / "attention_bypass.csv").string();
  write_matrix_csv(path, {"o_hat_with_attention", "o_hat_without_attention"}, rows);
  return path;
}

std::vector<std::string> export_pca(const PcaResult& result, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::vector<double>> rows;
  for (const auto& p : result.points) rows.push_back({p[0], p[1]});
  const std::string points_path = (std::filesystem::path(dir) / "pca_points.csv").string();
  write_matrix_csv(points_path, {"pc1", "pc2"}, rows);
  const std::string eigen_path = (std::filesystem::path(dir) / "pca_eigen.csv").string();
  const double tv = result.total_variance;
  write_matrix_csv(eigen_path, {"eigenvalue", "explained_fraction"},
                   {{result.eigenvalues[0], tv > 0 ? result.eigenvalues[0] / tv : 0.0},
                    {result.eigenvalues[1], tv > 0 ? result.eigenvalues[1] / tv : 0.0}});
  return {points_path, eigen_path};
}

void write_export_index(const std::string& dir,
                        const std::vector<std::pair<std::string, std::string>>& files) {
  nlohmann::json index;
  index["exports"] = nlohmann::json::array();
  for (const auto& [file, description] : files) {
    index["exports"].push_back({
        {"file", std::filesystem::path(file).filename().string()},
        {"columns", description},
    });
  }
  std::ofstream os((std::filesystem::path(dir) / "index.json").string());
  if (!os) throw Error("cannot write export index in '" + dir + "'");
  os << index.dump(2) << "\n";
}

}  // namespace scanet
