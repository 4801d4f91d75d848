#pragma once

#include <array>

#include "scanet/model.hpp"

namespace scanet {

// ---- PCA ---------------------------------------------------------------------

struct PcaResult {
  std::vector<std::array<double, 2>> points;       // one 2-D coordinate per sequence
  std::array<double, 2> eigenvalues{0.0, 0.0};
  std::array<std::vector<double>, 2> components;   // orthonormal directions
  std::vector<double> mean;                        // center used for projection
  double total_variance = 0.0;                     // trace of the covariance
};

// project a new sequence onto an existing basis
std::array<double, 2> pca_project(const PcaResult& basis, std::span<const double> sequence);

// Mean-centered covariance eigendecomposition via power iteration with
// deflation (tolerance 1e-10, at most 1e4 iterations, deterministic start).
// Degenerate input (all sequences identical) reports zero variance and puts
// every point at the origin.
PcaResult pca_modes(const std::vector<std::vector<double>>& sequences);

// Greedy leader clustering: a point joins the nearest existing leader within
// `radius`, otherwise it becomes a new leader. Deterministic in input order.
int fixed_radius_cluster_count(const std::vector<std::array<double, 2>>& points, double radius);

// ---- CSV helpers ---------------------------------------------------------------

// 17-significant-digit CSV with one optional header line
void write_matrix_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows);
std::vector<std::vector<double>> read_matrix_csv(const std::string& path,
                                                 std::vector<std::string>* header = nullptr);

// ---- model diagnostics -----------------------------------------------------------

// Writes attention_power.csv / attention_on.csv containing A^T for each
// sub-network (row sums of A are validated first). Raises for models without
// attention taps.
std::vector<std::string> export_attention(const Model& model, const std::vector<double>& x_norm,
                                          const std::string& dir);

// Writes feature_<tap>.csv with one row per channel. Unknown tap names raise.
// center_crop limits the time axis to the middle 256 steps.
std::vector<std::string> export_feature_maps(const Model& model, const std::vector<double>& x_norm,
                                             const std::string& dir,
                                             const std::vector<std::string>& taps,
                                             bool center_crop = false);

struct BypassResult {
  std::vector<double> with_attention;     // o-hat
  std::vector<double> without_attention;  // o-hat with s3 fed straight to the head
};
BypassResult attention_bypass_compare(const Model& model, const std::vector<double>& x_norm);
std::string write_bypass_csv(const BypassResult& result, const std::string& dir);

// PCA scatter of complete-on sequences: pca_points.csv + pca_eigen.csv.
std::vector<std::string> export_pca(const PcaResult& result, const std::string& dir);

// index.json listing every export with its column semantics
void write_export_index(const std::string& dir,
                        const std::vector<std::pair<std::string, std::string>>& files);

}  // namespace scanet
