#pragma once

#include "trajgp/model/dkl.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace trajgp {

struct ProfileConfig {
  int grid = 32;
  /// Profile the log of the posterior variance instead of the variance.
  bool log_variance = true;
  /// Z-score each channel over the whole cohort (all patients and grid
  /// points) so that latent, logMAR and variance units weigh alike.
  bool standardize = true;
};

/// Fixed-grid trajectory profiles, one row per patient. Each row is the
/// concatenation of the channels [latent_1..latent_m, mean, (log) variance],
/// each resampled to `grid` points, so a row has grid * (m + 2) entries.
struct ProfileSet {
  std::vector<std::string> patient_ids;
  Matrix profiles;
  int grid = 0;
  int latent_dim = 0;
  /// Per-channel shift and scale applied when standardizing (0 and 1 otherwise).
  Vector channel_mean;
  Vector channel_scale;

  Eigen::Index size() const noexcept { return profiles.rows(); }
  /// Values of channel `ch` (0..m+1) for row `i` over the grid.
  RowVector channel(Eigen::Index i, int ch) const;
};

/// Linear interpolation of per-record channel values (rows of `values`) at
/// `times` onto `grid` uniform points after min-max scaling the times to
/// [0, 1]. One record, or all records at the same time, broadcasts the
/// (first) record. Returns a grid x channels matrix.
Matrix resample_channels(const std::vector<double>& times, const Matrix& values, int grid);

/// Runs the model on every prefix of each sequence and resamples latents,
/// posterior mean and latent posterior variance onto the grid.
ProfileSet build_profiles(const DklModel& model, const std::vector<PatientSequence>& sequences,
                          const ProfileConfig& config = {});

enum class ClusterMethod { ward, average, kmeans, gmm };
std::string to_string(ClusterMethod m);
ClusterMethod parse_cluster_method(const std::string& name);
inline constexpr ClusterMethod kClusterMethods[] = {ClusterMethod::ward, ClusterMethod::average,
                                                    ClusterMethod::kmeans, ClusterMethod::gmm};

struct ClusterResult {
  ClusterMethod method = ClusterMethod::ward;
  int c = 0;
  /// Labels in 0..c-1, numbered by first appearance in row order.
  std::vector<int> labels;
  std::vector<std::size_t> sizes;
};

enum class Linkage { ward, average };

struct Merge {
  Eigen::Index a = 0;  // cluster ids: < n are points, n + k is the k-th merge
  Eigen::Index b = 0;
  double height = 0.0;
  Eigen::Index size = 0;
};

/// Full agglomerative hierarchy over rows of `points` with Euclidean
/// distance (nearest-neighbour chain with Lance-Williams updates). Ward
/// heights are the Ward distances sqrt(2 n_a n_b / (n_a + n_b)) * |c_a - c_b|.
/// Merges are returned in non-decreasing height order.
std::vector<Merge> agglomerative_tree(const Matrix& points, Linkage linkage);
/// Same from a precomputed symmetric matrix of squared Euclidean distances.
std::vector<Merge> agglomerative_tree_from_sq(const Matrix& sq_dist, Linkage linkage);
/// Labels after applying the first n - c merges.
std::vector<int> cut_tree(const std::vector<Merge>& merges, Eigen::Index n, int c);

ClusterResult agglomerative_cluster(const Matrix& points, int c, Linkage linkage);
/// Lloyd k-means with k-means++ seeding, 100 iterations, 1e-6 center tolerance.
ClusterResult functional_kmeans(const Matrix& points, int c, std::uint64_t seed);

struct GmmFit {
  Vector weights;      // c
  Matrix means;        // c x d
  Matrix variances;    // c x d, floored at kGmmVarianceFloor
  std::vector<int> labels;
  /// Total log-likelihood after each E step.
  std::vector<double> log_likelihood;
  int iterations = 0;
};

inline constexpr double kGmmVarianceFloor = 1e-6;

/// Diagonal-covariance EM initialised from k-means. Stops after `max_iter`
/// iterations or when the mean per-point log-likelihood changes by less than
/// `tol`.
GmmFit fit_gmm(const Matrix& points, int c, std::uint64_t seed, int max_iter = 200, double tol = 1e-6);
ClusterResult gmm_cluster(const Matrix& points, int c, std::uint64_t seed);

ClusterResult run_clustering(const Matrix& points, ClusterMethod method, int c, std::uint64_t seed);

/// Relabels so labels are 0..k-1 in order of first appearance.
std::vector<int> canonical_labels(const std::vector<int>& labels);
std::vector<std::size_t> cluster_sizes(const std::vector<int>& labels);

struct ValidityReport {
  double silhouette = 0.0;
  double davies_bouldin = 0.0;
  double calinski_harabasz = 0.0;
  std::vector<std::size_t> sizes;
};

/// Silhouette (singletons score 0), Davies-Bouldin and Calinski-Harabasz with
/// Euclidean distance. Requires at least two non-empty clusters and n > k.
ValidityReport validity_metrics(const Matrix& points, const std::vector<int>& labels);

/// Normalized mutual information (arithmetic-mean normalization).
double nmi(const std::vector<int>& a, const std::vector<int>& b);
/// Adjusted Rand index.
double ari(const std::vector<int>& a, const std::vector<int>& b);

struct StabilityConfig {
  int n_runs = 100;
  /// Fraction of rows drawn (without replacement) per run for the linkage
  /// methods; 1.0 re-runs on identical inputs.
  double subsample = 0.9;
  std::uint64_t seed = 42;
};

struct StabilityReport {
  ClusterMethod method = ClusterMethod::ward;
  int c = 0;
  double nmi_mean = 0.0;
  double nmi_std = 0.0;
  double ari_mean = 0.0;
  double ari_std = 0.0;
  int n_runs = 0;
};

/// NMI/ARI between consecutive runs (on shared rows for subsampled runs).
StabilityReport stability_protocol(const Matrix& points, ClusterMethod method, int c,
                                   const StabilityConfig& config = {});

/// Smallest-cluster share below which a solution is flagged imbalanced.
inline constexpr double kImbalanceShare = 0.01;

struct SelectionRow {
  ClusterMethod method = ClusterMethod::ward;
  int c = 0;
  ValidityReport validity;
  bool imbalanced = false;
  std::vector<int> labels;
};

struct ModelSelection {
  std::vector<SelectionRow> rows;
  std::size_t chosen = 0;
  const SelectionRow& best() const { return rows.at(chosen); }
};

/// Every method for every c, then the best silhouette among balanced rows
/// (ties broken by lower Davies-Bouldin). Runs on up to `jobs` threads.
ModelSelection model_select(const Matrix& points, std::uint64_t seed, const std::vector<int>& cs = {2, 3, 4, 5},
                            const std::vector<ClusterMethod>& methods = {std::begin(kClusterMethods),
                                                                         std::end(kClusterMethods)},
                            int jobs = 1);

nlohmann::json to_json(const ModelSelection& s);
std::string format_selection_table(const ModelSelection& s);
nlohmann::json to_json(const StabilityReport& r);
std::string format_stability_table(const std::vector<StabilityReport>& rows);

/// "patient_id,cluster" lines with a header.
std::string assignments_csv(const std::vector<std::string>& ids, const std::vector<int>& labels);
/// Flattened profiles: "patient_id,<channel>_<grid index>,...".
std::string profiles_csv(const ProfileSet& profiles);
/// Per-cluster mean and standard deviation of the posterior-mean channel
/// over the grid: "cluster,grid_index,t,mean,std".
std::string cluster_summary_csv(const ProfileSet& profiles, const std::vector<int>& labels);

}  // namespace trajgp
