#include "trajgp/cluster/clustering.hpp"

#include "trajgp/kmeans.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace trajgp {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Matrix squared_distances(const Matrix& x) {
  const Eigen::Index n = x.rows();
  Matrix d(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) d(i, j) = d(j, i) = (x.row(i) - x.row(j)).squaredNorm();
  }
  return d;
}

struct UnionFind {
  std::vector<Eigen::Index> parent;
  explicit UnionFind(Eigen::Index n) : parent(static_cast<std::size_t>(n)) {
    std::iota(parent.begin(), parent.end(), Eigen::Index{0});
  }
  Eigen::Index find(Eigen::Index i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  }
  void unite(Eigen::Index a, Eigen::Index b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

// Merge between the clusters that contain points ra and rb.
struct RawMerge {
  Eigen::Index ra, rb;
  double height;
};

template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, jobs)), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  for (auto& t : pool) t.join();
}

double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::vector<std::vector<long>> contingency(const std::vector<int>& a, const std::vector<int>& b, int& ka, int& kb) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("partition comparison needs two equal, non-empty labelings");
  const auto ca = canonical_labels(a), cb = canonical_labels(b);
  ka = *std::max_element(ca.begin(), ca.end()) + 1;
  kb = *std::max_element(cb.begin(), cb.end()) + 1;
  std::vector<std::vector<long>> t(static_cast<std::size_t>(ka), std::vector<long>(static_cast<std::size_t>(kb), 0));
  for (std::size_t i = 0; i < ca.size(); ++i) ++t[ca[i]][cb[i]];
  return t;
}

bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  return canonical_labels(a) == canonical_labels(b);
}

}  // namespace

RowVector ProfileSet::channel(Eigen::Index i, int ch) const {
  if (ch < 0 || ch >= latent_dim + 2) throw ShapeError("profile channel out of range");
  return profiles.row(i).segment(static_cast<Eigen::Index>(ch) * grid, grid);
}

Matrix resample_channels(const std::vector<double>& times, const Matrix& values, int grid) {
  if (grid < 2) throw ConfigError("profile grid must have at least 2 points");
  if (times.empty() || static_cast<Eigen::Index>(times.size()) != values.rows())
    throw ShapeError("resample_channels: one time per record is required");
  if (!std::is_sorted(times.begin(), times.end())) throw DataError("record times must be ascending");
  Matrix out(grid, values.cols());
  const double t0 = times.front(), t1 = times.back();
  if (!(t1 > t0)) {
    out.rowwise() = values.row(0);
    return out;
  }
  std::size_t j = 0;
  for (int g = 0; g < grid; ++g) {
    const double u = t0 + (t1 - t0) * static_cast<double>(g) / static_cast<double>(grid - 1);
    while (j + 2 < times.size() && times[j + 1] < u) ++j;
    const double span = times[j + 1] - times[j];
    const double w = span > 0.0 ? std::clamp((u - times[j]) / span, 0.0, 1.0) : 1.0;
    const auto lo = values.row(static_cast<Eigen::Index>(j));
    out.row(g) = lo + w * (values.row(static_cast<Eigen::Index>(j + 1)) - lo);
  }
  out.row(grid - 1) = values.row(values.rows() - 1);
  return out;
}

ProfileSet build_profiles(const DklModel& model, const std::vector<PatientSequence>& sequences,
                          const ProfileConfig& config) {
  if (config.grid < 2) throw ConfigError("profile grid must have at least 2 points");
  const int m = static_cast<int>(model.extractor.latent_dim);
  ProfileSet set;
  set.grid = config.grid;
  set.latent_dim = m;
  set.profiles.resize(static_cast<Eigen::Index>(sequences.size()), static_cast<Eigen::Index>(config.grid) * (m + 2));
  for (std::size_t p = 0; p < sequences.size(); ++p) {
    const PatientSequence& seq = sequences[p];
    if (seq.length() == 0) throw DataError("patient " + seq.patient_id + " has no records");
    const SamplePredictions pred = predict_sequence(model, seq);
    Matrix values(seq.length(), m + 2);
    values.leftCols(m) = pred.latents;
    values.col(m) = pred.prediction.mean;
    values.col(m + 1) =
        config.log_variance ? Vector(pred.prediction.latent_variance.array().log()) : pred.prediction.latent_variance;
    std::vector<double> times;
    for (const Date& d : seq.dates) times.push_back(static_cast<double>(days_since_epoch(d)));
    const Matrix grid = resample_channels(times, values, config.grid);
    if (!grid.allFinite()) throw NumericalError("non-finite profile for patient " + seq.patient_id);
    for (int ch = 0; ch < m + 2; ++ch)
      set.profiles.row(static_cast<Eigen::Index>(p)).segment(ch * config.grid, config.grid) = grid.col(ch).transpose();
    set.patient_ids.push_back(seq.patient_id);
  }
  set.channel_mean = Vector::Zero(m + 2);
  set.channel_scale = Vector::Ones(m + 2);
  if (config.standardize && set.size() > 0) {
    // Accumulate in patient-id order so the statistics do not depend on input order.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(set.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return set.patient_ids[static_cast<std::size_t>(a)] < set.patient_ids[static_cast<std::size_t>(b)];
    });
    const double count = static_cast<double>(set.size()) * config.grid;
    for (int ch = 0; ch < m + 2; ++ch) {
      double sum = 0.0;
      for (Eigen::Index i : order) sum += set.profiles.row(i).segment(ch * config.grid, config.grid).sum();
      const double mean = sum / count;
      double ss = 0.0;
      for (Eigen::Index i : order)
        ss += (set.profiles.row(i).segment(ch * config.grid, config.grid).array() - mean).square().sum();
      const double sd = std::sqrt(ss / count);
      set.channel_mean(ch) = mean;
      set.channel_scale(ch) = sd > 0.0 ? sd : 1.0;
      set.profiles.middleCols(ch * config.grid, config.grid) =
          (set.profiles.middleCols(ch * config.grid, config.grid).array() - mean) / set.channel_scale(ch);
    }
  }
  return set;
}

std::string to_string(ClusterMethod m) {
  switch (m) {
    case ClusterMethod::ward: return "ward";
    case ClusterMethod::average: return "average";
    case ClusterMethod::kmeans: return "kmeans";
    case ClusterMethod::gmm: return "gmm";
  }
  return "?";
}

ClusterMethod parse_cluster_method(const std::string& name) {
  for (ClusterMethod m : kClusterMethods)
    if (to_string(m) == name) return m;
  throw ConfigError("unknown clustering method '" + name + "' (valid: ward, average, kmeans, gmm)");
}

std::vector<int> canonical_labels(const std::vector<int>& labels) {
  std::map<int, int> ids;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = ids.try_emplace(labels[i], static_cast<int>(ids.size()));
    out[i] = it->second;
  }
  return out;
}

std::vector<std::size_t> cluster_sizes(const std::vector<int>& labels) {
  std::vector<std::size_t> sizes;
  for (int l : labels) {
    if (l < 0) throw ShapeError("negative cluster label");
    if (static_cast<std::size_t>(l) >= sizes.size()) sizes.resize(static_cast<std::size_t>(l) + 1, 0);
    ++sizes[static_cast<std::size_t>(l)];
  }
  return sizes;
}

std::vector<Merge> agglomerative_tree(const Matrix& points, Linkage linkage) {
  if (!points.allFinite()) throw NumericalError("clustering input contains non-finite values");
  return agglomerative_tree_from_sq(squared_distances(points), linkage);
}

std::vector<Merge> agglomerative_tree_from_sq(const Matrix& sq_dist, Linkage linkage) {
  const Eigen::Index n = sq_dist.rows();
  if (n == 0 || sq_dist.cols() != n) throw ShapeError("distance matrix must be square and non-empty");
  // Ward works on squared distances, average linkage on distances.
  Matrix d = linkage == Linkage::ward ? sq_dist : Matrix(sq_dist.cwiseMax(0.0).cwiseSqrt());
  std::vector<Eigen::Index> size(static_cast<std::size_t>(n), 1);
  std::vector<Eigen::Index> rep(static_cast<std::size_t>(n));
  std::iota(rep.begin(), rep.end(), Eigen::Index{0});
  std::vector<double> node_height(static_cast<std::size_t>(n), 0.0);
  std::vector<char> active(static_cast<std::size_t>(n), 1);
  std::vector<RawMerge> raw;
  std::vector<Eigen::Index> chain;

  for (Eigen::Index remaining = n; remaining > 1; --remaining) {
    if (chain.empty()) {
      Eigen::Index first = 0;
      while (!active[first]) ++first;
      chain.push_back(first);
    }
    Eigen::Index a = 0, b = 0;
    for (;;) {
      a = chain.back();
      const Eigen::Index prev = chain.size() >= 2 ? chain[chain.size() - 2] : -1;
      double best = kInf;
      Eigen::Index arg = -1;
      for (Eigen::Index x = 0; x < n; ++x) {
        if (!active[x] || x == a) continue;
        if (d(a, x) < best) {
          best = d(a, x);
          arg = x;
        }
      }
      if (prev >= 0 && d(a, prev) <= best) arg = prev;
      if (arg == prev) {
        b = prev;
        break;
      }
      chain.push_back(arg);
    }
    chain.pop_back();
    chain.pop_back();

    const Eigen::Index lo = std::min(a, b), hi = std::max(a, b);
    const double h = linkage == Linkage::ward ? std::sqrt(std::max(d(lo, hi), 0.0)) : d(lo, hi);
    raw.push_back({rep[lo], rep[hi], std::max({h, node_height[lo], node_height[hi]})});
    const double ni = static_cast<double>(size[lo]), nj = static_cast<double>(size[hi]);
    for (Eigen::Index k = 0; k < n; ++k) {
      if (!active[k] || k == lo || k == hi) continue;
      const double nk = static_cast<double>(size[k]);
      double v;
      if (linkage == Linkage::ward)
        v = ((ni + nk) * d(k, lo) + (nj + nk) * d(k, hi) - nk * d(lo, hi)) / (ni + nj + nk);
      else
        v = (ni * d(k, lo) + nj * d(k, hi)) / (ni + nj);
      d(k, lo) = d(lo, k) = v;
    }
    active[hi] = 0;
    size[lo] += size[hi];
    rep[lo] = std::min(rep[lo], rep[hi]);
    node_height[lo] = raw.back().height;
  }

  std::stable_sort(raw.begin(), raw.end(), [](const RawMerge& x, const RawMerge& y) { return x.height < y.height; });
  // Rebuild scipy-style node ids in sorted order.
  UnionFind uf(n);
  std::vector<Eigen::Index> node_of_root(static_cast<std::size_t>(n));
  std::iota(node_of_root.begin(), node_of_root.end(), Eigen::Index{0});
  std::vector<Eigen::Index> size_of_root(static_cast<std::size_t>(n), 1);
  std::vector<Merge> merges;
  for (std::size_t k = 0; k < raw.size(); ++k) {
    const Eigen::Index ra = uf.find(raw[k].ra), rb = uf.find(raw[k].rb);
    Merge m;
    m.a = std::min(node_of_root[ra], node_of_root[rb]);
    m.b = std::max(node_of_root[ra], node_of_root[rb]);
    m.height = raw[k].height;
    m.size = size_of_root[ra] + size_of_root[rb];
    uf.unite(ra, rb);
    const Eigen::Index r = uf.find(ra);
    node_of_root[r] = n + static_cast<Eigen::Index>(k);
    size_of_root[r] = m.size;
    merges.push_back(m);
  }
  return merges;
}

std::vector<int> cut_tree(const std::vector<Merge>& merges, Eigen::Index n, int c) {
  if (c < 1 || c > n) throw ConfigError("cannot cut " + std::to_string(n) + " points into " + std::to_string(c) + " clusters");
  if (static_cast<Eigen::Index>(merges.size()) != n - 1) throw ShapeError("cut_tree: merge list does not match n");
  // Each node id maps to one representative point.
  std::vector<Eigen::Index> node_rep(static_cast<std::size_t>(2 * n - 1));
  std::iota(node_rep.begin(), node_rep.begin() + n, Eigen::Index{0});
  UnionFind uf(n);
  for (Eigen::Index k = 0; k < n - 1; ++k) {
    const Merge& m = merges[static_cast<std::size_t>(k)];
    node_rep[n + k] = node_rep[m.a];
    if (k < n - c) uf.unite(node_rep[m.a], node_rep[m.b]);
  }
  std::vector<int> roots(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) roots[i] = static_cast<int>(uf.find(i));
  return canonical_labels(roots);
}

namespace {

ClusterResult make_result(ClusterMethod method, int c, std::vector<int> labels) {
  ClusterResult r;
  r.method = method;
  r.c = c;
  r.labels = canonical_labels(labels);
  r.sizes = cluster_sizes(r.labels);
  return r;
}

void check_count(const Matrix& points, int c) {
  if (c < 1 || c > points.rows())
    throw ConfigError("cluster count " + std::to_string(c) + " must lie in [1, " + std::to_string(points.rows()) + "]");
  if (!points.allFinite()) throw NumericalError("clustering input contains non-finite values");
}

}  // namespace

ClusterResult agglomerative_cluster(const Matrix& points, int c, Linkage linkage) {
  check_count(points, c);
  const auto method = linkage == Linkage::ward ? ClusterMethod::ward : ClusterMethod::average;
  return make_result(method, c, cut_tree(agglomerative_tree(points, linkage), points.rows(), c));
}

ClusterResult functional_kmeans(const Matrix& points, int c, std::uint64_t seed) {
  check_count(points, c);
  return make_result(ClusterMethod::kmeans, c, kmeans(points, c, seed, 100, 1, 1e-6).labels);
}

GmmFit fit_gmm(const Matrix& points, int c, std::uint64_t seed, int max_iter, double tol) {
  check_count(points, c);
  const Eigen::Index n = points.rows(), d = points.cols();
  const KMeansResult init = kmeans(points, c, seed, 100, 1, 1e-6);
  GmmFit g;
  g.means = init.centers;
  g.variances = Matrix::Zero(c, d);
  g.weights = Vector::Zero(c);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int k = init.labels[i];
    g.variances.row(k) += (points.row(i) - g.means.row(k)).array().square().matrix();
    g.weights(k) += 1.0;
  }
  for (int k = 0; k < c; ++k) g.variances.row(k) /= std::max(g.weights(k), 1.0);
  g.variances = g.variances.cwiseMax(kGmmVarianceFloor);
  g.weights /= static_cast<double>(n);

  const double log2pi = std::log(2.0 * 3.14159265358979323846);
  Matrix resp(n, c);
  double prev = -kInf;
  for (int it = 0; it < max_iter; ++it) {
    // E step.
    const Eigen::ArrayXd log_det = g.variances.array().log().rowwise().sum();
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int k = 0; k < c; ++k) {
        const double maha = ((points.row(i) - g.means.row(k)).array().square() / g.variances.row(k).array()).sum();
        resp(i, k) = std::log(g.weights(k)) - 0.5 * (static_cast<double>(d) * log2pi + log_det(k) + maha);
      }
      const double mx = resp.row(i).maxCoeff();
      const double lse = mx + std::log((resp.row(i).array() - mx).exp().sum());
      resp.row(i) = (resp.row(i).array() - lse).exp();
      ll += lse;
    }
    g.log_likelihood.push_back(ll);
    g.iterations = it + 1;
    if (!std::isfinite(ll)) throw NumericalError("GMM log-likelihood is not finite");
    if (std::abs(ll - prev) / static_cast<double>(n) < tol) break;
    prev = ll;
    // M step.
    const Vector nk = resp.colwise().sum().transpose();
    for (int k = 0; k < c; ++k) {
      if (nk(k) <= 1e-12) continue;  // keep a starved component where it is
      g.means.row(k) = resp.col(k).transpose() * points / nk(k);
      RowVector var = RowVector::Zero(d);
      for (Eigen::Index i = 0; i < n; ++i) var += resp(i, k) * (points.row(i) - g.means.row(k)).array().square().matrix();
      g.variances.row(k) = (var / nk(k)).cwiseMax(kGmmVarianceFloor);
    }
    g.weights = (nk.array() / static_cast<double>(n)).max(1e-300).matrix();
    g.weights /= g.weights.sum();
  }
  g.labels.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index k;
    resp.row(i).maxCoeff(&k);
    g.labels[i] = static_cast<int>(k);
  }
  return g;
}

ClusterResult gmm_cluster(const Matrix& points, int c, std::uint64_t seed) {
  return make_result(ClusterMethod::gmm, c, fit_gmm(points, c, seed).labels);
}

ClusterResult run_clustering(const Matrix& points, ClusterMethod method, int c, std::uint64_t seed) {
  switch (method) {
    case ClusterMethod::ward: return agglomerative_cluster(points, c, Linkage::ward);
    case ClusterMethod::average: return agglomerative_cluster(points, c, Linkage::average);
    case ClusterMethod::kmeans: return functional_kmeans(points, c, seed);
    case ClusterMethod::gmm: return gmm_cluster(points, c, seed);
  }
  throw ConfigError("unknown clustering method");
}

ValidityReport validity_metrics(const Matrix& points, const std::vector<int>& labels) {
  const Eigen::Index n = points.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n) throw ShapeError("one label per profile is required");
  const std::vector<int> lab = canonical_labels(labels);
  ValidityReport r;
  r.sizes = cluster_sizes(lab);
  const int k = static_cast<int>(r.sizes.size());
  if (k < 2) throw ConfigError("validity metrics need at least two clusters");
  if (k >= n) throw ConfigError("validity metrics need fewer clusters than points");

  Matrix centroids = Matrix::Zero(k, points.cols());
  for (Eigen::Index i = 0; i < n; ++i) centroids.row(lab[i]) += points.row(i);
  for (int c = 0; c < k; ++c) centroids.row(c) /= static_cast<double>(r.sizes[c]);

  // Silhouette.
  double sil = 0.0;
  std::vector<double> sum_to(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::fill(sum_to.begin(), sum_to.end(), 0.0);
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) sum_to[lab[j]] += (points.row(i) - points.row(j)).norm();
    const int own = lab[i];
    if (r.sizes[own] == 1) continue;
    const double a = sum_to[own] / static_cast<double>(r.sizes[own] - 1);
    double b = kInf;
    for (int c = 0; c < k; ++c)
      if (c != own) b = std::min(b, sum_to[c] / static_cast<double>(r.sizes[c]));
    const double den = std::max(a, b);
    if (den > 0.0) sil += (b - a) / den;
  }
  r.silhouette = sil / static_cast<double>(n);

  // Davies-Bouldin.
  Vector scatter = Vector::Zero(k);
  for (Eigen::Index i = 0; i < n; ++i) scatter(lab[i]) += (points.row(i) - centroids.row(lab[i])).norm();
  for (int c = 0; c < k; ++c) scatter(c) /= static_cast<double>(r.sizes[c]);
  double db = 0.0;
  for (int c = 0; c < k; ++c) {
    double worst = 0.0;
    for (int e = 0; e < k; ++e) {
      if (e == c) continue;
      const double sep = (centroids.row(c) - centroids.row(e)).norm();
      worst = std::max(worst, sep > 0.0 ? (scatter(c) + scatter(e)) / sep : kInf);
    }
    db += worst;
  }
  r.davies_bouldin = db / k;

  // Calinski-Harabasz.
  const RowVector overall = points.colwise().mean();
  double between = 0.0, within = 0.0;
  for (int c = 0; c < k; ++c) between += static_cast<double>(r.sizes[c]) * (centroids.row(c) - overall).squaredNorm();
  for (Eigen::Index i = 0; i < n; ++i) within += (points.row(i) - centroids.row(lab[i])).squaredNorm();
  r.calinski_harabasz = within > 0.0 ? (between / (k - 1)) / (within / static_cast<double>(n - k)) : kInf;
  return r;
}

double nmi(const std::vector<int>& a, const std::vector<int>& b) {
  int ka = 0, kb = 0;
  const auto t = contingency(a, b, ka, kb);
  if (same_partition(a, b)) return 1.0;
  const double n = static_cast<double>(a.size());
  std::vector<double> ra(static_cast<std::size_t>(ka), 0.0), rb(static_cast<std::size_t>(kb), 0.0);
  for (int i = 0; i < ka; ++i)
    for (int j = 0; j < kb; ++j) {
      ra[i] += static_cast<double>(t[i][j]);
      rb[j] += static_cast<double>(t[i][j]);
    }
  double mi = 0.0, ha = 0.0, hb = 0.0;
  for (int i = 0; i < ka; ++i)
    for (int j = 0; j < kb; ++j)
      if (t[i][j] > 0) {
        const double nij = static_cast<double>(t[i][j]);
        mi += nij / n * std::log(n * nij / (ra[i] * rb[j]));
      }
  for (double x : ra) ha -= x / n * std::log(x / n);
  for (double x : rb) hb -= x / n * std::log(x / n);
  const double den = 0.5 * (ha + hb);
  if (den <= 0.0) return 1.0;
  return std::clamp(mi / den, 0.0, 1.0);
}

double ari(const std::vector<int>& a, const std::vector<int>& b) {
  int ka = 0, kb = 0;
  const auto t = contingency(a, b, ka, kb);
  if (same_partition(a, b)) return 1.0;
  auto comb2 = [](double x) { return x * (x - 1.0) / 2.0; };
  const double n = static_cast<double>(a.size());
  std::vector<double> ra(static_cast<std::size_t>(ka), 0.0), rb(static_cast<std::size_t>(kb), 0.0);
  double index = 0.0;
  for (int i = 0; i < ka; ++i)
    for (int j = 0; j < kb; ++j) {
      index += comb2(static_cast<double>(t[i][j]));
      ra[i] += static_cast<double>(t[i][j]);
      rb[j] += static_cast<double>(t[i][j]);
    }
  double sa = 0.0, sb = 0.0;
  for (double x : ra) sa += comb2(x);
  for (double x : rb) sb += comb2(x);
  const double expected = sa * sb / comb2(n);
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 0.0;
  return (index - expected) / (max_index - expected);
}

StabilityReport stability_protocol(const Matrix& points, ClusterMethod method, int c, const StabilityConfig& config) {
  if (config.n_runs < 2) throw ConfigError("stability protocol needs at least 2 runs");
  if (!(config.subsample > 0.0 && config.subsample <= 1.0)) throw ConfigError("stability subsample must lie in (0, 1]");
  check_count(points, c);
  const Eigen::Index n = points.rows();
  const bool linkage = method == ClusterMethod::ward || method == ClusterMethod::average;
  const Matrix sq = linkage ? squared_distances(points) : Matrix();
  const Eigen::Index take = linkage ? std::max<Eigen::Index>(c, std::llround(config.subsample * static_cast<double>(n))) : n;

  // Each run: full-length labels with -1 for rows left out.
  std::vector<std::vector<int>> runs;
  for (int r = 0; r < config.n_runs; ++r) {
    const std::uint64_t seed = derive_seed(config.seed, "cluster.stability", static_cast<std::uint64_t>(r));
    std::vector<int> full(static_cast<std::size_t>(n), -1);
    if (linkage) {
      std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
      std::iota(idx.begin(), idx.end(), Eigen::Index{0});
      if (take < n) {
        std::mt19937_64 rng(seed);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(static_cast<std::size_t>(take));
        std::sort(idx.begin(), idx.end());
      }
      const Eigen::Map<const Eigen::Array<Eigen::Index, Eigen::Dynamic, 1>> rows(idx.data(), take);
      const Matrix sub = sq(rows, rows);
      const auto labels =
          cut_tree(agglomerative_tree_from_sq(sub, method == ClusterMethod::ward ? Linkage::ward : Linkage::average),
                   take, c);
      for (Eigen::Index i = 0; i < take; ++i) full[idx[i]] = labels[i];
    } else {
      full = run_clustering(points, method, c, seed).labels;
    }
    runs.push_back(std::move(full));
  }

  std::vector<double> nmis, aris;
  for (int r = 1; r < config.n_runs; ++r) {
    std::vector<int> a, b;
    for (Eigen::Index i = 0; i < n; ++i)
      if (runs[r - 1][i] >= 0 && runs[r][i] >= 0) {
        a.push_back(runs[r - 1][i]);
        b.push_back(runs[r][i]);
      }
    nmis.push_back(nmi(a, b));
    aris.push_back(ari(a, b));
  }
  StabilityReport rep;
  rep.method = method;
  rep.c = c;
  rep.n_runs = config.n_runs;
  rep.nmi_mean = std::accumulate(nmis.begin(), nmis.end(), 0.0) / static_cast<double>(nmis.size());
  rep.ari_mean = std::accumulate(aris.begin(), aris.end(), 0.0) / static_cast<double>(aris.size());
  rep.nmi_std = sample_std(nmis, rep.nmi_mean);
  rep.ari_std = sample_std(aris, rep.ari_mean);
  return rep;
}

ModelSelection model_select(const Matrix& points, std::uint64_t seed, const std::vector<int>& cs,
                            const std::vector<ClusterMethod>& methods, int jobs) {
  if (!points.allFinite()) throw NumericalError("clustering input contains non-finite values");
  const Eigen::Index n = points.rows();
  std::vector<std::pair<ClusterMethod, int>> todo;
  for (ClusterMethod m : methods)
    for (int c : cs)
      if (c >= 2 && c < n) todo.emplace_back(m, c);
  if (todo.empty()) throw ConfigError("model selection has no admissible (method, c) pair");

  std::map<ClusterMethod, std::vector<Merge>> trees;
  const bool need_ward = std::count(methods.begin(), methods.end(), ClusterMethod::ward) > 0;
  const bool need_avg = std::count(methods.begin(), methods.end(), ClusterMethod::average) > 0;
  if (need_ward || need_avg) {
    const Matrix sq = squared_distances(points);
    if (need_ward) trees[ClusterMethod::ward] = agglomerative_tree_from_sq(sq, Linkage::ward);
    if (need_avg) trees[ClusterMethod::average] = agglomerative_tree_from_sq(sq, Linkage::average);
  }

  ModelSelection sel;
  sel.rows.resize(todo.size());
  parallel_for(todo.size(), jobs, [&](std::size_t i) {
    const auto [m, c] = todo[i];
    SelectionRow& row = sel.rows[i];
    row.method = m;
    row.c = c;
    const auto it = trees.find(m);
    row.labels = it != trees.end() ? cut_tree(it->second, n, c)
                                   : run_clustering(points, m, c, derive_seed(seed, "cluster." + to_string(m))).labels;
    const auto sizes = cluster_sizes(row.labels);
    if (sizes.size() >= 2) {
      row.validity = validity_metrics(points, row.labels);
    } else {
      row.validity.sizes = sizes;
      row.validity.silhouette = -1.0;
      row.validity.davies_bouldin = kInf;
    }
    const std::size_t smallest = *std::min_element(sizes.begin(), sizes.end());
    row.imbalanced = static_cast<int>(sizes.size()) < c ||
                     static_cast<double>(smallest) < kImbalanceShare * static_cast<double>(n);
  });

  auto better = [](const SelectionRow& x, const SelectionRow& y) {
    if (x.validity.silhouette != y.validity.silhouette) return x.validity.silhouette > y.validity.silhouette;
    return x.validity.davies_bouldin < y.validity.davies_bouldin;
  };
  const bool any_balanced = std::any_of(sel.rows.begin(), sel.rows.end(), [](const SelectionRow& r) { return !r.imbalanced; });
  bool have = false;
  for (std::size_t i = 0; i < sel.rows.size(); ++i) {
    if (any_balanced && sel.rows[i].imbalanced) continue;
    if (!have || better(sel.rows[i], sel.rows[sel.chosen])) {
      sel.chosen = i;
      have = true;
    }
  }
  return sel;
}

namespace {

json validity_json(const ValidityReport& v) {
  auto num = [](double x) { return std::isfinite(x) ? json(x) : json(nullptr); };
  return {{"silhouette", num(v.silhouette)},
          {"davies_bouldin", num(v.davies_bouldin)},
          {"calinski_harabasz", num(v.calinski_harabasz)},
          {"sizes", v.sizes}};
}

std::string fmt(double v, int precision = 4) {
  if (!std::isfinite(v)) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::string join_sizes(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? ", " : "") + std::to_string(s[i]);
  return out + "]";
}

std::string render(const std::vector<std::vector<std::string>>& cells) {
  std::vector<std::size_t> w(cells.front().size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) w[c] = std::max(w[c], row[c].size());
  std::ostringstream out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      const std::string& s = cells[r][c];
      if (c == 0) out << s << std::string(w[c] - s.size(), ' ');
      else out << "  " << std::string(w[c] - s.size(), ' ') << s;
    }
    out << '\n';
    if (r == 0) out << std::string(std::accumulate(w.begin(), w.end(), 2 * (w.size() - 1)), '-') << '\n';
  }
  return out.str();
}

}  // namespace

json to_json(const ModelSelection& s) {
  json rows = json::array();
  for (const auto& r : s.rows) {
    json j = validity_json(r.validity);
    j["method"] = to_string(r.method);
    j["c"] = r.c;
    j["imbalanced"] = r.imbalanced;
    rows.push_back(std::move(j));
  }
  return {{"rows", rows},
          {"chosen", {{"method", to_string(s.best().method)}, {"c", s.best().c}}}};
}

std::string format_selection_table(const ModelSelection& s) {
  std::vector<std::vector<std::string>> cells{{"Method", "c", "Silhouette", "Davies-Bouldin", "Calinski-Harabasz", "Sizes", "Note"}};
  for (std::size_t i = 0; i < s.rows.size(); ++i) {
    const auto& r = s.rows[i];
    std::string note = r.imbalanced ? "imbalanced" : "";
    if (i == s.chosen) note = note.empty() ? "selected" : note + ", selected";
    cells.push_back({to_string(r.method), std::to_string(r.c), fmt(r.validity.silhouette), fmt(r.validity.davies_bouldin),
                     fmt(r.validity.calinski_harabasz, 2), join_sizes(r.validity.sizes), note});
  }
  return render(cells);
}

json to_json(const StabilityReport& r) {
  return {{"method", to_string(r.method)}, {"c", r.c},           {"n_runs", r.n_runs}, {"nmi_mean", r.nmi_mean},
          {"nmi_std", r.nmi_std},         {"ari_mean", r.ari_mean}, {"ari_std", r.ari_std}};
}

std::string format_stability_table(const std::vector<StabilityReport>& rows) {
  std::vector<std::vector<std::string>> cells{{"Method", "c", "Runs", "NMI", "ARI"}};
  for (const auto& r : rows)
    cells.push_back({to_string(r.method), std::to_string(r.c), std::to_string(r.n_runs),
                     fmt(r.nmi_mean, 3) + " +- " + fmt(r.nmi_std, 3), fmt(r.ari_mean, 3) + " +- " + fmt(r.ari_std, 3)});
  return render(cells);
}

std::string assignments_csv(const std::vector<std::string>& ids, const std::vector<int>& labels) {
  if (ids.size() != labels.size()) throw ShapeError("one label per patient is required");
  std::string out = "patient_id,cluster\n";
  for (std::size_t i = 0; i < ids.size(); ++i) out += ids[i] + "," + std::to_string(labels[i]) + "\n";
  return out;
}

std::string profiles_csv(const ProfileSet& profiles) {
  std::string out = "patient_id";
  for (int ch = 0; ch < profiles.latent_dim + 2; ++ch) {
    const std::string name = ch < profiles.latent_dim ? "z" + std::to_string(ch + 1) : ch == profiles.latent_dim ? "mu" : "var";
    for (int g = 0; g < profiles.grid; ++g) out += "," + name + "_" + std::to_string(g);
  }
  out += "\n";
  for (Eigen::Index i = 0; i < profiles.size(); ++i) {
    out += profiles.patient_ids[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < profiles.profiles.cols(); ++j) out += "," + fmt(profiles.profiles(i, j), 8);
    out += "\n";
  }
  return out;
}

std::string cluster_summary_csv(const ProfileSet& profiles, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != profiles.size()) throw ShapeError("one label per profile is required");
  const auto sizes = cluster_sizes(labels);
  const int mean_ch = profiles.latent_dim;
  std::string out = "cluster,grid_index,t,mean,std\n";
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    if (sizes[c] == 0) continue;
    Matrix rows(static_cast<Eigen::Index>(sizes[c]), profiles.grid);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < profiles.size(); ++i)
      if (labels[i] == static_cast<int>(c)) rows.row(k++) = profiles.channel(i, mean_ch);
    const RowVector mean = rows.colwise().mean();
    for (int g = 0; g < profiles.grid; ++g) {
      const double sd = rows.rows() > 1
                            ? std::sqrt((rows.col(g).array() - mean(g)).square().sum() / static_cast<double>(rows.rows() - 1))
                            : 0.0;
      out += std::to_string(c) + "," + std::to_string(g) + "," + fmt(g / static_cast<double>(profiles.grid - 1), 6) + "," +
             fmt(mean(g), 6) + "," + fmt(sd, 6) + "\n";
    }
  }
  return out;
}

}  // namespace trajgp
