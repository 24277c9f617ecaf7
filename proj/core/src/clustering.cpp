#include "vreid/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "vreid/error.hpp"
#include "vreid/rng.hpp"

namespace vreid {

using Eigen::Index;
using Eigen::MatrixXd;

namespace {

double squared_distance(const MatrixXd& a, Index i, const MatrixXd& b, Index j) {
  double s = 0.0;
  for (Index k = 0; k < a.cols(); ++k) {
    const double d = a(i, k) - b(j, k);
    s += d * d;
  }
  return s;
}

std::size_t nearest_center(const MatrixXd& points, Index i, const MatrixXd& centers, double* dist = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Index c = 0; c < centers.rows(); ++c) {
    const double d = squared_distance(points, i, centers, c);
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::size_t>(c);
    }
  }
  if (dist) *dist = best_d;
  return best;
}

MatrixXd kmeans_plus_plus(const MatrixXd& points, std::size_t k, Rng& rng) {
  const Index n = points.rows();
  MatrixXd centers(static_cast<Index>(k), points.cols());
  centers.row(0) = points.row(static_cast<Index>(rng.index(static_cast<std::size_t>(n))));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = squared_distance(points, i, centers, 0);
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    Index chosen = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double cumulative = 0.0;
      chosen = n - 1;
      for (Index i = 0; i < n; ++i) {
        cumulative += d2[static_cast<std::size_t>(i)];
        if (cumulative > target) {
          chosen = i;
          break;
        }
      }
    }
    centers.row(static_cast<Index>(c)) = points.row(chosen);
    for (Index i = 0; i < n; ++i) {
      auto& v = d2[static_cast<std::size_t>(i)];
      v = std::min(v, squared_distance(points, i, centers, static_cast<Index>(c)));
    }
  }
  return centers;
}

// One pass of single-point transfers: move x from cluster a to b when
// n_b/(n_b+1)*|x-c_b|^2 < n_a/(n_a-1)*|x-c_a|^2, i.e. when the move lowers the
// total inertia with both centers recomputed. Lloyd fixpoints that are not
// transfer-stable get escaped this way. Returns whether anything moved.
bool transfer_pass(const MatrixXd& points, std::vector<std::size_t>& labels, MatrixXd& centers) {
  const Index n = points.rows();
  const auto k = static_cast<std::size_t>(centers.rows());
  MatrixXd sums = MatrixXd::Zero(centers.rows(), centers.cols());
  std::vector<std::size_t> counts(k, 0);
  for (Index i = 0; i < n; ++i) {
    sums.row(static_cast<Index>(labels[static_cast<std::size_t>(i)])) += points.row(i);
    ++counts[labels[static_cast<std::size_t>(i)]];
  }
  bool moved = false;
  for (Index i = 0; i < n; ++i) {
    const std::size_t a = labels[static_cast<std::size_t>(i)];
    if (counts[a] < 2) continue;
    const double na = static_cast<double>(counts[a]);
    const double remove_gain = na / (na - 1.0) * squared_distance(points, i, centers, static_cast<Index>(a));
    std::size_t best = a;
    double best_cost = remove_gain * (1.0 - 1e-12);
    for (std::size_t b = 0; b < k; ++b) {
      if (b == a || counts[b] == 0) continue;
      const double nb = static_cast<double>(counts[b]);
      const double add_cost = nb / (nb + 1.0) * squared_distance(points, i, centers, static_cast<Index>(b));
      if (add_cost < best_cost) {
        best_cost = add_cost;
        best = b;
      }
    }
    if (best == a) continue;
    sums.row(static_cast<Index>(a)) -= points.row(i);
    sums.row(static_cast<Index>(best)) += points.row(i);
    --counts[a];
    ++counts[best];
    centers.row(static_cast<Index>(a)) = sums.row(static_cast<Index>(a)) / static_cast<double>(counts[a]);
    centers.row(static_cast<Index>(best)) = sums.row(static_cast<Index>(best)) / static_cast<double>(counts[best]);
    labels[static_cast<std::size_t>(i)] = best;
    moved = true;
  }
  return moved;
}

ClusterResult lloyd(const MatrixXd& points, MatrixXd centers, std::size_t max_iter) {
  const Index n = points.rows();
  const auto k = static_cast<std::size_t>(centers.rows());
  std::vector<std::size_t> labels(static_cast<std::size_t>(n), k);
  ClusterResult result;
  for (std::size_t it = 0; it < std::max<std::size_t>(max_iter, 1); ++it) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      const std::size_t c = nearest_center(points, i, centers);
      if (c != labels[static_cast<std::size_t>(i)]) {
        labels[static_cast<std::size_t>(i)] = c;
        changed = true;
      }
    }
    if (!changed && !transfer_pass(points, labels, centers)) break;

    MatrixXd sums = MatrixXd::Zero(centers.rows(), centers.cols());
    std::vector<std::size_t> counts(k, 0);
    for (Index i = 0; i < n; ++i) {
      sums.row(static_cast<Index>(labels[static_cast<std::size_t>(i)])) += points.row(i);
      ++counts[labels[static_cast<std::size_t>(i)]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) centers.row(static_cast<Index>(c)) = sums.row(static_cast<Index>(c)) / static_cast<double>(counts[c]);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      Index far = 0;
      double far_d = -1.0;
      for (Index i = 0; i < n; ++i) {
        const double d = squared_distance(points, i, centers, static_cast<Index>(labels[static_cast<std::size_t>(i)]));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      centers.row(static_cast<Index>(c)) = points.row(far);
    }
    double inertia = 0.0;
    for (Index i = 0; i < n; ++i) {
      inertia += squared_distance(points, i, centers, static_cast<Index>(labels[static_cast<std::size_t>(i)]));
    }
    result.inertia_history.push_back(inertia);
  }
  result.labels = std::move(labels);
  result.inertia = result.inertia_history.empty() ? 0.0 : result.inertia_history.back();
  result.centers.reserve(k);
  for (std::size_t c = 0; c < k; ++c) {
    FeatureVector v(static_cast<std::size_t>(centers.cols()));
    for (Index d = 0; d < centers.cols(); ++d) v[static_cast<std::size_t>(d)] = centers(static_cast<Index>(c), d);
    result.centers.push_back(std::move(v));
  }
  return result;
}

}  // namespace

MatrixXd to_matrix(std::span<const FeatureVector> points) {
  require(!points.empty(), ErrorCode::TooFewPoints, "no points");
  const auto dim = points.front().dim();
  MatrixXd m(static_cast<Index>(points.size()), static_cast<Index>(dim));
  for (std::size_t i = 0; i < points.size(); ++i) {
    require(points[i].dim() == dim, ErrorCode::DimMismatch, "point " + std::to_string(i) + " has a different dim");
    for (std::size_t d = 0; d < dim; ++d) m(static_cast<Index>(i), static_cast<Index>(d)) = points[i][d];
  }
  return m;
}

ClusterResult kmeans(const MatrixXd& points, std::size_t k, std::uint64_t seed, const KMeansOptions& options) {
  require(k >= 1, ErrorCode::BadConfig, "k must be >= 1");
  require(static_cast<std::size_t>(points.rows()) >= k, ErrorCode::TooFewPoints,
          std::to_string(points.rows()) + " points for k=" + std::to_string(k));
  ClusterResult best;
  bool have = false;
  for (std::size_t run = 0; run < std::max<std::size_t>(options.n_init, 1); ++run) {
    Rng rng(Rng::derive(seed, run));
    ClusterResult r = lloyd(points, kmeans_plus_plus(points, k, rng), options.max_iter);
    if (!have || r.inertia < best.inertia) {
      best = std::move(r);
      have = true;
    }
  }
  return best;
}

ClusterResult kmeans(std::span<const FeatureVector> points, std::size_t k, std::uint64_t seed,
                     const KMeansOptions& options) {
  require(points.size() >= k, ErrorCode::TooFewPoints,
          std::to_string(points.size()) + " points for k=" + std::to_string(k));
  return kmeans(to_matrix(points), k, seed, options);
}

MatrixXd rbf_affinity(const MatrixXd& points, double gamma) {
  require(gamma > 0.0 && std::isfinite(gamma), ErrorCode::NonPositiveGamma, "gamma must be positive");
  const Index n = points.rows();
  MatrixXd a(n, n);
  for (Index i = 0; i < n; ++i) {
    a(i, i) = 1.0;
    for (Index j = i + 1; j < n; ++j) {
      const double v = std::exp(-gamma * squared_distance(points, i, points, j));
      a(i, j) = v;
      a(j, i) = v;
    }
  }
  return a;
}

MatrixXd rbf_affinity(std::span<const FeatureVector> points, double gamma) {
  return rbf_affinity(to_matrix(points), gamma);
}

double median_heuristic_gamma(const MatrixXd& points) {
  const Index n = points.rows();
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) d.push_back(std::sqrt(squared_distance(points, i, points, j)));
  if (d.empty()) return 1.0;
  const std::size_t m = d.size();
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(m / 2), d.end());
  double median = d[m / 2];
  if (m % 2 == 0) {
    const double lower = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(m / 2));
    median = 0.5 * (median + lower);
  }
  if (median <= 0.0) {
    double sum = 0.0;
    std::size_t count = 0;
    for (double v : d)
      if (v > 0.0) sum += v, ++count;
    if (count == 0) return 1.0;
    median = sum / static_cast<double>(count);
  }
  return 1.0 / (2.0 * median * median);
}

MatrixXd spectral_embedding(const MatrixXd& affinity, std::size_t k) {
  const Index n = affinity.rows();
  require(affinity.cols() == n, ErrorCode::ShapeMismatch, "affinity must be square");
  require(static_cast<std::size_t>(n) >= k, ErrorCode::TooFewPoints, "fewer points than clusters");
  Eigen::VectorXd inv_sqrt_degree = affinity.rowwise().sum();
  for (Index i = 0; i < n; ++i) {
    const double deg = inv_sqrt_degree[i];
    inv_sqrt_degree[i] = deg > 0.0 ? 1.0 / std::sqrt(deg) : 0.0;
  }
  MatrixXd laplacian = -(inv_sqrt_degree.asDiagonal() * affinity * inv_sqrt_degree.asDiagonal());
  laplacian.diagonal().array() += 1.0;

  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(laplacian);
  require(solver.info() == Eigen::Success, ErrorCode::EigenFailure, "symmetric eigensolver did not converge");
  MatrixXd embedding = solver.eigenvectors().leftCols(static_cast<Index>(k));
  // Fix each eigenvector's sign so its largest-magnitude entry is positive.
  for (Index c = 0; c < embedding.cols(); ++c) {
    Index arg = 0;
    embedding.col(c).cwiseAbs().maxCoeff(&arg);
    if (embedding(arg, c) < 0.0) embedding.col(c) *= -1.0;
  }
  for (Index i = 0; i < n; ++i) {
    const double norm = embedding.row(i).norm();
    if (norm > 0.0) embedding.row(i) /= norm;
  }
  require(embedding.allFinite(), ErrorCode::EigenFailure, "non-finite spectral embedding");
  return embedding;
}

SpectralResult spectral_cluster(const MatrixXd& points, std::size_t k, std::uint64_t seed,
                                const SpectralOptions& options) {
  const auto n = static_cast<std::size_t>(points.rows());
  require(k >= 1, ErrorCode::BadConfig, "k must be >= 1");
  require(n >= k, ErrorCode::TooFewPoints, std::to_string(n) + " points for k=" + std::to_string(k));

  SpectralResult out;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (n > options.max_points && options.max_points >= k) {
    Rng rng(Rng::derive(seed, 0x5a3b1e));
    for (std::size_t i = 0; i < options.max_points; ++i) std::swap(order[i], order[i + rng.index(n - i)]);
    order.resize(options.max_points);
    std::sort(order.begin(), order.end());
  }
  out.sample = order;
  MatrixXd sample(static_cast<Index>(order.size()), points.cols());
  for (std::size_t i = 0; i < order.size(); ++i) sample.row(static_cast<Index>(i)) = points.row(static_cast<Index>(order[i]));

  out.gamma = options.gamma ? *options.gamma : median_heuristic_gamma(sample);
  const MatrixXd embedding = spectral_embedding(rbf_affinity(sample, out.gamma), k);
  const ClusterResult embedded = kmeans(embedding, k, seed, options.kmeans);

  MatrixXd centers = MatrixXd::Zero(static_cast<Index>(k), points.cols());
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    centers.row(static_cast<Index>(embedded.labels[i])) += sample.row(static_cast<Index>(i));
    ++counts[embedded.labels[i]];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] > 0) {
      centers.row(static_cast<Index>(c)) /= static_cast<double>(counts[c]);
      continue;
    }
    // Empty in the embedding: borrow the sample point nearest the embedded center.
    MatrixXd ec(1, embedding.cols());
    for (Index d = 0; d < embedding.cols(); ++d) ec(0, d) = embedded.centers[c][static_cast<std::size_t>(d)];
    Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < embedding.rows(); ++i) {
      const double d = squared_distance(embedding, i, ec, 0);
      if (d < best_d) best_d = d, best = i;
    }
    centers.row(static_cast<Index>(c)) = sample.row(best);
  }

  auto& result = out.clusters;
  result.labels.assign(n, 0);
  std::vector<bool> sampled(n, false);
  for (std::size_t i = 0; i < order.size(); ++i) {
    result.labels[order[i]] = embedded.labels[i];
    sampled[order[i]] = true;
  }
  result.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!sampled[i]) result.labels[i] = nearest_center(points, static_cast<Index>(i), centers);
    result.inertia += squared_distance(points, static_cast<Index>(i), centers, static_cast<Index>(result.labels[i]));
  }
  result.inertia_history = embedded.inertia_history;
  for (std::size_t c = 0; c < k; ++c) {
    FeatureVector v(static_cast<std::size_t>(centers.cols()));
    for (Index d = 0; d < centers.cols(); ++d) v[static_cast<std::size_t>(d)] = centers(static_cast<Index>(c), d);
    result.centers.push_back(std::move(v));
  }
  return out;
}

SpectralResult spectral_cluster(std::span<const FeatureVector> points, std::size_t k, std::uint64_t seed,
                                const SpectralOptions& options) {
  require(points.size() >= k, ErrorCode::TooFewPoints,
          std::to_string(points.size()) + " points for k=" + std::to_string(k));
  return spectral_cluster(to_matrix(points), k, seed, options);
}

double cluster_purity(std::span<const std::size_t> labels, std::span<const std::size_t> truth) {
  require(labels.size() == truth.size() && !labels.empty(), ErrorCode::DimMismatch, "purity inputs");
  std::map<std::size_t, std::map<std::size_t, std::size_t>> table;
  for (std::size_t i = 0; i < labels.size(); ++i) ++table[labels[i]][truth[i]];
  std::size_t majority = 0;
  for (const auto& [cluster, counts] : table) {
    std::size_t best = 0;
    for (const auto& [t, c] : counts) best = std::max(best, c);
    majority += best;
  }
  return static_cast<double>(majority) / static_cast<double>(labels.size());
}

}  // namespace vreid
