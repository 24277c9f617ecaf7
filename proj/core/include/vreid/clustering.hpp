#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "vreid/tensor.hpp"

namespace vreid {

struct ClusterResult {
  std::vector<FeatureVector> centers;
  std::vector<std::size_t> labels;  // one per input point, in [0, k)
  double inertia = 0.0;             // sum of squared distances to assigned centers
  std::vector<double> inertia_history;  // per Lloyd iteration of the winning run
};

struct KMeansOptions {
  std::size_t max_iter = 300;
  std::size_t n_init = 20;  // independent k-means++ restarts; lowest inertia wins
};

/// Lloyd's algorithm with k-means++ seeding. At a Lloyd fixpoint, single-point
/// transfers that lower the inertia are applied and Lloyd resumes. Ties (in
/// seeding and in assignment) resolve to the lowest index. A cluster left empty
/// after an update is re-seeded at the point farthest from its assigned center.
ClusterResult kmeans(std::span<const FeatureVector> points, std::size_t k, std::uint64_t seed,
                     const KMeansOptions& options = {});
ClusterResult kmeans(const Eigen::MatrixXd& points, std::size_t k, std::uint64_t seed,
                     const KMeansOptions& options = {});

/// A_ij = exp(-gamma * |p_i - p_j|^2).
Eigen::MatrixXd rbf_affinity(const Eigen::MatrixXd& points, double gamma);
Eigen::MatrixXd rbf_affinity(std::span<const FeatureVector> points, double gamma);

/// gamma = 1 / (2 * median^2) over pairwise distances (i < j). Falls back to
/// the mean positive distance when the median is zero, and to 1 when every
/// point coincides.
double median_heuristic_gamma(const Eigen::MatrixXd& points);

/// Rows of the k eigenvectors of I - D^-1/2 A D^-1/2 with the smallest
/// eigenvalues, each row renormalized to unit length (zero rows left as is).
Eigen::MatrixXd spectral_embedding(const Eigen::MatrixXd& affinity, std::size_t k);

struct SpectralOptions {
  std::optional<double> gamma;       // median heuristic when unset
  std::size_t max_points = 2000;     // seeded subsample cap for the dense eigensolver
  KMeansOptions kmeans;
};

struct SpectralResult {
  ClusterResult clusters;  // centers are means in the original space
  double gamma = 0.0;
  std::vector<std::size_t> sample;  // indices that went through the eigensolver (sorted)
};

/// Labels for points outside the subsample come from the nearest original-space center.
SpectralResult spectral_cluster(const Eigen::MatrixXd& points, std::size_t k, std::uint64_t seed,
                                const SpectralOptions& options = {});
SpectralResult spectral_cluster(std::span<const FeatureVector> points, std::size_t k, std::uint64_t seed,
                                const SpectralOptions& options = {});

/// Fraction of points whose cluster's majority truth label matches their own.
double cluster_purity(std::span<const std::size_t> labels, std::span<const std::size_t> truth);

Eigen::MatrixXd to_matrix(std::span<const FeatureVector> points);

}  // namespace vreid
