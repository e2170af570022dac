#pragma once

#include <memory>

#include "diffconv/core.hpp"

namespace diffconv {

/// Per-point Gaussian kernel density over the cloud, self-term included:
/// density_i = (1/(N*h)) * sum_j (1/sqrt(2*pi)) * exp(-||p_i - p_j||^2 / (2*h^2)).
std::vector<real_t> kernel_density(const PointCloud& cloud, real_t bandwidth);

/// Scales densities so the maximum becomes 1.
std::vector<real_t> normalize_density(std::span<const real_t> density);

/// Per-point dilated radius r_i = sqrt(base_sq_radius * (1 + normalized_density_i)),
/// which stays within [sqrt(base_sq_radius), sqrt(2 * base_sq_radius)].
std::vector<real_t> dilated_radii(std::span<const real_t> normalized_density, real_t base_sq_radius);

/// Density and dilation data for one source cloud at one scale.
struct DilationField {
  std::vector<real_t> density;
  std::vector<real_t> normalized_density;
  std::vector<real_t> radii;
};

DilationField dilation_field(const PointCloud& cloud, real_t bandwidth, real_t base_sq_radius);

/// Static 3-d KD-tree over a point cloud (median split on the widest axis).
class KdTree {
 public:
  explicit KdTree(const PointCloud& cloud);

  /// Indices of points strictly within `radius` of `query`, ascending.
  std::vector<int> ball(std::span<const real_t> query, real_t radius) const;

  /// The k nearest points; ties broken by smaller index. Requires k <= size.
  std::vector<int> knn(std::span<const real_t> query, int k) const;

  int size() const { return static_cast<int>(indices_.size()); }

 private:
  struct Node {
    int begin, end;       // range into indices_
    int axis = -1;        // -1 marks a leaf
    real_t split = 0;
    int left = -1, right = -1;
    real_t box_min[3], box_max[3];
  };

  int build(int begin, int end);
  void ball_walk(int node, std::span<const real_t> q, real_t sq_radius, std::vector<int>& out) const;

  const PointCloud* cloud_;
  std::vector<int> indices_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// All sources strictly within `radius` of each key (row i = neighbors of key i).
SparseDirectedGraph ball_query(const PointCloud& keys, const PointCloud& sources, real_t radius);

/// Per-key radius variant used by density dilation.
SparseDirectedGraph ball_query(const PointCloud& keys, const PointCloud& sources, std::span<const real_t> radii);

/// k nearest sources per key; ties broken by smaller source index.
SparseDirectedGraph knn_query(const PointCloud& keys, const PointCloud& sources, int k);

}  // namespace diffconv
