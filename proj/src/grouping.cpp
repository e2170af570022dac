#include "diffconv/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

namespace diffconv {

std::vector<real_t> kernel_density(const PointCloud& cloud, real_t bandwidth) {
  const int n = cloud.size();
  if (n == 0) throw InvalidInput("kernel_density: empty cloud");
  if (!(bandwidth > 0)) throw InvalidInput("kernel_density: bandwidth must be positive");
  const real_t inv_2h2 = real_t(1) / (2 * bandwidth * bandwidth);
  const real_t scale = kInvSqrt2Pi / (static_cast<real_t>(n) * bandwidth);
  std::vector<real_t> out(n);
#pragma omp parallel for
  for (int i = 0; i < n; ++i) {
    const auto pi = cloud.point(i);
    real_t acc = 0;
    for (int j = 0; j < n; ++j) acc += std::exp(-sq_dist3(pi, cloud.point(j)) * inv_2h2);
    out[i] = scale * acc;
  }
  return out;
}

std::vector<real_t> normalize_density(std::span<const real_t> density) {
  if (density.empty()) throw InvalidInput("normalize_density: empty input");
  const real_t mx = *std::max_element(density.begin(), density.end());
  if (!(mx > 0)) throw InvalidInput("normalize_density: maximum density must be positive");
  std::vector<real_t> out(density.size());
  for (std::size_t i = 0; i < density.size(); ++i) out[i] = density[i] / mx;
  return out;
}

std::vector<real_t> dilated_radii(std::span<const real_t> normalized_density, real_t base_sq_radius) {
  if (!(base_sq_radius > 0)) throw InvalidInput("dilated_radii: base squared radius must be positive");
  std::vector<real_t> out(normalized_density.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::sqrt(base_sq_radius * (real_t(1) + normalized_density[i]));
  return out;
}

DilationField dilation_field(const PointCloud& cloud, real_t bandwidth, real_t base_sq_radius) {
  DilationField f;
  f.density = kernel_density(cloud, bandwidth);
  f.normalized_density = normalize_density(f.density);
  f.radii = dilated_radii(f.normalized_density, base_sq_radius);
  return f;
}

// ---------------------------------------------------------------------------
// KD-tree

namespace {
constexpr int kLeafSize = 16;
}

KdTree::KdTree(const PointCloud& cloud) : cloud_(&cloud) {
  if (cloud.size() == 0) throw InvalidInput("KdTree: empty cloud");
  indices_.resize(cloud.size());
  std::iota(indices_.begin(), indices_.end(), 0);
  nodes_.reserve(2 * cloud.size() / kLeafSize + 2);
  root_ = build(0, cloud.size());
}

int KdTree::build(int begin, int end) {
  Node node;
  node.begin = begin;
  node.end = end;
  for (int a = 0; a < 3; ++a) {
    node.box_min[a] = std::numeric_limits<real_t>::max();
    node.box_max[a] = std::numeric_limits<real_t>::lowest();
  }
  for (int i = begin; i < end; ++i) {
    const auto p = cloud_->point(indices_[i]);
    for (int a = 0; a < 3; ++a) {
      node.box_min[a] = std::min(node.box_min[a], p[a]);
      node.box_max[a] = std::max(node.box_max[a], p[a]);
    }
  }
  if (end - begin > kLeafSize) {
    int axis = 0;
    real_t widest = -1;
    for (int a = 0; a < 3; ++a) {
      const real_t w = node.box_max[a] - node.box_min[a];
      if (w > widest) {
        widest = w;
        axis = a;
      }
    }
    if (widest > 0) {
      const int mid = begin + (end - begin) / 2;
      std::nth_element(indices_.begin() + begin, indices_.begin() + mid, indices_.begin() + end,
                       [&](int a, int b) { return cloud_->coords(a, axis) < cloud_->coords(b, axis); });
      node.axis = axis;
      node.split = cloud_->coords(indices_[mid], axis);
      const int id = static_cast<int>(nodes_.size());
      nodes_.push_back(node);
      const int left = build(begin, mid);
      const int right = build(mid, end);
      nodes_[id].left = left;
      nodes_[id].right = right;
      return id;
    }
    // All points coincide; fall through to a (large) leaf.
  }
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  return id;
}

namespace {
// Squared distance from q to the node's bounding box (0 when inside).
inline real_t box_sq_dist(const real_t* box_min, const real_t* box_max, std::span<const real_t> q) {
  real_t acc = 0;
  for (int a = 0; a < 3; ++a) {
    real_t d = 0;
    if (q[a] < box_min[a])
      d = box_min[a] - q[a];
    else if (q[a] > box_max[a])
      d = q[a] - box_max[a];
    acc += d * d;
  }
  return acc;
}
}  // namespace

void KdTree::ball_walk(int node_id, std::span<const real_t> q, real_t sq_radius, std::vector<int>& out) const {
  const Node& node = nodes_[node_id];
  // Strict-inequality membership: a box exactly at sq_radius cannot contribute.
  if (box_sq_dist(node.box_min, node.box_max, q) >= sq_radius) return;
  if (node.axis < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const int idx = indices_[i];
      if (sq_dist3(q, cloud_->point(idx)) < sq_radius) out.push_back(idx);
    }
    return;
  }
  ball_walk(node.left, q, sq_radius, out);
  ball_walk(node.right, q, sq_radius, out);
}

std::vector<int> KdTree::ball(std::span<const real_t> query, real_t radius) const {
  std::vector<int> out;
  if (radius > 0) ball_walk(root_, query, radius * radius, out);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> KdTree::knn(std::span<const real_t> query, int k) const {
  if (k < 1 || k > size()) throw InvalidInput("KdTree::knn: k out of range");
  // Max-heap of (sq_dist, index); the root is the current worst candidate.
  // Ties on distance prefer the smaller index, matching a lexicographic sort.
  using Entry = std::pair<real_t, int>;
  std::vector<Entry> heap;
  heap.reserve(k);
  auto closer = [](const Entry& a, const Entry& b) {
    return a.first < b.first || (a.first == b.first && a.second < b.second);
  };

  // Iterative depth-first walk, nearer child first.
  std::vector<int> stack{root_};
  while (!stack.empty()) {
    const int node_id = stack.back();
    stack.pop_back();
    const Node& node = nodes_[node_id];
    if (static_cast<int>(heap.size()) == k && box_sq_dist(node.box_min, node.box_max, query) > heap.front().first)
      continue;
    if (node.axis < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int idx = indices_[i];
        const Entry cand{sq_dist3(query, cloud_->point(idx)), idx};
        if (static_cast<int>(heap.size()) < k) {
          heap.push_back(cand);
          std::push_heap(heap.begin(), heap.end(), closer);
        } else if (closer(cand, heap.front())) {
          std::pop_heap(heap.begin(), heap.end(), closer);
          heap.back() = cand;
          std::push_heap(heap.begin(), heap.end(), closer);
        }
      }
      continue;
    }
    const int near = query[node.axis] < node.split ? node.left : node.right;
    const int far = near == node.left ? node.right : node.left;
    stack.push_back(far);   // popped after `near`
    stack.push_back(near);
  }

  std::vector<int> out(heap.size());
  for (std::size_t i = 0; i < heap.size(); ++i) out[i] = heap[i].second;
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Query operators (KD-tree backed, row-parallel over keys)

SparseDirectedGraph ball_query(const PointCloud& keys, const PointCloud& sources, real_t radius) {
  const std::vector<real_t> radii(static_cast<std::size_t>(keys.size()), radius);
  return ball_query(keys, sources, radii);
}

SparseDirectedGraph ball_query(const PointCloud& keys, const PointCloud& sources, std::span<const real_t> radii) {
  if (static_cast<int>(radii.size()) != keys.size())
    throw InvalidInput("ball_query: one radius per key required");
  const KdTree tree(sources);
  std::vector<std::vector<int>> rows(keys.size());
#pragma omp parallel for
  for (int i = 0; i < keys.size(); ++i) rows[i] = tree.ball(keys.point(i), radii[i]);
  return graph_from_rows(rows, sources.size());
}

SparseDirectedGraph knn_query(const PointCloud& keys, const PointCloud& sources, int k) {
  if (k < 1 || k > sources.size()) throw InvalidInput("knn_query: k out of range");
  const KdTree tree(sources);
  std::vector<std::vector<int>> rows(keys.size());
#pragma omp parallel for
  for (int i = 0; i < keys.size(); ++i) rows[i] = tree.knn(keys.point(i), k);
  return graph_from_rows(rows, sources.size());
}

}  // namespace diffconv
