#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "icpmon/types.hpp"

namespace icpmon {

/// One answer from a neighbor query. Hits come back sorted by distance,
/// ties broken by smaller point_index.
struct NeighborHit {
  double distance = 0.0;  // Euclidean
  LabelId label = 0;
  std::size_t point_index = 0;  // insertion index into the build input
};

/// Exact k-nearest-neighbor index over labeled embedding vectors under
/// Euclidean distance. Split rule: dimension of maximum spread at the
/// median, leaf buckets of 16 points scanned linearly. Read-only after
/// build; concurrent queries are safe.
class NeighborIndex {
 public:
  static constexpr std::size_t kLeafSize = 16;

  NeighborIndex(std::vector<double> coords, std::vector<LabelId> labels,
                std::int32_t dim)
      : coords_(std::move(coords)), labels_(std::move(labels)), dim_(dim) {
    if (dim_ <= 0) throw ConfigError("neighbor index dimension must be positive");
    if (labels_.empty()) throw DataError("cannot build a neighbor index from no points");
    if (coords_.size() != labels_.size() * static_cast<std::size_t>(dim_))
      throw DimensionMismatchError("coordinate buffer size does not match point count");
    for (LabelId l : labels_)
      if (l < 0) throw DataError("negative label in neighbor index");
    label_slots_ = *std::max_element(labels_.begin(), labels_.end()) + 1;
    order_.resize(labels_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.reserve(2 * labels_.size() / kLeafSize + 2);
    build_node(0, labels_.size());
  }

  std::size_t size() const { return labels_.size(); }
  std::int32_t dim() const { return dim_; }
  /// Upper bound for label values stored here (max label + 1).
  std::int32_t label_slots() const { return label_slots_; }
  const std::vector<double>& coords() const { return coords_; }
  const std::vector<LabelId>& labels() const { return labels_; }

  /// Exactly min(k, size()) nearest points, nondecreasing distance,
  /// equal distances ordered by smaller point_index.
  std::vector<NeighborHit> query_knn(std::span<const double> query,
                                     std::size_t k) const {
    check_query(query);
    if (k < 1) throw ConfigError("k must be at least 1");
    k = std::min(k, size());

    KnnState state{k, {}};
    state.heap.reserve(k);
    std::vector<double> axis_dists(static_cast<std::size_t>(dim_), 0.0);
    search_knn(0, query, 0.0, axis_dists, state);

    std::sort(state.heap.begin(), state.heap.end());
    std::vector<NeighborHit> hits;
    hits.reserve(state.heap.size());
    for (const auto& c : state.heap)
      hits.push_back({std::sqrt(c.first), labels_[c.second], c.second});
    return hits;
  }

  /// Minimum distance from the query to any stored point of each class;
  /// classes absent from the index are absent from the result.
  std::map<LabelId, double> query_nearest_per_class(
      std::span<const double> query) const {
    std::vector<double> best_sq;
    nearest_per_class_squared(query, best_sq);
    std::map<LabelId, double> result;
    for (std::size_t c = 0; c < best_sq.size(); ++c)
      if (best_sq[c] < kInf) result[static_cast<LabelId>(c)] = std::sqrt(best_sq[c]);
    return result;
  }

  /// Allocation-light variant for hot paths: fills `best_sq` with squared
  /// minima per label slot, +inf where the class has no stored point.
  void nearest_per_class_squared(std::span<const double> query,
                                 std::vector<double>& best_sq) const {
    check_query(query);
    best_sq.assign(static_cast<std::size_t>(label_slots_), kInf);
    PerClassState state{best_sq, labels_present().size()};
    std::vector<double> axis_dists(static_cast<std::size_t>(dim_), 0.0);
    search_per_class(0, query, 0.0, axis_dists, state);
  }

  /// Labels that have at least one stored point.
  const std::vector<LabelId>& labels_present() const {
    if (present_.empty()) {
      std::vector<bool> seen(static_cast<std::size_t>(label_slots_), false);
      for (LabelId l : labels_) seen[static_cast<std::size_t>(l)] = true;
      for (std::size_t c = 0; c < seen.size(); ++c)
        if (seen[c]) present_.push_back(static_cast<LabelId>(c));
    }
    return present_;
  }

 private:
  static constexpr double kInf = std::numeric_limits<double>::infinity();

  struct Node {
    std::int32_t split_dim = -1;  // -1 marks a leaf
    double split_val = 0.0;
    std::uint32_t left = 0, right = 0;   // children (internal nodes)
    std::uint32_t begin = 0, end = 0;    // order_ range (leaves)
  };

  // (squared distance, point index); lexicographic order is the tie rule.
  using Cand = std::pair<double, std::size_t>;

  struct KnnState {
    std::size_t k;
    std::vector<Cand> heap;  // max-heap, top = current worst

    bool full() const { return heap.size() == k; }
    const Cand& worst() const { return heap.front(); }
    void offer(double d2, std::size_t idx) {
      if (!full()) {
        heap.emplace_back(d2, idx);
        std::push_heap(heap.begin(), heap.end());
      } else if (Cand{d2, idx} < worst()) {
        std::pop_heap(heap.begin(), heap.end());
        heap.back() = {d2, idx};
        std::push_heap(heap.begin(), heap.end());
      }
    }
  };

  struct PerClassState {
    std::vector<double>& best_sq;
    std::size_t unresolved;  // classes still at +inf

    double bound() const {
      double m = 0.0;
      for (double b : best_sq)
        if (b > m && b < kInf) m = b;
      return m;
    }
  };

  void check_query(std::span<const double> query) const {
    if (static_cast<std::int32_t>(query.size()) != dim_)
      throw DimensionMismatchError("query dimension " +
                                   std::to_string(query.size()) +
                                   " does not match index dimension " +
                                   std::to_string(dim_));
  }

  double coord(std::size_t point, std::int32_t d) const {
    return coords_[point * static_cast<std::size_t>(dim_) +
                   static_cast<std::size_t>(d)];
  }

  double squared_distance(std::size_t point, std::span<const double> q) const {
    const double* p = coords_.data() + point * static_cast<std::size_t>(dim_);
    double acc = 0.0;
    for (std::int32_t d = 0; d < dim_; ++d) {
      const double diff = p[d] - q[static_cast<std::size_t>(d)];
      acc += diff * diff;
    }
    return acc;
  }

  std::uint32_t build_node(std::size_t begin, std::size_t end) {
    const std::uint32_t id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.emplace_back();
    nodes_[id].begin = static_cast<std::uint32_t>(begin);
    nodes_[id].end = static_cast<std::uint32_t>(end);

    const std::size_t count = end - begin;
    if (count <= kLeafSize) return id;

    // Pick the dimension with maximum spread over this node's points.
    std::int32_t best_dim = 0;
    double best_spread = -1.0;
    for (std::int32_t d = 0; d < dim_; ++d) {
      double lo = coord(order_[begin], d), hi = lo;
      for (std::size_t i = begin + 1; i < end; ++i) {
        const double v = coord(order_[i], d);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      const double spread = hi - lo;
      if (spread > best_spread) {
        best_spread = spread;
        best_dim = d;
      }
    }
    if (best_spread <= 0.0) return id;  // all points identical: keep as leaf

    const std::size_t mid = begin + count / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) {
                       const double ca = coord(a, best_dim);
                       const double cb = coord(b, best_dim);
                       return ca < cb || (ca == cb && a < b);
                     });
    const double split_val = coord(order_[mid], best_dim);

    const std::uint32_t left = build_node(begin, mid);
    const std::uint32_t right = build_node(mid, end);
    nodes_[id].split_dim = best_dim;
    nodes_[id].split_val = split_val;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  // `rd` is the squared distance from the query to this node's region,
  // accumulated per axis in `axis_dists`. Pruning keeps equal-distance
  // subtrees alive so the smaller-index tie rule stays exact.
  void search_knn(std::uint32_t node_id, std::span<const double> q, double rd,
                  std::vector<double>& axis_dists, KnnState& state) const {
    const Node& node = nodes_[node_id];
    if (node.split_dim < 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const std::size_t point = order_[i];
        state.offer(squared_distance(point, q), point);
      }
      return;
    }

    const std::int32_t axis = node.split_dim;
    const double diff = q[static_cast<std::size_t>(axis)] - node.split_val;
    const std::uint32_t near = diff < 0.0 ? node.left : node.right;
    const std::uint32_t far = diff < 0.0 ? node.right : node.left;

    search_knn(near, q, rd, axis_dists, state);

    const double old_axis = axis_dists[static_cast<std::size_t>(axis)];
    const double far_rd = rd - old_axis + diff * diff;
    if (!state.full() || far_rd <= state.worst().first) {
      axis_dists[static_cast<std::size_t>(axis)] = diff * diff;
      search_knn(far, q, far_rd, axis_dists, state);
      axis_dists[static_cast<std::size_t>(axis)] = old_axis;
    }
  }

  void search_per_class(std::uint32_t node_id, std::span<const double> q,
                        double rd, std::vector<double>& axis_dists,
                        PerClassState& state) const {
    const Node& node = nodes_[node_id];
    if (node.split_dim < 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const std::size_t point = order_[i];
        const double d2 = squared_distance(point, q);
        double& best = state.best_sq[static_cast<std::size_t>(labels_[point])];
        if (d2 < best) {
          if (best == kInf) --state.unresolved;
          best = d2;
        }
      }
      return;
    }

    const std::int32_t axis = node.split_dim;
    const double diff = q[static_cast<std::size_t>(axis)] - node.split_val;
    const std::uint32_t near = diff < 0.0 ? node.left : node.right;
    const std::uint32_t far = diff < 0.0 ? node.right : node.left;

    search_per_class(near, q, rd, axis_dists, state);

    const double old_axis = axis_dists[static_cast<std::size_t>(axis)];
    const double far_rd = rd - old_axis + diff * diff;
    if (state.unresolved > 0 || far_rd <= state.bound()) {
      axis_dists[static_cast<std::size_t>(axis)] = diff * diff;
      search_per_class(far, q, far_rd, axis_dists, state);
      axis_dists[static_cast<std::size_t>(axis)] = old_axis;
    }
  }

  std::vector<double> coords_;
  std::vector<LabelId> labels_;
  std::int32_t dim_;
  std::int32_t label_slots_ = 0;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  mutable std::vector<LabelId> present_;
};

/// Builds an index over (embedding, label) pairs in insertion order.
inline NeighborIndex build_index(
    const std::vector<std::pair<std::vector<double>, LabelId>>& points) {
  if (points.empty()) throw DataError("cannot build a neighbor index from no points");
  const std::size_t d = points.front().first.size();
  std::vector<double> coords;
  coords.reserve(points.size() * d);
  std::vector<LabelId> labels;
  labels.reserve(points.size());
  for (const auto& [vec, label] : points) {
    if (vec.size() != d)
      throw DimensionMismatchError("inconsistent embedding dimensions in index input");
    coords.insert(coords.end(), vec.begin(), vec.end());
    labels.push_back(label);
  }
  return NeighborIndex(std::move(coords), std::move(labels),
                       static_cast<std::int32_t>(d));
}

/// Builds an index over a dataset's embeddings (training encodings).
inline NeighborIndex build_index(const Dataset& ds) {
  if (ds.empty()) throw DataError("cannot build a neighbor index from an empty dataset");
  std::vector<double> coords;
  std::vector<LabelId> labels;
  labels.reserve(ds.size());
  for (const auto& ex : ds.examples) {
    if (!ex.features.has_embedding())
      throw FeatureMissingError("example " + ex.id() + " carries no embedding");
    if (static_cast<std::int32_t>(ex.features.embedding.size()) != ds.embedding_dim)
      throw DimensionMismatchError("example " + ex.id() +
                                   " embedding length differs from dataset dimension");
    coords.insert(coords.end(), ex.features.embedding.begin(),
                  ex.features.embedding.end());
    labels.push_back(ex.label);
  }
  return NeighborIndex(std::move(coords), std::move(labels), ds.embedding_dim);
}

inline std::vector<NeighborHit> query_knn(const NeighborIndex& idx,
                                          std::span<const double> query,
                                          std::size_t k) {
  return idx.query_knn(query, k);
}

inline std::map<LabelId, double> query_nearest_per_class(
    const NeighborIndex& idx, std::span<const double> query) {
  return idx.query_nearest_per_class(query);
}

}  // namespace icpmon
