// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "udaforge/clustering.hpp"

namespace udaforge {
namespace {

constexpr double kMinDistance = 1e-12;  // caps lambda = 1/d for duplicates

struct DendroNode {
  std::size_t left = 0;
  std::size_t right = 0;
  double distance = 0.0;
  std::size_t size = 1;
};

struct CondensedRow {
  std::size_t parent;
  std::size_t child;  // cluster id or point index
  double lambda;
  std::size_t size;
  bool is_cluster;
};

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) {
    for (std::size_t i = 0; i < n; ++i) parent[i] = i;
  }
  std::size_t find(std::size_t a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  }
};

// Leaves of a dendrogram subtree.
void collect_points(const std::vector<DendroNode>& nodes, std::size_t n_points,
                    std::size_t node, std::vector<std::size_t>& out) {
  std::vector<std::size_t> stack = {node};
  while (!stack.empty()) {
    const std::size_t cur = stack.back();
    stack.pop_back();
    if (cur < n_points) {
      out.push_back(cur);
    } else {
      stack.push_back(nodes[cur - n_points].left);
      stack.push_back(nodes[cur - n_points].right);
    }
  }
}

}  // namespace

ClusterModel hdbscan(const FeatureMatrix& x, std::size_t min_cluster_size,
                     std::size_t min_samples) {
  const std::size_t n = x.rows;
  if (min_cluster_size < 2) {
    throw std::invalid_argument("hdbscan: min_cluster_size must be >= 2");
  }
  if (n < min_cluster_size) {
    throw std::invalid_argument("hdbscan: fewer rows than min_cluster_size");
  }
  if (min_samples == 0) throw std::invalid_argument("hdbscan: min_samples must be >= 1");

  ClusterModel model;
  model.algorithm = "hdbscan";
  model.assignment.assign(n, -1);

  // Core distance: distance to the min_samples-th nearest other point.
  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = std::sqrt(squared_distance(x.row(i), x.row(j)));
      dist[i * n + j] = d;
      dist[j * n + i] = d;
    }
  }
  const std::size_t kth = std::min(min_samples, n - 1);
  std::vector<double> core(n);
  {
    std::vector<double> buf;
    for (std::size_t i = 0; i < n; ++i) {
      buf.clear();
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) buf.push_back(dist[i * n + j]);
      }
      std::nth_element(buf.begin(), buf.begin() + static_cast<long>(kth - 1), buf.end());
      core[i] = buf[kth - 1];
    }
  }

  // Prim's MST over mutual reachability distances.
  struct Edge {
    std::size_t a;
    std::size_t b;
    double w;
  };
  std::vector<Edge> mst;
  mst.reserve(n - 1);
  {
    std::vector<bool> in_tree(n, false);
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> from(n, 0);
    in_tree[0] = true;
    for (std::size_t j = 1; j < n; ++j) {
      best[j] = std::max({core[0], core[j], dist[j]});
      from[j] = 0;
    }
    for (std::size_t added = 1; added < n; ++added) {
      std::size_t pick = 0;
      double pick_w = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        if (!in_tree[j] && best[j] < pick_w) {
          pick_w = best[j];
          pick = j;
        }
      }
      in_tree[pick] = true;
      mst.push_back({from[pick], pick, pick_w});
      for (std::size_t j = 0; j < n; ++j) {
        if (in_tree[j]) continue;
        const double mr = std::max({core[pick], core[j], dist[pick * n + j]});
        if (mr < best[j]) {
          best[j] = mr;
          from[j] = pick;
        }
      }
    }
  }
  std::sort(mst.begin(), mst.end(), [](const Edge& a, const Edge& b) {
    if (a.w != b.w) return a.w < b.w;
    if (a.a != b.a) return a.a < b.a;
    return a.b < b.b;
  });

  // Single-linkage dendrogram: leaves 0..n-1, internal nodes n..2n-2.
  std::vector<DendroNode> nodes;
  nodes.reserve(n - 1);
  {
    UnionFind uf(2 * n - 1);
    std::vector<std::size_t> component_node(2 * n - 1);
    std::vector<std::size_t> component_size(2 * n - 1, 1);
    for (std::size_t i = 0; i < 2 * n - 1; ++i) component_node[i] = i;
    for (const Edge& e : mst) {
      const std::size_t ra = uf.find(e.a);
      const std::size_t rb = uf.find(e.b);
      DendroNode node;
      node.left = component_node[ra];
      node.right = component_node[rb];
      node.distance = e.w;
      node.size = component_size[ra] + component_size[rb];
      const std::size_t id = n + nodes.size();
      nodes.push_back(node);
      uf.parent[ra] = id;
      uf.parent[rb] = id;
      component_node[id] = id;
      component_size[id] = node.size;
    }
  }

  // Condense with min_cluster_size: big splits spawn clusters, small side
  // points fall out at the split lambda.
  std::vector<CondensedRow> rows;
  std::vector<double> birth = {0.0};  // per condensed cluster
  std::vector<std::size_t> cluster_parent = {0};
  std::size_t next_cluster = 1;
  {
    struct Item {
      std::size_t tree_node;
      std::size_t cluster;
    };
    std::vector<Item> stack = {{2 * n - 2, 0}};
    std::vector<std::size_t> pts;
    while (!stack.empty()) {
      const Item item = stack.back();
      stack.pop_back();
      if (item.tree_node < n) {
        // A bare leaf under a live cluster exits at its parent's lambda;
        // handled below when the parent is processed, so nothing here.
        continue;
      }
      const DendroNode& node = nodes[item.tree_node - n];
      const double lambda = 1.0 / std::max(node.distance, kMinDistance);
      const std::size_t left = node.left;
      const std::size_t right = node.right;
      const std::size_t lsize = left < n ? 1 : nodes[left - n].size;
      const std::size_t rsize = right < n ? 1 : nodes[right - n].size;
      const bool lbig = lsize >= min_cluster_size;
      const bool rbig = rsize >= min_cluster_size;

      if (lbig && rbig) {
        for (std::size_t child : {left, right}) {
          const std::size_t cid = next_cluster++;
          birth.push_back(lambda);
          cluster_parent.push_back(item.cluster);
          rows.push_back({item.cluster, cid, lambda,
                          child < n ? 1 : nodes[child - n].size, true});
          stack.push_back({child, cid});
        }
      } else if (lbig || rbig) {
        const std::size_t big = lbig ? left : right;
        const std::size_t small = lbig ? right : left;
        pts.clear();
        collect_points(nodes, n, small, pts);
        for (std::size_t p : pts) rows.push_back({item.cluster, p, lambda, 1, false});
        stack.push_back({big, item.cluster});
      } else {
        pts.clear();
        collect_points(nodes, n, left, pts);
        collect_points(nodes, n, right, pts);
        for (std::size_t p : pts) rows.push_back({item.cluster, p, lambda, 1, false});
      }
    }
  }

  // Stability and excess-of-mass selection (the root is never selectable).
  std::vector<double> stability(next_cluster, 0.0);
  for (const CondensedRow& r : rows) {
    stability[r.parent] += (r.lambda - birth[r.parent]) * static_cast<double>(r.size);
  }
  std::vector<std::vector<std::size_t>> children(next_cluster);
  for (std::size_t c = 1; c < next_cluster; ++c) {
    children[cluster_parent[c]].push_back(c);
  }
  std::vector<bool> selected(next_cluster, false);
  std::vector<double> chosen(next_cluster, 0.0);
  for (std::size_t c = next_cluster; c-- > 1;) {
    double subtree = 0.0;
    for (std::size_t ch : children[c]) subtree += chosen[ch];
    if (children[c].empty() || stability[c] >= subtree) {
      selected[c] = true;
      chosen[c] = stability[c];
      std::vector<std::size_t> desc(children[c]);
      while (!desc.empty()) {
        const std::size_t d = desc.back();
        desc.pop_back();
        selected[d] = false;
        desc.insert(desc.end(), children[d].begin(), children[d].end());
      }
    } else {
      chosen[c] = subtree;
    }
  }

  std::vector<int> relabel(next_cluster, -1);
  int k = 0;
  for (std::size_t c = 1; c < next_cluster; ++c) {
    if (selected[c]) relabel[c] = k++;
  }
  model.k = static_cast<std::size_t>(k);

  // A point belongs to the nearest selected ancestor of its exit cluster.
  for (const CondensedRow& r : rows) {
    if (r.is_cluster) continue;
    std::size_t c = r.parent;
    while (true) {
      if (selected[c]) {
        model.assignment[r.child] = relabel[c];
        break;
      }
      if (c == 0) break;  // reached the root: noise
      c = cluster_parent[c];
    }
  }

  if (model.k == 0) {
    model.warnings.push_back("no cluster survived extraction; all points are noise");
  }
  return model;
}

}  // namespace udaforge
