#include "blens/tda.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <unordered_map>

#include <Eigen/Dense>

namespace blens::tda {

namespace {

void check_square(const DistanceMatrix& d) {
  if (d.rank() != 2 || d.dim(0) != d.dim(1)) throw ShapeError("distance matrix must be square");
}

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
    return true;
  }

 private:
  std::vector<std::size_t> parent_;
};

// Symmetric difference of two sorted index lists.
void add_column(std::vector<std::uint32_t>& target, const std::vector<std::uint32_t>& source) {
  std::vector<std::uint32_t> out;
  out.reserve(target.size() + source.size());
  std::set_symmetric_difference(target.begin(), target.end(), source.begin(), source.end(), std::back_inserter(out));
  target.swap(out);
}

}  // namespace

DistanceMatrix geodesic_distances(const Tensor& unit_rows) {
  if (unit_rows.rank() != 2) throw ShapeError("geodesic distances need an n x m matrix");
  const std::size_t n = unit_rows.dim(0);
  for (std::size_t i = 0; i < n; ++i) {
    const double norm = l2_norm(unit_rows.row(i));
    if (std::abs(norm - 1.0) > 1e-6) {
      throw InvalidArgument("row " + std::to_string(i) + " is not unit length (norm " + std::to_string(norm) + ")");
    }
  }
  DistanceMatrix d(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double g = std::acos(std::clamp(dot(unit_rows.row(i), unit_rows.row(j)), -1.0, 1.0));
      d.at(i, j) = g;
      d.at(j, i) = g;
    }
  }
  return d;
}

DistanceMatrix euclidean_distances(const Tensor& rows) {
  if (rows.rank() != 2) throw ShapeError("euclidean distances need an n x m matrix");
  const std::size_t n = rows.dim(0);
  const std::size_t m = rows.dim(1);
  DistanceMatrix d(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < m; ++k) {
        const double diff = static_cast<double>(rows.at(i, k)) - rows.at(j, k);
        s += diff * diff;
      }
      d.at(i, j) = d.at(j, i) = std::sqrt(s);
    }
  }
  return d;
}

std::vector<PersistencePair> PersistenceDiagram::in_dim(int dim) const {
  std::vector<PersistencePair> out;
  std::copy_if(pairs.begin(), pairs.end(), std::back_inserter(out), [&](const PersistencePair& p) { return p.dim == dim; });
  return out;
}

PersistenceDiagram vietoris_rips_persistence(const DistanceMatrix& dist, int max_dim, std::size_t cap) {
  check_square(dist);
  if (max_dim < 0 || max_dim > 1) throw InvalidArgument("only H0 and H1 are supported");
  const std::size_t n = dist.dim(0);
  if (n > cap) {
    throw InvalidArgument("Rips persistence is capped at " + std::to_string(cap) + " points, got " + std::to_string(n));
  }
  PersistenceDiagram out;
  if (n == 0) return out;

  // Edges in filtration order: weight, then lexicographic vertex pair.
  struct EdgeSimplex {
    double value;
    std::uint32_t a, b;
  };
  std::vector<EdgeSimplex> edges;
  edges.reserve(n * (n - 1) / 2);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = i + 1; j < n; ++j) edges.push_back({dist.at(i, j), i, j});
  }
  std::stable_sort(edges.begin(), edges.end(), [](const EdgeSimplex& x, const EdgeSimplex& y) { return x.value < y.value; });
  std::vector<std::uint32_t> edge_index(n * n);
  for (std::uint32_t e = 0; e < edges.size(); ++e) {
    edge_index[edges[e].a * n + edges[e].b] = e;
    edge_index[edges[e].b * n + edges[e].a] = e;
  }

  std::vector<char> cleared(edges.size(), 0);
  if (max_dim >= 1 && n >= 3) {
    struct Triangle {
      double value;
      std::uint32_t e[3];  // edge indices, descending
    };
    std::vector<Triangle> triangles;
    triangles.reserve(n * (n - 1) * (n - 2) / 6);
    for (std::uint32_t i = 0; i < n; ++i) {
      for (std::uint32_t j = i + 1; j < n; ++j) {
        for (std::uint32_t k = j + 1; k < n; ++k) {
          Triangle t{};
          t.e[0] = edge_index[i * n + j];
          t.e[1] = edge_index[i * n + k];
          t.e[2] = edge_index[j * n + k];
          std::sort(std::begin(t.e), std::end(t.e), std::greater<>());
          t.value = edges[t.e[0]].value;
          triangles.push_back(t);
        }
      }
    }
    std::sort(triangles.begin(), triangles.end(), [](const Triangle& x, const Triangle& y) {
      if (x.value != y.value) return x.value < y.value;
      return std::lexicographical_compare(std::begin(x.e), std::end(x.e), std::begin(y.e), std::end(y.e));
    });

    // Columns are stored ascending; the pivot is the last entry.
    std::unordered_map<std::uint32_t, std::vector<std::uint32_t>> reduced_by_pivot;
    reduced_by_pivot.reserve(edges.size());
    for (const Triangle& t : triangles) {
      std::vector<std::uint32_t> col{t.e[2], t.e[1], t.e[0]};
      while (!col.empty()) {
        const auto it = reduced_by_pivot.find(col.back());
        if (it == reduced_by_pivot.end()) break;
        add_column(col, it->second);
      }
      if (col.empty()) continue;
      const std::uint32_t pivot = col.back();
      cleared[pivot] = 1;
      const double birth = edges[pivot].value;
      if (t.value > birth) out.pairs.push_back({1, birth, t.value});
      reduced_by_pivot.emplace(pivot, std::move(col));
    }
  }

  // H0 by reducing the edge columns that were not cleared.
  std::unordered_map<std::uint32_t, std::vector<std::uint32_t>> vertex_pivot;
  std::vector<char> killed(n, 0);
  for (std::uint32_t e = 0; e < edges.size(); ++e) {
    if (cleared[e]) continue;
    std::vector<std::uint32_t> col{edges[e].a, edges[e].b};
    while (!col.empty()) {
      const auto it = vertex_pivot.find(col.back());
      if (it == vertex_pivot.end()) break;
      add_column(col, it->second);
    }
    if (col.empty()) continue;
    killed[col.back()] = 1;
    out.pairs.push_back({0, 0.0, edges[e].value});
    vertex_pivot.emplace(col.back(), std::move(col));
  }
  for (std::size_t v = 0; v < n; ++v) {
    if (!killed[v]) out.pairs.push_back({0, 0.0});
  }
  std::stable_sort(out.pairs.begin(), out.pairs.end(), [](const PersistencePair& x, const PersistencePair& y) {
    if (x.dim != y.dim) return x.dim < y.dim;
    if (x.birth != y.birth) return x.birth < y.birth;
    return x.death < y.death;
  });
  return out;
}

std::vector<Edge> minimum_spanning_tree(const DistanceMatrix& dist) {
  check_square(dist);
  const std::size_t n = dist.dim(0);
  std::vector<Edge> out;
  if (n == 0) return out;
  std::vector<char> in_tree(n, 0);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> from(n, 0);
  in_tree[0] = 1;
  for (std::size_t j = 1; j < n; ++j) best[j] = dist.at(0, j);
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t next = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (!in_tree[j] && (next == n || best[j] < best[next])) next = j;
    }
    in_tree[next] = 1;
    out.push_back({std::min(from[next], next), std::max(from[next], next), best[next]});
    for (std::size_t j = 0; j < n; ++j) {
      if (!in_tree[j] && dist.at(next, j) < best[j]) {
        best[j] = dist.at(next, j);
        from[j] = next;
      }
    }
  }
  return out;
}

BoundaryComplexity boundary_h0_score(const cv::BoundaryPairing& pairing, const Tensor& positives,
                                     const Tensor& negatives, double normalization) {
  if (pairing.empty()) throw InvalidArgument("boundary score needs a non-empty pairing");
  const std::size_t m = positives.dim(1);
  if (negatives.dim(1) != m) throw ShapeError("positive and negative activations differ in dimension");
  BoundaryComplexity out;
  if (normalization <= 0.0) {
    double peak = 0.0;
    for (float x : positives.data()) peak = std::max(peak, std::abs(static_cast<double>(x)));
    for (float x : negatives.data()) peak = std::max(peak, std::abs(static_cast<double>(x)));
    normalization = peak > 0.0 ? peak : 1.0;
  }
  out.normalization = normalization;
  Tensor mid(Shape{pairing.size(), m});
  for (std::size_t k = 0; k < pairing.size(); ++k) {
    const auto [i, j] = pairing.pairs[k];
    for (std::size_t c = 0; c < m; ++c) {
      mid.at(k, c) = static_cast<float>(0.5 * (static_cast<double>(positives.at(i, c)) + negatives.at(j, c)) /
                                        normalization);
    }
  }
  out.points = pairing.size();
  if (out.points == 1) {
    out.note = "single boundary point; score is 0";
    return out;
  }
  for (const Edge& e : minimum_spanning_tree(euclidean_distances(mid))) out.score += e.weight;
  return out;
}

// ---------------------------------------------------------------------------

std::size_t MapperGraph::component_count() const {
  UnionFind uf(nodes.size());
  std::size_t components = nodes.size();
  for (const auto& [a, b] : edges) components -= uf.unite(a, b) ? 1 : 0;
  return components;
}

std::size_t MapperGraph::cycle_rank() const { return edges.size() + component_count() - nodes.size(); }

Tensor classical_mds(const DistanceMatrix& dist, std::size_t dims) {
  check_square(dist);
  const auto n = static_cast<Eigen::Index>(dist.dim(0));
  Eigen::MatrixXd d2(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double v = dist.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      d2(i, j) = v * v;
    }
  }
  const Eigen::MatrixXd centre = Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
  const Eigen::MatrixXd b = -0.5 * centre * d2 * centre;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(b);
  Tensor out(Shape{static_cast<std::size_t>(n), dims});
  for (std::size_t k = 0; k < dims && static_cast<Eigen::Index>(k) < n; ++k) {
    const Eigen::Index col = n - 1 - static_cast<Eigen::Index>(k);  // eigenvalues ascend
    const double lambda = eig.eigenvalues()(col);
    if (lambda <= 1e-12) break;
    Eigen::VectorXd vec = eig.eigenvectors().col(col);
    Eigen::Index peak = 0;
    for (Eigen::Index i = 1; i < n; ++i) {
      if (std::abs(vec(i)) > std::abs(vec(peak)) + 1e-12) peak = i;
    }
    if (vec(peak) < 0) vec = -vec;
    const double scale = std::sqrt(lambda);
    for (Eigen::Index i = 0; i < n; ++i) out.at(static_cast<std::size_t>(i), k) = static_cast<float>(vec(i) * scale);
  }
  return out;
}

double median_knn_distance(const DistanceMatrix& dist, std::size_t k) {
  check_square(dist);
  const std::size_t n = dist.dim(0);
  if (n < 2 || k == 0) return 0.0;
  k = std::min(k, n - 1);
  std::vector<double> kth(n);
  std::vector<double> row;
  for (std::size_t i = 0; i < n; ++i) {
    row.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) row.push_back(dist.at(i, j));
    }
    std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k - 1), row.end());
    kth[i] = row[k - 1];
  }
  std::sort(kth.begin(), kth.end());
  return n % 2 == 1 ? kth[n / 2] : 0.5 * (kth[n / 2 - 1] + kth[n / 2]);
}

MapperGraph mapper(const Tensor& unit_rows, const MapperConfig& cfg) {
  if (unit_rows.rank() != 2 || unit_rows.dim(0) == 0) throw InvalidArgument("mapper needs at least one point");
  if (!(cfg.overlap > 0.0 && cfg.overlap < 1.0)) throw InvalidArgument("mapper overlap must lie in (0, 1)");
  if (cfg.n_cubes == 0 || cfg.lens_dim == 0) throw InvalidArgument("mapper needs positive n_cubes and lens_dim");
  const std::size_t n = unit_rows.dim(0);
  const DistanceMatrix dist = geodesic_distances(unit_rows);

  MapperGraph g;
  g.config = cfg;
  if (g.config.link_threshold <= 0.0) g.config.link_threshold = median_knn_distance(dist, 3);
  g.lens = classical_mds(dist, cfg.lens_dim);

  auto mean_cosine = [&](const std::vector<std::size_t>& members) {
    if (members.size() < 2) return 1.0;
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        total += dot(unit_rows.row(members[a]), unit_rows.row(members[b]));
        ++count;
      }
    }
    return total / static_cast<double>(count);
  };

  // Per-axis intervals of width w, consecutive starts w (1 - overlap) apart.
  const std::size_t axes = cfg.lens_dim;
  std::vector<double> lo(axes);
  std::vector<double> width(axes);
  std::vector<double> stride(axes);
  bool degenerate = true;
  for (std::size_t a = 0; a < axes; ++a) {
    double mn = std::numeric_limits<double>::infinity();
    double mx = -mn;
    for (std::size_t i = 0; i < n; ++i) {
      mn = std::min(mn, static_cast<double>(g.lens.at(i, a)));
      mx = std::max(mx, static_cast<double>(g.lens.at(i, a)));
    }
    const double range = mx - mn;
    if (range > 1e-9) degenerate = false;
    lo[a] = mn;
    width[a] = range / (1.0 + static_cast<double>(cfg.n_cubes - 1) * (1.0 - cfg.overlap));
    stride[a] = width[a] * (1.0 - cfg.overlap);
  }
  if (degenerate) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    g.nodes.push_back({all, mean_cosine(all), std::vector<std::size_t>(axes, 0)});
    return g;
  }

  std::vector<std::size_t> cell(axes, 0);
  for (;;) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i) {
      bool inside = true;
      for (std::size_t a = 0; a < axes && inside; ++a) {
        const double start = lo[a] + static_cast<double>(cell[a]) * stride[a];
        const double x = g.lens.at(i, a);
        const double tol = 1e-9 * std::max(1.0, width[a]);
        inside = x >= start - tol && x <= start + width[a] + tol;
      }
      if (inside) members.push_back(i);
    }
    if (!members.empty()) {
      UnionFind uf(members.size());
      for (std::size_t a = 0; a < members.size(); ++a) {
        for (std::size_t b = a + 1; b < members.size(); ++b) {
          if (dist.at(members[a], members[b]) <= g.config.link_threshold) uf.unite(a, b);
        }
      }
      std::map<std::size_t, std::vector<std::size_t>> clusters;
      for (std::size_t a = 0; a < members.size(); ++a) clusters[uf.find(a)].push_back(members[a]);
      for (auto& [root, cluster] : clusters) {
        const double mc = mean_cosine(cluster);
        g.nodes.push_back({std::move(cluster), mc, cell});
      }
    }
    std::size_t a = 0;
    while (a < axes && ++cell[a] == cfg.n_cubes) cell[a++] = 0;
    if (a == axes) break;
  }

  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    for (std::size_t j = i + 1; j < g.nodes.size(); ++j) {
      const auto& x = g.nodes[i].members;
      const auto& y = g.nodes[j].members;
      std::size_t p = 0;
      std::size_t q = 0;
      bool shared = false;
      while (p < x.size() && q < y.size() && !shared) {
        if (x[p] == y[q]) {
          shared = true;
        } else if (x[p] < y[q]) {
          ++p;
        } else {
          ++q;
        }
      }
      if (shared) g.edges.emplace_back(i, j);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

EuclidicityStats euclidicity_stats(const data::EuclidicityTable& table, const std::vector<std::size_t>& boundary_rows) {
  const std::size_t n = table.values.size();
  std::vector<char> on_boundary(n, 0);
  for (std::size_t r : boundary_rows) {
    if (r >= n) throw InvalidArgument("boundary row " + std::to_string(r) + " is outside the table");
    on_boundary[r] = 1;
  }
  auto summarise = [&](char side, double& mean, double& sd, std::size_t& count) {
    double sum = 0.0;
    count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (on_boundary[i] == side) {
        sum += table.values[i];
        ++count;
      }
    }
    if (count == 0) return;
    mean = sum / static_cast<double>(count);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (on_boundary[i] == side) ss += (table.values[i] - mean) * (table.values[i] - mean);
    }
    sd = std::sqrt(ss / static_cast<double>(count));
  };
  EuclidicityStats s;
  summarise(0, s.interior_mean, s.interior_std, s.interior_count);
  summarise(1, s.boundary_mean, s.boundary_std, s.boundary_count);
  if (s.interior_count == 0) s.flags.emplace_back("empty interior");
  if (s.boundary_count == 0) s.flags.emplace_back("empty boundary");
  s.interior_minus_boundary = s.interior_mean - s.boundary_mean;
  return s;
}

EuclidicityDifferences euclidicity_differences(const EuclidicityStats& positive, const EuclidicityStats& negative) {
  return {positive.interior_mean - positive.boundary_mean, positive.interior_mean - negative.interior_mean,
          positive.boundary_mean - negative.boundary_mean};
}

std::vector<std::size_t> boundary_rows(const cv::BoundaryPairing& pairing, bool positive_side) {
  std::set<std::size_t> rows;
  for (const auto& [p, q] : pairing.pairs) rows.insert(positive_side ? p : q);
  return {rows.begin(), rows.end()};
}

}  // namespace blens::tda
