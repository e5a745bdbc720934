#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "blens/conceptvec.hpp"
#include "blens/dataio.hpp"
#include "blens/tensor.hpp"

namespace blens::tda {

/// Symmetric n x n matrix with zero diagonal.
using DistanceMatrix = TensorD;

/// d(i, j) = arccos(clamp(v_i . v_j, -1, 1)) for unit rows. Throws
/// InvalidArgument naming the first row whose norm is off by more than 1e-6.
DistanceMatrix geodesic_distances(const Tensor& unit_rows);

DistanceMatrix euclidean_distances(const Tensor& rows);

struct PersistencePair {
  int dim = 0;
  double birth = 0.0;
  double death = std::numeric_limits<double>::infinity();

  bool finite() const { return death != std::numeric_limits<double>::infinity(); }
  double lifetime() const { return death - birth; }
};

struct PersistenceDiagram {
  std::vector<PersistencePair> pairs;  // zero-length H1 pairs are dropped

  std::vector<PersistencePair> in_dim(int dim) const;
};

inline constexpr std::size_t kRipsPointCap = 256;

/// Vietoris-Rips persistence over Z/2 for H0 and H1 (max_dim <= 1), by
/// column reduction of the boundary matrix with clearing.
PersistenceDiagram vietoris_rips_persistence(const DistanceMatrix& dist, int max_dim = 1,
                                             std::size_t cap = kRipsPointCap);

struct Edge {
  std::size_t a = 0;
  std::size_t b = 0;
  double weight = 0.0;
};

/// Minimum spanning forest (Prim, dense); ties go to the lowest index.
std::vector<Edge> minimum_spanning_tree(const DistanceMatrix& dist);

struct BoundaryComplexity {
  double score = 0.0;        // sum of finite H0 lifetimes of the midpoint cloud
  double normalization = 1.0;  // coordinates were divided by this
  std::size_t points = 0;
  std::string note;
};

/// Midpoints of the boundary pairs, scaled by `normalization` (the global
/// max absolute activation when <= 0 is passed), summarised by their
/// Euclidean MST weight.
BoundaryComplexity boundary_h0_score(const cv::BoundaryPairing& pairing, const Tensor& positives,
                                     const Tensor& negatives, double normalization = 0.0);

// ---------------------------------------------------------------------------
// Mapper

struct MapperConfig {
  std::size_t lens_dim = 2;
  std::size_t n_cubes = 10;
  double overlap = 0.3;
  double link_threshold = -1.0;  // <= 0: median 3-NN geodesic distance
};

struct MapperNode {
  std::vector<std::size_t> members;
  double mean_cosine = 1.0;  // mean pairwise cosine similarity, 1 for singletons
  std::vector<std::size_t> cube;  // cover cell index per lens axis
};

struct MapperGraph {
  std::vector<MapperNode> nodes;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  MapperConfig config;  // threshold resolved
  Tensor lens;          // n x lens_dim

  std::size_t component_count() const;
  /// First Betti number of the graph: E - V + components.
  std::size_t cycle_rank() const;
};

/// Classical multidimensional scaling of a distance matrix into `dims`
/// coordinates.
Tensor classical_mds(const DistanceMatrix& dist, std::size_t dims);

double median_knn_distance(const DistanceMatrix& dist, std::size_t k);

/// Mapper over unit vectors using the geodesic metric.
MapperGraph mapper(const Tensor& unit_rows, const MapperConfig& cfg);

// ---------------------------------------------------------------------------
// Euclidicity

struct EuclidicityStats {
  double interior_mean = 0.0;
  double interior_std = 0.0;
  double boundary_mean = 0.0;
  double boundary_std = 0.0;
  std::size_t interior_count = 0;
  std::size_t boundary_count = 0;
  double interior_minus_boundary = 0.0;
  std::vector<std::string> flags;  // empty partitions
};

/// Splits one concept's table into boundary rows (positions listed in
/// `boundary_rows`) and the interior (everything else). Population standard
/// deviations.
EuclidicityStats euclidicity_stats(const data::EuclidicityTable& table,
                                   const std::vector<std::size_t>& boundary_rows);

/// The three homogeneity variables for a (positive, negative) concept pair.
struct EuclidicityDifferences {
  double positive_interior_minus_boundary = 0.0;
  double interior_positive_minus_negative = 0.0;
  double boundary_positive_minus_negative = 0.0;
};

EuclidicityDifferences euclidicity_differences(const EuclidicityStats& positive, const EuclidicityStats& negative);

/// Distinct positive rows (or negative rows) referenced by a pairing.
std::vector<std::size_t> boundary_rows(const cv::BoundaryPairing& pairing, bool positive_side);

}  // namespace blens::tda
