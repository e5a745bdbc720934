#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "blens/dataio.hpp"
#include "blens/tensor.hpp"
#include "blens/train.hpp"

namespace blens::cv {

using data::ConceptId;

enum class VectorKind { kCav, kCbv };

std::string kind_name(VectorKind kind);
VectorKind parse_kind(const std::string& name);

/// Unit direction in a layer's latent space pointing from the source
/// (negative) concept towards the target (positive) concept.
struct ConceptVector {
  VectorKind kind = VectorKind::kCav;
  ConceptId source = 0;
  ConceptId target = 0;
  std::size_t layer = 0;
  std::vector<float> direction;
  std::vector<double> loss_curve;
  std::uint64_t seed = 0;

  /// Throws InvalidArgument unless the direction has unit norm (1e-6) and
  /// source != target.
  void validate() const;
};

/// JSON {kind, source, target, layer, direction[], loss_curve[], seed}.
void save_concept_vector(const std::filesystem::path& path, const ConceptVector& v);
ConceptVector load_concept_vector(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Concept activation vectors

struct CavTrainConfig {
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::size_t epochs = 100;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::uint64_t seed = 0;

  void validate() const;
};

struct CavResult {
  ConceptVector vector;        // w / ||w||
  std::vector<float> weights;  // raw classifier weights
  double bias = 0.0;
  double accuracy = 0.0;       // on the training sets
  double final_loss = 0.0;     // full-data binary cross entropy after training
};

/// Logistic regression separating `positives` (label 1) from `negatives`
/// (label 0), trained with binary cross entropy on shuffled mini-batches.
CavResult train_cav(const Tensor& positives, const Tensor& negatives, const CavTrainConfig& cfg);
CavResult train_cav(const data::ActivationSet& positives, const data::ActivationSet& negatives,
                    const CavTrainConfig& cfg);

/// Mean binary cross entropy of the classifier sigma(w.a + b).
double logistic_loss(std::span<const float> weights, double bias, const Tensor& positives, const Tensor& negatives);

// ---------------------------------------------------------------------------
// Boundary construction

enum class BoundaryRule {
  kTwoSided,  // pairs that satisfy either nearest-neighbour condition
  kOneSided,  // every positive with its nearest negative
};

/// Pairs of (positive row, negative row) marking the boundary between two
/// activation clouds, sorted lexicographically.
struct BoundaryPairing {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

/// Exact nearest cross-set neighbours under the Euclidean metric; ties go to
/// the lowest row index.
struct CrossNeighbours {
  std::vector<std::size_t> nearest_negative;  // per positive row
  std::vector<std::size_t> nearest_positive;  // per negative row
};

CrossNeighbours nearest_cross_neighbours(const Tensor& positives, const Tensor& negatives, std::size_t jobs = 1);

/// A pair (p, n) is kept when
///  - p is the nearest positive of n and n is the nearest negative of some
///    positive, or
///  - n is the nearest negative of p and p is the nearest positive of some
///    negative.
BoundaryPairing boundary_pairs(const Tensor& positives, const Tensor& negatives,
                               BoundaryRule rule = BoundaryRule::kTwoSided, std::size_t jobs = 1);

/// Rows (a+ - a-) / ||a+ - a-||, one per pair. Throws InvalidArgument naming
/// the pair when its members coincide.
Tensor boundary_normals(const BoundaryPairing& pairing, const Tensor& positives, const Tensor& negatives);

// ---------------------------------------------------------------------------
// Concept boundary vectors

struct CbvTrainConfig {
  std::size_t steps = 10000;
  double learning_rate = 0.01;
  std::uint64_t seed = 0;
  std::size_t curve_every = 100;  // loss-curve sampling interval in steps

  void validate() const;
};

struct CbvResult {
  ConceptVector vector;
  double final_loss = 0.0;
  double mean_normal_norm = 0.0;  // ||mean of normals||
  bool degenerate = false;
  std::string warning;
};

/// Mean of |1 - v.n| over the rows of `normals`.
double similarity_loss(std::span<const float> v, const Tensor& normals);

/// Starts from a seeded uniform point on the unit sphere and takes `steps`
/// single-normal gradient steps on |1 - v.n| (normals visited in shuffled
/// passes), renormalising v after every step. The step size decays
/// linearly from learning_rate to zero.
CbvResult train_cbv(const Tensor& normals, const CbvTrainConfig& cfg);

/// Uniformly distributed unit vector.
std::vector<float> random_unit_vector(std::size_t dim, std::uint64_t seed);

}  // namespace blens::cv
