#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "blens/conceptvec.hpp"
#include "blens/dataio.hpp"
#include "blens/model.hpp"
#include "blens/tensor.hpp"

namespace blens::analysis {

using data::ConceptId;
using cv::ConceptVector;
using cv::VectorKind;

// ---------------------------------------------------------------------------
// Logit influence

/// Per-point directional derivatives grad f_{layer,class}(a) . v, one per row
/// of `points` (n x m).
std::vector<double> logit_influence_terms(const ModelGraph& model, std::size_t layer, std::span<const float> v,
                                          const Tensor& points, std::size_t class_index);

/// Mean of logit_influence_terms. `v` is used as given (no normalisation),
/// so the result is linear in v.
double logit_influence(const ModelGraph& model, std::size_t layer, std::span<const float> v, const Tensor& points,
                       std::size_t class_index);

/// Logit influence of a concept vector over the positive set. The direction
/// must be unit length.
double logit_influence(const ModelGraph& model, const ConceptVector& v, const data::ActivationSet& positives,
                       std::size_t class_index);

/// Central-difference estimate of logit_influence evaluated with a double
/// precision forward pass.
double finite_difference_logit_influence(const ModelGraph& model, std::size_t layer, std::span<const float> v,
                                         const Tensor& points, std::size_t class_index, double eps);

struct LiRow {
  VectorKind kind = VectorKind::kCav;
  ConceptId source = 0;
  ConceptId target = 0;
  double li_target = 0.0;
  double li_source = 0.0;
  std::vector<double> li_all;  // one entry per class
  bool target_is_max = false;  // argmax of li_all is the target class
  double max_abs_term = 0.0;   // largest |summand| on the target logit
};

struct LogitInfluenceReport {
  std::vector<LiRow> rows;
  std::vector<std::string> missing;  // "kind source->target" entries without a vector or set
  /// Over pairs with both kinds present.
  double fraction_cbv_target_ge_cav = 0.0;
  double fraction_cbv_source_le_cav = 0.0;
  std::size_t compared_pairs = 0;

  const LiRow* find(VectorKind kind, ConceptId source, ConceptId target) const;
};

/// Evaluates every vector against the activation set of its target concept.
LogitInfluenceReport li_report(const ModelGraph& model, std::span<const ConceptVector> vectors,
                               const std::map<ConceptId, data::ActivationSet>& sets, std::size_t jobs = 1);

// ---------------------------------------------------------------------------
// Entanglement and algebra

/// M[i][j] = v_i . v_j.
TensorD cosine_matrix(std::span<const ConceptVector> vectors);

struct AlgebraResult {
  ConceptId c1 = 0;
  ConceptId c2 = 0;
  ConceptId c3 = 0;
  bool success = false;
  bool tie = false;
  ConceptId best = -1;
  double similarity = 0.0;                  // cosine of v12 + v23 with v13
  std::map<ConceptId, double> scores;        // (v12 + v23) . v1C for every candidate C
};

/// Scores v_{c1,c2} + v_{c2,c3} against every v_{c1,C} with C not in
/// {c1, c2}. A shared maximum counts as failure. All vectors must be of one
/// kind; a missing vector throws InvalidArgument naming it.
AlgebraResult concept_algebra(std::span<const ConceptVector> vectors, ConceptId c1, ConceptId c2, ConceptId c3);

struct AlgebraGrid {
  std::vector<AlgebraResult> results;  // all ordered triples of distinct concepts
  double success_rate = 0.0;
  /// success_rate_by_pair[(c1, c3)] aggregates over the intermediate concept.
  std::map<std::pair<ConceptId, ConceptId>, double> success_rate_by_pair;
};

AlgebraGrid algebra_grid(std::span<const ConceptVector> vectors);

// ---------------------------------------------------------------------------
// Perturbations

struct PerturbationOutcome {
  std::size_t start_id = 0;
  bool success = false;
  bool skipped = false;  // start point was not classified as the source
  double scale = 0.0;    // smallest reclassifying scale found
  int reclassified_as = -1;
  std::size_t iterations = 0;  // model evaluations used
};

struct ReclassSearch {
  double step = 0.05;       // grid step
  double max_scale = 10.0;  // largest grid value
  std::size_t bisection_steps = 20;
};

/// Walks a -> a + eps v over the grid {step, 2 step, ..., max_scale} until the
/// argmax logit becomes `target_class`, then bisects between the last two
/// grid points. The returned scale is classified as the target.
PerturbationOutcome minimal_reclass_scale(const ModelGraph& model, std::size_t layer, std::span<const float> a,
                                          std::span<const float> v, std::size_t source_class,
                                          std::size_t target_class, const ReclassSearch& search);

/// Grid relative to the point: step 0.05 ||a||, max 10 ||a||.
ReclassSearch relative_search(std::span<const float> a);

struct LiftConfig {
  std::size_t iterations = 500;
  double learning_rate = 0.1;
  double tolerance = 1e-3;  // on the residual norm
};

struct LiftResult {
  Tensor delta;  // same shape as the source sample
  double residual = 0.0;
  double delta_norm = 0.0;
  std::size_t iterations = 0;
  bool success = false;
};

/// Gradient descent on ||f_{0,layer}(s + ds) - t||^2 starting from ds = 0.
LiftResult lift_to_input(const ModelGraph& model, std::size_t layer, const Tensor& source,
                         std::span<const float> target, const LiftConfig& cfg);

struct SaliencyConfig {
  std::size_t iterations = 100;
  double learning_rate = 0.1;
};

struct SaliencyResult {
  Tensor delta;  // unit L2 norm, same shape as the source sample
  double objective = 0.0;  // f_{0,layer}(s + delta) . v
  bool zero_gradient = false;
};

/// Projected gradient ascent on f_{0,layer}(s + ds) . v over the unit sphere.
SaliencyResult spatial_saliency(const ModelGraph& model, std::size_t layer, const Tensor& source,
                                std::span<const float> v, const SaliencyConfig& cfg);

struct ConsistencyResult {
  double error = 0.0;
  double rho1 = 0.0;
  double rho2 = 0.0;
};

/// Mean over s of || f_{l1,l2}(f_{0,l1}(s) + rho1 v1) - (f_{0,l2}(s) + rho2 v1) ||
/// with rho_l = mean ||f_{0,l}(s)|| / ||v_l||. The second term deliberately
/// uses v1, so positions l1 and l2 must have equal widths.
ConsistencyResult consistency_error(const ModelGraph& model, std::size_t l1, std::size_t l2,
                                    std::span<const float> v1, std::span<const float> v2, const Tensor& inputs);

// ---------------------------------------------------------------------------
// Rotation profile

struct RotationProfile {
  std::vector<double> angles;
  std::vector<double> cav_loss;  // logistic loss of the rotated classifier
  std::vector<double> cbv_loss;  // similarity loss of the rotated boundary vector
};

/// Rotates x inside span{u, w} by each angle, leaving the orthogonal
/// complement fixed. u and w must be orthonormal to 1e-6.
std::vector<float> rotate_in_plane(std::span<const float> x, std::span<const float> u, std::span<const float> w,
                                   double angle);

RotationProfile rotation_loss_profile(const cv::CavResult& cav, const Tensor& positives, const Tensor& negatives,
                                      std::span<const float> cbv, const Tensor& normals, std::span<const float> u,
                                      std::span<const float> w, std::span<const double> angles);

std::vector<double> angle_grid(std::size_t count);  // count points over [0, 2 pi]

// ---------------------------------------------------------------------------
// Probes

struct ProbeConfig {
  cv::CavTrainConfig cav;
  double holdout = 0.2;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  std::size_t layer = 0;
  double accuracy = 0.0;
  bool degenerate = false;
  std::string warning;
};

/// One-vs-rest logistic probes on each layer's activations, scored on a
/// seeded held-out split.
std::vector<ProbeResult> layer_probe_accuracy(const ModelGraph& model, std::span<const std::size_t> layers,
                                              const LabeledDataset& data, const ProbeConfig& cfg);

/// Same probe on precomputed activations (n x m) and labels.
ProbeResult probe_accuracy(const Tensor& activations, std::span<const int> labels, const ProbeConfig& cfg);

// ---------------------------------------------------------------------------
// Correlation

struct Correlation {
  double coefficient = 0.0;
  double p_value = 1.0;              // two-sided t-test
  double permutation_p_value = 1.0;  // (hits + 1) / (draws + 1)
  std::size_t n = 0;
  std::size_t permutations = 0;
};

double pearson(std::span<const double> x, std::span<const double> y);

Correlation correlate(std::span<const double> x, std::span<const double> y, std::size_t permutations = 10000,
                      std::uint64_t seed = 0);

}  // namespace blens::analysis
