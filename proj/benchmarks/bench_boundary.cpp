#include <benchmark/benchmark.h>

#include <random>

#include "blens/conceptvec.hpp"
#include "blens/tda.hpp"

namespace {

blens::Tensor cluster(std::size_t n, std::size_t d, double shift, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  blens::Tensor t(blens::Shape{n, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) t.at(i, j) = static_cast<float>(g(rng) + (j == 0 ? shift : 0.0));
  }
  return t;
}

void BM_BoundaryPairs(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  const auto pos = cluster(n, d, 1.0, 1);
  const auto neg = cluster(n, d, -1.0, 2);
  for (auto _ : state) benchmark::DoNotOptimize(blens::cv::boundary_pairs(pos, neg));
  state.SetComplexityN(static_cast<benchmark::IterationCount>(n));
}
BENCHMARK(BM_BoundaryPairs)->ArgsProduct({{500, 1000, 2000}, {32, 64}})->Unit(benchmark::kMillisecond);

void BM_CbvTraining(benchmark::State& state) {
  const auto normals_src = cluster(static_cast<std::size_t>(state.range(0)), 64, 3.0, 3);
  blens::Tensor normals = normals_src;
  for (std::size_t i = 0; i < normals.rows(); ++i) {
    const auto u = blens::normalized(normals.row(i));
    std::copy(u.begin(), u.end(), normals.row(i).begin());
  }
  blens::cv::CbvTrainConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(blens::cv::train_cbv(normals, cfg));
}
BENCHMARK(BM_CbvTraining)->Arg(200)->Arg(800)->Unit(benchmark::kMillisecond);

void BM_RipsPersistence(benchmark::State& state) {
  auto pts = cluster(static_cast<std::size_t>(state.range(0)), 16, 0.0, 4);
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    const auto u = blens::normalized(pts.row(i));
    std::copy(u.begin(), u.end(), pts.row(i).begin());
  }
  const auto dist = blens::tda::geodesic_distances(pts);
  for (auto _ : state) benchmark::DoNotOptimize(blens::tda::vietoris_rips_persistence(dist, 1));
}
BENCHMARK(BM_RipsPersistence)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
