#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "fairshare/harness.hpp"
#include "fairshare/rng.hpp"

using namespace fairshare;

namespace {

std::string data_file(const std::string& name) {
  return std::string(BENCH_DATA_DIR) + "/" + name;
}

struct Fixture {
  Config cfg;
  Model model;
  InnerProductMatrix ip;
  GeometryContext geom;

  explicit Fixture(const std::string& name, double epsilon = 0.1)
      : cfg(parse_config_file(data_file(name))),
        model(make_model(cfg, epsilon)),
        ip(build_M(cfg.spec, cfg.dists, cfg.lambda0, 1e-10)),
        geom(build_geometry(cfg.spec, cfg.dists, model.profile, ip)) {}
};

Fixture& linear() {
  static Fixture f("linear.json");
  return f;
}

Fixture& phase() {
  static Fixture f("linear_phase.json");
  return f;
}

std::vector<Eigen::VectorXd> random_vectors(int count, int dim, double hi) {
  Rng rng(42, 1);
  std::vector<Eigen::VectorXd> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    Eigen::VectorXd v(dim);
    for (int k = 0; k < dim; ++k)
      v(k) = std::floor(rng.uniform() * (hi + 1.0));
    out.push_back(v);
  }
  return out;
}

}  // namespace

static void BM_AllocationSolve(benchmark::State& state) {
  Fixture& f = linear();
  const auto totals = random_vectors(512, f.cfg.spec.num_routes(), 40.0);
  size_t i = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(solve_allocation(f.cfg.spec, totals[i++ & 511]));
}
BENCHMARK(BM_AllocationSolve);

static void BM_ConeProjection(benchmark::State& state) {
  Fixture& f = phase();
  const auto vecs = random_vectors(512, f.geom.layout.K, 40.0);
  size_t i = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(project_cone(f.geom, vecs[i++ & 511]));
}
BENCHMARK(BM_ConeProjection);

static void BM_TransitionKernel(benchmark::State& state) {
  Fixture& f = phase();
  FlowState s;
  s.counts = {3, 1, 4, 1, 5, 9, 2};
  const Allocation alloc = solve_allocation(f.cfg.spec, route_totals(f.model.layout, s));
  for (auto _ : state)
    benchmark::DoNotOptimize(transition_kernel(f.model, s, alloc));
}
BENCHMARK(BM_TransitionKernel);

static void BM_BuildM(benchmark::State& state) {
  Fixture& f = phase();
  for (auto _ : state)
    benchmark::DoNotOptimize(build_M(f.cfg.spec, f.cfg.dists, f.cfg.lambda0, 1e-10));
}
BENCHMARK(BM_BuildM);

static void BM_Simulate(benchmark::State& state) {
  Fixture& f = linear();
  SimParams p;
  p.events = 20000;
  p.seed = 7;
  for (auto _ : state)
    benchmark::DoNotOptimize(simulate(f.model, f.geom, p));
  state.SetItemsProcessed(state.iterations() * p.events);
}
BENCHMARK(BM_Simulate);

BENCHMARK_MAIN();
