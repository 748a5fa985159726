#include "basisprec/linalg.hpp"
#include "basisprec/models.hpp"
#include "basisprec/preconditioner.hpp"
#include "basisprec/random.hpp"
#include "basisprec/tasks.hpp"

#include <benchmark/benchmark.h>

using namespace basisprec;

namespace {

void BM_SymEig(benchmark::State& state) {
  const Index d = state.range(0);
  Rng rng = make_rng(0, 0, Stream::Task);
  const Matrix a = gaussian_matrix(rng, d, d);
  const linalg::SymMatrix s(a * a.transpose());
  for (auto _ : state) benchmark::DoNotOptimize(linalg::sym_eig(s));
}
BENCHMARK(BM_SymEig)->Arg(10)->Arg(50)->Arg(128);

void BM_GeodesicInterp(benchmark::State& state) {
  const Index d = state.range(0);
  Rng rng = make_rng(0, 0, Stream::Task);
  linalg::OrthoMatrix u(tasks::random_orthogonal(d, rng));
  if (u.determinant() < 0.0) u = u.with_flipped_column(0);
  for (auto _ : state) benchmark::DoNotOptimize(linalg::geodesic_interp(u, 0.5));
}
BENCHMARK(BM_GeodesicInterp)->Arg(20)->Arg(128);

void BM_MlpForwardBackward(benchmark::State& state) {
  const Index n = state.range(0);
  Rng rng = make_rng(0, 0, Stream::Task);
  const models::MlpShape shape{20, 128, 1, models::Activation::Relu};
  const auto m = models::MlpModel::from_params(shape, gaussian_vector(rng, shape.param_count(), 0.1));
  models::Batch batch{gaussian_matrix(rng, 20, n), gaussian_matrix(rng, 1, n)};
  for (auto _ : state) benchmark::DoNotOptimize(models::mlp_forward_backward(m, batch));
}
BENCHMARK(BM_MlpForwardBackward)->Arg(1)->Arg(64)->Arg(1024);

void BM_MlpGnKron(benchmark::State& state) {
  Rng rng = make_rng(0, 0, Stream::Task);
  const models::MlpShape shape{20, 128, 1, models::Activation::Relu};
  const auto m = models::MlpModel::from_params(shape, gaussian_vector(rng, shape.param_count(), 0.1));
  const Matrix x = gaussian_matrix(rng, 20, state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(models::mlp_gn_kron(m, x));
}
BENCHMARK(BM_MlpGnKron)->Arg(4096);

// One optimizer update in the Kronecker eigenbasis of a parity MLP.
void BM_OptimizerStep(benchmark::State& state) {
  const auto task = tasks::gen_parity(20, 6, 0, 128);
  Rng rng = make_rng(0, 0, Stream::Init);
  const ParamVector theta = task->initial_params(rng);
  const auto g = task->full_grad(theta, rng);
  precond::OptimizerConfig cfg;
  cfg.basis = state.range(0) ? precond::BasisKind::KronEigen : precond::BasisKind::Identity;
  cfg.scaling = precond::ScalingKind::GaussNewton;
  cfg.eps = 1e-6;
  cfg.refresh_interval = 1000000;
  precond::Optimizer opt(cfg, task->dim());
  opt.update_curvature(task->full_gn(theta, rng));
  for (auto _ : state) benchmark::DoNotOptimize(opt.step(theta, g.grad, 1e-3));
}
BENCHMARK(BM_OptimizerStep)->Arg(0)->Arg(1);

}  // namespace

BENCHMARK_MAIN();
