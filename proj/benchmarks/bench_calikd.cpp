#include <benchmark/benchmark.h>

#include "calikd/calibration.hpp"
#include "calikd/distill.hpp"
#include "calikd/matrix.hpp"
#include "calikd/nnet.hpp"
#include "calikd/rng.hpp"

namespace {

using calikd::Matrix;
using calikd::Pcg32;

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Pcg32 rng(seed, calikd::rng_stream::kData);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.next_gaussian();
  return m;
}

calikd::calibration::LogitSet random_logit_set(std::size_t n, std::size_t k,
                                               std::uint64_t seed) {
  Pcg32 rng(seed, calikd::rng_stream::kData);
  calikd::calibration::LogitSet set;
  set.logits = random_matrix(n, k, seed);
  set.labels.resize(n);
  for (auto& y : set.labels) {
    y = static_cast<int>(rng.next_below(static_cast<std::uint32_t>(k)));
  }
  return set;
}

void bm_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, n, 1);
  const Matrix b = random_matrix(n, n, 2);
  for (auto _ : state) {
    Matrix c = calikd::matmul(a, b);
    benchmark::DoNotOptimize(c.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(bm_matmul)->Arg(64)->Arg(256);

void bm_forward(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  Pcg32 init(7, calikd::rng_stream::kInit);
  const auto model = calikd::nnet::MlpModel::initialized({32, width, 10}, init);
  const Matrix inputs = random_matrix(128, 32, 3);
  for (auto _ : state) {
    Matrix logits = calikd::nnet::forward(model, inputs);
    benchmark::DoNotOptimize(logits.data().data());
  }
  state.SetItemsProcessed(state.iterations() * 128);
}
BENCHMARK(bm_forward)->Arg(32)->Arg(256)->Arg(2048);

void bm_loss_and_grad(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  Pcg32 init(7, calikd::rng_stream::kInit);
  const auto model = calikd::nnet::MlpModel::initialized({32, width, 10}, init);
  const Matrix inputs = random_matrix(128, 32, 3);
  Pcg32 rng(4, calikd::rng_stream::kData);
  std::vector<int> labels(128);
  for (auto& y : labels) y = static_cast<int>(rng.next_below(10));
  const auto targets = calikd::nnet::Targets::hard(std::move(labels));
  for (auto _ : state) {
    auto out = calikd::nnet::loss_and_grad(model, inputs, targets, 1.0);
    benchmark::DoNotOptimize(out.loss);
  }
  state.SetItemsProcessed(state.iterations() * 128);
}
BENCHMARK(bm_loss_and_grad)->Arg(32)->Arg(256)->Arg(2048);

void bm_nll(benchmark::State& state) {
  const auto set = random_logit_set(5000, 10, 11);
  for (auto _ : state) {
    benchmark::DoNotOptimize(calikd::calibration::nll(set, 1.7));
  }
  state.SetItemsProcessed(state.iterations() * 5000);
}
BENCHMARK(bm_nll);

void bm_fit_temperature(benchmark::State& state) {
  const auto set = random_logit_set(5000, 10, 12);
  for (auto _ : state) {
    auto fit = calikd::calibration::fit_temperature(set);
    benchmark::DoNotOptimize(fit.temperature);
  }
}
BENCHMARK(bm_fit_temperature)->Unit(benchmark::kMillisecond);

void bm_reliability_histogram(benchmark::State& state) {
  const auto set = random_logit_set(5000, 10, 13);
  for (auto _ : state) {
    auto hist = calikd::calibration::reliability_histogram(set, 1.0, 15);
    benchmark::DoNotOptimize(calikd::calibration::ece(hist));
  }
  state.SetItemsProcessed(state.iterations() * 5000);
}
BENCHMARK(bm_reliability_histogram);

void bm_kd_loss_grad(benchmark::State& state) {
  const Matrix student = random_matrix(256, 10, 21);
  const Matrix teacher = random_matrix(256, 10, 22);
  Pcg32 rng(23, calikd::rng_stream::kData);
  std::vector<int> labels(256);
  for (auto& y : labels) y = static_cast<int>(rng.next_below(10));
  for (auto _ : state) {
    auto out = calikd::distill::kd_loss_grad(student, teacher, labels, 4.0, 0.8);
    benchmark::DoNotOptimize(out.loss);
  }
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(bm_kd_loss_grad);

}  // namespace

BENCHMARK_MAIN();
