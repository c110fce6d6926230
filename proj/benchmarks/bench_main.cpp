#include <benchmark/benchmark.h>

#include "acaptcha/attack_harness.hpp"
#include "acaptcha/raster.hpp"

using namespace acaptcha;

namespace {

const std::filesystem::path kFixtures = ACAPTCHA_FIXTURE_DIR;

void BM_Binomial(benchmark::State& state) {
  const auto n = static_cast<std::uint64_t>(state.range(0));
  for (auto _ : state) {
    for (std::uint64_t k = 0; k <= n; ++k) benchmark::DoNotOptimize(binomial(n, k));
  }
}
BENCHMARK(BM_Binomial)->Arg(12)->Arg(64);

void BM_GeneratePuzzle(benchmark::State& state) {
  const PoolSnapshot pool = synthetic_snapshot(5000, 5000);
  PuzzleSpec spec;
  spec.n = static_cast<int>(state.range(0));
  spec.k = spec.n == 9 ? 1 : 3;
  Rng rng(1);
  for (auto _ : state) benchmark::DoNotOptimize(generate_puzzle(spec, pool, rng));
}
BENCHMARK(BM_GeneratePuzzle)->Arg(9)->Arg(12);

void BM_Transform(benchmark::State& state) {
  const auto png = read_file(kFixtures / "pool200/img/cars_01.png");
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(transform(png, {++seed}));
}
BENCHMARK(BM_Transform)->Unit(benchmark::kMicrosecond);

void BM_TransformLarge(benchmark::State& state) {
  Raster big;
  big.width = 1024;
  big.height = 768;
  big.rgb.resize(1024u * 768u * 3u);
  for (std::size_t i = 0; i < big.rgb.size(); ++i) big.rgb[i] = static_cast<std::uint8_t>(i * 31 % 251);
  const auto png = encode_png(big);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(transform(png, {++seed}));
}
BENCHMARK(BM_TransformLarge)->Unit(benchmark::kMillisecond);

void BM_CreateAndSubmit(benchmark::State& state) {
  auto pool = std::make_shared<ImagePool>();
  pool->replace(synthetic_snapshot(5000, 5000));
  ServiceConfig cfg;
  cfg.rate_limit_per_minute = 0;
  cfg.escalation_enabled = false;
  cfg.seed = 1;
  ChallengeService svc(pool, cfg);
  for (auto _ : state) {
    const auto d = svc.create_challenge("site", "bench");
    benchmark::DoNotOptimize(svc.submit_answer(d.token, {0}));
  }
  state.PauseTiming();
  svc.sweep_expired(svc.clock().now() + std::chrono::hours(1));
  state.ResumeTiming();
}
BENCHMARK(BM_CreateAndSubmit);

void BM_RandomGuessAttack(benchmark::State& state) {
  auto pool = std::make_shared<ImagePool>();
  pool->replace(synthetic_snapshot(100, 100));
  ServiceConfig cfg;
  cfg.rate_limit_per_minute = 0;
  cfg.escalation_enabled = false;
  cfg.seed = 1;
  cfg.shared_secret = "b";
  ChallengeService svc(pool, cfg);
  InProcessTarget target(svc, "b");
  for (auto _ : state) benchmark::DoNotOptimize(run_random_guess(target, PuzzleSpec{}, 1000, 7));
}
BENCHMARK(BM_RandomGuessAttack)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
