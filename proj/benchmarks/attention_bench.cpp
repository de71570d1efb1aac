#include <benchmark/benchmark.h>

#include <vector>

#include "tfti2i/analysis.hpp"
#include "tfti2i/model.hpp"
#include "tfti2i/numerics.hpp"
#include "tfti2i/refmask.hpp"

namespace {

using namespace tfti2i;

void BM_MaskedAttention(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t width = 16;
  const Tensor2 q = seeded_gaussian(1, n, width);
  const Tensor2 k = seeded_gaussian(2, n, width);
  const Tensor2 v = seeded_gaussian(3, n, width);
  const AttentionMask mask(n, n);
  for (auto _ : state) benchmark::DoNotOptimize(masked_attention(q, k, v, mask, width));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_MaskedAttention)->RangeMultiplier(2)->Range(32, 512)->Complexity(benchmark::oNSquared);

// Output pass with R references sharing contextual tokens only.
void BM_ContextualSharing(benchmark::State& state) {
  const auto refs = static_cast<std::size_t>(state.range(0));
  const bool wta = state.range(1) != 0;
  const Model model = init_model(ModelConfig{});
  const std::size_t n_i = model.config.vision_tokens;
  const std::size_t n_p = model.config.text_tokens;
  const std::size_t d = model.config.width;
  const TokenBlock vision{Modality::Vision, seeded_gaussian(10, n_i, d), std::nullopt};
  const TokenBlock prompt{Modality::Text, seeded_gaussian(11, n_p, d), std::nullopt};
  std::vector<TokenBlock> contexts;
  for (std::size_t r = 0; r < refs; ++r) {
    contexts.push_back(TokenBlock{Modality::Text, seeded_gaussian(100 + r, n_p, d), r});
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(cts_forward(vision, prompt, contexts, 0, model, wta));
  }
  state.counters["keys"] = static_cast<double>(attention_cost(refs, n_i, n_p).exact_cts_keys);
}
BENCHMARK(BM_ContextualSharing)->ArgsProduct({{0, 1, 2, 4, 8}, {0, 1}});

// Same output pass if every reference's vision tokens were concatenated
// instead, for comparison with BM_ContextualSharing.
void BM_VisionSharing(benchmark::State& state) {
  const auto refs = static_cast<std::size_t>(state.range(0));
  const ModelConfig cfg{};
  const std::size_t queries = cfg.vision_tokens + cfg.text_tokens;
  const std::size_t keys = attention_cost(refs, cfg.vision_tokens, cfg.text_tokens).exact_share_keys;
  const std::size_t width = cfg.head_width();
  const Tensor2 q = seeded_gaussian(1, queries, width);
  const Tensor2 k = seeded_gaussian(2, keys, width);
  const Tensor2 v = seeded_gaussian(3, keys, width);
  const AttentionMask mask(queries, keys);
  for (auto _ : state) {
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      benchmark::DoNotOptimize(masked_attention(q, k, v, mask, width));
    }
  }
  state.counters["keys"] = static_cast<double>(keys);
}
BENCHMARK(BM_VisionSharing)->Arg(0)->Arg(1)->Arg(2)->Arg(4)->Arg(8);

void BM_Otsu(benchmark::State& state) {
  const Tensor2 values = seeded_gaussian(5, 1, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(otsu_threshold(values.values()));
}
BENCHMARK(BM_Otsu)->Arg(64)->Arg(4096);

}  // namespace

BENCHMARK_MAIN();
