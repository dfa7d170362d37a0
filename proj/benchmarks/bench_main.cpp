#include <benchmark/benchmark.h>

#include <vector>

#include "jamident/siggen.hpp"
#include "jamident/tfmap.hpp"
#include "jamident/training.hpp"

using namespace jamident;

namespace {

ad::Tensor<float> random_image(std::uint64_t seed) {
    Rng rng = make_rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<float> v(4800);
    for (auto& x : v) x = u(rng);
    return ad::Tensor<float>::from_data({3, 40, 40}, v);
}

void BM_synth_example(benchmark::State& state) {
    const auto type = siggen::kAllJammingTypes[static_cast<std::size_t>(state.range(0))];
    std::uint64_t seed = 0;
    for (auto _ : state) benchmark::DoNotOptimize(siggen::synth_example(type, 0.0, {}, seed++));
    state.SetLabel(std::string(siggen::to_string(type)));
}
BENCHMARK(BM_synth_example)->DenseRange(0, 7);

void BM_stft_image(benchmark::State& state) {
    const auto ex = siggen::synth_example(siggen::JammingType::LFM, 0.0, {}, 1);
    for (auto _ : state) benchmark::DoNotOptimize(tfmap::signal_to_image(ex.received));
}
BENCHMARK(BM_stft_image);

void BM_forward(benchmark::State& state) {
    diffnet::DiffTransformer<float> m({}, 1);
    const auto batch_size = static_cast<std::size_t>(state.range(0));
    std::vector<ad::Tensor<float>> batch;
    for (std::size_t i = 0; i < batch_size; ++i) batch.push_back(random_image(i));
    for (auto _ : state) benchmark::DoNotOptimize(m.forward_batch(batch).logits.data().data());
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * batch_size));
}
BENCHMARK(BM_forward)->Arg(1)->Arg(32);

void BM_train_step(benchmark::State& state) {
    diffnet::DiffTransformer<float> m({}, 1);
    m.set_training(true);
    std::vector<ad::Tensor<float>> batch;
    std::vector<int> labels;
    for (std::size_t i = 0; i < 32; ++i) {
        batch.push_back(random_image(i));
        labels.push_back(static_cast<int>(i % 8));
    }
    training::Sgd opt(1e-3);
    for (auto _ : state) {
        auto loss = ad::cross_entropy(m.forward_batch(batch).logits, std::span<const int>(labels));
        loss.backward();
        opt.step(m.params());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 32));
}
BENCHMARK(BM_train_step);

void BM_ensemble_predict(benchmark::State& state) {
    diffnet::DiffTransformer<float> m({}, 1);
    const auto img = random_image(3);
    Rng rng = make_rng(2);
    for (auto _ : state) benchmark::DoNotOptimize(training::ensemble_forward(m, img, {}, rng).data().data());
}
BENCHMARK(BM_ensemble_predict);

} // namespace

BENCHMARK_MAIN();
