#include <benchmark/benchmark.h>

#include "dakd/metrics.hpp"
#include "dakd/relattn.hpp"
#include "dakd/rng.hpp"
#include "dakd/tensor.hpp"

namespace {

dakd::Tensor random_tensor(int rows, int cols, dakd::Rng& rng) {
    dakd::Tensor t(rows, cols);
    for (auto& v : t.data) v = rng.normal();
    return t;
}

void BM_Matmul(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    dakd::Rng rng(7);
    const dakd::Tensor a = random_tensor(n, n, rng);
    const dakd::Tensor b = random_tensor(n, n, rng);
    dakd::Tensor c(n, n);
    for (auto _ : state) {
        dakd::matmul_into(a, b, c);
        benchmark::DoNotOptimize(c.data.data());
    }
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128)->Arg(256);

void BM_TamForward(benchmark::State& state) {
    const int n_s = static_cast<int>(state.range(0));
    const int dim = static_cast<int>(state.range(1));
    dakd::Rng rng(11);
    dakd::AttnSpec spec;
    spec.streams = 3;
    spec.dim = dim;
    spec.heads = 4;
    spec.bucket_cap = 25;
    const dakd::AttentionParams params = dakd::AttentionParams::init(spec, rng);
    std::vector<dakd::Tensor> streams;
    for (int t = 0; t < 3; ++t) streams.push_back(random_tensor(n_s, dim, rng));
    for (auto _ : state) {
        const dakd::AttentionOutput out = dakd::tam_forward(streams, params, true);
        benchmark::DoNotOptimize(out.aggregated.data.data());
    }
}
BENCHMARK(BM_TamForward)->Args({32, 64})->Args({32, 128});

void BM_RocAuc(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    dakd::Rng rng(13);
    std::vector<int> labels(n);
    std::vector<double> scores(n);
    for (int i = 0; i < n; ++i) {
        labels[i] = rng.uniform() < 0.3 ? 1 : 0;
        scores[i] = rng.uniform();
    }
    labels[0] = 0;
    labels[1] = 1;
    for (auto _ : state) {
        const double auc = dakd::roc_auc(scores, labels);
        benchmark::DoNotOptimize(auc);
    }
}
BENCHMARK(BM_RocAuc)->Arg(1000)->Arg(100000);

}  // namespace

BENCHMARK_MAIN();
