#include <span>
#include <vector>

#include <benchmark/benchmark.h>

#include "distil/autodiff.hpp"
#include "distil/losses.hpp"
#include "distil/student.hpp"
#include "distil/synthetic.hpp"
#include "distil/tokenizer.hpp"

namespace {

using namespace distil;

Tensor filled(Shape shape, Rng& rng, bool requires_grad = false) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(shape[0] * shape[1]);
  for (double& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = filled({n, n}, rng), b = filled({n, n}, rng);
  NoGradScope no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

StudentConfig bench_config(const Vocab& vocab) {
  StudentConfig config;
  config.vocab_size = vocab.size();
  config.num_classes = SyntheticTaskOptions{}.num_classes;
  config.max_len = 64;
  return config;
}

struct StudentFixture {
  SyntheticTask task;
  Vocab vocab;
  StudentParams params;
  std::vector<Encoded> batch;
  std::vector<std::size_t> labels;

  explicit StudentFixture(std::size_t batch_size)
      : task(make_synthetic_task(SyntheticTaskOptions{}, batch_size, 4)),
        vocab(task.vocab()),
        params(StudentParams::initialize(bench_config(vocab), 3)) {
    const StudentConfig config = bench_config(vocab);
    for (const Instance& in : task.pool) {
      batch.push_back(encode(in.text, vocab, config.max_len));
      labels.push_back(*in.label);
    }
  }
};

void BM_StudentForward(benchmark::State& state) {
  StudentFixture f(static_cast<std::size_t>(state.range(0)));
  Rng rng(4);
  NoGradScope no_grad;
  for (auto _ : state) {
    benchmark::DoNotOptimize(classify(f.params, encode(f.params, std::span<const Encoded>(f.batch), false, rng).pooled));
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * f.batch.size()));
}
BENCHMARK(BM_StudentForward)->Arg(4)->Arg(32);

void BM_StudentForwardBackward(benchmark::State& state) {
  StudentFixture f(static_cast<std::size_t>(state.range(0)));
  Rng rng(5);
  for (auto _ : state) {
    f.params.zero_grad();
    const Tensor z = encode(f.params, std::span<const Encoded>(f.batch), true, rng).pooled;
    cross_entropy(classify(f.params, z), f.labels).backward();
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * f.batch.size()));
}
BENCHMARK(BM_StudentForwardBackward)->Arg(4)->Arg(32);

void BM_TokenizerEncode(benchmark::State& state) {
  const SyntheticTask task = make_synthetic_task(SyntheticTaskOptions{}, 256, 4);
  const Vocab vocab = task.vocab();
  std::size_t bytes = 0;
  for (const Instance& in : task.pool) bytes += in.text.size();
  for (auto _ : state) {
    for (const Instance& in : task.pool) benchmark::DoNotOptimize(encode(in.text, vocab));
  }
  state.SetBytesProcessed(static_cast<int64_t>(state.iterations() * bytes));
}
BENCHMARK(BM_TokenizerEncode);

}  // namespace

BENCHMARK_MAIN();
