#include <random>

#include <benchmark/benchmark.h>

#include "tiltfield/neural_volume.hpp"
#include "tiltfield/recon.hpp"
#include "tiltfield/simulate.hpp"
#include "tiltfield/training.hpp"

namespace tiltfield {
namespace {

std::vector<Vec3> random_points(std::size_t count) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<Vec3> pts(count);
    for (Vec3& p : pts) {
        p = Vec3(u(rng), u(rng), u(rng));
    }
    return pts;
}

VolumeSpec bench_spec(Precision precision) {
    VolumeSpec s = VolumeSpec::for_resolution(64);
    s.network.hidden_width = 32;
    s.precision = precision;
    return s;
}

void BM_VolumeForward(benchmark::State& state) {
    const NeuralVolume v(bench_spec(static_cast<Precision>(state.range(0))), 1);
    const std::vector<Vec3> pts = random_points(4096);
    std::vector<double> out(pts.size());
    NeuralVolume::Workspace ws;
    for (auto _ : state) {
        v.forward(pts, ws, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(pts.size()));
}
BENCHMARK(BM_VolumeForward)->Arg(static_cast<int>(Precision::F32))->Arg(static_cast<int>(Precision::F64));

void BM_VolumeBackward(benchmark::State& state) {
    const NeuralVolume v(bench_spec(static_cast<Precision>(state.range(0))), 1);
    const std::vector<Vec3> pts = random_points(4096);
    std::vector<double> out(pts.size());
    const std::vector<double> up(pts.size(), 1.0);
    std::vector<double> grad(v.parameter_count());
    NeuralVolume::Workspace ws;
    v.forward(pts, ws, out);
    for (auto _ : state) {
        v.backward(ws, up, grad);
        benchmark::DoNotOptimize(grad.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(pts.size()));
}
BENCHMARK(BM_VolumeBackward)->Arg(static_cast<int>(Precision::F32))->Arg(static_cast<int>(Precision::F64));

void BM_ProjectVolume(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const VoxelVolume v = make_phantom(PhantomKind::Blobs, GridSpec::cube(n), 1);
    for (auto _ : state) {
        benchmark::DoNotOptimize(project(v, {0.3}, n));
    }
}
BENCHMARK(BM_ProjectVolume)->Arg(32)->Arg(64);

void BM_Fbp(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const VoxelVolume v = make_phantom(PhantomKind::Blobs, GridSpec::cube(n), 1);
    std::vector<double> angles;
    for (double d : angle_range(-60, 60, 2)) {
        angles.push_back(deg_to_rad(d));
    }
    const TiltSeries ts = project(v, angles, n);
    for (auto _ : state) {
        benchmark::DoNotOptimize(fbp(ts, v.grid()));
    }
}
BENCHMARK(BM_Fbp)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_LossAndGradient(benchmark::State& state) {
    const int n = 64;
    TiltSeries ts;
    for (int m = 0; m < 5; ++m) {
        ts.images.emplace_back(n, 1.0);
        ts.angles.push_back(0.1 * m);
    }
    TrainConfig c;
    c.n_samples = 32;
    c.volume = bench_spec(Precision::F32);
    const NeuralVolume v(c.volume, 1);
    std::vector<DeformParams> gammas(5, DeformParams::identity(10, 10));
    Rng rng(2);
    const std::vector<PixelSample> batch = sample_minibatch(rng, ts, 500);
    for (auto _ : state) {
        benchmark::DoNotOptimize(loss_and_gradient(batch, v, gammas, ts, c));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch.size()));
}
BENCHMARK(BM_LossAndGradient)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace tiltfield

BENCHMARK_MAIN();
