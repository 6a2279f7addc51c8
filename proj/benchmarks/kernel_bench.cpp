// Compares the OpenMP grid kernels against the serial reference
// implementations over a synthetic scene and a worker-count sweep.
//
//   kernel_bench [grid_side] [channels] [repeat]

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <vector>

#include "bevrefine/parallel.hpp"
#include "bevrefine/reference.hpp"
#include "bevrefine/scenesim.hpp"

using namespace bevrefine;
namespace chrono = std::chrono;

namespace {

template <typename F>
std::int64_t median_ns(int repeat, F&& fn) {
    std::vector<std::int64_t> times;
    times.reserve(static_cast<std::size_t>(repeat));
    for (int i = 0; i < repeat; ++i) {
        const auto t0 = chrono::steady_clock::now();
        fn();
        const auto t1 = chrono::steady_clock::now();
        times.push_back(chrono::duration_cast<chrono::nanoseconds>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    return times[times.size() / 2];
}

}  // namespace

int main(int argc, char** argv) {
    const int side = argc > 1 ? std::atoi(argv[1]) : 100;
    const int channels = argc > 2 ? std::atoi(argv[2]) : 32;
    const int repeat = argc > 3 ? std::atoi(argv[3]) : 5;

    SimSpec sim;
    sim.rng_seed = 42;
    sim.n_objects = 8;
    sim.feature_channels = channels;
    const Scene scene = generate_scene(sim);

    PipelineConfig cfg;
    cfg.grid.h = side;
    cfg.grid.w = side;
    const SamplingParams sampling = SamplingParams::identity();
    const BevTensor queries = BevTensor::zeros(side, side, channels);

    std::printf("grid %dx%d, %d channels, %zu views, repeat %d (median)\n\n", side, side, channels,
                scene.cams.size(), repeat);

    const std::int64_t mask_serial = median_ns(
        repeat, [&] { (void)expected_foreground(scene, cfg.grid); });
    const std::int64_t sca_serial = median_ns(repeat, [&] {
        (void)reference::sca_grid(cfg.grid, scene.cams, scene.feature_maps, sampling, queries);
    });
    const ForegroundMask mask = build_mask(cfg.grid, scene.cams, scene.boxes_2d);
    const BevTensor coarse =
        sca(cfg.grid, scene.cams, scene.feature_maps, sampling, queries);
    const std::int64_t refine_serial = median_ns(repeat, [&] {
        (void)reference::refine_and_fuse(cfg.grid, scene.cams, scene.feature_maps, sampling,
                                         coarse, mask);
    });

    std::printf("%-22s %12s %12s %8s\n", "kernel", "serial ns", "parallel ns", "speedup");
    const int max_workers = worker_count();
    for (int workers : {1, 2, 4, max_workers}) {
        if (workers > max_workers) continue;
        set_worker_count(workers);
        const std::int64_t mask_par =
            median_ns(repeat, [&] { (void)build_mask(cfg.grid, scene.cams, scene.boxes_2d); });
        const std::int64_t sca_par = median_ns(repeat, [&] {
            (void)sca(cfg.grid, scene.cams, scene.feature_maps, sampling, queries);
        });
        const std::int64_t refine_par = median_ns(repeat, [&] {
            (void)refine_and_fuse(cfg.grid, scene.cams, scene.feature_maps, sampling, coarse,
                                  mask);
        });
        std::printf("build_mask  (%2d thr)   %12lld %12lld %7.2fx\n", workers,
                    static_cast<long long>(mask_serial), static_cast<long long>(mask_par),
                    static_cast<double>(mask_serial) / static_cast<double>(mask_par));
        std::printf("sca         (%2d thr)   %12lld %12lld %7.2fx\n", workers,
                    static_cast<long long>(sca_serial), static_cast<long long>(sca_par),
                    static_cast<double>(sca_serial) / static_cast<double>(sca_par));
        std::printf("refine+fuse (%2d thr)   %12lld %12lld %7.2fx\n\n", workers,
                    static_cast<long long>(refine_serial), static_cast<long long>(refine_par),
                    static_cast<double>(refine_serial) / static_cast<double>(refine_par));
    }
    set_worker_count(0);

    // Equality spot check: parallel kernels must reproduce the serial
    // reference bit for bit.
    const BevTensor a = sca(cfg.grid, scene.cams, scene.feature_maps, sampling, queries);
    const BevTensor b =
        reference::sca_grid(cfg.grid, scene.cams, scene.feature_maps, sampling, queries);
    std::printf("parallel == serial: %s\n", a.data == b.data ? "yes" : "NO (BUG)");
    return a.data == b.data ? 0 : 1;
}
