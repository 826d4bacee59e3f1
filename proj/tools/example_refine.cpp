// Library walk-through: refine one synthetic image with the oracle backend and
// print the mIoU of every stage.

#include <cstdio>

#include "magnet/magnet.hpp"

int main() {
    using namespace magnet;

    const Fixture fx = generate_fixture(FixtureSpec{.seed = 7, .count = 1, .size = 256, .classes = 5}, 0);
    const OracleBackend backend({.gt = fx.labels, .classes = 5, .blur_sigma_at_coarsest = 2.0f, .seed = 7});
    const MeanCombiner combiner;

    PipelineConfig cfg;
    cfg.plan = build_scale_plan(256, 256, 64, 64, {{256, 256}, {128, 128}, {64, 64}});
    cfg.k = 2048;

    const MagnetResult result = run_magnet(fx.image, cfg, backend, combiner, {&fx.labels, 5, kDefaultIgnoreIndex});
    for (const StageReport& r : result.reports) {
        std::printf("stage %d: %d patches, %zu points, mIoU %.4f\n", r.level, r.patches, r.points, *r.miou);
    }
}
