// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero on any failure.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "magnet/magnet.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace magnet;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void criterion(const std::string& name, double budget_seconds, const std::function<Outcome()>& body) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
        out = body();
    } catch (const std::exception& e) {
        out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (budget_seconds > 0 && secs > budget_seconds) {
        out.pass = false;
        out.detail += "; over the " + std::to_string(budget_seconds) + " s budget";
    }
    char timing[32];
    std::snprintf(timing, sizeof timing, "%.2f s", secs);
    std::printf("%s %s: %s [%s]\n", out.pass ? "PASS" : "FAIL", name.c_str(), out.detail.c_str(), timing);
    std::fflush(stdout);
    failures += out.pass ? 0 : 1;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

// --------------------------------------------------------------------------
// Shared fixture set

constexpr int kFixtureCount = 20;
constexpr int kFixtureSize = 512;
constexpr int kClasses = 5;

const std::vector<Fixture>& fixtures() {
    static const std::vector<Fixture> set = [] {
        std::vector<Fixture> out;
        const FixtureSpec spec{1234, kFixtureCount, kFixtureSize, kClasses, 1.0};
        for (int i = 0; i < spec.count; ++i) out.push_back(generate_fixture(spec, i));
        return out;
    }();
    return set;
}

OracleBackendConfig oracle_config(const Fixture& f) { return {f.labels, kClasses, 2.0f, 0.02f, 1.0f, 1234}; }

PipelineConfig fixture_pipeline(std::vector<Extent> levels) {
    PipelineConfig cfg;
    cfg.plan = build_scale_plan(kFixtureSize, kFixtureSize, 128, 128, std::move(levels));
    cfg.k = 8192;
    return cfg;
}

const PipelineConfig& three_scale() {
    static const PipelineConfig cfg = fixture_pipeline({{512, 512}, {256, 256}, {128, 128}});
    return cfg;
}

// Dataset-level mIoU of every stage.
struct StageScores {
    std::vector<double> miou;
    int patches = 0;
};

StageScores score_stages(const PipelineConfig& cfg) {
    std::vector<ConfusionMatrix> cms;
    StageScores out;
    const MeanCombiner combiner;
    for (const auto& f : fixtures()) {
        const OracleBackend oracle(oracle_config(f));
        const auto result = run_magnet(f.image, cfg, oracle, combiner);
        cms.resize(result.stages.size(), ConfusionMatrix(kClasses));
        for (std::size_t s = 0; s < result.stages.size(); ++s) accumulate(cms[s], argmax_labels(result.stages[s]), f.labels);
        if (out.patches == 0) out.patches = total_patches(result);
    }
    for (const auto& cm : cms) out.miou.push_back(miou(cm));
    return out;
}

const StageScores& three_scale_scores() {
    static const StageScores s = score_stages(three_scale());
    return s;
}

// --------------------------------------------------------------------------
// Criteria

Outcome tiling_exactness() {
    std::mt19937 rng(2024);
    std::uniform_int_distribution<int> proc_dim(2, 24);
    std::uniform_int_distribution<int> factor(2, 3);
    std::uniform_int_distribution<int> depth(1, 3);
    int plans = 0;
    for (; plans < 200; ++plans) {
        const int ph = proc_dim(rng);
        const int pw = proc_dim(rng);
        std::vector<Extent> levels{{ph, pw}};
        const int extra = depth(rng);
        for (int i = 0; i < extra; ++i) {
            const int fh = factor(rng);
            const int fw = factor(rng);
            levels.insert(levels.begin(), Extent{levels.front().height * fh, levels.front().width * fw});
        }
        const int H = levels.front().height;
        const int W = levels.front().width;
        const auto plan = build_scale_plan(H, W, ph, pw, levels);
        for (int s = 1; s <= plan.level_count(); ++s) {
            const auto lv = plan.level(s);
            const auto windows = windows_for_scale(plan, s, H, W);
            const auto expected = static_cast<std::size_t>((H / lv.height) * (W / lv.width));
            if (windows.size() != expected) return {false, "count mismatch on plan " + std::to_string(plans)};
            std::vector<std::uint8_t> cover(static_cast<std::size_t>(H) * static_cast<std::size_t>(W), 0);
            for (const auto& w : windows) {
                if (!window_in_bounds(w, H, W)) return {false, "window out of bounds"};
                for (int r = w.y; r < w.y + w.h; ++r) {
                    for (int c = w.x; c < w.x + w.w; ++c) {
                        if (cover[static_cast<std::size_t>(r) * W + c]++) return {false, "overlapping windows"};
                    }
                }
            }
            if (std::find(cover.begin(), cover.end(), 0) != cover.end()) return {false, "uncovered pixel"};
        }
    }

    const auto city = build_scale_plan(1024, 2048, 128, 256, {{1024, 2048}, {512, 1024}, {256, 512}, {128, 256}});
    std::vector<std::size_t> counts;
    for (int s = 1; s <= 4; ++s) counts.push_back(windows_for_scale(city, s).size());
    if (counts != std::vector<std::size_t>{1, 4, 16, 64}) return {false, "Cityscapes-shaped counts wrong"};

    class Counting final : public SegmentationBackend {
    public:
        int classes() const override { return 2; }
        ProbMap segment(const Image& p, const PatchContext&) const override {
            ++calls;
            return one_hot(LabelMap(p.height(), p.width(), 0), 2);
        }
        mutable std::atomic<int> calls{0};
    } counting;
    PipelineConfig cfg;
    cfg.plan = city;
    const auto result = run_magnet(Image(1024, 2048, 0.5f), cfg, counting, MeanCombiner{});
    if (counting.calls != 85 || total_patches(result) != 85) {
        return {false, "segmented " + std::to_string(counting.calls.load()) + " patches, expected 85"};
    }
    return {true, std::to_string(plans) + " random plans exact; counts 1/4/16/64, 85 patches segmented"};
}

Outcome selection_equivalence() {
    std::mt19937 rng(77);
    std::uniform_int_distribution<int> dim(1, 16);
    std::uniform_int_distribution<int> cls(2, 5);
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    int maps = 0;
    int tie_maps = 0;
    for (; maps < 1000; ++maps) {
        const int h = dim(rng);
        const int w = dim(rng);
        const int c = cls(rng);
        ProbMap y = testing::random_prob_map(rng, h, w, c);
        ProbMap r = testing::random_prob_map(rng, h, w, c);
        if (maps % 2 == 1) {
            // Coarse quantization makes equal scores common.
            for (auto* m : {&y, &r}) {
                for (float& v : m->values()) v = std::round(v * 4.0f) + 1.0f;
                *m = normalize_prob(std::move(*m));
            }
        }
        const auto yu = uncertainty_map(y);
        const auto ru = uncertainty_map(r);
        const auto kind = kAllScoreKinds[static_cast<std::size_t>(maps) % kAllScoreKinds.size()];
        const ScoreStrategy strategy{kind, kind == ScoreKind::linear ? std::optional<float>(unit(rng)) : std::nullopt, 1};
        const auto q = score_map(yu, ru, strategy);

        std::vector<std::pair<float, int>> all;
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) {
                const float a = yu.at(i, j);
                const float b = ru.at(i, j);
                float v = 0.0f;
                switch (kind) {
                    case ScoreKind::uncertainty_only: v = a; break;
                    case ScoreKind::certainty_only: v = 1.0f - b; break;
                    case ScoreKind::product: v = a * (1.0f - b); break;
                    case ScoreKind::linear: v = *strategy.alpha * a + (1.0f - *strategy.alpha) * (1.0f - b); break;
                }
                v = std::clamp(v, 0.0f, 1.0f);
                if (q.at(i, j) != v) return {false, "score mismatch on map " + std::to_string(maps)};
                all.emplace_back(v, i * w + j);
            }
        }
        std::sort(all.begin(), all.end(),
                  [](auto a, auto b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
        bool tied = false;
        for (std::size_t i = 1; i < all.size(); ++i) tied = tied || all[i].first == all[i - 1].first;
        tie_maps += tied ? 1 : 0;
        const std::size_t k = std::uniform_int_distribution<std::size_t>(0, all.size())(rng);
        const auto got = select_top_k(q, k);
        if (got.size() != k) return {false, "wrong k"};
        for (std::size_t i = 0; i < k; ++i) {
            if (got[i].row * w + got[i].col != all[i].second) return {false, "order mismatch on map " + std::to_string(maps)};
        }
    }
    return {true, std::to_string(maps) + " maps, " + std::to_string(tie_maps) + " with ties, all strategies match"};
}

Outcome noop_and_baseline() {
    const auto& f = fixtures().front();
    const OracleBackend oracle(oracle_config(f));
    const MeanCombiner combiner;

    // k = 0 at the finest scale.
    PipelineConfig cfg = three_scale();
    const auto y2 = run_magnet(f.image, cfg, oracle, combiner).stages[1];
    cfg.k = 0;
    if (run_stage(y2, f.image, 3, cfg, oracle, combiner) != y2) return {false, "k = 0 changed the map"};

    // One-level plan: the output is the backend's whole-image prediction.
    PipelineConfig single;
    single.plan = build_scale_plan(kFixtureSize, kFixtureSize, kFixtureSize, kFixtureSize, {{kFixtureSize, kFixtureSize}});
    const auto one = run_magnet(f.image, single, oracle, combiner);
    const PatchContext whole{1, {0, 0, kFixtureSize, kFixtureSize}, {kFixtureSize, kFixtureSize}};
    if (one.stages.size() != 1 || one.stages[0] != oracle.segment(f.image, whole)) return {false, "m = 1 differs"};

    // Stage 1 of a deeper plan: downsample, segment, upsample.
    const auto baseline = resample_bilinear(oracle.segment(resample_bilinear(f.image, 128, 128), whole), 512, 512);
    if (run_magnet(f.image, three_scale(), oracle, combiner).stages[0] != baseline) {
        return {false, "stage 1 differs from the downsampling baseline"};
    }
    return {true, "k = 0 bit-identical; m = 1 and stage 1 equal the downsampling baseline"};
}

Outcome monotone_trend() {
    const auto& s = three_scale_scores();
    const double d1 = s.miou[1] - s.miou[0];
    const double d2 = s.miou[2] - s.miou[1];
    const std::string detail = "mIoU " + fmt(s.miou[0]) + " -> " + fmt(s.miou[1]) + " -> " + fmt(s.miou[2]) +
                               " (steps " + fmt(d1) + ", " + fmt(d2) + ")";
    return {d1 >= 0.005 && d2 >= 0.005, detail};
}

Outcome intermediate_scale() {
    const auto two = score_stages(fixture_pipeline({{512, 512}, {128, 128}}));
    const double three = three_scale_scores().miou.back();
    return {three >= two.miou.back(), "3-scale " + fmt(three) + " vs 2-scale " + fmt(two.miou.back())};
}

Outcome fast_mode() {
    PipelineConfig cfg = three_scale();
    cfg.fast = FastConfig{{1, 2, 3}, 3};
    const auto fast = score_stages(cfg);

    PipelineConfig city;
    city.plan = build_scale_plan(1024, 2048, 128, 256, {{1024, 2048}, {512, 1024}, {256, 512}, {128, 256}});
    city.fast = FastConfig{{1, 2, 4}, 3};
    const ConstantBackend constant(2, 0);
    const int city_patches = total_patches(run_magnet(Image(1024, 2048, 0.5f), city, constant, MeanCombiner{}));

    const double baseline = three_scale_scores().miou.front();
    const bool ok = fast.patches == 7 && city_patches == 7 && fast.miou.back() >= baseline;
    return {ok, std::to_string(fast.patches) + " patches (4-level plan: " + std::to_string(city_patches) +
                    "); fast mIoU " + fmt(fast.miou.back()) + " vs baseline " + fmt(baseline)};
}

Outcome metric_correctness() {
    std::mt19937 rng(9);
    const auto gt = testing::random_labels(rng, 32, 32, 4);
    const double perfect = miou(confusion(gt, gt, 4));
    if (std::fabs(perfect - 1.0) > 1e-9) return {false, "perfect prediction gives " + std::to_string(perfect)};
    const double hand = miou(ConfusionMatrix::from_rows({{1, 1}, {0, 2}}));
    if (std::fabs(hand - 7.0 / 12.0) > 1e-12) return {false, "hand case gives " + std::to_string(hand)};
    for (int split = 0; split < 50; ++split) {
        const auto pred = testing::random_labels(rng, 24, 16, 4);
        auto truth = testing::random_labels(rng, 24, 16, 4);
        for (auto& v : truth.values()) {
            if (rng() % 7 == 0) v = kDefaultIgnoreIndex;
        }
        const int cut = std::uniform_int_distribution<int>(0, 24)(rng);
        ConfusionMatrix merged(4);
        for (auto [r0, r1] : {std::pair{0, cut}, std::pair{cut, 24}}) {
            const Window win{0, r0, 16, r1 - r0};
            if (win.h == 0) continue;
            merged += confusion(extract_patch(pred, win), extract_patch(truth, win), 4);
        }
        if (!(merged == confusion(pred, truth, 4))) return {false, "shard merge differs on split " + std::to_string(split)};
    }
    return {true, "perfect = 1, [[1,1],[0,2]] = 7/12, 50 shard splits additive"};
}

int shell(const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome cli_determinism() {
    const fs::path dir = fs::temp_directory_path() / ("magnet_accept_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string cli = MAGNET_CLI;
    if (shell(cli + " fixtures --out " + (dir / "fx").string() + " --seed 1234 --count 1 --size 512 > /dev/null") != 0) {
        return {false, "fixture generation failed"};
    }
    std::ofstream(dir / "cfg.json") << R"({
  "image": [512, 512], "processing": [128, 128], "scales": [[512, 512], [256, 256], [128, 128]],
  "classes": 5, "k": 8192,
  "backend": {"kind": "oracle", "blur_sigma_at_coarsest": 2.0, "label_noise_rate": 0.02},
  "seed": 1234
})";
    const std::string common = cli + " run --image " + (dir / "fx/images/0000.png").string() + " --gt " +
                               (dir / "fx/labels/0000.png").string() + " --config " + (dir / "cfg.json").string();
    if (shell(common + " --workers 1 --out " + (dir / "w1").string() + " > /dev/null") != 0 ||
        shell(common + " --workers 4 --out " + (dir / "w4").string() + " > /dev/null") != 0) {
        return {false, "run failed"};
    }
    const bool same = read_file_bytes(dir / "w1/0000.mgt") == read_file_bytes(dir / "w4/0000.mgt");
    const auto size = fs::file_size(dir / "w1/0000.mgt");
    fs::remove_all(dir);
    return {same, same ? "workers 1 and 4 give byte-identical .mgt (" + std::to_string(size) + " bytes)"
                       : ".mgt outputs differ"};
}

}  // namespace

int main() {
    criterion("tiling exactness", 5.0, tiling_exactness);
    criterion("selection oracle equivalence", 10.0, selection_equivalence);
    criterion("no-op and baseline equivalences", 30.0, noop_and_baseline);
    criterion("monotone refinement trend", 300.0, monotone_trend);
    criterion("intermediate-scale benefit", 0.0, intermediate_scale);
    criterion("fast-mode subset and budget", 0.0, fast_mode);
    criterion("metric correctness", 0.0, metric_correctness);
    criterion("determinism across worker counts", 0.0, cli_determinism);
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
