#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "magnet/backends.hpp"
#include "magnet/errors.hpp"
#include "magnet/eval.hpp"
#include "magnet/selection.hpp"
#include "magnet/tensor.hpp"
#include "magnet/tiling.hpp"

namespace magnet {

enum class ReplaceSource { R, O };

inline std::string_view to_string(ReplaceSource r) { return r == ReplaceSource::R ? "R" : "O"; }

/// Budgeted variant: only some levels, and only the most uncertain windows on each.
struct FastConfig {
    std::vector<int> scale_subset;  // 1-based levels, must contain 1
    int patches_per_scale = 3;

    bool operator==(const FastConfig&) const = default;
};

struct PipelineConfig {
    ScalePlan plan;
    std::size_t k = std::size_t{1} << 16;  // points per processed patch
    ScoreStrategy strategy;
    ReplaceSource replace_source = ReplaceSource::R;
    std::optional<FastConfig> fast;
    int workers = 1;

    bool operator==(const PipelineConfig&) const = default;
};

struct StageReport {
    int level = 0;
    int patches = 0;
    std::size_t points = 0;
    double seconds = 0.0;
    std::optional<double> miou;
};

struct MagnetResult {
    std::vector<ProbMap> stages;  // Y^1 .. Y^m at image resolution
    std::vector<StageReport> reports;
};

/// Optional ground truth for per-stage mIoU in the reports.
struct StageEvaluation {
    const LabelMap* gt = nullptr;
    int classes = 0;
    std::int32_t ignore = kDefaultIgnoreIndex;
};

/// Throws ConfigError unless the settings are usable with `plan`.
inline void validate(const PipelineConfig& cfg) {
    if (auto v = cfg.strategy.violation(); !v.empty()) throw ConfigError(v);
    if (cfg.workers < 1) throw ConfigError("workers must be >= 1");
    if (cfg.fast) {
        const auto& subset = cfg.fast->scale_subset;
        if (std::find(subset.begin(), subset.end(), 1) == subset.end()) {
            throw ConfigError("fast scale subset must contain level 1");
        }
        for (std::size_t i = 0; i < subset.size(); ++i) {
            if (subset[i] < 1 || subset[i] > cfg.plan.level_count()) {
                throw ConfigError("fast scale subset level " + std::to_string(subset[i]) + " not in the plan");
            }
            if (i > 0 && subset[i] <= subset[i - 1]) throw ConfigError("fast scale subset must be strictly increasing");
        }
        if (cfg.fast->patches_per_scale < 0) throw ConfigError("fast patches_per_scale must be >= 0");
    }
}

/// The n windows with the largest mean of `yu` over their area, returned in
/// enumeration order. Equal means keep enumeration order.
inline std::vector<Window> fast_patch_subset(const ScalarMap& yu, const std::vector<Window>& windows, std::size_t n) {
    if (n >= windows.size()) return windows;
    std::vector<double> means(windows.size(), 0.0);
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const auto& w = windows[i];
        if (!window_in_bounds(w, yu.height(), yu.width())) throw OutOfBounds("window " + to_string(w) + " outside map");
        double sum = 0.0;
        for (int r = w.y; r < w.y + w.h; ++r) {
            for (int c = w.x; c < w.x + w.w; ++c) sum += yu.at(r, c);
        }
        means[i] = sum / (static_cast<double>(w.w) * static_cast<double>(w.h));
    }
    std::vector<std::size_t> order(windows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return means[a] > means[b]; });
    order.resize(n);
    std::sort(order.begin(), order.end());
    std::vector<Window> out;
    out.reserve(n);
    for (auto i : order) out.push_back(windows[i]);
    return out;
}

namespace detail {

/// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the first failure.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    const auto threads = static_cast<std::size_t>(std::max(1, workers));
    if (threads == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    next.store(n);
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

inline double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

/// Per-window refinement (one window of one stage). Returns the refined patch at
/// window resolution and the number of replaced points.
inline std::pair<ProbMap, std::size_t> refine_window(const ProbMap& y_prev, const Image& image, const Window& win,
                                                     int level, const PipelineConfig& cfg,
                                                     const SegmentationBackend& backend, const Combiner& combiner) {
    const int ph = cfg.plan.processing.height;
    const int pw = cfg.plan.processing.width;
    const Image x_bar = resample_bilinear(extract_patch(image, win), ph, pw);
    const ProbMap y_bar = resample_bilinear(extract_patch(y_prev, win), ph, pw);
    const ProbMap o_bar = backend.segment(x_bar, PatchContext{level, win, cfg.plan.canvas()});
    if (o_bar.height() != ph || o_bar.width() != pw || o_bar.channels() != y_prev.channels()) {
        throw BackendFailure("segmentation output " + shape_string(o_bar) + ", expected " +
                             shape_string(ph, pw, y_prev.channels()));
    }
    const ProbMap r_bar = combiner.combine(y_bar, o_bar);
    const ScalarMap q = score_map(uncertainty_map(y_bar), uncertainty_map(r_bar), cfg.strategy);
    const auto points = select_top_k(q, cfg.k);
    ProbMap refined = selective_replace(y_bar, cfg.replace_source == ReplaceSource::R ? r_bar : o_bar, points);
    return {resample_bilinear(refined, win.h, win.w), points.size()};
}

/// One refinement stage s >= 2 over the canvas-sized cumulative map. `windows`
/// defaults to the full window set of the level; unlisted windows keep y_prev.
inline ProbMap run_stage(const ProbMap& y_prev, const Image& image, int level, const PipelineConfig& cfg,
                         const SegmentationBackend& backend, const Combiner& combiner,
                         const std::vector<Window>* windows = nullptr, StageReport* report = nullptr) {
    if (level < 2 || level > cfg.plan.level_count()) {
        throw ConfigError("refinement stage must be in 2.." + std::to_string(cfg.plan.level_count()) + ", got " +
                          std::to_string(level));
    }
    const Extent canvas = cfg.plan.canvas();
    if (y_prev.height() != canvas.height || y_prev.width() != canvas.width || image.height() != canvas.height ||
        image.width() != canvas.width) {
        throw DimMismatch("stage inputs must match the canvas " + to_string(canvas));
    }
    const auto start = std::chrono::steady_clock::now();
    const std::vector<Window> all = windows ? *windows : windows_for_scale(cfg.plan, level);

    std::vector<ProbMap> patches(all.size());
    std::vector<std::size_t> points(all.size(), 0);
    detail::parallel_for(all.size(), cfg.workers, [&](std::size_t i) {
        auto [patch, n] = refine_window(y_prev, image, all[i], level, cfg, backend, combiner);
        patches[i] = std::move(patch);
        points[i] = n;
    });

    ProbMap out = y_prev;
    for (std::size_t i = 0; i < all.size(); ++i) paste_patch_into(out, all[i], patches[i]);
    if (report) {
        report->level = level;
        report->patches = static_cast<int>(all.size());
        report->points = std::accumulate(points.begin(), points.end(), std::size_t{0});
        report->seconds = detail::seconds_since(start);
    }
    return out;
}

/// Whole-image segmentation at the processing size, upsampled back to the canvas.
inline ProbMap initial_segmentation(const Image& canvas_image, const PipelineConfig& cfg,
                                    const SegmentationBackend& backend) {
    const Extent canvas = cfg.plan.canvas();
    const Extent proc = cfg.plan.processing;
    const Image small = resample_bilinear(canvas_image, proc.height, proc.width);
    const ProbMap o = backend.segment(small, PatchContext{1, Window{0, 0, canvas.width, canvas.height}, canvas});
    if (o.height() != proc.height || o.width() != proc.width || o.channels() != backend.classes()) {
        throw BackendFailure("segmentation output " + shape_string(o) + ", expected " +
                             shape_string(proc.height, proc.width, backend.classes()));
    }
    return resample_bilinear(o, canvas.height, canvas.width);
}

/// Coarse-to-fine refinement over every level of the plan. Returns Y^1..Y^m at
/// image resolution plus one report per level.
inline MagnetResult run_magnet(const Image& image, const PipelineConfig& cfg, const SegmentationBackend& backend,
                               const Combiner& combiner, const StageEvaluation& evaluation = {}) {
    validate(cfg);
    const auto& plan = cfg.plan;
    if (image.height() != plan.image.height || image.width() != plan.image.width) {
        throw DimMismatch("image " + shape_string(image) + " does not match the plan's image size " + to_string(plan.image));
    }
    const Extent canvas = plan.canvas();
    const Image canvas_image = pad_edge(image, canvas.height, canvas.width);

    MagnetResult result;
    auto record = [&](ProbMap y, StageReport report) {
        ProbMap cropped = crop_top_left(y, plan.image.height, plan.image.width);
        if (evaluation.gt) {
            report.miou = miou(confusion(argmax_labels(cropped), *evaluation.gt, evaluation.classes, evaluation.ignore));
        }
        result.stages.push_back(std::move(cropped));
        result.reports.push_back(report);
    };

    auto start = std::chrono::steady_clock::now();
    ProbMap y = initial_segmentation(canvas_image, cfg, backend);
    record(y, StageReport{1, 1, 0, detail::seconds_since(start), std::nullopt});

    for (int s = 2; s <= plan.level_count(); ++s) {
        StageReport report{s, 0, 0, 0.0, std::nullopt};
        if (cfg.fast) {
            const auto& subset = cfg.fast->scale_subset;
            if (std::find(subset.begin(), subset.end(), s) == subset.end()) {
                record(y, report);
                continue;
            }
            start = std::chrono::steady_clock::now();
            const auto chosen = fast_patch_subset(uncertainty_map(y), windows_for_scale(plan, s),
                                                  static_cast<std::size_t>(cfg.fast->patches_per_scale));
            y = run_stage(y, canvas_image, s, cfg, backend, combiner, &chosen, &report);
            report.seconds = detail::seconds_since(start);
        } else {
            y = run_stage(y, canvas_image, s, cfg, backend, combiner, nullptr, &report);
        }
        record(y, report);
    }
    return result;
}

inline int total_patches(const MagnetResult& r) {
    int n = 0;
    for (const auto& rep : r.reports) n += rep.patches;
    return n;
}

}  // namespace magnet
