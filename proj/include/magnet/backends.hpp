#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "magnet/errors.hpp"
#include "magnet/tensor.hpp"
#include "magnet/tiling.hpp"

namespace magnet {

/// Where a patch came from. Backends that only look at pixels ignore it; the
/// oracle backend uses it to find the matching ground truth.
struct PatchContext {
    int level = 1;
    Window window;  // in canvas coordinates
    Extent canvas;
};

/// Per-patch segmentation module. `segment` must return a normalized ProbMap with
/// the patch's spatial size and `classes()` channels.
class SegmentationBackend {
public:
    virtual ~SegmentationBackend() = default;
    virtual int classes() const = 0;
    virtual ProbMap segment(const Image& patch, const PatchContext& ctx) const = 0;
};

/// Merges the cumulative map Y with the scale-specific map O into R.
class Combiner {
public:
    virtual ~Combiner() = default;
    virtual ProbMap combine(const ProbMap& y, const ProbMap& o) const = 0;
};

/// Top-1 minus top-2 probability of one pixel vector.
inline float pixel_confidence(std::span<const float> px) {
    float top1 = 0.0f;
    float top2 = 0.0f;
    for (float v : px) {
        if (v > top1) {
            top2 = top1;
            top1 = v;
        } else if (v > top2) {
            top2 = v;
        }
    }
    return top1 - top2;
}

// ---------------------------------------------------------------------------
// Segmentation backends

/// Predicts one class everywhere.
class ConstantBackend final : public SegmentationBackend {
public:
    ConstantBackend(int classes, int label) : classes_(classes), label_(label) {
        if (classes < 2) throw InvalidArgument("need at least two classes");
        if (label < 0 || label >= classes) throw InvalidArgument("constant label out of range");
    }

    int classes() const override { return classes_; }

    ProbMap segment(const Image& patch, const PatchContext&) const override {
        ProbMap out(patch.height(), patch.width(), classes_, 0.0f);
        for (int r = 0; r < out.height(); ++r) {
            for (int c = 0; c < out.width(); ++c) out.at(r, c, label_) = 1.0f;
        }
        return out;
    }

private:
    int classes_;
    int label_;
};

struct OracleBackendConfig {
    LabelMap gt;  // full resolution, image coordinates
    int classes = 2;
    float blur_sigma_at_coarsest = 0.0f;
    float label_noise_rate = 0.0f;
    float softness = 1.0f;
    std::uint64_t seed = 0;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Small portable generator; std distributions are not reproducible across standard libraries.
class PatchRng {
public:
    explicit PatchRng(std::uint64_t seed) : state_(seed) {}
    std::uint64_t next() { return splitmix64(state_); }
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

private:
    std::uint64_t state_;
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::initializer_list<std::int64_t> parts) {
    std::uint64_t s = seed;
    std::uint64_t h = splitmix64(s);
    for (auto p : parts) {
        std::uint64_t t = h ^ static_cast<std::uint64_t>(p);
        h = splitmix64(t);
    }
    return h;
}

/// Separable Gaussian blur over every channel, edge replication, radius ceil(3 sigma).
inline ProbMap gaussian_blur(const ProbMap& m, float sigma) {
    if (!(sigma > 0.0f)) return m;
    const int radius = static_cast<int>(std::ceil(3.0f * sigma));
    std::vector<float> kernel(static_cast<std::size_t>(2 * radius + 1));
    float total = 0.0f;
    for (int i = -radius; i <= radius; ++i) {
        const float v = std::exp(-0.5f * static_cast<float>(i * i) / (sigma * sigma));
        kernel[static_cast<std::size_t>(i + radius)] = v;
        total += v;
    }
    for (float& v : kernel) v /= total;

    const int h = m.height();
    const int w = m.width();
    const int ch = m.channels();
    ProbMap tmp(h, w, ch, 0.0f);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            auto dst = tmp.pixel(r, c);
            for (int i = -radius; i <= radius; ++i) {
                const float wt = kernel[static_cast<std::size_t>(i + radius)];
                const auto src = m.pixel(r, std::clamp(c + i, 0, w - 1));
                for (int k = 0; k < ch; ++k) dst[static_cast<std::size_t>(k)] += wt * src[static_cast<std::size_t>(k)];
            }
        }
    }
    ProbMap out(h, w, ch, 0.0f);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            auto dst = out.pixel(r, c);
            for (int i = -radius; i <= radius; ++i) {
                const float wt = kernel[static_cast<std::size_t>(i + radius)];
                const auto src = tmp.pixel(std::clamp(r + i, 0, h - 1), c);
                for (int k = 0; k < ch; ++k) dst[static_cast<std::size_t>(k)] += wt * src[static_cast<std::size_t>(k)];
            }
        }
    }
    return out;
}

}  // namespace detail

/// Ground-truth-derived stand-in for a trained network. Coarser patches lose
/// detail: the one-hot truth is resampled to the processing size, blurred with
/// a sigma that grows with the downsampling factor, softened toward uniform and
/// corrupted by seeded argmax flips.
class OracleBackend final : public SegmentationBackend {
public:
    explicit OracleBackend(OracleBackendConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.classes < 2) throw InvalidArgument("need at least two classes");
        if (cfg_.gt.empty()) throw InvalidArgument("oracle backend needs a ground-truth map");
        if (!(cfg_.blur_sigma_at_coarsest >= 0.0f)) throw InvalidArgument("blur_sigma_at_coarsest must be >= 0");
        if (!(cfg_.label_noise_rate >= 0.0f && cfg_.label_noise_rate < 1.0f)) {
            throw InvalidArgument("label_noise_rate must lie in [0, 1)");
        }
        if (!(cfg_.softness > 0.0f && cfg_.softness <= 1.0f)) throw InvalidArgument("softness must lie in (0, 1]");
    }

    int classes() const override { return cfg_.classes; }
    const OracleBackendConfig& config() const { return cfg_; }

    /// Blur applied to a patch of height `window_h` on a canvas of height `canvas_h`.
    float sigma_for(int window_h, int canvas_h, int proc_h) const {
        const float coarsest = static_cast<float>(canvas_h) / static_cast<float>(proc_h);
        if (coarsest <= 1.0f) return 0.0f;
        const float factor = static_cast<float>(window_h) / static_cast<float>(proc_h);
        return cfg_.blur_sigma_at_coarsest * std::max(0.0f, factor - 1.0f) / (coarsest - 1.0f);
    }

    ProbMap segment(const Image& patch, const PatchContext& ctx) const override {
        const int proc_h = patch.height();
        const int proc_w = patch.width();
        const auto& win = ctx.window;
        const int c = cfg_.classes;

        // Ground truth under the window; coordinates past the image edge replicate it.
        LabelMap truth(win.h, win.w, 0);
        for (int r = 0; r < win.h; ++r) {
            const int gr = std::clamp(win.y + r, 0, cfg_.gt.height() - 1);
            for (int col = 0; col < win.w; ++col) {
                truth.at(r, col) = cfg_.gt.at(gr, std::clamp(win.x + col, 0, cfg_.gt.width() - 1));
            }
        }
        ProbMap p = resample_bilinear(one_hot(truth, c), proc_h, proc_w);
        const int canvas_h = ctx.canvas.height > 0 ? ctx.canvas.height : cfg_.gt.height();
        p = detail::gaussian_blur(p, sigma_for(win.h, canvas_h, proc_h));

        if (cfg_.softness < 1.0f) {
            const float keep = cfg_.softness;
            const float spread = (1.0f - cfg_.softness) / static_cast<float>(c);
            for (float& v : p.values()) v = keep * v + spread;
        }

        if (cfg_.label_noise_rate > 0.0f) {
            detail::PatchRng rng(detail::mix_seed(cfg_.seed, {win.x, win.y, win.w, win.h, proc_h, proc_w}));
            for (int r = 0; r < proc_h; ++r) {
                for (int col = 0; col < proc_w; ++col) {
                    if (rng.uniform() >= cfg_.label_noise_rate) continue;
                    auto px = p.pixel(r, col);
                    std::size_t top = 0;
                    for (std::size_t k = 1; k < px.size(); ++k) {
                        if (px[k] > px[top]) top = k;
                    }
                    auto other = static_cast<std::size_t>(rng.next() % static_cast<std::uint64_t>(c - 1));
                    if (other >= top) ++other;
                    std::swap(px[top], px[other]);
                }
            }
        }
        return normalize_prob(std::move(p));
    }

private:
    OracleBackendConfig cfg_;
};

// ---------------------------------------------------------------------------
// Combiners

enum class CombinerKind { passthrough_o, mean, confidence_gate };

inline std::string_view to_string(CombinerKind k) {
    switch (k) {
        case CombinerKind::passthrough_o: return "passthrough_o";
        case CombinerKind::mean: return "mean";
        case CombinerKind::confidence_gate: return "confidence_gate";
    }
    return "?";
}

inline std::optional<CombinerKind> parse_combiner_kind(std::string_view s) {
    for (auto k : {CombinerKind::passthrough_o, CombinerKind::mean, CombinerKind::confidence_gate}) {
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

inline void check_combine_inputs(const ProbMap& y, const ProbMap& o) {
    if (!y.same_shape(o)) throw DimMismatch("combine inputs differ: " + shape_string(y) + " vs " + shape_string(o));
}

/// R = O.
class PassthroughCombiner final : public Combiner {
public:
    ProbMap combine(const ProbMap& y, const ProbMap& o) const override {
        check_combine_inputs(y, o);
        return o;
    }
};

/// R = normalize((Y + O) / 2).
class MeanCombiner final : public Combiner {
public:
    ProbMap combine(const ProbMap& y, const ProbMap& o) const override {
        check_combine_inputs(y, o);
        ProbMap out = y;
        auto dst = out.values();
        const auto src = o.values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = 0.5f * (dst[i] + src[i]);
        return normalize_prob(std::move(out));
    }
};

/// Per pixel, takes O's vector where O is strictly more confident than Y.
class ConfidenceGateCombiner final : public Combiner {
public:
    ProbMap combine(const ProbMap& y, const ProbMap& o) const override {
        check_combine_inputs(y, o);
        ProbMap out = y;
        for (int r = 0; r < y.height(); ++r) {
            for (int c = 0; c < y.width(); ++c) {
                const auto po = o.pixel(r, c);
                if (pixel_confidence(po) > pixel_confidence(y.pixel(r, c))) {
                    std::copy(po.begin(), po.end(), out.pixel(r, c).begin());
                }
            }
        }
        return out;
    }
};

inline std::unique_ptr<Combiner> make_combiner(CombinerKind kind) {
    switch (kind) {
        case CombinerKind::passthrough_o: return std::make_unique<PassthroughCombiner>();
        case CombinerKind::mean: return std::make_unique<MeanCombiner>();
        case CombinerKind::confidence_gate: return std::make_unique<ConfidenceGateCombiner>();
    }
    throw InvalidArgument("unknown combiner");
}

}  // namespace magnet
