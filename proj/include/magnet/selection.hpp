#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "magnet/errors.hpp"
#include "magnet/tensor.hpp"

namespace magnet {

enum class ScoreKind { uncertainty_only, certainty_only, product, linear };

inline constexpr std::array<ScoreKind, 4> kAllScoreKinds = {ScoreKind::uncertainty_only, ScoreKind::certainty_only,
                                                             ScoreKind::product, ScoreKind::linear};

inline std::string_view to_string(ScoreKind k) {
    switch (k) {
        case ScoreKind::uncertainty_only: return "uncertainty_only";
        case ScoreKind::certainty_only: return "certainty_only";
        case ScoreKind::product: return "product";
        case ScoreKind::linear: return "linear";
    }
    return "?";
}

inline std::optional<ScoreKind> parse_score_kind(std::string_view s) {
    for (auto k : kAllScoreKinds) {
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

/// How the refinement score is formed from the two uncertainty maps.
struct ScoreStrategy {
    ScoreKind kind = ScoreKind::product;
    std::optional<float> alpha;  // linear only
    int median_kernel = 3;       // 1 disables smoothing

    /// Returns the name of the broken invariant, or empty when valid.
    std::string violation() const {
        if ((kind == ScoreKind::linear) != alpha.has_value()) return "alpha must be set exactly for the linear strategy";
        if (alpha && !(*alpha >= 0.0f && *alpha <= 1.0f)) return "alpha must lie in [0, 1]";
        if (median_kernel < 1 || median_kernel % 2 == 0) return "median kernel must be odd and >= 1";
        return {};
    }

    bool operator==(const ScoreStrategy&) const = default;
};

struct PixelCoord {
    int row = 0;
    int col = 0;

    bool operator==(const PixelCoord&) const = default;
};

/// Per-pixel uncertainty: one minus the gap between the two largest class probabilities.
inline ScalarMap uncertainty_map(const ProbMap& m) {
    ScalarMap out(m.height(), m.width(), 0.0f);
    for (int r = 0; r < m.height(); ++r) {
        for (int c = 0; c < m.width(); ++c) {
            float top1 = 0.0f;
            float top2 = 0.0f;
            for (float v : m.pixel(r, c)) {
                if (v > top1) {
                    top2 = top1;
                    top1 = v;
                } else if (v > top2) {
                    top2 = v;
                }
            }
            out.at(r, c) = std::clamp(1.0f - (top1 - top2), 0.0f, 1.0f);
        }
    }
    return out;
}

/// kernel x kernel median with edge replication; kernel 1 is the identity.
inline ScalarMap median_blur(const ScalarMap& m, int kernel) {
    if (kernel < 1 || kernel % 2 == 0) throw EvenKernel(kernel);
    if (kernel == 1) return m;
    const int radius = kernel / 2;
    const int h = m.height();
    const int w = m.width();
    ScalarMap out(h, w, 0.0f);
    std::vector<float> window(static_cast<std::size_t>(kernel) * static_cast<std::size_t>(kernel));
    const auto mid = window.begin() + static_cast<std::ptrdiff_t>(window.size() / 2);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            std::size_t n = 0;
            for (int dr = -radius; dr <= radius; ++dr) {
                const int rr = std::clamp(r + dr, 0, h - 1);
                for (int dc = -radius; dc <= radius; ++dc) {
                    window[n++] = m.at(rr, std::clamp(c + dc, 0, w - 1));
                }
            }
            std::nth_element(window.begin(), mid, window.end());
            out.at(r, c) = *mid;
        }
    }
    return out;
}

/// Refinement priority. `yu` is the uncertainty of the cumulative map, `ru` that of the combined map.
/// The product form ranks pixels where the cumulative map is unsure and the combined map is sure.
inline ScalarMap score_map(const ScalarMap& yu, const ScalarMap& ru, const ScoreStrategy& strategy) {
    if (!yu.same_shape(ru)) throw DimMismatch("score inputs differ: " + shape_string(yu) + " vs " + shape_string(ru));
    if (auto v = strategy.violation(); !v.empty()) throw InvalidArgument(v);
    ScalarMap raw(yu.height(), yu.width(), 0.0f);
    const auto a = yu.values();
    const auto b = ru.values();
    auto q = raw.values();
    const float alpha = strategy.alpha.value_or(0.0f);
    for (std::size_t i = 0; i < q.size(); ++i) {
        float v = 0.0f;
        switch (strategy.kind) {
            case ScoreKind::uncertainty_only: v = a[i]; break;
            case ScoreKind::certainty_only: v = 1.0f - b[i]; break;
            case ScoreKind::product: v = a[i] * (1.0f - b[i]); break;
            case ScoreKind::linear: v = alpha * a[i] + (1.0f - alpha) * (1.0f - b[i]); break;
        }
        q[i] = std::clamp(v, 0.0f, 1.0f);
    }
    return median_blur(raw, strategy.median_kernel);
}

/// The k highest-scoring pixels in descending score order; equal scores keep row-major order.
inline std::vector<PixelCoord> select_top_k(const ScalarMap& q, std::size_t k) {
    const std::size_t n = q.pixels();
    k = std::min(k, n);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto values = q.values();
    const auto better = [&](std::size_t lhs, std::size_t rhs) {
        if (values[lhs] != values[rhs]) return values[lhs] > values[rhs];
        return lhs < rhs;
    };
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
    std::vector<PixelCoord> out;
    out.reserve(k);
    const auto w = static_cast<std::size_t>(q.width());
    for (std::size_t i = 0; i < k; ++i) out.push_back({static_cast<int>(idx[i] / w), static_cast<int>(idx[i] % w)});
    return out;
}

/// Copies the full class vector of `r` into `y` at each listed pixel.
inline ProbMap selective_replace(ProbMap y, const ProbMap& r, const std::vector<PixelCoord>& points) {
    if (!y.same_shape(r)) throw DimMismatch("replace inputs differ: " + shape_string(y) + " vs " + shape_string(r));
    for (const auto& p : points) {
        if (p.row < 0 || p.col < 0 || p.row >= y.height() || p.col >= y.width()) {
            throw OutOfBounds("point (" + std::to_string(p.row) + ", " + std::to_string(p.col) + ") outside " +
                              shape_string(y));
        }
        const auto src = r.pixel(p.row, p.col);
        std::copy(src.begin(), src.end(), y.pixel(p.row, p.col).begin());
    }
    return y;
}

}  // namespace magnet
