#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "magnet/errors.hpp"

namespace magnet {

// Kind tags. A tag fixes the channel count when the kind has one.
struct ProbTag { static constexpr int kChannels = 0; };
struct ScalarTag { static constexpr int kChannels = 1; };
struct ImageTag { static constexpr int kChannels = 3; };
struct LabelTag { static constexpr int kChannels = 1; };

/// Dense row-major (row, col, channel) grid. The tag keeps probability maps,
/// scalar fields, images and label maps from being mixed up at compile time
/// while sharing one implementation for cropping, pasting and resampling.
template <typename Tag, typename T = float>
class Grid {
public:
    using tag_type = Tag;
    using value_type = T;
    static constexpr int kFixedChannels = Tag::kChannels;

    Grid() = default;

    Grid(int height, int width, int channels, T fill)
        : height_(height), width_(width), channels_(channels) {
        check_shape();
        data_.assign(size(), fill);
    }

    Grid(int height, int width, T fill = T{}) requires(kFixedChannels > 0)
        : Grid(height, width, kFixedChannels, fill) {}

    Grid(int height, int width, int channels, std::vector<T> data)
        : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
        check_shape();
        if (data_.size() != size()) {
            throw DimMismatch("grid data has " + std::to_string(data_.size()) + " values, expected " +
                              std::to_string(size()));
        }
    }

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    int channels() const noexcept { return channels_; }
    std::size_t pixels() const noexcept { return static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_); }
    std::size_t size() const noexcept { return pixels() * static_cast<std::size_t>(channels_); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t offset(int row, int col, int ch = 0) const noexcept {
        return (static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(col)) *
                   static_cast<std::size_t>(channels_) +
               static_cast<std::size_t>(ch);
    }

    T& at(int row, int col, int ch = 0) noexcept { return data_[offset(row, col, ch)]; }
    const T& at(int row, int col, int ch = 0) const noexcept { return data_[offset(row, col, ch)]; }

    std::span<T> pixel(int row, int col) noexcept {
        return {data_.data() + offset(row, col), static_cast<std::size_t>(channels_)};
    }
    std::span<const T> pixel(int row, int col) const noexcept {
        return {data_.data() + offset(row, col), static_cast<std::size_t>(channels_)};
    }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    const std::vector<T>& raw() const noexcept { return data_; }

    bool same_shape(const Grid& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
    }

    bool operator==(const Grid&) const = default;

private:
    void check_shape() const {
        if (height_ < 0 || width_ < 0 || channels_ < 1) {
            throw InvalidArgument("invalid grid shape " + std::to_string(height_) + "x" + std::to_string(width_) + "x" +
                                  std::to_string(channels_));
        }
        if (kFixedChannels > 0 && channels_ != kFixedChannels) {
            throw DimMismatch("this map kind requires " + std::to_string(kFixedChannels) + " channels");
        }
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 1;
    std::vector<T> data_;
};

/// Per-pixel class probabilities, H x W x C.
using ProbMap = Grid<ProbTag, float>;
/// Per-pixel real field (uncertainty, score).
using ScalarMap = Grid<ScalarTag, float>;
/// RGB image with values in [0, 1].
using Image = Grid<ImageTag, float>;
/// Per-pixel class index or the ignore index.
using LabelMap = Grid<LabelTag, std::int32_t>;

inline constexpr std::int32_t kDefaultIgnoreIndex = 255;

template <typename G>
inline constexpr bool is_float_grid_v = std::is_same_v<typename G::value_type, float>;

inline std::string shape_string(int h, int w, int c) {
    return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
}

template <typename G>
std::string shape_string(const G& g) {
    return shape_string(g.height(), g.width(), g.channels());
}

/// Rescales every pixel's class vector to sum to one.
inline ProbMap normalize_prob(ProbMap m) {
    const int c = m.channels();
    for (int r = 0; r < m.height(); ++r) {
        for (int col = 0; col < m.width(); ++col) {
            auto px = m.pixel(r, col);
            float sum = 0.0f;
            for (float v : px) sum += v;
            if (!(sum > 1e-12f)) throw ZeroSumPixel(r, col);
            for (int k = 0; k < c; ++k) px[static_cast<std::size_t>(k)] /= sum;
        }
    }
    return m;
}

/// Checks the ProbMap contract: finite, non-negative, each pixel sums to one within `tol`.
/// Returns an empty string when valid, otherwise a description of the first violation.
inline std::string prob_map_violation(const ProbMap& m, float tol = 1e-5f) {
    for (int r = 0; r < m.height(); ++r) {
        for (int col = 0; col < m.width(); ++col) {
            float sum = 0.0f;
            for (float v : m.pixel(r, col)) {
                if (!std::isfinite(v) || v < 0.0f) {
                    return "pixel (" + std::to_string(r) + ", " + std::to_string(col) + ") has an invalid value";
                }
                sum += v;
            }
            if (std::fabs(sum - 1.0f) > tol) {
                return "pixel (" + std::to_string(r) + ", " + std::to_string(col) + ") sums to " + std::to_string(sum);
            }
        }
    }
    return {};
}

inline bool is_valid_prob_map(const ProbMap& m, float tol = 1e-5f) { return prob_map_violation(m, tol).empty(); }

namespace detail {

struct Tap {
    int lo;
    int hi;
    float frac;
};

// Source taps for one axis, half-pixel centers (align_corners = false).
inline std::vector<Tap> bilinear_taps(int in, int out) {
    std::vector<Tap> taps(static_cast<std::size_t>(out));
    const float scale = static_cast<float>(in) / static_cast<float>(out);
    for (int i = 0; i < out; ++i) {
        float src = (static_cast<float>(i) + 0.5f) * scale - 0.5f;
        if (src < 0.0f) src = 0.0f;
        int lo = static_cast<int>(src);
        if (lo > in - 1) lo = in - 1;
        const int hi = std::min(lo + 1, in - 1);
        float frac = src - static_cast<float>(lo);
        if (hi == lo) frac = 0.0f;
        taps[static_cast<std::size_t>(i)] = {lo, hi, frac};
    }
    return taps;
}

}  // namespace detail

/// Bilinear resampling with half-pixel centers and edge clamping. Resizing to the
/// current shape returns an exact copy. Probability maps are renormalized.
template <typename G>
    requires is_float_grid_v<G>
G resample_bilinear(const G& m, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) {
        throw InvalidArgument("resample target must be at least 1x1, got " + std::to_string(out_h) + "x" +
                              std::to_string(out_w));
    }
    if (m.height() < 1 || m.width() < 1) throw InvalidArgument("cannot resample an empty map");
    if (out_h == m.height() && out_w == m.width()) return m;

    const auto ty = detail::bilinear_taps(m.height(), out_h);
    const auto tx = detail::bilinear_taps(m.width(), out_w);
    const int c = m.channels();
    G out(out_h, out_w, c, 0.0f);
    for (int r = 0; r < out_h; ++r) {
        const auto& y = ty[static_cast<std::size_t>(r)];
        for (int col = 0; col < out_w; ++col) {
            const auto& x = tx[static_cast<std::size_t>(col)];
            auto dst = out.pixel(r, col);
            const auto p00 = m.pixel(y.lo, x.lo);
            const auto p01 = m.pixel(y.lo, x.hi);
            const auto p10 = m.pixel(y.hi, x.lo);
            const auto p11 = m.pixel(y.hi, x.hi);
            for (int k = 0; k < c; ++k) {
                const auto i = static_cast<std::size_t>(k);
                const float top = std::lerp(p00[i], p01[i], x.frac);
                const float bottom = std::lerp(p10[i], p11[i], x.frac);
                dst[i] = std::lerp(top, bottom, y.frac);
            }
        }
    }
    if constexpr (std::is_same_v<typename G::tag_type, ProbTag>) {
        return normalize_prob(std::move(out));
    } else {
        return out;
    }
}

/// Hard prediction; ties go to the lowest class index.
inline LabelMap argmax_labels(const ProbMap& m) {
    LabelMap out(m.height(), m.width(), 0);
    for (int r = 0; r < m.height(); ++r) {
        for (int col = 0; col < m.width(); ++col) {
            const auto px = m.pixel(r, col);
            std::int32_t best = 0;
            for (std::size_t k = 1; k < px.size(); ++k) {
                if (px[k] > px[static_cast<std::size_t>(best)]) best = static_cast<std::int32_t>(k);
            }
            out.at(r, col) = best;
        }
    }
    return out;
}

/// One-hot encoding of a label map. Ignore pixels become uniform.
inline ProbMap one_hot(const LabelMap& labels, int classes) {
    ProbMap out(labels.height(), labels.width(), classes, 0.0f);
    const float uniform = 1.0f / static_cast<float>(classes);
    for (int r = 0; r < labels.height(); ++r) {
        for (int col = 0; col < labels.width(); ++col) {
            const auto v = labels.at(r, col);
            auto px = out.pixel(r, col);
            if (v >= 0 && v < classes) {
                px[static_cast<std::size_t>(v)] = 1.0f;
            } else {
                std::fill(px.begin(), px.end(), uniform);
            }
        }
    }
    return out;
}

}  // namespace magnet
