#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "magnet/errors.hpp"
#include "magnet/tensor.hpp"

namespace magnet {

struct Extent {
    int height = 0;
    int width = 0;

    bool operator==(const Extent&) const = default;
};

inline std::string to_string(const Extent& e) { return std::to_string(e.height) + "x" + std::to_string(e.width); }

/// Axis-aligned rectangle, top-left corner plus size.
struct Window {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;

    bool operator==(const Window&) const = default;
};

inline std::string to_string(const Window& win) {
    return "(" + std::to_string(win.x) + ", " + std::to_string(win.y) + ", " + std::to_string(win.w) + ", " +
           std::to_string(win.h) + ")";
}

enum class GridMode {
    /// Level 1 equals the image and every level tiles it exactly.
    strict,
    /// Level 1 may exceed the image; the image is edge-replicated up to it and outputs are cropped.
    pad,
};

/// Ordered scale levels, coarsest (whole canvas) first, processing size last.
struct ScalePlan {
    std::vector<Extent> levels;
    Extent processing;
    Extent image;
    GridMode mode = GridMode::strict;

    int level_count() const noexcept { return static_cast<int>(levels.size()); }
    /// 1-based, matching the stage numbering.
    const Extent& level(int s) const { return levels.at(static_cast<std::size_t>(s - 1)); }
    const Extent& canvas() const { return levels.front(); }
    bool needs_padding() const { return canvas() != image; }

    bool operator==(const ScalePlan&) const = default;
};

/// Validates and builds a scale plan.
///
/// Levels must strictly decrease in both height and width, start at the image
/// size (or, in pad mode, at a canvas no smaller than the image) and end at the
/// processing size. Every level must tile the canvas exactly.
inline ScalePlan build_scale_plan(int image_h, int image_w, int proc_h, int proc_w, std::vector<Extent> levels,
                                  GridMode mode = GridMode::strict) {
    if (levels.empty()) throw InvalidArgument("scale plan needs at least one level");
    if (image_h < 1 || image_w < 1 || proc_h < 1 || proc_w < 1) throw InvalidArgument("sizes must be positive");
    for (const auto& l : levels) {
        if (l.height < 1 || l.width < 1) throw InvalidArgument("level sizes must be positive, got " + to_string(l));
    }
    for (std::size_t i = 1; i < levels.size(); ++i) {
        if (!(levels[i].height < levels[i - 1].height) || !(levels[i].width < levels[i - 1].width)) {
            throw NonMonotonicScales("level " + std::to_string(i + 1) + " (" + to_string(levels[i]) +
                                     ") is not strictly smaller than level " + std::to_string(i) + " (" +
                                     to_string(levels[i - 1]) + ")");
        }
    }
    const Extent image{image_h, image_w};
    const Extent& first = levels.front();
    if (mode == GridMode::strict && first != image) {
        throw EndpointsMismatch("level 1 (" + to_string(first) + ") must equal the image size " + to_string(image));
    }
    if (mode == GridMode::pad && (first.height < image_h || first.width < image_w)) {
        throw EndpointsMismatch("level 1 (" + to_string(first) + ") must cover the image size " + to_string(image));
    }
    if (levels.back() != Extent{proc_h, proc_w}) {
        throw EndpointsMismatch("last level (" + to_string(levels.back()) + ") must equal the processing size " +
                                to_string(Extent{proc_h, proc_w}));
    }
    for (const auto& l : levels) {
        if (first.height % l.height != 0 || first.width % l.width != 0) {
            throw IndivisibleGrid("level " + to_string(l) + " does not tile " + to_string(first));
        }
    }
    return ScalePlan{std::move(levels), Extent{proc_h, proc_w}, image, mode};
}

/// Row-major grid of non-overlapping (h, w) windows exactly covering an H x W area.
inline std::vector<Window> grid_windows(int area_h, int area_w, Extent size) {
    if (size.height < 1 || size.width < 1 || area_h % size.height != 0 || area_w % size.width != 0) {
        throw IndivisibleGrid("window " + to_string(size) + " does not tile " + to_string(Extent{area_h, area_w}));
    }
    std::vector<Window> out;
    out.reserve(static_cast<std::size_t>(area_h / size.height) * static_cast<std::size_t>(area_w / size.width));
    for (int y = 0; y < area_h; y += size.height) {
        for (int x = 0; x < area_w; x += size.width) out.push_back({x, y, size.width, size.height});
    }
    return out;
}

/// Window set for level `s` (1-based) over an H x W canvas.
inline std::vector<Window> windows_for_scale(const ScalePlan& plan, int s, int area_h, int area_w) {
    if (s < 1 || s > plan.level_count()) {
        throw InvalidArgument("level " + std::to_string(s) + " outside 1.." + std::to_string(plan.level_count()));
    }
    return grid_windows(area_h, area_w, plan.level(s));
}

inline std::vector<Window> windows_for_scale(const ScalePlan& plan, int s) {
    return windows_for_scale(plan, s, plan.canvas().height, plan.canvas().width);
}

inline bool window_in_bounds(const Window& win, int h, int w) {
    return win.w > 0 && win.h > 0 && win.x >= 0 && win.y >= 0 && win.x + win.w <= w && win.y + win.h <= h;
}

template <typename G>
G extract_patch(const G& m, const Window& win) {
    if (!window_in_bounds(win, m.height(), m.width())) {
        throw OutOfBounds("window " + to_string(win) + " outside map " + shape_string(m));
    }
    const int c = m.channels();
    G out(win.h, win.w, c, typename G::value_type{});
    const auto src = m.values();
    auto dst = out.values();
    const auto row_len = static_cast<std::size_t>(win.w) * static_cast<std::size_t>(c);
    for (int r = 0; r < win.h; ++r) {
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(m.offset(win.y + r, win.x)),
                    static_cast<std::ptrdiff_t>(row_len),
                    dst.begin() + static_cast<std::ptrdiff_t>(out.offset(r, 0)));
    }
    return out;
}

/// In-place paste; only the window region of `dst` is written.
template <typename G>
void paste_patch_into(G& dst, const Window& win, const G& patch) {
    if (!window_in_bounds(win, dst.height(), dst.width())) {
        throw OutOfBounds("window " + to_string(win) + " outside map " + shape_string(dst));
    }
    if (patch.height() != win.h || patch.width() != win.w || patch.channels() != dst.channels()) {
        throw DimMismatch("patch " + shape_string(patch) + " does not fit window " + to_string(win) + " with " +
                          std::to_string(dst.channels()) + " channels");
    }
    const auto row_len = static_cast<std::size_t>(win.w) * static_cast<std::size_t>(dst.channels());
    const auto src = patch.values();
    auto out = dst.values();
    for (int r = 0; r < win.h; ++r) {
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(patch.offset(r, 0)), static_cast<std::ptrdiff_t>(row_len),
                    out.begin() + static_cast<std::ptrdiff_t>(dst.offset(win.y + r, win.x)));
    }
}

template <typename G>
G paste_patch(G dst, const Window& win, const G& patch) {
    paste_patch_into(dst, win, patch);
    return dst;
}

/// Edge-replicates `m` to (out_h, out_w) with the original anchored at the top-left.
template <typename G>
G pad_edge(const G& m, int out_h, int out_w) {
    if (out_h < m.height() || out_w < m.width()) throw InvalidArgument("pad target smaller than the map");
    if (m.height() < 1 || m.width() < 1) throw InvalidArgument("cannot pad an empty map");
    if (out_h == m.height() && out_w == m.width()) return m;
    G out(out_h, out_w, m.channels(), typename G::value_type{});
    for (int r = 0; r < out_h; ++r) {
        const int sr = std::min(r, m.height() - 1);
        for (int c = 0; c < out_w; ++c) {
            const int sc = std::min(c, m.width() - 1);
            const auto src = m.pixel(sr, sc);
            std::copy(src.begin(), src.end(), out.pixel(r, c).begin());
        }
    }
    return out;
}

template <typename G>
G crop_top_left(const G& m, int h, int w) {
    if (h == m.height() && w == m.width()) return m;
    return extract_patch(m, Window{0, 0, w, h});
}

}  // namespace magnet
