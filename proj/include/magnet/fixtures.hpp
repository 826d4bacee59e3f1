#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "magnet/backends.hpp"
#include "magnet/errors.hpp"
#include "magnet/io.hpp"
#include "magnet/tensor.hpp"

namespace magnet {

struct FixtureSpec {
    std::uint64_t seed = 0;
    int count = 0;
    int size = 512;  // square images
    int classes = 5;
    double detail_scale = 1.0;  // 0 = large regions only
};

struct Fixture {
    Image image;
    LabelMap labels;
};

namespace detail {

// Fixed colors for up to 16 classes; further classes reuse them.
inline constexpr std::array<std::array<float, 3>, 16> kPalette = {{
    {0.50f, 0.25f, 0.50f}, {0.96f, 0.14f, 0.91f}, {0.27f, 0.27f, 0.27f}, {0.86f, 0.86f, 0.00f},
    {0.86f, 0.08f, 0.24f}, {0.42f, 0.56f, 0.14f}, {0.27f, 0.51f, 0.71f}, {0.98f, 0.67f, 0.12f},
    {0.00f, 0.00f, 0.56f}, {0.60f, 0.98f, 0.60f}, {0.40f, 0.40f, 0.61f}, {0.74f, 0.60f, 0.60f},
    {0.00f, 0.24f, 0.39f}, {0.47f, 0.04f, 0.13f}, {0.02f, 0.80f, 0.80f}, {0.95f, 0.95f, 0.95f},
}};

inline void stamp(LabelMap& labels, double cy, double cx, double radius, std::int32_t cls) {
    const int r0 = static_cast<int>(std::floor(cy - radius));
    const int r1 = static_cast<int>(std::ceil(cy + radius));
    const int c0 = static_cast<int>(std::floor(cx - radius));
    const int c1 = static_cast<int>(std::ceil(cx + radius));
    for (int r = std::max(0, r0); r <= std::min(labels.height() - 1, r1); ++r) {
        for (int c = std::max(0, c0); c <= std::min(labels.width() - 1, c1); ++c) {
            const double dy = r + 0.5 - cy;
            const double dx = c + 0.5 - cx;
            if (dy * dy + dx * dx <= radius * radius) labels.at(r, c) = cls;
        }
    }
}

}  // namespace detail

/// Deterministic synthetic scene: Voronoi regions of the "region" classes, then
/// thin curves (1-3 px) and small blobs of dedicated classes when detail_scale > 0.
inline Fixture generate_fixture(const FixtureSpec& spec, int index) {
    if (spec.size < 1) throw InvalidArgument("fixture size must be positive");
    if (spec.classes < 2) throw InvalidArgument("fixtures need at least two classes");
    if (spec.detail_scale < 0.0) throw InvalidArgument("detail_scale must be >= 0");
    detail::PatchRng rng(detail::mix_seed(spec.seed, {index, spec.size, spec.classes}));
    const int n = spec.size;
    const int thin_classes = spec.classes >= 4 ? 2 : 1;
    const int region_classes = spec.classes - thin_classes;
    const std::int32_t curve_class = region_classes;
    const std::int32_t blob_class = spec.classes - 1;

    LabelMap labels(n, n, 0);
    struct Site {
        double y, x;
        std::int32_t cls;
    };
    std::vector<Site> sites;
    const int site_count = 4 + static_cast<int>(rng.next() % 4);
    for (int i = 0; i < site_count; ++i) {
        sites.push_back({rng.uniform() * n, rng.uniform() * n,
                         static_cast<std::int32_t>(i < region_classes ? i : rng.next() % region_classes)});
    }
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            double best = 1e300;
            std::int32_t cls = 0;
            for (const auto& s : sites) {
                const double d = (r + 0.5 - s.y) * (r + 0.5 - s.y) + (c + 0.5 - s.x) * (c + 0.5 - s.x);
                if (d < best) {
                    best = d;
                    cls = s.cls;
                }
            }
            labels.at(r, c) = cls;
        }
    }

    const int curves = static_cast<int>(std::lround(6.0 * spec.detail_scale));
    const int blobs = static_cast<int>(std::lround(10.0 * spec.detail_scale));
    constexpr double kPi = 3.14159265358979323846;
    for (int i = 0; i < curves; ++i) {
        const double y0 = rng.uniform() * n;
        const double x0 = rng.uniform() * n;
        const double angle = rng.uniform() * 2.0 * kPi;
        const double length = (0.4 + 0.6 * rng.uniform()) * n;
        const double wobble = (0.02 + 0.08 * rng.uniform()) * n;
        const double freq = 1.0 + 3.0 * rng.uniform();
        const double thickness = 1.0 + static_cast<double>(rng.next() % 3);
        const double dy = std::sin(angle);
        const double dx = std::cos(angle);
        for (double t = 0.0; t <= length; t += 0.5) {
            const double off = wobble * std::sin(2.0 * kPi * freq * t / length);
            detail::stamp(labels, y0 + t * dy + off * dx, x0 + t * dx - off * dy, thickness / 2.0, curve_class);
        }
    }
    for (int i = 0; i < blobs; ++i) {
        const double radius = 1.5 + 2.5 * rng.uniform();
        detail::stamp(labels, rng.uniform() * n, rng.uniform() * n, radius, blob_class);
    }

    Image image(n, n, 0.0f);
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            const auto& color = detail::kPalette[static_cast<std::size_t>(labels.at(r, c)) % detail::kPalette.size()];
            for (int k = 0; k < 3; ++k) {
                const float noise = static_cast<float>(rng.uniform() - 0.5) * 0.1f;
                // Quantize to 8 bits so the in-memory image equals what the PNG round-trip yields.
                const float v = std::clamp(color[static_cast<std::size_t>(k)] + noise, 0.0f, 1.0f);
                image.at(r, c, k) = static_cast<float>(std::lround(v * 255.0f)) / 255.0f;
            }
        }
    }
    return {std::move(image), std::move(labels)};
}

inline std::string fixture_stem(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d", index);
    return buf;
}

/// Writes images/NNNN.png, labels/NNNN.png and fixtures.json under `dir`.
inline void make_fixtures(const FixtureSpec& spec, const std::filesystem::path& dir) {
    if (spec.count < 0) throw InvalidArgument("fixture count must be >= 0");
    std::error_code ec;
    std::filesystem::create_directories(dir / "images", ec);
    if (!ec) std::filesystem::create_directories(dir / "labels", ec);
    if (ec) throw IOError("cannot create " + dir.string() + ": " + ec.message());
    for (int i = 0; i < spec.count; ++i) {
        const auto f = generate_fixture(spec, i);
        write_image_png(dir / "images" / (fixture_stem(i) + ".png"), f.image);
        write_label_png(dir / "labels" / (fixture_stem(i) + ".png"), f.labels);
    }
    std::ofstream meta(dir / "fixtures.json", std::ios::trunc);
    if (!meta) throw IOError("cannot write fixtures.json");
    meta << "{\"seed\": " << spec.seed << ", \"count\": " << spec.count << ", \"size\": " << spec.size
         << ", \"classes\": " << spec.classes << ", \"detail_scale\": " << spec.detail_scale << "}\n";
}

}  // namespace magnet
