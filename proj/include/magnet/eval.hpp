#pragma once

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "magnet/errors.hpp"
#include "magnet/tensor.hpp"

namespace magnet {

/// C x C pixel counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
public:
    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int classes)
        : classes_(classes), counts_(static_cast<std::size_t>(classes) * static_cast<std::size_t>(classes), 0) {
        if (classes < 1) throw InvalidArgument("confusion matrix needs at least one class");
    }

    /// Builds from explicit rows; used by tests and for reloading.
    static ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
        ConfusionMatrix cm(static_cast<int>(rows.size()));
        for (std::size_t g = 0; g < rows.size(); ++g) {
            if (rows[g].size() != rows.size()) throw DimMismatch("confusion matrix must be square");
            for (std::size_t p = 0; p < rows.size(); ++p) cm.at(static_cast<int>(g), static_cast<int>(p)) = rows[g][p];
        }
        return cm;
    }

    int classes() const noexcept { return classes_; }
    std::uint64_t& at(int gt, int pred) { return counts_[index(gt, pred)]; }
    std::uint64_t at(int gt, int pred) const { return counts_[index(gt, pred)]; }

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (auto v : counts_) t += v;
        return t;
    }
    std::uint64_t row_sum(int c) const {
        std::uint64_t t = 0;
        for (int p = 0; p < classes_; ++p) t += at(c, p);
        return t;
    }
    std::uint64_t col_sum(int c) const {
        std::uint64_t t = 0;
        for (int g = 0; g < classes_; ++g) t += at(g, c);
        return t;
    }

    ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
        if (other.classes_ != classes_) throw DimMismatch("cannot merge confusion matrices of different sizes");
        for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
        return *this;
    }
    friend ConfusionMatrix operator+(ConfusionMatrix a, const ConfusionMatrix& b) { return a += b; }
    bool operator==(const ConfusionMatrix&) const = default;

private:
    std::size_t index(int gt, int pred) const {
        return static_cast<std::size_t>(gt) * static_cast<std::size_t>(classes_) + static_cast<std::size_t>(pred);
    }

    int classes_ = 0;
    std::vector<std::uint64_t> counts_;
};

/// Adds one count per pixel whose ground truth is not `ignore`.
inline void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt,
                       std::int32_t ignore = kDefaultIgnoreIndex) {
    if (pred.height() != gt.height() || pred.width() != gt.width()) {
        throw DimMismatch("prediction " + shape_string(pred) + " vs ground truth " + shape_string(gt));
    }
    const auto p = pred.values();
    const auto g = gt.values();
    const int c = cm.classes();
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (g[i] == ignore) continue;
        if (g[i] < 0 || g[i] >= c) throw InvalidArgument("ground-truth label " + std::to_string(g[i]) + " out of range");
        if (p[i] < 0 || p[i] >= c) throw InvalidArgument("predicted label " + std::to_string(p[i]) + " out of range");
        ++cm.at(g[i], p[i]);
    }
}

inline ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& gt, int classes,
                                 std::int32_t ignore = kDefaultIgnoreIndex) {
    ConfusionMatrix cm(classes);
    accumulate(cm, pred, gt, ignore);
    return cm;
}

/// Per-class IoU; nullopt for classes absent from both prediction and ground truth.
inline std::vector<std::optional<double>> iou_per_class(const ConfusionMatrix& cm) {
    std::vector<std::optional<double>> out(static_cast<std::size_t>(cm.classes()));
    for (int c = 0; c < cm.classes(); ++c) {
        const auto tp = cm.at(c, c);
        const auto denom = cm.row_sum(c) + cm.col_sum(c) - tp;
        if (denom > 0) out[static_cast<std::size_t>(c)] = static_cast<double>(tp) / static_cast<double>(denom);
    }
    return out;
}

/// Mean of the defined per-class IoUs.
inline double miou(const ConfusionMatrix& cm) {
    double sum = 0.0;
    int n = 0;
    for (const auto& v : iou_per_class(cm)) {
        if (v) {
            sum += *v;
            ++n;
        }
    }
    if (n == 0) throw NoDefinedClasses();
    return sum / n;
}

struct CdfPoint {
    double edge;
    double fraction;
};

/// Fraction of values <= each of the edges 0, 1/bins, ..., 1.
inline std::vector<CdfPoint> iou_cdf(const std::vector<double>& values, int bins) {
    if (values.empty()) throw EmptyInput("no per-image IoU values");
    if (bins < 1) throw InvalidArgument("bins must be >= 1");
    for (double v : values) {
        if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("IoU values must lie in [0, 1]");
    }
    std::vector<CdfPoint> out;
    out.reserve(static_cast<std::size_t>(bins) + 1);
    for (int i = 0; i <= bins; ++i) {
        const double edge = i == bins ? 1.0 : static_cast<double>(i) / bins;
        std::size_t below = 0;
        for (double v : values) below += v <= edge ? 1 : 0;
        out.push_back({edge, static_cast<double>(below) / static_cast<double>(values.size())});
    }
    return out;
}

inline std::string cdf_csv(const std::vector<CdfPoint>& cdf) {
    std::ostringstream os;
    os.precision(17);
    os << "edge,fraction\n";
    for (const auto& p : cdf) os << p.edge << ',' << p.fraction << '\n';
    return os.str();
}

}  // namespace magnet
