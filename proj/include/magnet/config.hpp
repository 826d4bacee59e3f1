#pragma once

#include <openssl/evp.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "magnet/backends.hpp"
#include "magnet/errors.hpp"
#include "magnet/external.hpp"
#include "magnet/io.hpp"
#include "magnet/pipeline.hpp"
#include "magnet/tiling.hpp"

namespace magnet {

inline constexpr const char* kToolVersion = "0.3.0";
inline constexpr const char* kConfigEnvVar = "MAGNET_CONFIG";

struct BackendSpec {
    std::string kind = "constant";  // constant | oracle | external
    int constant_class = 0;
    float blur_sigma_at_coarsest = 0.0f;
    float label_noise_rate = 0.0f;
    float softness = 1.0f;
    std::string gt;  // oracle ground-truth PNG, relative to the config file
    std::vector<std::string> command;
    int timeout_ms = 5000;

    bool operator==(const BackendSpec&) const = default;
};

struct CombinerSpec {
    std::string kind = "mean";  // passthrough_o | mean | confidence_gate | external
    std::vector<std::string> command;
    int timeout_ms = 5000;

    bool operator==(const CombinerSpec&) const = default;
};

/// Everything a run needs, with defaults applied.
struct RunConfig {
    int classes = 2;
    std::int32_t ignore_index = kDefaultIgnoreIndex;
    PipelineConfig pipeline;
    BackendSpec backend;
    CombinerSpec combiner;
    std::optional<std::uint64_t> seed;
    std::string external_mode = "shared";  // shared | per_worker

    bool operator==(const RunConfig&) const = default;
};

namespace detail {

using nlohmann::json;

inline int line_of_offset(const std::string& text, std::size_t offset) {
    int line = 1;
    for (std::size_t i = 0; i < offset && i < text.size(); ++i) line += text[i] == '\n' ? 1 : 0;
    return line;
}

inline void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) throw ParseError(where.empty() ? it.key() : where + "." + it.key(), "unknown key");
    }
}

template <typename T>
T get_field(const json& obj, const char* key, const std::string& path, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ParseError(path.empty() ? std::string(key) : path + "." + key, e.what());
    }
}

inline Extent parse_extent(const json& v, const std::string& path) {
    if (v.is_array() && v.size() == 2 && v[0].is_number_integer() && v[1].is_number_integer()) {
        return {v[0].get<int>(), v[1].get<int>()};
    }
    if (v.is_object()) {
        reject_unknown(v, path, {"height", "width"});
        if (v.contains("height") && v.contains("width") && v["height"].is_number_integer() &&
            v["width"].is_number_integer()) {
            return {v["height"].get<int>(), v["width"].get<int>()};
        }
    }
    throw ParseError(path, "expected [height, width] or {\"height\", \"width\"}");
}

inline json extent_json(const Extent& e) { return json::array({e.height, e.width}); }

}  // namespace detail

/// Parses and validates a JSON run configuration. Syntax problems raise
/// ParseError; broken invariants raise ValidationError naming the invariant.
inline RunConfig parse_config_text(const std::string& text) {
    using detail::json;
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(detail::line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1), e.what());
    }
    if (!root.is_object()) throw ParseError(1, "top level must be an object");
    detail::reject_unknown(root, "", {"image", "processing", "scales", "grid_mode", "classes", "ignore_index", "k",
                                      "strategy", "replace_source", "combiner", "backend", "fast", "workers", "seed",
                                      "external_mode"});

    RunConfig cfg;
    if (!root.contains("image")) throw ParseError(std::string("image"), "required");
    const Extent image = detail::parse_extent(root["image"], "image");
    std::vector<Extent> levels;
    if (root.contains("scales")) {
        if (!root["scales"].is_array()) throw ParseError(std::string("scales"), "expected a list");
        for (std::size_t i = 0; i < root["scales"].size(); ++i) {
            levels.push_back(detail::parse_extent(root["scales"][i], "scales[" + std::to_string(i) + "]"));
        }
    } else {
        levels.push_back(image);
    }
    if (levels.empty()) throw ValidationError("EmptyScales", "at least one scale level is required");
    const Extent proc = root.contains("processing") ? detail::parse_extent(root["processing"], "processing") : levels.back();

    const auto grid_mode = detail::get_field<std::string>(root, "grid_mode", "", "strict");
    if (grid_mode != "strict" && grid_mode != "pad") throw ParseError(std::string("grid_mode"), "must be strict or pad");

    cfg.classes = detail::get_field<int>(root, "classes", "", 2);
    if (cfg.classes < 2) throw ValidationError("ClassCount", "classes must be >= 2");
    cfg.ignore_index = detail::get_field<std::int32_t>(root, "ignore_index", "", kDefaultIgnoreIndex);

    try {
        cfg.pipeline.plan = build_scale_plan(image.height, image.width, proc.height, proc.width, levels,
                                             grid_mode == "pad" ? GridMode::pad : GridMode::strict);
    } catch (const Error& e) {
        throw ValidationError(e.kind(), e.what());
    }

    const auto k = detail::get_field<std::int64_t>(root, "k", "", std::int64_t{1} << 16);
    if (k < 0) throw ValidationError("NonNegativeK", "k must be >= 0");
    cfg.pipeline.k = static_cast<std::size_t>(k);

    if (root.contains("strategy")) {
        const auto& s = root["strategy"];
        if (!s.is_object()) throw ParseError(std::string("strategy"), "expected an object");
        detail::reject_unknown(s, "strategy", {"kind", "alpha", "median_kernel"});
        const auto kind = detail::get_field<std::string>(s, "kind", "strategy", "product");
        const auto parsed = parse_score_kind(kind);
        if (!parsed) throw ParseError(std::string("strategy.kind"), "unknown strategy '" + kind + "'");
        cfg.pipeline.strategy.kind = *parsed;
        if (s.contains("alpha")) cfg.pipeline.strategy.alpha = detail::get_field<float>(s, "alpha", "strategy", 0.0f);
        cfg.pipeline.strategy.median_kernel = detail::get_field<int>(s, "median_kernel", "strategy", 3);
    }
    if (auto v = cfg.pipeline.strategy.violation(); !v.empty()) throw ValidationError("ScoreStrategy", v);

    const auto replace = detail::get_field<std::string>(root, "replace_source", "", "R");
    if (replace != "R" && replace != "O") throw ParseError(std::string("replace_source"), "must be R or O");
    cfg.pipeline.replace_source = replace == "R" ? ReplaceSource::R : ReplaceSource::O;

    cfg.pipeline.workers = detail::get_field<int>(root, "workers", "", 1);
    if (cfg.pipeline.workers < 1) throw ValidationError("Workers", "workers must be >= 1");

    if (root.contains("fast") && !root["fast"].is_null()) {
        const auto& f = root["fast"];
        if (!f.is_object()) throw ParseError(std::string("fast"), "expected an object");
        detail::reject_unknown(f, "fast", {"scale_subset", "patches_per_scale"});
        FastConfig fast;
        fast.scale_subset = detail::get_field<std::vector<int>>(f, "scale_subset", "fast", {});
        fast.patches_per_scale = detail::get_field<int>(f, "patches_per_scale", "fast", 3);
        cfg.pipeline.fast = fast;
    }
    try {
        validate(cfg.pipeline);
    } catch (const ConfigError& e) {
        throw ValidationError("FastSubset", e.what());
    }

    if (root.contains("combiner")) {
        const auto& c = root["combiner"];
        if (c.is_string()) {
            cfg.combiner.kind = c.get<std::string>();
        } else if (c.is_object()) {
            detail::reject_unknown(c, "combiner", {"kind", "command", "timeout_ms"});
            cfg.combiner.kind = detail::get_field<std::string>(c, "kind", "combiner", "mean");
            cfg.combiner.command = detail::get_field<std::vector<std::string>>(c, "command", "combiner", {});
            cfg.combiner.timeout_ms = detail::get_field<int>(c, "timeout_ms", "combiner", 5000);
        } else {
            throw ParseError(std::string("combiner"), "expected a name or an object");
        }
    }
    if (cfg.combiner.kind != "external" && !parse_combiner_kind(cfg.combiner.kind)) {
        throw ParseError(std::string("combiner.kind"), "unknown combiner '" + cfg.combiner.kind + "'");
    }
    if (cfg.combiner.kind == "external" && cfg.combiner.command.empty()) {
        throw ValidationError("ExternalCommand", "external combiner needs a command");
    }

    if (root.contains("backend")) {
        const auto& b = root["backend"];
        if (!b.is_object()) throw ParseError(std::string("backend"), "expected an object");
        detail::reject_unknown(b, "backend", {"kind", "class", "blur_sigma_at_coarsest", "label_noise_rate", "softness",
                                              "gt", "command", "timeout_ms"});
        auto& be = cfg.backend;
        be.kind = detail::get_field<std::string>(b, "kind", "backend", "constant");
        be.constant_class = detail::get_field<int>(b, "class", "backend", 0);
        be.blur_sigma_at_coarsest = detail::get_field<float>(b, "blur_sigma_at_coarsest", "backend", 0.0f);
        be.label_noise_rate = detail::get_field<float>(b, "label_noise_rate", "backend", 0.0f);
        be.softness = detail::get_field<float>(b, "softness", "backend", 1.0f);
        be.gt = detail::get_field<std::string>(b, "gt", "backend", "");
        be.command = detail::get_field<std::vector<std::string>>(b, "command", "backend", {});
        be.timeout_ms = detail::get_field<int>(b, "timeout_ms", "backend", 5000);
    }
    const auto& be = cfg.backend;
    if (be.kind != "constant" && be.kind != "oracle" && be.kind != "external") {
        throw ParseError(std::string("backend.kind"), "unknown backend '" + be.kind + "'");
    }
    if (be.kind == "constant" && (be.constant_class < 0 || be.constant_class >= cfg.classes)) {
        throw ValidationError("ConstantClass", "constant class out of range");
    }
    if (be.kind == "oracle") {
        if (!(be.blur_sigma_at_coarsest >= 0.0f)) throw ValidationError("OracleBlur", "blur_sigma_at_coarsest must be >= 0");
        if (!(be.label_noise_rate >= 0.0f && be.label_noise_rate < 1.0f)) {
            throw ValidationError("OracleNoise", "label_noise_rate must lie in [0, 1)");
        }
        if (!(be.softness > 0.0f && be.softness <= 1.0f)) throw ValidationError("OracleSoftness", "softness must lie in (0, 1]");
    }
    if (be.kind == "external" && be.command.empty()) throw ValidationError("ExternalCommand", "external backend needs a command");
    if (be.timeout_ms < 1 || cfg.combiner.timeout_ms < 1) throw ValidationError("Timeout", "timeout_ms must be >= 1");

    if (root.contains("seed")) cfg.seed = detail::get_field<std::uint64_t>(root, "seed", "", 0);
    if (be.kind == "oracle" && !cfg.seed) throw ValidationError("SeedRequired", "the oracle backend is stochastic; set seed");

    cfg.external_mode = detail::get_field<std::string>(root, "external_mode", "", "shared");
    if (cfg.external_mode != "shared" && cfg.external_mode != "per_worker") {
        throw ParseError(std::string("external_mode"), "must be shared or per_worker");
    }
    return cfg;
}

/// Canonical JSON text with every default written out.
inline std::string serialize_config(const RunConfig& cfg) {
    using detail::json;
    const auto& p = cfg.pipeline;
    json root;
    root["image"] = detail::extent_json(p.plan.image);
    root["processing"] = detail::extent_json(p.plan.processing);
    root["scales"] = json::array();
    for (const auto& l : p.plan.levels) root["scales"].push_back(detail::extent_json(l));
    root["grid_mode"] = p.plan.mode == GridMode::pad ? "pad" : "strict";
    root["classes"] = cfg.classes;
    root["ignore_index"] = cfg.ignore_index;
    root["k"] = p.k;
    json strategy{{"kind", std::string(to_string(p.strategy.kind))}, {"median_kernel", p.strategy.median_kernel}};
    if (p.strategy.alpha) strategy["alpha"] = *p.strategy.alpha;
    root["strategy"] = strategy;
    root["replace_source"] = std::string(to_string(p.replace_source));
    root["workers"] = p.workers;
    if (p.fast) root["fast"] = {{"scale_subset", p.fast->scale_subset}, {"patches_per_scale", p.fast->patches_per_scale}};
    json combiner{{"kind", cfg.combiner.kind}};
    if (cfg.combiner.kind == "external") {
        combiner["command"] = cfg.combiner.command;
        combiner["timeout_ms"] = cfg.combiner.timeout_ms;
    }
    root["combiner"] = combiner;
    const auto& be = cfg.backend;
    json backend{{"kind", be.kind}};
    if (be.kind == "constant") backend["class"] = be.constant_class;
    if (be.kind == "oracle") {
        backend["blur_sigma_at_coarsest"] = be.blur_sigma_at_coarsest;
        backend["label_noise_rate"] = be.label_noise_rate;
        backend["softness"] = be.softness;
        if (!be.gt.empty()) backend["gt"] = be.gt;
    }
    if (be.kind == "external") {
        backend["command"] = be.command;
        backend["timeout_ms"] = be.timeout_ms;
    }
    root["backend"] = backend;
    if (cfg.seed) root["seed"] = *cfg.seed;
    root["external_mode"] = cfg.external_mode;
    return root.dump(2) + "\n";
}

inline std::string read_text_file(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return {bytes.begin(), bytes.end()};
}

inline RunConfig parse_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const IOError& e) {
        throw ConfigError(e.what());
    }
    return parse_config_text(text);
}

/// Lowercase hex SHA-256 of `bytes`.
inline std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("DigestError", "SHA-256 failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xF]);
    }
    return out;
}

struct RunManifest {
    std::string config_digest;
    std::optional<std::uint64_t> seed;
    std::string tool_version = kToolVersion;
    std::vector<StageReport> reports;
    std::vector<std::string> outputs;
};

inline nlohmann::json report_json(const StageReport& r) {
    nlohmann::json j{{"level", r.level}, {"patches", r.patches}, {"points", r.points}, {"seconds", r.seconds}};
    if (r.miou) j["miou"] = *r.miou;
    return j;
}

inline nlohmann::json manifest_json(const RunManifest& m) {
    nlohmann::json j;
    j["config_digest"] = m.config_digest;
    j["seed"] = m.seed ? nlohmann::json(*m.seed) : nlohmann::json(nullptr);
    j["tool_version"] = m.tool_version;
    j["reports"] = nlohmann::json::array();
    for (const auto& r : m.reports) j["reports"].push_back(report_json(r));
    j["outputs"] = m.outputs;
    return j;
}

/// Segmentation and combiner modules instantiated from a config.
struct Modules {
    std::unique_ptr<SegmentationBackend> backend;
    std::unique_ptr<Combiner> combiner;
};

/// `gt` overrides the config's oracle ground-truth path; `base_dir` resolves relative paths.
inline Modules make_modules(const RunConfig& cfg, const std::filesystem::path& base_dir = {},
                            const LabelMap* gt = nullptr) {
    Modules m;
    const int processes = cfg.external_mode == "per_worker" ? cfg.pipeline.workers : 1;
    const auto& be = cfg.backend;
    if (be.kind == "constant") {
        m.backend = std::make_unique<ConstantBackend>(cfg.classes, be.constant_class);
    } else if (be.kind == "oracle") {
        OracleBackendConfig oc;
        if (gt) {
            oc.gt = *gt;
        } else {
            if (be.gt.empty()) throw ConfigError("oracle backend needs ground truth (backend.gt or --gt)");
            const std::filesystem::path gt_path(be.gt);
            const std::filesystem::path path = gt_path.is_absolute() ? gt_path : base_dir / gt_path;
            oc.gt = read_label_png(path);
        }
        oc.classes = cfg.classes;
        oc.blur_sigma_at_coarsest = be.blur_sigma_at_coarsest;
        oc.label_noise_rate = be.label_noise_rate;
        oc.softness = be.softness;
        oc.seed = cfg.seed.value_or(0);
        m.backend = std::make_unique<OracleBackend>(std::move(oc));
    } else {
        m.backend = std::make_unique<ExternalBackend>(
            ExternalEndpointConfig{be.command, std::chrono::milliseconds(be.timeout_ms), processes}, cfg.classes);
    }
    if (cfg.combiner.kind == "external") {
        m.combiner = std::make_unique<ExternalCombiner>(
            ExternalEndpointConfig{cfg.combiner.command, std::chrono::milliseconds(cfg.combiner.timeout_ms), processes});
    } else {
        m.combiner = make_combiner(*parse_combiner_kind(cfg.combiner.kind));
    }
    return m;
}

}  // namespace magnet
