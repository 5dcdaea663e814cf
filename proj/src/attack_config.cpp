#include "pga/attack.hpp"
#include "pga/errors.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace pga {

void AttackConfig::validate() const {
    auto finite = [](double v, const char* name) {
        if (!std::isfinite(v)) throw InvalidParameter(std::string(name) + " must be finite");
    };
    finite(epsilon, "epsilon");
    finite(eta, "eta");
    finite(lambda, "lambda");
    finite(bg_step_size, "bg_step_size");
    if (epsilon < 0.0 || epsilon > 1.0) throw InvalidParameter("epsilon must be in [0, 1]");
    if (!(eta > 0.0)) throw InvalidParameter("eta must be positive");
    if (lambda < 0.0) throw InvalidParameter("lambda must be non-negative");
    if (bg_step_size < 0.0) throw InvalidParameter("bg_step_size must be non-negative");
    if (bg_steps < 0 || inner_iters_per_view < 0 || outer_epochs < 0) {
        throw InvalidParameter("iteration counts must be non-negative");
    }
    if (palette_k < 1) throw InvalidParameter("palette_k must be at least 1");
    if (!(mask_threshold > 0.0 && mask_threshold < 1.0)) throw InvalidParameter("mask_threshold must be in (0, 1)");
    if (!(success.confidence >= 0.0 && success.confidence <= 1.0)) {
        throw InvalidParameter("success.confidence must be in [0, 1]");
    }
    if (!(success.iou > 0.0 && success.iou <= 1.0)) throw InvalidParameter("success.iou must be in (0, 1]");
    eot.validate();
}

namespace {

using nlohmann::ordered_json;

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
    if (!j.is_object()) throw InvalidParameter(where + " must be a JSON object");
    std::set<std::string> k(known.begin(), known.end());
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!k.count(it.key())) throw InvalidParameter("unknown config key '" + where + it.key() + "'");
    }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw InvalidParameter("config key '" + where + key + "' has the wrong type");
    }
}

}  // namespace

std::string attack_config_to_json(const AttackConfig& c, int indent) {
    ordered_json j;
    j["epsilon"] = c.epsilon;
    j["bg_step_size"] = c.bg_step_size;
    j["bg_steps"] = c.bg_steps;
    j["eta"] = c.eta;
    j["lambda"] = c.lambda;
    j["inner_iters_per_view"] = c.inner_iters_per_view;
    j["outer_epochs"] = c.outer_epochs;
    j["palette_k"] = c.palette_k;
    j["min_max"] = c.min_max;
    j["mask_threshold"] = c.mask_threshold;
    j["eot"] = {{"enabled", c.eot.enabled},
                {"scale", {c.eot.scale_min, c.eot.scale_max}},
                {"contrast", {c.eot.contrast_min, c.eot.contrast_max}},
                {"brightness", {c.eot.brightness_min, c.eot.brightness_max}},
                {"noise", c.eot.noise}};
    j["success"] = {{"confidence", c.success.confidence}, {"iou", c.success.iou}};
    j["rng_seed"] = c.rng_seed;
    return j.dump(indent);
}

AttackConfig attack_config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidParameter(std::string("attack config is not valid JSON: ") + e.what());
    }
    AttackConfig c;
    reject_unknown(j,
                   {"epsilon", "bg_step_size", "bg_steps", "eta", "lambda", "inner_iters_per_view", "outer_epochs",
                    "palette_k", "min_max", "mask_threshold", "eot", "success", "rng_seed"},
                   "");
    read(j, "epsilon", c.epsilon, "");
    read(j, "bg_step_size", c.bg_step_size, "");
    read(j, "bg_steps", c.bg_steps, "");
    read(j, "eta", c.eta, "");
    read(j, "lambda", c.lambda, "");
    read(j, "inner_iters_per_view", c.inner_iters_per_view, "");
    read(j, "outer_epochs", c.outer_epochs, "");
    read(j, "palette_k", c.palette_k, "");
    read(j, "min_max", c.min_max, "");
    read(j, "mask_threshold", c.mask_threshold, "");
    read(j, "rng_seed", c.rng_seed, "");
    if (j.contains("eot")) {
        const auto& e = j.at("eot");
        reject_unknown(e, {"enabled", "scale", "contrast", "brightness", "noise"}, "eot.");
        read(e, "enabled", c.eot.enabled, "eot.");
        read(e, "noise", c.eot.noise, "eot.");
        auto pair = [&](const char* key, double& lo, double& hi) {
            std::array<double, 2> v{lo, hi};
            read(e, key, v, "eot.");
            lo = v[0];
            hi = v[1];
        };
        pair("scale", c.eot.scale_min, c.eot.scale_max);
        pair("contrast", c.eot.contrast_min, c.eot.contrast_max);
        pair("brightness", c.eot.brightness_min, c.eot.brightness_max);
    }
    if (j.contains("success")) {
        const auto& s = j.at("success");
        reject_unknown(s, {"confidence", "iou"}, "success.");
        read(s, "confidence", c.success.confidence, "success.");
        read(s, "iou", c.success.iou, "success.");
    }
    c.validate();
    return c;
}

AttackConfig load_attack_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidParameter("cannot open attack config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return attack_config_from_json(ss.str());
}

}  // namespace pga
