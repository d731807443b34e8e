#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "debias/common.hpp"
#include "debias/smad.hpp"
#include "debias/synth.hpp"

namespace debias {

// INI-style config: [section] headers, key = value lines, '#' comments.
// Sections mirror the SmadConfig ([model]) and SyntheticBiasSpec
// ([synthetic]) field names.
class Config {
public:
    static Config parse(std::istream& in, const std::string& origin = "<config>") {
        Config cfg;
        cfg.origin_ = origin;
        std::string line, section;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            std::string text = strip(line);
            if (text.empty() || text[0] == '#') continue;
            if (text.front() == '[') {
                require(text.back() == ']', origin + ":" + std::to_string(line_no) + ": unterminated section");
                section = strip(text.substr(1, text.size() - 2));
                continue;
            }
            auto eq = text.find('=');
            require(eq != std::string::npos,
                    origin + ":" + std::to_string(line_no) + ": expected 'key = value', got '" + text + "'");
            std::string key = strip(text.substr(0, eq));
            std::string value = strip(text.substr(eq + 1));
            require(!key.empty(), origin + ":" + std::to_string(line_no) + ": empty key");
            cfg.values_[section + "." + key] = value;
        }
        return cfg;
    }

    static Config parse_file(const std::string& path) {
        std::ifstream in(path);
        require(in.good(), "cannot open config file '" + path + "'");
        return parse(in, path);
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        consumed_.insert(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        consumed_.insert(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t pos = 0;
            double v = std::stod(it->second, &pos);
            require(pos == it->second.size(), "trailing characters");
            return v;
        } catch (const std::exception&) {
            fail(origin_, ": key '", key, "': expected a number, got '", it->second, "'");
        }
    }

    std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
        auto it = values_.find(key);
        consumed_.insert(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t pos = 0;
            long long v = std::stoll(it->second, &pos);
            require(pos == it->second.size(), "trailing characters");
            return v;
        } catch (const std::exception&) {
            fail(origin_, ": key '", key, "': expected an integer, got '", it->second, "'");
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        consumed_.insert(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
        if (it->second == "false" || it->second == "0" || it->second == "no") return false;
        fail(origin_, ": key '", key, "': expected a boolean, got '", it->second, "'");
    }

    std::vector<std::string> get_list(const std::string& key) const {
        auto it = values_.find(key);
        consumed_.insert(key);
        std::vector<std::string> out;
        if (it == values_.end()) return out;
        std::stringstream ss(it->second);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = strip(item);
            if (!item.empty()) out.push_back(item);
        }
        return out;
    }

    // Typo guard: every present key must have been consumed by a getter.
    void check_consumed() const {
        for (const auto& [key, value] : values_)
            require(consumed_.count(key) > 0, origin_ + ": unknown config key '" + key + "'");
    }

private:
    static std::string strip(const std::string& s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    }

    std::string origin_;
    std::map<std::string, std::string> values_;
    mutable std::set<std::string> consumed_;
};

inline SyntheticBiasSpec synth_spec_from_config(const Config& cfg) {
    SyntheticBiasSpec spec;
    spec.n_actions = static_cast<std::size_t>(cfg.get_int("synthetic.n_actions", spec.n_actions));
    spec.n_scenes = static_cast<std::size_t>(cfg.get_int("synthetic.n_scenes", spec.n_scenes));
    spec.rho = cfg.get_double("synthetic.rho", spec.rho);
    spec.tail_alpha = cfg.get_double("synthetic.tail_alpha", spec.tail_alpha);
    spec.patch = static_cast<std::size_t>(cfg.get_int("synthetic.patch", spec.patch));
    spec.sigma = cfg.get_double("synthetic.sigma", spec.sigma);
    spec.n_train = static_cast<std::size_t>(cfg.get_int("synthetic.n_train", spec.n_train));
    spec.n_test = static_cast<std::size_t>(cfg.get_int("synthetic.n_test", spec.n_test));
    std::string mode = cfg.get_string("synthetic.test_mode", "disjoint");
    if (mode == "disjoint")
        spec.test_mode = SyntheticBiasSpec::TestMode::disjoint;
    else if (mode == "uniform")
        spec.test_mode = SyntheticBiasSpec::TestMode::uniform;
    else
        fail("config: synthetic.test_mode must be 'disjoint' or 'uniform', got '", mode, "'");
    spec.grid_t = static_cast<std::size_t>(cfg.get_int("synthetic.grid_t", spec.grid_t));
    spec.grid_h = static_cast<std::size_t>(cfg.get_int("synthetic.grid_h", spec.grid_h));
    spec.grid_w = static_cast<std::size_t>(cfg.get_int("synthetic.grid_w", spec.grid_w));
    spec.seed = static_cast<std::uint64_t>(cfg.get_int("synthetic.seed", static_cast<std::int64_t>(spec.seed)));
    spec.check();
    return spec;
}

// Facet syntax: "name:loss:lambda", e.g. "scene:softce+kldiv:0.5".
inline FacetConfig facet_from_string(const std::string& text) {
    auto first = text.find(':');
    require(first != std::string::npos, "facet spec '" + text + "' must be name:loss:lambda");
    auto second = text.rfind(':');
    require(second != first, "facet spec '" + text + "' must be name:loss:lambda");
    FacetConfig fc;
    fc.name = text.substr(0, first);
    fc.loss = adv_loss_from_string(text.substr(first + 1, second - first - 1));
    try {
        fc.lambda = std::stod(text.substr(second + 1));
    } catch (const std::exception&) {
        fail("facet spec '", text, "': bad lambda value");
    }
    return fc;
}

inline std::string facet_to_string(const FacetConfig& fc) {
    std::ostringstream out;
    out << fc.name << ':' << adv_loss_to_string(fc.loss) << ':' << fc.lambda;
    return out.str();
}

inline SmadConfig smad_config_from_config(const Config& cfg) {
    SmadConfig mc;
    auto channels = cfg.get_list("model.channels");
    if (!channels.empty()) {
        mc.channels.clear();
        for (const auto& c : channels) mc.channels.push_back(static_cast<std::size_t>(std::stoll(c)));
    }
    mc.grid_t = static_cast<std::size_t>(cfg.get_int("model.grid_t", mc.grid_t));
    mc.grid_h = static_cast<std::size_t>(cfg.get_int("model.grid_h", mc.grid_h));
    mc.grid_w = static_cast<std::size_t>(cfg.get_int("model.grid_w", mc.grid_w));
    for (const auto& f : cfg.get_list("model.facets")) mc.facets.push_back(facet_from_string(f));
    mc.lambda_division = cfg.get_bool("model.lambda_division", mc.lambda_division);
    mc.saar_enabled = cfg.get_bool("model.saar_enabled", mc.saar_enabled);
    mc.lambda_warmup = cfg.get_bool("model.lambda_warmup", mc.lambda_warmup);
    mc.lr = cfg.get_double("model.lr", mc.lr);
    mc.momentum = cfg.get_double("model.momentum", mc.momentum);
    mc.weight_decay = cfg.get_double("model.weight_decay", mc.weight_decay);
    mc.epochs = static_cast<std::size_t>(cfg.get_int("model.epochs", mc.epochs));
    mc.batch_size = static_cast<std::size_t>(cfg.get_int("model.batch_size", mc.batch_size));
    mc.aux_fraction = cfg.get_double("model.aux_fraction", mc.aux_fraction);
    mc.seed = static_cast<std::uint64_t>(cfg.get_int("model.seed", static_cast<std::int64_t>(mc.seed)));
    mc.check();
    return mc;
}

inline std::string smad_config_to_string(const SmadConfig& mc) {
    std::ostringstream out;
    out.precision(17);
    out << "[model]\n";
    out << "channels = " << mc.channels[0] << "," << mc.channels[1] << "\n";
    out << "grid_t = " << mc.grid_t << "\ngrid_h = " << mc.grid_h << "\ngrid_w = " << mc.grid_w << "\n";
    if (!mc.facets.empty()) {
        out << "facets = ";
        for (std::size_t i = 0; i < mc.facets.size(); ++i)
            out << (i ? "," : "") << facet_to_string(mc.facets[i]);
        out << "\n";
    }
    out << "lambda_division = " << (mc.lambda_division ? "true" : "false") << "\n";
    out << "saar_enabled = " << (mc.saar_enabled ? "true" : "false") << "\n";
    out << "lambda_warmup = " << (mc.lambda_warmup ? "true" : "false") << "\n";
    out << "lr = " << mc.lr << "\nmomentum = " << mc.momentum << "\nweight_decay = " << mc.weight_decay << "\n";
    out << "epochs = " << mc.epochs << "\nbatch_size = " << mc.batch_size << "\n";
    out << "aux_fraction = " << mc.aux_fraction << "\n";
    out << "seed = " << mc.seed << "\n";
    return out.str();
}

inline std::string synth_spec_to_string(const SyntheticBiasSpec& spec) {
    std::ostringstream out;
    out.precision(17);
    out << "[synthetic]\n";
    out << "n_actions = " << spec.n_actions << "\nn_scenes = " << spec.n_scenes << "\n";
    out << "rho = " << spec.rho << "\ntail_alpha = " << spec.tail_alpha << "\n";
    out << "patch = " << spec.patch << "\nsigma = " << spec.sigma << "\n";
    out << "n_train = " << spec.n_train << "\nn_test = " << spec.n_test << "\n";
    out << "test_mode = " << (spec.test_mode == SyntheticBiasSpec::TestMode::disjoint ? "disjoint" : "uniform")
        << "\n";
    out << "grid_t = " << spec.grid_t << "\ngrid_h = " << spec.grid_h << "\ngrid_w = " << spec.grid_w << "\n";
    out << "seed = " << spec.seed << "\n";
    return out.str();
}

}  // namespace debias
