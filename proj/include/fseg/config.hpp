#pragma once

// Plain key=value run configuration. Files hold one `key=value` pair per
// line; '#' starts a comment. Unknown keys are rejected. CLI flags are
// applied on top as a second pass through set().

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "fseg/model.hpp"
#include "fseg/train.hpp"

namespace fseg {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig<float> train;

    static bool parse_bool(const std::string& key, const std::string& v) {
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ConfigError("config key " + key + ": expected boolean, got '" + v + "'");
    }

    void set(const std::string& key, const std::string& value) {
        auto u = [&](size_t& dst) { dst = parse_size(key, value); };
        if (key == "channels1") u(model.channels[0]);
        else if (key == "channels2") u(model.channels[1]);
        else if (key == "channels3") u(model.channels[2]);
        else if (key == "channels4") u(model.channels[3]);
        else if (key == "blocks_per_stage") u(model.blocks_per_stage);
        else if (key == "input_h") u(model.input_h);
        else if (key == "input_w") u(model.input_w);
        else if (key == "decoder_width") u(model.cd);
        else if (key == "ca_reduction") u(model.ca_reduction);
        else if (key == "eca_kernel") u(model.eca_kernel);
        else if (key == "fam_dim") u(model.fam_dim);
        else if (key == "fam_window") u(model.fam_window);
        else if (key == "fam_pool") u(model.fam_pool);
        else if (key == "fam_heads") u(model.fam_heads);
        else if (key == "fam_dropout") model.fam_dropout = parse_real(key, value);
        else if (key == "fam_scale_logits") model.fam_scale_logits = parse_bool(key, value);
        else if (key == "dem_eca_first") model.dem_eca_first = parse_bool(key, value);
        else if (key == "lr") train.lr = parse_real(key, value);
        else if (key == "batch") u(train.batch);
        else if (key == "max_epochs") u(train.max_epochs);
        else if (key == "patience") u(train.patience);
        else if (key == "seed") train.seed = (uint64_t)parse_size(key, value);
        else if (key == "augment") train.augment_enabled = parse_bool(key, value);
        else if (key == "w_p1") train.head_weights[0] = (float)parse_real(key, value);
        else if (key == "w_p2") train.head_weights[1] = (float)parse_real(key, value);
        else if (key == "w_p3") train.head_weights[2] = (float)parse_real(key, value);
        else if (key == "w_p4") train.head_weights[3] = (float)parse_real(key, value);
        else if (key == "w_phat") train.head_weights[4] = (float)parse_real(key, value);
        else throw ConfigError("unknown config key: " + key);
    }

    static size_t parse_size(const std::string& key, const std::string& v) {
        try {
            size_t pos = 0;
            const unsigned long long n = std::stoull(v, &pos);
            if (pos != v.size()) throw std::invalid_argument("");
            return (size_t)n;
        } catch (...) {
            throw ConfigError("config key " + key + ": expected nonnegative integer, got '" + v + "'");
        }
    }

    static double parse_real(const std::string& key, const std::string& v) {
        try {
            size_t pos = 0;
            const double d = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument("");
            return d;
        } catch (...) {
            throw ConfigError("config key " + key + ": expected real number, got '" + v + "'");
        }
    }

    void load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        load_stream(in, path);
    }

    void load_string(const std::string& text, const std::string& origin = "<string>") {
        std::istringstream in(text);
        load_stream(in, origin);
    }

    void load_stream(std::istream& in, const std::string& path) {
        std::string line;
        size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const size_t hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            size_t a = line.find_first_not_of(" \t\r");
            if (a == std::string::npos) continue;
            size_t b = line.find_last_not_of(" \t\r");
            line = line.substr(a, b - a + 1);
            const size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
            std::string key = line.substr(0, eq), value = line.substr(eq + 1);
            auto trim = [](std::string& s) {
                const size_t x = s.find_first_not_of(" \t");
                const size_t y = s.find_last_not_of(" \t");
                s = x == std::string::npos ? "" : s.substr(x, y - x + 1);
            };
            trim(key);
            trim(value);
            set(key, value);
        }
    }

    // effective config, echoed verbatim into run output directories
    std::string echo() const {
        std::ostringstream os;
        os << "channels1=" << model.channels[0] << "\n"
           << "channels2=" << model.channels[1] << "\n"
           << "channels3=" << model.channels[2] << "\n"
           << "channels4=" << model.channels[3] << "\n"
           << "blocks_per_stage=" << model.blocks_per_stage << "\n"
           << "input_h=" << model.input_h << "\n"
           << "input_w=" << model.input_w << "\n"
           << "decoder_width=" << model.cd << "\n"
           << "ca_reduction=" << model.ca_reduction << "\n"
           << "eca_kernel=" << model.eca_kernel << "\n"
           << "fam_dim=" << model.fam_dim << "\n"
           << "fam_window=" << model.fam_window << "\n"
           << "fam_pool=" << model.fam_pool << "\n"
           << "fam_heads=" << model.fam_heads << "\n"
           << "fam_dropout=" << model.fam_dropout << "\n"
           << "fam_scale_logits=" << (model.fam_scale_logits ? "true" : "false") << "\n"
           << "dem_eca_first=" << (model.dem_eca_first ? "true" : "false") << "\n"
           << "lr=" << train.lr << "\n"
           << "batch=" << train.batch << "\n"
           << "max_epochs=" << train.max_epochs << "\n"
           << "patience=" << train.patience << "\n"
           << "seed=" << train.seed << "\n"
           << "augment=" << (train.augment_enabled ? "true" : "false") << "\n"
           << "w_p1=" << train.head_weights[0] << "\n"
           << "w_p2=" << train.head_weights[1] << "\n"
           << "w_p3=" << train.head_weights[2] << "\n"
           << "w_p4=" << train.head_weights[3] << "\n"
           << "w_phat=" << train.head_weights[4] << "\n";
        return os.str();
    }
};

}  // namespace fseg
