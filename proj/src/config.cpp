#include "csc/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace csc::config {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

real_t parse_real(const std::string& section, const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return static_cast<real_t>(d);
    } catch (const std::exception&) {
        throw ConfigError("[" + section + "] " + key + ": bad number '" + v + "'");
    }
}

std::int64_t parse_int(const std::string& section, const std::string& key,
                       const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long i = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return i;
    } catch (const std::exception&) {
        throw ConfigError("[" + section + "] " + key + ": bad integer '" + v + "'");
    }
}

bool parse_bool(const std::string& section, const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("[" + section + "] " + key + ": bad boolean '" + v + "'");
}

} // namespace

Ini Ini::parse(const std::string& text) {
    Ini ini;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError("line " + std::to_string(lineno) + ": unterminated section");
            }
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) {
                throw ConfigError("line " + std::to_string(lineno) + ": empty section name");
            }
            ini.sections_[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        }
        if (section.empty()) {
            throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        ini.sections_[section][key] = trim(line.substr(eq + 1));
    }
    return ini;
}

Ini Ini::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return parse(os.str());
}

bool Ini::has(const std::string& section, const std::string& key) const {
    auto it = sections_.find(section);
    return it != sections_.end() && it->second.count(key) > 0;
}

std::optional<std::string> Ini::get(const std::string& section, const std::string& key) const {
    auto it = sections_.find(section);
    if (it == sections_.end()) return std::nullopt;
    auto kv = it->second.find(key);
    if (kv == it->second.end()) return std::nullopt;
    return kv->second;
}

void Ini::set(const std::string& section, const std::string& key, const std::string& value) {
    sections_[section][key] = value;
}

namespace {

net::LayerDesc parse_layer(const std::string& value) {
    // Tokens: out:<n> k:<n> s:<n> p:<n> enc:<norm+act> dec:<norm+act>
    net::LayerDesc l;
    bool saw_out = false;
    std::istringstream in(value);
    std::string tok;
    auto parse_decor = [](const std::string& v, net::Norm& norm, net::Act& act) {
        const auto plus = v.find('+');
        if (plus != std::string::npos) {
            norm = net::norm_from_string(v.substr(0, plus));
            act = net::act_from_string(v.substr(plus + 1));
        } else if (v == "bn") {
            norm = net::Norm::Batch;
            act = net::Act::None;
        } else {
            norm = net::Norm::None;
            act = net::act_from_string(v);
        }
    };
    while (in >> tok) {
        const auto colon = tok.find(':');
        if (colon == std::string::npos) throw ConfigError("layer token '" + tok + "'");
        const std::string key = tok.substr(0, colon);
        const std::string v = tok.substr(colon + 1);
        if (key == "out") l.out_channels = parse_int("arch", "layer", v);
        else if (key == "k") l.kernel = parse_int("arch", "layer", v);
        else if (key == "s") l.stride = parse_int("arch", "layer", v);
        else if (key == "p") l.padding = parse_int("arch", "layer", v);
        else if (key == "enc") parse_decor(v, l.enc_norm, l.enc_act);
        else if (key == "dec") parse_decor(v, l.dec_norm, l.dec_act);
        else throw ConfigError("layer token key '" + key + "'");
        if (key == "out") saw_out = true;
    }
    if (!saw_out) throw ConfigError("layer spec missing out:<channels>");
    return l;
}

} // namespace

RunConfig RunConfig::from_ini(const Ini& ini) {
    RunConfig rc;
    for (const auto& [section, kv] : ini.sections()) {
        if (section == "train") {
            for (const auto& [key, v] : kv) {
                if (key == "strategy") rc.train.strategy = static_cast<int>(parse_int(section, key, v));
                else if (key == "lr") { rc.train.lr_max = parse_real(section, key, v); rc.train.lr_min = rc.train.lr_max; }
                else if (key == "lr_max") rc.train.lr_max = parse_real(section, key, v);
                else if (key == "lr_min") rc.train.lr_min = parse_real(section, key, v);
                else if (key == "beta1") rc.train.beta1 = parse_real(section, key, v);
                else if (key == "beta2") rc.train.beta2 = parse_real(section, key, v);
                else if (key == "adam_eps") rc.train.adam_eps = parse_real(section, key, v);
                else if (key == "batch_size") rc.train.batch_size = parse_int(section, key, v);
                else if (key == "steps") rc.train.steps = parse_int(section, key, v);
                else if (key == "seed") rc.train.seed = static_cast<std::uint64_t>(parse_int(section, key, v));
                else if (key == "lipschitz_refresh") rc.train.lipschitz_refresh = static_cast<int>(parse_int(section, key, v));
                else if (key == "ascent_first_pass_only") rc.train.ascent_first_pass_only = parse_bool(section, key, v);
                else if (key == "checkpoint_every") rc.train.checkpoint_every = parse_int(section, key, v);
                else if (key == "timing") rc.train.timing = parse_bool(section, key, v);
                else throw ConfigError("[train] unknown key '" + key + "'");
            }
        } else if (section == "arch") {
            std::vector<std::pair<int, net::LayerDesc>> layers;
            bool custom = false;
            for (const auto& [key, v] : kv) {
                if (key == "preset") rc.arch = net::ArchitectureSpec::preset(v);
                else if (key == "name") { rc.arch.name = v; custom = true; }
                else if (key == "in_channels") { rc.arch.in_channels = parse_int(section, key, v); custom = true; }
                else if (key == "input_size") { rc.arch.input_size = parse_int(section, key, v); custom = true; }
                else if (key.rfind("layer", 0) == 0) {
                    layers.emplace_back(static_cast<int>(parse_int(section, key, key.substr(5))),
                                        parse_layer(v));
                    custom = true;
                } else {
                    throw ConfigError("[arch] unknown key '" + key + "'");
                }
            }
            if (!layers.empty()) {
                std::sort(layers.begin(), layers.end(),
                          [](const auto& a, const auto& b) { return a.first < b.first; });
                rc.arch.layers.clear();
                for (auto& [idx, l] : layers) rc.arch.layers.push_back(l);
            }
            if (custom && rc.arch.name.empty()) rc.arch.name = "custom";
        } else if (section == "fista") {
            for (const auto& [key, v] : kv) {
                if (key == "lambda") rc.fista.lambda = parse_real(section, key, v);
                else if (key == "iterations") rc.fista.iterations = static_cast<int>(parse_int(section, key, v));
                else if (key == "step_size") rc.fista.step_size = v == "auto" ? 0 : parse_real(section, key, v);
                else if (key == "power_iters") rc.fista.power_iters = static_cast<int>(parse_int(section, key, v));
                else throw ConfigError("[fista] unknown key '" + key + "'");
            }
        } else if (section == "rate") {
            for (const auto& [key, v] : kv) {
                if (key == "eps_sq") rc.train.rate.eps_sq = parse_real(section, key, v);
                else throw ConfigError("[rate] unknown key '" + key + "'");
            }
        } else if (section == "data") {
            for (const auto& [key, v] : kv) {
                if (key == "source") rc.data.source = v;
                else if (key == "path") rc.data.path = v;
                else if (key == "count") rc.data.count = parse_int(section, key, v);
                else if (key == "density") rc.data.density = parse_real(section, key, v);
                else if (key == "noise_std") rc.data.noise_std = parse_real(section, key, v);
                else if (key == "magnitude") rc.data.magnitude = v;
                else if (key == "seed") rc.data.data_seed = static_cast<std::uint64_t>(parse_int(section, key, v));
                else throw ConfigError("[data] unknown key '" + key + "'");
            }
            if (rc.data.source != "synthetic" && rc.data.source != "cifar") {
                throw ConfigError("[data] source must be synthetic or cifar");
            }
            if (rc.data.magnitude != "normal" && rc.data.magnitude != "uniform") {
                throw ConfigError("[data] magnitude must be normal or uniform");
            }
        } else {
            throw ConfigError("unknown section [" + section + "]");
        }
    }
    rc.arch.validate();
    rc.fista.validate();
    rc.train.validate();
    return rc;
}

std::string RunConfig::to_ini() const {
    std::ostringstream os;
    char buf[64];
    auto num = [&buf](real_t v) {
        std::snprintf(buf, sizeof(buf), "%.17g", static_cast<double>(v));
        return std::string(buf);
    };
    os << "[train]\n";
    os << "strategy = " << train.strategy << '\n';
    os << "lr_max = " << num(train.lr_max) << '\n';
    os << "lr_min = " << num(train.lr_min) << '\n';
    os << "beta1 = " << num(train.beta1) << '\n';
    os << "beta2 = " << num(train.beta2) << '\n';
    os << "adam_eps = " << num(train.adam_eps) << '\n';
    os << "batch_size = " << train.batch_size << '\n';
    os << "steps = " << train.steps << '\n';
    os << "seed = " << train.seed << '\n';
    os << "lipschitz_refresh = " << train.lipschitz_refresh << '\n';
    os << "ascent_first_pass_only = " << (train.ascent_first_pass_only ? "true" : "false") << '\n';
    os << "checkpoint_every = " << train.checkpoint_every << '\n';
    os << "timing = " << (train.timing ? "true" : "false") << '\n';
    os << "\n[arch]\n";
    os << "name = " << arch.name << '\n';
    os << "in_channels = " << arch.in_channels << '\n';
    os << "input_size = " << arch.input_size << '\n';
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const auto& l = arch.layers[i];
        os << "layer" << i + 1 << " = out:" << l.out_channels << " k:" << l.kernel
           << " s:" << l.stride << " p:" << l.padding << " enc:" << net::to_string(l.enc_norm)
           << '+' << net::to_string(l.enc_act) << " dec:" << net::to_string(l.dec_norm) << '+'
           << net::to_string(l.dec_act) << '\n';
    }
    os << "\n[fista]\n";
    os << "lambda = " << num(fista.lambda) << '\n';
    os << "iterations = " << fista.iterations << '\n';
    if (fista.step_size > 0) {
        os << "step_size = " << num(fista.step_size) << '\n';
    } else {
        os << "step_size = auto\n";
    }
    os << "power_iters = " << fista.power_iters << '\n';
    os << "\n[rate]\n";
    os << "eps_sq = " << num(train.rate.eps_sq) << '\n';
    os << "\n[data]\n";
    os << "source = " << data.source << '\n';
    if (!data.path.empty()) os << "path = " << data.path << '\n';
    os << "count = " << data.count << '\n';
    os << "density = " << num(data.density) << '\n';
    os << "noise_std = " << num(data.noise_std) << '\n';
    os << "magnitude = " << data.magnitude << '\n';
    os << "seed = " << data.data_seed << '\n';
    return os.str();
}

} // namespace csc::config
