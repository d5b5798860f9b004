#include "modfuser/config.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "modfuser/model.hpp"

namespace modfuser {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(int line, const std::string& msg) {
    throw ConfigError("config line " + std::to_string(line) + ": " + msg);
}

long long to_ll(const std::string& v, int line, const std::string& key) {
    errno = 0;
    char* end = nullptr;
    const long long out = std::strtoll(v.c_str(), &end, 10);
    if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE)
        fail(line, "key '" + key + "' needs an integer, got '" + v + "'");
    return out;
}

int to_int(const std::string& v, int line, const std::string& key) {
    const long long out = to_ll(v, line, key);
    if (out < std::numeric_limits<int>::min() || out > std::numeric_limits<int>::max())
        fail(line, "key '" + key + "' is out of int range");
    return static_cast<int>(out);
}

std::uint64_t to_u64(const std::string& v, int line, const std::string& key) {
    errno = 0;
    char* end = nullptr;
    const unsigned long long out = std::strtoull(v.c_str(), &end, 10);
    if (v.empty() || v[0] == '-' || end != v.c_str() + v.size() || errno == ERANGE)
        fail(line, "key '" + key + "' needs an unsigned integer, got '" + v + "'");
    return out;
}

double to_double(const std::string& v, int line, const std::string& key) {
    errno = 0;
    char* end = nullptr;
    const double out = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE)
        fail(line, "key '" + key + "' needs a number, got '" + v + "'");
    return out;
}

bool to_bool(const std::string& v, int line, const std::string& key) {
    if (v == "true") return true;
    if (v == "false") return false;
    fail(line, "key '" + key + "' needs true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v, int line, const std::string& key) {
    std::vector<std::string> out;
    std::string item;
    std::stringstream ss(v);
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) fail(line, "key '" + key + "' has an empty list element");
        out.push_back(item);
    }
    if (out.empty()) fail(line, "key '" + key + "' needs a non-empty list");
    return out;
}

std::vector<double> split_doubles(const std::string& v, int line, const std::string& key) {
    std::vector<double> out;
    for (const std::string& item : split_list(v, line, key))
        out.push_back(to_double(item, line, key));
    return out;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::map<std::string, std::vector<double>> tables;  // explicit table_<name>
    bool names_given = false;
    std::set<std::string> seen;
    std::string section;
    std::stringstream ss(text);
    std::string raw;
    int line = 0;
    while (std::getline(ss, raw)) {
        ++line;
        const std::string s = trim(raw);
        if (s.empty() || s[0] == '#') continue;
        if (s[0] == '[') {
            if (s.back() != ']' || s.size() < 3) fail(line, "malformed section header '" + s + "'");
            section = s.substr(1, s.size() - 2);
            if (section != "phantom" && section != "gen" && section != "split" &&
                section != "train" && section != "paths")
                fail(line, "unknown section [" + section + "]");
            continue;
        }
        const std::size_t eq = s.find('=');
        if (eq == std::string::npos) fail(line, "expected key = value, got '" + s + "'");
        const std::string key = trim(s.substr(0, eq));
        const std::string value = trim(s.substr(eq + 1));
        if (key.empty()) fail(line, "empty key");
        if (section.empty()) fail(line, "key '" + key + "' appears before any [section]");
        if (!seen.insert(section + "." + key).second)
            fail(line, "duplicate key '" + key + "' in [" + section + "]");

        if (section == "phantom") {
            if (key == "seed") cfg.phantom.seed = to_u64(value, line, key);
            else if (key == "size") cfg.phantom.size = to_int(value, line, key);
            else if (key == "min_ellipses") cfg.phantom.min_ellipses = to_int(value, line, key);
            else if (key == "max_ellipses") cfg.phantom.max_ellipses = to_int(value, line, key);
            else if (key == "lesion_prob") cfg.phantom.lesion_prob = to_double(value, line, key);
            else if (key == "noise_sigma") cfg.phantom.noise_sigma = to_double(value, line, key);
            else if (key == "modalities") {
                cfg.phantom.modality_names = split_list(value, line, key);
                names_given = true;
            } else if (key.rfind("table_", 0) == 0) {
                tables[key.substr(6)] = split_doubles(value, line, key);
            } else fail(line, "unknown key '" + key + "' in [phantom]");
        } else if (section == "gen") {
            if (key == "subjects") cfg.gen.subjects = to_int(value, line, key);
            else if (key == "slices") cfg.gen.slices = to_int(value, line, key);
            else if (key == "min_foreground") cfg.gen.min_foreground = to_int(value, line, key);
            else fail(line, "unknown key '" + key + "' in [gen]");
        } else if (section == "split") {
            if (key == "train_frac") cfg.split.train_frac = to_double(value, line, key);
            else if (key == "val_frac") cfg.split.val_frac = to_double(value, line, key);
            else if (key == "test_frac") cfg.split.test_frac = to_double(value, line, key);
            else if (key == "seed") cfg.split.seed = to_u64(value, line, key);
            else fail(line, "unknown key '" + key + "' in [split]");
        } else if (section == "train") {
            if (key == "epochs") cfg.train.epochs = to_int(value, line, key);
            else if (key == "batch") cfg.train.batch = to_int(value, line, key);
            else if (key == "lr_g") cfg.train.lr_g = to_double(value, line, key);
            else if (key == "lr_d") cfg.train.lr_d = to_double(value, line, key);
            else if (key == "alpha") cfg.train.weights.alpha = to_double(value, line, key);
            else if (key == "beta") cfg.train.weights.beta = to_double(value, line, key);
            else if (key == "gamma") cfg.train.weights.gamma = to_double(value, line, key);
            else if (key == "lambda1") cfg.train.weights.lambda1 = to_double(value, line, key);
            else if (key == "lambda2") cfg.train.weights.lambda2 = to_double(value, line, key);
            else if (key == "mode") {
                const auto mode = parse_me_mode(value);
                if (!mode)
                    fail(line, "unknown mode '" + value +
                                   "' (single, consecutive, learnable, learnable-high-rec)");
                cfg.train.mode = *mode;
            } else if (key == "me_classic") cfg.train.me_classic = to_bool(value, line, key);
            else if (key == "channels") cfg.train.channels = to_int(value, line, key);
            else if (key == "depth") cfg.train.depth = to_int(value, line, key);
            else if (key == "heads") cfg.train.heads = to_int(value, line, key);
            else if (key == "seed") cfg.train.seed = to_u64(value, line, key);
            else if (key == "checkpoint_every") cfg.train.checkpoint_every = to_int(value, line, key);
            else if (key == "clip_norm") cfg.train.clip_norm = to_double(value, line, key);
            else if (key == "disen_detach") cfg.train.disen_detach = to_bool(value, line, key);
            else if (key == "max_steps_per_epoch")
                cfg.train.max_steps_per_epoch = to_int(value, line, key);
            else if (key == "val_max_slices") cfg.train.val_max_slices = to_int(value, line, key);
            else if (key == "deterministic") cfg.train.deterministic = to_bool(value, line, key);
            else fail(line, "unknown key '" + key + "' in [train]");
        } else {  // paths
            if (key == "data") cfg.paths.data = value;
            else if (key == "out") cfg.paths.out = value;
            else if (key == "ckpt") cfg.paths.ckpt = value;
            else if (key == "resume") cfg.paths.resume = value;
            else fail(line, "unknown key '" + key + "' in [paths]");
        }
    }

    if (names_given || !tables.empty())
        cfg.phantom.transfer_tables = resolve_transfer_tables(cfg.phantom.modality_names, tables);
    return cfg;
}

std::vector<std::vector<double>> resolve_transfer_tables(
    const std::vector<std::string>& names,
    const std::map<std::string, std::vector<double>>& explicit_tables) {
    const auto defaults = PhantomSpec::default_transfer_tables();
    std::vector<std::vector<double>> resolved;
    for (std::size_t i = 0; i < names.size(); ++i) {
        const auto it = explicit_tables.find(names[i]);
        if (it != explicit_tables.end()) resolved.push_back(it->second);
        else if (i < defaults.size()) resolved.push_back(defaults[i]);
        else
            throw ConfigError("config: modality '" + names[i] + "' needs an explicit table_" +
                              names[i] + " key");
    }
    for (const auto& [name, table] : explicit_tables) {
        (void)table;
        bool known = false;
        for (const auto& n : names) known = known || n == name;
        if (!known) throw ConfigError("config: table_" + name + " names no modality in the list");
    }
    return resolved;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string join_doubles(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += fmt(v[i]);
    }
    return out;
}

}  // namespace

std::string render_config(const RunConfig& cfg) {
    std::ostringstream out;
    out << "[phantom]\n";
    out << "seed = " << cfg.phantom.seed << "\n";
    out << "size = " << cfg.phantom.size << "\n";
    out << "min_ellipses = " << cfg.phantom.min_ellipses << "\n";
    out << "max_ellipses = " << cfg.phantom.max_ellipses << "\n";
    out << "lesion_prob = " << fmt(cfg.phantom.lesion_prob) << "\n";
    out << "noise_sigma = " << fmt(cfg.phantom.noise_sigma) << "\n";
    out << "modalities = ";
    for (std::size_t i = 0; i < cfg.phantom.modality_names.size(); ++i)
        out << (i ? "," : "") << cfg.phantom.modality_names[i];
    out << "\n";
    for (std::size_t i = 0; i < cfg.phantom.modality_names.size() &&
                            i < cfg.phantom.transfer_tables.size();
         ++i)
        out << "table_" << cfg.phantom.modality_names[i] << " = "
            << join_doubles(cfg.phantom.transfer_tables[i]) << "\n";
    out << "\n[gen]\n";
    out << "subjects = " << cfg.gen.subjects << "\n";
    out << "slices = " << cfg.gen.slices << "\n";
    out << "min_foreground = " << cfg.gen.min_foreground << "\n";
    out << "\n[split]\n";
    out << "train_frac = " << fmt(cfg.split.train_frac) << "\n";
    out << "val_frac = " << fmt(cfg.split.val_frac) << "\n";
    out << "test_frac = " << fmt(cfg.split.test_frac) << "\n";
    out << "seed = " << cfg.split.seed << "\n";
    out << "\n[train]\n";
    out << "epochs = " << cfg.train.epochs << "\n";
    out << "batch = " << cfg.train.batch << "\n";
    out << "lr_g = " << fmt(cfg.train.lr_g) << "\n";
    out << "lr_d = " << fmt(cfg.train.lr_d) << "\n";
    out << "alpha = " << fmt(cfg.train.weights.alpha) << "\n";
    out << "beta = " << fmt(cfg.train.weights.beta) << "\n";
    out << "gamma = " << fmt(cfg.train.weights.gamma) << "\n";
    out << "lambda1 = " << fmt(cfg.train.weights.lambda1) << "\n";
    out << "lambda2 = " << fmt(cfg.train.weights.lambda2) << "\n";
    out << "mode = " << me_mode_name(cfg.train.mode) << "\n";
    out << "me_classic = " << (cfg.train.me_classic ? "true" : "false") << "\n";
    out << "channels = " << cfg.train.channels << "\n";
    out << "depth = " << cfg.train.depth << "\n";
    out << "heads = " << cfg.train.heads << "\n";
    out << "seed = " << cfg.train.seed << "\n";
    out << "checkpoint_every = " << cfg.train.checkpoint_every << "\n";
    out << "clip_norm = " << fmt(cfg.train.clip_norm) << "\n";
    out << "disen_detach = " << (cfg.train.disen_detach ? "true" : "false") << "\n";
    out << "max_steps_per_epoch = " << cfg.train.max_steps_per_epoch << "\n";
    out << "val_max_slices = " << cfg.train.val_max_slices << "\n";
    out << "deterministic = " << (cfg.train.deterministic ? "true" : "false") << "\n";
    out << "\n[paths]\n";
    out << "data = " << cfg.paths.data << "\n";
    out << "out = " << cfg.paths.out << "\n";
    out << "ckpt = " << cfg.paths.ckpt << "\n";
    out << "resume = " << cfg.paths.resume << "\n";
    return out.str();
}

}  // namespace modfuser
