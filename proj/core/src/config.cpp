#include "toprank/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

extern char** environ;

namespace toprank {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) parts.push_back(trim(part));
    return parts;
}

double parse_real(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("spec field '" + key + "': not a number: '" +
                                 value + "'");
    }
}

std::size_t parse_count(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(value, &pos);
        if (pos != value.size() || v < 0) throw std::invalid_argument("");
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw std::runtime_error("spec field '" + key +
                                 "': not a non-negative integer: '" + value + "'");
    }
}

// Keys whose values may be comma lists expanded into a grid.
const std::vector<std::string> kGridKeys = {
    "loss.k",      "loss.n",     "loss.t_beta",       "loss.tau_d",
    "loss.tau_w",  "train.lr",   "train.weight_decay"};

const char* short_name(const std::string& key) {
    const auto dot = key.find('.');
    return key.c_str() + (dot == std::string::npos ? 0 : dot + 1);
}

}  // namespace

KeyValues parse_spec_text(const std::string& text) {
    KeyValues keys;
    std::istringstream in(text);
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::runtime_error("spec line " + std::to_string(line_no) +
                                         ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw std::runtime_error("spec line " + std::to_string(line_no) +
                                         ": empty section name");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("spec line " + std::to_string(line_no) +
                                     ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw std::runtime_error("spec line " + std::to_string(line_no) +
                                     ": empty key");
        if (section.empty())
            throw std::runtime_error("spec line " + std::to_string(line_no) +
                                     ": key outside any [section]");
        keys[section + "." + key] = value;
    }
    return keys;
}

KeyValues load_spec_keys(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open spec file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_spec_text(buf.str());
}

void apply_env_overrides(KeyValues& keys, const std::string& prefix) {
    for (char** env = environ; env && *env; ++env) {
        const std::string entry(*env);
        const auto eq = entry.find('=');
        if (eq == std::string::npos) continue;
        std::string name = entry.substr(0, eq);
        if (name.rfind(prefix, 0) != 0) continue;
        name.erase(0, prefix.size());
        // TOPRANK_TRAIN_LR -> train.lr (first underscore splits the section).
        const auto us = name.find('_');
        if (us == std::string::npos) continue;
        std::string key = name.substr(0, us) + "." + name.substr(us + 1);
        std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) {
            return static_cast<char>(std::tolower(c));
        });
        keys[key] = entry.substr(eq + 1);
    }
}

bool is_grid(const KeyValues& keys) {
    for (const auto& key : kGridKeys) {
        const auto it = keys.find(key);
        if (it != keys.end() && it->second.find(',') != std::string::npos)
            return true;
    }
    return false;
}

std::vector<KeyValues> expand_grid(const KeyValues& keys) {
    std::vector<KeyValues> combos{keys};
    for (const auto& key : kGridKeys) {
        const auto it = keys.find(key);
        if (it == keys.end()) continue;
        const auto values = split_commas(it->second);
        if (values.size() <= 1) continue;
        std::vector<KeyValues> next;
        next.reserve(combos.size() * values.size());
        for (const auto& combo : combos)
            for (const auto& v : values) {
                next.push_back(combo);
                next.back()[key] = v;
            }
        combos = std::move(next);
    }
    return combos;
}

std::string grid_label(const KeyValues& base, const KeyValues& combo) {
    std::string label;
    for (const auto& key : kGridKeys) {
        const auto bit = base.find(key);
        if (bit == base.end() || bit->second.find(',') == std::string::npos)
            continue;
        if (!label.empty()) label += ',';
        label += std::string(short_name(key)) + "=" + combo.at(key);
    }
    return label;
}

ExperimentSpec spec_from_keys(const KeyValues& keys) {
    static const std::vector<std::string> known = {
        "dataset.split_dir", "dataset.noise_ratio",
        "model.d",           "model.score",
        "loss.variant",      "loss.tau_d",
        "loss.tau_w",        "loss.k",
        "loss.n",            "loss.t_beta",
        "train.lr",          "train.weight_decay",
        "train.epochs",      "train.batch_size",
        "train.seed",        "train.eval_every",
        "train.threads",     "eval.cutoffs",
        "output.dir"};
    for (const auto& [key, value] : keys)
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw std::runtime_error("spec field '" + key + "': unknown key");

    ExperimentSpec spec;
    auto get = [&](const std::string& key) -> const std::string* {
        const auto it = keys.find(key);
        return it == keys.end() ? nullptr : &it->second;
    };

    if (const auto* v = get("dataset.split_dir")) spec.split_dir = *v;
    if (const auto* v = get("dataset.noise_ratio"))
        spec.noise_ratio = parse_real("dataset.noise_ratio", *v);
    if (spec.noise_ratio < 0.0 || spec.noise_ratio >= 1.0)
        throw std::runtime_error("spec field 'dataset.noise_ratio': must be in [0, 1)");

    if (const auto* v = get("model.d"))
        spec.train.d = parse_count("model.d", *v);
    if (const auto* v = get("model.score")) {
        try {
            spec.train.score_kind = score_kind_from_string(*v);
        } catch (const std::exception&) {
            throw std::runtime_error("spec field 'model.score': unknown score kind: '" +
                                     *v + "'");
        }
    }

    if (const auto* v = get("loss.variant")) {
        try {
            spec.train.loss.variant = loss_variant_from_string(*v);
        } catch (const std::exception&) {
            throw std::runtime_error("spec field 'loss.variant': unknown loss variant: '" +
                                     *v + "'");
        }
    }
    if (const auto* v = get("loss.tau_d"))
        spec.train.loss.tau_d = parse_real("loss.tau_d", *v);
    if (const auto* v = get("loss.tau_w"))
        spec.train.loss.tau_w = parse_real("loss.tau_w", *v);
    if (const auto* v = get("loss.k")) spec.train.loss.k = parse_count("loss.k", *v);
    if (const auto* v = get("loss.n")) spec.train.loss.n = parse_count("loss.n", *v);
    if (const auto* v = get("loss.t_beta"))
        spec.train.loss.t_beta = parse_count("loss.t_beta", *v);

    if (const auto* v = get("train.lr")) spec.train.lr = parse_real("train.lr", *v);
    if (const auto* v = get("train.weight_decay"))
        spec.train.weight_decay = parse_real("train.weight_decay", *v);
    if (const auto* v = get("train.epochs"))
        spec.train.epochs = parse_count("train.epochs", *v);
    if (const auto* v = get("train.batch_size"))
        spec.train.batch_size = parse_count("train.batch_size", *v);
    if (const auto* v = get("train.seed"))
        spec.train.seed = parse_count("train.seed", *v);
    if (const auto* v = get("train.eval_every"))
        spec.train.eval_every = parse_count("train.eval_every", *v);
    if (const auto* v = get("train.threads"))
        spec.train.num_threads = parse_count("train.threads", *v);

    if (const auto* v = get("eval.cutoffs")) {
        spec.train.eval_cutoffs.clear();
        for (const auto& c : split_commas(*v))
            spec.train.eval_cutoffs.push_back(parse_count("eval.cutoffs", c));
        if (spec.train.eval_cutoffs.empty())
            throw std::runtime_error("spec field 'eval.cutoffs': empty list");
    }
    if (const auto* v = get("output.dir")) spec.out_dir = *v;

    try {
        spec.train.validate();
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("spec validation: ") + e.what());
    }
    return spec;
}

std::string resolved_spec_text(const ExperimentSpec& spec) {
    std::ostringstream out;
    out.precision(17);
    out << "[dataset]\n"
        << "split_dir = " << spec.split_dir << "\n"
        << "noise_ratio = " << spec.noise_ratio << "\n\n"
        << "[model]\n"
        << "d = " << spec.train.d << "\n"
        << "score = " << to_string(spec.train.score_kind) << "\n\n"
        << "[loss]\n"
        << "variant = " << to_string(spec.train.loss.variant) << "\n"
        << "tau_d = " << spec.train.loss.tau_d << "\n"
        << "tau_w = " << spec.train.loss.tau_w << "\n"
        << "k = " << spec.train.loss.k << "\n"
        << "n = " << spec.train.loss.n << "\n"
        << "t_beta = " << spec.train.loss.t_beta << "\n\n"
        << "[train]\n"
        << "lr = " << spec.train.lr << "\n"
        << "weight_decay = " << spec.train.weight_decay << "\n"
        << "epochs = " << spec.train.epochs << "\n"
        << "batch_size = " << spec.train.batch_size << "\n"
        << "seed = " << spec.train.seed << "\n"
        << "eval_every = " << spec.train.eval_every << "\n"
        << "threads = " << spec.train.num_threads << "\n\n"
        << "[eval]\n"
        << "cutoffs = ";
    for (std::size_t i = 0; i < spec.train.eval_cutoffs.size(); ++i)
        out << (i ? "," : "") << spec.train.eval_cutoffs[i];
    out << "\n\n[output]\ndir = " << spec.out_dir << "\n";
    return out.str();
}

}  // namespace toprank
