#pragma once

#include <map>
#include <string>
#include <vector>

#include "toprank/trainer.hpp"

namespace toprank {

// A fully resolved experiment description: where the prepared split lives,
// how to train, and where to write artifacts.
struct ExperimentSpec {
    std::string split_dir;
    double noise_ratio = 0.0;  // false-positive injection ratio, 0 disables
    TrainConfig train;
    std::string out_dir;
};

// Flat "section.key" -> value map parsed from a spec file.
using KeyValues = std::map<std::string, std::string>;

// Parses INI-like text: [section] headers, key = value lines, '#' comments.
// Throws std::runtime_error with a line number on malformed input.
KeyValues parse_spec_text(const std::string& text);

KeyValues load_spec_keys(const std::string& path);

// Applies environment overrides: TOPRANK_TRAIN_LR=0.1 overrides "train.lr".
void apply_env_overrides(KeyValues& keys, const std::string& prefix = "TOPRANK_");

// Expands comma-separated values of grid-able hyperparameter keys into the
// cross product of single-valued key maps, in deterministic key order.
std::vector<KeyValues> expand_grid(const KeyValues& keys);

// True when the keys contain a comma list on at least one grid-able key.
bool is_grid(const KeyValues& keys);

// Short label such as "lr=0.1,tau_w=3" naming one grid combination.
std::string grid_label(const KeyValues& base, const KeyValues& combo);

// Materializes a spec from single-valued keys; unknown keys and malformed
// values produce field-level errors.
ExperimentSpec spec_from_keys(const KeyValues& keys);

// Serializes a spec with every default materialized, so saved runs are
// self-describing. Round-trips through parse_spec_text/spec_from_keys.
std::string resolved_spec_text(const ExperimentSpec& spec);

}  // namespace toprank
