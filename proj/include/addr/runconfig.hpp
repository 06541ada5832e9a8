#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "addr/data.hpp"
#include "addr/trainer.hpp"

namespace addr {

// Effective run configuration for the CLI: trainer + synthetic spec + paths,
// assembled from defaults, a flat `key = value` config file and command-line
// overrides, in that order. Unknown keys are rejected.
struct RunConfig {
    TrainerConfig trainer;
    SyntheticSpec synth;
    SplitFractions fractions;
    uint64_t split_seed = 13;
    std::string dataset_prefix;
    std::string checkpoint_path;
    std::string log_path;
    std::string report_path;
    std::string report_dir = ".";
    std::string eval_split = "test";
    int eval_folds = 0;
    std::string ablate_variants = "base,united,multiple,addr";
    std::string ablate_seeds = "1,2,3,4,5";
    int check_instances = 100;
    uint64_t check_seed = 20240501;
    double check_tolerance = 1e-4;
};

namespace detail {
inline std::string trim(const std::string& s) {
    const size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}
}  // namespace detail

inline bool apply_synth_key(SyntheticSpec& s, const std::string& key, const std::string& value) {
    using namespace detail;
    if (key == "synth.concepts") s.concepts = static_cast<int>(parse_int(key, value));
    else if (key == "synth.images_per_concept") s.images_per_concept = static_cast<int>(parse_int(key, value));
    else if (key == "synth.captions_per_image") s.captions_per_image = static_cast<int>(parse_int(key, value));
    else if (key == "synth.regions") s.regions_per_image = static_cast<int>(parse_int(key, value));
    else if (key == "synth.words") s.words_per_caption = static_cast<int>(parse_int(key, value));
    else if (key == "synth.raw_dim_img") s.raw_dim_img = static_cast<int>(parse_int(key, value));
    else if (key == "synth.raw_dim_txt") s.raw_dim_txt = static_cast<int>(parse_int(key, value));
    else if (key == "synth.latent_dim") s.latent_dim = static_cast<int>(parse_int(key, value));
    else if (key == "synth.noise") s.noise_intra = parse_double(key, value);
    else if (key == "synth.separation") s.separation = parse_double(key, value);
    else if (key == "synth.image_jitter") s.image_jitter = parse_double(key, value);
    else if (key == "synth.modality_gap") s.modality_gap = parse_double(key, value);
    else if (key == "synth.overlap") s.distractor_overlap = parse_double(key, value);
    else if (key == "synth.seed") s.seed = parse_u64(key, value);
    else return false;
    return true;
}

inline void apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    using namespace detail;
    if (apply_trainer_key(cfg.trainer, key, value)) return;
    if (apply_synth_key(cfg.synth, key, value)) return;
    if (key == "data.train_frac") cfg.fractions.train = parse_double(key, value);
    else if (key == "data.val_frac") cfg.fractions.val = parse_double(key, value);
    else if (key == "data.test_frac") cfg.fractions.test = parse_double(key, value);
    else if (key == "data.split_seed") cfg.split_seed = parse_u64(key, value);
    else if (key == "io.dataset") cfg.dataset_prefix = value;
    else if (key == "io.checkpoint") cfg.checkpoint_path = value;
    else if (key == "io.log") cfg.log_path = value;
    else if (key == "io.report") cfg.report_path = value;
    else if (key == "io.report_dir") cfg.report_dir = value;
    else if (key == "eval.split") cfg.eval_split = value;
    else if (key == "eval.folds") cfg.eval_folds = static_cast<int>(parse_int(key, value));
    else if (key == "ablate.variants") cfg.ablate_variants = value;
    else if (key == "ablate.seeds") cfg.ablate_seeds = value;
    else if (key == "check.instances") cfg.check_instances = static_cast<int>(parse_int(key, value));
    else if (key == "check.seed") cfg.check_seed = parse_u64(key, value);
    else if (key == "check.tolerance") cfg.check_tolerance = parse_double(key, value);
    else throw ConfigError("unknown config key: " + key);
}

// `key = value` per line; '#' starts a comment; blank lines ignored.
inline void apply_config_line(RunConfig& cfg, const std::string& raw_line, int lineno) {
    std::string line = raw_line;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) return;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
        throw ConfigError("config line " + std::to_string(lineno) + ": empty key or value");
    apply_key(cfg, key, value);
}

inline void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) apply_config_line(cfg, line, ++lineno);
}

// "key=value" as passed on the command line.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override must look like key=value: " + assignment);
    const std::string key = detail::trim(assignment.substr(0, eq));
    const std::string value = detail::trim(assignment.substr(eq + 1));
    if (key.empty() || value.empty()) throw ConfigError("override must look like key=value: " + assignment);
    apply_key(cfg, key, value);
}

// The echoed effective configuration: sorted, full precision, hashable.
inline std::string run_config_text(const RunConfig& c) {
    std::map<std::string, std::string> kv;
    {
        std::istringstream ts(config_text(c.trainer));
        std::string line;
        while (std::getline(ts, line)) {
            const size_t eq = line.find('=');
            if (eq != std::string::npos)
                kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
        }
    }
    kv["synth.concepts"] = std::to_string(c.synth.concepts);
    kv["synth.images_per_concept"] = std::to_string(c.synth.images_per_concept);
    kv["synth.captions_per_image"] = std::to_string(c.synth.captions_per_image);
    kv["synth.regions"] = std::to_string(c.synth.regions_per_image);
    kv["synth.words"] = std::to_string(c.synth.words_per_caption);
    kv["synth.raw_dim_img"] = std::to_string(c.synth.raw_dim_img);
    kv["synth.raw_dim_txt"] = std::to_string(c.synth.raw_dim_txt);
    kv["synth.latent_dim"] = std::to_string(c.synth.latent_dim);
    kv["synth.noise"] = detail::fmt_double(c.synth.noise_intra);
    kv["synth.separation"] = detail::fmt_double(c.synth.separation);
    kv["synth.image_jitter"] = detail::fmt_double(c.synth.image_jitter);
    kv["synth.modality_gap"] = detail::fmt_double(c.synth.modality_gap);
    kv["synth.overlap"] = detail::fmt_double(c.synth.distractor_overlap);
    kv["synth.seed"] = std::to_string(c.synth.seed);
    kv["data.train_frac"] = detail::fmt_double(c.fractions.train);
    kv["data.val_frac"] = detail::fmt_double(c.fractions.val);
    kv["data.test_frac"] = detail::fmt_double(c.fractions.test);
    kv["data.split_seed"] = std::to_string(c.split_seed);
    kv["eval.split"] = c.eval_split;
    kv["eval.folds"] = std::to_string(c.eval_folds);
    std::ostringstream os;
    for (const auto& [k, v] : kv) os << k << " = " << v << '\n';
    return os.str();
}

inline uint64_t run_config_hash(const RunConfig& c) { return hash_string(run_config_text(c)); }

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        tok = detail::trim(tok);
        if (!tok.empty()) out.push_back(tok);
    }
    return out;
}

}  // namespace addr
