#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "addr/data.hpp"
#include "addr/discriminator.hpp"
#include "addr/encoders.hpp"
#include "addr/evaluation.hpp"
#include "addr/numerics.hpp"
#include "addr/regularizer.hpp"
#include "addr/similarity.hpp"

namespace addr {

// Training variants, mirroring the ablation ladder:
//   base     - triplet ranking only
//   united   - one shared domain discriminator, no regularization
//   multiple - one discriminator per pair, no regularization
//   addr     - per-pair discriminators plus the domain regularization hinges
enum class Variant : uint8_t { base = 0, united = 1, multiple = 2, addr = 3 };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::base: return "base";
        case Variant::united: return "united";
        case Variant::multiple: return "multiple";
        default: return "addr";
    }
}

inline Variant variant_from_name(const std::string& s) {
    if (s == "base") return Variant::base;
    if (s == "united") return Variant::united;
    if (s == "multiple") return Variant::multiple;
    if (s == "addr") return Variant::addr;
    throw ConfigError("unknown variant: " + s + " (expected base|united|multiple|addr)");
}

struct TrainerConfig {
    Variant variant = Variant::addr;
    double delta = 0.2;  // triplet margin
    double alpha = 0.05; // regularization margin
    double beta = 0.1;   // adversarial weight in the generator objective
    double gamma = 0.4;  // regularization weight in the discriminator objective
    double base_lr = 0.01;
    double lr_decay_ratio = 0.2;
    uint64_t lr_decay_interval = 8000;
    double lr_floor = 1e-5;
    int batch_size = 32;
    int epochs = 50;
    uint64_t seed = 1;
    double tau_init = 7.0;
    int embed_dim = 64;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    bool per_batch_phases = false;  // alternate per mini-batch instead of per epoch
    bool literal_eq9 = false;       // keep the duplicated q-domain hinge in L2
    int patience = 10;              // validation evals without rsum improvement; <=0 disables

    void validate() const {
        if (delta < 0 || alpha < 0 || beta < 0 || gamma < 0) throw ConfigError("trainer: weights must be >= 0");
        if (!(base_lr > 0) || !(lr_floor > 0)) throw ConfigError("trainer: learning rates must be positive");
        if (!(lr_decay_ratio > 0.0 && lr_decay_ratio <= 1.0)) throw ConfigError("trainer: decay ratio in (0,1]");
        if (lr_decay_interval < 1) throw ConfigError("trainer: decay interval must be >= 1");
        if (batch_size < 2) throw ConfigError("trainer: batch size must be >= 2");
        if (epochs < 1) throw ConfigError("trainer: epochs must be >= 1");
        if (embed_dim < 1) throw ConfigError("trainer: embedding dim must be >= 1");
        if (!(tau_init > 0)) throw ConfigError("trainer: tau must be positive");
        if (!(adam_beta1 > 0 && adam_beta1 < 1 && adam_beta2 > 0 && adam_beta2 < 1))
            throw ConfigError("trainer: adam betas must lie in (0,1)");
        if (!(adam_eps > 0)) throw ConfigError("trainer: adam eps must be positive");
    }
};

namespace detail {
inline std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}
}  // namespace detail

// Canonical flat key=value form, shared by config files, report echoes and
// checkpoints. Keys are sorted, doubles carry full precision.
inline std::string config_text(const TrainerConfig& c) {
    std::ostringstream os;
    os << "reg.alpha = " << detail::fmt_double(c.alpha) << '\n';
    os << "reg.gamma = " << detail::fmt_double(c.gamma) << '\n';
    os << "reg.literal_eq9 = " << (c.literal_eq9 ? "true" : "false") << '\n';
    os << "trainer.adam_beta1 = " << detail::fmt_double(c.adam_beta1) << '\n';
    os << "trainer.adam_beta2 = " << detail::fmt_double(c.adam_beta2) << '\n';
    os << "trainer.adam_eps = " << detail::fmt_double(c.adam_eps) << '\n';
    os << "trainer.batch_size = " << c.batch_size << '\n';
    os << "trainer.beta = " << detail::fmt_double(c.beta) << '\n';
    os << "trainer.delta = " << detail::fmt_double(c.delta) << '\n';
    os << "trainer.dim = " << c.embed_dim << '\n';
    os << "trainer.epochs = " << c.epochs << '\n';
    os << "trainer.lr = " << detail::fmt_double(c.base_lr) << '\n';
    os << "trainer.lr_decay_interval = " << c.lr_decay_interval << '\n';
    os << "trainer.lr_decay_ratio = " << detail::fmt_double(c.lr_decay_ratio) << '\n';
    os << "trainer.lr_floor = " << detail::fmt_double(c.lr_floor) << '\n';
    os << "trainer.patience = " << c.patience << '\n';
    os << "trainer.per_batch_phases = " << (c.per_batch_phases ? "true" : "false") << '\n';
    os << "trainer.seed = " << c.seed << '\n';
    os << "trainer.tau_init = " << detail::fmt_double(c.tau_init) << '\n';
    os << "trainer.variant = " << variant_name(c.variant) << '\n';
    return os.str();
}

inline uint64_t config_hash(const TrainerConfig& c) { return hash_string(config_text(c)); }

namespace detail {
inline double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError(key + ": not a number: '" + v + "'");
    }
}

inline long long parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const long long i = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return i;
    } catch (const std::exception&) {
        throw ConfigError(key + ": not an integer: '" + v + "'");
    }
}

inline uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const unsigned long long i = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return i;
    } catch (const std::exception&) {
        throw ConfigError(key + ": not an unsigned integer: '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": not a boolean: '" + v + "'");
}
}  // namespace detail

// Applies one flat config key to the trainer config. Returns false when the
// key does not belong to the trainer/reg namespaces.
inline bool apply_trainer_key(TrainerConfig& c, const std::string& key, const std::string& value) {
    using namespace detail;
    if (key == "reg.alpha") c.alpha = parse_double(key, value);
    else if (key == "reg.gamma") c.gamma = parse_double(key, value);
    else if (key == "reg.literal_eq9") c.literal_eq9 = parse_bool(key, value);
    else if (key == "trainer.adam_beta1") c.adam_beta1 = parse_double(key, value);
    else if (key == "trainer.adam_beta2") c.adam_beta2 = parse_double(key, value);
    else if (key == "trainer.adam_eps") c.adam_eps = parse_double(key, value);
    else if (key == "trainer.batch_size") c.batch_size = static_cast<int>(parse_int(key, value));
    else if (key == "trainer.beta") c.beta = parse_double(key, value);
    else if (key == "trainer.delta") c.delta = parse_double(key, value);
    else if (key == "trainer.dim") c.embed_dim = static_cast<int>(parse_int(key, value));
    else if (key == "trainer.epochs") c.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "trainer.lr") c.base_lr = parse_double(key, value);
    else if (key == "trainer.lr_decay_interval") c.lr_decay_interval = parse_u64(key, value);
    else if (key == "trainer.lr_decay_ratio") c.lr_decay_ratio = parse_double(key, value);
    else if (key == "trainer.lr_floor") c.lr_floor = parse_double(key, value);
    else if (key == "trainer.patience") c.patience = static_cast<int>(parse_int(key, value));
    else if (key == "trainer.per_batch_phases") c.per_batch_phases = parse_bool(key, value);
    else if (key == "trainer.seed") c.seed = parse_u64(key, value);
    else if (key == "trainer.tau_init") c.tau_init = parse_double(key, value);
    else if (key == "trainer.variant") c.variant = variant_from_name(value);
    else return false;
    return true;
}

inline TrainerConfig trainer_config_from_text(const std::string& text) {
    TrainerConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("config line without '=': " + line);
        auto trim = [](std::string s) {
            const size_t a = s.find_first_not_of(" \t");
            const size_t b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!apply_trainer_key(c, key, value)) throw FormatError("unknown trainer config key: " + key);
    }
    return c;
}

// Step-decay schedule: lr = max(floor, base * ratio^(iter div interval)).
inline double lr_at(const TrainerConfig& cfg, uint64_t iter) {
    uint64_t k = iter / cfg.lr_decay_interval;
    if (k > 512) k = 512;  // far below any floor by then
    double lr = cfg.base_lr;
    for (uint64_t i = 0; i < k; ++i) lr *= cfg.lr_decay_ratio;
    return std::max(cfg.lr_floor, lr);
}

// ---------------------------------------------------------------------------
// Training log. Iteration rows carry the phase losses; validation rows reuse
// the loss columns as (R@1 i2t, R@1 t2i, rsum) with iter = outer iteration.
// The seconds column is wall-clock and is excluded from the canonical form
// used for determinism comparisons.
// ---------------------------------------------------------------------------
enum class Phase : uint8_t { disc = 0, gen = 1, val = 2 };

inline const char* phase_name(Phase p) { return p == Phase::disc ? "disc" : p == Phase::gen ? "gen" : "val"; }

struct TrainRecord {
    uint64_t iter = 0;
    Phase phase = Phase::gen;
    double l_rank = 0, l_adv = 0, l_reg = 0;
    double lr = 0;
    double seconds = 0;
};

struct TrainLog {
    std::vector<TrainRecord> records;

    static std::string csv_header(bool with_seconds = true) {
        return with_seconds ? "iter,phase,l_rank,l_adv,l_reg,lr,seconds" : "iter,phase,l_rank,l_adv,l_reg,lr";
    }

    static std::string csv_row(const TrainRecord& r, bool with_seconds = true) {
        std::ostringstream os;
        os.precision(17);
        os << r.iter << ',' << phase_name(r.phase) << ',' << r.l_rank << ',' << r.l_adv << ',' << r.l_reg << ','
           << r.lr;
        if (with_seconds) {
            os.precision(6);
            os << ',' << std::fixed << r.seconds;
        }
        return os.str();
    }

    std::string to_csv(bool with_seconds = true) const {
        std::string out = csv_header(with_seconds) + "\n";
        for (const auto& r : records) out += csv_row(r, with_seconds) + "\n";
        return out;
    }

    // Deterministic serialization: everything except wall-clock.
    std::string canonical() const { return to_csv(false); }

    // Best validation record so far, if any.
    std::optional<TrainRecord> best_validation() const {
        std::optional<TrainRecord> best;
        for (const auto& r : records)
            if (r.phase == Phase::val && (!best || r.l_reg > best->l_reg)) best = r;
        return best;
    }
};

// ---------------------------------------------------------------------------
// Generator-phase objective: L_rank(batch) - beta * mean_p L_adv(pair p),
// with the discriminators frozen. Shared by the trainer and the gradient
// checker so the checked path is the production path.
// ---------------------------------------------------------------------------
struct GenBatchItem {
    const FeatureItem* image = nullptr;    // raw region features
    const FeatureItem* caption = nullptr;  // raw word features of the sampled caption
    const Discriminator* disc = nullptr;   // pair discriminator; may be null when beta == 0
};

struct GenLosses {
    double l_rank = 0;
    double l_adv_mean = 0;
    double value = 0;  // l_rank - beta * l_adv_mean
};

struct GenGrads {
    Mat64 d_proj_img;
    Vec64 d_bias_img;
    Mat64 d_proj_txt;
    Vec64 d_bias_txt;
    double d_log_tau = 0;

    explicit GenGrads(const GeneratorParams& p)
        : d_proj_img(p.proj_img.rows, p.proj_img.cols),
          d_bias_img(p.bias_img.size(), 0.0),
          d_proj_txt(p.proj_txt.rows, p.proj_txt.cols),
          d_bias_txt(p.bias_txt.size(), 0.0) {}
};

inline GenLosses generator_objective(const GeneratorParams& params, const MetricParams& metric,
                                     std::span<const GenBatchItem> items, double beta, double delta,
                                     GenGrads* grads = nullptr) {
    const int k = static_cast<int>(items.size());
    if (k < 2) throw ShapeError("generator objective: need a batch of at least 2");
    std::vector<EmbeddedSet> regions, words;
    regions.reserve(k);
    words.reserve(k);
    for (const auto& it : items) {
        regions.push_back(encode(params, *it.image));
        words.push_back(encode(params, *it.caption));
    }
    const SimMatrix m = sim_matrix(regions, words, metric);
    const TripletResult trip = triplet_loss(m, delta);

    GenLosses out;
    out.l_rank = trip.loss;

    std::vector<Mat64> d_regions, d_words;
    if (grads) {
        d_regions.reserve(k);
        d_words.reserve(k);
        for (int i = 0; i < k; ++i) {
            d_regions.emplace_back(regions[i].rows.rows, regions[i].rows.cols);
            d_words.emplace_back(words[i].rows.rows, words[i].rows.cols);
        }
        for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b) {
                const double g = trip.d_scores.at(a, b);
                if (g != 0.0)
                    sim_backward_acc(regions[a].rows, words[b].rows, metric, g, d_regions[a], d_words[b],
                                     grads->d_log_tau);
            }
    }

    if (beta != 0.0) {
        const double item_scale = 1.0 / k;
        for (int i = 0; i < k; ++i) {
            if (!items[i].disc) throw ShapeError("generator objective: missing discriminator with beta != 0");
            if (grads) {
                const AdvGrads ag = adv_grads(*items[i].disc, regions[i].rows, words[i].rows);
                out.l_adv_mean += ag.loss * item_scale;
                const double s = -beta * item_scale;
                for (size_t t = 0; t < ag.d_regions.data.size(); ++t) d_regions[i].data[t] += s * ag.d_regions.data[t];
                for (size_t t = 0; t < ag.d_words.data.size(); ++t) d_words[i].data[t] += s * ag.d_words.data[t];
            } else {
                out.l_adv_mean += adv_loss(*items[i].disc, regions[i].rows, words[i].rows) * item_scale;
            }
        }
    }

    if (grads)
        for (int i = 0; i < k; ++i) {
            encode_backward_acc(params, *items[i].image, d_regions[i], grads->d_proj_img, grads->d_bias_img);
            encode_backward_acc(params, *items[i].caption, d_words[i], grads->d_proj_txt, grads->d_bias_txt);
        }

    out.value = out.l_rank - beta * out.l_adv_mean;
    return out;
}

// ---------------------------------------------------------------------------
// The two-phase trainer.
//
// One outer iteration runs a full discriminator epoch followed by a full
// generator epoch over the same shuffled plan, then evaluates validation
// recall. The discriminator phase touches only the bank, the generator phase
// only {theta, Phi}. Metric scores and hard negatives always use the plan's
// sampled caption; the discriminators and the regularization risks see the
// pair's full caption group (all captions of the image concatenated).
//
// The discriminator phase is skipped entirely when it cannot influence the
// learned model: for the base variant, and whenever beta and the effective
// gamma are both zero (this makes an addr run with beta=gamma=0 reproduce a
// base run record for record).
// ---------------------------------------------------------------------------
struct EpochPlan {
    std::vector<int> images;    // image indices, shuffled
    std::vector<int> captions;  // sampled caption index per position

    size_t size() const { return images.size(); }
};

struct TrainResult {
    GeneratorParams generator;
    MetricParams metric;
    DiscriminatorBank bank;
    TrainLog log;
    TrainerConfig config;
};

inline constexpr char kCheckpointMagic[9] = "ADDRCKPT";
inline constexpr uint32_t kCheckpointVersion = 1;

class Trainer {
  public:
    Trainer(const TrainerConfig& cfg, const Dataset& ds)
        : cfg_(cfg), ds_(&ds), rng_(cfg.seed, /*stream=*/0), bank_(cfg.embed_dim) {
        cfg_.validate();
        train_images_ = ds.image_indices(Split::train);
        if (train_images_.size() < 2) throw ConfigError("trainer: need at least 2 training pairs");
        build_caption_groups();
        generator_ = init_generator(rng_, ds.image_dim(), ds.caption_dim(), cfg_.embed_dim);
        metric_ = MetricParams::from_tau(cfg_.tau_init);
        init_adam_states();
        has_val_ = ds.image_indices(Split::val).size() >= 2;  // recall needs a real gallery
    }

    const TrainerConfig& config() const { return cfg_; }
    const GeneratorParams& generator() const { return generator_; }
    const MetricParams& metric() const { return metric_; }
    const DiscriminatorBank& bank() const { return bank_; }
    const TrainLog& log() const { return log_; }
    int outer_iterations() const { return epochs_done_; }
    bool stopped_early() const { return stopped_; }

    uint64_t generator_state_hash() const {
        Fnv1a f;
        f.add(generator_.param_hash());
        f.add(metric_.log_tau);
        return f.h;
    }
    uint64_t bank_state_hash() const { return bank_.content_hash(); }

    bool discriminator_phase_active() const {
        if (cfg_.variant == Variant::base) return false;
        return cfg_.beta != 0.0 || effective_gamma() != 0.0;
    }

    double effective_beta() const { return cfg_.variant == Variant::base ? 0.0 : cfg_.beta; }
    double effective_gamma() const { return cfg_.variant == Variant::addr ? cfg_.gamma : 0.0; }

    bool done() const { return epochs_done_ >= cfg_.epochs || stopped_; }

    EpochPlan make_epoch_plan() {
        EpochPlan plan;
        plan.images = train_images_;
        rng_.shuffle(plan.images);
        plan.captions.reserve(plan.images.size());
        for (int img : plan.images) {
            const auto& caps = ds_->captions_of[img];
            plan.captions.push_back(caps[rng_.index(caps.size())]);
        }
        return plan;
    }

    void run_discriminator_epoch(const EpochPlan& plan) {
        if (cfg_.variant == Variant::base)
            throw ConfigError("discriminator phase: not defined for the base variant");
        for_each_batch(plan, [&](size_t lo, size_t hi) { discriminator_step(plan, lo, hi); });
    }

    void run_generator_epoch(const EpochPlan& plan) {
        for_each_batch(plan, [&](size_t lo, size_t hi) { generator_step(plan, lo, hi); });
    }

    void run_outer_iteration() {
        const EpochPlan plan = make_epoch_plan();
        if (cfg_.per_batch_phases) {
            for_each_batch(plan, [&](size_t lo, size_t hi) {
                if (discriminator_phase_active()) discriminator_step(plan, lo, hi);
                generator_step(plan, lo, hi);
            });
        } else {
            if (discriminator_phase_active()) run_discriminator_epoch(plan);
            run_generator_epoch(plan);
        }
        ++epochs_done_;
        run_validation();
    }

    void run_validation() {
        if (!has_val_) return;
        const auto t0 = clock_now();
        const RetrievalReport rep = evaluate_split(generator_, metric_, *ds_, Split::val);
        TrainRecord r;
        r.iter = static_cast<uint64_t>(epochs_done_);
        r.phase = Phase::val;
        r.l_rank = rep.r1_i2t;
        r.l_adv = rep.r1_t2i;
        r.l_reg = rep.rsum();
        r.lr = lr_at(cfg_, gen_iter_);
        r.seconds = elapsed(t0);
        log_.records.push_back(r);
        if (rep.rsum() > best_rsum_ + 1e-12) {
            best_rsum_ = rep.rsum();
            evals_since_improve_ = 0;
        } else if (cfg_.patience > 0 && ++evals_since_improve_ >= cfg_.patience) {
            stopped_ = true;
        }
    }

    TrainResult take_result() {
        TrainResult out;
        out.generator = std::move(generator_);
        out.metric = metric_;
        out.bank = std::move(bank_);
        out.log = std::move(log_);
        out.config = cfg_;
        return out;
    }

    // ---- checkpointing -----------------------------------------------------
    //
    // "ADDRCKPT" | version u32 | config hash u64 | config text (u64 len +
    // bytes) | proj shapes | counters/rng/early-stop | parameter blocks and
    // their Adam states (little-endian float64) | embedded bank | per-pair
    // Adam states. The log is not checkpointed; a resumed run starts a fresh
    // log whose rows continue the uninterrupted trajectory.
    void save_checkpoint(const std::string& path) const {
        auto os = binio::open_out(path);
        binio::put_magic(os, kCheckpointMagic);
        binio::put_u32(os, kCheckpointVersion);
        const std::string text = config_text(cfg_);
        binio::put_u64(os, hash_string(text));
        binio::put_u64(os, text.size());
        os.write(text.data(), static_cast<std::streamsize>(text.size()));

        binio::put_u32(os, static_cast<uint32_t>(generator_.proj_img.rows));
        binio::put_u32(os, static_cast<uint32_t>(generator_.proj_txt.rows));
        binio::put_u32(os, static_cast<uint32_t>(cfg_.embed_dim));
        binio::put_u64(os, static_cast<uint64_t>(epochs_done_));
        binio::put_u64(os, disc_iter_);
        binio::put_u64(os, gen_iter_);
        binio::put_u64(os, rng_.state());
        binio::put_f64(os, best_rsum_);
        binio::put_u32(os, static_cast<uint32_t>(evals_since_improve_));
        binio::put_u32(os, stopped_ ? 1 : 0);

        put_block(os, generator_.proj_img.data);
        put_block(os, generator_.bias_img);
        put_block(os, generator_.proj_txt.data);
        put_block(os, generator_.bias_txt);
        binio::put_f64(os, metric_.log_tau);

        put_adam(os, st_proj_img_);
        put_adam(os, st_bias_img_);
        put_adam(os, st_proj_txt_);
        put_adam(os, st_bias_txt_);
        put_adam(os, st_log_tau_);

        write_bank(os, bank_);
        binio::put_u64(os, disc_adam_.size());
        for (const auto& [id, st] : disc_adam_) {
            binio::put_u64(os, id);
            put_adam(os, st.w);
            put_adam(os, st.b);
        }
        if (!os) throw IoError("write failed: " + path);
    }

    static Trainer load_checkpoint(const std::string& path, const Dataset& ds) {
        auto is = binio::open_in(path);
        binio::expect_magic(is, kCheckpointMagic, "ADDRCKPT");
        const uint32_t version = binio::get_u32(is, "version");
        if (version != kCheckpointVersion)
            throw FormatError("ADDRCKPT version " + std::to_string(version) + " not supported");
        const uint64_t stored_hash = binio::get_u64(is, "config hash");
        const uint64_t text_len = binio::get_u64(is, "config length");
        if (text_len > (1ULL << 20)) throw FormatError("ADDRCKPT: implausible config length");
        std::string text(text_len, '\0');
        binio::read_exact(is, text.data(), text_len, "config text");
        if (hash_string(text) != stored_hash) throw FormatError("ADDRCKPT: config hash mismatch");
        const TrainerConfig cfg = trainer_config_from_text(text);

        const uint32_t raw_img = binio::get_u32(is, "raw image dim");
        const uint32_t raw_txt = binio::get_u32(is, "raw text dim");
        const uint32_t dim = binio::get_u32(is, "embed dim");
        if (static_cast<int>(raw_img) != ds.image_dim() || static_cast<int>(raw_txt) != ds.caption_dim())
            throw FormatError("ADDRCKPT: dataset feature dims do not match checkpoint");
        if (static_cast<int>(dim) != cfg.embed_dim) throw FormatError("ADDRCKPT: embed dim mismatch");

        Trainer t(cfg, ds);
        t.epochs_done_ = static_cast<int>(binio::get_u64(is, "epochs"));
        t.disc_iter_ = binio::get_u64(is, "disc iter");
        t.gen_iter_ = binio::get_u64(is, "gen iter");
        t.rng_.set_state(binio::get_u64(is, "rng state"));
        t.best_rsum_ = binio::get_f64(is, "best rsum");
        t.evals_since_improve_ = static_cast<int>(binio::get_u32(is, "patience counter"));
        t.stopped_ = binio::get_u32(is, "stopped") != 0;

        get_block(is, t.generator_.proj_img.data);
        get_block(is, t.generator_.bias_img);
        get_block(is, t.generator_.proj_txt.data);
        get_block(is, t.generator_.bias_txt);
        t.metric_.log_tau = binio::get_f64(is, "log tau");

        get_adam(is, t.st_proj_img_);
        get_adam(is, t.st_bias_img_);
        get_adam(is, t.st_proj_txt_);
        get_adam(is, t.st_bias_txt_);
        get_adam(is, t.st_log_tau_);

        t.bank_ = read_bank(is);
        if (t.bank_.dim != cfg.embed_dim) throw FormatError("ADDRCKPT: bank dim mismatch");
        const uint64_t n_states = binio::get_u64(is, "adam state count");
        t.disc_adam_.clear();
        for (uint64_t i = 0; i < n_states; ++i) {
            const uint64_t id = binio::get_u64(is, "state pair id");
            DiscAdam st = t.fresh_disc_adam();
            get_adam(is, st.w);
            get_adam(is, st.b);
            t.disc_adam_.emplace(id, std::move(st));
        }
        return t;
    }

  private:
    struct DiscAdam {
        AdamState w;
        AdamState b;
    };

    struct ParamGrad {
        Vec64 w;
        double b = 0.0;
    };

    using Clock = std::chrono::steady_clock;
    static Clock::time_point clock_now() { return Clock::now(); }
    static double elapsed(Clock::time_point t0) {
        return std::chrono::duration<double>(Clock::now() - t0).count();
    }

    void build_caption_groups() {
        caption_group_.resize(ds_->num_images());
        for (int img : train_images_) {
            const auto& caps = ds_->captions_of[img];
            int rows = 0;
            for (int c : caps) rows += ds_->captions[c].rows();
            FeatureItem& grp = caption_group_[img];
            grp.id = ds_->images[img].id;
            grp.modality = Modality::words;
            grp.features = Mat64(rows, ds_->caption_dim());
            int r = 0;
            for (int c : caps) {
                const Mat64& m = ds_->captions[c].features;
                for (int i = 0; i < m.rows; ++i, ++r)
                    std::copy(m.row(i), m.row(i) + m.cols, grp.features.row(r));
            }
        }
    }

    void init_adam_states() {
        const auto b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2, e = cfg_.adam_eps;
        st_proj_img_ = AdamState(generator_.proj_img.data.size(), b1, b2, e);
        st_bias_img_ = AdamState(generator_.bias_img.size(), b1, b2, e);
        st_proj_txt_ = AdamState(generator_.proj_txt.data.size(), b1, b2, e);
        st_bias_txt_ = AdamState(generator_.bias_txt.size(), b1, b2, e);
        st_log_tau_ = AdamState(1, b1, b2, e);
    }

    const Discriminator& zero_disc() const {
        if (zero_disc_.weight.empty()) zero_disc_.weight.assign(cfg_.embed_dim, 0.0);
        return zero_disc_;
    }

    DiscAdam fresh_disc_adam() const {
        return DiscAdam{AdamState(static_cast<size_t>(cfg_.embed_dim), cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps),
                        AdamState(1, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps)};
    }

    DiscAdam& disc_adam(uint64_t id) {
        auto it = disc_adam_.find(id);
        if (it != disc_adam_.end()) return it->second;
        return disc_adam_.emplace(id, fresh_disc_adam()).first->second;
    }

    uint64_t disc_id(int image_idx) const {
        return cfg_.variant == Variant::united ? kUnitedPairId : ds_->images[image_idx].id;
    }

    template <typename F>
    void for_each_batch(const EpochPlan& plan, F&& step) {
        const size_t n = plan.size();
        const size_t bs = static_cast<size_t>(cfg_.batch_size);
        for (size_t lo = 0; lo < n; lo += bs) {
            const size_t hi = std::min(n, lo + bs);
            if (hi - lo < 2) break;  // a trailing singleton has no negatives
            step(lo, hi);
        }
    }

    void discriminator_step(const EpochPlan& plan, size_t lo, size_t hi) {
        const auto t0 = clock_now();
        const int k = static_cast<int>(hi - lo);
        std::vector<EmbeddedSet> regions, sampled_words, group_words;
        regions.reserve(k);
        sampled_words.reserve(k);
        group_words.reserve(k);
        for (size_t s = lo; s < hi; ++s) {
            regions.push_back(encode(generator_, ds_->images[plan.images[s]]));
            sampled_words.push_back(encode(generator_, ds_->captions[plan.captions[s]]));
            group_words.push_back(encode(generator_, caption_group_[plan.images[s]]));
        }
        const SimMatrix m = sim_matrix(regions, sampled_words, metric_);
        const double l_rank = triplet_loss(m, cfg_.delta).loss;

        const double gamma = effective_gamma();
        std::map<uint64_t, ParamGrad> grads;
        auto grad_slot = [&](uint64_t id) -> ParamGrad& {
            auto it = grads.find(id);
            if (it != grads.end()) return it->second;
            ParamGrad g;
            g.w.assign(cfg_.embed_dim, 0.0);
            return grads.emplace(id, std::move(g)).first->second;
        };

        double l_adv_sum = 0.0, l_reg_sum = 0.0;
        for (int i = 0; i < k; ++i) {
            const uint64_t id_p = disc_id(plan.images[lo + i]);
            const Discriminator& f_p = bank_.get_or_init(id_p);
            ParamGrad& gp = grad_slot(id_p);
            l_adv_sum += adv_param_grads_acc(f_p, regions[i].rows, group_words[i].rows, 1.0, gp.w, gp.b);

            if (gamma > 0.0) {
                const HardNegatives hn = hard_negatives(m, i);
                const uint64_t id_q = disc_id(plan.images[lo + hn.sentence]);
                const uint64_t id_r = disc_id(plan.images[lo + hn.image]);
                RegInputs in;
                in.id_p = id_p;
                in.id_q = id_q;
                in.id_r = id_r;
                in.alpha = cfg_.alpha;
                in.p = {&regions[i].rows, &group_words[i].rows};
                in.q = {&regions[hn.sentence].rows, &group_words[hn.sentence].rows};
                in.r = {&regions[hn.image].rows, &group_words[hn.image].rows};
                in.f_p = &f_p;
                in.f_q = &bank_.get_or_init(id_q);
                in.f_r = &bank_.get_or_init(id_r);
                const RegResult rr = reg_loss(in, cfg_.literal_eq9);
                l_reg_sum += rr.total();
                accumulate_scaled(grad_slot(id_p), rr.d_wp, rr.d_bp, gamma);
                accumulate_scaled(grad_slot(id_q), rr.d_wq, rr.d_bq, gamma);
                accumulate_scaled(grad_slot(id_r), rr.d_wr, rr.d_br, gamma);
            }
        }

        const double lr = lr_at(cfg_, disc_iter_);
        for (auto& [id, g] : grads) {
            Discriminator& f = bank_.get_or_init(id);
            DiscAdam& st = disc_adam(id);
            adam_step(st.w, f.weight, g.w, lr);
            adam_step(st.b, f.bias, g.b, lr);
        }

        ++disc_iter_;
        TrainRecord rec;
        rec.iter = disc_iter_;
        rec.phase = Phase::disc;
        rec.l_rank = l_rank;
        rec.l_adv = l_adv_sum / k;
        rec.l_reg = l_reg_sum / k;
        rec.lr = lr;
        rec.seconds = elapsed(t0);
        check_finite_losses(rec);
        log_.records.push_back(rec);
    }

    void generator_step(const EpochPlan& plan, size_t lo, size_t hi) {
        const auto t0 = clock_now();
        const double beta = effective_beta();
        std::vector<GenBatchItem> items;
        items.reserve(hi - lo);
        for (size_t s = lo; s < hi; ++s) {
            GenBatchItem it;
            it.image = &ds_->images[plan.images[s]];
            it.caption = &ds_->captions[plan.captions[s]];
            if (beta != 0.0) {
                // the bank is read-only in this phase: an untouched pair acts
                // as a zero discriminator without being inserted
                const Discriminator* d = bank_.find(disc_id(plan.images[s]));
                it.disc = d ? d : &zero_disc();
            }
            items.push_back(it);
        }
        GenGrads grads(generator_);
        const GenLosses losses = generator_objective(generator_, metric_, items, beta, cfg_.delta, &grads);

        const double lr = lr_at(cfg_, gen_iter_);
        adam_step(st_proj_img_, generator_.proj_img, grads.d_proj_img, lr);
        adam_step(st_bias_img_, generator_.bias_img, grads.d_bias_img, lr);
        adam_step(st_proj_txt_, generator_.proj_txt, grads.d_proj_txt, lr);
        adam_step(st_bias_txt_, generator_.bias_txt, grads.d_bias_txt, lr);
        adam_step(st_log_tau_, metric_.log_tau, grads.d_log_tau, lr);

        ++gen_iter_;
        TrainRecord rec;
        rec.iter = gen_iter_;
        rec.phase = Phase::gen;
        rec.l_rank = losses.l_rank;
        rec.l_adv = losses.l_adv_mean;
        rec.l_reg = 0.0;
        rec.lr = lr;
        rec.seconds = elapsed(t0);
        check_finite_losses(rec);
        log_.records.push_back(rec);
    }

    static void accumulate_scaled(ParamGrad& g, const Vec64& dw, double db, double scale) {
        require_size(dw.size(), g.w.size(), "trainer reg gradient");
        for (size_t i = 0; i < dw.size(); ++i) g.w[i] += scale * dw[i];
        g.b += scale * db;
    }

    void check_finite_losses(const TrainRecord& r) const {
        if (!std::isfinite(r.l_rank) || !std::isfinite(r.l_adv) || !std::isfinite(r.l_reg))
            throw NumericError("training diverged: non-finite loss at " + std::string(phase_name(r.phase)) +
                               " iteration " + std::to_string(r.iter));
    }

    static void put_block(std::ostream& os, const Vec64& v) {
        binio::put_u64(os, v.size());
        for (double x : v) binio::put_f64(os, x);
    }

    static void get_block(std::istream& is, Vec64& v) {
        const uint64_t n = binio::get_u64(is, "block size");
        if (n != v.size()) throw FormatError("ADDRCKPT: block size mismatch");
        for (auto& x : v) x = binio::get_f64(is, "block value");
    }

    static void put_adam(std::ostream& os, const AdamState& st) {
        binio::put_u64(os, st.t);
        put_block(os, st.m);
        put_block(os, st.v);
    }

    static void get_adam(std::istream& is, AdamState& st) {
        st.t = binio::get_u64(is, "adam t");
        get_block(is, st.m);
        get_block(is, st.v);
    }

    TrainerConfig cfg_;
    const Dataset* ds_;
    Rng rng_;
    GeneratorParams generator_;
    MetricParams metric_;
    DiscriminatorBank bank_;
    std::vector<int> train_images_;
    std::vector<FeatureItem> caption_group_;  // per image: all caption rows stacked

    AdamState st_proj_img_, st_bias_img_, st_proj_txt_, st_bias_txt_, st_log_tau_;
    std::map<uint64_t, DiscAdam> disc_adam_;
    mutable Discriminator zero_disc_;

    TrainLog log_;
    uint64_t disc_iter_ = 0;
    uint64_t gen_iter_ = 0;
    int epochs_done_ = 0;
    bool has_val_ = false;
    double best_rsum_ = -1.0;
    int evals_since_improve_ = 0;
    bool stopped_ = false;
};

inline TrainResult train(const TrainerConfig& cfg, const Dataset& ds) {
    Trainer t(cfg, ds);
    while (!t.done()) t.run_outer_iteration();
    return t.take_result();
}

}  // namespace addr
