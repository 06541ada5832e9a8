// addr: desk-scale cross-modal metric learning with adversarial
// discriminative domain regularization.
//
// Subcommands: synth, train, eval, ablate, gradcheck. Configuration is a flat
// key=value namespace: defaults, then --config file, then --set overrides,
// then dedicated flags. ADDR_REPORT_DIR overrides the report directory.

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "addr/addr.hpp"

namespace {

struct CliState {
    addr::RunConfig cfg;
    std::string config_file;
    std::vector<std::string> sets;       // --set key=value, in order
    std::vector<std::string> flag_sets;  // dedicated flags, in order
};

void apply_all(CliState& st) {
    if (!st.config_file.empty()) addr::load_config_file(st.cfg, st.config_file);
    for (const auto& kv : st.sets) addr::apply_override(st.cfg, kv);
    for (const auto& kv : st.flag_sets) addr::apply_override(st.cfg, kv);
    if (const char* env = std::getenv("ADDR_REPORT_DIR"); env && *env) st.cfg.report_dir = env;
}

// registers a flag that forwards its value to the flat config namespace
void add_kv_option(CLI::App* app, CliState& st, const std::string& flag, const std::string& key,
                   const std::string& help) {
    app->add_option_function<std::string>(
           flag, [&st, key](const std::string& v) { st.flag_sets.push_back(key + "=" + v); }, help)
        ->type_name("VALUE");
}

std::string in_report_dir(const CliState& st, const std::string& name) {
    return (std::filesystem::path(st.cfg.report_dir) / name).string();
}

void write_text_file(const std::string& path, const std::string& body) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw addr::IoError("cannot open for writing: " + path);
    os << body;
    if (!os) throw addr::IoError("write failed: " + path);
}

std::string hash_hex(uint64_t h) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
    return buf;
}

std::string artifact_header(const CliState& st, uint64_t dataset_hash) {
    std::string out = "# config_hash=" + hash_hex(addr::run_config_hash(st.cfg)) + "\n";
    out += "# dataset_hash=" + hash_hex(dataset_hash) + "\n";
    return out;
}

int cmd_synth(CliState& st) {
    if (st.cfg.dataset_prefix.empty()) throw addr::ConfigError("synth: io.dataset (--out) is required");
    auto synth = addr::generate_synthetic(st.cfg.synth);
    addr::assign_splits(synth.dataset, st.cfg.fractions, st.cfg.split_seed);
    addr::save_dataset(st.cfg.dataset_prefix, synth.dataset);
    const addr::Dataset& ds = synth.dataset;
    std::cout << "wrote " << st.cfg.dataset_prefix << ".{images.addrfeat,captions.addrfeat,manifest}\n"
              << "  images " << ds.num_images() << " (dim " << ds.image_dim() << "), captions "
              << ds.num_captions() << " (dim " << ds.caption_dim() << ")\n"
              << "  splits train/val/test " << ds.image_indices(addr::Split::train).size() << "/"
              << ds.image_indices(addr::Split::val).size() << "/" << ds.image_indices(addr::Split::test).size()
              << "\n"
              << "  dataset_hash " << hash_hex(ds.content_hash()) << "\n"
              << "  config_hash " << hash_hex(addr::run_config_hash(st.cfg)) << "\n";
    return 0;
}

int cmd_train(CliState& st, const std::string& resume_path) {
    if (st.cfg.dataset_prefix.empty()) throw addr::ConfigError("train: io.dataset (--dataset) is required");
    const addr::Dataset ds = addr::load_dataset(st.cfg.dataset_prefix);

    addr::Trainer trainer = resume_path.empty() ? addr::Trainer(st.cfg.trainer, ds)
                                                : addr::Trainer::load_checkpoint(resume_path, ds);
    while (!trainer.done()) trainer.run_outer_iteration();

    const std::string ckpt =
        st.cfg.checkpoint_path.empty() ? in_report_dir(st, "checkpoint.addrckpt") : st.cfg.checkpoint_path;
    if (const auto parent = std::filesystem::path(ckpt).parent_path(); !parent.empty())
        std::filesystem::create_directories(parent);
    trainer.save_checkpoint(ckpt);

    const std::string log_path = st.cfg.log_path.empty() ? in_report_dir(st, "train_log.csv") : st.cfg.log_path;
    write_text_file(log_path, artifact_header(st, ds.content_hash()) + trainer.log().to_csv());

    std::cout << "trained " << addr::variant_name(trainer.config().variant) << " seed " << trainer.config().seed
              << ": " << trainer.outer_iterations() << " outer iterations"
              << (trainer.stopped_early() ? " (early stop)" : "") << "\n"
              << "  checkpoint " << ckpt << "\n  log " << log_path << "\n";
    if (const auto best = trainer.log().best_validation())
        std::cout << "  best val rsum " << best->l_reg << " (R@1 i2t " << best->l_rank << ", t2i " << best->l_adv
                  << ")\n";
    return 0;
}

int cmd_eval(CliState& st) {
    if (st.cfg.checkpoint_path.empty()) throw addr::ConfigError("eval: io.checkpoint (--checkpoint) is required");
    if (st.cfg.dataset_prefix.empty()) throw addr::ConfigError("eval: io.dataset (--dataset) is required");
    const addr::Dataset ds = addr::load_dataset(st.cfg.dataset_prefix);
    const addr::Trainer trainer = addr::Trainer::load_checkpoint(st.cfg.checkpoint_path, ds);

    addr::RetrievalReport rep;
    if (st.cfg.eval_folds > 0) {
        rep = addr::evaluate_folds(trainer.generator(), trainer.metric(), ds, st.cfg.eval_folds,
                                   trainer.config().seed);
    } else {
        rep = addr::evaluate_split(trainer.generator(), trainer.metric(), ds,
                                   addr::split_from_name(st.cfg.eval_split));
    }
    rep.variant = addr::variant_name(trainer.config().variant);
    rep.seed = trainer.config().seed;
    rep.config_hash = addr::config_hash(trainer.config());
    rep.dataset_hash = ds.content_hash();

    const std::string out = st.cfg.report_path.empty() ? in_report_dir(st, "report.csv") : st.cfg.report_path;
    write_text_file(out, artifact_header(st, ds.content_hash()) + addr::report_csv_header() + "\n" +
                             addr::report_csv_row(rep) + "\n");
    std::cout << addr::report_csv_header() << "\n" << addr::report_csv_row(rep) << "\n"
              << "report " << out << "\n";
    return 0;
}

int cmd_ablate(CliState& st) {
    if (st.cfg.dataset_prefix.empty()) throw addr::ConfigError("ablate: io.dataset (--dataset) is required");
    const addr::Dataset ds = addr::load_dataset(st.cfg.dataset_prefix);
    addr::AblationConfig ab;
    ab.base = st.cfg.trainer;
    ab.folds = st.cfg.eval_folds;
    ab.variants.clear();
    for (const auto& name : addr::split_list(st.cfg.ablate_variants))
        ab.variants.push_back(addr::variant_from_name(name));
    ab.seeds.clear();
    for (const auto& s : addr::split_list(st.cfg.ablate_seeds))
        ab.seeds.push_back(addr::detail::parse_u64("ablate.seeds", s));
    const addr::AblationTable table = addr::run_ablation(ab, ds);

    const std::string out = st.cfg.report_path.empty() ? in_report_dir(st, "ablation.csv") : st.cfg.report_path;
    write_text_file(out, artifact_header(st, ds.content_hash()) + table.to_csv());
    std::cout << table.to_csv() << "table " << out << "\n";
    return 0;
}

int cmd_gradcheck(CliState& st) {
    addr::GradCheckConfig cfg;
    cfg.instances = st.cfg.check_instances;
    cfg.seed = st.cfg.check_seed;
    cfg.tolerance = st.cfg.check_tolerance;
    const auto results = addr::run_gradient_checks(cfg);
    bool all_ok = true;
    std::printf("%-26s %-12s %s\n", "component", "max_rel_err", "status");
    for (const auto& r : results) {
        std::printf("%-26s %-12.3e %s\n", r.component.c_str(), r.max_rel_err, r.passed ? "ok" : "FAIL");
        all_ok = all_ok && r.passed;
    }
    std::printf("%d instances per component, tolerance %.1e\n", cfg.instances, cfg.tolerance);
    if (!all_ok) {
        std::cerr << "gradcheck: at least one component exceeded the tolerance\n";
        return 4;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CliState st;
    std::string resume_path;

    CLI::App app{"addr: cross-modal metric learning with per-pair adversarial domain regularization"};
    app.require_subcommand(1);
    app.fallthrough();  // --config / --set may follow the subcommand name
    app.footer("Config precedence: defaults < --config file < --set < flags.\n"
               "ADDR_REPORT_DIR overrides the report directory for default output paths.");
    app.add_option("--config", st.config_file, "flat key = value config file")->type_name("FILE");
    app.add_option("--set", st.sets, "override a single key (key=value, repeatable)")->type_name("KEY=VALUE");

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic benchmark dataset");
    add_kv_option(synth, st, "--out", "io.dataset", "output file prefix");
    add_kv_option(synth, st, "--concepts", "synth.concepts", "number of concepts");
    add_kv_option(synth, st, "--images-per-concept", "synth.images_per_concept", "images per concept");
    add_kv_option(synth, st, "--captions", "synth.captions_per_image", "captions per image");
    add_kv_option(synth, st, "--regions", "synth.regions", "region rows per image");
    add_kv_option(synth, st, "--words", "synth.words", "word rows per caption");
    add_kv_option(synth, st, "--overlap", "synth.overlap", "distractor overlap fraction");
    add_kv_option(synth, st, "--noise", "synth.noise", "intra-concept noise");
    add_kv_option(synth, st, "--jitter", "synth.image_jitter", "per-image identity offset norm");
    add_kv_option(synth, st, "--seed", "synth.seed", "generation seed");

    CLI::App* train = app.add_subcommand("train", "train a variant on a dataset");
    add_kv_option(train, st, "--dataset", "io.dataset", "dataset file prefix");
    add_kv_option(train, st, "--out", "io.checkpoint", "checkpoint output path");
    add_kv_option(train, st, "--log", "io.log", "training log CSV path");
    add_kv_option(train, st, "--variant", "trainer.variant", "base|united|multiple|addr");
    add_kv_option(train, st, "--seed", "trainer.seed", "training seed");
    add_kv_option(train, st, "--epochs", "trainer.epochs", "outer iteration budget");
    add_kv_option(train, st, "--batch", "trainer.batch_size", "minibatch size");
    add_kv_option(train, st, "--dim", "trainer.dim", "embedding dimension");
    add_kv_option(train, st, "--lr", "trainer.lr", "base learning rate");
    add_kv_option(train, st, "--delta", "trainer.delta", "triplet margin");
    add_kv_option(train, st, "--beta", "trainer.beta", "adversarial weight");
    add_kv_option(train, st, "--gamma", "reg.gamma", "regularization weight");
    add_kv_option(train, st, "--alpha", "reg.alpha", "regularization margin");
    train->add_option("--resume", resume_path, "resume from a checkpoint (run settings come from the checkpoint)")
        ->type_name("FILE");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_kv_option(eval, st, "--checkpoint", "io.checkpoint", "checkpoint path");
    add_kv_option(eval, st, "--dataset", "io.dataset", "dataset file prefix");
    add_kv_option(eval, st, "--split", "eval.split", "split to evaluate (train|val|test)");
    add_kv_option(eval, st, "--folds", "eval.folds", "average over this many test folds");
    add_kv_option(eval, st, "--out", "io.report", "report CSV path");

    CLI::App* ablate = app.add_subcommand("ablate", "train and evaluate a variant grid");
    add_kv_option(ablate, st, "--dataset", "io.dataset", "dataset file prefix");
    add_kv_option(ablate, st, "--variants", "ablate.variants", "comma-separated variants");
    add_kv_option(ablate, st, "--seeds", "ablate.seeds", "comma-separated seeds");
    add_kv_option(ablate, st, "--epochs", "trainer.epochs", "outer iteration budget");
    add_kv_option(ablate, st, "--batch", "trainer.batch_size", "minibatch size");
    add_kv_option(ablate, st, "--dim", "trainer.dim", "embedding dimension");
    add_kv_option(ablate, st, "--folds", "eval.folds", "average over this many test folds");
    add_kv_option(ablate, st, "--out", "io.report", "table CSV path");

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every gradient");
    add_kv_option(gradcheck, st, "--instances", "check.instances", "instances per component");
    add_kv_option(gradcheck, st, "--seed", "check.seed", "fixture seed");
    add_kv_option(gradcheck, st, "--tolerance", "check.tolerance", "max relative error");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        apply_all(st);
        if (synth->parsed()) return cmd_synth(st);
        if (train->parsed()) return cmd_train(st, resume_path);
        if (eval->parsed()) return cmd_eval(st);
        if (ablate->parsed()) return cmd_ablate(st);
        if (gradcheck->parsed()) return cmd_gradcheck(st);
        std::cerr << "no subcommand\n";
        return 2;
    } catch (const addr::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const addr::FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 3;
    } catch (const addr::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const addr::ShapeError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const addr::NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
