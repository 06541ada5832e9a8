#pragma once

#include <algorithm>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "addr/evaluation.hpp"
#include "addr/trainer.hpp"

namespace addr {

// Controlled comparison across training variants: every (variant, seed) cell
// trains on the same dataset with the same budget, then evaluates on the test
// split (optionally 5-fold averaged).
struct AblationConfig {
    TrainerConfig base;
    std::vector<Variant> variants{Variant::base, Variant::united, Variant::multiple, Variant::addr};
    std::vector<uint64_t> seeds{1, 2, 3, 4, 5};
    int folds = 0;  // 0: whole test split; otherwise fold count
};

struct AblationRow {
    Variant variant;
    uint64_t seed;
    RetrievalReport report;
};

struct AblationTable {
    std::vector<AblationRow> rows;

    std::vector<const AblationRow*> rows_of(Variant v) const {
        std::vector<const AblationRow*> out;
        for (const auto& r : rows)
            if (r.variant == v) out.push_back(&r);
        return out;
    }

    static double median(std::vector<double> xs) {
        if (xs.empty()) throw ShapeError("median of empty set");
        std::sort(xs.begin(), xs.end());
        const size_t n = xs.size();
        return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
    }

    double median_rsum(Variant v) const {
        std::vector<double> xs;
        for (const AblationRow* r : rows_of(v)) xs.push_back(r->report.rsum());
        return median(std::move(xs));
    }

    double median_r1_i2t(Variant v) const {
        std::vector<double> xs;
        for (const AblationRow* r : rows_of(v)) xs.push_back(r->report.r1_i2t);
        return median(std::move(xs));
    }

    double median_r1_t2i(Variant v) const {
        std::vector<double> xs;
        for (const AblationRow* r : rows_of(v)) xs.push_back(r->report.r1_t2i);
        return median(std::move(xs));
    }

    // Per-seed rows followed by one summary row per variant whose split
    // column reads "median"; columns match report_csv_header().
    std::string to_csv() const {
        std::ostringstream os;
        os << report_csv_header() << '\n';
        for (const auto& r : rows) os << report_csv_row(r.report) << '\n';
        std::vector<Variant> seen;
        for (const auto& r : rows)
            if (std::find(seen.begin(), seen.end(), r.variant) == seen.end()) seen.push_back(r.variant);
        os.precision(17);
        for (Variant v : seen) {
            RetrievalReport med;
            med.split = "median";
            med.variant = variant_name(v);
            med.r1_i2t = median_r1_i2t(v);
            med.r1_t2i = median_r1_t2i(v);
            std::vector<double> r5i, r10i, r5t, r10t;
            for (const AblationRow* r : rows_of(v)) {
                r5i.push_back(r->report.r5_i2t);
                r10i.push_back(r->report.r10_i2t);
                r5t.push_back(r->report.r5_t2i);
                r10t.push_back(r->report.r10_t2i);
            }
            med.r5_i2t = median(r5i);
            med.r10_i2t = median(r10i);
            med.r5_t2i = median(r5t);
            med.r10_t2i = median(r10t);
            os << "median," << variant_name(v) << ",0," << med.r1_i2t << ',' << med.r5_i2t << ',' << med.r10_i2t
               << ',' << med.r1_t2i << ',' << med.r5_t2i << ',' << med.r10_t2i << ',' << median_rsum(v) << ",0,0\n";
        }
        return os.str();
    }
};

inline AblationRow run_ablation_cell(const TrainerConfig& base, Variant v, uint64_t seed, const Dataset& ds,
                                     int folds) {
    TrainerConfig cfg = base;
    cfg.variant = v;
    cfg.seed = seed;
    const TrainResult res = train(cfg, ds);
    AblationRow row;
    row.variant = v;
    row.seed = seed;
    row.report = folds > 0 ? evaluate_folds(res.generator, res.metric, ds, folds, seed)
                           : evaluate_split(res.generator, res.metric, ds, Split::test);
    row.report.variant = variant_name(v);
    row.report.seed = seed;
    row.report.config_hash = config_hash(cfg);
    row.report.dataset_hash = ds.content_hash();
    return row;
}

inline AblationTable run_ablation(const AblationConfig& cfg, const Dataset& ds) {
    if (cfg.variants.empty() || cfg.seeds.empty()) throw ConfigError("ablation: empty grid");
    AblationTable table;
    for (Variant v : cfg.variants)
        for (uint64_t seed : cfg.seeds) table.rows.push_back(run_ablation_cell(cfg.base, v, seed, ds, cfg.folds));
    return table;
}

}  // namespace addr
