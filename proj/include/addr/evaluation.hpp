#pragma once

#include <algorithm>
#include <cstdint>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "addr/data.hpp"
#include "addr/discriminator.hpp"
#include "addr/encoders.hpp"
#include "addr/similarity.hpp"

namespace addr {

// Full query x gallery score matrix for a set of images and captions,
// scored one caption at a time (retrieval granularity is the caption, not
// the caption group).
inline Mat64 score_matrix(const GeneratorParams& params, const MetricParams& metric, const Dataset& ds,
                          const std::vector<int>& image_idx, const std::vector<int>& caption_idx) {
    if (image_idx.empty() || caption_idx.empty()) throw ShapeError("score_matrix: empty gallery");
    std::vector<EmbeddedSet> imgs, caps;
    imgs.reserve(image_idx.size());
    caps.reserve(caption_idx.size());
    for (int i : image_idx) imgs.push_back(encode(params, ds.images[i]));
    for (int c : caption_idx) caps.push_back(encode(params, ds.captions[c]));
    Mat64 scores(static_cast<int>(imgs.size()), static_cast<int>(caps.size()));
    for (size_t a = 0; a < imgs.size(); ++a)
        for (size_t b = 0; b < caps.size(); ++b)
            scores.at(static_cast<int>(a), static_cast<int>(b)) = sim(imgs[a], caps[b], metric);
    return scores;
}

// Rank of a gallery item under a query's score row, counting from 1. Ties
// break toward the lowest gallery index: an equal-scoring item placed before
// `item` outranks it, one placed after does not.
inline int rank_of(const double* row, int gallery, int item) {
    int rank = 1;
    for (int j = 0; j < gallery; ++j) {
        if (j == item) continue;
        if (row[j] > row[item] || (row[j] == row[item] && j < item)) ++rank;
    }
    return rank;
}

// Percentage of queries whose best-ranked ground-truth item lands in the top
// k. `truth[q]` lists the gallery indices that count as correct for query q
// (for image-to-text, all of the image's captions).
inline double recall_at_k(const Mat64& scores, const std::vector<std::vector<int>>& truth, int k) {
    if (scores.cols < 1) throw ShapeError("recall_at_k: empty gallery");
    if (k < 1 || k > scores.cols) throw ConfigError("recall_at_k: k out of range");
    require_size(truth.size(), static_cast<size_t>(scores.rows), "recall_at_k");
    int hits = 0;
    for (int q = 0; q < scores.rows; ++q) {
        if (truth[q].empty()) throw ShapeError("recall_at_k: query with no ground truth");
        bool hit = false;
        for (int item : truth[q]) {
            if (item < 0 || item >= scores.cols) throw ShapeError("recall_at_k: ground truth out of range");
            if (rank_of(scores.row(q), scores.cols, item) <= k) {
                hit = true;
                break;
            }
        }
        hits += hit ? 1 : 0;
    }
    return 100.0 * hits / scores.rows;
}

struct RetrievalReport {
    double r1_i2t = 0, r5_i2t = 0, r10_i2t = 0;
    double r1_t2i = 0, r5_t2i = 0, r10_t2i = 0;
    std::string split;
    std::string variant;
    uint64_t seed = 0;
    uint64_t config_hash = 0;
    uint64_t dataset_hash = 0;

    double rsum() const { return r1_i2t + r5_i2t + r10_i2t + r1_t2i + r5_t2i + r10_t2i; }
};

// Recalls in both directions from an image x caption score matrix.
// caption_owner[b] gives the row (image position) owning caption column b.
// An image query hits if any of its captions ranks in the top k; a caption
// query hits if its image does. k above the gallery size is clamped, so tiny
// fixtures still report R@10.
inline RetrievalReport evaluate_scores(const Mat64& scores, const std::vector<int>& caption_owner) {
    require_size(caption_owner.size(), static_cast<size_t>(scores.cols), "evaluate_scores");
    std::vector<std::vector<int>> i2t_truth(scores.rows);
    for (int b = 0; b < scores.cols; ++b) {
        const int a = caption_owner[b];
        if (a < 0 || a >= scores.rows) throw ShapeError("evaluate_scores: caption owner out of range");
        i2t_truth[a].push_back(b);
    }
    Mat64 t2i(scores.cols, scores.rows);
    std::vector<std::vector<int>> t2i_truth(scores.cols);
    for (int b = 0; b < scores.cols; ++b) {
        for (int a = 0; a < scores.rows; ++a) t2i.at(b, a) = scores.at(a, b);
        t2i_truth[b] = {caption_owner[b]};
    }
    RetrievalReport rep;
    rep.r1_i2t = recall_at_k(scores, i2t_truth, std::min(1, scores.cols));
    rep.r5_i2t = recall_at_k(scores, i2t_truth, std::min(5, scores.cols));
    rep.r10_i2t = recall_at_k(scores, i2t_truth, std::min(10, scores.cols));
    rep.r1_t2i = recall_at_k(t2i, t2i_truth, std::min(1, t2i.cols));
    rep.r5_t2i = recall_at_k(t2i, t2i_truth, std::min(5, t2i.cols));
    rep.r10_t2i = recall_at_k(t2i, t2i_truth, std::min(10, t2i.cols));
    return rep;
}

// Evaluate retrieval over the images of one split.
inline RetrievalReport evaluate_split(const GeneratorParams& params, const MetricParams& metric, const Dataset& ds,
                                      Split split) {
    const std::vector<int> imgs = ds.image_indices(split);
    if (imgs.size() < 2) throw ShapeError("evaluate_split: need at least 2 images in split");
    std::vector<int> caps;
    std::vector<int> owner;
    for (size_t a = 0; a < imgs.size(); ++a)
        for (int c : ds.captions_of[imgs[a]]) {
            caps.push_back(c);
            owner.push_back(static_cast<int>(a));
        }
    const Mat64 scores = score_matrix(params, metric, ds, imgs, caps);
    RetrievalReport rep = evaluate_scores(scores, owner);
    rep.split = split_name(split);
    return rep;
}

// Evaluate over a given list of image indices (used by the 5-fold protocol).
inline RetrievalReport evaluate_images(const GeneratorParams& params, const MetricParams& metric, const Dataset& ds,
                                       const std::vector<int>& imgs) {
    std::vector<int> caps;
    std::vector<int> owner;
    for (size_t a = 0; a < imgs.size(); ++a)
        for (int c : ds.captions_of[imgs[a]]) {
            caps.push_back(c);
            owner.push_back(static_cast<int>(a));
        }
    const Mat64 scores = score_matrix(params, metric, ds, imgs, caps);
    return evaluate_scores(scores, owner);
}

// Mean report over seed-deterministic folds of the test split.
inline RetrievalReport evaluate_folds(const GeneratorParams& params, const MetricParams& metric, const Dataset& ds,
                                      int folds, uint64_t seed) {
    const auto fold_images = make_folds(ds, folds, seed);
    RetrievalReport mean;
    for (const auto& imgs : fold_images) {
        const RetrievalReport r = evaluate_images(params, metric, ds, imgs);
        mean.r1_i2t += r.r1_i2t;
        mean.r5_i2t += r.r5_i2t;
        mean.r10_i2t += r.r10_i2t;
        mean.r1_t2i += r.r1_t2i;
        mean.r5_t2i += r.r5_t2i;
        mean.r10_t2i += r.r10_t2i;
    }
    const double inv = 1.0 / folds;
    mean.r1_i2t *= inv;
    mean.r5_i2t *= inv;
    mean.r10_i2t *= inv;
    mean.r1_t2i *= inv;
    mean.r5_t2i *= inv;
    mean.r10_t2i *= inv;
    mean.split = "test-" + std::to_string(folds) + "fold";
    return mean;
}

inline std::string report_csv_header() {
    return "split,variant,seed,r1_i2t,r5_i2t,r10_i2t,r1_t2i,r5_t2i,r10_t2i,rsum,config_hash,dataset_hash";
}

inline std::string report_csv_row(const RetrievalReport& r) {
    std::ostringstream os;
    os.precision(17);
    os << r.split << ',' << r.variant << ',' << r.seed << ',' << r.r1_i2t << ',' << r.r5_i2t << ',' << r.r10_i2t
       << ',' << r.r1_t2i << ',' << r.r5_t2i << ',' << r.r10_t2i << ',' << r.rsum() << ',' << r.config_hash << ','
       << r.dataset_hash;
    return os.str();
}

// ---------------------------------------------------------------------------
// Domain-confusion probe: how well can a freshly trained logistic classifier
// tell region embeddings from word embeddings? Lower accuracy means more
// domain-invariant features. Pairs are split into probe-train and held-out
// halves; the returned value is the held-out balanced accuracy in percent
// (mean of the two per-class accuracies, so class imbalance cannot fake
// confusion).
// ---------------------------------------------------------------------------
struct ProbeConfig {
    uint64_t seed = 99;
    int steps = 300;
    double lr = 0.05;
    Split split = Split::train;
};

inline double domain_confusion(const GeneratorParams& params, const Dataset& ds, const ProbeConfig& cfg) {
    std::vector<int> pairs = ds.image_indices(cfg.split);
    if (pairs.size() < 4) throw ShapeError("domain_confusion: not enough pairs in split");
    Rng rng(cfg.seed, /*stream=*/3);
    rng.shuffle(pairs);
    const size_t half = pairs.size() / 2;

    auto collect = [&](size_t lo, size_t hi, Mat64& regions, Mat64& words) {
        std::vector<Mat64> vsets, wsets;
        int vr = 0, wr = 0;
        for (size_t k = lo; k < hi; ++k) {
            const int i = pairs[k];
            vsets.push_back(encode(params, ds.images[i]).rows);
            vr += vsets.back().rows;
            for (int c : ds.captions_of[i]) {
                wsets.push_back(encode(params, ds.captions[c]).rows);
                wr += wsets.back().rows;
            }
        }
        regions = Mat64(vr, params.dim);
        words = Mat64(wr, params.dim);
        int r = 0;
        for (const Mat64& m : vsets)
            for (int i = 0; i < m.rows; ++i, ++r)
                std::copy(m.row(i), m.row(i) + params.dim, regions.row(r));
        r = 0;
        for (const Mat64& m : wsets)
            for (int i = 0; i < m.rows; ++i, ++r)
                std::copy(m.row(i), m.row(i) + params.dim, words.row(r));
    };

    Mat64 train_regions, train_words, held_regions, held_words;
    collect(0, half, train_regions, train_words);
    collect(half, pairs.size(), held_regions, held_words);

    Discriminator probe;
    probe.weight.assign(params.dim, 0.0);
    AdamState st_w(params.dim, 0.5, 0.999);
    AdamState st_b(1, 0.5, 0.999);
    Vec64 gw(params.dim);
    for (int step = 0; step < cfg.steps; ++step) {
        std::fill(gw.begin(), gw.end(), 0.0);
        double gb = 0.0;
        adv_param_grads_acc(probe, train_regions, train_words, 1.0, gw, gb);
        adam_step(st_w, probe.weight, gw, cfg.lr);
        adam_step(st_b, probe.bias, gb, cfg.lr);
    }

    int region_hits = 0, word_hits = 0;
    for (int i = 0; i < held_regions.rows; ++i)
        if (predict(probe, held_regions.row(i), params.dim) <= 0.5) ++region_hits;
    for (int j = 0; j < held_words.rows; ++j)
        if (predict(probe, held_words.row(j), params.dim) > 0.5) ++word_hits;
    const double acc0 = 100.0 * region_hits / held_regions.rows;
    const double acc1 = 100.0 * word_hits / held_words.rows;
    return 0.5 * (acc0 + acc1);
}

}  // namespace addr
