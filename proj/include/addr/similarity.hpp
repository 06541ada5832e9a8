#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "addr/encoders.hpp"
#include "addr/numerics.hpp"

namespace addr {

// Learnable metric parameters. The temperature is stored as log_tau and
// exponentiated on use, which keeps tau positive under unconstrained updates.
struct MetricParams {
    double log_tau = 0.0;

    double tau() const { return std::exp(log_tau); }
    static MetricParams from_tau(double tau) {
        if (!(tau > 0.0)) throw ConfigError("MetricParams: tau must be positive");
        return MetricParams{std::log(tau)};
    }
};

// Sim(V, W) = (1/m) sum_j smoothmax_i(v_i . w_j), with
// smoothmax(s; tau) = (1/tau) log sum_i exp(tau s_i).
// Soft alignment of every word to its best-matching region; the log-sum-exp
// also rewards a word matched by several regions, which is what separates a
// true pair from a single stray look-alike region.
inline double sim(const Mat64& regions, const Mat64& words, const MetricParams& metric) {
    if (regions.rows < 1 || words.rows < 1) throw ShapeError("sim: empty feature set");
    if (regions.cols != words.cols) throw ShapeError("sim: embedding dims differ");
    const int n = regions.rows, m = words.rows, dim = regions.cols;
    const double tau = metric.tau();
    double total = 0.0;
    std::vector<double> s(n);
    for (int j = 0; j < m; ++j) {
        const double* w = words.row(j);
        double mx = -1e300;
        for (int i = 0; i < n; ++i) {
            s[i] = dot(regions.row(i), w, dim);
            if (s[i] > mx) mx = s[i];
        }
        double z = 0.0;
        for (int i = 0; i < n; ++i) z += std::exp(tau * (s[i] - mx));
        total += mx + std::log(z) / tau;
    }
    const double value = total / m;
    if (!std::isfinite(value)) throw NumericError("sim: non-finite score");
    return value;
}

inline double sim(const EmbeddedSet& image, const EmbeddedSet& sentence, const MetricParams& metric) {
    return sim(image.rows, sentence.rows, metric);
}

// Accumulates upstream * dSim into per-row gradients and the log_tau slot.
inline void sim_backward_acc(const Mat64& regions, const Mat64& words, const MetricParams& metric, double upstream,
                             Mat64& d_regions, Mat64& d_words, double& d_log_tau) {
    require_same_shape(d_regions, regions, "sim_backward");
    require_same_shape(d_words, words, "sim_backward");
    if (regions.cols != words.cols) throw ShapeError("sim_backward: embedding dims differ");
    const int n = regions.rows, m = words.rows, dim = regions.cols;
    const double tau = metric.tau();
    std::vector<double> s(n), p(n);
    for (int j = 0; j < m; ++j) {
        const double* w = words.row(j);
        double mx = -1e300;
        for (int i = 0; i < n; ++i) {
            s[i] = dot(regions.row(i), w, dim);
            if (s[i] > mx) mx = s[i];
        }
        double z = 0.0;
        for (int i = 0; i < n; ++i) {
            p[i] = std::exp(tau * (s[i] - mx));
            z += p[i];
        }
        const double smax = mx + std::log(z) / tau;
        double mean_s = 0.0;
        for (int i = 0; i < n; ++i) {
            p[i] /= z;  // softmax over regions for word j
            mean_s += p[i] * s[i];
        }
        // d smoothmax / d log_tau = E_p[s] - smoothmax
        d_log_tau += upstream * (mean_s - smax) / m;
        const double scale = upstream / m;
        double* dw = d_words.row(j);
        for (int i = 0; i < n; ++i) {
            const double c = scale * p[i];
            if (c == 0.0) continue;
            const double* v = regions.row(i);
            double* dv = d_regions.row(i);
            for (int d = 0; d < dim; ++d) {
                dv[d] += c * w[d];
                dw[d] += c * v[d];
            }
        }
    }
}

// All pairwise scores over an aligned minibatch; row a, column b holds
// sim(image a, sentence b), so the diagonal carries the positive pairs.
struct SimMatrix {
    Mat64 scores;
    std::vector<uint64_t> image_ids;
    std::vector<uint64_t> caption_ids;
};

inline SimMatrix sim_matrix(std::span<const EmbeddedSet> images, std::span<const EmbeddedSet> sentences,
                            const MetricParams& metric) {
    if (images.empty() || sentences.empty()) throw ShapeError("sim_matrix: empty batch");
    SimMatrix out;
    out.scores = Mat64(static_cast<int>(images.size()), static_cast<int>(sentences.size()));
    for (const auto& v : images) out.image_ids.push_back(v.pair_id);
    for (const auto& w : sentences) out.caption_ids.push_back(w.pair_id);
    for (size_t a = 0; a < images.size(); ++a)
        for (size_t b = 0; b < sentences.size(); ++b)
            out.scores.at(static_cast<int>(a), static_cast<int>(b)) = sim(images[a], sentences[b], metric);
    return out;
}

// Hardest mismatched sentence (column) and image (row) for batch position p.
// Ties break toward the lowest index.
struct HardNegatives {
    int sentence = -1;  // argmax_{b != p} scores[p][b]
    int image = -1;     // argmax_{a != p} scores[a][p]
};

inline HardNegatives hard_negatives(const Mat64& scores, int p) {
    const int k = scores.rows;
    if (k != scores.cols) throw ShapeError("hard_negatives: scores must be square");
    if (k < 2) throw ShapeError("hard_negatives: need a batch of at least 2");
    if (p < 0 || p >= k) throw ShapeError("hard_negatives: index out of range");
    HardNegatives hn;
    double best_s = -1e300, best_i = -1e300;
    for (int b = 0; b < k; ++b) {
        if (b == p) continue;
        if (scores.at(p, b) > best_s) {
            best_s = scores.at(p, b);
            hn.sentence = b;
        }
    }
    for (int a = 0; a < k; ++a) {
        if (a == p) continue;
        if (scores.at(a, p) > best_i) {
            best_i = scores.at(a, p);
            hn.image = a;
        }
    }
    return hn;
}

inline HardNegatives hard_negatives(const SimMatrix& m, int p) { return hard_negatives(m.scores, p); }

// Hinge ranking loss against the hardest in-batch negatives, averaged over
// batch positions:
//   mean_p max[0, delta - S[p][p] + S[p][q_p]] + max[0, delta - S[p][p] + S[r_p][p]].
// The subgradient treats the argmax selections as fixed and is zero when a
// hinge argument is exactly zero.
struct TripletResult {
    double loss = 0.0;
    Mat64 d_scores;
};

inline TripletResult triplet_loss(const Mat64& scores, double delta) {
    if (delta < 0.0) throw ConfigError("triplet_loss: delta must be non-negative");
    const int k = scores.rows;
    if (k != scores.cols) throw ShapeError("triplet_loss: scores must be square");
    if (k < 2) throw ShapeError("triplet_loss: need a batch of at least 2");
    TripletResult out;
    out.d_scores = Mat64(k, k);
    const double inv_k = 1.0 / k;
    for (int p = 0; p < k; ++p) {
        const HardNegatives hn = hard_negatives(scores, p);
        const double pos = scores.at(p, p);
        const double h1 = delta - pos + scores.at(p, hn.sentence);
        const double h2 = delta - pos + scores.at(hn.image, p);
        if (h1 > 0.0) {
            out.loss += h1 * inv_k;
            out.d_scores.at(p, p) -= inv_k;
            out.d_scores.at(p, hn.sentence) += inv_k;
        }
        if (h2 > 0.0) {
            out.loss += h2 * inv_k;
            out.d_scores.at(p, p) -= inv_k;
            out.d_scores.at(hn.image, p) += inv_k;
        }
    }
    return out;
}

inline TripletResult triplet_loss(const SimMatrix& m, double delta) { return triplet_loss(m.scores, delta); }

}  // namespace addr
