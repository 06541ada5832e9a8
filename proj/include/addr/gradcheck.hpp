#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "addr/discriminator.hpp"
#include "addr/encoders.hpp"
#include "addr/numerics.hpp"
#include "addr/regularizer.hpp"
#include "addr/similarity.hpp"
#include "addr/trainer.hpp"

// Finite-difference verification of every analytic gradient in the library,
// on seeded random tiny instances resampled away from hinge kinks and argmax
// ties. The analytic side always goes through the production entry points.

namespace addr {

struct GradCheckConfig {
    uint64_t seed = 20240501;
    int instances = 100;
    double tolerance = 1e-4;
    int dim = 8;      // embedding dim of the tiny instances
    int regions = 4;  // region rows per set
    int words = 3;    // word rows per set
    double fd_eps = 1e-5;
};

struct ComponentResult {
    std::string component;
    double max_rel_err = 0.0;
    int instances = 0;
    bool passed = false;
};

namespace gradcheck_detail {

constexpr double kKinkMargin = 1e-3;

inline Mat64 random_unit_rows(Rng& rng, int rows, int dim) {
    Mat64 m(rows, dim);
    for (int r = 0; r < rows; ++r) {
        double nm = 0.0;
        while (nm < 1e-3) {
            for (int d = 0; d < dim; ++d) m.at(r, d) = rng.normal();
            nm = norm2(m.row(r), dim);
        }
        for (int d = 0; d < dim; ++d) m.at(r, d) /= nm;
    }
    return m;
}

inline Discriminator random_disc(Rng& rng, int dim) {
    Discriminator f;
    f.weight.resize(dim);
    const double s = 1.0 / std::sqrt(static_cast<double>(dim));
    for (auto& w : f.weight) w = rng.uniform(-1.0, 1.0) * s * 2.0;
    f.bias = rng.uniform(-0.5, 0.5);
    return f;
}

// Strictly separated hinge arguments and argmax gaps on a square score
// matrix, so one fd step cannot cross a kink or flip a selection.
inline bool triplet_instance_safe(const Mat64& m, double delta) {
    const int k = m.rows;
    for (int p = 0; p < k; ++p) {
        double top1_row = -1e300, top2_row = -1e300, top1_col = -1e300, top2_col = -1e300;
        for (int b = 0; b < k; ++b) {
            if (b == p) continue;
            const double s = m.at(p, b);
            if (s > top1_row) {
                top2_row = top1_row;
                top1_row = s;
            } else if (s > top2_row) {
                top2_row = s;
            }
            const double t = m.at(b, p);
            if (t > top1_col) {
                top2_col = top1_col;
                top1_col = t;
            } else if (t > top2_col) {
                top2_col = t;
            }
        }
        if (k > 2 && (top1_row - top2_row < kKinkMargin || top1_col - top2_col < kKinkMargin)) return false;
        if (std::abs(delta - m.at(p, p) + top1_row) < kKinkMargin) return false;
        if (std::abs(delta - m.at(p, p) + top1_col) < kKinkMargin) return false;
    }
    return true;
}

struct MaxErr {
    double value = 0.0;
    void update(double e) {
        if (e > value) value = e;
    }
};

}  // namespace gradcheck_detail

// Triplet ranking loss differentiated with respect to the score matrix.
inline double check_triplet(const GradCheckConfig& cfg, Rng& rng) {
    gradcheck_detail::MaxErr err;
    const int k = 4;
    const double delta = 0.2;
    for (int inst = 0; inst < cfg.instances; ++inst) {
        Mat64 m(k, k);
        do {
            for (auto& v : m.data) v = rng.uniform(-1.0, 1.0);
        } while (!gradcheck_detail::triplet_instance_safe(m, delta));
        const TripletResult res = triplet_loss(m, delta);
        const Vec64 numeric = fd_gradient(
            [&](const Vec64& x) {
                Mat64 probe = m;
                probe.data = x;
                return triplet_loss(probe, delta).loss;
            },
            m.data, cfg.fd_eps);
        err.update(relative_error(res.d_scores.data, numeric));
    }
    return err.value;
}

// Adversarial cross-entropy: parameter side.
inline double check_adv_params(const GradCheckConfig& cfg, Rng& rng) {
    gradcheck_detail::MaxErr err;
    for (int inst = 0; inst < cfg.instances; ++inst) {
        const Mat64 regions = gradcheck_detail::random_unit_rows(rng, cfg.regions, cfg.dim);
        const Mat64 words = gradcheck_detail::random_unit_rows(rng, cfg.words, cfg.dim);
        const Discriminator f = gradcheck_detail::random_disc(rng, cfg.dim);
        const AdvGrads g = adv_grads(f, regions, words);
        Vec64 analytic = g.d_weight;
        analytic.push_back(g.d_bias);
        Vec64 flat = f.weight;
        flat.push_back(f.bias);
        const Vec64 numeric = fd_gradient(
            [&](const Vec64& x) {
                Discriminator probe;
                probe.weight.assign(x.begin(), x.end() - 1);
                probe.bias = x.back();
                return adv_loss(probe, regions, words);
            },
            flat, cfg.fd_eps);
        err.update(relative_error(analytic, numeric));
    }
    return err.value;
}

// Adversarial cross-entropy: feature side (the gradient the generator sees).
inline double check_adv_features(const GradCheckConfig& cfg, Rng& rng) {
    gradcheck_detail::MaxErr err;
    for (int inst = 0; inst < cfg.instances; ++inst) {
        const Mat64 regions = gradcheck_detail::random_unit_rows(rng, cfg.regions, cfg.dim);
        const Mat64 words = gradcheck_detail::random_unit_rows(rng, cfg.words, cfg.dim);
        const Discriminator f = gradcheck_detail::random_disc(rng, cfg.dim);
        const AdvGrads g = adv_grads(f, regions, words);
        Vec64 analytic = g.d_regions.data;
        analytic.insert(analytic.end(), g.d_words.data.begin(), g.d_words.data.end());
        Vec64 flat = regions.data;
        flat.insert(flat.end(), words.data.begin(), words.data.end());
        const Vec64 numeric = fd_gradient(
            [&](const Vec64& x) {
                Mat64 pr = regions, pw = words;
                std::copy(x.begin(), x.begin() + pr.data.size(), pr.data.begin());
                std::copy(x.begin() + pr.data.size(), x.end(), pw.data.begin());
                return adv_loss(f, pr, pw);
            },
            flat, cfg.fd_eps);
        err.update(relative_error(analytic, numeric));
    }
    return err.value;
}

namespace gradcheck_detail {

struct RegFixture {
    Mat64 vp, wp, vq, wq, vr, wr;
    Discriminator fp, fq, fr;
    double alpha = 0.05;

    RegInputs inputs() const {
        RegInputs in;
        in.id_p = 1;
        in.id_q = 2;
        in.id_r = 3;
        in.alpha = alpha;
        in.p = {&vp, &wp};
        in.q = {&vq, &wq};
        in.r = {&vr, &wr};
        in.f_p = &fp;
        in.f_q = &fq;
        in.f_r = &fr;
        return in;
    }

    Vec64 flat_params() const {
        Vec64 x;
        for (const Discriminator* f : {&fp, &fq, &fr}) {
            x.insert(x.end(), f->weight.begin(), f->weight.end());
            x.push_back(f->bias);
        }
        return x;
    }

    RegFixture with_params(const Vec64& x) const {
        RegFixture out = *this;
        const size_t dim = fp.weight.size();
        size_t off = 0;
        for (Discriminator* f : {&out.fp, &out.fq, &out.fr}) {
            f->weight.assign(x.begin() + off, x.begin() + off + dim);
            f->bias = x[off + dim];
            off += dim + 1;
        }
        return out;
    }

    bool safe() const {
        const auto arg = [&](const PairFeatures& d, const Discriminator& own, const Discriminator& other) {
            return alpha + domain_risk(own, d) - domain_risk(other, d);
        };
        const RegInputs in = inputs();
        return std::abs(arg(in.p, fp, fq)) > kKinkMargin && std::abs(arg(in.q, fq, fp)) > kKinkMargin &&
               std::abs(arg(in.r, fr, fp)) > kKinkMargin && std::abs(arg(in.p, fp, fr)) > kKinkMargin;
    }
};

inline RegFixture random_reg_fixture(const GradCheckConfig& cfg, Rng& rng) {
    RegFixture fx;
    do {
        fx.vp = random_unit_rows(rng, cfg.regions, cfg.dim);
        fx.wp = random_unit_rows(rng, cfg.words, cfg.dim);
        fx.vq = random_unit_rows(rng, cfg.regions, cfg.dim);
        fx.wq = random_unit_rows(rng, cfg.words, cfg.dim);
        fx.vr = random_unit_rows(rng, cfg.regions, cfg.dim);
        fx.wr = random_unit_rows(rng, cfg.words, cfg.dim);
        fx.fp = random_disc(rng, cfg.dim);
        fx.fq = random_disc(rng, cfg.dim);
        fx.fr = random_disc(rng, cfg.dim);
    } while (!fx.safe());
    return fx;
}

}  // namespace gradcheck_detail

// Regularization hinges with respect to all three discriminators' parameters.
inline double check_regularizer(const GradCheckConfig& cfg, Rng& rng, bool literal_l2 = false) {
    gradcheck_detail::MaxErr err;
    for (int inst = 0; inst < cfg.instances; ++inst) {
        const auto fx = gradcheck_detail::random_reg_fixture(cfg, rng);
        const RegResult res = reg_loss(fx.inputs(), literal_l2);
        Vec64 analytic;
        analytic.insert(analytic.end(), res.d_wp.begin(), res.d_wp.end());
        analytic.push_back(res.d_bp);
        analytic.insert(analytic.end(), res.d_wq.begin(), res.d_wq.end());
        analytic.push_back(res.d_bq);
        analytic.insert(analytic.end(), res.d_wr.begin(), res.d_wr.end());
        analytic.push_back(res.d_br);
        const Vec64 numeric = fd_gradient(
            [&](const Vec64& x) {
                const auto probe = fx.with_params(x);
                const RegResult r = reg_loss(probe.inputs(), literal_l2);
                return r.total();
            },
            fx.flat_params(), cfg.fd_eps);
        err.update(relative_error(analytic, numeric));
    }
    return err.value;
}

// An all-slack fixture: every hinge strictly inactive, so both the analytic
// and the finite-difference gradients must vanish exactly.
inline double check_regularizer_slack(const GradCheckConfig& cfg) {
    gradcheck_detail::RegFixture fx;
    const int dim = cfg.dim;
    auto axis_rows = [&](int rows, int axis, double sign) {
        Mat64 m(rows, dim);
        for (int r = 0; r < rows; ++r) m.at(r, axis) = sign;
        return m;
    };
    fx.vp = axis_rows(cfg.regions, 0, 1.0);
    fx.wp = axis_rows(cfg.words, 0, -1.0);
    fx.vq = axis_rows(cfg.regions, 1, 1.0);
    fx.wq = axis_rows(cfg.words, 1, -1.0);
    fx.vr = axis_rows(cfg.regions, 2, 1.0);
    fx.wr = axis_rows(cfg.words, 2, -1.0);
    auto sharp_disc = [&](int axis) {
        Discriminator f;
        f.weight.assign(dim, 0.0);
        f.weight[axis] = -6.0;
        return f;
    };
    fx.fp = sharp_disc(0);
    fx.fq = sharp_disc(1);
    fx.fr = sharp_disc(2);

    const RegResult res = reg_loss(fx.inputs());
    if (res.total() != 0.0) throw NumericError("slack fixture unexpectedly active");
    Vec64 analytic;
    analytic.insert(analytic.end(), res.d_wp.begin(), res.d_wp.end());
    analytic.push_back(res.d_bp);
    analytic.insert(analytic.end(), res.d_wq.begin(), res.d_wq.end());
    analytic.push_back(res.d_bq);
    analytic.insert(analytic.end(), res.d_wr.begin(), res.d_wr.end());
    analytic.push_back(res.d_br);
    const Vec64 numeric = fd_gradient(
        [&](const Vec64& x) { return reg_loss(fx.with_params(x).inputs()).total(); }, fx.flat_params(), cfg.fd_eps);
    return relative_error(analytic, numeric);
}

// Projection + L2 normalization against a random upstream gradient, with
// respect to projection, bias and the raw inputs.
inline double check_encoder(const GradCheckConfig& cfg, Rng& rng) {
    gradcheck_detail::MaxErr err;
    const int raw_dim = 5, dim = 4, rows = 3;
    for (int inst = 0; inst < cfg.instances; ++inst) {
        GeneratorParams params;
        params.dim = dim;
        params.proj_img = Mat64(raw_dim, dim);
        params.proj_txt = Mat64(2, dim);  // unused modality, kept minimal
        params.bias_img.assign(dim, 0.0);
        params.bias_txt.assign(dim, 0.0);
        for (auto& v : params.proj_img.data) v = rng.uniform(-0.6, 0.6);
        for (auto& v : params.proj_txt.data) v = rng.uniform(-0.6, 0.6);
        for (auto& v : params.bias_img) v = rng.uniform(-0.2, 0.2);

        FeatureItem raw;
        raw.id = 1;
        raw.modality = Modality::regions;
        raw.features = Mat64(rows, raw_dim);
        for (auto& v : raw.features.data) v = rng.normal();

        Mat64 upstream(rows, dim);
        for (auto& v : upstream.data) v = rng.normal();

        // resample when a projected row is too short for stable differences
        bool degenerate = false;
        {
            Vec64 y(dim);
            for (int r = 0; r < rows && !degenerate; ++r) {
                detail::project_row(params.proj_img, params.bias_img, raw.features.row(r), y.data());
                if (norm2(y) < 0.2) degenerate = true;
            }
        }
        if (degenerate) {
            --inst;
            continue;
        }

        const EncodeGrads g = encode_backward(params, raw, upstream);
        Vec64 analytic = g.d_proj.data;
        analytic.insert(analytic.end(), g.d_bias.begin(), g.d_bias.end());
        analytic.insert(analytic.end(), g.d_raw.data.begin(), g.d_raw.data.end());

        Vec64 flat = params.proj_img.data;
        flat.insert(flat.end(), params.bias_img.begin(), params.bias_img.end());
        flat.insert(flat.end(), raw.features.data.begin(), raw.features.data.end());
        const Vec64 numeric = fd_gradient(
            [&](const Vec64& x) {
                GeneratorParams pp = params;
                FeatureItem rr = raw;
                size_t off = 0;
                std::copy(x.begin(), x.begin() + pp.proj_img.data.size(), pp.proj_img.data.begin());
                off += pp.proj_img.data.size();
                std::copy(x.begin() + off, x.begin() + off + pp.bias_img.size(), pp.bias_img.begin());
                off += pp.bias_img.size();
                std::copy(x.begin() + off, x.end(), rr.features.data.begin());
                const EmbeddedSet enc = encode(pp, rr);
                double v = 0.0;
                for (size_t t = 0; t < enc.rows.data.size(); ++t) v += upstream.data[t] * enc.rows.data[t];
                return v;
            },
            flat, cfg.fd_eps);
        err.update(relative_error(analytic, numeric));
    }
    return err.value;
}

// Smooth-max similarity with respect to both embedded sets and log tau.
inline double check_similarity(const GradCheckConfig& cfg, Rng& rng) {
    gradcheck_detail::MaxErr err;
    for (int inst = 0; inst < cfg.instances; ++inst) {
        const Mat64 regions = gradcheck_detail::random_unit_rows(rng, cfg.regions, cfg.dim);
        const Mat64 words = gradcheck_detail::random_unit_rows(rng, cfg.words, cfg.dim);
        MetricParams metric;
        metric.log_tau = rng.uniform(0.8, 2.4);

        Mat64 d_regions(cfg.regions, cfg.dim), d_words(cfg.words, cfg.dim);
        double d_log_tau = 0.0;
        sim_backward_acc(regions, words, metric, 1.0, d_regions, d_words, d_log_tau);
        Vec64 analytic = d_regions.data;
        analytic.insert(analytic.end(), d_words.data.begin(), d_words.data.end());
        analytic.push_back(d_log_tau);

        Vec64 flat = regions.data;
        flat.insert(flat.end(), words.data.begin(), words.data.end());
        flat.push_back(metric.log_tau);
        const Vec64 numeric = fd_gradient(
            [&](const Vec64& x) {
                Mat64 pr = regions, pw = words;
                std::copy(x.begin(), x.begin() + pr.data.size(), pr.data.begin());
                std::copy(x.begin() + pr.data.size(), x.end() - 1, pw.data.begin());
                MetricParams pm;
                pm.log_tau = x.back();
                return sim(pr, pw, pm);
            },
            flat, cfg.fd_eps);
        err.update(relative_error(analytic, numeric));
    }
    return err.value;
}

namespace gradcheck_detail {

struct GenFixture {
    GeneratorParams params;
    MetricParams metric;
    std::vector<FeatureItem> images;
    std::vector<FeatureItem> captions;
    std::vector<Discriminator> discs;
    double beta = 0.3;
    double delta = 0.2;

    std::vector<GenBatchItem> items() const {
        std::vector<GenBatchItem> out;
        for (size_t i = 0; i < images.size(); ++i)
            out.push_back(GenBatchItem{&images[i], &captions[i], &discs[i]});
        return out;
    }

    Vec64 flat() const {
        Vec64 x = params.proj_img.data;
        x.insert(x.end(), params.bias_img.begin(), params.bias_img.end());
        x.insert(x.end(), params.proj_txt.data.begin(), params.proj_txt.data.end());
        x.insert(x.end(), params.bias_txt.begin(), params.bias_txt.end());
        x.push_back(metric.log_tau);
        return x;
    }

    void unflatten(const Vec64& x, GeneratorParams& p, MetricParams& m) const {
        p = params;
        size_t off = 0;
        std::copy(x.begin(), x.begin() + p.proj_img.data.size(), p.proj_img.data.begin());
        off += p.proj_img.data.size();
        std::copy(x.begin() + off, x.begin() + off + p.bias_img.size(), p.bias_img.begin());
        off += p.bias_img.size();
        std::copy(x.begin() + off, x.begin() + off + p.proj_txt.data.size(), p.proj_txt.data.begin());
        off += p.proj_txt.data.size();
        std::copy(x.begin() + off, x.begin() + off + p.bias_txt.size(), p.bias_txt.begin());
        off += p.bias_txt.size();
        m.log_tau = x[off];
    }
};

inline GenFixture random_gen_fixture(const GradCheckConfig& cfg, Rng& rng) {
    const int k = 3, raw_img = 10, raw_txt = 7;
    GenFixture fx;
    while (true) {
        fx.images.clear();
        fx.captions.clear();
        fx.discs.clear();
        fx.params = init_generator(rng, raw_img, raw_txt, cfg.dim);
        for (auto& v : fx.params.bias_img) v = rng.uniform(-0.1, 0.1);
        for (auto& v : fx.params.bias_txt) v = rng.uniform(-0.1, 0.1);
        fx.metric.log_tau = rng.uniform(1.0, 2.0);
        for (int i = 0; i < k; ++i) {
            FeatureItem img;
            img.id = static_cast<uint64_t>(i);
            img.modality = Modality::regions;
            img.features = Mat64(cfg.regions, raw_img);
            for (auto& v : img.features.data) v = rng.normal();
            fx.images.push_back(std::move(img));
            FeatureItem cap;
            cap.id = 1000 + static_cast<uint64_t>(i);
            cap.modality = Modality::words;
            cap.features = Mat64(cfg.words, raw_txt);
            for (auto& v : cap.features.data) v = rng.normal();
            fx.captions.push_back(std::move(cap));
            fx.discs.push_back(random_disc(rng, cfg.dim));
        }
        std::vector<EmbeddedSet> regions, words;
        for (int i = 0; i < k; ++i) {
            regions.push_back(encode(fx.params, fx.images[i]));
            words.push_back(encode(fx.params, fx.captions[i]));
        }
        const SimMatrix m = sim_matrix(regions, words, fx.metric);
        if (triplet_instance_safe(m.scores, fx.delta)) break;
    }
    return fx;
}

}  // namespace gradcheck_detail

// The composed generator-phase objective L_rank - beta * mean L_adv, with
// respect to every generator parameter and log tau, through the full chain
// encode -> scores -> triplet plus the adversarial reversal.
inline double check_generator_objective(const GradCheckConfig& cfg, Rng& rng) {
    gradcheck_detail::MaxErr err;
    for (int inst = 0; inst < cfg.instances; ++inst) {
        const auto fx = gradcheck_detail::random_gen_fixture(cfg, rng);
        const auto items = fx.items();
        GenGrads grads(fx.params);
        generator_objective(fx.params, fx.metric, items, fx.beta, fx.delta, &grads);
        Vec64 analytic = grads.d_proj_img.data;
        analytic.insert(analytic.end(), grads.d_bias_img.begin(), grads.d_bias_img.end());
        analytic.insert(analytic.end(), grads.d_proj_txt.data.begin(), grads.d_proj_txt.data.end());
        analytic.insert(analytic.end(), grads.d_bias_txt.begin(), grads.d_bias_txt.end());
        analytic.push_back(grads.d_log_tau);
        const Vec64 numeric = fd_gradient(
            [&](const Vec64& x) {
                GeneratorParams pp;
                MetricParams pm;
                fx.unflatten(x, pp, pm);
                return generator_objective(pp, pm, items, fx.beta, fx.delta).value;
            },
            fx.flat(), cfg.fd_eps);
        err.update(relative_error(analytic, numeric));
    }
    return err.value;
}

inline std::vector<ComponentResult> run_gradient_checks(const GradCheckConfig& cfg) {
    std::vector<ComponentResult> out;
    auto push = [&](const std::string& name, double max_err, int instances) {
        out.push_back(ComponentResult{name, max_err, instances, max_err <= cfg.tolerance});
    };
    {
        Rng rng(cfg.seed, 10);
        push("triplet", check_triplet(cfg, rng), cfg.instances);
    }
    {
        Rng rng(cfg.seed, 11);
        push("adversarial_params", check_adv_params(cfg, rng), cfg.instances);
    }
    {
        Rng rng(cfg.seed, 12);
        push("adversarial_features", check_adv_features(cfg, rng), cfg.instances);
    }
    {
        Rng rng(cfg.seed, 13);
        push("regularizer", check_regularizer(cfg, rng, false), cfg.instances);
    }
    {
        Rng rng(cfg.seed, 14);
        push("regularizer_literal_l2", check_regularizer(cfg, rng, true), cfg.instances);
    }
    push("regularizer_slack", check_regularizer_slack(cfg), 1);
    {
        Rng rng(cfg.seed, 15);
        push("encoder", check_encoder(cfg, rng), cfg.instances);
    }
    {
        Rng rng(cfg.seed, 16);
        push("similarity", check_similarity(cfg, rng), cfg.instances);
    }
    {
        Rng rng(cfg.seed, 17);
        push("generator_objective", check_generator_objective(cfg, rng), cfg.instances);
    }
    return out;
}

}  // namespace addr
