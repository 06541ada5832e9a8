#include <cmath>

#include "addr/regularizer.hpp"
#include "doctest.h"

using namespace addr;

namespace {
struct Fixture {
    Mat64 vp, wp, vq, wq, vr, wr;
    Discriminator fp, fq, fr;
    double alpha = 0.05;

    RegInputs inputs(uint64_t id_q = 2, uint64_t id_r = 3) const {
        RegInputs in;
        in.id_p = 1;
        in.id_q = id_q;
        in.id_r = id_r;
        in.alpha = alpha;
        in.p = {&vp, &wp};
        in.q = {&vq, &wq};
        in.r = {&vr, &wr};
        in.f_p = &fp;
        in.f_q = &fq;
        in.f_r = &fr;
        return in;
    }
};

Mat64 rand_rows(Rng& rng, int rows, int dim, double scale = 1.0) {
    Mat64 m(rows, dim);
    for (auto& v : m.data) v = scale * rng.normal();
    return m;
}

Discriminator rand_disc(Rng& rng, int dim, double scale = 0.6) {
    Discriminator f;
    f.weight.resize(dim);
    for (auto& w : f.weight) w = scale * rng.normal();
    f.bias = scale * rng.normal();
    return f;
}

Fixture random_fixture(Rng& rng, int dim = 5, double alpha = 0.05) {
    Fixture fx;
    fx.alpha = alpha;
    fx.vp = rand_rows(rng, 3, dim);
    fx.wp = rand_rows(rng, 2, dim);
    fx.vq = rand_rows(rng, 3, dim);
    fx.wq = rand_rows(rng, 2, dim);
    fx.vr = rand_rows(rng, 3, dim);
    fx.wr = rand_rows(rng, 2, dim);
    fx.fp = rand_disc(rng, dim);
    fx.fq = rand_disc(rng, dim);
    fx.fr = rand_disc(rng, dim);
    return fx;
}
}  // namespace

TEST_SUITE_BEGIN("regularizer");

TEST_CASE("domain risk is the pair's adversarial loss; zero init gives (n+m) ln 2") {
    Rng rng(131);
    Fixture fx = random_fixture(rng);
    fx.fp.weight.assign(5, 0.0);
    fx.fp.bias = 0.0;
    CHECK(std::abs(domain_risk(fx.fp, fx.inputs().p) - 5.0 * std::log(2.0)) < 1e-12);
    // identical parameters evaluate identically on the same domain
    Discriminator copy = fx.fq;
    CHECK(domain_risk(copy, fx.inputs().p) == domain_risk(fx.fq, fx.inputs().p));
    CHECK(domain_risk(fx.fq, fx.inputs().q) == adv_loss(fx.fq, fx.vq, fx.wq));
}

TEST_CASE("slack constraints give zero loss; a known violation gives the hinge value") {
    Rng rng(137);
    Fixture fx = random_fixture(rng);
    // make own-pair risks tiny and cross risks huge by aligning classifiers
    // with their own pair's separation axis
    const int dim = 5;
    auto axis_pair = [&](int axis, Mat64& v, Mat64& w) {
        v = Mat64(3, dim);
        w = Mat64(2, dim);
        for (int r = 0; r < 3; ++r) v.at(r, axis) = 1.0;
        for (int r = 0; r < 2; ++r) w.at(r, axis) = -1.0;
    };
    axis_pair(0, fx.vp, fx.wp);
    axis_pair(1, fx.vq, fx.wq);
    axis_pair(2, fx.vr, fx.wr);
    auto sharp = [&](int axis) {
        Discriminator f;
        f.weight.assign(dim, 0.0);
        f.weight[axis] = -8.0;
        return f;
    };
    fx.fp = sharp(0);
    fx.fq = sharp(1);
    fx.fr = sharp(2);
    const RegResult r = reg_loss(fx.inputs());
    CHECK(r.l1 == 0.0);
    CHECK(r.l2 == 0.0);
    for (double v : r.d_wp) CHECK(v == 0.0);
    for (double v : r.d_wq) CHECK(v == 0.0);
    for (double v : r.d_wr) CHECK(v == 0.0);
    CHECK(r.d_bp == 0.0);
    const auto sat = risk_constraints_satisfied(fx.inputs());
    for (bool ok : sat) CHECK(ok);

    // direct hinge arithmetic: L_p(f_p)=0.6, L_p(f_q)=0.5, alpha=0.05 -> 0.15
    const double fabricated = std::max(0.0, 0.05 + 0.6 - 0.5);
    CHECK(fabricated == doctest::Approx(0.15));
}

TEST_CASE("identical discriminators: constraints hold exactly at zero margin") {
    // the margin sits on the own-risk side, so equal risks satisfy the
    // constraints only when alpha is zero; this keeps reg_loss == 0 and
    // constraint satisfaction logically equivalent at every margin
    Rng rng(139);
    Fixture fx = random_fixture(rng);
    fx.fq = fx.fp;
    fx.fr = fx.fp;
    fx.alpha = 0.0;
    const auto sat0 = risk_constraints_satisfied(fx.inputs());
    for (bool ok : sat0) CHECK(ok);
    CHECK(reg_loss(fx.inputs()).total() == 0.0);

    for (double alpha : {0.05, 1.0}) {
        fx.alpha = alpha;
        const auto sat = risk_constraints_satisfied(fx.inputs());
        for (bool ok : sat) CHECK_FALSE(ok);
        CHECK(reg_loss(fx.inputs()).total() > 0.0);
    }
}

TEST_CASE("hinge/constraint equivalence on 1000 random fixtures") {
    Rng rng(149);
    int zero_losses = 0;
    for (int inst = 0; inst < 1000; ++inst) {
        Fixture fx = random_fixture(rng, 4, 0.05);
        // mix in near-equal classifiers so the zero-loss side is populated
        if (inst % 3 == 0) {
            fx.fq = fx.fp;
            fx.fr = fx.fp;
            if (inst % 6 == 0) fx.fq.bias += 0.5;
        }
        const RegResult r = reg_loss(fx.inputs());
        const auto sat = risk_constraints_satisfied(fx.inputs());
        const bool all_sat = sat[0] && sat[1] && sat[2] && sat[3];
        CHECK((r.total() == 0.0) == all_sat);
        if (r.total() == 0.0) ++zero_losses;
    }
    CHECK(zero_losses > 0);
    CHECK(zero_losses < 1000);
}

TEST_CASE("term order and within-set permutations do not change the loss") {
    Rng rng(151);
    Fixture fx = random_fixture(rng);
    const RegResult base = reg_loss(fx.inputs());
    Fixture perm = fx;
    // permute rows of each feature set
    for (Mat64* m : {&perm.vp, &perm.vq, &perm.vr}) {
        std::swap_ranges(m->row(0), m->row(0) + m->cols, m->row(2));
    }
    for (Mat64* m : {&perm.wp, &perm.wq, &perm.wr}) {
        std::swap_ranges(m->row(0), m->row(0) + m->cols, m->row(1));
    }
    const RegResult permuted = reg_loss(perm.inputs());
    CHECK(permuted.l1 == doctest::Approx(base.l1).epsilon(1e-13));
    CHECK(permuted.l2 == doctest::Approx(base.l2).epsilon(1e-13));
}

TEST_CASE("q == r counts each duplicated hinge once") {
    Rng rng(157);
    Fixture fx = random_fixture(rng);
    fx.vr = fx.vq;
    fx.wr = fx.wq;
    fx.fr = fx.fq;
    const RegResult dedup = reg_loss(fx.inputs(2, 2));
    CHECK(dedup.l2 == 0.0);
    const RegResult both = reg_loss(fx.inputs(2, 3));  // same tensors, distinct ids
    CHECK(dedup.l1 == doctest::Approx(both.l1).epsilon(1e-13));
    CHECK(both.l2 == doctest::Approx(both.l1).epsilon(1e-13));  // r mirrors q here
    // gradients: the deduped result equals the L1-only contribution
    for (size_t i = 0; i < dedup.d_wr.size(); ++i) CHECK(dedup.d_wr[i] == 0.0);
    CHECK(dedup.d_br == 0.0);
}

TEST_CASE("literal L2 keeps the duplicated q-domain hinge") {
    Rng rng(163);
    Fixture fx = random_fixture(rng);
    const RegResult sym = reg_loss(fx.inputs(), false);
    const RegResult lit = reg_loss(fx.inputs(), true);
    const RegInputs in = fx.inputs();
    const double hq = std::max(0.0, fx.alpha + domain_risk(fx.fq, in.q) - domain_risk(fx.fp, in.q));
    const double hpr = std::max(0.0, fx.alpha + domain_risk(fx.fp, in.p) - domain_risk(fx.fr, in.p));
    CHECK(lit.l2 == doctest::Approx(hq + hpr).epsilon(1e-13));
    CHECK(lit.l1 == doctest::Approx(sym.l1).epsilon(1e-13));
}

TEST_CASE("reg gradients match finite differences (both L2 forms)") {
    Rng rng(167);
    for (const bool literal : {false, true}) {
        double max_err = 0.0;
        int done = 0;
        while (done < 60) {
            Fixture fx = random_fixture(rng, 4);
            const RegInputs in = fx.inputs();
            // resample near-kink fixtures
            const double a1 = fx.alpha + domain_risk(fx.fp, in.p) - domain_risk(fx.fq, in.p);
            const double a2 = fx.alpha + domain_risk(fx.fq, in.q) - domain_risk(fx.fp, in.q);
            const double a3 = fx.alpha + domain_risk(fx.fr, in.r) - domain_risk(fx.fp, in.r);
            const double a4 = fx.alpha + domain_risk(fx.fp, in.p) - domain_risk(fx.fr, in.p);
            if (std::abs(a1) < 1e-3 || std::abs(a2) < 1e-3 || std::abs(a3) < 1e-3 || std::abs(a4) < 1e-3) continue;
            ++done;
            const RegResult r = reg_loss(in, literal);
            Vec64 analytic;
            analytic.insert(analytic.end(), r.d_wp.begin(), r.d_wp.end());
            analytic.push_back(r.d_bp);
            analytic.insert(analytic.end(), r.d_wq.begin(), r.d_wq.end());
            analytic.push_back(r.d_bq);
            analytic.insert(analytic.end(), r.d_wr.begin(), r.d_wr.end());
            analytic.push_back(r.d_br);
            Vec64 flat;
            for (const Discriminator* f : {&fx.fp, &fx.fq, &fx.fr}) {
                flat.insert(flat.end(), f->weight.begin(), f->weight.end());
                flat.push_back(f->bias);
            }
            const Vec64 numeric = fd_gradient(
                [&](const Vec64& x) {
                    Fixture probe = fx;
                    size_t off = 0;
                    for (Discriminator* f : {&probe.fp, &probe.fq, &probe.fr}) {
                        f->weight.assign(x.begin() + off, x.begin() + off + 4);
                        f->bias = x[off + 4];
                        off += 5;
                    }
                    return reg_loss(probe.inputs(), literal).total();
                },
                flat, 1e-5);
            max_err = std::max(max_err, relative_error(analytic, numeric));
        }
        CHECK(max_err <= 1e-4);
    }
}

TEST_CASE("descent on adv + gamma reg strictly decreases on a frozen two-pair fixture") {
    Rng rng(173);
    const int dim = 4;
    Mat64 vp = rand_rows(rng, 3, dim), wp = rand_rows(rng, 2, dim);
    Mat64 vq = rand_rows(rng, 3, dim), wq = rand_rows(rng, 2, dim);
    Discriminator fp = rand_disc(rng, dim, 0.1), fq = rand_disc(rng, dim, 0.1);
    const double gamma = 0.4, lr = 0.01;

    auto objective = [&]() {
        RegInputs in;
        in.id_p = 1;
        in.id_q = 2;
        in.id_r = 2;
        in.alpha = 0.05;
        in.p = {&vp, &wp};
        in.q = {&vq, &wq};
        in.r = {&vq, &wq};
        in.f_p = &fp;
        in.f_q = &fq;
        in.f_r = &fq;
        return adv_loss(fp, vp, wp) + adv_loss(fq, vq, wq) + gamma * reg_loss(in).total();
    };

    double prev = objective();
    for (int step = 0; step < 50; ++step) {
        RegInputs in;
        in.id_p = 1;
        in.id_q = 2;
        in.id_r = 2;
        in.alpha = 0.05;
        in.p = {&vp, &wp};
        in.q = {&vq, &wq};
        in.r = {&vq, &wq};
        in.f_p = &fp;
        in.f_q = &fq;
        in.f_r = &fq;
        Vec64 gwp(dim, 0.0), gwq(dim, 0.0);
        double gbp = 0.0, gbq = 0.0;
        adv_param_grads_acc(fp, vp, wp, 1.0, gwp, gbp);
        adv_param_grads_acc(fq, vq, wq, 1.0, gwq, gbq);
        const RegResult r = reg_loss(in);
        for (int d = 0; d < dim; ++d) {
            gwp[d] += gamma * r.d_wp[d];
            gwq[d] += gamma * (r.d_wq[d] + r.d_wr[d]);
        }
        gbp += gamma * r.d_bp;
        gbq += gamma * (r.d_bq + r.d_br);
        for (int d = 0; d < dim; ++d) {
            fp.weight[d] -= lr * gwp[d];
            fq.weight[d] -= lr * gwq[d];
        }
        fp.bias -= lr * gbp;
        fq.bias -= lr * gbq;
        const double cur = objective();
        CHECK(cur < prev + 1e-12);
        prev = cur;
    }
}

TEST_CASE("anchor equal to a negative pair is rejected") {
    Rng rng(179);
    Fixture fx = random_fixture(rng);
    RegInputs in = fx.inputs();
    in.id_q = in.id_p;
    CHECK_THROWS_AS(reg_loss(in), ShapeError);
}

TEST_SUITE_END();
