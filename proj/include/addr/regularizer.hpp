#pragma once

#include <array>
#include <cstdint>

#include "addr/discriminator.hpp"
#include "addr/numerics.hpp"

namespace addr {

// One pair's embedded feature sets, viewed by the regularizer.
struct PairFeatures {
    const Mat64* regions = nullptr;
    const Mat64* words = nullptr;
};

// Inputs for the discriminative domain regularization around anchor pair p:
// q is the source pair of the hard-negative sentence for image p, r the
// source pair of the hard-negative image for sentence p.
struct RegInputs {
    uint64_t id_p = 0, id_q = 0, id_r = 0;
    PairFeatures p, q, r;
    const Discriminator* f_p = nullptr;
    const Discriminator* f_q = nullptr;
    const Discriminator* f_r = nullptr;
    double alpha = 0.05;
};

// Empirical domain risk of classifier f on one pair: its domain cross-entropy
// over both of the pair's feature sets.
inline double domain_risk(const Discriminator& f, const PairFeatures& pair) {
    return adv_loss(f, *pair.regions, *pair.words);
}

struct RegResult {
    double l1 = 0.0;
    double l2 = 0.0;
    Vec64 d_wp, d_wq, d_wr;
    double d_bp = 0.0, d_bq = 0.0, d_br = 0.0;

    double total() const { return l1 + l2; }
};

namespace detail {

struct RegCtx {
    const RegInputs* in;
    RegResult* out;

    const PairFeatures& pair(int role) const { return role == 0 ? in->p : role == 1 ? in->q : in->r; }
    const Discriminator& disc(int role) const { return *(role == 0 ? in->f_p : role == 1 ? in->f_q : in->f_r); }
    Vec64& d_w(int role) const { return role == 0 ? out->d_wp : role == 1 ? out->d_wq : out->d_wr; }
    double& d_b(int role) const { return role == 0 ? out->d_bp : role == 1 ? out->d_bq : out->d_br; }

    // hinge(alpha + L_domain(f_own) - L_domain(f_other)); accumulates the
    // subgradient into the own/other parameter slots when active.
    double hinge(int domain, int own, int other) const {
        const PairFeatures& d = pair(domain);
        const double arg = in->alpha + domain_risk(disc(own), d) - domain_risk(disc(other), d);
        if (arg <= 0.0) return 0.0;  // inactive (exact zero counts as inactive)
        adv_param_grads_acc(disc(own), *d.regions, *d.words, +1.0, d_w(own), d_b(own));
        adv_param_grads_acc(disc(other), *d.regions, *d.words, -1.0, d_w(other), d_b(other));
        return arg;
    }
};

inline void validate_reg_inputs(const RegInputs& in) {
    if (!in.f_p || !in.f_q || !in.f_r) throw ShapeError("reg_loss: missing discriminator");
    if (!in.p.regions || !in.p.words || !in.q.regions || !in.q.words || !in.r.regions || !in.r.words)
        throw ShapeError("reg_loss: missing feature set");
    if (in.alpha < 0.0) throw ConfigError("reg_loss: alpha must be non-negative");
    if (in.id_q == in.id_p || in.id_r == in.id_p)
        throw ShapeError("reg_loss: hard-negative pair equals the anchor pair");
}

}  // namespace detail

// Discriminative domain regularization around pair p.
//
//   L1 = hinge(alpha + L_p(f_p) - L_p(f_q)) + hinge(alpha + L_q(f_q) - L_q(f_p))
//   L2 = hinge(alpha + L_r(f_r) - L_r(f_p)) + hinge(alpha + L_p(f_p) - L_p(f_r))
//
// The default L2 is the r-symmetric counterpart of L1, so the four hinges
// match the four risk constraints one-to-one. With literal_l2=true the second
// term keeps the printed duplicate q-domain hinge instead:
//   L2 = hinge(alpha + L_q(f_q) - L_q(f_p)) + hinge(alpha + L_p(f_p) - L_p(f_r)).
// When q and r are the same pair, the default form counts each constraint
// once (L2 = 0) rather than duplicating L1.
inline RegResult reg_loss(const RegInputs& in, bool literal_l2 = false) {
    detail::validate_reg_inputs(in);
    RegResult out;
    const int dim = in.f_p->dim();
    out.d_wp.assign(dim, 0.0);
    out.d_wq.assign(dim, 0.0);
    out.d_wr.assign(dim, 0.0);
    detail::RegCtx ctx{&in, &out};

    constexpr int P = 0, Q = 1, R = 2;
    out.l1 = ctx.hinge(P, P, Q) + ctx.hinge(Q, Q, P);
    if (literal_l2) {
        out.l2 = ctx.hinge(Q, Q, P) + ctx.hinge(P, P, R);
    } else if (in.id_q != in.id_r) {
        out.l2 = ctx.hinge(R, R, P) + ctx.hinge(P, P, R);
    }  // else: q == r, both L2 hinges duplicate L1's; count them once
    return out;
}

// The four risk constraints around pair p, evaluated with empirical risks.
// Constraint i holds at margin alpha exactly when the matching hinge in
// reg_loss vanishes, i.e. own-pair risk + alpha <= cross risk:
//   [0] R_p(f_p) vs R_p(f_q)   [1] R_p(f_p) vs R_p(f_r)
//   [2] R_q(f_q) vs R_q(f_p)   [3] R_r(f_r) vs R_r(f_p)
inline std::array<bool, 4> risk_constraints_satisfied(const RegInputs& in) {
    detail::validate_reg_inputs(in);
    const double lp_fp = domain_risk(*in.f_p, in.p);
    const double lp_fq = domain_risk(*in.f_q, in.p);
    const double lp_fr = domain_risk(*in.f_r, in.p);
    const double lq_fq = domain_risk(*in.f_q, in.q);
    const double lq_fp = domain_risk(*in.f_p, in.q);
    const double lr_fr = domain_risk(*in.f_r, in.r);
    const double lr_fp = domain_risk(*in.f_p, in.r);
    return {
        in.alpha + lp_fp - lp_fq <= 0.0,
        in.alpha + lp_fp - lp_fr <= 0.0,
        in.alpha + lq_fq - lq_fp <= 0.0,
        in.alpha + lr_fr - lr_fp <= 0.0,
    };
}

}  // namespace addr
