#include <cmath>

#include "addr/similarity.hpp"
#include "doctest.h"

using namespace addr;

namespace {
Mat64 random_unit_rows(Rng& rng, int rows, int dim) {
    Mat64 m(rows, dim);
    for (int r = 0; r < rows; ++r) {
        double nm = 0.0;
        while (nm < 1e-6) {
            for (int d = 0; d < dim; ++d) m.at(r, d) = rng.normal();
            nm = norm2(m.row(r), dim);
        }
        for (int d = 0; d < dim; ++d) m.at(r, d) /= nm;
    }
    return m;
}

EmbeddedSet set_of(const Mat64& rows, uint64_t id, Modality m) { return EmbeddedSet{rows, id, m}; }

// plain re-implementation of the closed form, no log-sum-exp trick
double sim_reference(const Mat64& v, const Mat64& w, double tau) {
    double total = 0.0;
    for (int j = 0; j < w.rows; ++j) {
        double z = 0.0;
        for (int i = 0; i < v.rows; ++i) z += std::exp(tau * dot(v.row(i), w.row(j), v.cols));
        total += std::log(z) / tau;
    }
    return total / w.rows;
}
}  // namespace

TEST_SUITE_BEGIN("similarity");

TEST_CASE("single region: smoothmax of one element is that element") {
    Rng rng(51);
    const Mat64 v = random_unit_rows(rng, 1, 4);
    const Mat64 w = random_unit_rows(rng, 3, 4);
    const MetricParams metric = MetricParams::from_tau(10.0);
    double mean = 0.0;
    for (int j = 0; j < 3; ++j) mean += dot(v.row(0), w.row(j), 4) / 3.0;
    CHECK(sim(v, w, metric) == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("identical sets approach similarity 1 as tau grows") {
    Rng rng(53);
    const Mat64 v = random_unit_rows(rng, 4, 6);
    CHECK(sim(v, v, MetricParams::from_tau(1e4)) == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("matches an independent evaluation of the closed form") {
    Rng rng(57);
    const Mat64 v = random_unit_rows(rng, 3, 4);
    const Mat64 w = random_unit_rows(rng, 2, 4);
    CHECK(sim(v, w, MetricParams::from_tau(10.0)) == doctest::Approx(sim_reference(v, w, 10.0)).epsilon(1e-12));
}

TEST_CASE("permutation invariance over regions and words") {
    Rng rng(59);
    const Mat64 v = random_unit_rows(rng, 4, 5);
    const Mat64 w = random_unit_rows(rng, 3, 5);
    const MetricParams metric = MetricParams::from_tau(7.0);
    const double base = sim(v, w, metric);
    Mat64 vp(4, 5), wp(3, 5);
    const int pv[4] = {2, 0, 3, 1}, pw[3] = {1, 2, 0};
    for (int r = 0; r < 4; ++r)
        for (int d = 0; d < 5; ++d) vp.at(r, d) = v.at(pv[r], d);
    for (int r = 0; r < 3; ++r)
        for (int d = 0; d < 5; ++d) wp.at(r, d) = w.at(pw[r], d);
    CHECK(sim(vp, wp, metric) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("smoothmax dominates max and approaches it monotonically as tau doubles") {
    Rng rng(61);
    const Mat64 v = random_unit_rows(rng, 5, 6);
    const Mat64 w = random_unit_rows(rng, 1, 6);
    double hard_max = -1e300;
    for (int i = 0; i < 5; ++i) hard_max = std::max(hard_max, dot(v.row(i), w.row(0), 6));
    double tau = 2.0;
    double prev = sim(v, w, MetricParams::from_tau(tau));
    CHECK(prev >= hard_max);
    for (int step = 0; step < 8; ++step) {
        tau *= 2.0;
        const double cur = sim(v, w, MetricParams::from_tau(tau));
        CHECK(cur >= hard_max - 1e-12);
        CHECK(cur <= prev + 1e-12);
        prev = cur;
    }
    CHECK(prev == doctest::Approx(hard_max).epsilon(1e-3));
}

TEST_CASE("value stays inside the documented range") {
    Rng rng(63);
    for (int inst = 0; inst < 50; ++inst) {
        const int n = 1 + static_cast<int>(rng.index(5));
        const Mat64 v = random_unit_rows(rng, n, 4);
        const Mat64 w = random_unit_rows(rng, 2, 4);
        const double tau = rng.uniform(2.0, 20.0);
        const double s = sim(v, w, MetricParams::from_tau(tau));
        CHECK(s <= 1.0 + std::log(static_cast<double>(n)) / tau + 1e-12);
        CHECK(s >= -1.0 - std::log(static_cast<double>(n)) / tau - 1e-12);
    }
}

TEST_CASE("sim errors") {
    Rng rng(65);
    const Mat64 v = random_unit_rows(rng, 2, 4);
    const Mat64 w = random_unit_rows(rng, 2, 5);
    CHECK_THROWS_AS(sim(v, w, MetricParams::from_tau(5.0)), ShapeError);
    CHECK_THROWS_AS(sim(Mat64(0, 4), v, MetricParams::from_tau(5.0)), ShapeError);
    CHECK_THROWS_AS(MetricParams::from_tau(0.0), ConfigError);
}

TEST_CASE("sim_matrix equals elementwise sim calls; permuting sentences permutes columns") {
    Rng rng(67);
    const MetricParams metric = MetricParams::from_tau(9.0);
    std::vector<EmbeddedSet> imgs, caps;
    for (int i = 0; i < 3; ++i) {
        imgs.push_back(set_of(random_unit_rows(rng, 3, 4), 10 + i, Modality::regions));
        caps.push_back(set_of(random_unit_rows(rng, 2, 4), 20 + i, Modality::words));
    }
    const SimMatrix m = sim_matrix(imgs, caps, metric);
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) CHECK(m.scores.at(a, b) == doctest::Approx(sim(imgs[a], caps[b], metric)));

    std::vector<EmbeddedSet> caps_perm{caps[2], caps[0], caps[1]};
    const SimMatrix mp = sim_matrix(imgs, caps_perm, metric);
    const int perm[3] = {2, 0, 1};
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) CHECK(mp.scores.at(a, b) == m.scores.at(a, perm[b]));

    const SimMatrix single = sim_matrix({imgs.begin(), imgs.begin() + 1}, {caps.begin(), caps.begin() + 1}, metric);
    CHECK(single.scores.rows == 1);
    CHECK(single.scores.at(0, 0) == doctest::Approx(sim(imgs[0], caps[0], metric)));
}

TEST_CASE("hard negatives: k=2 forces the other index") {
    Mat64 m(2, 2);
    m.at(0, 0) = 0.9;
    m.at(0, 1) = 0.1;
    m.at(1, 0) = 0.2;
    m.at(1, 1) = 0.8;
    const HardNegatives hn = hard_negatives(m, 0);
    CHECK(hn.sentence == 1);
    CHECK(hn.image == 1);
}

TEST_CASE("hard negatives: strictly decreasing row picks the smallest off-diagonal index") {
    Mat64 m(4, 4);
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) m.at(a, b) = 1.0 - 0.1 * b - 0.01 * a;
    for (int a = 0; a < 4; ++a) m.at(a, a) = 2.0;
    const HardNegatives hn = hard_negatives(m, 2);
    CHECK(hn.sentence == 0);
    CHECK(hn.image == 0);
}

TEST_CASE("hard negatives match a brute-force scan and ignore monotone transforms") {
    Rng rng(71);
    for (int inst = 0; inst < 100; ++inst) {
        Mat64 m(5, 5);
        for (auto& v : m.data) v = rng.uniform(-1.0, 1.0);
        for (int p = 0; p < 5; ++p) {
            const HardNegatives hn = hard_negatives(m, p);
            int bq = -1, br = -1;
            double sq = -1e300, sr = -1e300;
            for (int b = 0; b < 5; ++b) {
                if (b == p) continue;
                if (m.at(p, b) > sq) {
                    sq = m.at(p, b);
                    bq = b;
                }
                if (m.at(b, p) > sr) {
                    sr = m.at(b, p);
                    br = b;
                }
            }
            CHECK(hn.sentence == bq);
            CHECK(hn.image == br);
        }
        Mat64 t = m;
        for (auto& v : t.data) v = std::exp(2.0 * v) + v;  // strictly increasing
        for (int p = 0; p < 5; ++p) {
            const HardNegatives a = hard_negatives(m, p), b = hard_negatives(t, p);
            CHECK(a.sentence == b.sentence);
            CHECK(a.image == b.image);
        }
    }
    Mat64 tiny(1, 1, 0.5);
    CHECK_THROWS_AS(hard_negatives(tiny, 0), ShapeError);
}

TEST_CASE("triplet loss: satisfied margins give zero") {
    Mat64 m(2, 2);
    m.at(0, 0) = 0.9;
    m.at(0, 1) = 0.5;  // hardest sentence negative for 0
    m.at(1, 0) = 0.6;  // hardest image negative for 0
    m.at(1, 1) = 0.95;
    const TripletResult r = triplet_loss(m, 0.2);
    CHECK(r.loss == 0.0);
    for (double v : r.d_scores.data) CHECK(v == 0.0);
}

TEST_CASE("triplet loss: direct evaluation of the two-hinge form") {
    // pair 0: positive 0.5, i2t negative 0.6, t2i negative 0.4, delta 0.2
    // -> 0.3 + 0.1; pair 1 contributes nothing; mean over 2 pairs = 0.2
    Mat64 m(2, 2);
    m.at(0, 0) = 0.5;
    m.at(0, 1) = 0.6;
    m.at(1, 0) = 0.4;
    m.at(1, 1) = 0.9;
    const TripletResult r = triplet_loss(m, 0.2);
    CHECK(r.loss == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(r.d_scores.at(0, 0) == doctest::Approx(-1.0));  // both hinges active, -1/k twice
    CHECK(r.d_scores.at(0, 1) == doctest::Approx(0.5));
    CHECK(r.d_scores.at(1, 0) == doctest::Approx(0.5));
    CHECK(r.d_scores.at(1, 1) == 0.0);
}

TEST_CASE("triplet loss is zero iff every hard negative clears the margin") {
    Rng rng(73);
    for (int inst = 0; inst < 200; ++inst) {
        Mat64 m(4, 4);
        for (auto& v : m.data) v = rng.uniform(-1.0, 1.0);
        const TripletResult r = triplet_loss(m, 0.2);
        bool all_clear = true;
        for (int p = 0; p < 4; ++p) {
            const HardNegatives hn = hard_negatives(m, p);
            if (m.at(p, hn.sentence) > m.at(p, p) - 0.2 || m.at(hn.image, p) > m.at(p, p) - 0.2) all_clear = false;
        }
        CHECK((r.loss == 0.0) == all_clear);
    }
}

TEST_CASE("triplet gradient matches finite differences away from kinks") {
    Rng rng(79);
    double max_err = 0.0;
    int done = 0;
    while (done < 100) {
        Mat64 m(4, 4);
        for (auto& v : m.data) v = rng.uniform(-1.0, 1.0);
        // keep a healthy distance from hinge kinks and argmax ties
        bool safe = true;
        for (int p = 0; p < 4 && safe; ++p) {
            const HardNegatives hn = hard_negatives(m, p);
            for (int b = 0; b < 4; ++b) {
                if (b == p || b == hn.sentence) continue;
                if (std::abs(m.at(p, b) - m.at(p, hn.sentence)) < 1e-3) safe = false;
            }
            for (int a = 0; a < 4; ++a) {
                if (a == p || a == hn.image) continue;
                if (std::abs(m.at(a, p) - m.at(hn.image, p)) < 1e-3) safe = false;
            }
            if (std::abs(0.2 - m.at(p, p) + m.at(p, hn.sentence)) < 1e-3) safe = false;
            if (std::abs(0.2 - m.at(p, p) + m.at(hn.image, p)) < 1e-3) safe = false;
        }
        if (!safe) continue;
        ++done;
        const TripletResult r = triplet_loss(m, 0.2);
        const Vec64 numeric = fd_gradient(
            [&](const Vec64& x) {
                Mat64 probe = m;
                probe.data = x;
                return triplet_loss(probe, 0.2).loss;
            },
            m.data, 1e-5);
        max_err = std::max(max_err, relative_error(r.d_scores.data, numeric));
    }
    CHECK(max_err <= 1e-4);
}

TEST_CASE("sim backward matches finite differences including log tau") {
    Rng rng(83);
    double max_err = 0.0;
    for (int inst = 0; inst < 100; ++inst) {
        const Mat64 v = random_unit_rows(rng, 3, 4);
        const Mat64 w = random_unit_rows(rng, 2, 4);
        MetricParams metric;
        metric.log_tau = rng.uniform(0.5, 2.5);
        Mat64 dv(3, 4), dw(2, 4);
        double dlt = 0.0;
        sim_backward_acc(v, w, metric, 1.7, dv, dw, dlt);
        Vec64 analytic = dv.data;
        analytic.insert(analytic.end(), dw.data.begin(), dw.data.end());
        analytic.push_back(dlt);
        Vec64 flat = v.data;
        flat.insert(flat.end(), w.data.begin(), w.data.end());
        flat.push_back(metric.log_tau);
        const Vec64 numeric = fd_gradient(
            [&](const Vec64& x) {
                Mat64 pv = v, pw = w;
                std::copy(x.begin(), x.begin() + pv.data.size(), pv.data.begin());
                std::copy(x.begin() + pv.data.size(), x.end() - 1, pw.data.begin());
                MetricParams pm;
                pm.log_tau = x.back();
                return 1.7 * sim(pv, pw, pm);
            },
            flat, 1e-5);
        max_err = std::max(max_err, relative_error(analytic, numeric));
    }
    CHECK(max_err <= 1e-4);
}

TEST_SUITE_END();
