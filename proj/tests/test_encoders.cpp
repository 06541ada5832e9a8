#include <cmath>

#include "addr/encoders.hpp"
#include "doctest.h"

using namespace addr;

namespace {
GeneratorParams identity_params(int dim) {
    GeneratorParams p;
    p.dim = dim;
    p.proj_img = Mat64(dim, dim);
    p.proj_txt = Mat64(dim, dim);
    for (int i = 0; i < dim; ++i) {
        p.proj_img.at(i, i) = 1.0;
        p.proj_txt.at(i, i) = 1.0;
    }
    p.bias_img.assign(dim, 0.0);
    p.bias_txt.assign(dim, 0.0);
    return p;
}

FeatureItem item_from_rows(const Mat64& rows, Modality m) {
    FeatureItem it;
    it.id = 1;
    it.modality = m;
    it.features = rows;
    return it;
}
}  // namespace

TEST_SUITE_BEGIN("encoders");

TEST_CASE("identity projection L2-normalizes: (3,4) -> (0.6,0.8)") {
    const auto p = identity_params(2);
    Mat64 raw(1, 2);
    raw.at(0, 0) = 3.0;
    raw.at(0, 1) = 4.0;
    const EmbeddedSet e = encode(p, item_from_rows(raw, Modality::regions));
    CHECK(e.rows.at(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(e.rows.at(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("unit-norm input through identity stays unchanged") {
    const auto p = identity_params(3);
    Mat64 raw(1, 3);
    raw.at(0, 0) = 1.0 / std::sqrt(2.0);
    raw.at(0, 2) = 1.0 / std::sqrt(2.0);
    const EmbeddedSet e = encode(p, item_from_rows(raw, Modality::words));
    for (int d = 0; d < 3; ++d) CHECK(e.rows.at(0, d) == doctest::Approx(raw.at(0, d)).epsilon(1e-12));
}

TEST_CASE("row count is preserved and rows come out unit-norm") {
    Rng rng(17);
    GeneratorParams p = init_generator(rng, 9, 6, 5);
    Mat64 raw(7, 9);
    for (auto& v : raw.data) v = rng.normal();
    const EmbeddedSet e = encode(p, item_from_rows(raw, Modality::regions));
    CHECK(e.rows.rows == 7);
    for (int r = 0; r < 7; ++r) CHECK(norm2(e.rows.row(r), 5) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("unit rows for 100 random instances") {
    Rng rng(23);
    for (int inst = 0; inst < 100; ++inst) {
        GeneratorParams p = init_generator(rng, 6, 4, 4);
        Mat64 raw(3, 6);
        for (auto& v : raw.data) v = rng.normal();
        const EmbeddedSet e = encode(p, item_from_rows(raw, Modality::regions));
        for (int r = 0; r < e.rows.rows; ++r) CHECK(std::abs(norm2(e.rows.row(r), 4) - 1.0) < 1e-9);
    }
}

TEST_CASE("degenerate zero row is rejected") {
    const auto p = identity_params(2);
    Mat64 raw(1, 2);  // zero vector
    CHECK_THROWS_AS(encode(p, item_from_rows(raw, Modality::regions)), NumericError);
}

TEST_CASE("dimension mismatch is rejected") {
    const auto p = identity_params(2);
    Mat64 raw(1, 3, 1.0);
    CHECK_THROWS_AS(encode(p, item_from_rows(raw, Modality::regions)), ShapeError);
}

TEST_CASE("zero upstream gives zero parameter gradient") {
    Rng rng(29);
    GeneratorParams p = init_generator(rng, 5, 4, 4);
    Mat64 raw(3, 5);
    for (auto& v : raw.data) v = rng.normal();
    const Mat64 upstream(3, 4);
    const EncodeGrads g = encode_backward(p, item_from_rows(raw, Modality::regions), upstream);
    for (double v : g.d_proj.data) CHECK(v == 0.0);
    for (double v : g.d_bias) CHECK(v == 0.0);
    for (double v : g.d_raw.data) CHECK(v == 0.0);
}

TEST_CASE("upstream parallel to the embedded row is annihilated") {
    Rng rng(31);
    GeneratorParams p = init_generator(rng, 5, 4, 4);
    Mat64 raw(1, 5);
    for (auto& v : raw.data) v = rng.normal();
    const FeatureItem it = item_from_rows(raw, Modality::regions);
    const EmbeddedSet e = encode(p, it);
    Mat64 upstream(1, 4);
    for (int d = 0; d < 4; ++d) upstream.at(0, d) = 2.5 * e.rows.at(0, d);
    const EncodeGrads g = encode_backward(p, it, upstream);
    for (double v : g.d_proj.data) CHECK(std::abs(v) < 1e-12);
    for (double v : g.d_raw.data) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("backward matches finite differences on random instances") {
    Rng rng(37);
    double max_err = 0.0;
    for (int inst = 0; inst < 100; ++inst) {
        GeneratorParams p = init_generator(rng, 5, 3, 4);
        Mat64 raw(3, 5);
        for (auto& v : raw.data) v = rng.normal();
        Mat64 upstream(3, 4);
        for (auto& v : upstream.data) v = rng.normal();
        const FeatureItem it = item_from_rows(raw, Modality::regions);
        const EncodeGrads g = encode_backward(p, it, upstream);

        Vec64 analytic = g.d_proj.data;
        analytic.insert(analytic.end(), g.d_bias.begin(), g.d_bias.end());
        analytic.insert(analytic.end(), g.d_raw.data.begin(), g.d_raw.data.end());
        Vec64 flat = p.proj_img.data;
        flat.insert(flat.end(), p.bias_img.begin(), p.bias_img.end());
        flat.insert(flat.end(), raw.data.begin(), raw.data.end());
        const Vec64 numeric = fd_gradient(
            [&](const Vec64& x) {
                GeneratorParams pp = p;
                FeatureItem rr = it;
                size_t off = 0;
                std::copy(x.begin(), x.begin() + pp.proj_img.data.size(), pp.proj_img.data.begin());
                off += pp.proj_img.data.size();
                std::copy(x.begin() + off, x.begin() + off + 4, pp.bias_img.begin());
                off += 4;
                std::copy(x.begin() + off, x.end(), rr.features.data.begin());
                const EmbeddedSet enc = encode(pp, rr);
                double v = 0.0;
                for (size_t t = 0; t < enc.rows.data.size(); ++t) v += upstream.data[t] * enc.rows.data[t];
                return v;
            },
            flat, 1e-5);
        max_err = std::max(max_err, relative_error(analytic, numeric));
    }
    CHECK(max_err <= 1e-4);
}

TEST_CASE("init_generator draws inside the documented range") {
    Rng rng(41);
    const GeneratorParams p = init_generator(rng, 16, 9, 4);
    for (double v : p.proj_img.data) CHECK(std::abs(v) <= 0.25);
    for (double v : p.proj_txt.data) CHECK(std::abs(v) <= 1.0 / 3.0);
    for (double v : p.bias_img) CHECK(v == 0.0);
    for (double v : p.bias_txt) CHECK(v == 0.0);
}

TEST_SUITE_END();
