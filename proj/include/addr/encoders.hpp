#pragma once

#include <cmath>
#include <cstdint>

#include "addr/data.hpp"
#include "addr/numerics.hpp"

namespace addr {

// Feature generators: one linear projection per modality followed by row-wise
// L2 normalization, so downstream cosine similarities reduce to dot products.
struct GeneratorParams {
    Mat64 proj_img;  // raw_dim_img x dim
    Vec64 bias_img;  // dim
    Mat64 proj_txt;  // raw_dim_txt x dim
    Vec64 bias_txt;  // dim
    int dim = 0;

    const Mat64& proj(Modality m) const { return m == Modality::regions ? proj_img : proj_txt; }
    Mat64& proj(Modality m) { return m == Modality::regions ? proj_img : proj_txt; }
    const Vec64& bias(Modality m) const { return m == Modality::regions ? bias_img : bias_txt; }
    Vec64& bias(Modality m) { return m == Modality::regions ? bias_img : bias_txt; }

    uint64_t param_hash() const {
        Fnv1a f;
        f.add(proj_img);
        f.add(bias_img);
        f.add(proj_txt);
        f.add(bias_txt);
        return f.h;
    }
};

// Projections start uniform in [-1/sqrt(raw_dim), 1/sqrt(raw_dim)] per
// modality (row-major draw order), biases at zero.
inline GeneratorParams init_generator(Rng& rng, int raw_dim_img, int raw_dim_txt, int dim) {
    if (raw_dim_img < 1 || raw_dim_txt < 1 || dim < 1) throw ConfigError("init_generator: bad dims");
    GeneratorParams p;
    p.dim = dim;
    p.proj_img = Mat64(raw_dim_img, dim);
    p.proj_txt = Mat64(raw_dim_txt, dim);
    p.bias_img.assign(dim, 0.0);
    p.bias_txt.assign(dim, 0.0);
    const double s_img = 1.0 / std::sqrt(static_cast<double>(raw_dim_img));
    for (auto& v : p.proj_img.data) v = rng.uniform(-s_img, s_img);
    const double s_txt = 1.0 / std::sqrt(static_cast<double>(raw_dim_txt));
    for (auto& v : p.proj_txt.data) v = rng.uniform(-s_txt, s_txt);
    return p;
}

// An encoded feature set: every row has unit L2 norm.
struct EmbeddedSet {
    Mat64 rows;  // n x dim
    uint64_t pair_id = 0;
    Modality modality = Modality::regions;
};

namespace detail {
// y = x^T A + b for one raw row.
inline void project_row(const Mat64& a, const Vec64& b, const double* x, double* y) {
    const int dim = a.cols;
    for (int d = 0; d < dim; ++d) y[d] = b[d];
    for (int i = 0; i < a.rows; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        const double* arow = a.row(i);
        for (int d = 0; d < dim; ++d) y[d] += xi * arow[d];
    }
}
}  // namespace detail

inline EmbeddedSet encode(const GeneratorParams& params, const FeatureItem& raw) {
    const Mat64& a = params.proj(raw.modality);
    const Vec64& b = params.bias(raw.modality);
    if (raw.dim() != a.rows)
        throw ShapeError("encode: raw dim " + std::to_string(raw.dim()) + " does not match projection input " +
                         std::to_string(a.rows));
    if (raw.rows() < 1) throw ShapeError("encode: empty feature set");

    EmbeddedSet out;
    out.pair_id = raw.id;
    out.modality = raw.modality;
    out.rows = Mat64(raw.rows(), params.dim);
    Vec64 y(params.dim);
    for (int r = 0; r < raw.rows(); ++r) {
        detail::project_row(a, b, raw.features.row(r), y.data());
        const double nm = norm2(y);
        if (!(nm > 1e-300) || !std::isfinite(nm))
            throw NumericError("encode: degenerate (zero or non-finite) pre-normalization row");
        double* z = out.rows.row(r);
        for (int d = 0; d < params.dim; ++d) z[d] = y[d] / nm;
    }
    return out;
}

// Gradient of (project then L2-normalize) composed with an upstream gradient
// on the encoded rows. Accumulates into d_proj/d_bias (and optionally d_raw).
//
// For z = y/|y|: dL/dy = (g - (g.z) z) / |y|; upstream components parallel to
// z are annihilated.
inline void encode_backward_acc(const GeneratorParams& params, const FeatureItem& raw, const Mat64& upstream,
                                Mat64& d_proj, Vec64& d_bias, Mat64* d_raw = nullptr) {
    const Mat64& a = params.proj(raw.modality);
    const Vec64& b = params.bias(raw.modality);
    if (raw.dim() != a.rows) throw ShapeError("encode_backward: raw dim does not match projection");
    if (upstream.rows != raw.rows() || upstream.cols != params.dim)
        throw ShapeError("encode_backward: upstream gradient shape mismatch");
    require_same_shape(d_proj, a, "encode_backward");
    require_size(d_bias.size(), b.size(), "encode_backward");
    if (d_raw) require_same_shape(*d_raw, raw.features, "encode_backward");

    const int dim = params.dim;
    Vec64 y(dim), dy(dim);
    for (int r = 0; r < raw.rows(); ++r) {
        const double* x = raw.features.row(r);
        detail::project_row(a, b, x, y.data());
        const double nm = norm2(y);
        if (!(nm > 1e-300)) throw NumericError("encode_backward: degenerate pre-normalization row");
        const double* g = upstream.row(r);
        double gz = 0.0;
        for (int d = 0; d < dim; ++d) gz += g[d] * y[d];
        gz /= nm * nm;  // (g . z) / |y|
        for (int d = 0; d < dim; ++d) dy[d] = (g[d] - gz * y[d]) / nm;

        for (int d = 0; d < dim; ++d) d_bias[d] += dy[d];
        for (int i = 0; i < a.rows; ++i) {
            const double xi = x[i];
            double* drow = d_proj.row(i);
            if (xi != 0.0)
                for (int d = 0; d < dim; ++d) drow[d] += xi * dy[d];
        }
        if (d_raw) {
            double* dx = d_raw->row(r);
            for (int i = 0; i < a.rows; ++i) dx[i] += dot(a.row(i), dy.data(), dim);
        }
    }
}

struct EncodeGrads {
    Mat64 d_proj;
    Vec64 d_bias;
    Mat64 d_raw;
};

inline EncodeGrads encode_backward(const GeneratorParams& params, const FeatureItem& raw, const Mat64& upstream) {
    EncodeGrads g;
    const Mat64& a = params.proj(raw.modality);
    g.d_proj = Mat64(a.rows, a.cols);
    g.d_bias.assign(params.dim, 0.0);
    g.d_raw = Mat64(raw.rows(), raw.dim());
    encode_backward_acc(params, raw, upstream, g.d_proj, g.d_bias, &g.d_raw);
    return g;
}

}  // namespace addr
