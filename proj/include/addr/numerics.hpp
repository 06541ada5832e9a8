#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "addr/errors.hpp"

namespace addr {

using Vec64 = std::vector<double>;

// Dense row-major matrix of float64. Small and deliberately boring: the
// whole library runs on hand-written loops over this one layout.
struct Mat64 {
    int rows = 0;
    int cols = 0;
    Vec64 data;

    Mat64() = default;
    Mat64(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {
        if (r < 0 || c < 0) throw ShapeError("Mat64: negative dimension");
    }

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

    bool same_shape(const Mat64& o) const { return rows == o.rows && cols == o.cols; }

    bool operator==(const Mat64& o) const { return rows == o.rows && cols == o.cols && data == o.data; }
};

inline void require_same_shape(const Mat64& a, const Mat64& b, const char* where) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(where) + ": shape mismatch (" + std::to_string(a.rows) + "x" +
                         std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" + std::to_string(b.cols) + ")");
}

inline void require_size(size_t got, size_t want, const char* where) {
    if (got != want)
        throw ShapeError(std::string(where) + ": size mismatch (" + std::to_string(got) + " vs " +
                         std::to_string(want) + ")");
}

inline bool all_finite(const double* p, size_t n) {
    for (size_t i = 0; i < n; ++i)
        if (!std::isfinite(p[i])) return false;
    return true;
}

inline bool all_finite(const Vec64& v) { return all_finite(v.data(), v.size()); }
inline bool all_finite(const Mat64& m) { return all_finite(m.data.data(), m.data.size()); }

inline void require_finite(const Vec64& v, const char* where) {
    if (!all_finite(v)) throw NumericError(std::string(where) + ": non-finite entry");
}

inline void require_finite(const Mat64& m, const char* where) {
    if (!all_finite(m)) throw NumericError(std::string(where) + ": non-finite entry");
}

inline double dot(const double* a, const double* b, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline double dot(const Vec64& a, const Vec64& b) {
    require_size(b.size(), a.size(), "dot");
    return dot(a.data(), b.data(), static_cast<int>(a.size()));
}

inline double norm2(const double* a, int n) { return std::sqrt(dot(a, a, n)); }
inline double norm2(const Vec64& a) { return norm2(a.data(), static_cast<int>(a.size())); }

// ---------------------------------------------------------------------------
// Deterministic counter-based random generator (splitmix64 flavour).
//
// The algorithm is pinned so that any implementation, in any language, can
// reproduce the exact streams:
//
//   mix64(z): z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//             z ^= z >> 27; z *= 0x94D049BB133111EB;
//             z ^= z >> 31; return z
//   state(seed, stream) = mix64(mix64(seed) + stream)
//   next_u64(): state += 0x9E3779B97F4A7C15; return mix64(state)
//   uniform():  next_u64() >> 11, scaled by 2^-53            -> [0, 1)
//   normal():   Box-Muller on u1=(next_u64()>>11 + 1)*2^-53 in (0,1]
//               and u2=uniform(): sqrt(-2 ln u1) * cos(2 pi u2)
//   index(n):   next_u64() % n
//
// All integer arithmetic is modulo 2^64. Same (seed, stream) => identical
// u64 stream on every platform.
// ---------------------------------------------------------------------------
class Rng {
  public:
    explicit Rng(uint64_t seed, uint64_t stream = 0) : state_(mix64(mix64(seed) + stream)) {}

    static uint64_t mix64(uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ULL;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBULL;
        z ^= z >> 31;
        return z;
    }

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix64(state_);
    }

    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Uniform integer in [0, n). Modulo bias is irrelevant at the scales used here.
    uint64_t index(uint64_t n) { return next_u64() % n; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    uint64_t state() const { return state_; }
    void set_state(uint64_t s) { state_ = s; }

  private:
    uint64_t state_;
};

// ---------------------------------------------------------------------------
// Adam with bias correction. One state per parameter block; the block is
// treated as a flat float64 buffer.
// ---------------------------------------------------------------------------
struct AdamState {
    Vec64 m;
    Vec64 v;
    uint64_t t = 0;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    AdamState(size_t n, double b1, double b2, double e = 1e-8) : m(n, 0.0), v(n, 0.0), t(0), beta1(b1), beta2(b2), eps(e) {
        if (!(b1 > 0.0 && b1 < 1.0 && b2 > 0.0 && b2 < 1.0))
            throw ConfigError("AdamState: beta1/beta2 must lie in (0,1)");
    }
};

inline void adam_step(AdamState& st, double* param, const double* grad, size_t n, double lr) {
    require_size(st.m.size(), n, "adam_step");
    if (!(lr > 0.0)) throw ConfigError("adam_step: lr must be positive");
    if (!all_finite(grad, n)) throw NumericError("adam_step: non-finite gradient");
    st.t += 1;
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    for (size_t i = 0; i < n; ++i) {
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grad[i];
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grad[i] * grad[i];
        const double mhat = st.m[i] / c1;
        const double vhat = st.v[i] / c2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
    }
}

inline void adam_step(AdamState& st, Vec64& param, const Vec64& grad, double lr) {
    require_size(grad.size(), param.size(), "adam_step");
    adam_step(st, param.data(), grad.data(), param.size(), lr);
}

inline void adam_step(AdamState& st, Mat64& param, const Mat64& grad, double lr) {
    require_same_shape(param, grad, "adam_step");
    adam_step(st, param.data.data(), grad.data.data(), param.data.size(), lr);
}

inline void adam_step(AdamState& st, double& param, double grad, double lr) {
    adam_step(st, &param, &grad, 1, lr);
}

// ---------------------------------------------------------------------------
// Central finite differences: the reference every analytic gradient in this
// repo is tested against. Lives in the library (not in test code) so the
// gradcheck CLI can use it too; it never feeds any training path.
// ---------------------------------------------------------------------------
inline Vec64 fd_gradient(const std::function<double(const Vec64&)>& f, const Vec64& x, double eps = 1e-5) {
    if (!(eps > 0.0)) throw ConfigError("fd_gradient: eps must be positive");
    Vec64 g(x.size(), 0.0);
    Vec64 probe = x;
    for (size_t i = 0; i < x.size(); ++i) {
        const double saved = probe[i];
        probe[i] = saved + eps;
        const double fp = f(probe);
        probe[i] = saved - eps;
        const double fm = f(probe);
        probe[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("fd_gradient: non-finite function value near probe point");
        g[i] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

// ||a - n||_2 / max(floor, ||a||_2, ||n||_2). The floor keeps exactly-zero
// gradients (inactive hinges) from dividing by zero.
inline double relative_error(const Vec64& analytic, const Vec64& numeric, double floor = 1e-8) {
    require_size(numeric.size(), analytic.size(), "relative_error");
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (size_t i = 0; i < analytic.size(); ++i) {
        const double d = analytic[i] - numeric[i];
        diff += d * d;
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
    }
    const double denom = std::max(floor, std::max(std::sqrt(na), std::sqrt(nn)));
    return std::sqrt(diff) / denom;
}

// ---------------------------------------------------------------------------
// FNV-1a over raw bytes; used for config hashes and parameter-block hashes.
// ---------------------------------------------------------------------------
struct Fnv1a {
    uint64_t h = 0xcbf29ce484222325ULL;

    void add_bytes(const void* p, size_t n) {
        const unsigned char* b = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    }
    void add(uint64_t v) { add_bytes(&v, sizeof v); }
    void add(double v) { add_bytes(&v, sizeof v); }
    void add(const Vec64& v) { add_bytes(v.data(), v.size() * sizeof(double)); }
    void add(const Mat64& m) {
        add(static_cast<uint64_t>(m.rows));
        add(static_cast<uint64_t>(m.cols));
        add(m.data);
    }
    void add(const std::string& s) { add_bytes(s.data(), s.size()); }
};

inline uint64_t hash_bytes(const void* p, size_t n) {
    Fnv1a f;
    f.add_bytes(p, n);
    return f.h;
}

inline uint64_t hash_string(const std::string& s) { return hash_bytes(s.data(), s.size()); }

}  // namespace addr
