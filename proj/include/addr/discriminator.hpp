#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "addr/binio.hpp"
#include "addr/numerics.hpp"

namespace addr {

// Reserved pair id for the single shared discriminator of the `united`
// training variant.
inline constexpr uint64_t kUnitedPairId = ~0ULL;

namespace detail {
inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + e^z) without overflow.
inline double softplus(double z) {
    if (z > 0.0) return z + std::log1p(std::exp(-z));
    return std::log1p(std::exp(z));
}
}  // namespace detail

// A per-pair domain classifier: single logistic-regression layer over the
// shared embedding space.
struct Discriminator {
    Vec64 weight;  // dim
    double bias = 0.0;

    int dim() const { return static_cast<int>(weight.size()); }
};

inline double predict(const Discriminator& f, const double* x, int n) {
    require_size(static_cast<size_t>(n), f.weight.size(), "predict");
    return detail::sigmoid(dot(f.weight.data(), x, n) + f.bias);
}

inline double predict(const Discriminator& f, const Vec64& x) {
    return predict(f, x.data(), static_cast<int>(x.size()));
}

// Domain cross-entropy of Discriminator f on one pair's feature sets, with
// word rows as class 1 and region rows as class 0:
//   L = - sum_j log sigma(w.x_j + b) - sum_i log(1 - sigma(w.v_i + b)) >= 0.
inline double adv_loss(const Discriminator& f, const Mat64& regions, const Mat64& words) {
    if (regions.rows < 1 || words.rows < 1) throw ShapeError("adv_loss: empty feature set");
    if (regions.cols != f.dim() || words.cols != f.dim()) throw ShapeError("adv_loss: dim mismatch");
    double loss = 0.0;
    for (int i = 0; i < regions.rows; ++i)
        loss += detail::softplus(dot(f.weight.data(), regions.row(i), f.dim()) + f.bias);
    for (int j = 0; j < words.rows; ++j)
        loss += detail::softplus(-(dot(f.weight.data(), words.row(j), f.dim()) + f.bias));
    if (!std::isfinite(loss)) throw NumericError("adv_loss: non-finite loss");
    return loss;
}

// Parameter-side gradients only (the hot path for discriminator updates and
// the regularization hinges). Returns the loss; accumulates into d_w / d_b.
inline double adv_param_grads_acc(const Discriminator& f, const Mat64& regions, const Mat64& words, double scale,
                                  Vec64& d_w, double& d_b) {
    if (regions.rows < 1 || words.rows < 1) throw ShapeError("adv_grads: empty feature set");
    if (regions.cols != f.dim() || words.cols != f.dim()) throw ShapeError("adv_grads: dim mismatch");
    require_size(d_w.size(), f.weight.size(), "adv_grads");
    const int dim = f.dim();
    double loss = 0.0;
    for (int i = 0; i < regions.rows; ++i) {
        const double* x = regions.row(i);
        const double logit = dot(f.weight.data(), x, dim) + f.bias;
        loss += detail::softplus(logit);
        const double g = scale * detail::sigmoid(logit);  // sigma - 0
        d_b += g;
        for (int d = 0; d < dim; ++d) d_w[d] += g * x[d];
    }
    for (int j = 0; j < words.rows; ++j) {
        const double* x = words.row(j);
        const double logit = dot(f.weight.data(), x, dim) + f.bias;
        loss += detail::softplus(-logit);
        const double g = scale * (detail::sigmoid(logit) - 1.0);  // sigma - 1
        d_b += g;
        for (int d = 0; d < dim; ++d) d_w[d] += g * x[d];
    }
    return loss;
}

// Full gradient set: parameters plus every input feature row.
struct AdvGrads {
    double loss = 0.0;
    Vec64 d_weight;
    double d_bias = 0.0;
    Mat64 d_regions;
    Mat64 d_words;
};

inline AdvGrads adv_grads(const Discriminator& f, const Mat64& regions, const Mat64& words) {
    if (regions.rows < 1 || words.rows < 1) throw ShapeError("adv_grads: empty feature set");
    if (regions.cols != f.dim() || words.cols != f.dim()) throw ShapeError("adv_grads: dim mismatch");
    const int dim = f.dim();
    AdvGrads out;
    out.d_weight.assign(dim, 0.0);
    out.d_regions = Mat64(regions.rows, dim);
    out.d_words = Mat64(words.rows, dim);
    for (int i = 0; i < regions.rows; ++i) {
        const double* x = regions.row(i);
        const double logit = dot(f.weight.data(), x, dim) + f.bias;
        out.loss += detail::softplus(logit);
        const double g = detail::sigmoid(logit);
        out.d_bias += g;
        double* dx = out.d_regions.row(i);
        for (int d = 0; d < dim; ++d) {
            out.d_weight[d] += g * x[d];
            dx[d] = g * f.weight[d];
        }
    }
    for (int j = 0; j < words.rows; ++j) {
        const double* x = words.row(j);
        const double logit = dot(f.weight.data(), x, dim) + f.bias;
        out.loss += detail::softplus(-logit);
        const double g = detail::sigmoid(logit) - 1.0;
        out.d_bias += g;
        double* dx = out.d_words.row(j);
        for (int d = 0; d < dim; ++d) {
            out.d_weight[d] += g * x[d];
            dx[d] = g * f.weight[d];
        }
    }
    return out;
}

// The persistent table of per-pair discriminators, keyed by image/pair id.
// Entries are created on first touch with all-zero parameters, which pins the
// initial loss of a fresh pair at (n+m) ln 2.
struct DiscriminatorBank {
    int dim = 0;
    std::map<uint64_t, Discriminator> table;

    DiscriminatorBank() = default;
    explicit DiscriminatorBank(int d) : dim(d) {
        if (d < 1) throw ConfigError("DiscriminatorBank: dim must be positive");
    }

    size_t size() const { return table.size(); }

    Discriminator& get_or_init(uint64_t pair_id) {
        auto it = table.find(pair_id);
        if (it != table.end()) return it->second;
        Discriminator f;
        f.weight.assign(dim, 0.0);
        f.bias = 0.0;
        return table.emplace(pair_id, std::move(f)).first->second;
    }

    const Discriminator* find(uint64_t pair_id) const {
        auto it = table.find(pair_id);
        return it == table.end() ? nullptr : &it->second;
    }

    uint64_t content_hash() const {
        Fnv1a f;
        f.add(static_cast<uint64_t>(dim));
        for (const auto& [id, d] : table) {
            f.add(id);
            f.add(d.weight);
            f.add(d.bias);
        }
        return f.h;
    }

    bool operator==(const DiscriminatorBank& o) const {
        if (dim != o.dim || table.size() != o.table.size()) return false;
        auto a = table.begin();
        auto b = o.table.begin();
        for (; a != table.end(); ++a, ++b)
            if (a->first != b->first || a->second.weight != b->second.weight || a->second.bias != b->second.bias)
                return false;
        return true;
    }
};

// Bank file format ("ADDRBANK", little-endian):
//   magic[8] | version u32 | dim u32 | count u64,
//   then per record: pair_id u64 | weight float64 * dim | bias float64.
inline constexpr char kBankMagic[9] = "ADDRBANK";
inline constexpr uint32_t kBankVersion = 1;

inline void write_bank(std::ostream& os, const DiscriminatorBank& bank) {
    binio::put_magic(os, kBankMagic);
    binio::put_u32(os, kBankVersion);
    binio::put_u32(os, static_cast<uint32_t>(bank.dim));
    binio::put_u64(os, bank.table.size());
    for (const auto& [id, f] : bank.table) {
        binio::put_u64(os, id);
        for (double v : f.weight) binio::put_f64(os, v);
        binio::put_f64(os, f.bias);
    }
}

inline DiscriminatorBank read_bank(std::istream& is) {
    binio::expect_magic(is, kBankMagic, "ADDRBANK");
    const uint32_t version = binio::get_u32(is, "version");
    if (version != kBankVersion) throw FormatError("ADDRBANK version " + std::to_string(version) + " not supported");
    const uint32_t dim = binio::get_u32(is, "dim");
    if (dim == 0 || dim > (1u << 20)) throw FormatError("ADDRBANK: implausible dim");
    const uint64_t count = binio::get_u64(is, "count");
    DiscriminatorBank bank(static_cast<int>(dim));
    for (uint64_t k = 0; k < count; ++k) {
        const uint64_t id = binio::get_u64(is, "pair id");
        Discriminator f;
        f.weight.resize(dim);
        for (auto& v : f.weight) v = binio::get_f64(is, "weight");
        f.bias = binio::get_f64(is, "bias");
        if (!bank.table.emplace(id, std::move(f)).second) throw FormatError("ADDRBANK: duplicate pair id");
    }
    return bank;
}

inline void save_bank(const DiscriminatorBank& bank, const std::string& path) {
    auto os = binio::open_out(path);
    write_bank(os, bank);
    if (!os) throw IoError("write failed: " + path);
}

inline DiscriminatorBank load_bank(const std::string& path) {
    auto is = binio::open_in(path);
    return read_bank(is);
}

}  // namespace addr
