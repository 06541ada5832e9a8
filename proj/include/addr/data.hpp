#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "addr/binio.hpp"
#include "addr/errors.hpp"
#include "addr/numerics.hpp"

namespace addr {

// Domain-label convention, fixed globally: word features are class 1,
// region features are class 0.
enum class Modality : uint8_t { regions = 0, words = 1 };

inline int domain_label(Modality m) { return m == Modality::words ? 1 : 0; }

// One image's region features or one caption's word features, as extracted
// upstream (raw, before any embedding).
struct FeatureItem {
    uint64_t id = 0;
    Modality modality = Modality::regions;
    Mat64 features;  // rows x dim

    int rows() const { return features.rows; }
    int dim() const { return features.cols; }
};

enum class Split : uint8_t { none = 0, train = 1, val = 2, test = 3 };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
        default: return "none";
    }
}

inline Split split_from_name(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    if (s == "none") return Split::none;
    throw FormatError("unknown split name: " + s);
}

// A paired image/caption corpus. Every caption belongs to exactly one image;
// captions inherit their image's split.
struct Dataset {
    std::vector<FeatureItem> images;
    std::vector<FeatureItem> captions;
    std::vector<std::vector<int>> captions_of;  // image index -> caption indices
    std::vector<int> image_of;                  // caption index -> image index
    std::vector<Split> image_split;             // per image

    int num_images() const { return static_cast<int>(images.size()); }
    int num_captions() const { return static_cast<int>(captions.size()); }

    int image_dim() const { return images.empty() ? 0 : images.front().dim(); }
    int caption_dim() const { return captions.empty() ? 0 : captions.front().dim(); }

    std::vector<int> image_indices(Split s) const {
        std::vector<int> out;
        for (int i = 0; i < num_images(); ++i)
            if (image_split[i] == s) out.push_back(i);
        return out;
    }

    std::vector<int> caption_indices(Split s) const {
        std::vector<int> out;
        for (int i = 0; i < num_images(); ++i)
            if (image_split[i] == s)
                for (int c : captions_of[i]) out.push_back(c);
        return out;
    }

    void validate() const {
        if (captions_of.size() != images.size()) throw FormatError("dataset: captions_of size mismatch");
        if (image_split.size() != images.size()) throw FormatError("dataset: split size mismatch");
        if (image_of.size() != captions.size()) throw FormatError("dataset: image_of size mismatch");
        std::vector<int> seen(captions.size(), 0);
        for (int i = 0; i < num_images(); ++i) {
            if (images[i].rows() < 1) throw FormatError("dataset: image with no regions");
            if (images[i].dim() != image_dim()) throw FormatError("dataset: inconsistent image feature dim");
            for (int c : captions_of[i]) {
                if (c < 0 || c >= num_captions()) throw FormatError("dataset: caption index out of range");
                if (seen[c]++) throw FormatError("dataset: caption mapped to more than one image");
                if (image_of[c] != i) throw FormatError("dataset: pairing map inconsistent");
            }
        }
        for (int c = 0; c < num_captions(); ++c) {
            if (!seen[c]) throw FormatError("dataset: caption mapped to no image");
            if (captions[c].rows() < 1) throw FormatError("dataset: caption with no words");
            if (captions[c].dim() != caption_dim()) throw FormatError("dataset: inconsistent caption feature dim");
        }
    }

    uint64_t content_hash() const {
        Fnv1a f;
        for (const auto& it : images) {
            f.add(it.id);
            f.add(it.features);
        }
        for (const auto& it : captions) {
            f.add(it.id);
            f.add(it.features);
        }
        for (int i = 0; i < num_images(); ++i) {
            f.add(static_cast<uint64_t>(image_split[i]));
            for (int c : captions_of[i]) f.add(static_cast<uint64_t>(c));
        }
        return f.h;
    }
};

// ---------------------------------------------------------------------------
// Synthetic benchmark.
//
// Each concept owns a latent prototype; each image owns a pair latent =
// concept prototype + an image-identity offset of norm `image_jitter`, so a
// caption describes its own image and not just the concept. Region rows are a
// shared linear transform of the pair latent plus per-row noise, shifted by
// an image-modality offset; word rows use the same transform (sliced to the
// text dim) and a text-modality offset. With probability
// `distractor_overlap` a region is sourced from a different concept's
// prototype instead, which is what makes the benchmark's hard negatives
// hard. All values are rounded to float32 so the in-memory dataset matches
// its on-disk form exactly.
// ---------------------------------------------------------------------------
struct SyntheticSpec {
    int concepts = 50;
    int images_per_concept = 10;
    int captions_per_image = 5;
    int regions_per_image = 8;
    int words_per_caption = 6;
    int raw_dim_img = 96;
    int raw_dim_txt = 48;
    int latent_dim = 24;
    double noise_intra = 0.20;        // per-row Gaussian noise scale
    double separation = 1.0;          // prototype norm
    double image_jitter = 0.5;        // norm of the per-image identity offset
    double modality_gap = 1.0;        // norm of the per-modality offset
    double distractor_overlap = 0.3;  // fraction of regions sourced from other concepts
    uint64_t seed = 7;

    void validate() const {
        if (concepts < 2) throw ConfigError("synthetic spec: need at least 2 concepts");
        if (images_per_concept < 1 || captions_per_image < 1) throw ConfigError("synthetic spec: empty pairing");
        if (regions_per_image < 1 || words_per_caption < 1) throw ConfigError("synthetic spec: empty feature sets");
        if (raw_dim_img < 1 || raw_dim_txt < 1 || latent_dim < 1) throw ConfigError("synthetic spec: bad dims");
        if (noise_intra < 0.0 || separation < 0.0 || modality_gap < 0.0 || image_jitter < 0.0)
            throw ConfigError("synthetic spec: negative scale");
        if (distractor_overlap < 0.0 || distractor_overlap > 1.0)
            throw ConfigError("synthetic spec: overlap must lie in [0,1]");
        // guard against absurd allocation requests
        const double cells = static_cast<double>(concepts) * images_per_concept *
                             (static_cast<double>(regions_per_image) * raw_dim_img +
                              static_cast<double>(captions_per_image) * words_per_caption * raw_dim_txt);
        if (cells > 2e9) throw ConfigError("synthetic spec: requested dataset too large");
    }
};

// Generation ground truth kept alongside the dataset for test oracles.
struct SyntheticDataset {
    Dataset dataset;
    std::vector<int> concept_of_image;
    Mat64 prototypes;     // concepts x latent_dim
    Mat64 image_latents;  // images x latent_dim (prototype + identity offset)
    Mat64 mixer;          // max(raw dims) x latent_dim
    Vec64 offset_img;
    Vec64 offset_txt;
};

namespace detail {
inline double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

inline Vec64 random_unit(Rng& rng, int n, double scale) {
    Vec64 v(n);
    for (auto& x : v) x = rng.normal();
    const double nm = norm2(v);
    if (nm > 0.0)
        for (auto& x : v) x *= scale / nm;
    return v;
}
}  // namespace detail

inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    SyntheticDataset out;

    const int mix_rows = std::max(spec.raw_dim_img, spec.raw_dim_txt);
    out.mixer = Mat64(mix_rows, spec.latent_dim);
    const double mix_scale = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));
    for (auto& x : out.mixer.data) x = rng.normal() * mix_scale;

    out.offset_img = detail::random_unit(rng, spec.raw_dim_img, spec.modality_gap);
    out.offset_txt = detail::random_unit(rng, spec.raw_dim_txt, spec.modality_gap);

    out.prototypes = Mat64(spec.concepts, spec.latent_dim);
    for (int c = 0; c < spec.concepts; ++c) {
        Vec64 z = detail::random_unit(rng, spec.latent_dim, spec.separation);
        std::copy(z.begin(), z.end(), out.prototypes.row(c));
    }

    auto emit_row = [&](const double* z, int raw_dim, const Vec64& offset, double* row) {
        for (int d = 0; d < raw_dim; ++d) {
            double v = offset[d] + spec.noise_intra * rng.normal();
            v += dot(out.mixer.row(d), z, spec.latent_dim);
            row[d] = detail::quantize_f32(v);
        }
    };

    Dataset& ds = out.dataset;
    const int n_images = spec.concepts * spec.images_per_concept;
    out.image_latents = Mat64(n_images, spec.latent_dim);
    uint64_t caption_id = 1000000;
    for (int c = 0; c < spec.concepts; ++c) {
        for (int i = 0; i < spec.images_per_concept; ++i) {
            const int image_idx = static_cast<int>(ds.images.size());
            // pair latent: concept prototype plus an image-identity offset
            const Vec64 identity = detail::random_unit(rng, spec.latent_dim, spec.image_jitter);
            double* u = out.image_latents.row(image_idx);
            for (int l = 0; l < spec.latent_dim; ++l) u[l] = out.prototypes.at(c, l) + identity[l];

            FeatureItem img;
            img.id = static_cast<uint64_t>(image_idx);
            img.modality = Modality::regions;
            img.features = Mat64(spec.regions_per_image, spec.raw_dim_img);
            for (int r = 0; r < spec.regions_per_image; ++r) {
                // the distractor draws happen unconditionally so the stream
                // does not depend on the overlap value
                const double roll = rng.uniform();
                const uint64_t other = rng.index(static_cast<uint64_t>(spec.concepts - 1));
                const double* z = u;
                if (roll < spec.distractor_overlap) {
                    int src = static_cast<int>(other);
                    if (src >= c) ++src;
                    z = out.prototypes.row(src);
                }
                emit_row(z, spec.raw_dim_img, out.offset_img, img.features.row(r));
            }
            ds.images.push_back(std::move(img));
            out.concept_of_image.push_back(c);
            ds.captions_of.emplace_back();
            for (int s = 0; s < spec.captions_per_image; ++s) {
                FeatureItem cap;
                cap.id = caption_id++;
                cap.modality = Modality::words;
                cap.features = Mat64(spec.words_per_caption, spec.raw_dim_txt);
                for (int w = 0; w < spec.words_per_caption; ++w)
                    emit_row(u, spec.raw_dim_txt, out.offset_txt, cap.features.row(w));
                ds.captions_of[image_idx].push_back(static_cast<int>(ds.captions.size()));
                ds.image_of.push_back(image_idx);
                ds.captions.push_back(std::move(cap));
            }
        }
    }
    ds.image_split.assign(n_images, Split::none);
    ds.validate();
    return out;
}

// The fixed desk-scale benchmark used throughout the test suites.
inline SyntheticSpec standard_benchmark_spec(double overlap = 0.3, uint64_t seed = 7) {
    SyntheticSpec s;
    s.concepts = 50;
    s.images_per_concept = 10;
    s.captions_per_image = 5;
    s.regions_per_image = 8;
    s.words_per_caption = 6;
    s.distractor_overlap = overlap;
    s.seed = seed;
    return s;
}

// ---------------------------------------------------------------------------
// Splits.
// ---------------------------------------------------------------------------
struct SplitFractions {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

inline void assign_splits(Dataset& ds, const SplitFractions& f, uint64_t seed) {
    if (f.train < 0 || f.val < 0 || f.test < 0 || f.train + f.val + f.test > 1.0 + 1e-12)
        throw ConfigError("split fractions must be non-negative and sum to at most 1");
    const int n = ds.num_images();
    int n_train = static_cast<int>(f.train * n);
    const int n_val = static_cast<int>(f.val * n);
    const int n_test = static_cast<int>(f.test * n);
    // fractions covering the whole set: leftover rounding goes to train
    if (f.train + f.val + f.test > 1.0 - 1e-9) n_train = n - n_val - n_test;
    if (n_train + n_val + n_test > n) throw ConfigError("dataset too small for requested splits");
    if (f.train > 0 && n_train < 2) throw ConfigError("dataset too small: train split needs at least 2 images");
    if ((f.val > 0 && n_val < 1) || (f.test > 0 && n_test < 1))
        throw ConfigError("dataset too small for requested val/test splits");

    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed, /*stream=*/1);
    rng.shuffle(order);
    ds.image_split.assign(n, Split::none);
    int k = 0;
    for (int i = 0; i < n_train; ++i) ds.image_split[order[k++]] = Split::train;
    for (int i = 0; i < n_val; ++i) ds.image_split[order[k++]] = Split::val;
    for (int i = 0; i < n_test; ++i) ds.image_split[order[k++]] = Split::test;
}

// Partition `test` images into `folds` equal folds (remainder images are
// dropped), deterministic in the seed.
inline std::vector<std::vector<int>> make_folds(const Dataset& ds, int folds, uint64_t seed) {
    if (folds < 2) throw ConfigError("make_folds: need at least 2 folds");
    std::vector<int> test_imgs = ds.image_indices(Split::test);
    if (static_cast<int>(test_imgs.size()) < folds) throw ConfigError("make_folds: not enough test images");
    Rng rng(seed, /*stream=*/2);
    rng.shuffle(test_imgs);
    const int per = static_cast<int>(test_imgs.size()) / folds;
    std::vector<std::vector<int>> out(folds);
    for (int f = 0; f < folds; ++f)
        out[f].assign(test_imgs.begin() + f * per, test_imgs.begin() + (f + 1) * per);
    return out;
}

// ---------------------------------------------------------------------------
// Feature file format ("ADDRFEAT", little-endian):
//   magic[8] | version u32 | item count u64,
//   then per item: id u64 | rows u32 | dim u32 | rows*dim float32 row-major.
// Modality is not stored; it is a property of which file the items live in.
// ---------------------------------------------------------------------------
inline constexpr char kFeatureMagic[9] = "ADDRFEAT";
inline constexpr uint32_t kFeatureVersion = 1;

inline void write_features(const std::string& path, const std::vector<FeatureItem>& items) {
    auto os = binio::open_out(path);
    binio::put_magic(os, kFeatureMagic);
    binio::put_u32(os, kFeatureVersion);
    binio::put_u64(os, items.size());
    for (const auto& it : items) {
        binio::put_u64(os, it.id);
        binio::put_u32(os, static_cast<uint32_t>(it.features.rows));
        binio::put_u32(os, static_cast<uint32_t>(it.features.cols));
        for (double v : it.features.data) binio::put_f32(os, static_cast<float>(v));
    }
    if (!os) throw IoError("write failed: " + path);
}

inline std::vector<FeatureItem> read_features(const std::string& path, Modality modality) {
    auto is = binio::open_in(path);
    binio::expect_magic(is, kFeatureMagic, "ADDRFEAT");
    const uint32_t version = binio::get_u32(is, "version");
    if (version != kFeatureVersion)
        throw FormatError("ADDRFEAT version " + std::to_string(version) + " not supported");
    const uint64_t count = binio::get_u64(is, "item count");
    std::vector<FeatureItem> items;
    items.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        FeatureItem it;
        it.id = binio::get_u64(is, "item id");
        const uint32_t rows = binio::get_u32(is, "rows");
        const uint32_t dim = binio::get_u32(is, "dim");
        if (rows == 0 || dim == 0) throw FormatError("ADDRFEAT: empty item");
        if (static_cast<uint64_t>(rows) * dim > (1ULL << 31)) throw FormatError("ADDRFEAT: item too large");
        it.modality = modality;
        it.features = Mat64(static_cast<int>(rows), static_cast<int>(dim));
        for (auto& v : it.features.data) v = static_cast<double>(binio::get_f32(is, "feature"));
        require_finite(it.features, "read_features");
        items.push_back(std::move(it));
    }
    return items;
}

// ---------------------------------------------------------------------------
// Manifest: one text line per image,
//   <image_id> <split> <caption_id,caption_id,...>
// ---------------------------------------------------------------------------
inline void write_manifest(const std::string& path, const Dataset& ds) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    for (int i = 0; i < ds.num_images(); ++i) {
        os << ds.images[i].id << ' ' << split_name(ds.image_split[i]) << ' ';
        for (size_t k = 0; k < ds.captions_of[i].size(); ++k) {
            if (k) os << ',';
            os << ds.captions[ds.captions_of[i][k]].id;
        }
        os << '\n';
    }
    if (!os) throw IoError("write failed: " + path);
}

struct ManifestEntry {
    uint64_t image_id;
    Split split;
    std::vector<uint64_t> caption_ids;
};

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open for reading: " + path);
    std::vector<ManifestEntry> out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        ManifestEntry e;
        std::string split_word, caps;
        if (!(ss >> e.image_id >> split_word >> caps))
            throw FormatError("manifest line " + std::to_string(lineno) + ": expected <id> <split> <captions>");
        e.split = split_from_name(split_word);
        std::istringstream cs(caps);
        std::string tok;
        while (std::getline(cs, tok, ',')) {
            if (tok.empty()) throw FormatError("manifest line " + std::to_string(lineno) + ": empty caption id");
            e.caption_ids.push_back(std::stoull(tok));
        }
        if (e.caption_ids.empty())
            throw FormatError("manifest line " + std::to_string(lineno) + ": image with no captions");
        out.push_back(std::move(e));
    }
    return out;
}

// File layout used by the CLI: <prefix>.images.addrfeat, <prefix>.captions.addrfeat,
// <prefix>.manifest.
inline void save_dataset(const std::string& prefix, const Dataset& ds) {
    write_features(prefix + ".images.addrfeat", ds.images);
    write_features(prefix + ".captions.addrfeat", ds.captions);
    write_manifest(prefix + ".manifest", ds);
}

inline Dataset load_dataset(const std::string& prefix) {
    Dataset ds;
    ds.images = read_features(prefix + ".images.addrfeat", Modality::regions);
    ds.captions = read_features(prefix + ".captions.addrfeat", Modality::words);
    const auto manifest = read_manifest(prefix + ".manifest");

    std::map<uint64_t, int> image_index, caption_index;
    for (int i = 0; i < ds.num_images(); ++i) {
        if (!image_index.emplace(ds.images[i].id, i).second) throw FormatError("duplicate image id");
    }
    for (int c = 0; c < ds.num_captions(); ++c) {
        if (!caption_index.emplace(ds.captions[c].id, c).second) throw FormatError("duplicate caption id");
    }
    ds.captions_of.assign(ds.num_images(), {});
    ds.image_of.assign(ds.num_captions(), -1);
    ds.image_split.assign(ds.num_images(), Split::none);
    for (const auto& e : manifest) {
        auto it = image_index.find(e.image_id);
        if (it == image_index.end()) throw FormatError("manifest references unknown image id");
        const int i = it->second;
        ds.image_split[i] = e.split;
        for (uint64_t cid : e.caption_ids) {
            auto ct = caption_index.find(cid);
            if (ct == caption_index.end()) throw FormatError("manifest references unknown caption id");
            ds.captions_of[i].push_back(ct->second);
            ds.image_of[ct->second] = i;
        }
    }
    ds.validate();
    return ds;
}

}  // namespace addr
