#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "addr/discriminator.hpp"
#include "doctest.h"

using namespace addr;

namespace {
Mat64 random_rows(Rng& rng, int rows, int dim, double scale = 1.0) {
    Mat64 m(rows, dim);
    for (auto& v : m.data) v = scale * rng.normal();
    return m;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_SUITE_BEGIN("discriminator");

TEST_CASE("zero parameters predict one half everywhere") {
    Discriminator f;
    f.weight.assign(4, 0.0);
    Rng rng(91);
    for (int i = 0; i < 10; ++i) {
        Vec64 x(4);
        for (auto& v : x) v = rng.normal();
        CHECK(predict(f, x) == 0.5);
    }
}

TEST_CASE("logit ln 3 gives probability 3/4") {
    Discriminator f;
    f.weight = {std::log(3.0)};
    const Vec64 x{1.0};
    CHECK(predict(f, x) == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("sigmoid antisymmetry: f and -f sum to one") {
    Rng rng(93);
    for (int i = 0; i < 20; ++i) {
        Discriminator f;
        f.weight.resize(5);
        for (auto& w : f.weight) w = rng.normal();
        f.bias = rng.normal();
        Discriminator neg;
        neg.weight.resize(5);
        for (int d = 0; d < 5; ++d) neg.weight[d] = -f.weight[d];
        neg.bias = -f.bias;
        Vec64 x(5);
        for (auto& v : x) v = rng.normal();
        CHECK(predict(f, x) + predict(neg, x) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("adv_loss at zero parameters is exactly (n+m) ln 2") {
    Discriminator f;
    f.weight.assign(6, 0.0);
    Rng rng(97);
    const Mat64 regions = random_rows(rng, 4, 6);
    const Mat64 words = random_rows(rng, 3, 6);
    const double loss = adv_loss(f, regions, words);
    CHECK(std::abs(loss - 7.0 * std::log(2.0)) < 1e-12);
    CHECK(loss == doctest::Approx(4.8520302639196169).epsilon(1e-14));
}

TEST_CASE("saturated separation drives the loss to zero") {
    Discriminator f;
    f.weight = {30.0};
    Mat64 regions(2, 1), words(2, 1);
    regions.at(0, 0) = -1.0;
    regions.at(1, 0) = -1.2;
    words.at(0, 0) = 1.0;
    words.at(1, 0) = 1.1;
    CHECK(adv_loss(f, regions, words) < 1e-10);
}

TEST_CASE("adv_loss equals a per-sample cross-entropy sum") {
    Rng rng(101);
    Discriminator f;
    f.weight.resize(5);
    for (auto& w : f.weight) w = 0.4 * rng.normal();
    f.bias = 0.2;
    const Mat64 regions = random_rows(rng, 3, 5);
    const Mat64 words = random_rows(rng, 4, 5);
    double expect = 0.0;
    for (int i = 0; i < 3; ++i) expect += -std::log(1.0 - predict(f, regions.row(i), 5));
    for (int j = 0; j < 4; ++j) expect += -std::log(predict(f, words.row(j), 5));
    CHECK(adv_loss(f, regions, words) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("adv_loss is permutation-invariant within each set") {
    Rng rng(103);
    Discriminator f;
    f.weight.resize(4);
    for (auto& w : f.weight) w = rng.normal();
    const Mat64 regions = random_rows(rng, 3, 4);
    const Mat64 words = random_rows(rng, 3, 4);
    Mat64 regions_p(3, 4), words_p(3, 4);
    const int perm[3] = {2, 0, 1};
    for (int r = 0; r < 3; ++r)
        for (int d = 0; d < 4; ++d) {
            regions_p.at(r, d) = regions.at(perm[r], d);
            words_p.at(r, d) = words.at(perm[r], d);
        }
    CHECK(adv_loss(f, regions, words) == doctest::Approx(adv_loss(f, regions_p, words_p)).epsilon(1e-13));
}

TEST_CASE("gradients at zero parameters have the balanced-class form") {
    Discriminator f;
    f.weight.assign(4, 0.0);
    Rng rng(107);
    const Mat64 regions = random_rows(rng, 3, 4);
    const Mat64 words = random_rows(rng, 3, 4);
    const AdvGrads g = adv_grads(f, regions, words);
    // sigma = 1/2 on every sample: grad_b = 0.5 n - 0.5 m = 0,
    // grad_w = 0.5 (sum regions - sum words)
    CHECK(g.d_bias == doctest::Approx(0.0).scale(1.0));
    for (int d = 0; d < 4; ++d) {
        double expect = 0.0;
        for (int i = 0; i < 3; ++i) expect += 0.5 * regions.at(i, d);
        for (int j = 0; j < 3; ++j) expect -= 0.5 * words.at(j, d);
        CHECK(g.d_weight[d] == doctest::Approx(expect).epsilon(1e-13));
    }
}

TEST_CASE("gradient descent separates a linearly separable fixture") {
    // frozen features, pure adv descent must reach 100% training accuracy
    Rng rng(109);
    Mat64 regions(8, 3), words(8, 3);
    for (int i = 0; i < 8; ++i) {
        regions.at(i, 0) = 1.0 + 0.1 * rng.normal();
        regions.at(i, 1) = rng.normal() * 0.2;
        regions.at(i, 2) = rng.normal() * 0.2;
        words.at(i, 0) = -1.0 + 0.1 * rng.normal();
        words.at(i, 1) = rng.normal() * 0.2;
        words.at(i, 2) = rng.normal() * 0.2;
    }
    Discriminator f;
    f.weight.assign(3, 0.0);
    Vec64 gw(3);
    for (int step = 0; step < 200; ++step) {
        std::fill(gw.begin(), gw.end(), 0.0);
        double gb = 0.0;
        adv_param_grads_acc(f, regions, words, 1.0, gw, gb);
        for (int d = 0; d < 3; ++d) f.weight[d] -= 0.1 * gw[d];
        f.bias -= 0.1 * gb;
    }
    for (int i = 0; i < 8; ++i) {
        CHECK(predict(f, regions.row(i), 3) < 0.5);
        CHECK(predict(f, words.row(i), 3) > 0.5);
    }
    CHECK(adv_loss(f, regions, words) < 8.0 * std::log(2.0));
}

TEST_CASE("adv gradients match finite differences") {
    Rng rng(113);
    double max_err_params = 0.0, max_err_feat = 0.0;
    for (int inst = 0; inst < 100; ++inst) {
        Discriminator f;
        f.weight.resize(4);
        for (auto& w : f.weight) w = 0.5 * rng.normal();
        f.bias = 0.3 * rng.normal();
        const Mat64 regions = random_rows(rng, 4, 4, 0.7);
        const Mat64 words = random_rows(rng, 3, 4, 0.7);
        const AdvGrads g = adv_grads(f, regions, words);

        Vec64 analytic_p = g.d_weight;
        analytic_p.push_back(g.d_bias);
        Vec64 flat_p = f.weight;
        flat_p.push_back(f.bias);
        const Vec64 numeric_p = fd_gradient(
            [&](const Vec64& x) {
                Discriminator probe;
                probe.weight.assign(x.begin(), x.end() - 1);
                probe.bias = x.back();
                return adv_loss(probe, regions, words);
            },
            flat_p, 1e-5);
        max_err_params = std::max(max_err_params, relative_error(analytic_p, numeric_p));

        Vec64 analytic_f = g.d_regions.data;
        analytic_f.insert(analytic_f.end(), g.d_words.data.begin(), g.d_words.data.end());
        Vec64 flat_f = regions.data;
        flat_f.insert(flat_f.end(), words.data.begin(), words.data.end());
        const Vec64 numeric_f = fd_gradient(
            [&](const Vec64& x) {
                Mat64 pr = regions, pw = words;
                std::copy(x.begin(), x.begin() + pr.data.size(), pr.data.begin());
                std::copy(x.begin() + pr.data.size(), x.end(), pw.data.begin());
                return adv_loss(f, pr, pw);
            },
            flat_f, 1e-5);
        max_err_feat = std::max(max_err_feat, relative_error(analytic_f, numeric_f));
    }
    CHECK(max_err_params <= 1e-4);
    CHECK(max_err_feat <= 1e-4);
}

TEST_CASE("a deliberately sign-flipped gradient is caught by the oracle") {
    Rng rng(117);
    Discriminator f;
    f.weight.resize(4);
    for (auto& w : f.weight) w = 0.5 * rng.normal();
    f.bias = 0.1;
    const Mat64 regions = random_rows(rng, 4, 4);
    const Mat64 words = random_rows(rng, 3, 4);
    AdvGrads g = adv_grads(f, regions, words);
    Vec64 flipped = g.d_weight;
    for (auto& v : flipped) v = -v;
    flipped.push_back(-g.d_bias);
    Vec64 flat = f.weight;
    flat.push_back(f.bias);
    const Vec64 numeric = fd_gradient(
        [&](const Vec64& x) {
            Discriminator probe;
            probe.weight.assign(x.begin(), x.end() - 1);
            probe.bias = x.back();
            return adv_loss(probe, regions, words);
        },
        flat, 1e-5);
    CHECK(relative_error(flipped, numeric) > 1e-4);
}

TEST_CASE("bank: fresh entries are zero, lookups are stable, no aliasing") {
    DiscriminatorBank bank(4);
    Discriminator& a = bank.get_or_init(7);
    CHECK(a.bias == 0.0);
    for (double w : a.weight) CHECK(w == 0.0);
    Vec64 x{0.3, -0.2, 0.5, 0.1};
    CHECK(predict(a, x) == 0.5);

    a.weight[0] = 1.5;
    a.bias = -0.25;
    const Discriminator& again = bank.get_or_init(7);
    CHECK(again.weight[0] == 1.5);
    CHECK(again.bias == -0.25);

    bank.get_or_init(3);
    bank.get_or_init(11);
    CHECK(bank.size() == 3);
    const uint64_t h_before = bank.content_hash();
    bank.get_or_init(3).weight[1] = 9.0;
    CHECK(bank.content_hash() != h_before);
    CHECK(bank.get_or_init(7).weight[0] == 1.5);
    CHECK(bank.get_or_init(11).bias == 0.0);
}

TEST_CASE("bank file round trip is exact; empty bank round trips") {
    Rng rng(119);
    DiscriminatorBank bank(5);
    for (uint64_t id : {2ULL, 5ULL, 42ULL}) {
        Discriminator& f = bank.get_or_init(id);
        for (auto& w : f.weight) w = rng.normal();
        f.bias = rng.normal();
    }
    const std::string path = temp_path("addr_test_bank.addrbank");
    save_bank(bank, path);
    const DiscriminatorBank back = load_bank(path);
    CHECK(back == bank);

    DiscriminatorBank empty(5);
    save_bank(empty, path);
    CHECK(load_bank(path) == empty);
    std::remove(path.c_str());
}

TEST_CASE("bank file errors: truncation and bad magic return no partial bank") {
    Rng rng(121);
    DiscriminatorBank bank(4);
    for (uint64_t id = 0; id < 6; ++id) {
        Discriminator& f = bank.get_or_init(id);
        for (auto& w : f.weight) w = rng.normal();
    }
    const std::string path = temp_path("addr_test_bank_trunc.addrbank");
    save_bank(bank, path);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 5);
    CHECK_THROWS_AS(load_bank(path), FormatError);

    {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os << "WRONGMAG" << std::string(32, '\0');
    }
    CHECK_THROWS_AS(load_bank(path), FormatError);
    std::remove(path.c_str());
}

TEST_CASE("dim mismatch is rejected") {
    Discriminator f;
    f.weight.assign(3, 0.0);
    Mat64 regions(2, 4, 0.1), words(2, 3, 0.1);
    CHECK_THROWS_AS(adv_loss(f, regions, words), ShapeError);
    CHECK_THROWS_AS(adv_loss(f, Mat64(0, 3), words), ShapeError);
}

TEST_SUITE_END();
