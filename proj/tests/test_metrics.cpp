#include "oracles.hpp"

#include "spx/error.hpp"
#include "spx/metrics.hpp"
#include "spx/special.hpp"

#include <doctest.h>

#include <cmath>

using namespace spx;

TEST_CASE("collect_outputs examples") {
    const auto a = collect_outputs(Matrix::identity(2), Matrix::from_rows({{1, 2}, {3, 4}}));
    REQUIRE(a.size() == 2);
    CHECK(a[0].samples == std::vector<double>{1, 2});
    CHECK(a[1].samples == std::vector<double>{3, 4});
    const auto z = collect_outputs(Matrix(3, 2), Matrix::from_rows({{1, 2}, {3, 4}}));
    for (const auto & n : z) {
        CHECK(n.samples == std::vector<double>{0, 0});
    }
    const auto s = collect_outputs(Matrix::from_rows({{2}}), Matrix::from_rows({{5, -1}}));
    CHECK(s[0].samples == std::vector<double>{10, -2});
    const std::vector<double> bias{1.0};
    CHECK(collect_outputs(Matrix::from_rows({{2}}), Matrix::from_rows({{5, -1}}), bias)[0].samples ==
          std::vector<double>{11, -1});
    CHECK_THROWS_AS(collect_outputs(Matrix(2, 3), Matrix(2, 2)), Error);
}

TEST_CASE("wd_to_gaussian calibration") {
    for (std::size_t n : {2u, 3u, 10u, 1000u}) {
        std::vector<double> q(n);
        for (std::size_t i = 0; i < n; ++i) {
            q[i] = inv_normal_cdf((static_cast<double>(i) + 0.5) / static_cast<double>(n));
        }
        CHECK(wd_to_gaussian(q) == 0.0);
    }

    std::vector<double> two(10000);
    for (std::size_t i = 0; i < two.size(); ++i) {
        two[i] = i < 5000 ? -1.0 : 1.0;
    }
    const double ref = oracle::wd_quadrature([](double u) { return u < 0.5 ? -1.0 : 1.0; }, 20000);
    CHECK(ref == doctest::Approx(0.5354).epsilon(0.002));
    CHECK(std::fabs(wd_to_gaussian(two) - ref) <= 0.01);

    SeededRng rng(1);
    std::vector<double> g(100000);
    for (double & v : g) {
        v = rng.normal();
    }
    CHECK(wd_to_gaussian(g) <= 0.02);
}

TEST_CASE("wd_to_gaussian affine invariance and degeneracy") {
    SeededRng rng(2);
    std::vector<double> x(500);
    for (double & v : x) {
        v = rng.normal() * rng.uniform(0.5, 2.0);
    }
    const double base = wd_to_gaussian(x);
    CHECK(base >= 0.0);
    for (auto [a, b] : {std::pair{3.0, -2.0}, std::pair{0.01, 100.0}, std::pair{7.5, 0.0}}) {
        std::vector<double> y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            y[i] = a * x[i] + b;
        }
        CHECK(std::fabs(wd_to_gaussian(y) - base) <= 1e-9);
    }
    try {
        wd_to_gaussian(std::vector<double>{4.0, 4.0, 4.0});
        FAIL("zero variance accepted");
    } catch (const Error & e) {
        CHECK(e.code() == ErrorCode::kDegenerate);
    }
    CHECK_THROWS_AS(wd_to_gaussian(std::vector<double>{1.0}), Error);
}

TEST_CASE("wd_empirical examples and metric properties") {
    CHECK(wd_empirical(std::vector<double>{1, 2, 3}, std::vector<double>{3, 1, 2}) == 0.0);
    CHECK(wd_empirical(std::vector<double>{0, 0}, std::vector<double>{1, 1}) == 1.0);
    CHECK(wd_empirical(std::vector<double>{0, 1}, std::vector<double>{0, 3}) == 1.0);
    CHECK_THROWS_AS(wd_empirical(std::vector<double>{}, std::vector<double>{1}), Error);

    SeededRng rng(4);
    auto draw = [&] {
        std::vector<double> v(1 + rng.uniform_index(9));
        for (double & x : v) {
            x = rng.normal();
        }
        return v;
    };
    for (int t = 0; t < 200; ++t) {
        const auto a = draw();
        const auto b = draw();
        const auto c = draw();
        CHECK(wd_empirical(a, b) == wd_empirical(b, a));
        CHECK(wd_empirical(a, c) <= wd_empirical(a, b) + wd_empirical(b, c) + 1e-9);
    }
}

TEST_CASE("mapping difficulty examples") {
    SeededRng rng(0);
    const Matrix x = Matrix::from_rows({{0, 1, 2}});
    const std::vector<double> w{1.0};
    CHECK(mapping_difficulty(w, x, kDefaultPairBudget, rng) == 2.0);
    const std::vector<double> w3{-3.0};
    CHECK(mapping_difficulty(w3, x, kDefaultPairBudget, rng) == 2.0);
    CHECK(mapping_difficulty(w, Matrix::from_rows({{0.5, 4.0}}), kDefaultPairBudget, rng) == 1.0);
    try {
        mapping_difficulty(w, Matrix::from_rows({{1, 1, 1}}), kDefaultPairBudget, rng);
        FAIL("degenerate pairs accepted");
    } catch (const Error & e) {
        CHECK(e.code() == ErrorCode::kDegenerate);
    }
}

TEST_CASE("mapping difficulty scale invariance") {
    SeededRng gen(5);
    Matrix x(6, 40);
    for (double & v : x.data()) {
        v = gen.normal();
    }
    std::vector<double> w(6);
    for (double & v : w) {
        v = gen.normal();
    }
    SeededRng r0(1);
    const double base = mapping_difficulty(w, x, kDefaultPairBudget, r0);
    for (double c : {-2.5, 0.1, 1000.0}) {
        std::vector<double> cw(w);
        for (double & v : cw) {
            v *= c;
        }
        Matrix cx = x;
        for (double & v : cx.data()) {
            v *= std::fabs(c);
        }
        SeededRng r1(1);
        SeededRng r2(1);
        CHECK(std::fabs(mapping_difficulty(cw, x, kDefaultPairBudget, r1) - base) <= 1e-9 * base);
        CHECK(std::fabs(mapping_difficulty(w, cx, kDefaultPairBudget, r2) - base) <= 1e-9 * base);
    }
}

TEST_CASE("pair sampling") {
    SeededRng gen(6);
    Matrix x(2, 30);
    for (double & v : x.data()) {
        v = gen.normal();
    }
    SeededRng a(1);
    const PairSet all = sample_pairs(x, 1000, a);
    CHECK(all.size() == 435);
    SeededRng b(1);
    const PairSet some = sample_pairs(x, 100, b);
    CHECK(some.size() == 100);
    for (std::size_t p = 0; p < some.size(); ++p) {
        CHECK(some.first[p] < some.second[p]);
        if (p > 0) {
            const bool increasing = some.first[p - 1] < some.first[p] ||
                                    (some.first[p - 1] == some.first[p] && some.second[p - 1] < some.second[p]);
            CHECK(increasing);
        }
    }
    SeededRng c(1);
    const PairSet again = sample_pairs(x, 100, c);
    CHECK(again.first == some.first);
    CHECK(again.second == some.second);
}

TEST_CASE("io pairs") {
    SeededRng rng(0);
    const std::vector<double> w{1.0, 0.0};
    const auto same = io_pairs(w, Matrix::from_rows({{1, 1}, {2, 2}}), 10, rng);
    REQUIRE(same.pairs.size() == 1);
    CHECK(same.pairs[0].cos_sim == doctest::Approx(1.0));
    CHECK(same.pairs[0].l1_dist == 0.0);
    const auto orth = io_pairs(w, Matrix::from_rows({{1, 0}, {0, 1}}), 10, rng);
    CHECK(orth.pairs[0].cos_sim == 0.0);
    CHECK(orth.pairs[0].l1_dist == 1.0);
    const std::vector<double> w2{0.5, -2.0};
    const auto anti = io_pairs(w2, Matrix::from_rows({{1, -1}, {3, -3}}), 10, rng);
    CHECK(anti.pairs[0].cos_sim == doctest::Approx(-1.0));
    CHECK(anti.pairs[0].l1_dist == doctest::Approx(2.0 * std::fabs(0.5 - 6.0)));
    const auto zero = io_pairs(w, Matrix::from_rows({{0, 1, 2}, {0, 1, 0}}), 10, rng);
    CHECK(zero.skipped_zero_norm == 2);
    CHECK(zero.pairs.size() == 1);
}

TEST_CASE("select_wasserstein_neurons") {
    CHECK(select_wasserstein_neurons(WdReport{"l", {0.1, 0.9, 0.5}}, 1.0 / 3.0) == std::vector<std::size_t>{1});
    CHECK(select_wasserstein_neurons(WdReport{"l", {0.1, 0.9, 0.5}}, 1.0) == std::vector<std::size_t>{0, 1, 2});
    CHECK(select_wasserstein_neurons(WdReport{"l", {0.5, 0.5}}, 0.5) == std::vector<std::size_t>{0});
    // Invariant under strictly increasing transforms.
    SeededRng rng(3);
    std::vector<double> wd(50);
    for (double & v : wd) {
        v = rng.uniform();
    }
    std::vector<double> t(wd);
    for (double & v : t) {
        v = std::exp(3.0 * v) + 1.0;
    }
    CHECK(select_wasserstein_neurons(WdReport{"l", wd}, 0.2) == select_wasserstein_neurons(WdReport{"l", t}, 0.2));
}

TEST_CASE("weighted cluster average") {
    CHECK(weighted_cluster_average(std::vector<double>{1, 3}, std::vector<double>{1, 1}) == 2.0);
    CHECK(weighted_cluster_average(std::vector<double>{1, 3}, std::vector<double>{3, 1}) == 1.5);
    CHECK(weighted_cluster_average(std::vector<double>{7}, std::vector<double>{4}) == 7.0);
    CHECK_THROWS_AS(weighted_cluster_average(std::vector<double>{1}, std::vector<double>{0}), Error);
}

TEST_CASE("min_components_for_variance") {
    SeededRng rng(9);
    Matrix a(20, 2);
    Matrix b(2, 200);
    for (double & v : a.data()) {
        v = rng.normal();
    }
    for (double & v : b.data()) {
        v = rng.normal();
    }
    CHECK(min_components_for_variance(matmul(a, b), 0.9).count == 2);

    // Exactly isotropic: +-e_i for every axis.
    Matrix iso(10, 20);
    for (std::size_t i = 0; i < 10; ++i) {
        iso(i, 2 * i) = 1.0;
        iso(i, 2 * i + 1) = -1.0;
    }
    CHECK(min_components_for_variance(iso, 0.9).count == 9);

    Matrix full(5, 100);
    for (double & v : full.data()) {
        v = rng.normal();
    }
    CHECK(min_components_for_variance(full, 1.0).count == 5);
    std::size_t prev = 0;
    for (double t : {0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 1.0}) {
        const std::size_t k = min_components_for_variance(full, t).count;
        CHECK(k >= prev);
        prev = k;
    }
    const ComponentCount z = min_components_for_variance(Matrix(3, 5, 2.0), 0.9);
    CHECK(z.count == 0);
    CHECK(z.zero_variance);
}
