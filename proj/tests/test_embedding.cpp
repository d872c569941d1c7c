#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdlib>

#include "gifdl/embedding.hpp"
#include "gifdl/errors.hpp"
#include "gifdl/rng.hpp"

using namespace gifdl;

namespace {

ProbabilityMap constant_map(int h, int w, double p_total) {
    return ProbabilityMap::symmetric(Grid(h, w, p_total));
}

}  // namespace

TEST_CASE("piecewise branches follow the noise thresholds") {
    auto p = constant_map(1, 3, 0.4);  // p_plus = p_minus = 0.2
    NoiseField r;
    r.r = Grid(1, 3);
    r.r.at(0, 0) = 0.1;   // below p_minus
    r.r.at(0, 1) = 0.5;   // middle
    r.r.at(0, 2) = 0.85;  // above 1 - p_plus
    const auto m = piecewise_modify(p, r);
    CHECK(m.m.at(0, 0) == -1.0);
    CHECK(m.m.at(0, 1) == 0.0);
    CHECK(m.m.at(0, 2) == 1.0);
}

TEST_CASE("zero probability yields no changes for any noise") {
    auto p = constant_map(8, 8, 0.0);
    const auto r = make_noise(8, 8, 99);
    const auto m = piecewise_modify(p, r);
    for (double v : m.m.v) CHECK(v == 0.0);
}

TEST_CASE("noise exactly at a threshold lands on the zero branch") {
    auto p = constant_map(1, 2, 0.4);
    NoiseField r;
    r.r = Grid(1, 2);
    r.r.at(0, 0) = 0.2;  // == p_minus
    r.r.at(0, 1) = 0.8;  // == 1 - p_plus
    const auto m = piecewise_modify(p, r);
    CHECK(m.m.at(0, 0) == 0.0);
    CHECK(m.m.at(0, 1) == 0.0);
}

TEST_CASE("piecewise change frequencies concentrate at p/2 per direction") {
    const int side = 317;  // 100489 pixels
    auto p = constant_map(side, side, 0.3);
    const auto r = make_noise(side, side, 1234);
    const auto m = piecewise_modify(p, r);
    std::size_t minus = 0, plus = 0;
    for (double v : m.m.v) {
        if (v < -0.5) ++minus;
        if (v > 0.5) ++plus;
    }
    const double n = double(m.m.size());
    // 3 sigma for a Bernoulli(0.15) over ~1e5 draws
    CHECK(std::abs(double(minus) / n - 0.15) < 0.0034);
    CHECK(std::abs(double(plus) / n - 0.15) < 0.0034);
}

TEST_CASE("piecewise rejects shape mismatch") {
    auto p = constant_map(4, 4, 0.2);
    const auto r = make_noise(4, 5, 1);
    CHECK_THROWS_AS(piecewise_modify(p, r), ShapeError);
}

TEST_CASE("double tanh cancels exactly at p=0, r=0.5") {
    auto p = constant_map(1, 1, 0.0);
    NoiseField r;
    r.r = Grid(1, 1, 0.5);
    const auto m = double_tanh_modify(p, r, 60.0);
    CHECK(m.m.at(0, 0) == 0.0);
}

TEST_CASE("double tanh output is bounded by plus-minus one") {
    Rng rng(5);
    Grid total(16, 16);
    for (auto& x : total.v) x = rng.uniform01() * 0.999;
    auto p = ProbabilityMap::symmetric(total);
    const auto r = make_noise(16, 16, 6);
    const auto m = double_tanh_modify(p, r, 60.0);
    for (double v : m.m.v) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    // Strict interior away from tanh saturation.
    auto mild = ProbabilityMap::symmetric(Grid(1, 1, 0.2));
    NoiseField rn;
    rn.r = Grid(1, 1, 0.3);
    const auto mm = double_tanh_modify(mild, rn, 60.0);
    CHECK(mm.m.at(0, 0) > -1.0);
    CHECK(mm.m.at(0, 0) < 1.0);
}

TEST_CASE("double tanh matches the discrete map away from thresholds") {
    const double gamma = 60.0;
    const double margin = 5.0 / gamma;
    Rng rng(17);
    Grid total(64, 64);
    for (auto& x : total.v) x = rng.uniform01() * 0.8;
    auto p = ProbabilityMap::symmetric(total);
    const auto r = make_noise(64, 64, 18);
    const auto md = piecewise_modify(p, r);
    const auto mc = double_tanh_modify(p, r, gamma);
    int checked = 0;
    for (std::size_t k = 0; k < total.size(); ++k) {
        const double rv = r.r.v[k];
        const double pm = p.p_minus.v[k];
        const double pp = p.p_plus.v[k];
        if (std::abs(rv - pm) <= margin) continue;
        if (std::abs(rv - (1.0 - pp)) <= margin) continue;
        CHECK(std::abs(mc.m.v[k] - md.m.v[k]) < 1e-3);
        ++checked;
    }
    CHECK(checked > 1000);
}

TEST_CASE("off-threshold gap shrinks monotonically in gamma") {
    Rng rng(77);
    Grid total(32, 32);
    for (auto& x : total.v) x = 0.05 + rng.uniform01() * 0.5;
    auto p = ProbabilityMap::symmetric(total);
    const auto r = make_noise(32, 32, 78);
    const auto md = piecewise_modify(p, r);
    const double margin = 5.0 / 60.0;  // fixed mask so gammas see the same pixels
    std::vector<double> gaps;
    for (double gamma : {60.0, 120.0, 240.0, 480.0}) {
        const auto mc = double_tanh_modify(p, r, gamma);
        double gap = 0.0;
        for (std::size_t k = 0; k < total.size(); ++k) {
            const double rv = r.r.v[k];
            if (std::abs(rv - p.p_minus.v[k]) <= margin) continue;
            if (std::abs(rv - (1.0 - p.p_plus.v[k])) <= margin) continue;
            gap = std::max(gap, std::abs(mc.m.v[k] - md.m.v[k]));
        }
        gaps.push_back(gap);
    }
    // Monotone decay to zero; the tail underflows to exactly 0 in double.
    for (std::size_t i = 1; i < gaps.size(); ++i) CHECK(gaps[i] <= gaps[i - 1]);
    CHECK(gaps.front() < 1e-3);
    CHECK(gaps.back() < gaps.front());
    CHECK(gaps.back() < 1e-12);
}

TEST_CASE("analytic double tanh gradient matches central differences") {
    const double gamma = 60.0;
    const double step = 1e-5;
    Rng rng(31);
    int worst_checked = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const double pp = 1e-4 + rng.uniform01() * 0.45;
        const double pm = 1e-4 + rng.uniform01() * 0.45;
        const double rv = rng.uniform01();

        auto p = ProbabilityMap::directional(Grid(1, 1, pp), Grid(1, 1, pm));
        NoiseField r;
        r.r = Grid(1, 1, rv);
        const auto g = double_tanh_modify_with_grad(p, r, gamma);

        auto eval = [&](double pplus) {
            auto pd = ProbabilityMap::directional(Grid(1, 1, pplus), Grid(1, 1, pm));
            return double_tanh_modify(pd, r, gamma).m.at(0, 0);
        };
        const double fd = (eval(pp + step) - eval(pp - step)) / (2.0 * step);
        const double an = g.dm_dp_plus.at(0, 0);
        // Absolute floor on the denominator: in the saturated tail a central
        // difference is rounding noise, not a usable reference.
        const double denom = std::max({std::abs(an), std::abs(fd), 1e-6});
        CHECK(std::abs(an - fd) / denom < 1e-4);
        if (std::abs(an) > 1e-6) ++worst_checked;
    }
    CHECK(worst_checked > 200);
}

TEST_CASE("cost formula hits the analytic anchors") {
    auto p = ProbabilityMap::directional(Grid(1, 1, 1.0 / 3.0), Grid(1, 1, 0.25));
    const auto c = probs_to_costs(p);
    CHECK(c.rho_plus.at(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(c.rho_minus.at(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("symmetric maps round trip through costs within 1e-9") {
    Rng rng(41);
    for (int trial = 0; trial < 500; ++trial) {
        const double pp = 1e-6 + rng.uniform01() * (0.499 - 1e-6);
        auto p = ProbabilityMap::symmetric(Grid(1, 1, 2.0 * pp));
        const auto back = costs_to_probs(probs_to_costs(p));
        CHECK(std::abs(back.p_plus.at(0, 0) - p.p_plus.at(0, 0)) < 1e-9);
        CHECK(std::abs(back.p_minus.at(0, 0) - p.p_minus.at(0, 0)) < 1e-9);
    }
    // Other direction: symmetric finite costs reproduce themselves.
    for (int trial = 0; trial < 200; ++trial) {
        const double rho = -0.6 + rng.uniform01() * 10.0;  // negative costs legal below p=1/2
        CostMap c;
        c.rho_plus = Grid(1, 1, rho);
        c.rho_minus = Grid(1, 1, rho);
        const auto again = probs_to_costs(costs_to_probs(c));
        CHECK(std::abs(again.rho_plus.at(0, 0) - rho) < 1e-9);
        CHECK(std::abs(again.rho_minus.at(0, 0) - rho) < 1e-9);
    }
}

TEST_CASE("probability at or above one half has no cost") {
    auto p = constant_map(2, 2, 1.0);  // p_plus = 0.5
    CHECK_THROWS_AS(probs_to_costs(p), DomainError);
    auto z = constant_map(2, 2, 0.0);
    CHECK_THROWS_AS(probs_to_costs(z), DomainError);
}

TEST_CASE("zero cost maps to the uniform ternary distribution") {
    CostMap c;
    c.rho_plus = Grid(2, 2, 0.0);
    c.rho_minus = Grid(2, 2, 0.0);
    const auto p = costs_to_probs(c);
    CHECK(p.p_plus.at(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(p.p_minus.at(1, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("wet costs map to zero probability") {
    CostMap c;
    c.rho_plus = Grid(1, 2, kWetCost);
    c.rho_minus = Grid(1, 2, 1.0);
    c.rho_minus.at(0, 1) = kWetCost;
    const auto p = costs_to_probs(c);
    CHECK(p.p_plus.at(0, 0) == 0.0);
    CHECK(p.p_minus.at(0, 0) > 0.0);
    CHECK(p.total(0, 1) == 0.0);
}

TEST_CASE("simulation under converted probabilities reproduces the gibbs rates") {
    Rng rng(53);
    const int side = 320;
    CostMap c;
    c.rho_plus = Grid(side, side);
    c.rho_minus = Grid(side, side);
    for (std::size_t k = 0; k < c.rho_plus.size(); ++k) {
        const double rho = 0.5 + rng.uniform01() * 3.0;
        c.rho_plus.v[k] = rho;
        c.rho_minus.v[k] = rho;
    }
    const auto p = costs_to_probs(c);
    const auto r = make_noise(side, side, 54);
    const auto m = piecewise_modify(p, r);
    double mu_p = 0.0, var_p = 0.0, mu_m = 0.0, var_m = 0.0;
    for (std::size_t k = 0; k < p.p_plus.size(); ++k) {
        mu_p += p.p_plus.v[k];
        var_p += p.p_plus.v[k] * (1.0 - p.p_plus.v[k]);
        mu_m += p.p_minus.v[k];
        var_m += p.p_minus.v[k] * (1.0 - p.p_minus.v[k]);
    }
    double plus = 0.0, minus = 0.0;
    for (double v : m.m.v) {
        if (v > 0.5) plus += 1.0;
        if (v < -0.5) minus += 1.0;
    }
    CHECK(std::abs(plus - mu_p) < 3.0 * std::sqrt(var_p));
    CHECK(std::abs(minus - mu_m) < 3.0 * std::sqrt(var_m));
}

TEST_CASE("applying modifications reflects at the pixel range edges") {
    ImageGray cover;
    cover.height = 1;
    cover.width = 4;
    cover.pixels = {255, 0, 100, 200};
    ModificationMap m;
    m.m = Grid(1, 4);
    m.m.at(0, 0) = 1.0;   // reflected to -1
    m.m.at(0, 1) = -1.0;  // reflected to +1
    m.m.at(0, 2) = 1.0;
    m.m.at(0, 3) = -1.0;
    const auto stego = apply_modification(cover, m);
    CHECK(stego.pixels[0] == 254);
    CHECK(stego.pixels[1] == 1);
    CHECK(stego.pixels[2] == 101);
    CHECK(stego.pixels[3] == 199);
}
