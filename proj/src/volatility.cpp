#include "gifdl/volatility.hpp"

#include <cmath>
#include <numbers>

#include "gifdl/errors.hpp"

namespace gifdl {
namespace {

// log of the Gaussian mass on [v - 0.5, v + 0.5], stable far into the tails
// where the erf difference would cancel or underflow to zero.
double log_bin_prob(double v, double mu, double sigma) {
    const double inv = 1.0 / (sigma * std::numbers::sqrt2);
    double a = (v - 0.5 - mu) * inv;
    double b = (v + 0.5 - mu) * inv;
    if (b < 0.0) {
        double t = a;
        a = -b;
        b = -t;
    }
    if (a < 0.0) {
        // bin straddles the mean, no cancellation possible
        return std::log(0.5 * (std::erf(b) - std::erf(a)));
    }
    double p = 0.5 * (std::erfc(a) - std::erfc(b));
    if (p > 0.0) {
        double lp = std::log(p);
        if (std::isfinite(lp)) return lp;
    }
    // erfc underflowed: leading asymptotic term of log erfc(a) - log 2,
    // the near edge of the bin dominates the mass
    return -a * a - std::log(a * std::sqrt(std::numbers::pi)) - std::numbers::ln2;
}

}  // namespace

VolatilityCost estimate_volatility_cost(const FluctuationSet& fset, double sigma_min) {
    if (fset.fluctuations.size() < 2)
        throw ConfigError("volatility fit needs at least 2 fluctuations, got " +
                          std::to_string(fset.fluctuations.size()));
    if (!(sigma_min > 0.0)) throw ConfigError("sigma_min must be positive");
    for (const auto& f : fset.fluctuations)
        if (!f.same_shape(fset.cover))
            throw ShapeError("fluctuation stack is not uniformly sized");

    const int h = fset.cover.height, w = fset.cover.width;
    const double n = static_cast<double>(fset.fluctuations.size()) + 1.0;
    VolatilityCost out;
    out.rho_plus = Grid(h, w);
    out.rho_minus = Grid(h, w);
    out.mu = Grid(h, w);
    out.sigma = Grid(h, w);

    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            const double c = static_cast<double>(fset.cover.at(i, j));
            double sum = c;
            for (const auto& f : fset.fluctuations) sum += static_cast<double>(f.at(i, j));
            const double mu = sum / n;
            double ss = (c - mu) * (c - mu);
            for (const auto& f : fset.fluctuations) {
                double d = static_cast<double>(f.at(i, j)) - mu;
                ss += d * d;
            }
            const double sigma = std::sqrt(ss / (n - 1.0));
            out.mu.at(i, j) = mu;
            out.sigma.at(i, j) = sigma;
            if (sigma < sigma_min) {
                out.rho_plus.at(i, j) = kWetCost;
                out.rho_minus.at(i, j) = kWetCost;
                continue;
            }
            const double lp_c = log_bin_prob(c, mu, sigma);
            out.rho_plus.at(i, j) = std::max(0.0, lp_c - log_bin_prob(c + 1.0, mu, sigma));
            out.rho_minus.at(i, j) = std::max(0.0, lp_c - log_bin_prob(c - 1.0, mu, sigma));
        }
    }
    return out;
}

double vc_alpha(const CostMap& rho_o, const VolatilityCost& rho_v) {
    if (!rho_o.rho_plus.same_shape(rho_v.rho_plus))
        throw ShapeError("cost maps differ in size");
    double sum_v = 0.0, sum_o = 0.0;
    std::size_t n_v = 0, n_o = 0;
    for (std::size_t k = 0; k < rho_v.rho_plus.v.size(); ++k) {
        for (const Grid* g : {&rho_v.rho_plus, &rho_v.rho_minus}) {
            if (!is_wet(g->v[k])) {
                sum_v += g->v[k];
                ++n_v;
            }
        }
        for (const Grid* g : {&rho_o.rho_plus, &rho_o.rho_minus}) {
            if (!is_wet(g->v[k])) {
                sum_o += g->v[k];
                ++n_o;
            }
        }
    }
    if (n_v == 0) throw DomainError("volatility cost is fully wet, cannot scale");
    if (n_o == 0) throw DomainError("learned cost is fully wet, cannot scale");
    if (!(sum_o > 0.0))
        throw DomainError("learned cost mean is zero, scaling factor undefined");
    return (sum_v / static_cast<double>(n_v)) / (sum_o / static_cast<double>(n_o));
}

CostMap combine_costs(const CostMap& rho_o, const VolatilityCost& rho_v,
                      const CombineConfig& cfg, double* alpha_out) {
    if (cfg.vc_beta < 0.0 || cfg.vc_beta > 1.0)
        throw ConfigError("vc_beta must lie in [0,1], got " + std::to_string(cfg.vc_beta));
    const double alpha = vc_alpha(rho_o, rho_v);
    if (alpha_out) *alpha_out = alpha;

    const int h = rho_v.height(), w = rho_v.width();
    CostMap out;
    out.rho_plus = Grid(h, w);
    out.rho_minus = Grid(h, w);
    auto blend = [&](const Grid& v, const Grid& o, Grid& dst) {
        for (std::size_t k = 0; k < dst.v.size(); ++k) {
            if (is_wet(v.v[k]) || is_wet(o.v[k]))
                dst.v[k] = kWetCost;
            else
                dst.v[k] = cfg.vc_beta * v.v[k] + (1.0 - cfg.vc_beta) * alpha * o.v[k];
        }
    };
    blend(rho_v.rho_plus, rho_o.rho_plus, out.rho_plus);
    blend(rho_v.rho_minus, rho_o.rho_minus, out.rho_minus);
    return out;
}

}  // namespace gifdl
