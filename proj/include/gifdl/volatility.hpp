#pragma once

#include "gifdl/dataset.hpp"
#include "gifdl/maps.hpp"

namespace gifdl {

// Per-pixel costs derived from how much a pixel moves across a fluctuation
// stack. Wet pixels (fit too tight to trust, sigma below the threshold)
// carry kWetCost in both directions. mu and sigma keep the fitted Gaussian
// for inspection.
struct VolatilityCost {
    Grid rho_plus;
    Grid rho_minus;
    Grid mu;
    Grid sigma;

    int height() const { return rho_plus.height; }
    int width() const { return rho_plus.width; }
    bool wet(int i, int j) const { return is_wet(rho_plus.at(i, j)); }
};

// Fits a per-pixel Gaussian over the stack (cover plus all fluctuations,
// unbiased std) and prices a +-1 change by how much less likely the moved
// value is than the cover value under that fit:
//   cost(+-1) = max(0, ln p(c) - ln p(c +- 1)),
// with p integrating the fit over the value's unit-wide bin. Pixels with
// sigma below sigma_min are wet. Needs at least two fluctuations.
VolatilityCost estimate_volatility_cost(const FluctuationSet& fset,
                                        double sigma_min = 0.1);

struct CombineConfig {
    double vc_beta = 0.15;  // weight on the volatility side, in [0,1]
};

// Ratio of non-wet means used to bring rho_o onto the volatility scale.
// Throws when either side is all wet or rho_o's mean is zero.
double vc_alpha(const CostMap& rho_o, const VolatilityCost& rho_v);

// rho_c = vc_beta * rho_v + (1 - vc_beta) * vc_alpha * rho_o per direction;
// a pixel wet on either side stays wet. Writes the computed scaling factor
// to *alpha_out when given.
CostMap combine_costs(const CostMap& rho_o, const VolatilityCost& rho_v,
                      const CombineConfig& cfg, double* alpha_out = nullptr);

}  // namespace gifdl
