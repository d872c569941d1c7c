#pragma once

#include <cstdint>
#include <vector>

#include "gifdl/image.hpp"
#include "gifdl/maps.hpp"

namespace gifdl {

// Discrete simulated embedding: m = -1 iff r < p_minus, +1 iff r > 1 - p_plus,
// otherwise 0. Threshold ties land on the 0 branch.
ModificationMap piecewise_modify(const ProbabilityMap& p, const NoiseField& r);

// Smooth surrogate m = tanh(g*(p_plus - (1-r)))/2 - tanh(g*(p_minus - r))/2,
// oriented to agree with piecewise_modify (small r drives m toward -1).
// Values lie in [-1,1] (the closed ends only under tanh saturation);
// approaches the discrete map as gamma grows; differentiable in p.
ModificationMap double_tanh_modify(const ProbabilityMap& p, const NoiseField& r,
                                   double gamma = 60.0);

struct DoubleTanhGrad {
    ModificationMap m;
    Grid dm_dp_plus;
    Grid dm_dp_minus;
};

DoubleTanhGrad double_tanh_modify_with_grad(const ProbabilityMap& p, const NoiseField& r,
                                            double gamma = 60.0);

// rho_pm = ln(1/p_pm - 2); requires p_pm in (0, 0.5) per direction.
CostMap probs_to_costs(const ProbabilityMap& p);

// Ternary Gibbs inverse: p(m) proportional to exp(-rho(m)) with rho(0) = 0.
// Wet directions get probability 0.
ProbabilityMap costs_to_probs(const CostMap& c);

// Stego = cover + m with saturation handled by reflection: a +1 at 255 is
// applied as -1 and vice versa at 0. Discrete maps only.
ImageGray apply_modification(const ImageGray& cover, const ModificationMap& m);

}  // namespace gifdl
