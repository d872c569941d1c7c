#include "gifdl/embedding.hpp"

#include <cmath>
#include <string>

#include "gifdl/errors.hpp"

namespace gifdl {

namespace {

void check_shapes(const ProbabilityMap& p, const NoiseField& r) {
    if (p.height() != r.height() || p.width() != r.width())
        throw ShapeError("probability map " + std::to_string(p.height()) + "x" +
                         std::to_string(p.width()) + " vs noise " + std::to_string(r.height()) +
                         "x" + std::to_string(r.width()));
}

}  // namespace

ModificationMap piecewise_modify(const ProbabilityMap& p, const NoiseField& r) {
    check_shapes(p, r);
    ModificationMap out;
    out.m = Grid(p.height(), p.width());
    for (std::size_t k = 0; k < out.m.size(); ++k) {
        const double rv = r.r.v[k];
        if (rv < p.p_minus.v[k])
            out.m.v[k] = -1.0;
        else if (rv > 1.0 - p.p_plus.v[k])
            out.m.v[k] = 1.0;
        else
            out.m.v[k] = 0.0;
    }
    return out;
}

ModificationMap double_tanh_modify(const ProbabilityMap& p, const NoiseField& r, double gamma) {
    if (!(gamma > 0.0)) throw DomainError("gamma must be positive");
    check_shapes(p, r);
    ModificationMap out;
    out.m = Grid(p.height(), p.width());
    for (std::size_t k = 0; k < out.m.size(); ++k) {
        const double rv = r.r.v[k];
        out.m.v[k] = 0.5 * std::tanh(gamma * (p.p_plus.v[k] - (1.0 - rv))) -
                     0.5 * std::tanh(gamma * (p.p_minus.v[k] - rv));
    }
    return out;
}

DoubleTanhGrad double_tanh_modify_with_grad(const ProbabilityMap& p, const NoiseField& r,
                                            double gamma) {
    if (!(gamma > 0.0)) throw DomainError("gamma must be positive");
    check_shapes(p, r);
    DoubleTanhGrad out;
    out.m.m = Grid(p.height(), p.width());
    out.dm_dp_plus = Grid(p.height(), p.width());
    out.dm_dp_minus = Grid(p.height(), p.width());
    for (std::size_t k = 0; k < out.m.m.size(); ++k) {
        const double rv = r.r.v[k];
        const double tp = std::tanh(gamma * (p.p_plus.v[k] - (1.0 - rv)));
        const double tm = std::tanh(gamma * (p.p_minus.v[k] - rv));
        out.m.m.v[k] = 0.5 * tp - 0.5 * tm;
        out.dm_dp_plus.v[k] = 0.5 * gamma * (1.0 - tp * tp);
        out.dm_dp_minus.v[k] = -0.5 * gamma * (1.0 - tm * tm);
    }
    return out;
}

CostMap probs_to_costs(const ProbabilityMap& p) {
    CostMap out;
    out.rho_plus = Grid(p.height(), p.width());
    out.rho_minus = Grid(p.height(), p.width());
    auto convert = [](double prob, const char* which) {
        if (!(prob > 0.0 && prob < 0.5))
            throw DomainError(std::string(which) + " probability " + std::to_string(prob) +
                              " outside (0, 0.5); cost undefined");
        return std::log(1.0 / prob - 2.0);
    };
    for (std::size_t k = 0; k < out.rho_plus.size(); ++k) {
        out.rho_plus.v[k] = convert(p.p_plus.v[k], "plus");
        out.rho_minus.v[k] = convert(p.p_minus.v[k], "minus");
    }
    return out;
}

ProbabilityMap costs_to_probs(const CostMap& c) {
    if (!c.rho_plus.same_shape(c.rho_minus)) throw ShapeError("cost map planes differ in shape");
    Grid plus(c.height(), c.width());
    Grid minus(c.height(), c.width());
    for (std::size_t k = 0; k < plus.size(); ++k) {
        const double wp = is_wet(c.rho_plus.v[k]) ? 0.0 : std::exp(-c.rho_plus.v[k]);
        const double wm = is_wet(c.rho_minus.v[k]) ? 0.0 : std::exp(-c.rho_minus.v[k]);
        const double z = wp + wm + 1.0;
        plus.v[k] = wp / z;
        minus.v[k] = wm / z;
    }
    return ProbabilityMap::directional(std::move(plus), std::move(minus));
}

ImageGray apply_modification(const ImageGray& cover, const ModificationMap& m) {
    if (cover.height != m.height() || cover.width != m.width())
        throw ShapeError("cover and modification map shapes differ");
    ImageGray out = cover;
    for (std::size_t k = 0; k < out.pixels.size(); ++k) {
        const double mv = m.m.v[k];
        int delta;
        if (mv > 0.5)
            delta = 1;
        else if (mv < -0.5)
            delta = -1;
        else
            delta = 0;
        if (delta == 0) continue;
        int px = out.pixels[k];
        if (px + delta > 255 || px + delta < 0) delta = -delta;
        out.pixels[k] = static_cast<std::uint8_t>(px + delta);
    }
    return out;
}

}  // namespace gifdl
