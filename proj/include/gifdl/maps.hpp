#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace gifdl {

// Dense H×W double grid backing the per-pixel map types.
struct Grid {
    int height = 0;
    int width = 0;
    std::vector<double> v;

    Grid() = default;
    Grid(int h, int w, double fill = 0.0)
        : height(h), width(w), v(static_cast<std::size_t>(h) * w, fill) {}

    double& at(int i, int j) { return v[static_cast<std::size_t>(i) * width + j]; }
    double at(int i, int j) const { return v[static_cast<std::size_t>(i) * width + j]; }
    std::size_t size() const { return v.size(); }
    bool same_shape(const Grid& o) const { return height == o.height && width == o.width; }
};

// Per-pixel modification probabilities, stored per direction. Maps produced
// by the generator are symmetric (p_plus = p_minus = p/2 exactly); maps
// recovered from asymmetric cost maps may split unevenly. Wet pixels carry 0.
struct ProbabilityMap {
    Grid p_plus;
    Grid p_minus;

    static ProbabilityMap symmetric(Grid total);
    static ProbabilityMap directional(Grid plus, Grid minus);

    double total(int i, int j) const { return p_plus.at(i, j) + p_minus.at(i, j); }
    int height() const { return p_plus.height; }
    int width() const { return p_plus.width; }
};

// Per-direction ternary embedding costs; rho(0) is identically zero.
// Wet pixels carry kWetCost (treated as infinite by the codec).
struct CostMap {
    Grid rho_plus;
    Grid rho_minus;

    int height() const { return rho_plus.height; }
    int width() const { return rho_plus.width; }
};

inline constexpr double kWetCost = 1e13;

inline bool is_wet(double rho) { return !(rho < kWetCost); }

// Simulated per-pixel change. Discrete values live in {-1,0,+1}; the
// continuous double-tanh variant lies in (-1,1).
struct ModificationMap {
    Grid m;

    int height() const { return m.height; }
    int width() const { return m.width; }
};

// I.i.d. uniform [0,1) noise, reproducible from its seed.
struct NoiseField {
    Grid r;
    std::uint64_t rng_seed = 0;

    int height() const { return r.height; }
    int width() const { return r.width; }
};

NoiseField make_noise(int height, int width, std::uint64_t seed);

// Binary grid container: 8-byte header (H, W as big-endian u32) followed by
// row-major float32 planes. Probability maps hold one plane (total p,
// symmetric split); cost maps hold two (rho_plus then rho_minus).
void save_grids(const std::vector<const Grid*>& planes, const std::filesystem::path& path);
std::vector<Grid> load_grids(const std::filesystem::path& path, int expected_planes);

void save_probability_map(const ProbabilityMap& p, const std::filesystem::path& path);
ProbabilityMap load_probability_map(const std::filesystem::path& path);

void save_cost_map(const CostMap& c, const std::filesystem::path& path);
CostMap load_cost_map(const std::filesystem::path& path);

}  // namespace gifdl
