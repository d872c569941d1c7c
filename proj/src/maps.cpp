#include "gifdl/maps.hpp"

#include <bit>
#include <limits>
#include <cstring>
#include <fstream>

#include "gifdl/errors.hpp"
#include "gifdl/rng.hpp"

namespace gifdl {

namespace {

void put_u32_be(std::string& out, std::uint32_t x) {
    out.push_back(static_cast<char>((x >> 24) & 0xff));
    out.push_back(static_cast<char>((x >> 16) & 0xff));
    out.push_back(static_cast<char>((x >> 8) & 0xff));
    out.push_back(static_cast<char>(x & 0xff));
}

std::uint32_t get_u32_be(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void put_f32_le(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    if constexpr (std::endian::native == std::endian::big) {
        bits = __builtin_bswap32(bits);
    }
    char buf[4];
    std::memcpy(buf, &bits, 4);
    out.append(buf, 4);
}

float get_f32_le(const unsigned char* p) {
    std::uint32_t bits;
    std::memcpy(&bits, p, 4);
    if constexpr (std::endian::native == std::endian::big) {
        bits = __builtin_bswap32(bits);
    }
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

}  // namespace

ProbabilityMap ProbabilityMap::symmetric(Grid total) {
    ProbabilityMap pm;
    pm.p_plus = std::move(total);
    for (auto& x : pm.p_plus.v) x *= 0.5;
    pm.p_minus = pm.p_plus;
    return pm;
}

ProbabilityMap ProbabilityMap::directional(Grid plus, Grid minus) {
    if (!plus.same_shape(minus)) throw ShapeError("probability planes have different shapes");
    ProbabilityMap pm;
    pm.p_plus = std::move(plus);
    pm.p_minus = std::move(minus);
    return pm;
}

NoiseField make_noise(int height, int width, std::uint64_t seed) {
    NoiseField nf;
    nf.rng_seed = seed;
    nf.r = Grid(height, width);
    Rng rng(seed);
    for (auto& x : nf.r.v) x = rng.uniform01();
    return nf;
}

void save_grids(const std::vector<const Grid*>& planes, const std::filesystem::path& path) {
    if (planes.empty()) throw ConfigError("save_grids: no planes");
    const int h = planes[0]->height;
    const int w = planes[0]->width;
    for (const Grid* g : planes) {
        if (g->height != h || g->width != w)
            throw ShapeError("save_grids: plane shapes differ");
    }
    std::string buf;
    buf.reserve(8 + planes.size() * planes[0]->size() * 4);
    put_u32_be(buf, static_cast<std::uint32_t>(h));
    put_u32_be(buf, static_cast<std::uint32_t>(w));
    for (const Grid* g : planes)
        for (double x : g->v) put_f32_le(buf, static_cast<float>(x));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

std::vector<Grid> load_grids(const std::filesystem::path& path, int expected_planes) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 8) throw ParseError(path.string() + ": truncated header");
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
    const std::uint32_t h = get_u32_be(p);
    const std::uint32_t w = get_u32_be(p + 4);
    if (h == 0 || w == 0 || h > (1u << 20) || w > (1u << 20))
        throw ParseError(path.string() + ": implausible dimensions");
    const std::size_t plane_bytes = std::size_t(h) * w * 4;
    const std::size_t want = 8 + plane_bytes * expected_planes;
    if (buf.size() != want)
        throw ParseError(path.string() + ": expected " + std::to_string(want) + " bytes, got " +
                         std::to_string(buf.size()));
    std::vector<Grid> out;
    out.reserve(expected_planes);
    const unsigned char* cur = p + 8;
    for (int k = 0; k < expected_planes; ++k) {
        Grid g(static_cast<int>(h), static_cast<int>(w));
        for (auto& x : g.v) {
            x = static_cast<double>(get_f32_le(cur));
            cur += 4;
        }
        out.push_back(std::move(g));
    }
    return out;
}

void save_probability_map(const ProbabilityMap& pm, const std::filesystem::path& path) {
    Grid total(pm.height(), pm.width());
    for (std::size_t k = 0; k < total.size(); ++k)
        total.v[k] = pm.p_plus.v[k] + pm.p_minus.v[k];
    save_grids({&total}, path);
}

ProbabilityMap load_probability_map(const std::filesystem::path& path) {
    auto planes = load_grids(path, 1);
    return ProbabilityMap::symmetric(std::move(planes[0]));
}

void save_cost_map(const CostMap& cm, const std::filesystem::path& path) {
    if (!cm.rho_plus.same_shape(cm.rho_minus))
        throw ShapeError("cost map planes have different shapes");
    // the f32 container cannot hold the wet sentinel exactly; wet pixels
    // travel as +inf and are restored on load
    Grid plus = cm.rho_plus, minus = cm.rho_minus;
    for (Grid* g : {&plus, &minus})
        for (auto& x : g->v)
            if (is_wet(x)) x = std::numeric_limits<double>::infinity();
    save_grids({&plus, &minus}, path);
}

CostMap load_cost_map(const std::filesystem::path& path) {
    auto planes = load_grids(path, 2);
    for (Grid& g : planes)
        for (auto& x : g.v)
            if (is_wet(x)) x = kWetCost;
    CostMap cm;
    cm.rho_plus = std::move(planes[0]);
    cm.rho_minus = std::move(planes[1]);
    return cm;
}

}  // namespace gifdl
