#include "gifdl/stc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gifdl/errors.hpp"
#include "gifdl/rng.hpp"

namespace gifdl {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void validate(const StcParams& params) {
    if (params.h < 2 || params.h > 12)
        throw ConfigError("stc constraint height must be in [2, 12], got " +
                          std::to_string(params.h));
    if (!(params.payload_q > 0.0 && params.payload_q < 1.0))
        throw ConfigError("stc payload must be in (0, 1), got " +
                          std::to_string(params.payload_q));
}

// Column range of message block b when n pixels carry m bits.
std::size_t block_start(std::size_t b, std::size_t n, std::size_t m) {
    return b * n / m;
}

std::uint32_t row_mask(std::size_t b, std::size_t m, int h) {
    const std::size_t rows_left = m - b;
    if (rows_left >= static_cast<std::size_t>(h)) return (1u << h) - 1u;
    return (1u << rows_left) - 1u;
}

// Cheapest feasible ±1 flip at a pixel: saturated values have one direction,
// interior pixels take the cheaper non-wet one. Infinity marks a wet pixel.
double flip_cost(std::uint8_t px, double rho_plus, double rho_minus) {
    const bool plus_ok = px < 255 && !is_wet(rho_plus);
    const bool minus_ok = px > 0 && !is_wet(rho_minus);
    if (plus_ok && minus_ok) return std::min(rho_plus, rho_minus);
    if (plus_ok) return rho_plus;
    if (minus_ok) return rho_minus;
    return kInf;
}

}  // namespace

std::size_t stc_message_length(const StcParams& params, std::size_t n_pixels) {
    validate(params);
    return static_cast<std::size_t>(params.payload_q * double(n_pixels));
}

std::vector<std::uint32_t> stc_submatrix(const StcParams& params, std::size_t n_pixels) {
    validate(params);
    const std::size_t m = stc_message_length(params, n_pixels);
    if (m == 0) return {};
    const std::size_t w_max = (n_pixels + m - 1) / m;
    Rng rng(derive_seed(fnv1a64("stc.submatrix"),
                        (std::uint64_t(params.h) << 32) ^ std::uint64_t(w_max)));
    std::vector<std::uint32_t> cols;
    cols.reserve(w_max);
    // Top row all ones so every column can satisfy its own block's bit;
    // remaining rows pseudo-random, distinct while the state space allows.
    for (std::size_t c = 0; c < w_max; ++c) {
        std::uint32_t pat = 1;
        for (int attempt = 0; attempt < 128; ++attempt) {
            std::uint32_t bits = 0;
            for (int k = 1; k < params.h; ++k)
                bits |= static_cast<std::uint32_t>(rng.uniform_int(0, 1)) << k;
            pat = 1u | bits;
            if (std::find(cols.begin(), cols.end(), pat) == cols.end()) break;
        }
        cols.push_back(pat);
    }
    return cols;
}

std::vector<std::uint8_t> stc_syndrome(const std::vector<std::uint8_t>& lsb_word,
                                       const StcParams& params) {
    validate(params);
    const std::size_t n = lsb_word.size();
    const std::size_t m = stc_message_length(params, n);
    std::vector<std::uint8_t> out(m, 0);
    if (m == 0) return out;
    const auto sub = stc_submatrix(params, n);
    std::uint32_t acc = 0;
    for (std::size_t b = 0; b < m; ++b) {
        const std::size_t lo = block_start(b, n, m);
        const std::size_t hi = block_start(b + 1, n, m);
        const std::uint32_t mask = row_mask(b, m, params.h);
        for (std::size_t j = lo; j < hi; ++j) {
            if (lsb_word[j] & 1) acc ^= sub[j - lo] & mask;
        }
        out[b] = static_cast<std::uint8_t>(acc & 1);
        acc >>= 1;
    }
    return out;
}

ImageGray stc_embed(const ImageGray& cover, const CostMap& costs,
                    const std::vector<std::uint8_t>& message, const StcParams& params) {
    validate(params);
    if (cover.height != costs.height() || cover.width != costs.width())
        throw ShapeError("cover and cost map shapes differ");
    const std::size_t n = cover.pixels.size();
    const std::size_t m = stc_message_length(params, n);
    if (message.size() > m)
        throw PayloadError("message of " + std::to_string(message.size()) +
                           " bits exceeds capacity of " + std::to_string(m) + " bits");
    if (m == 0) return cover;

    std::vector<std::uint8_t> msg(m, 0);
    std::copy(message.begin(), message.end(), msg.begin());

    std::vector<double> fc(n);
    for (std::size_t j = 0; j < n; ++j)
        fc[j] = flip_cost(cover.pixels[j], costs.rho_plus.v[j], costs.rho_minus.v[j]);

    const auto sub = stc_submatrix(params, n);
    const std::uint32_t states = 1u << params.h;
    const std::size_t words_per_col = std::max<std::size_t>(1, states / 64);

    std::vector<double> cost(states, kInf), next(states, kInf);
    cost[0] = 0.0;
    std::vector<std::uint64_t> decisions(n * words_per_col, 0);

    for (std::size_t b = 0; b < m; ++b) {
        const std::size_t lo = block_start(b, n, m);
        const std::size_t hi = block_start(b + 1, n, m);
        const std::uint32_t mask = row_mask(b, m, params.h);
        for (std::size_t j = lo; j < hi; ++j) {
            const std::uint32_t pat = sub[j - lo] & mask;
            const int cover_lsb = cover.pixels[j] & 1;
            const double keep0 = cover_lsb == 0 ? 0.0 : fc[j];
            const double keep1 = cover_lsb == 1 ? 0.0 : fc[j];
            std::uint64_t* dec = &decisions[j * words_per_col];
            for (std::uint32_t s = 0; s < states; ++s) {
                const double c0 = cost[s] + keep0;
                const double c1 = cost[s ^ pat] + keep1;
                // Ties keep the cover LSB so zero-cost paths never flip.
                bool pick1;
                if (c1 < c0)
                    pick1 = true;
                else if (c0 < c1)
                    pick1 = false;
                else
                    pick1 = cover_lsb == 1;
                next[s] = pick1 ? c1 : c0;
                if (pick1) dec[s >> 6] |= std::uint64_t(1) << (s & 63);
            }
            std::swap(cost, next);
        }
        // Constrain the low state bit to the message bit, then retire it.
        const int bit = msg[b];
        bool alive = false;
        for (std::uint32_t t = 0; t < states / 2; ++t) {
            next[t] = cost[(t << 1) | static_cast<std::uint32_t>(bit)];
            if (next[t] < kInf) alive = true;
        }
        for (std::uint32_t t = states / 2; t < states; ++t) next[t] = kInf;
        if (!alive)
            throw InfeasibleError("message bit " + std::to_string(b) +
                                  " cannot be satisfied; wet pixels cover its block");
        std::swap(cost, next);
    }
    if (!(cost[0] < kInf)) throw InfeasibleError("no feasible embedding path");

    // Walk the trellis backwards to recover the chosen LSB word.
    std::vector<std::uint8_t> y(n, 0);
    std::uint32_t s = 0;
    for (std::size_t bi = m; bi-- > 0;) {
        s = (s << 1) | static_cast<std::uint32_t>(msg[bi]);
        const std::size_t lo = block_start(bi, n, m);
        const std::size_t hi = block_start(bi + 1, n, m);
        const std::uint32_t mask = row_mask(bi, m, params.h);
        for (std::size_t j = hi; j-- > lo;) {
            const std::uint64_t* dec = &decisions[j * words_per_col];
            const int yj = static_cast<int>((dec[s >> 6] >> (s & 63)) & 1);
            y[j] = static_cast<std::uint8_t>(yj);
            if (yj) s ^= sub[j - lo] & mask;
        }
    }

    ImageGray stego = cover;
    for (std::size_t j = 0; j < n; ++j) {
        if (y[j] == (cover.pixels[j] & 1)) continue;
        const std::uint8_t px = cover.pixels[j];
        int delta;
        if (px == 255)
            delta = -1;
        else if (px == 0)
            delta = 1;
        else if (is_wet(costs.rho_plus.v[j]))
            delta = -1;
        else if (is_wet(costs.rho_minus.v[j]))
            delta = 1;
        else if (costs.rho_plus.v[j] < costs.rho_minus.v[j])
            delta = 1;
        else if (costs.rho_minus.v[j] < costs.rho_plus.v[j])
            delta = -1;
        else
            // equal costs are the norm under symmetric maps; a fixed choice
            // would stamp a one-sided mean shift onto every stego. Either
            // sign satisfies the syndrome, so split ties by position hash.
            delta = (derive_seed(static_cast<std::uint64_t>(j), "stc.tie") & 1) ? 1 : -1;
        stego.pixels[j] = static_cast<std::uint8_t>(px + delta);
    }
    return stego;
}

std::vector<std::uint8_t> stc_extract(const ImageGray& stego, const StcParams& params) {
    std::vector<std::uint8_t> lsb(stego.pixels.size());
    for (std::size_t j = 0; j < lsb.size(); ++j) lsb[j] = stego.pixels[j] & 1;
    return stc_syndrome(lsb, params);
}

}  // namespace gifdl
