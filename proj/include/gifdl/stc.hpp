#pragma once

#include <cstdint>
#include <vector>

#include "gifdl/image.hpp"
#include "gifdl/maps.hpp"

namespace gifdl {

// Syndrome-trellis codec parameters. h is the constraint height (trellis has
// 2^h states); payload_q fixes the message length at floor(payload_q * n)
// bits for an n-pixel image. The parity-check submatrix is derived
// deterministically from (h, n, message length), so embedder and extractor
// reconstruct it independently.
struct StcParams {
    int h = 7;
    double payload_q = 0.4;
};

std::size_t stc_message_length(const StcParams& params, std::size_t n_pixels);

// Syndrome of an LSB word under the tiled parity-check matrix. Word length
// selects the matrix; returns floor(payload_q * n) bits.
std::vector<std::uint8_t> stc_syndrome(const std::vector<std::uint8_t>& lsb_word,
                                       const StcParams& params);

// Embeds message bits by flipping cover LSBs along the minimum-cost trellis
// path, then applies each flip as the cheaper of +1/-1 under the cost map
// (saturated pixels take the only feasible direction; exact cost ties split
// deterministically by position so symmetric maps stay sign-balanced).
// Messages shorter than
// floor(payload_q * n) are zero-padded; longer ones raise a payload error.
// Wet pixels (both directions at the wet sentinel) are never modified; a
// message bit that only wet pixels could satisfy raises an infeasibility
// error.
ImageGray stc_embed(const ImageGray& cover, const CostMap& costs,
                    const std::vector<std::uint8_t>& message, const StcParams& params);

// Recovers the embedded bits from the stego LSB plane. Inverse of stc_embed
// modulo zero padding; parameter mismatch silently yields garbage.
std::vector<std::uint8_t> stc_extract(const ImageGray& stego, const StcParams& params);

// Column patterns of the submatrix used for a given message/cover size, low
// bit = topmost row. Exposed so tests can realize the full parity-check
// matrix.
std::vector<std::uint32_t> stc_submatrix(const StcParams& params, std::size_t n_pixels);

}  // namespace gifdl
