#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "gifdl/image.hpp"
#include "gifdl/maps.hpp"
#include "gifdl/nn.hpp"

namespace gifdl {

struct GeneratorConfig {
    int down_blocks = 8;
    int up_blocks = 7;
    int base_channels = 16;
    int channel_cap = 128;
    double leaky_slope = 0.2;
    double prob_floor = 1e-6;

    void validate() const;  // down + up == 15, prob_floor in (0, 0.01], ...
    std::string to_json() const;
    static GeneratorConfig from_json(const std::string& json);
};

// Skip wiring: outputs of blocks `from_a` and `from_b` are concatenated and
// fed into block `into`.
struct SkipConnection {
    int from_a;
    int from_b;
    int into;
};

// For 1 <= i <= up_blocks: (i, 16-i) -> 17-i.
SkipConnection skip_topology(int i);

// Cover -> per-pixel total modification probability. Eight stride-2 blocks
// down, seven upsample blocks back, one stride-2 deconvolution to full
// resolution, sigmoid squeezed into [prob_floor, 1 - prob_floor]. Every block
// is two 3x3 convs, each with batch norm and LeakyReLU. Odd inputs are
// reflect-padded to even and cropped back; the down path's ceil-division
// handles all other sizes, bottoming out at 1x1.
class UNetGenerator {
public:
    UNetGenerator(const GeneratorConfig& cfg, std::uint64_t seed);

    // Normalizes to [0,1], runs the net, splits p symmetrically.
    ProbabilityMap forward(const ImageGray& cover);

    // d(loss)/d(total p) for the map returned by the last forward call;
    // accumulates parameter gradients.
    void backward(const Grid& dtotal);

    std::vector<ParamBlock> params();        // trainable
    std::vector<ParamBlock> state_blocks();  // trainable + BN running stats
    void set_training(bool on);
    const GeneratorConfig& config() const { return cfg_; }

    void save(const std::filesystem::path& path) const;
    static UNetGenerator load(const std::filesystem::path& path);

private:
    struct ConvBlock {
        Conv2d conv1;
        BatchNorm2d bn1;
        LeakyReLU act1;
        Conv2d conv2;
        BatchNorm2d bn2;
        LeakyReLU act2;

        ConvBlock(int in_ch, int out_ch, int stride1, double slope);
        Tensor forward(const Tensor& x);
        Tensor backward(const Tensor& dout);
    };

    Tensor forward_net(const Tensor& x);
    Tensor backward_net(const Tensor& dout);

    GeneratorConfig cfg_;
    std::vector<std::unique_ptr<ConvBlock>> down_;
    std::vector<std::unique_ptr<ConvBlock>> up_;
    std::vector<UpsampleNearest> upsample_;
    ConvTranspose2d deconv_;
    ScaledSigmoid head_;

    std::vector<Tensor> down_out_;  // cached for skips and upsample targets
    std::vector<int> down_h_, down_w_;
    int in_h_ = 0, in_w_ = 0;      // original cover size
    int pad_h_ = 0, pad_w_ = 0;    // network size after even padding
};

}  // namespace gifdl
