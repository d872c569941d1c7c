#include "gifdl/unet.hpp"

#include <algorithm>
#include <string>
#include <utility>

#include "json.hpp"

#include "gifdl/errors.hpp"

namespace gifdl {
namespace {

int block_channels(const GeneratorConfig& cfg, int i) {
    // Width of down block i (1-based): doubles from base, then saturates.
    long long c = cfg.base_channels;
    for (int s = 1; s < i && c < cfg.channel_cap; ++s) c *= 2;
    return static_cast<int>(std::min<long long>(c, cfg.channel_cap));
}

void add_into(Tensor& acc, const Tensor& t) {
    if (!acc.same_shape(t))
        throw ShapeError("gradient accumulation shape mismatch: " + acc.shape_str() +
                         " vs " + t.shape_str());
    for (std::size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += t.v[i];
}

}  // namespace

void GeneratorConfig::validate() const {
    if (down_blocks != 8 || up_blocks != 7)
        throw ConfigError("generator topology must be 8 down + 7 up blocks, got " +
                          std::to_string(down_blocks) + "+" + std::to_string(up_blocks));
    if (base_channels < 1 || channel_cap < base_channels)
        throw ConfigError("generator channels invalid: base " +
                          std::to_string(base_channels) + ", cap " +
                          std::to_string(channel_cap));
    if (!(leaky_slope > 0.0) || !(leaky_slope < 1.0))
        throw ConfigError("leaky_slope must lie in (0,1)");
    if (!(prob_floor > 0.0) || !(prob_floor <= 0.01))
        throw ConfigError("prob_floor must lie in (0, 0.01]");
}

std::string GeneratorConfig::to_json() const {
    nlohmann::json j;
    j["down_blocks"] = down_blocks;
    j["up_blocks"] = up_blocks;
    j["base_channels"] = base_channels;
    j["channel_cap"] = channel_cap;
    j["leaky_slope"] = leaky_slope;
    j["prob_floor"] = prob_floor;
    return j.dump();
}

GeneratorConfig GeneratorConfig::from_json(const std::string& json) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("generator config: ") + e.what());
    }
    GeneratorConfig cfg;
    cfg.down_blocks = j.value("down_blocks", cfg.down_blocks);
    cfg.up_blocks = j.value("up_blocks", cfg.up_blocks);
    cfg.base_channels = j.value("base_channels", cfg.base_channels);
    cfg.channel_cap = j.value("channel_cap", cfg.channel_cap);
    cfg.leaky_slope = j.value("leaky_slope", cfg.leaky_slope);
    cfg.prob_floor = j.value("prob_floor", cfg.prob_floor);
    cfg.validate();
    return cfg;
}

SkipConnection skip_topology(int i) {
    if (i < 1 || i > 7)
        throw DomainError("skip index must lie in [1,7], got " + std::to_string(i));
    return SkipConnection{i, 16 - i, 17 - i};
}

UNetGenerator::ConvBlock::ConvBlock(int in_ch, int out_ch, int stride1, double slope)
    : conv1(in_ch, out_ch, 3, stride1, 1, false),
      bn1(out_ch),
      act1(slope),
      conv2(out_ch, out_ch, 3, 1, 1, false),
      bn2(out_ch),
      act2(slope) {}

Tensor UNetGenerator::ConvBlock::forward(const Tensor& x) {
    Tensor t = act1.forward(bn1.forward(conv1.forward(x)));
    return act2.forward(bn2.forward(conv2.forward(t)));
}

Tensor UNetGenerator::ConvBlock::backward(const Tensor& dout) {
    Tensor d = conv2.backward(bn2.backward(act2.backward(dout)));
    return conv1.backward(bn1.backward(act1.backward(d)));
}

UNetGenerator::UNetGenerator(const GeneratorConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      deconv_(cfg.base_channels * 2, 1, 4, 2, 1, true),
      head_(cfg.prob_floor) {
    cfg_.validate();
    Rng rng(derive_seed(seed, "unet.init"));

    int prev = 1;
    for (int i = 1; i <= cfg_.down_blocks; ++i) {
        int ch = block_channels(cfg_, i);
        down_.push_back(std::make_unique<ConvBlock>(prev, ch, 2, cfg_.leaky_slope));
        prev = ch;
    }
    // Up block j (9..15) mirrors down block 16-j in width; from block 10 on,
    // its input is the previous up output concatenated with the skip from
    // block 17-j.
    for (int j = 9; j <= 15; ++j) {
        int out_ch = block_channels(cfg_, 16 - j);
        int in_ch = (j == 9) ? block_channels(cfg_, 8)
                             : block_channels(cfg_, 17 - j) + block_channels(cfg_, 16 - (j - 1));
        up_.push_back(std::make_unique<ConvBlock>(in_ch, out_ch, 1, cfg_.leaky_slope));
        upsample_.emplace_back();
    }

    for (auto& b : down_) {
        b->conv1.init(rng);
        b->conv2.init(rng);
    }
    for (auto& b : up_) {
        b->conv1.init(rng);
        b->conv2.init(rng);
    }
    deconv_.init(rng);
}

Tensor UNetGenerator::forward_net(const Tensor& x) {
    down_out_.clear();
    down_h_.clear();
    down_w_.clear();

    Tensor cur = x;
    for (int i = 0; i < cfg_.down_blocks; ++i) {
        cur = down_[i]->forward(cur);
        check_finite(cur, "down" + std::to_string(i + 1));
        down_out_.push_back(cur);
        down_h_.push_back(cur.h);
        down_w_.push_back(cur.w);
    }

    Tensor u = cur;
    for (int block = 9; block <= 15; ++block) {
        int k = block - 9;
        Tensor in = (block == 9) ? u : concat_channels(down_out_[16 - block], u);
        // Output must align with the skip it pairs with further up.
        int th = down_h_[15 - block];
        int tw = down_w_[15 - block];
        u = up_[k]->forward(upsample_[k].forward(in, th, tw));
        check_finite(u, "up" + std::to_string(block));
    }

    Tensor out = head_.forward(deconv_.forward(concat_channels(down_out_[0], u)));
    check_finite(out, "head");
    return out;
}

Tensor UNetGenerator::backward_net(const Tensor& dout) {
    Tensor dcat = deconv_.backward(head_.backward(dout));
    std::vector<Tensor> dskip;
    for (int i = 0; i < 7; ++i)
        dskip.emplace_back(1, down_out_[i].c, down_h_[i], down_w_[i], 0.0);

    Tensor du;
    split_channels(dcat, down_out_[0].c, dskip[0], du);

    for (int block = 15; block >= 9; --block) {
        int k = block - 9;
        Tensor din = upsample_[k].backward(up_[k]->backward(du));
        if (block == 9) {
            du = std::move(din);
        } else {
            int skip_c = down_out_[16 - block].c;
            Tensor dsk, dprev;
            split_channels(din, skip_c, dsk, dprev);
            add_into(dskip[16 - block], dsk);
            du = std::move(dprev);
        }
    }

    Tensor g = std::move(du);  // d/d down_out[7]
    for (int i = cfg_.down_blocks - 1; i >= 1; --i) {
        Tensor gin = down_[i]->backward(g);
        add_into(gin, dskip[i - 1]);
        g = std::move(gin);
    }
    return down_[0]->backward(g);
}

ProbabilityMap UNetGenerator::forward(const ImageGray& cover) {
    if (cover.height < 1 || cover.width < 1)
        throw ShapeError("generator input must be non-empty");
    in_h_ = cover.height;
    in_w_ = cover.width;
    pad_h_ = in_h_ + (in_h_ & 1);
    pad_w_ = in_w_ + (in_w_ & 1);

    Tensor x(1, 1, pad_h_, pad_w_, 0.0);
    for (int i = 0; i < pad_h_; ++i)
        for (int j = 0; j < pad_w_; ++j)
            x.at(0, 0, i, j) =
                cover.at(std::min(i, in_h_ - 1), std::min(j, in_w_ - 1)) / 255.0;

    Tensor p = forward_net(x);
    Grid total(in_h_, in_w_);
    for (int i = 0; i < in_h_; ++i)
        for (int j = 0; j < in_w_; ++j) total.at(i, j) = p.at(0, 0, i, j);
    return ProbabilityMap::symmetric(std::move(total));
}

void UNetGenerator::backward(const Grid& dtotal) {
    if (dtotal.height != in_h_ || dtotal.width != in_w_)
        throw ShapeError("gradient grid does not match the last forward input");
    Tensor d(1, 1, pad_h_, pad_w_, 0.0);
    for (int i = 0; i < in_h_; ++i)
        for (int j = 0; j < in_w_; ++j) d.at(0, 0, i, j) = dtotal.at(i, j);
    backward_net(d);
}

std::vector<ParamBlock> UNetGenerator::params() {
    std::vector<ParamBlock> out;
    for (int i = 0; i < cfg_.down_blocks; ++i) {
        std::string p = "down" + std::to_string(i + 1);
        down_[i]->conv1.collect(p + ".conv1", out);
        down_[i]->bn1.collect(p + ".bn1", out);
        down_[i]->conv2.collect(p + ".conv2", out);
        down_[i]->bn2.collect(p + ".bn2", out);
    }
    for (int j = 0; j < cfg_.up_blocks; ++j) {
        std::string p = "up" + std::to_string(j + 9);
        up_[j]->conv1.collect(p + ".conv1", out);
        up_[j]->bn1.collect(p + ".bn1", out);
        up_[j]->conv2.collect(p + ".conv2", out);
        up_[j]->bn2.collect(p + ".bn2", out);
    }
    deconv_.collect("deconv", out);
    return out;
}

std::vector<ParamBlock> UNetGenerator::state_blocks() {
    std::vector<ParamBlock> out = params();
    for (int i = 0; i < cfg_.down_blocks; ++i) {
        std::string p = "down" + std::to_string(i + 1);
        down_[i]->bn1.collect_state(p + ".bn1", out);
        down_[i]->bn2.collect_state(p + ".bn2", out);
    }
    for (int j = 0; j < cfg_.up_blocks; ++j) {
        std::string p = "up" + std::to_string(j + 9);
        up_[j]->bn1.collect_state(p + ".bn1", out);
        up_[j]->bn2.collect_state(p + ".bn2", out);
    }
    return out;
}

void UNetGenerator::set_training(bool on) {
    for (auto& b : down_) {
        b->bn1.training = on;
        b->bn2.training = on;
    }
    for (auto& b : up_) {
        b->bn1.training = on;
        b->bn2.training = on;
    }
}

void UNetGenerator::save(const std::filesystem::path& path) const {
    auto* self = const_cast<UNetGenerator*>(this);
    save_checkpoint(path, "unet_generator", cfg_.to_json(), self->state_blocks());
}

UNetGenerator UNetGenerator::load(const std::filesystem::path& path) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.kind != "unet_generator")
        throw ParseError("checkpoint kind '" + ck.kind + "' is not a generator");
    UNetGenerator g(GeneratorConfig::from_json(ck.config_json), 0);
    restore_params(ck, g.state_blocks());
    return g;
}

}  // namespace gifdl
