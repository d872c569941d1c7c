#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "gifdl/rng.hpp"
#include "gifdl/tensor.hpp"

namespace gifdl {

// A named view of one trainable parameter vector and its gradient.
struct ParamBlock {
    std::string name;
    std::vector<double>* value;
    std::vector<double>* grad;
};

// Layers cache what their backward pass needs; forward must precede backward.
// backward consumes d(loss)/d(output) and returns d(loss)/d(input), adding
// into the parameter gradients (call zero_grads between steps).

struct Conv2d {
    int in_ch, out_ch, k, stride, pad;
    bool has_bias;
    std::vector<double> weight, bias;        // weight: out_ch x in_ch x k x k
    std::vector<double> grad_weight, grad_bias;

    Conv2d(int in_ch, int out_ch, int k, int stride = 1, int pad = 0, bool bias = true);
    void init(Rng& rng);
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dout);
    void collect(const std::string& prefix, std::vector<ParamBlock>& out);

    Tensor x_;       // cached input
    std::vector<double> cols_;  // cached im2col buffer
    int ho_ = 0, wo_ = 0;
};

// Transposed convolution (stride-2 upsampling deconvolution).
// weight: in_ch x out_ch x k x k; output size = (in-1)*stride - 2*pad + k.
struct ConvTranspose2d {
    int in_ch, out_ch, k, stride, pad;
    bool has_bias;
    std::vector<double> weight, bias;
    std::vector<double> grad_weight, grad_bias;

    ConvTranspose2d(int in_ch, int out_ch, int k = 4, int stride = 2, int pad = 1,
                    bool bias = true);
    void init(Rng& rng);
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dout);
    void collect(const std::string& prefix, std::vector<ParamBlock>& out);

    Tensor x_;
    int ho_ = 0, wo_ = 0;
};

struct BatchNorm2d {
    int ch;
    double eps = 1e-5;
    double momentum = 0.1;
    bool training = true;
    std::vector<double> gamma, beta, running_mean, running_var;
    std::vector<double> grad_gamma, grad_beta;

    explicit BatchNorm2d(int ch);
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dout);
    void collect(const std::string& prefix, std::vector<ParamBlock>& out);
    // Running stats: checkpointed but never optimized (grad is null).
    void collect_state(const std::string& prefix, std::vector<ParamBlock>& out);

    Tensor xhat_;
    std::vector<double> mean_, inv_std_;
};

struct LeakyReLU {
    double slope;
    explicit LeakyReLU(double slope = 0.2) : slope(slope) {}
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dout);
    Tensor x_;
};

struct TanhLayer {
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dout);
    Tensor y_;
};

struct AbsLayer {
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dout);
    Tensor x_;
};

// Sigmoid squeezed into [floor, 1 - floor]; the generator's output head.
struct ScaledSigmoid {
    double floor;
    explicit ScaledSigmoid(double floor = 1e-6) : floor(floor) {}
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dout);
    Tensor y_;  // raw sigmoid values
};

struct AvgPool2d {
    int k, stride, pad;
    explicit AvgPool2d(int k, int stride = -1, int pad = 0)
        : k(k), stride(stride < 0 ? k : stride), pad(pad) {}
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dout);
    int xn_ = 0, xc_ = 0, xh_ = 0, xw_ = 0, ho_ = 0, wo_ = 0;
};

struct GlobalAvgPool {
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dout);
    int xh_ = 0, xw_ = 0;
};

// Nearest-neighbour upsample to an explicit target size (each output pixel
// reads input at floor(i*hi/ho)); inverse-scattered on backward.
struct UpsampleNearest {
    Tensor forward(const Tensor& x, int out_h, int out_w);
    Tensor backward(const Tensor& dout);
    int xh_ = 0, xw_ = 0;
};

struct Dense {
    int in_dim, out_dim;
    std::vector<double> weight, bias;  // weight: out_dim x in_dim
    std::vector<double> grad_weight, grad_bias;

    Dense(int in_dim, int out_dim);
    void init(Rng& rng);
    Tensor forward(const Tensor& x);  // x: (N, in_dim, 1, 1)
    Tensor backward(const Tensor& dout);
    void collect(const std::string& prefix, std::vector<ParamBlock>& out);

    Tensor x_;
};

// Channel concatenation for skip connections.
Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& d, int c_a, Tensor& da, Tensor& db);

struct Adam {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void step(const std::vector<ParamBlock>& params);
    void reset();

    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> state_;
    std::int64_t t_ = 0;
};

void zero_grads(const std::vector<ParamBlock>& params);

// FNV hash over all parameter bytes; cheap identity check for "exactly one
// network changed" assertions.
std::uint64_t param_hash(const std::vector<ParamBlock>& params);

// Self-describing checkpoint: magic, JSON header {kind, config, tensors},
// then raw little-endian doubles in header order.
void save_checkpoint(const std::filesystem::path& path, const std::string& kind,
                     const std::string& config_json,
                     const std::vector<ParamBlock>& params);

struct Checkpoint {
    std::string kind;
    std::string config_json;
    std::map<std::string, std::vector<double>> tensors;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies checkpoint tensors into the live blocks; missing or mis-sized
// entries raise ParseError naming the block.
void restore_params(const Checkpoint& ckpt, const std::vector<ParamBlock>& params);

}  // namespace gifdl
