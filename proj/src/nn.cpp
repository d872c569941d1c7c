#include "gifdl/nn.hpp"

#include <Eigen/Dense>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "gifdl/errors.hpp"

namespace gifdl {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string Tensor::shape_str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
           std::to_string(w);
}

void check_finite(const Tensor& t, const std::string& where) {
    for (double x : t.v)
        if (!std::isfinite(x))
            throw NumericError(where + ": non-finite activation in tensor " + t.shape_str());
}

namespace {

int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

// Gather k x k windows of `src` (stepping the small Hs x Ws grid) into a
// (C*k*k) x (N*Hs*Ws) matrix. Shared by conv forward and deconv backward.
Eigen::MatrixXd im2col_gather(const Tensor& src, int k, int stride, int pad, int hs, int ws) {
    const int rows = src.c * k * k;
    const std::size_t ncols = std::size_t(src.n) * hs * ws;
    Eigen::MatrixXd m(rows, ncols);
    for (int n = 0; n < src.n; ++n)
        for (int y = 0; y < hs; ++y)
            for (int x = 0; x < ws; ++x) {
                const std::size_t col = (std::size_t(n) * hs + y) * ws + x;
                double* out = m.data() + col * rows;
                for (int c = 0; c < src.c; ++c)
                    for (int kh = 0; kh < k; ++kh) {
                        const int hb = y * stride - pad + kh;
                        for (int kw = 0; kw < k; ++kw) {
                            const int wb = x * stride - pad + kw;
                            const int row = (c * k + kh) * k + kw;
                            out[row] = (hb >= 0 && hb < src.h && wb >= 0 && wb < src.w)
                                           ? src.at(n, c, hb, wb)
                                           : 0.0;
                        }
                    }
            }
    return m;
}

// Scatter-add the transpose operation of im2col_gather.
void col2im_add(const Eigen::MatrixXd& m, Tensor& dst, int k, int stride, int pad, int hs,
                int ws) {
    const int rows = dst.c * k * k;
    for (int n = 0; n < dst.n; ++n)
        for (int y = 0; y < hs; ++y)
            for (int x = 0; x < ws; ++x) {
                const std::size_t col = (std::size_t(n) * hs + y) * ws + x;
                const double* in = m.data() + col * rows;
                for (int c = 0; c < dst.c; ++c)
                    for (int kh = 0; kh < k; ++kh) {
                        const int hb = y * stride - pad + kh;
                        if (hb < 0 || hb >= dst.h) continue;
                        for (int kw = 0; kw < k; ++kw) {
                            const int wb = x * stride - pad + kw;
                            if (wb < 0 || wb >= dst.w) continue;
                            dst.at(n, c, hb, wb) += in[(c * k + kh) * k + kw];
                        }
                    }
            }
}

void write_f64_le(std::string& out, const double* p, std::size_t count) {
    static_assert(std::endian::native == std::endian::little || sizeof(double) == 8);
    if constexpr (std::endian::native == std::endian::little) {
        out.append(reinterpret_cast<const char*>(p), count * 8);
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            std::uint64_t bits;
            std::memcpy(&bits, p + i, 8);
            bits = __builtin_bswap64(bits);
            char buf[8];
            std::memcpy(buf, &bits, 8);
            out.append(buf, 8);
        }
    }
}

void read_f64_le(const char* p, double* out, std::size_t count) {
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(out, p, count * 8);
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            std::uint64_t bits;
            std::memcpy(&bits, p + i * 8, 8);
            bits = __builtin_bswap64(bits);
            std::memcpy(out + i, &bits, 8);
        }
    }
}

constexpr char kCkptMagic[] = "GIFDLCKPT1\n";

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_ch, int out_ch, int k, int stride, int pad, bool bias)
    : in_ch(in_ch), out_ch(out_ch), k(k), stride(stride), pad(pad), has_bias(bias),
      weight(std::size_t(out_ch) * in_ch * k * k, 0.0),
      bias(bias ? out_ch : 0, 0.0),
      grad_weight(weight.size(), 0.0),
      grad_bias(this->bias.size(), 0.0) {}

void Conv2d::init(Rng& rng) {
    const double std = std::sqrt(2.0 / (double(in_ch) * k * k));
    for (auto& w : weight) w = rng.normal(0.0, std);
    for (auto& b : bias) b = 0.0;
}

Tensor Conv2d::forward(const Tensor& x) {
    if (x.c != in_ch)
        throw ShapeError("conv expects " + std::to_string(in_ch) + " channels, got " +
                         x.shape_str());
    x_ = x;
    ho_ = conv_out(x.h, k, stride, pad);
    wo_ = conv_out(x.w, k, stride, pad);
    const auto cols = im2col_gather(x, k, stride, pad, ho_, wo_);
    Eigen::Map<const RowMat> wm(weight.data(), out_ch, std::size_t(in_ch) * k * k);
    Eigen::MatrixXd res = wm * cols;

    Tensor out(x.n, out_ch, ho_, wo_);
    const std::size_t plane = std::size_t(ho_) * wo_;
    for (int n = 0; n < x.n; ++n)
        for (std::size_t px = 0; px < plane; ++px) {
            const std::size_t col = n * plane + px;
            for (int oc = 0; oc < out_ch; ++oc)
                out.v[(std::size_t(n) * out_ch + oc) * plane + px] =
                    res(oc, col) + (has_bias ? bias[oc] : 0.0);
        }
    return out;
}

Tensor Conv2d::backward(const Tensor& dout) {
    const std::size_t plane = std::size_t(ho_) * wo_;
    Eigen::MatrixXd dmat(out_ch, std::size_t(dout.n) * plane);
    for (int n = 0; n < dout.n; ++n)
        for (std::size_t px = 0; px < plane; ++px)
            for (int oc = 0; oc < out_ch; ++oc)
                dmat(oc, n * plane + px) =
                    dout.v[(std::size_t(n) * out_ch + oc) * plane + px];

    const auto cols = im2col_gather(x_, k, stride, pad, ho_, wo_);
    Eigen::Map<RowMat> gw(grad_weight.data(), out_ch, std::size_t(in_ch) * k * k);
    gw.noalias() += dmat * cols.transpose();
    if (has_bias)
        for (int oc = 0; oc < out_ch; ++oc) grad_bias[oc] += dmat.row(oc).sum();

    Eigen::Map<const RowMat> wm(weight.data(), out_ch, std::size_t(in_ch) * k * k);
    Eigen::MatrixXd dcols = wm.transpose() * dmat;
    Tensor dx(x_.n, x_.c, x_.h, x_.w);
    col2im_add(dcols, dx, k, stride, pad, ho_, wo_);
    return dx;
}

void Conv2d::collect(const std::string& prefix, std::vector<ParamBlock>& out) {
    out.push_back({prefix + ".weight", &weight, &grad_weight});
    if (has_bias) out.push_back({prefix + ".bias", &bias, &grad_bias});
}

// ------------------------------------------------------- ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(int in_ch, int out_ch, int k, int stride, int pad, bool bias)
    : in_ch(in_ch), out_ch(out_ch), k(k), stride(stride), pad(pad), has_bias(bias),
      weight(std::size_t(in_ch) * out_ch * k * k, 0.0),
      bias(bias ? out_ch : 0, 0.0),
      grad_weight(weight.size(), 0.0),
      grad_bias(this->bias.size(), 0.0) {}

void ConvTranspose2d::init(Rng& rng) {
    const double std = std::sqrt(2.0 / (double(in_ch) * k * k));
    for (auto& w : weight) w = rng.normal(0.0, std);
    for (auto& b : bias) b = 0.0;
}

Tensor ConvTranspose2d::forward(const Tensor& x) {
    if (x.c != in_ch)
        throw ShapeError("deconv expects " + std::to_string(in_ch) + " channels, got " +
                         x.shape_str());
    x_ = x;
    ho_ = (x.h - 1) * stride - 2 * pad + k;
    wo_ = (x.w - 1) * stride - 2 * pad + k;

    const std::size_t plane = std::size_t(x.h) * x.w;
    Eigen::MatrixXd in_mat(in_ch, std::size_t(x.n) * plane);
    for (int n = 0; n < x.n; ++n)
        for (std::size_t px = 0; px < plane; ++px)
            for (int c = 0; c < in_ch; ++c)
                in_mat(c, n * plane + px) = x.v[(std::size_t(n) * in_ch + c) * plane + px];

    Eigen::Map<const RowMat> wm(weight.data(), in_ch, std::size_t(out_ch) * k * k);
    Eigen::MatrixXd m = wm.transpose() * in_mat;

    Tensor out(x.n, out_ch, ho_, wo_);
    col2im_add(m, out, k, stride, pad, x.h, x.w);
    if (has_bias)
        for (int n = 0; n < out.n; ++n)
            for (int oc = 0; oc < out_ch; ++oc) {
                double* p = &out.at(n, oc, 0, 0);
                for (std::size_t i = 0; i < std::size_t(ho_) * wo_; ++i) p[i] += bias[oc];
            }
    return out;
}

Tensor ConvTranspose2d::backward(const Tensor& dout) {
    const auto dcols = im2col_gather(dout, k, stride, pad, x_.h, x_.w);

    const std::size_t plane = std::size_t(x_.h) * x_.w;
    Eigen::MatrixXd in_mat(in_ch, std::size_t(x_.n) * plane);
    for (int n = 0; n < x_.n; ++n)
        for (std::size_t px = 0; px < plane; ++px)
            for (int c = 0; c < in_ch; ++c)
                in_mat(c, n * plane + px) = x_.v[(std::size_t(n) * in_ch + c) * plane + px];

    Eigen::Map<RowMat> gw(grad_weight.data(), in_ch, std::size_t(out_ch) * k * k);
    gw.noalias() += in_mat * dcols.transpose();
    if (has_bias)
        for (int n = 0; n < dout.n; ++n)
            for (int oc = 0; oc < out_ch; ++oc) {
                const double* p = &dout.at(n, oc, 0, 0);
                double acc = 0.0;
                for (std::size_t i = 0; i < std::size_t(dout.h) * dout.w; ++i) acc += p[i];
                grad_bias[oc] += acc;
            }

    Eigen::Map<const RowMat> wm(weight.data(), in_ch, std::size_t(out_ch) * k * k);
    Eigen::MatrixXd din_mat = wm * dcols;
    Tensor dx(x_.n, in_ch, x_.h, x_.w);
    for (int n = 0; n < x_.n; ++n)
        for (std::size_t px = 0; px < plane; ++px)
            for (int c = 0; c < in_ch; ++c)
                dx.v[(std::size_t(n) * in_ch + c) * plane + px] = din_mat(c, n * plane + px);
    return dx;
}

void ConvTranspose2d::collect(const std::string& prefix, std::vector<ParamBlock>& out) {
    out.push_back({prefix + ".weight", &weight, &grad_weight});
    if (has_bias) out.push_back({prefix + ".bias", &bias, &grad_bias});
}

// ------------------------------------------------------------ BatchNorm2d

// beta starts slightly off zero: blocks running at 1x1 spatial extent
// normalize to exactly beta, and beta = 0 would park every such feature on
// the LeakyReLU kink where the loss is not differentiable.
BatchNorm2d::BatchNorm2d(int ch)
    : ch(ch), gamma(ch, 1.0), beta(ch, 0.01), running_mean(ch, 0.0), running_var(ch, 1.0),
      grad_gamma(ch, 0.0), grad_beta(ch, 0.0) {}

Tensor BatchNorm2d::forward(const Tensor& x) {
    if (x.c != ch) throw ShapeError("batchnorm channel mismatch: " + x.shape_str());
    const std::size_t plane = std::size_t(x.h) * x.w;
    const std::size_t count = std::size_t(x.n) * plane;
    mean_.assign(ch, 0.0);
    inv_std_.assign(ch, 0.0);
    xhat_ = Tensor(x.n, x.c, x.h, x.w);
    Tensor out(x.n, x.c, x.h, x.w);

    for (int c = 0; c < ch; ++c) {
        double mu, var;
        if (training) {
            double acc = 0.0;
            for (int n = 0; n < x.n; ++n) {
                const double* p = &x.at(n, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) acc += p[i];
            }
            mu = acc / double(count);
            double sq = 0.0;
            for (int n = 0; n < x.n; ++n) {
                const double* p = &x.at(n, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mu;
                    sq += d * d;
                }
            }
            var = sq / double(count);
            const double unbiased = count > 1 ? sq / double(count - 1) : var;
            running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mu;
            running_var[c] = (1.0 - momentum) * running_var[c] + momentum * unbiased;
        } else {
            mu = running_mean[c];
            var = running_var[c];
        }
        mean_[c] = mu;
        inv_std_[c] = 1.0 / std::sqrt(var + eps);
        for (int n = 0; n < x.n; ++n) {
            const double* p = &x.at(n, c, 0, 0);
            double* ph = &xhat_.at(n, c, 0, 0);
            double* po = &out.at(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                ph[i] = (p[i] - mu) * inv_std_[c];
                po[i] = gamma[c] * ph[i] + beta[c];
            }
        }
    }
    return out;
}

Tensor BatchNorm2d::backward(const Tensor& dout) {
    const std::size_t plane = std::size_t(dout.h) * dout.w;
    const double count = double(std::size_t(dout.n) * plane);
    Tensor dx(dout.n, dout.c, dout.h, dout.w);
    for (int c = 0; c < ch; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int n = 0; n < dout.n; ++n) {
            const double* pd = &dout.at(n, c, 0, 0);
            const double* ph = &xhat_.at(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                sum_dy += pd[i];
                sum_dy_xhat += pd[i] * ph[i];
            }
        }
        grad_beta[c] += sum_dy;
        grad_gamma[c] += sum_dy_xhat;
        const double g = gamma[c] * inv_std_[c];
        for (int n = 0; n < dout.n; ++n) {
            const double* pd = &dout.at(n, c, 0, 0);
            const double* ph = &xhat_.at(n, c, 0, 0);
            double* px = &dx.at(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                if (training)
                    px[i] = g * (pd[i] - sum_dy / count - ph[i] * sum_dy_xhat / count);
                else
                    px[i] = g * pd[i];
            }
        }
    }
    return dx;
}

void BatchNorm2d::collect(const std::string& prefix, std::vector<ParamBlock>& out) {
    out.push_back({prefix + ".gamma", &gamma, &grad_gamma});
    out.push_back({prefix + ".beta", &beta, &grad_beta});
}

void BatchNorm2d::collect_state(const std::string& prefix, std::vector<ParamBlock>& out) {
    out.push_back({prefix + ".running_mean", &running_mean, nullptr});
    out.push_back({prefix + ".running_var", &running_var, nullptr});
}

// ------------------------------------------------------------ activations

Tensor LeakyReLU::forward(const Tensor& x) {
    x_ = x;
    Tensor out = x;
    for (auto& v : out.v)
        if (v < 0.0) v *= slope;
    return out;
}

Tensor LeakyReLU::backward(const Tensor& dout) {
    Tensor dx = dout;
    for (std::size_t i = 0; i < dx.v.size(); ++i)
        if (x_.v[i] < 0.0) dx.v[i] *= slope;
    return dx;
}

Tensor TanhLayer::forward(const Tensor& x) {
    y_ = x;
    for (auto& v : y_.v) v = std::tanh(v);
    return y_;
}

Tensor TanhLayer::backward(const Tensor& dout) {
    Tensor dx = dout;
    for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] *= 1.0 - y_.v[i] * y_.v[i];
    return dx;
}

Tensor AbsLayer::forward(const Tensor& x) {
    x_ = x;
    Tensor out = x;
    for (auto& v : out.v) v = std::abs(v);
    return out;
}

Tensor AbsLayer::backward(const Tensor& dout) {
    Tensor dx = dout;
    for (std::size_t i = 0; i < dx.v.size(); ++i)
        if (x_.v[i] < 0.0) dx.v[i] = -dx.v[i];
    return dx;
}

Tensor ScaledSigmoid::forward(const Tensor& x) {
    y_ = x;
    Tensor out(x.n, x.c, x.h, x.w);
    const double hi = 1.0 - floor;
    for (std::size_t i = 0; i < x.v.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-x.v[i]));
        y_.v[i] = s;
        // Clamp guards the band against one-ulp rounding at saturation.
        out.v[i] = std::min(std::max(floor + (1.0 - 2.0 * floor) * s, floor), hi);
    }
    return out;
}

Tensor ScaledSigmoid::backward(const Tensor& dout) {
    Tensor dx = dout;
    for (std::size_t i = 0; i < dx.v.size(); ++i)
        dx.v[i] *= (1.0 - 2.0 * floor) * y_.v[i] * (1.0 - y_.v[i]);
    return dx;
}

// ---------------------------------------------------------------- pooling

Tensor AvgPool2d::forward(const Tensor& x) {
    xn_ = x.n;
    xc_ = x.c;
    xh_ = x.h;
    xw_ = x.w;
    ho_ = conv_out(x.h, k, stride, pad);
    wo_ = conv_out(x.w, k, stride, pad);
    Tensor out(x.n, x.c, ho_, wo_);
    const double inv = 1.0 / double(k * k);
    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < x.c; ++c)
            for (int y = 0; y < ho_; ++y)
                for (int xo = 0; xo < wo_; ++xo) {
                    double acc = 0.0;
                    for (int kh = 0; kh < k; ++kh) {
                        const int hb = y * stride - pad + kh;
                        if (hb < 0 || hb >= x.h) continue;
                        for (int kw = 0; kw < k; ++kw) {
                            const int wb = xo * stride - pad + kw;
                            if (wb < 0 || wb >= x.w) continue;
                            acc += x.at(n, c, hb, wb);
                        }
                    }
                    out.at(n, c, y, xo) = acc * inv;
                }
    return out;
}

Tensor AvgPool2d::backward(const Tensor& dout) {
    Tensor dx(xn_, xc_, xh_, xw_);
    const double inv = 1.0 / double(k * k);
    for (int n = 0; n < xn_; ++n)
        for (int c = 0; c < xc_; ++c)
            for (int y = 0; y < ho_; ++y)
                for (int xo = 0; xo < wo_; ++xo) {
                    const double g = dout.at(n, c, y, xo) * inv;
                    for (int kh = 0; kh < k; ++kh) {
                        const int hb = y * stride - pad + kh;
                        if (hb < 0 || hb >= xh_) continue;
                        for (int kw = 0; kw < k; ++kw) {
                            const int wb = xo * stride - pad + kw;
                            if (wb < 0 || wb >= xw_) continue;
                            dx.at(n, c, hb, wb) += g;
                        }
                    }
                }
    return dx;
}

Tensor GlobalAvgPool::forward(const Tensor& x) {
    xh_ = x.h;
    xw_ = x.w;
    Tensor out(x.n, x.c, 1, 1);
    const double inv = 1.0 / double(std::size_t(x.h) * x.w);
    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < x.c; ++c) {
            const double* p = &x.at(n, c, 0, 0);
            double acc = 0.0;
            for (std::size_t i = 0; i < std::size_t(x.h) * x.w; ++i) acc += p[i];
            out.at(n, c, 0, 0) = acc * inv;
        }
    return out;
}

Tensor GlobalAvgPool::backward(const Tensor& dout) {
    Tensor dx(dout.n, dout.c, xh_, xw_);
    const double inv = 1.0 / double(std::size_t(xh_) * xw_);
    for (int n = 0; n < dout.n; ++n)
        for (int c = 0; c < dout.c; ++c) {
            const double g = dout.at(n, c, 0, 0) * inv;
            double* p = &dx.at(n, c, 0, 0);
            for (std::size_t i = 0; i < std::size_t(xh_) * xw_; ++i) p[i] = g;
        }
    return dx;
}

Tensor UpsampleNearest::forward(const Tensor& x, int out_h, int out_w) {
    xh_ = x.h;
    xw_ = x.w;
    Tensor out(x.n, x.c, out_h, out_w);
    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < x.c; ++c)
            for (int y = 0; y < out_h; ++y) {
                const int sy = int(std::size_t(y) * x.h / out_h);
                for (int xo = 0; xo < out_w; ++xo) {
                    const int sx = int(std::size_t(xo) * x.w / out_w);
                    out.at(n, c, y, xo) = x.at(n, c, sy, sx);
                }
            }
    return out;
}

Tensor UpsampleNearest::backward(const Tensor& dout) {
    Tensor dx(dout.n, dout.c, xh_, xw_);
    for (int n = 0; n < dout.n; ++n)
        for (int c = 0; c < dout.c; ++c)
            for (int y = 0; y < dout.h; ++y) {
                const int sy = int(std::size_t(y) * xh_ / dout.h);
                for (int xo = 0; xo < dout.w; ++xo) {
                    const int sx = int(std::size_t(xo) * xw_ / dout.w);
                    dx.at(n, c, sy, sx) += dout.at(n, c, y, xo);
                }
            }
    return dx;
}

// ------------------------------------------------------------------ Dense

Dense::Dense(int in_dim, int out_dim)
    : in_dim(in_dim), out_dim(out_dim),
      weight(std::size_t(out_dim) * in_dim, 0.0), bias(out_dim, 0.0),
      grad_weight(weight.size(), 0.0), grad_bias(out_dim, 0.0) {}

void Dense::init(Rng& rng) {
    const double std = std::sqrt(2.0 / double(in_dim + out_dim));
    for (auto& w : weight) w = rng.normal(0.0, std);
    for (auto& b : bias) b = 0.0;
}

Tensor Dense::forward(const Tensor& x) {
    if (x.c != in_dim || x.h != 1 || x.w != 1)
        throw ShapeError("dense expects (N," + std::to_string(in_dim) + ",1,1), got " +
                         x.shape_str());
    x_ = x;
    Tensor out(x.n, out_dim, 1, 1);
    Eigen::Map<const RowMat> wm(weight.data(), out_dim, in_dim);
    Eigen::Map<const Eigen::MatrixXd> xm(x.v.data(), in_dim, x.n);
    Eigen::Map<Eigen::MatrixXd> ym(out.v.data(), out_dim, x.n);
    ym.noalias() = wm * xm;
    for (int n = 0; n < x.n; ++n)
        for (int o = 0; o < out_dim; ++o) out.v[std::size_t(n) * out_dim + o] += bias[o];
    return out;
}

Tensor Dense::backward(const Tensor& dout) {
    Tensor dx(x_.n, in_dim, 1, 1);
    Eigen::Map<const Eigen::MatrixXd> dym(dout.v.data(), out_dim, dout.n);
    Eigen::Map<const Eigen::MatrixXd> xm(x_.v.data(), in_dim, x_.n);
    Eigen::Map<const RowMat> wm(weight.data(), out_dim, in_dim);
    Eigen::Map<RowMat> gw(grad_weight.data(), out_dim, in_dim);
    gw.noalias() += dym * xm.transpose();
    for (int o = 0; o < out_dim; ++o) grad_bias[o] += dym.row(o).sum();
    Eigen::Map<Eigen::MatrixXd> dxm(dx.v.data(), in_dim, x_.n);
    dxm.noalias() = wm.transpose() * dym;
    return dx;
}

void Dense::collect(const std::string& prefix, std::vector<ParamBlock>& out) {
    out.push_back({prefix + ".weight", &weight, &grad_weight});
    out.push_back({prefix + ".bias", &bias, &grad_bias});
}

// ------------------------------------------------------------------ misc

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.n != b.n || a.h != b.h || a.w != b.w)
        throw ShapeError("concat shapes differ: " + a.shape_str() + " vs " + b.shape_str());
    Tensor out(a.n, a.c + b.c, a.h, a.w);
    const std::size_t plane = std::size_t(a.h) * a.w;
    for (int n = 0; n < a.n; ++n) {
        std::memcpy(&out.at(n, 0, 0, 0), &a.at(n, 0, 0, 0), a.c * plane * sizeof(double));
        std::memcpy(&out.at(n, a.c, 0, 0), &b.at(n, 0, 0, 0), b.c * plane * sizeof(double));
    }
    return out;
}

void split_channels(const Tensor& d, int c_a, Tensor& da, Tensor& db) {
    const int c_b = d.c - c_a;
    da = Tensor(d.n, c_a, d.h, d.w);
    db = Tensor(d.n, c_b, d.h, d.w);
    const std::size_t plane = std::size_t(d.h) * d.w;
    for (int n = 0; n < d.n; ++n) {
        std::memcpy(&da.at(n, 0, 0, 0), &d.at(n, 0, 0, 0), c_a * plane * sizeof(double));
        std::memcpy(&db.at(n, 0, 0, 0), &d.at(n, c_a, 0, 0), c_b * plane * sizeof(double));
    }
}

void zero_grads(const std::vector<ParamBlock>& params) {
    for (const auto& p : params)
        if (p.grad) std::fill(p.grad->begin(), p.grad->end(), 0.0);
}

std::uint64_t param_hash(const std::vector<ParamBlock>& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& p : params) {
        mix(p.name.data(), p.name.size());
        mix(p.value->data(), p.value->size() * sizeof(double));
    }
    return h;
}

void Adam::step(const std::vector<ParamBlock>& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, double(t_));
    const double bc2 = 1.0 - std::pow(beta2, double(t_));
    for (const auto& p : params) {
        if (!p.grad) continue;
        auto& [m, v] = state_[p.name];
        if (m.size() != p.value->size()) {
            m.assign(p.value->size(), 0.0);
            v.assign(p.value->size(), 0.0);
        }
        for (std::size_t i = 0; i < p.value->size(); ++i) {
            const double g = (*p.grad)[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            (*p.value)[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
    }
}

void Adam::reset() {
    state_.clear();
    t_ = 0;
}

// ------------------------------------------------------------ checkpoints

void save_checkpoint(const std::filesystem::path& path, const std::string& kind,
                     const std::string& config_json,
                     const std::vector<ParamBlock>& params) {
    nlohmann::json header;
    header["kind"] = kind;
    header["config"] = nlohmann::json::parse(config_json.empty() ? "{}" : config_json);
    auto& tensors = header["tensors"] = nlohmann::json::array();
    for (const auto& p : params)
        tensors.push_back({{"name", p.name}, {"count", p.value->size()}});

    std::string buf(kCkptMagic, sizeof(kCkptMagic) - 1);
    const std::string hs = header.dump();
    const std::uint32_t hl = static_cast<std::uint32_t>(hs.size());
    buf.push_back(char((hl >> 24) & 0xff));
    buf.push_back(char((hl >> 16) & 0xff));
    buf.push_back(char((hl >> 8) & 0xff));
    buf.push_back(char(hl & 0xff));
    buf += hs;
    for (const auto& p : params) write_f64_le(buf, p.value->data(), p.value->size());

    // Atomic install: write to a sibling then rename over the target.
    const auto tmp = path.parent_path() / (path.filename().string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot open for writing: " + tmp.string());
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::size_t magic_len = sizeof(kCkptMagic) - 1;
    if (buf.size() < magic_len + 4 || buf.compare(0, magic_len, kCkptMagic) != 0)
        throw ParseError(path.string() + ": not a checkpoint file");
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + magic_len);
    const std::uint32_t hl = (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
                             (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
    if (buf.size() < magic_len + 4 + hl)
        throw ParseError(path.string() + ": truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(buf.substr(magic_len + 4, hl));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": bad header json: " + e.what());
    }

    Checkpoint ckpt;
    ckpt.kind = header.value("kind", "");
    ckpt.config_json = header.contains("config") ? header["config"].dump() : "{}";
    std::size_t off = magic_len + 4 + hl;
    for (const auto& t : header["tensors"]) {
        const std::string name = t.at("name").get<std::string>();
        const std::size_t count = t.at("count").get<std::size_t>();
        if (off + count * 8 > buf.size())
            throw ParseError(path.string() + ": truncated tensor " + name);
        std::vector<double> data(count);
        read_f64_le(buf.data() + off, data.data(), count);
        off += count * 8;
        ckpt.tensors.emplace(name, std::move(data));
    }
    return ckpt;
}

void restore_params(const Checkpoint& ckpt, const std::vector<ParamBlock>& params) {
    for (const auto& p : params) {
        const auto it = ckpt.tensors.find(p.name);
        if (it == ckpt.tensors.end())
            throw ParseError("checkpoint missing tensor " + p.name);
        if (it->second.size() != p.value->size())
            throw ParseError("checkpoint tensor " + p.name + " has " +
                             std::to_string(it->second.size()) + " values, expected " +
                             std::to_string(p.value->size()));
        *p.value = it->second;
    }
}

}  // namespace gifdl
