#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace gifdl {

// Dense NCHW tensor of doubles. Doubles keep finite-difference gradient
// checks out of the float32 cancellation regime.
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_, double fill = 0.0)
        : n(n_), c(c_), h(h_), w(w_),
          v(std::size_t(n_) * c_ * h_ * w_, fill) {}

    std::size_t size() const { return v.size(); }

    double& at(int in, int ic, int ih, int iw) {
        return v[((std::size_t(in) * c + ic) * h + ih) * w + iw];
    }
    const double& at(int in, int ic, int ih, int iw) const {
        return v[((std::size_t(in) * c + ic) * h + ih) * w + iw];
    }

    bool same_shape(const Tensor& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    std::string shape_str() const;
};

// Throws NumericError naming `where` if any value is NaN or infinite.
void check_finite(const Tensor& t, const std::string& where);

}  // namespace gifdl
