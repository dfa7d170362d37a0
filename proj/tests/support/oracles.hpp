#pragma once

// Independent reference computations used only by the tests.

#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numbers>
#include <vector>

#include "jamident/tensor.hpp"

namespace oracle {

using cplx = std::complex<double>;

// Direct O(n^2) DFT, X[k] = sum_n x[n] e^{-j 2 pi k n / N}.
inline std::vector<cplx> dft(const std::vector<cplx>& x) {
    const std::size_t n = x.size();
    std::vector<cplx> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        cplx acc{};
        for (std::size_t t = 0; t < n; ++t)
            acc += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t % n) / static_cast<double>(n));
        out[k] = acc;
    }
    return out;
}

// Spectrogram power by the textbook double loop: frame f starts at f*hop,
// Hann window w(n) = 0.5 - 0.5 cos(2 pi n / N), row r holds DFT bin
// (r - N/2) mod N.
inline std::vector<double> stft_power(const std::vector<cplx>& x, std::size_t nfft, std::size_t hop, std::size_t frames) {
    std::vector<double> out(nfft * frames);
    for (std::size_t f = 0; f < frames; ++f) {
        for (std::size_t r = 0; r < nfft; ++r) {
            const std::size_t k = (r + nfft - nfft / 2) % nfft;
            cplx acc{};
            for (std::size_t n = 0; n < nfft; ++n) {
                const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(nfft));
                acc += x[f * hop + n] * w *
                       std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * n) / static_cast<double>(nfft));
            }
            out[r * frames + f] = std::norm(acc);
        }
    }
    return out;
}

// Central-difference gradient of a scalar function of the leaf's values.
inline std::vector<double> numeric_grad(jamident::ad::Tensor<double>& leaf, const std::function<double()>& f,
                                        double h = 1e-6) {
    auto v = leaf.mutable_data();
    std::vector<double> g(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double keep = v[i];
        v[i] = keep + h;
        const double up = f();
        v[i] = keep - h;
        const double down = f();
        v[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

// ||a - b|| / (||a|| + ||b||), the usual gradient-check relative error.
inline double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double den = std::sqrt(na) + std::sqrt(nb);
    return den == 0.0 ? 0.0 : std::sqrt(diff) / den;
}

// Plain scaled-dot-product attention softmax(Q K^T / sqrt d) V on row-major
// matrices; q, k: n x d, v: n x dv.
inline std::vector<double> attention(const std::vector<double>& q, const std::vector<double>& k,
                                     const std::vector<double>& v, std::size_t n, std::size_t d, std::size_t dv) {
    std::vector<double> out(n * dv, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> s(n);
        double mx = -1e300;
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t t = 0; t < d; ++t) dot += q[i * d + t] * k[j * d + t];
            s[j] = dot / std::sqrt(static_cast<double>(d));
            mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (auto& e : s) z += (e = std::exp(e - mx));
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t t = 0; t < dv; ++t) out[i * dv + t] += s[j] / z * v[j * dv + t];
    }
    return out;
}

} // namespace oracle
