// Test-side reference implementations, kept independent of the library's
// compute paths on purpose. Anything asserted against a "*_oracle" here is a
// frozen expectation, not an echo of the implementation.
#ifndef STYLEBLEND_TESTS_ORACLES_HPP
#define STYLEBLEND_TESTS_ORACLES_HPP

#include <cmath>
#include <vector>

namespace oracles {

// plain triple-loop matrix product
inline std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b, int m, int k,
                                         int n) {
    std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; i++)
        for (int j = 0; j < n; j++) {
            double acc = 0.0;
            for (int p = 0; p < k; p++) acc += a[static_cast<size_t>(i) * k + p] * b[static_cast<size_t>(p) * n + j];
            c[static_cast<size_t>(i) * n + j] = acc;
        }
    return c;
}

// direct exponential-sum softmax, no stabilization tricks
inline std::vector<double> softmax_row_oracle(const std::vector<double>& row) {
    double s = 0.0;
    for (double v : row) s += std::exp(v);
    std::vector<double> out(row.size());
    for (size_t i = 0; i < row.size(); i++) out[i] = std::exp(row[i]) / s;
    return out;
}

// sliding-window 3x3 correlation with zero padding, one output channel pixel at a time
inline std::vector<double> conv2d_oracle(const std::vector<double>& x, const std::vector<double>& k, int ci, int h,
                                         int w, int co) {
    std::vector<double> y(static_cast<size_t>(co) * h * w, 0.0);
    for (int oc = 0; oc < co; oc++)
        for (int yy = 0; yy < h; yy++)
            for (int xx = 0; xx < w; xx++) {
                double acc = 0.0;
                for (int ic = 0; ic < ci; ic++)
                    for (int dy = 0; dy < 3; dy++)
                        for (int dx = 0; dx < 3; dx++) {
                            int sy = yy + dy - 1, sx = xx + dx - 1;
                            if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                            acc += k[((static_cast<size_t>(oc) * ci + ic) * 3 + dy) * 3 + dx] *
                                   x[(static_cast<size_t>(ic) * h + sy) * w + sx];
                        }
                y[(static_cast<size_t>(oc) * h + yy) * w + xx] = acc;
            }
    return y;
}

// cumulative product of (1 - beta_t) in long double
inline long double alpha_bar_oracle(int T, double beta_start, double beta_end, int t) {
    long double prod = 1.0L;
    for (int i = 1; i <= t; i++) {
        long double beta = beta_start + (beta_end - beta_start) * static_cast<long double>(i - 1) / (T - 1);
        prod *= (1.0L - beta);
    }
    return prod;
}

}  // namespace oracles

#endif
