#pragma once

// Small numeric oracles shared by the unit and acceptance suites. These stay
// independent of the library's implementation paths.

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace ggtest {

// Jacobi eigenvalue iteration for small symmetric matrices.
inline std::vector<double> symmetric_eigenvalues(std::vector<double> a, std::size_t n) {
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a[i * n + j] * a[i * n + j];
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                double apq = a[p * n + q];
                if (std::abs(apq) < 1e-30) continue;
                double app = a[p * n + p], aqq = a[q * n + q];
                double theta = 0.5 * std::atan2(2.0 * apq, aqq - app);
                double c = std::cos(theta), s = std::sin(theta);
                for (std::size_t i = 0; i < n; ++i) {
                    double aip = a[i * n + p], aiq = a[i * n + q];
                    a[i * n + p] = c * aip - s * aiq;
                    a[i * n + q] = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    double api = a[p * n + i], aqi = a[q * n + i];
                    a[p * n + i] = c * api - s * aqi;
                    a[q * n + i] = s * api + c * aqi;
                }
            }
    }
    std::vector<double> eig(n);
    for (std::size_t i = 0; i < n; ++i) eig[i] = a[i * n + i];
    return eig;
}

inline double min_eigenvalue(const std::vector<double>& a, std::size_t n) {
    auto e = symmetric_eigenvalues(a, n);
    double mn = e[0];
    for (double v : e) mn = std::min(mn, v);
    return mn;
}

// Exhaustive-partition 1-D k-means oracle: minimal within-cluster sum of
// squares over all k^n assignments (empty clusters allowed).
inline double exhaustive_wcss(const std::vector<double>& x, std::size_t k) {
    std::size_t n = x.size();
    std::size_t total = 1;
    for (std::size_t i = 0; i < n; ++i) total *= k;
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> assign(n, 0);
    for (std::size_t code = 0; code < total; ++code) {
        std::size_t c = code;
        for (std::size_t i = 0; i < n; ++i) {
            assign[i] = int(c % k);
            c /= k;
        }
        std::vector<double> sum(k, 0.0);
        std::vector<std::size_t> cnt(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            sum[assign[i]] += x[i];
            ++cnt[assign[i]];
        }
        double wcss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double mean = sum[assign[i]] / double(cnt[assign[i]]);
            wcss += (x[i] - mean) * (x[i] - mean);
        }
        best = std::min(best, wcss);
    }
    return best;
}

}  // namespace ggtest
