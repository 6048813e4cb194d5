#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace milpool {

namespace detail {

// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
inline double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16;
    constexpr double kFpMin = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) break;
    }
    return h;
}

inline double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                      a * std::log(x) + b * std::log(1.0 - x);
    double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

// Upper tail of chi-square with one degree of freedom.
inline double chi2_sf_1df(double x) {
    if (x <= 0.0) return 1.0;
    return std::erfc(std::sqrt(x / 2.0));
}

// Two-sided exact binomial(n, 1/2) tail: 2 * P(X <= k), capped at 1.
inline double binomial_two_sided(int n, int k) {
    double tail = 0.0;
    double coeff = 1.0;  // C(n, 0)
    for (int i = 0; i <= k; ++i) {
        tail += coeff;
        coeff = coeff * (n - i) / (i + 1);
    }
    double p = 2.0 * tail * std::pow(0.5, n);
    return p < 1.0 ? p : 1.0;
}

}  // namespace detail

struct McNemarResult {
    long b = 0;  // first model correct, second wrong
    long c = 0;  // first model wrong, second correct
    double statistic = 0.0;
    double p_value = 1.0;
    bool exact = false;       // binomial tail instead of the chi-square approximation
    bool degenerate = false;  // b + c == 0
};

// McNemar's test on paired classifier decisions over one test set. Uses the
// continuity-corrected chi-square statistic; for b + c < 25 the p-value comes
// from the exact two-sided binomial tail instead.
inline McNemarResult mcnemar_test(const std::vector<int>& preds_a,
                                  const std::vector<int>& preds_b,
                                  const std::vector<int>& truth) {
    if (preds_a.size() != truth.size() || preds_b.size() != truth.size())
        throw std::invalid_argument("mcnemar_test: prediction vectors must match truth length");
    if (truth.empty()) throw std::invalid_argument("mcnemar_test: empty input");
    McNemarResult r;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        bool ok_a = preds_a[i] == truth[i];
        bool ok_b = preds_b[i] == truth[i];
        if (ok_a && !ok_b) ++r.b;
        if (!ok_a && ok_b) ++r.c;
    }
    long n = r.b + r.c;
    if (n == 0) {
        r.degenerate = true;
        r.p_value = 1.0;
        return r;
    }
    double diff = std::fabs(static_cast<double>(r.b - r.c)) - 1.0;
    if (diff < 0.0) diff = 0.0;
    r.statistic = diff * diff / static_cast<double>(n);
    if (n < 25) {
        r.exact = true;
        r.p_value = detail::binomial_two_sided(static_cast<int>(n),
                                               static_cast<int>(std::min(r.b, r.c)));
    } else {
        r.p_value = detail::chi2_sf_1df(r.statistic);
    }
    return r;
}

struct PairedTResult {
    double t = 0.0;
    int df = 0;
    double p_value = 1.0;
    bool degenerate = false;  // zero variance of the differences
};

// Two-sided paired t-test on per-sample scores (the paper applies it to
// absolute regression errors). p from the regularized incomplete beta.
inline PairedTResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("paired_t_test: length mismatch " +
                                    std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    const std::size_t n = a.size();
    if (n < 2) throw std::invalid_argument("paired_t_test: need at least 2 pairs");
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = (a[i] - b[i]) - mean;
        ss += d * d;
    }
    double sd = std::sqrt(ss / static_cast<double>(n - 1));
    PairedTResult r;
    r.df = static_cast<int>(n) - 1;
    if (sd == 0.0) {
        r.degenerate = true;
        r.p_value = mean == 0.0 ? 1.0 : 0.0;
        r.t = mean == 0.0 ? 0.0 : std::numeric_limits<double>::infinity() * (mean > 0 ? 1 : -1);
        return r;
    }
    r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    double x = static_cast<double>(r.df) / (static_cast<double>(r.df) + r.t * r.t);
    r.p_value = detail::incomplete_beta(static_cast<double>(r.df) / 2.0, 0.5, x);
    return r;
}

}  // namespace milpool
