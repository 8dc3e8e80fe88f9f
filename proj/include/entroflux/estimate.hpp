#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace entroflux {

// Monte-Carlo estimate with its standard error (sample std / sqrt(n)).
struct MCEstimate {
    double value = 0.0;
    double std_err = 0.0;
    std::int64_t n = 0;
};

inline double combined_err(double a, double b) { return std::hypot(a, b); }

inline MCEstimate operator-(const MCEstimate& a, const MCEstimate& b) {
    return {a.value - b.value, combined_err(a.std_err, b.std_err),
            std::min(a.n, b.n)};
}

// Welford accumulator.
class MeanAccumulator {
public:
    void add(double x) {
        ++n_;
        const double d = x - mean_;
        mean_ += d / static_cast<double>(n_);
        m2_ += d * (x - mean_);
    }

    std::int64_t count() const { return n_; }
    double mean() const { return mean_; }

    double variance() const {
        if (n_ < 2) throw std::logic_error("variance needs n >= 2");
        return std::max(0.0, m2_) / static_cast<double>(n_ - 1);
    }

    double std_err() const { return std::sqrt(variance() / static_cast<double>(n_)); }

    MCEstimate estimate() const { return {mean(), std_err(), n_}; }

    // merge two disjoint accumulators (deterministic shard reduction)
    void merge(const MeanAccumulator& o) {
        if (o.n_ == 0) return;
        if (n_ == 0) { *this = o; return; }
        const double na = static_cast<double>(n_), nb = static_cast<double>(o.n_);
        const double d = o.mean_ - mean_;
        m2_ += o.m2_ + d * d * na * nb / (na + nb);
        mean_ += d * nb / (na + nb);
        n_ += o.n_;
    }

private:
    std::int64_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

}  // namespace entroflux
