#pragma once

#include <cstdint>
#include <cstring>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace entroflux {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic generator with explicit Gaussian sampling. std:: distributions
// are implementation-defined, so the normal draw is done by hand (Box-Muller)
// to keep seeded runs byte-identical everywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), eng_(seed) {}

    // strictly inside (0,1)
    double uniform() {
        return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // index in [0, n)
    std::int64_t index(std::int64_t n) {
        return static_cast<std::int64_t>(eng_() % static_cast<std::uint64_t>(n));
    }

    Eigen::VectorXd normal_vector(int n) {
        Eigen::VectorXd v(n);
        for (int i = 0; i < n; ++i) v[i] = normal();
        return v;
    }

    // row-major fill so the draw order is independent of Eigen's storage
    template <typename Derived>
    void fill_normal(Eigen::MatrixBase<Derived>& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = normal();
    }

    Eigen::MatrixXd normal_matrix(int rows, int cols) {
        Eigen::MatrixXd m(rows, cols);
        fill_normal(m);
        return m;
    }

    // Independent child stream; does not advance this generator.
    Rng fork(std::uint64_t stream) const {
        std::uint64_t s = seed_ ^ (0x51c64f93d4ab31ffULL + stream * 0x2545f4914f6cdd1dULL);
        splitmix64(s);
        return Rng(splitmix64(s));
    }

    std::uint64_t seed() const { return seed_; }
    std::mt19937_64& engine() { return eng_; }

    // full state including the cached Box-Muller spare, round-trippable;
    // the spare is stored by bit pattern so the round trip is exact
    std::string state() const {
        std::uint64_t bits;
        std::memcpy(&bits, &spare_, sizeof(bits));
        std::ostringstream os;
        os << eng_ << " " << (have_spare_ ? 1 : 0) << " " << bits;
        return os.str();
    }

    void set_state(const std::string& s) {
        std::istringstream is(s);
        int flag = 0;
        std::uint64_t bits = 0;
        is >> eng_ >> flag >> bits;
        if (!is) throw std::runtime_error("Rng::set_state: malformed state string");
        std::memcpy(&spare_, &bits, sizeof(bits));
        have_spare_ = flag != 0;
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace entroflux
