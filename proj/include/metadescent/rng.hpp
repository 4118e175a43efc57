#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>

namespace metadescent {

namespace detail {

// SplitMix64 finalizer; full-period bijective mixer.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
}

constexpr std::uint64_t golden = 0x9E3779B97F4A7C15ull;

} // namespace detail

/// Counter-based substream key. Identical (master_seed, stream_id) and
/// identical child() chains reproduce identical samples on one platform,
/// regardless of which thread or in which order the stream is consumed.
class RngStream {
public:
    explicit RngStream(std::uint64_t master_seed, std::uint64_t stream_id = 0)
        : key_(detail::mix64(detail::mix64(master_seed + detail::golden) ^
                             (stream_id + detail::golden))) {}

    /// Derive an independent substream keyed by `id`.
    RngStream child(std::uint64_t id) const {
        RngStream s = *this;
        s.key_ = detail::mix64(key_ ^ detail::mix64(id + detail::golden));
        return s;
    }

    RngStream child(std::uint64_t a, std::uint64_t b) const {
        return child(a).child(b);
    }

    std::uint64_t key() const { return key_; }

    /// Fresh engine positioned at the start of the stream. Two calls yield
    /// identical sequences; distinct tensor roles must use distinct children.
    std::mt19937_64 engine() const { return std::mt19937_64(key_); }

private:
    std::uint64_t key_;
};

/// Substream roles used when sampling one replicate.
namespace stream_role {
inline constexpr std::uint64_t truth = 1;
inline constexpr std::uint64_t features_train = 2;
inline constexpr std::uint64_t noise_train = 3;
inline constexpr std::uint64_t features_val = 4;
inline constexpr std::uint64_t noise_val = 5;
inline constexpr std::uint64_t truth_test = 6;
inline constexpr std::uint64_t features_test = 7;
inline constexpr std::uint64_t noise_test = 8;
} // namespace stream_role

/// n i.i.d. draws from N(0, stddev^2). stddev == 0 yields an exact zero
/// vector (no engine consumption).
inline Eigen::VectorXd normal_vector(const RngStream& stream, Eigen::Index n,
                                     double stddev = 1.0) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
    if (stddev == 0.0) return v;
    std::mt19937_64 eng = stream.engine();
    std::normal_distribution<double> dist(0.0, stddev);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = dist(eng);
    return v;
}

/// rows x cols matrix of i.i.d. standard normals, filled column-major.
inline Eigen::MatrixXd normal_matrix(const RngStream& stream,
                                     Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    std::mt19937_64 eng = stream.engine();
    std::normal_distribution<double> dist(0.0, 1.0);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = dist(eng);
    return m;
}

} // namespace metadescent
