#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>

#include <Eigen/Dense>

namespace efkf {

/// Deterministic random source. Normal variates use a non-caching
/// Box-Muller transform so a given seed always yields the same stream
/// regardless of call pattern or standard-library version.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    /// Uniform on [0, 1).
    double uniform();

    /// Standard normal variate.
    double normal();

    Eigen::VectorXd normal_vector(int n);

    /// Row-major fill: entry (0,0), (0,1), ... so an S x d draw matrix is
    /// reproducible from the sample count alone.
    Eigen::MatrixXd normal_matrix(int rows, int cols);

    std::uint64_t next_u64() { return gen_(); }

  private:
    std::mt19937_64 gen_;
};

/// Stream derivation: hashes the master seed with a list of tags
/// (splitmix64 chain). Used to give every (filter, column, run) its own
/// independent, order-insensitive random stream.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> tags);

/// FNV-1a, for deriving stream tags from identifiers.
std::uint64_t fnv1a(const std::string& s);

}  // namespace efkf
