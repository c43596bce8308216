#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "genbench/bitcore.hpp"

namespace genbench {

enum class SpaceKind { cardinality, parity, bars_and_stripes };
enum class Parity { even, odd };

/// Largest solution space that enumerate_space() will materialize.
inline constexpr std::uint64_t kMaxEnumerable = std::uint64_t{1} << 24;

/// Parameters for build_space(). Only the fields relevant to `kind` are read.
struct SpaceParams {
  SpaceKind kind = SpaceKind::cardinality;
  int width = 0;
  int k = 0;                      // cardinality
  Parity parity = Parity::even;   // parity
  int rows = 0;                   // bars_and_stripes
  int cols = 0;
};

/// Constrained subset S of {0,1}^N with an exact size.
///
/// Bars-and-stripes uses a row-major grid: position r*cols + c is cell (r, c).
/// A pattern is valid when every row is uniform (stripes) or every column is
/// uniform (bars).
class SolutionSpace {
 public:
  explicit SolutionSpace(const SpaceParams& params);

  int width() const { return params_.width; }
  SpaceKind kind() const { return params_.kind; }
  const SpaceParams& params() const { return params_; }
  std::uint64_t size() const { return size_; }

  bool contains(std::uint32_t bits) const;
  bool contains(const Bitstring& x) const;

  /// Human-readable identity, e.g. "cardinality(N=12,k=6)".
  std::string describe() const;

  friend bool operator==(const SolutionSpace& a, const SolutionSpace& b) {
    return a.describe() == b.describe();
  }

 private:
  SpaceParams params_;
  std::uint64_t size_ = 0;
};

SolutionSpace build_space(const SpaceParams& params);

std::uint64_t binomial(int n, int k);

/// All members of the space sorted by integer encoding. Throws
/// SpaceTooLargeError when |S| exceeds kMaxEnumerable.
std::vector<Bitstring> enumerate_space(const SolutionSpace& space);

std::string to_string(SpaceKind kind);
SpaceKind space_kind_from_string(const std::string& name);

// ---------------------------------------------------------------------------
// Portfolio universe and costs

struct AssetUniverse {
  Eigen::VectorXd mean_returns;  // per-period fractional return
  Eigen::MatrixXd covariance;    // return-variance units
  double target_return = 0.002;  // carried for config compatibility, unused by the default cost

  int n_assets() const { return static_cast<int>(mean_returns.size()); }
};

inline constexpr double kDefaultTargetReturn = 0.002;

/// Throws ConfigError if the universe violates its invariants (shape,
/// symmetry, numerical PSD to -1e-10).
void validate_universe(const AssetUniverse& universe);

/// Deterministic synthetic universe: mu ~ U[-0.001, 0.003], covariance
/// F^T F + diag(d) with 3 factors of loadings N(0, 0.01) and idiosyncratic
/// variances d ~ U[1e-4, 4e-4].
AssetUniverse synth_universe(int n_assets, std::uint64_t seed);

/// Equal-weight portfolio risk sqrt(w^T Sigma w) with w_i = 1/k on the k
/// selected assets. Throws UndefinedCostError for the empty portfolio.
double risk_cost(const AssetUniverse& universe, const Bitstring& x);

using CostOracle = std::function<double(const Bitstring&)>;

CostOracle make_risk_oracle(AssetUniverse universe);

/// Universe CSV: "asset,mu" header then one row per asset; covariance in a
/// separate file of N rows of N comma-separated values.
void save_universe(const AssetUniverse& universe, const std::filesystem::path& mu_csv,
                   const std::filesystem::path& cov_csv);
AssetUniverse load_universe(const std::filesystem::path& mu_csv,
                            const std::filesystem::path& cov_csv,
                            double target_return = kDefaultTargetReturn);

// ---------------------------------------------------------------------------
// Training sets

struct TrainingSet {
  SampleMultiset samples;   // T unique valid bitstrings, count 1 each
  double seen_portion = 0;  // epsilon
  /// Present only after reweight(); keyed by encoding, sums to 1.
  std::optional<std::map<std::uint32_t, double>> weights;
  SolutionSpace space;

  std::uint64_t size() const { return samples.unique_size(); }
  int width() const { return samples.width(); }
  std::vector<Bitstring> members() const;
};

/// round(epsilon * |S|), at least 1.
std::uint64_t training_size(std::uint64_t space_size, double epsilon);

/// Draws T = training_size(|S|, epsilon) distinct members of the space
/// uniformly without replacement. Throws ConfigError for epsilon outside (0, 1].
TrainingSet draw_training_set(const SolutionSpace& space, double epsilon,
                              std::uint64_t seed);

/// Boltzmann reweighting exp(-beta c(x)) normalized over the training set,
/// with 1/beta the population standard deviation of the training costs.
/// Zero spread falls back to uniform weights.
TrainingSet reweight(const TrainingSet& ts, const CostOracle& cost);

/// Dataset file: one bitstring per line, optional ",cost" and ",weight"
/// columns. Costs are written when an oracle is given; weights when present.
void write_dataset(const std::filesystem::path& path, const TrainingSet& ts,
                   const CostOracle* cost = nullptr);

struct DatasetRecord {
  Bitstring x;
  std::optional<double> cost;
  std::optional<double> weight;
};

std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path);

/// Samples file: same line format as a dataset, repeats allowed.
void write_samples(const std::filesystem::path& path, const SampleMultiset& samples);
SampleMultiset read_samples(const std::filesystem::path& path);

/// Rebuilds a TrainingSet from dataset records against a known space.
TrainingSet training_set_from_records(const std::vector<DatasetRecord>& records,
                                      const SolutionSpace& space);

}  // namespace genbench
