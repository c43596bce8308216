#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "genbench/bitcore.hpp"
#include "genbench/tasks.hpp"

namespace genbench::tnbm {

/// One MPS site: a (left_bond x right_bond) matrix per physical value 0/1.
using SiteTensor = std::array<Eigen::MatrixXd, 2>;

/// Matrix product state over N binary sites with a single canonical center.
///
/// Site i carries bit i of the bitstring encoding. Sites left of the center
/// are left-canonical (sum_s A^s^T A^s = I), sites right of it are
/// right-canonical (sum_s A^s A^s^T = I), so the squared norm of the center
/// tensor is the partition function. Public operations keep it at 1.
class MpsModel {
 public:
  MpsModel(std::vector<SiteTensor> sites, int center, int max_bond);

  int n_sites() const { return static_cast<int>(sites_.size()); }
  int center() const { return center_; }
  int max_bond() const { return max_bond_; }
  const SiteTensor& site(int i) const { return sites_[static_cast<std::size_t>(i)]; }
  const std::vector<SiteTensor>& sites() const { return sites_; }

  /// Bond dimensions alpha_0..alpha_N, with alpha_0 = alpha_N = 1.
  std::vector<int> bond_dims() const;
  /// 2 * sum_i alpha_{i-1} alpha_i: the number of stored tensor entries.
  std::size_t parameter_count() const;

  /// <x|psi>.
  double amplitude(std::uint32_t bits) const;
  /// Squared norm of the center tensor.
  double norm_squared() const;

  /// Moves the canonical center with exact QR steps (no truncation).
  void move_center(int target);
  void normalize();

  // Used by the trainer, which maintains the gauge itself.
  SiteTensor& mutable_site(int i) { return sites_[static_cast<std::size_t>(i)]; }
  void set_center(int c) { center_ = c; }

 private:
  std::vector<SiteTensor> sites_;
  int center_;
  int max_bond_;
};

/// Bond cap min(max_bond, 2^i, 2^(N-i)) for bond i of an N-site chain.
int bond_cap(int n_sites, int bond, int max_bond);

/// Random MPS with entries U[0, 1] on the capped bond profile,
/// right-canonicalized with the center at site 0 and normalized.
MpsModel init_mps(int n_sites, int max_bond, std::uint64_t seed);

/// Born-rule probability |<x|psi>|^2 / Z. Throws WidthMismatchError.
double mps_prob(const MpsModel& m, const Bitstring& x);

/// Exact probabilities of every bitstring, indexed by encoding. N <= 24.
std::vector<double> mps_full_distribution(const MpsModel& m);

/// Exact sequential sampler. Holds a copy of the model gauged to site 0 so
/// each site's conditional follows from the prefix contraction alone.
class MpsSampler {
 public:
  explicit MpsSampler(MpsModel m);
  Bitstring draw(std::mt19937_64& rng) const;
  int width() const { return model_.n_sites(); }

 private:
  MpsModel model_;
};

SampleMultiset mps_sample(const MpsModel& m, std::uint64_t count, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Training

struct TnbmTrainConfig {
  int max_bond = 7;
  double learning_rate = 1e-2;
  int n_epochs = 100;
  double svd_cutoff = 1e-10;
  std::uint64_t seed = 0;
};

/// Throws ConfigError when a field is out of range.
void validate(const TnbmTrainConfig& cfg);

inline constexpr double kProbabilityFloor = 1e-300;

/// Weighted negative log-likelihood -(1/W) sum_t w_t ln p(x_t). Throws
/// TrainingDivergedError if some p(x_t) is below the probability floor.
double negative_log_likelihood(const MpsModel& m, std::span<const std::uint32_t> samples,
                               std::span<const double> weights);

/// The NLL as a function of the merged two-site tensor at bond (k, k+1),
/// with every other site frozen. The center must sit at k or k+1.
///
/// The merged tensor is a (2*Dl) x (2*Dr) matrix whose row s_k*Dl + a and
/// column s_{k+1}*Dr + b hold Theta[a, s_k, s_{k+1}, b].
class TwoSiteObjective {
 public:
  TwoSiteObjective(const MpsModel& m, int bond, std::span<const std::uint32_t> samples,
                   std::span<const double> weights);

  Eigen::MatrixXd merged() const { return merged_; }
  /// -(1/W) sum_t w_t ln psi_t(theta)^2 + ln ||theta||^2.
  double value(const Eigen::MatrixXd& theta) const;
  /// 2 [theta/||theta||^2 - (1/W) sum_t w_t E_t / psi_t].
  Eigen::MatrixXd gradient(const Eigen::MatrixXd& theta) const;

 private:
  int left_dim_;
  int right_dim_;
  Eigen::MatrixXd merged_;
  std::vector<Eigen::RowVectorXd> lefts_;
  std::vector<Eigen::VectorXd> rights_;
  std::vector<std::pair<int, int>> physical_;
  std::vector<double> weights_;
};

enum class SweepDirection { left_to_right, right_to_left };

/// Truncated SVD split of a merged tensor. Keeps at most max_bond singular
/// values and drops those below cutoff relative to the largest; the kept
/// spectrum is rescaled to unit norm. For left_to_right the left factor is
/// left-canonical and absorbs nothing; for right_to_left the right factor is
/// right-canonical.
std::pair<SiteTensor, SiteTensor> split_merged(const Eigen::MatrixXd& theta, int left_dim,
                                               int right_dim, int max_bond, double cutoff,
                                               SweepDirection direction,
                                               bool normalize = true);

/// Inverse of split_merged without truncation.
Eigen::MatrixXd merge_sites(const SiteTensor& left, const SiteTensor& right);

struct TnbmTrainResult {
  MpsModel model;
  std::vector<double> loss_history;  // NLL after each epoch
};

using EpochCallback = std::function<void(int epoch, const MpsModel&)>;

/// DMRG-style training: every epoch sweeps the bonds left to right and then
/// right to left, taking one SGD step on each merged two-site tensor and
/// splitting it back by truncated SVD. Uses the training weights when
/// present, uniform 1/T otherwise.
TnbmTrainResult train_dmrg(MpsModel m, const TrainingSet& train, const TnbmTrainConfig& cfg,
                           const EpochCallback& on_epoch = {});

/// Versioned JSON checkpoint; tensor entries stored per site, per physical
/// value, row-major.
void save_mps(const MpsModel& m, const std::filesystem::path& path);
MpsModel load_mps(const std::filesystem::path& path);

}  // namespace genbench::tnbm
