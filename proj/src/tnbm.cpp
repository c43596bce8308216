#include "genbench/tnbm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "genbench/errors.hpp"

namespace genbench::tnbm {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

constexpr int kCheckpointVersion = 1;

struct SampleEnv {
  const RowVectorXd* left;
  const VectorXd* right;
  int s0;
  int s1;
  double weight;
};

double env_amplitude(const MatrixXd& theta, int dl, int dr, const SampleEnv& e) {
  return (*e.left * theta.block(e.s0 * dl, e.s1 * dr, dl, dr) * *e.right)(0, 0);
}

double two_site_value(const MatrixXd& theta, int dl, int dr, std::span<const SampleEnv> envs) {
  double wsum = 0.0;
  double acc = 0.0;
  for (const auto& e : envs) {
    const double psi = env_amplitude(theta, dl, dr, e);
    acc += e.weight * std::log(std::max(psi * psi, kProbabilityFloor));
    wsum += e.weight;
  }
  return -acc / wsum + std::log(theta.squaredNorm());
}

MatrixXd two_site_gradient(const MatrixXd& theta, int dl, int dr,
                           std::span<const SampleEnv> envs) {
  double wsum = 0.0;
  for (const auto& e : envs) wsum += e.weight;
  MatrixXd grad = theta / theta.squaredNorm();
  for (const auto& e : envs) {
    const double psi = env_amplitude(theta, dl, dr, e);
    if (!(psi * psi >= kProbabilityFloor)) {
      throw TrainingDivergedError("training sample has zero model probability");
    }
    grad.block(e.s0 * dl, e.s1 * dr, dl, dr).noalias() -=
        (e.weight / (wsum * psi)) * (e.left->transpose() * e.right->transpose());
  }
  grad *= 2.0;
  if (!grad.allFinite()) throw TrainingDivergedError("non-finite NLL gradient");
  return grad;
}

// Right-to-left contraction of sites [from, N) for one sample.
VectorXd right_env(const MpsModel& m, std::uint32_t bits, int from) {
  VectorXd v = VectorXd::Ones(1);
  for (int i = m.n_sites() - 1; i >= from; --i) v = m.site(i)[(bits >> i) & 1u] * v;
  return v;
}

RowVectorXd left_env(const MpsModel& m, std::uint32_t bits, int until) {
  RowVectorXd v = RowVectorXd::Ones(1);
  for (int i = 0; i < until; ++i) v = v * m.site(i)[(bits >> i) & 1u];
  return v;
}

std::vector<double> normalized_weights(const TrainingSet& train,
                                       std::vector<std::uint32_t>& keys) {
  keys.clear();
  std::vector<double> w;
  for (const auto& [bits, c] : train.samples.counts()) {
    keys.push_back(bits);
    w.push_back(train.weights ? train.weights->at(bits) : 1.0);
  }
  double sum = 0.0;
  for (double v : w) sum += v;
  for (double& v : w) v /= sum;
  return w;
}

}  // namespace

int bond_cap(int n_sites, int bond, int max_bond) {
  const auto pow2 = [](int e) { return e >= 30 ? (1 << 30) : (1 << e); };
  return std::min({max_bond, pow2(bond), pow2(n_sites - bond)});
}

MpsModel::MpsModel(std::vector<SiteTensor> sites, int center, int max_bond)
    : sites_(std::move(sites)), center_(center), max_bond_(max_bond) {
  if (sites_.size() < 2) throw ConfigError("an MPS needs at least two sites");
  if (center_ < 0 || center_ >= n_sites()) throw ConfigError("MPS center out of range");
  if (max_bond_ < 1) throw ConfigError("max bond must be positive");
  Index prev = 1;
  for (const auto& s : sites_) {
    if (s[0].rows() != prev || s[1].rows() != prev || s[0].cols() != s[1].cols()) {
      throw ConfigError("MPS bond shapes do not chain");
    }
    prev = s[0].cols();
  }
  if (prev != 1) throw ConfigError("MPS right boundary bond must be 1");
}

std::vector<int> MpsModel::bond_dims() const {
  std::vector<int> out{1};
  for (const auto& s : sites_) out.push_back(static_cast<int>(s[0].cols()));
  return out;
}

std::size_t MpsModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& s : sites_) n += 2 * static_cast<std::size_t>(s[0].size());
  return n;
}

double MpsModel::amplitude(std::uint32_t bits) const {
  RowVectorXd v = RowVectorXd::Ones(1);
  for (int i = 0; i < n_sites(); ++i) v = v * sites_[static_cast<std::size_t>(i)][(bits >> i) & 1u];
  return v(0);
}

double MpsModel::norm_squared() const {
  const auto& c = sites_[static_cast<std::size_t>(center_)];
  return c[0].squaredNorm() + c[1].squaredNorm();
}

void MpsModel::normalize() {
  const double nrm = std::sqrt(norm_squared());
  if (!(nrm > 0.0) || !std::isfinite(nrm)) throw TrainingDivergedError("MPS norm vanished");
  auto& c = sites_[static_cast<std::size_t>(center_)];
  c[0] /= nrm;
  c[1] /= nrm;
}

void MpsModel::move_center(int target) {
  if (target < 0 || target >= n_sites()) throw ConfigError("MPS center out of range");
  while (center_ < target) {
    auto& a = sites_[static_cast<std::size_t>(center_)];
    auto& b = sites_[static_cast<std::size_t>(center_ + 1)];
    const Index dl = a[0].rows();
    const Index dr = a[0].cols();
    MatrixXd m(2 * dl, dr);
    m << a[0], a[1];
    Eigen::HouseholderQR<MatrixXd> qr(m);
    const Index r = std::min(2 * dl, dr);
    const MatrixXd q = qr.householderQ() * MatrixXd::Identity(2 * dl, r);
    const MatrixXd rmat = qr.matrixQR().topRows(r).triangularView<Eigen::Upper>();
    a[0] = q.topRows(dl);
    a[1] = q.bottomRows(dl);
    b[0] = rmat * b[0];
    b[1] = rmat * b[1];
    ++center_;
  }
  while (center_ > target) {
    auto& a = sites_[static_cast<std::size_t>(center_ - 1)];
    auto& b = sites_[static_cast<std::size_t>(center_)];
    const Index dl = b[0].rows();
    const Index dr = b[0].cols();
    MatrixXd m(dl, 2 * dr);
    m << b[0], b[1];
    Eigen::HouseholderQR<MatrixXd> qr(m.transpose());
    const Index r = std::min(dl, 2 * dr);
    const MatrixXd q = qr.householderQ() * MatrixXd::Identity(2 * dr, r);
    const MatrixXd rmat = qr.matrixQR().topRows(r).triangularView<Eigen::Upper>();
    const MatrixXd qt = q.transpose();
    b[0] = qt.leftCols(dr);
    b[1] = qt.rightCols(dr);
    a[0] = a[0] * rmat.transpose();
    a[1] = a[1] * rmat.transpose();
    --center_;
  }
}

MpsModel init_mps(int n_sites, int max_bond, std::uint64_t seed) {
  if (n_sites < 2 || n_sites > kMaxWidth) throw ConfigError("MPS needs 2 <= N <= 30 sites");
  if (max_bond < 1) throw ConfigError("max bond must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> entry(0.0, 1.0);
  std::vector<SiteTensor> sites(static_cast<std::size_t>(n_sites));
  for (int i = 0; i < n_sites; ++i) {
    const int dl = bond_cap(n_sites, i, max_bond);
    const int dr = bond_cap(n_sites, i + 1, max_bond);
    for (auto& mat : sites[static_cast<std::size_t>(i)]) {
      mat.resize(dl, dr);
      for (Index r = 0; r < dl; ++r) {
        for (Index c = 0; c < dr; ++c) mat(r, c) = entry(rng);
      }
    }
  }
  MpsModel m(std::move(sites), n_sites - 1, max_bond);
  m.move_center(0);
  m.normalize();
  return m;
}

double mps_prob(const MpsModel& m, const Bitstring& x) {
  if (x.width() != m.n_sites()) throw WidthMismatchError("bitstring width != MPS sites");
  const double a = m.amplitude(x.bits());
  return a * a / m.norm_squared();
}

std::vector<double> mps_full_distribution(const MpsModel& m) {
  const int n = m.n_sites();
  if (n > 24) throw SpaceTooLargeError("full distribution limited to N <= 24");
  std::vector<double> out(std::size_t{1} << n);
  const double z = m.norm_squared();
  // Depth-first over prefixes so shared prefixes are contracted once.
  std::vector<RowVectorXd> stack(static_cast<std::size_t>(n) + 1);
  stack[0] = RowVectorXd::Ones(1);
  const auto visit = [&](auto&& self, int depth, std::uint32_t prefix) -> void {
    if (depth == n) {
      const double a = stack[static_cast<std::size_t>(n)](0);
      out[prefix] = a * a / z;
      return;
    }
    for (std::uint32_t s = 0; s < 2; ++s) {
      stack[static_cast<std::size_t>(depth) + 1] =
          stack[static_cast<std::size_t>(depth)] * m.site(depth)[s];
      self(self, depth + 1, prefix | (s << depth));
    }
  };
  visit(visit, 0, 0);
  return out;
}

MpsSampler::MpsSampler(MpsModel m) : model_(std::move(m)) {
  model_.move_center(0);
  model_.normalize();
}

Bitstring MpsSampler::draw(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  RowVectorXd v = RowVectorXd::Ones(1);
  std::uint32_t bits = 0;
  for (int i = 0; i < model_.n_sites(); ++i) {
    RowVectorXd v0 = v * model_.site(i)[0];
    RowVectorXd v1 = v * model_.site(i)[1];
    const double p0 = v0.squaredNorm();
    const double p1 = v1.squaredNorm();
    if (unif(rng) * (p0 + p1) < p0) {
      v = v0 / std::sqrt(p0);
    } else {
      v = v1 / std::sqrt(p1);
      bits |= std::uint32_t{1} << i;
    }
  }
  return Bitstring(model_.n_sites(), bits);
}

SampleMultiset mps_sample(const MpsModel& m, std::uint64_t count, std::uint64_t seed) {
  const MpsSampler sampler(m);
  std::mt19937_64 rng(seed);
  SampleMultiset out(m.n_sites());
  for (std::uint64_t i = 0; i < count; ++i) out.add(sampler.draw(rng));
  return out;
}

// ---------------------------------------------------------------------------

void validate(const TnbmTrainConfig& cfg) {
  if (cfg.max_bond < 1) throw ConfigError("tnbm max_bond must be positive");
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("tnbm learning_rate must be positive");
  if (cfg.n_epochs < 0) throw ConfigError("tnbm n_epochs must be non-negative");
  if (!(cfg.svd_cutoff > 0.0 && cfg.svd_cutoff < 1.0)) {
    throw ConfigError("tnbm svd_cutoff must lie in (0, 1)");
  }
}

double negative_log_likelihood(const MpsModel& m, std::span<const std::uint32_t> samples,
                               std::span<const double> weights) {
  const double z = m.norm_squared();
  double acc = 0.0;
  double wsum = 0.0;
  for (std::size_t t = 0; t < samples.size(); ++t) {
    const double a = m.amplitude(samples[t]);
    const double p = a * a / z;
    if (!(p >= kProbabilityFloor)) {
      throw TrainingDivergedError("training sample " +
                                  Bitstring(m.n_sites(), samples[t]).to_text() +
                                  " has zero model probability");
    }
    acc += weights[t] * std::log(p);
    wsum += weights[t];
  }
  const double nll = -acc / wsum;
  if (!std::isfinite(nll)) throw TrainingDivergedError("non-finite NLL");
  return nll;
}

TwoSiteObjective::TwoSiteObjective(const MpsModel& m, int bond,
                                   std::span<const std::uint32_t> samples,
                                   std::span<const double> weights)
    : weights_(weights.begin(), weights.end()) {
  if (bond < 0 || bond + 1 >= m.n_sites()) throw ConfigError("bond out of range");
  if (m.center() != bond && m.center() != bond + 1) {
    throw ConfigError("two-site objective needs the center on the bond");
  }
  left_dim_ = static_cast<int>(m.site(bond)[0].rows());
  right_dim_ = static_cast<int>(m.site(bond + 1)[0].cols());
  merged_ = merge_sites(m.site(bond), m.site(bond + 1));
  for (auto bits : samples) {
    lefts_.push_back(left_env(m, bits, bond));
    rights_.push_back(right_env(m, bits, bond + 2));
    physical_.emplace_back((bits >> bond) & 1u, (bits >> (bond + 1)) & 1u);
  }
}

double TwoSiteObjective::value(const MatrixXd& theta) const {
  std::vector<SampleEnv> envs;
  for (std::size_t t = 0; t < lefts_.size(); ++t) {
    envs.push_back({&lefts_[t], &rights_[t], physical_[t].first, physical_[t].second,
                    weights_[t]});
  }
  return two_site_value(theta, left_dim_, right_dim_, envs);
}

MatrixXd TwoSiteObjective::gradient(const MatrixXd& theta) const {
  std::vector<SampleEnv> envs;
  for (std::size_t t = 0; t < lefts_.size(); ++t) {
    envs.push_back({&lefts_[t], &rights_[t], physical_[t].first, physical_[t].second,
                    weights_[t]});
  }
  return two_site_gradient(theta, left_dim_, right_dim_, envs);
}

MatrixXd merge_sites(const SiteTensor& left, const SiteTensor& right) {
  const Index dl = left[0].rows();
  const Index dr = right[0].cols();
  MatrixXd theta(2 * dl, 2 * dr);
  for (int s0 = 0; s0 < 2; ++s0) {
    for (int s1 = 0; s1 < 2; ++s1) {
      theta.block(s0 * dl, s1 * dr, dl, dr).noalias() = left[s0] * right[s1];
    }
  }
  return theta;
}

std::pair<SiteTensor, SiteTensor> split_merged(const MatrixXd& theta, int left_dim,
                                               int right_dim, int max_bond, double cutoff,
                                               SweepDirection direction, bool normalize) {
  Eigen::JacobiSVD<MatrixXd> svd(theta, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& sv = svd.singularValues();
  if (!(sv.size() > 0 && sv(0) > 0.0) || !sv.allFinite()) {
    throw TrainingDivergedError("merged tensor is zero or non-finite");
  }
  Index keep = 1;
  const Index limit = std::min<Index>(sv.size(), max_bond);
  while (keep < limit && sv(keep) / sv(0) >= cutoff) ++keep;

  VectorXd s = sv.head(keep);
  if (normalize) s /= s.norm();
  MatrixXd u = svd.matrixU().leftCols(keep);
  MatrixXd vt = svd.matrixV().leftCols(keep).transpose();
  if (direction == SweepDirection::left_to_right) {
    vt = s.asDiagonal() * vt;
  } else {
    u = u * s.asDiagonal();
  }
  SiteTensor a{u.topRows(left_dim), u.bottomRows(left_dim)};
  SiteTensor b{vt.leftCols(right_dim), vt.rightCols(right_dim)};
  return {std::move(a), std::move(b)};
}

TnbmTrainResult train_dmrg(MpsModel m, const TrainingSet& train, const TnbmTrainConfig& cfg,
                           const EpochCallback& on_epoch) {
  validate(cfg);
  if (train.size() == 0) throw InvalidTrainingSetError("empty training set");
  if (train.width() != m.n_sites()) throw WidthMismatchError("training width != MPS sites");

  std::vector<std::uint32_t> keys;
  const std::vector<double> w = normalized_weights(train, keys);
  const int n = m.n_sites();
  const std::size_t t_count = keys.size();
  const auto bit = [&](std::size_t t, int i) { return static_cast<int>((keys[t] >> i) & 1u); };

  if (m.center() != 0) m.move_center(0);
  m.normalize();

  std::vector<double> history;
  std::vector<SampleEnv> envs(t_count);
  std::vector<RowVectorXd> lefts(t_count);
  std::vector<VectorXd> rights(t_count);
  std::vector<std::vector<VectorXd>> right_cache(t_count);
  std::vector<std::vector<RowVectorXd>> left_cache(t_count);

  const auto step = [&](int k, SweepDirection dir) {
    const int dl = static_cast<int>(m.site(k)[0].rows());
    const int dr = static_cast<int>(m.site(k + 1)[0].cols());
    MatrixXd theta = merge_sites(m.site(k), m.site(k + 1));
    theta -= cfg.learning_rate * two_site_gradient(theta, dl, dr, envs);
    auto [a, b] = split_merged(theta, dl, dr, cfg.max_bond, cfg.svd_cutoff, dir);
    m.mutable_site(k) = std::move(a);
    m.mutable_site(k + 1) = std::move(b);
    m.set_center(dir == SweepDirection::left_to_right ? k + 1 : k);
  };

  for (int epoch = 0; epoch < cfg.n_epochs; ++epoch) {
    // Left to right: cache right environments, grow the left ones.
    for (std::size_t t = 0; t < t_count; ++t) {
      auto& cache = right_cache[t];
      cache.assign(static_cast<std::size_t>(n) + 1, VectorXd::Ones(1));
      for (int i = n - 1; i >= 0; --i) {
        cache[static_cast<std::size_t>(i)] = m.site(i)[bit(t, i)] * cache[static_cast<std::size_t>(i) + 1];
      }
      lefts[t] = RowVectorXd::Ones(1);
    }
    for (int k = 0; k + 1 < n; ++k) {
      for (std::size_t t = 0; t < t_count; ++t) {
        envs[t] = {&lefts[t], &right_cache[t][static_cast<std::size_t>(k) + 2], bit(t, k),
                   bit(t, k + 1), w[t]};
      }
      step(k, SweepDirection::left_to_right);
      for (std::size_t t = 0; t < t_count; ++t) lefts[t] = lefts[t] * m.site(k)[bit(t, k)];
    }
    // Right to left: cache left environments, grow the right ones.
    for (std::size_t t = 0; t < t_count; ++t) {
      auto& cache = left_cache[t];
      cache.assign(static_cast<std::size_t>(n) + 1, RowVectorXd::Ones(1));
      for (int i = 0; i < n; ++i) {
        cache[static_cast<std::size_t>(i) + 1] = cache[static_cast<std::size_t>(i)] * m.site(i)[bit(t, i)];
      }
      rights[t] = VectorXd::Ones(1);
    }
    for (int k = n - 2; k >= 0; --k) {
      for (std::size_t t = 0; t < t_count; ++t) {
        envs[t] = {&left_cache[t][static_cast<std::size_t>(k)], &rights[t], bit(t, k),
                   bit(t, k + 1), w[t]};
      }
      step(k, SweepDirection::right_to_left);
      for (std::size_t t = 0; t < t_count; ++t) {
        rights[t] = m.site(k + 1)[bit(t, k + 1)] * rights[t];
      }
    }
    history.push_back(negative_log_likelihood(m, keys, w));
    if (on_epoch) on_epoch(epoch, m);
  }
  return {std::move(m), std::move(history)};
}

// ---------------------------------------------------------------------------

void save_mps(const MpsModel& m, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "genbench-mps";
  j["version"] = kCheckpointVersion;
  j["n_sites"] = m.n_sites();
  j["max_bond"] = m.max_bond();
  j["center"] = m.center();
  j["bond_dims"] = m.bond_dims();
  auto& tensors = j["tensors"] = nlohmann::json::array();
  for (const auto& site : m.sites()) {
    std::vector<double> flat;
    for (const auto& mat : site) {
      for (Index r = 0; r < mat.rows(); ++r) {
        for (Index c = 0; c < mat.cols(); ++c) flat.push_back(mat(r, c));
      }
    }
    tensors.push_back(flat);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(1) << '\n';
}

MpsModel load_mps(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    if (j.at("format") != "genbench-mps" || j.at("version") != kCheckpointVersion) {
      throw ConfigError(path.string() + ": not a version 1 MPS checkpoint");
    }
    const int n = j.at("n_sites");
    const auto dims = j.at("bond_dims").get<std::vector<int>>();
    const auto& tensors = j.at("tensors");
    if (static_cast<int>(dims.size()) != n + 1 || static_cast<int>(tensors.size()) != n) {
      throw ConfigError(path.string() + ": inconsistent checkpoint shape");
    }
    std::vector<SiteTensor> sites(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const auto flat = tensors[static_cast<std::size_t>(i)].get<std::vector<double>>();
      const int dl = dims[static_cast<std::size_t>(i)];
      const int dr = dims[static_cast<std::size_t>(i) + 1];
      if (flat.size() != static_cast<std::size_t>(2 * dl * dr)) {
        throw ConfigError(path.string() + ": wrong entry count at site " + std::to_string(i));
      }
      std::size_t idx = 0;
      for (auto& mat : sites[static_cast<std::size_t>(i)]) {
        mat.resize(dl, dr);
        for (Index r = 0; r < dl; ++r) {
          for (Index c = 0; c < dr; ++c) mat(r, c) = flat[idx++];
        }
      }
    }
    return MpsModel(std::move(sites), j.at("center"), j.at("max_bond"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace genbench::tnbm
