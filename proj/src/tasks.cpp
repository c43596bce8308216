#include "genbench/tasks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "genbench/errors.hpp"
#include "genbench/text.hpp"

namespace genbench {

namespace {

bool row_uniform(std::uint32_t bits, int row, int cols) {
  const std::uint32_t mask = ((std::uint32_t{1} << cols) - 1) << (row * cols);
  const std::uint32_t v = bits & mask;
  return v == 0 || v == mask;
}

bool col_uniform(std::uint32_t bits, int col, int rows, int cols) {
  const bool first = (bits >> col) & 1u;
  for (int r = 1; r < rows; ++r) {
    if (static_cast<bool>((bits >> (r * cols + col)) & 1u) != first) return false;
  }
  return true;
}

}  // namespace

std::uint64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (int i = 1; i <= k; ++i) {
    // r * (n - k + i) is divisible by i at every step.
    r = r * static_cast<std::uint64_t>(n - k + i) / static_cast<std::uint64_t>(i);
  }
  return r;
}

SolutionSpace::SolutionSpace(const SpaceParams& params) : params_(params) {
  const int n = params.width;
  if (n < 1 || n > kMaxWidth) {
    throw ConfigError("space width " + std::to_string(n) + " outside [1, 30]");
  }
  switch (params.kind) {
    case SpaceKind::cardinality:
      if (params.k < 0 || params.k > n) {
        throw ConfigError("cardinality k=" + std::to_string(params.k) +
                          " outside [0, N]");
      }
      size_ = binomial(n, params.k);
      break;
    case SpaceKind::parity:
      size_ = std::uint64_t{1} << (n - 1);
      break;
    case SpaceKind::bars_and_stripes:
      if (params.rows < 1 || params.cols < 1 || params.rows * params.cols != n) {
        throw ConfigError("bars_and_stripes needs rows*cols == N");
      }
      size_ = (std::uint64_t{1} << params.rows) + (std::uint64_t{1} << params.cols) - 2;
      break;
  }
}

bool SolutionSpace::contains(std::uint32_t bits) const {
  const int n = params_.width;
  if ((bits >> n) != 0) return false;
  switch (params_.kind) {
    case SpaceKind::cardinality:
      return std::popcount(bits) == params_.k;
    case SpaceKind::parity:
      return (std::popcount(bits) % 2 == 0) == (params_.parity == Parity::even);
    case SpaceKind::bars_and_stripes: {
      bool stripes = true;
      for (int r = 0; r < params_.rows && stripes; ++r) {
        stripes = row_uniform(bits, r, params_.cols);
      }
      if (stripes) return true;
      for (int c = 0; c < params_.cols; ++c) {
        if (!col_uniform(bits, c, params_.rows, params_.cols)) return false;
      }
      return true;
    }
  }
  return false;
}

bool SolutionSpace::contains(const Bitstring& x) const {
  return x.width() == params_.width && contains(x.bits());
}

std::string SolutionSpace::describe() const {
  const std::string n = "N=" + std::to_string(params_.width);
  switch (params_.kind) {
    case SpaceKind::cardinality:
      return "cardinality(" + n + ",k=" + std::to_string(params_.k) + ")";
    case SpaceKind::parity:
      return std::string("parity(") + n +
             (params_.parity == Parity::even ? ",even)" : ",odd)");
    case SpaceKind::bars_and_stripes:
      return "bars_and_stripes(" + n + ",rows=" + std::to_string(params_.rows) +
             ",cols=" + std::to_string(params_.cols) + ")";
  }
  return "unknown";
}

SolutionSpace build_space(const SpaceParams& params) { return SolutionSpace(params); }

std::string to_string(SpaceKind kind) {
  switch (kind) {
    case SpaceKind::cardinality:
      return "cardinality";
    case SpaceKind::parity:
      return "parity";
    case SpaceKind::bars_and_stripes:
      return "bars_and_stripes";
  }
  return "unknown";
}

SpaceKind space_kind_from_string(const std::string& name) {
  if (name == "cardinality") return SpaceKind::cardinality;
  if (name == "parity") return SpaceKind::parity;
  if (name == "bars_and_stripes" || name == "bas") return SpaceKind::bars_and_stripes;
  throw ConfigError("unknown space kind '" + name + "'");
}

std::vector<Bitstring> enumerate_space(const SolutionSpace& space) {
  if (space.size() > kMaxEnumerable) {
    throw SpaceTooLargeError(space.describe() + " has " + std::to_string(space.size()) +
                             " members, above the enumeration limit");
  }
  const int n = space.width();
  std::vector<Bitstring> out;
  out.reserve(space.size());
  const auto& p = space.params();
  switch (space.kind()) {
    case SpaceKind::cardinality: {
      if (p.k == 0) {
        out.emplace_back(n, 0u);
        break;
      }
      // Gosper's hack visits k-subsets in increasing integer order.
      const std::uint64_t limit = std::uint64_t{1} << n;
      std::uint64_t v = (std::uint64_t{1} << p.k) - 1;
      while (v < limit) {
        out.emplace_back(n, static_cast<std::uint32_t>(v));
        const std::uint64_t t = v | (v - 1);
        v = (t + 1) | (((~t & (t + 1)) - 1) >> (std::countr_zero(v) + 1));
      }
      break;
    }
    case SpaceKind::parity: {
      const std::uint64_t limit = std::uint64_t{1} << n;
      for (std::uint64_t v = 0; v < limit; ++v) {
        if (space.contains(static_cast<std::uint32_t>(v))) {
          out.emplace_back(n, static_cast<std::uint32_t>(v));
        }
      }
      break;
    }
    case SpaceKind::bars_and_stripes: {
      std::vector<std::uint32_t> codes;
      const std::uint32_t row_mask = (std::uint32_t{1} << p.cols) - 1;
      for (std::uint32_t sel = 0; sel < (std::uint32_t{1} << p.rows); ++sel) {
        std::uint32_t v = 0;
        for (int r = 0; r < p.rows; ++r) {
          if ((sel >> r) & 1u) v |= row_mask << (r * p.cols);
        }
        codes.push_back(v);
      }
      for (std::uint32_t sel = 0; sel < (std::uint32_t{1} << p.cols); ++sel) {
        std::uint32_t v = 0;
        for (int r = 0; r < p.rows; ++r) v |= sel << (r * p.cols);
        codes.push_back(v);
      }
      std::sort(codes.begin(), codes.end());
      codes.erase(std::unique(codes.begin(), codes.end()), codes.end());
      for (auto c : codes) out.emplace_back(n, c);
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void validate_universe(const AssetUniverse& u) {
  const auto n = u.mean_returns.size();
  if (n < 1 || u.covariance.rows() != n || u.covariance.cols() != n) {
    throw ConfigError("universe covariance shape does not match mean returns");
  }
  const double scale = std::max(1.0, u.covariance.cwiseAbs().maxCoeff());
  if ((u.covariance - u.covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw ConfigError("universe covariance is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(u.covariance,
                                                     Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-10) {
    throw ConfigError("universe covariance is not positive semidefinite");
  }
}

AssetUniverse synth_universe(int n_assets, std::uint64_t seed) {
  if (n_assets < 2 || n_assets > kMaxWidth) {
    throw ConfigError("synthetic universe needs 2 <= N <= 30 assets");
  }
  constexpr int kFactors = 3;
  constexpr double kMuLow = -0.001;
  constexpr double kMuHigh = 0.003;
  constexpr double kLoadingStd = 0.01;
  constexpr double kIdioLow = 1e-4;
  constexpr double kIdioHigh = 4e-4;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> mu_dist(kMuLow, kMuHigh);
  std::normal_distribution<double> load_dist(0.0, kLoadingStd);
  std::uniform_real_distribution<double> idio_dist(kIdioLow, kIdioHigh);

  AssetUniverse u;
  u.mean_returns.resize(n_assets);
  for (int i = 0; i < n_assets; ++i) u.mean_returns(i) = mu_dist(rng);
  Eigen::MatrixXd f(kFactors, n_assets);
  for (int r = 0; r < kFactors; ++r) {
    for (int c = 0; c < n_assets; ++c) f(r, c) = load_dist(rng);
  }
  u.covariance = f.transpose() * f;
  for (int i = 0; i < n_assets; ++i) u.covariance(i, i) += idio_dist(rng);
  // Exact symmetry regardless of the product's rounding.
  u.covariance = 0.5 * (u.covariance + u.covariance.transpose()).eval();
  u.target_return = kDefaultTargetReturn;
  return u;
}

double risk_cost(const AssetUniverse& u, const Bitstring& x) {
  if (x.width() != u.n_assets()) {
    throw WidthMismatchError("portfolio width does not match universe size");
  }
  const int k = hamming_weight(x);
  if (k == 0) throw UndefinedCostError("empty portfolio has no defined risk");
  double quad = 0.0;
  for (int i = 0; i < x.width(); ++i) {
    if (!x.bit(i)) continue;
    for (int j = 0; j < x.width(); ++j) {
      if (x.bit(j)) quad += u.covariance(i, j);
    }
  }
  return std::sqrt(quad) / static_cast<double>(k);
}

CostOracle make_risk_oracle(AssetUniverse universe) {
  return [u = std::move(universe)](const Bitstring& x) { return risk_cost(u, x); };
}

void save_universe(const AssetUniverse& u, const std::filesystem::path& mu_csv,
                   const std::filesystem::path& cov_csv) {
  std::ofstream mu(mu_csv);
  std::ofstream cov(cov_csv);
  if (!mu || !cov) throw IoError("cannot open universe files for writing");
  mu << "asset,mu\n";
  for (int i = 0; i < u.n_assets(); ++i) {
    mu << i << ',' << format_double(u.mean_returns(i)) << '\n';
  }
  for (int i = 0; i < u.n_assets(); ++i) {
    for (int j = 0; j < u.n_assets(); ++j) {
      if (j) cov << ',';
      cov << format_double(u.covariance(i, j));
    }
    cov << '\n';
  }
}

AssetUniverse load_universe(const std::filesystem::path& mu_csv,
                            const std::filesystem::path& cov_csv, double target_return) {
  std::ifstream mu(mu_csv);
  if (!mu) throw IoError("cannot open " + mu_csv.string());
  std::string line;
  if (!std::getline(mu, line) || trim(line) != "asset,mu") {
    throw ConfigError(mu_csv.string() + ": expected header 'asset,mu'");
  }
  std::vector<double> mus;
  while (std::getline(mu, line)) {
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 2) throw ConfigError(mu_csv.string() + ": bad row '" + line + "'");
    mus.push_back(parse_double(fields[1]));
  }
  const auto n = static_cast<Eigen::Index>(mus.size());
  AssetUniverse u;
  u.mean_returns = Eigen::Map<Eigen::VectorXd>(mus.data(), n);
  u.covariance.resize(n, n);
  std::ifstream cov(cov_csv);
  if (!cov) throw IoError("cannot open " + cov_csv.string());
  Eigen::Index row = 0;
  while (std::getline(cov, line)) {
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    if (row >= n || static_cast<Eigen::Index>(fields.size()) != n) {
      throw ConfigError(cov_csv.string() + ": covariance must be " + std::to_string(n) +
                        "x" + std::to_string(n));
    }
    for (Eigen::Index j = 0; j < n; ++j) u.covariance(row, j) = parse_double(fields[j]);
    ++row;
  }
  if (row != n) throw ConfigError(cov_csv.string() + ": too few covariance rows");
  u.target_return = target_return;
  validate_universe(u);
  return u;
}

// ---------------------------------------------------------------------------

std::vector<Bitstring> TrainingSet::members() const {
  std::vector<Bitstring> out;
  out.reserve(samples.unique_size());
  for (const auto& [bits, c] : samples.counts()) out.emplace_back(width(), bits);
  return out;
}

std::uint64_t training_size(std::uint64_t space_size, double epsilon) {
  const auto t = static_cast<std::uint64_t>(std::llround(epsilon * static_cast<double>(space_size)));
  return std::max<std::uint64_t>(t, 1);
}

TrainingSet draw_training_set(const SolutionSpace& space, double epsilon,
                              std::uint64_t seed) {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) {
    throw ConfigError("seen portion epsilon must lie in (0, 1]");
  }
  auto pool = enumerate_space(space);
  const std::uint64_t t = std::min<std::uint64_t>(training_size(space.size(), epsilon),
                                                  pool.size());
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first t slots end up a uniform t-subset.
  for (std::uint64_t i = 0; i < t; ++i) {
    std::uniform_int_distribution<std::uint64_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  SampleMultiset samples(space.width());
  for (std::uint64_t i = 0; i < t; ++i) samples.add(pool[i]);
  return TrainingSet{std::move(samples), epsilon, std::nullopt, space};
}

TrainingSet reweight(const TrainingSet& ts, const CostOracle& cost) {
  if (ts.weights) throw ConfigError("training set is already reweighted");
  std::vector<std::uint32_t> keys;
  std::vector<double> costs;
  for (const auto& [bits, c] : ts.samples.counts()) {
    keys.push_back(bits);
    costs.push_back(cost(Bitstring(ts.width(), bits)));
    if (!std::isfinite(costs.back())) {
      throw UndefinedCostError("non-finite cost for training sample");
    }
  }
  const double n = static_cast<double>(costs.size());
  double mean = 0.0;
  for (double c : costs) mean += c;
  mean /= n;
  double var = 0.0;
  for (double c : costs) var += (c - mean) * (c - mean);
  const double stddev = std::sqrt(var / n);

  std::map<std::uint32_t, double> w;
  if (stddev == 0.0) {
    for (auto k : keys) w[k] = 1.0 / n;
  } else {
    const double beta = 1.0 / stddev;
    const double cmin = *std::min_element(costs.begin(), costs.end());
    std::vector<double> e(costs.size());
    double z = 0.0;
    for (std::size_t i = 0; i < costs.size(); ++i) {
      e[i] = std::exp(-beta * (costs[i] - cmin));
      z += e[i];
    }
    for (std::size_t i = 0; i < keys.size(); ++i) w[keys[i]] = e[i] / z;
  }
  TrainingSet out = ts;
  out.weights = std::move(w);
  return out;
}

void write_dataset(const std::filesystem::path& path, const TrainingSet& ts,
                   const CostOracle* cost) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& [bits, c] : ts.samples.counts()) {
    const Bitstring x(ts.width(), bits);
    out << x.to_text();
    if (cost || ts.weights) {
      out << ',' << (cost ? format_double((*cost)(x)) : std::string("nan"));
    }
    if (ts.weights) out << ',' << format_double(ts.weights->at(bits));
    out << '\n';
  }
}

std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<DatasetRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() > 3) throw ConfigError(path.string() + ": too many columns");
    DatasetRecord rec{Bitstring::from_text(trim(fields[0])), std::nullopt, std::nullopt};
    if (fields.size() > 1 && trim(fields[1]) != "nan") rec.cost = parse_double(fields[1]);
    if (fields.size() > 2) rec.weight = parse_double(fields[2]);
    if (!out.empty() && out.front().x.width() != rec.x.width()) {
      throw WidthMismatchError(path.string() + ": mixed bitstring widths");
    }
    out.push_back(rec);
  }
  return out;
}

void write_samples(const std::filesystem::path& path, const SampleMultiset& samples) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& [bits, c] : samples.counts()) {
    const std::string text = Bitstring(samples.width(), bits).to_text();
    for (std::uint64_t i = 0; i < c; ++i) out << text << '\n';
  }
}

SampleMultiset read_samples(const std::filesystem::path& path) {
  const auto records = read_dataset(path);
  if (records.empty()) throw ConfigError(path.string() + ": no samples");
  SampleMultiset out(records.front().x.width());
  for (const auto& r : records) out.add(r.x);
  return out;
}

TrainingSet training_set_from_records(const std::vector<DatasetRecord>& records,
                                      const SolutionSpace& space) {
  if (records.empty()) throw InvalidTrainingSetError("empty training set");
  SampleMultiset samples(space.width());
  bool weighted = records.front().weight.has_value();
  std::map<std::uint32_t, double> weights;
  for (const auto& r : records) {
    if (r.x.width() != space.width()) {
      throw WidthMismatchError("training sample width does not match the space");
    }
    if (!space.contains(r.x)) {
      throw InvalidTrainingSetError("training sample " + r.x.to_text() + " is invalid");
    }
    if (samples.contains(r.x.bits())) {
      throw InvalidTrainingSetError("duplicate training sample " + r.x.to_text());
    }
    samples.add(r.x);
    if (weighted != r.weight.has_value()) {
      throw ConfigError("weight column present on some rows only");
    }
    if (weighted) weights[r.x.bits()] = *r.weight;
  }
  const double eps =
      static_cast<double>(samples.unique_size()) / static_cast<double>(space.size());
  TrainingSet ts{std::move(samples), eps, std::nullopt, space};
  if (weighted) {
    double sum = 0.0;
    for (const auto& [k, w] : weights) sum += w;
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("dataset weights do not sum to 1");
    ts.weights = std::move(weights);
  }
  return ts;
}

}  // namespace genbench
