#include "genbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "genbench/errors.hpp"

namespace genbench {

namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
  return static_cast<double>(num) / static_cast<double>(den);
}

// Unseen-valid queries with multiplicity, as (cost, encoding) pairs sorted
// ascending. Ties in cost resolve to the lower encoding first.
std::vector<std::pair<double, std::uint32_t>> sorted_solution_costs(
    const SampleMultiset& g_sol, const CostOracle& cost) {
  std::vector<std::pair<double, std::uint32_t>> out;
  out.reserve(g_sol.total());
  for (const auto& [bits, c] : g_sol.counts()) {
    const double v = cost(Bitstring(g_sol.width(), bits));
    for (std::uint64_t i = 0; i < c; ++i) out.emplace_back(v, bits);
  }
  std::sort(out.begin(), out.end());
  return out;
}

double mean_of_first(const std::vector<std::pair<double, std::uint32_t>>& sorted,
                     std::uint64_t n) {
  double sum = 0.0;
  for (std::uint64_t i = 0; i < n; ++i) sum += sorted[i].first;
  return sum / static_cast<double>(n);
}

}  // namespace

CoverageReferences coverage_references(std::uint64_t space_size, std::uint64_t train_size,
                                       std::uint64_t queries) {
  if (train_size >= space_size) {
    throw EvaluationError("coverage references need T < |S|");
  }
  if (queries < 1) throw EvaluationError("coverage references need Q >= 1");
  CoverageReferences r;
  r.upper_bound = ratio(std::min(queries, space_size), space_size);
  const double unseen = static_cast<double>(space_size - train_size);
  // 1 - (1 - 1/u)^Q evaluated as -expm1(Q log1p(-1/u)).
  r.ideal_coverage = -std::expm1(static_cast<double>(queries) * std::log1p(-1.0 / unseen));
  return r;
}

double coverage_ratio(double coverage, double ideal_coverage) {
  if (ideal_coverage == 0.0) throw EvaluationError("ideal coverage is zero");
  return coverage / ideal_coverage;
}

GeneralizationReport validity_metrics(const TrainingSet& train, const SolutionSpace& space,
                                      const SampleMultiset& queries) {
  if (queries.total() == 0) throw EvaluationError("no queries to evaluate (Q = 0)");
  const auto parts = partition_queries(queries, train.samples, space);

  GeneralizationReport r;
  auto& n = r.counts;
  n.queries = queries.total();
  n.g_new = parts.g_new.total();
  n.g_sol = parts.g_sol.total();
  n.g_sol_unique = parts.g_sol.unique_size();
  n.d_gen_unique = queries.unique_size();
  n.train_size = train.size();
  n.space_size = space.size();

  r.seen_portion = train.seen_portion;
  r.exploration = ratio(n.g_new, n.queries);
  r.data_copying = 1.0 - r.exploration;
  if (n.g_new > 0) r.fidelity = ratio(n.g_sol, n.g_new);
  r.rate = ratio(n.g_sol, n.queries);
  if (train.seen_portion < 1.0) r.rate_normalized = r.rate / (1.0 - train.seen_portion);
  r.coverage_per_query = ratio(n.g_sol_unique, n.queries);
  if (n.train_size < n.space_size) {
    r.coverage = ratio(n.g_sol_unique, n.space_size - n.train_size);
    r.references = coverage_references(n.space_size, n.train_size, n.queries);
    r.coverage_over_ideal = coverage_ratio(*r.coverage, r.references->ideal_coverage);
  }
  return r;
}

MinimumValue minimum_value(std::span<const SampleMultiset> batches, const TrainingSet& train,
                           const SolutionSpace& space, const CostOracle& cost) {
  if (batches.empty()) throw EvaluationError("minimum value needs at least one batch");
  MinimumValue out;
  double sum = 0.0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const auto parts = partition_queries(batches[b], train.samples, space);
    if (parts.g_sol.empty()) {
      throw NoValidSamplesError("batch " + std::to_string(b) +
                                " has no unseen valid samples");
    }
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [bits, c] : parts.g_sol.counts()) {
      best = std::min(best, cost(Bitstring(space.width(), bits)));
    }
    out.batch_minima.push_back(best);
    sum += best;
  }
  out.mv = sum / static_cast<double>(batches.size());
  out.mv_train = std::numeric_limits<double>::infinity();
  for (const auto& [bits, c] : train.samples.counts()) {
    out.mv_train = std::min(out.mv_train, cost(Bitstring(space.width(), bits)));
  }
  return out;
}

std::uint64_t utility_cutoff(std::uint64_t size, double t_percent) {
  const double n = std::ceil(t_percent * static_cast<double>(size) / 100.0);
  return std::clamp<std::uint64_t>(static_cast<std::uint64_t>(n), 1, size);
}

Utility utility(const SampleMultiset& queries, const TrainingSet& train,
                const SolutionSpace& space, const CostOracle& cost, double t_percent) {
  if (!(t_percent > 0.0 && t_percent <= 100.0)) {
    throw EvaluationError("utility percentile must lie in (0, 100]");
  }
  const auto parts = partition_queries(queries, train.samples, space);
  if (parts.g_sol.empty()) throw NoValidSamplesError("no unseen valid samples for utility");

  const auto gen = sorted_solution_costs(parts.g_sol, cost);
  const auto tr = sorted_solution_costs(train.samples, cost);
  Utility u;
  u.u = mean_of_first(gen, utility_cutoff(gen.size(), t_percent));
  u.u_train = mean_of_first(tr, utility_cutoff(tr.size(), t_percent));
  return u;
}

std::uint64_t count_below_threshold(const SampleMultiset& queries, const TrainingSet& train,
                                    const SolutionSpace& space, const CostOracle& cost,
                                    double c_prime) {
  const auto parts = partition_queries(queries, train.samples, space);
  std::uint64_t n = 0;
  for (const auto& [bits, c] : parts.g_sol.counts()) {
    if (cost(Bitstring(space.width(), bits)) < c_prime) ++n;
  }
  return n;
}

double kl_divergence(std::span<const double> reference, std::span<const double> model) {
  if (reference.size() != model.size() || reference.empty()) {
    throw EvaluationError("KL divergence needs distributions over the same support");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    if (!(reference[i] >= 0.0) || !(model[i] >= 0.0)) {
      throw EvaluationError("KL divergence needs non-negative probabilities");
    }
    sum += reference[i];
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw EvaluationError("KL reference distribution does not sum to 1");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    if (reference[i] > 0.0) {
      kl += reference[i] * std::log(reference[i] / std::max(model[i], kKlFloor));
    }
  }
  return std::max(kl, 0.0);
}

BatchStats aggregate_stats(std::span<const double> values) {
  if (values.size() < 2) throw EvaluationError("batch statistics need at least two values");
  const double n = static_cast<double>(values.size());
  BatchStats s;
  for (double v : values) s.mean += v;
  s.mean /= n;
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(var / n);
  if (s.mean != 0.0) s.rel_pct_error = 100.0 * s.stddev / std::abs(s.mean);
  return s;
}

std::string to_string(Behaviour b) {
  switch (b) {
    case Behaviour::perfect_generalization:
      return "perfect_generalization";
    case Behaviour::perfect_memorization:
      return "perfect_memorization";
    case Behaviour::anomalous_pre_generalization:
      return "anomalous_pre_generalization";
    case Behaviour::mode_collapse_unseen_valid:
      return "mode_collapse_unseen_valid";
    case Behaviour::mode_collapse_unseen_invalid:
      return "mode_collapse_unseen_invalid";
    case Behaviour::mode_collapse_seen:
      return "mode_collapse_seen";
    case Behaviour::healthy:
      return "healthy";
    case Behaviour::indeterminate:
      return "indeterminate";
  }
  return "indeterminate";
}

Behaviour classify_behaviour(const GeneralizationReport& r, const ClassifierTolerances& tol) {
  const auto& n = r.counts;
  const auto one = [&](double v) { return v >= tol.near_one; };
  const auto zero = [&](double v) { return v <= tol.near_zero; };
  // No unseen solutions exist when T = |S|, so an undefined C counts as ~0.
  const bool c_zero =
      !r.coverage ||
      *r.coverage <= tol.coverage_zero_units / static_cast<double>(n.space_size - n.train_size);
  const bool c_one = r.coverage && one(*r.coverage);
  const double small_dgen =
      std::max(tol.small_dgen_floor, tol.small_dgen_fraction * static_cast<double>(n.train_size));
  const bool few_unique = static_cast<double>(n.d_gen_unique) <= small_dgen;

  const bool f_one = r.fidelity && one(*r.fidelity);
  const bool f_zero = r.fidelity && zero(*r.fidelity);

  if (one(r.exploration) && f_one && one(r.rate) && c_one) {
    return Behaviour::perfect_generalization;
  }
  if (zero(r.exploration) && zero(r.rate) && c_zero) {
    return few_unique ? Behaviour::mode_collapse_seen : Behaviour::perfect_memorization;
  }
  if (one(r.exploration) && f_one && one(r.rate) && c_zero) {
    return Behaviour::mode_collapse_unseen_valid;
  }
  if (one(r.exploration) && f_zero && zero(r.rate) && c_zero) {
    return few_unique ? Behaviour::mode_collapse_unseen_invalid
                      : Behaviour::anomalous_pre_generalization;
  }
  if (!zero(r.exploration) && r.fidelity && !zero(*r.fidelity) && !zero(r.rate) &&
      r.coverage && !c_zero) {
    return Behaviour::healthy;
  }
  return Behaviour::indeterminate;
}

}  // namespace genbench
