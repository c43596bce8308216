#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "genbench/bitcore.hpp"
#include "genbench/tasks.hpp"

namespace genbench {

/// Exact integer bookkeeping behind a GeneralizationReport.
struct ValidityCounts {
  std::uint64_t queries = 0;        // Q
  std::uint64_t g_new = 0;          // |G_new|, unseen queries with multiplicity
  std::uint64_t g_sol = 0;          // |G_sol|, unseen valid queries with multiplicity
  std::uint64_t g_sol_unique = 0;   // |g_sol|
  std::uint64_t d_gen_unique = 0;   // |d_gen|, distinct queries
  std::uint64_t train_size = 0;     // T
  std::uint64_t space_size = 0;     // |S|
};

struct CoverageReferences {
  double upper_bound = 0;        // UB = min(Q, |S|) / |S|
  double ideal_coverage = 0;     // C_bar = 1 - (1 - 1/(|S|-T))^Q
};

/// Pre-generalization and validity-based metrics for one query batch.
/// Undefined values are empty optionals and serialize as "nan".
struct GeneralizationReport {
  ValidityCounts counts;
  double seen_portion = 0;             // epsilon
  double exploration = 0;              // E
  double data_copying = 0;             // D = 1 - E
  std::optional<double> fidelity;      // F, undefined when |G_new| = 0
  double rate = 0;                     // R
  std::optional<double> rate_normalized;   // R / (1 - epsilon), undefined at epsilon = 1
  std::optional<double> coverage;          // C, undefined when T = |S|
  /// |g_sol| / Q: the query-budget denominator variant of coverage.
  std::optional<double> coverage_per_query;
  std::optional<CoverageReferences> references;  // undefined when T = |S|
  std::optional<double> coverage_over_ideal;     // C / C_bar
};

GeneralizationReport validity_metrics(const TrainingSet& train, const SolutionSpace& space,
                                      const SampleMultiset& queries);

/// Throws EvaluationError when T >= |S| or Q < 1.
CoverageReferences coverage_references(std::uint64_t space_size, std::uint64_t train_size,
                                       std::uint64_t queries);

/// C / C_bar. Throws EvaluationError when C_bar is zero.
double coverage_ratio(double coverage, double ideal_coverage);

// ---------------------------------------------------------------------------
// Quality-based metrics

struct MinimumValue {
  double mv = 0;              // mean of the batch minima over unseen-valid samples
  double mv_train = 0;        // lowest training cost
  std::vector<double> batch_minima;
};

/// Throws NoValidSamplesError naming the first batch without unseen-valid
/// samples.
MinimumValue minimum_value(std::span<const SampleMultiset> batches, const TrainingSet& train,
                           const SolutionSpace& space, const CostOracle& cost);

struct Utility {
  double u = 0;        // mean cost of the best t% of G_sol
  double u_train = 0;  // same statistic over the training samples
};

/// Number of samples making up the best t% of a set of the given size:
/// ceil(t * size / 100), at least 1.
std::uint64_t utility_cutoff(std::uint64_t size, double t_percent);

Utility utility(const SampleMultiset& queries, const TrainingSet& train,
                const SolutionSpace& space, const CostOracle& cost, double t_percent);

/// Unique unseen-valid queries with cost strictly below c_prime.
std::uint64_t count_below_threshold(const SampleMultiset& queries, const TrainingSet& train,
                                    const SolutionSpace& space, const CostOracle& cost,
                                    double c_prime);

/// Per-batch quality summary. Fields are empty when the batch has no
/// unseen-valid samples or the task has no cost oracle.
struct QualityReport {
  std::optional<double> mv;
  std::optional<double> mv_train;
  std::optional<double> u;
  std::optional<double> u_train;
  double t_percent = 5.0;
  std::optional<std::uint64_t> n_below_critical;
  std::optional<double> c_prime;
};

// ---------------------------------------------------------------------------

inline constexpr double kKlFloor = 1e-12;

/// sum_x ref(x) ln(ref(x) / max(model(x), 1e-12)) over ref(x) > 0. Both
/// vectors are indexed by bitstring encoding. Throws EvaluationError for
/// malformed inputs.
double kl_divergence(std::span<const double> reference, std::span<const double> model);

struct BatchStats {
  double mean = 0;
  double stddev = 0;                       // population
  std::optional<double> rel_pct_error;     // 100 * stddev / mean, undefined at mean 0
};

/// Throws EvaluationError for fewer than two values.
BatchStats aggregate_stats(std::span<const double> values);

// ---------------------------------------------------------------------------

enum class Behaviour {
  perfect_generalization,
  perfect_memorization,
  anomalous_pre_generalization,
  mode_collapse_unseen_valid,
  mode_collapse_unseen_invalid,
  mode_collapse_seen,
  healthy,
  indeterminate,
};

std::string to_string(Behaviour b);

struct ClassifierTolerances {
  double near_one = 0.99;        // "~1"
  double near_zero = 0.01;       // "~0" for E, F and R
  double coverage_zero_units = 10.0;  // "~0" for C, in units of 1/(|S|-T)
  double small_dgen_fraction = 0.01;  // |d_gen| << T means <= max(3, fraction*T)
  double small_dgen_floor = 3.0;
};

Behaviour classify_behaviour(const GeneralizationReport& report,
                             const ClassifierTolerances& tol = {});

}  // namespace genbench
