#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "genbench/bitcore.hpp"
#include "genbench/gan.hpp"
#include "genbench/metrics.hpp"
#include "genbench/tasks.hpp"
#include "genbench/tnbm.hpp"

namespace genbench::harness {

inline constexpr int kSchemaVersion = 1;

enum class ModelKind { tnbm, gan, random };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

/// Where the asset universe of a cardinality task comes from: a synthetic
/// draw (default) or a pair of CSV files.
struct UniverseSource {
  std::uint64_t synthetic_seed = 7;
  std::optional<std::filesystem::path> mu_csv;
  std::optional<std::filesystem::path> cov_csv;
  double target_return = 0.002;
};

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  std::string run_id = "run";
  SpaceParams task{SpaceKind::cardinality, 12, 6, Parity::even, 0, 0};
  UniverseSource universe;
  double epsilon = 0.05;
  bool reweight = false;

  ModelKind model = ModelKind::tnbm;
  tnbm::TnbmTrainConfig tnbm;
  gan::GanConfig gan;
  int n_epochs = 100;
  /// Independent trainings (train seeds seed_train + r); the one with the
  /// lowest final loss is kept.
  int n_training_runs = 1;

  std::uint64_t queries = 10000;
  int n_query_batches = 15;
  int mv_batches = 5;
  double utility_t = 5.0;

  std::uint64_t seed_dataset = 1;
  std::uint64_t seed_train = 2;
  std::uint64_t seed_sample = 3;

  std::filesystem::path output_dir = "out";
  ClassifierTolerances tolerances;
};

/// N=12, k=6, eps=0.05, TNBM with bond 7, Q=1e4, 15 batches.
ExperimentConfig desk_config();
/// N=20, k=10, eps=0.01, Q=1e5, 15 batches.
ExperimentConfig paper_scale_config();

/// Throws ConfigError naming the offending field.
void validate(const ExperimentConfig& cfg);

/// Unknown keys are rejected; absent keys keep their defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

// ---------------------------------------------------------------------------

/// Q i.i.d. uniform bitstrings over {0,1}^N.
SampleMultiset random_baseline_sample(int width, std::uint64_t count, std::uint64_t seed);

/// Solution space, universe and training set of one configuration.
struct Instance {
  SolutionSpace space;
  std::optional<AssetUniverse> universe;  // cardinality tasks only
  CostOracle cost;                        // empty without a universe
  TrainingSet train;
};

Instance build_instance(const ExperimentConfig& cfg);

struct LossRecord {
  int epoch = 0;
  double loss = 0;  // NLL (TNBM) or generator loss (GAN)
  std::optional<double> discriminator_loss;
};

struct TrainedModel {
  ModelKind kind = ModelKind::random;
  int width = 0;
  std::optional<tnbm::MpsModel> mps;
  std::optional<gan::GanModel> gan;
  std::vector<LossRecord> loss_history;     // of the selected run
  std::vector<double> final_losses;         // one per training run
  int selected_run = 0;
  std::size_t parameter_count = 0;
  /// Queries came from outside (a samples file); distributions are empirical.
  bool external = false;
};

TrainedModel train_model(const ExperimentConfig& cfg, const TrainingSet& train);

/// Draws queries from any trained model kind.
class QuerySampler {
 public:
  explicit QuerySampler(const TrainedModel& model);
  SampleMultiset draw(std::uint64_t count, std::mt19937_64& rng) const;
  /// Appends count draws to an existing multiset.
  void extend(SampleMultiset& into, std::uint64_t count, std::mt19937_64& rng) const;

 private:
  ModelKind kind_;
  int width_;
  std::optional<tnbm::MpsSampler> mps_;
  std::optional<gan::GanSampler> gan_;
};

/// Seed of independent query batch b.
std::uint64_t batch_seed(std::uint64_t seed_sample, int batch);

struct Prepared {
  ExperimentConfig cfg;
  Instance instance;
  TrainedModel model;
};

/// Dataset and training stages.
Prepared prepare(const ExperimentConfig& cfg);

struct BatchResult {
  GeneralizationReport validity;
  QualityReport quality;
  Behaviour label = Behaviour::indeterminate;
};

struct NamedStats {
  std::string metric;
  std::optional<BatchStats> stats;  // absent when a batch leaves it undefined
};

struct RunArtifact {
  ExperimentConfig cfg;
  Instance instance;
  TrainedModel model;
  std::vector<BatchResult> batches;
  SampleMultiset pooled_queries;
  std::optional<double> aggregate_mv;  // over the first mv_batches batches
  std::vector<NamedStats> stats;
  Behaviour label = Behaviour::indeterminate;  // majority over batches
  std::optional<double> kl_train;
  std::optional<double> kl_target;
  std::string started_at;
  std::string finished_at;
  std::string code_version;
  std::optional<std::string> failure;
};

/// Validity, quality and behaviour of one query batch. Quality fields stay
/// empty without a cost oracle; MV and U also when the batch has no unseen
/// valid sample.
BatchResult evaluate_batch(const Instance& instance, const SampleMultiset& queries,
                           const ExperimentConfig& cfg);

/// Evaluation stage on given query batches. MV uses the first
/// min(mv_batches, batches) batches.
RunArtifact evaluate_samples(const ExperimentConfig& cfg, const Instance& instance,
                             const TrainedModel& model, const std::vector<SampleMultiset>& batches);

/// Sampling and evaluation stages on a prepared experiment.
RunArtifact evaluate(const Prepared& prepared);

/// Full pipeline; writes the report to output_dir/run_id. On failure a
/// failure-marked manifest is written and the error rethrown.
RunArtifact run_experiment(const ExperimentConfig& cfg);

/// Exact model probabilities over {0,1}^N when the model exposes them and
/// N <= 24, empirical frequencies of the pooled queries otherwise.
std::vector<double> model_distribution(const TrainedModel& model, const SampleMultiset& pooled);

// ---------------------------------------------------------------------------

struct TrendRow {
  std::uint64_t queries = 0;
  double e = 0;
  std::optional<double> f, r, c, mv, u;
  double ub = 0;
  double c_bar = 0;
};

/// Cumulative draws from one sampler stream: each row extends the previous
/// multiset. q_values must be ascending.
std::vector<TrendRow> sweep_q(const Prepared& prepared, const std::vector<std::uint64_t>& q_values);
std::vector<TrendRow> sweep_q(const ExperimentConfig& cfg, const std::vector<std::uint64_t>& q_values);

struct StabilityRow {
  std::uint64_t dataset_seed = 0;
  std::uint64_t train_size = 0;
  std::uint64_t space_size = 0;
  double e = 0;
  std::optional<double> f, r, c, mv, u;
};

struct StabilityTable {
  std::vector<StabilityRow> rows;
  std::vector<NamedStats> stats;  // across datasets
};

/// Repeats the pipeline with dataset seeds seed_dataset + i.
StabilityTable sweep_datasets(const ExperimentConfig& cfg, int n_datasets);

// ---------------------------------------------------------------------------

inline constexpr const char* kMetricsHeader =
    "run_id,batch_id,Q,T,S_size,E,F,R,R_tilde,C,D,UB,C_bar,C_over_C_bar,MV,MV_train,U,"
    "U_train,n_below_critical,label";

/// Writes metrics.csv, manifest.json, loss_history.csv,
/// risk_histogram.csv, utility_cutoffs.csv and cardinality_histogram.csv
/// into dir. A failed artifact gets only the manifest and a FAILED marker.
void export_report(const RunArtifact& artifact, const std::filesystem::path& dir);

std::string metrics_csv(const RunArtifact& artifact);
void write_trend(const std::vector<TrendRow>& rows, const std::filesystem::path& path);
/// Rows go to path; cross-dataset statistics to <stem>_stats<ext> beside it.
void write_stability(const StabilityTable& table, const std::filesystem::path& path);

}  // namespace genbench::harness
