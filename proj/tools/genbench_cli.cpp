// Command-line front end: one subcommand per pipeline stage.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "genbench/errors.hpp"
#include "genbench/harness.hpp"
#include "genbench/text.hpp"

namespace fs = std::filesystem;
using namespace genbench;
using namespace genbench::harness;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitEvaluation = 4;

struct GlobalOptions {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed_dataset;
  std::optional<std::uint64_t> seed_train;
  std::optional<std::uint64_t> seed_sample;
  std::optional<fs::path> out;
};

ExperimentConfig resolve(const GlobalOptions& g) {
  ExperimentConfig c = g.config ? load_config(*g.config) : desk_config();
  if (g.seed_dataset) c.seed_dataset = *g.seed_dataset;
  if (g.seed_train) c.seed_train = *g.seed_train;
  if (g.seed_sample) c.seed_sample = *g.seed_sample;
  if (g.out) c.output_dir = *g.out;
  validate(c);
  return c;
}

fs::path ensure_out(const ExperimentConfig& c) {
  fs::create_directories(c.output_dir);
  return c.output_dir;
}

void print_summary(const RunArtifact& a) {
  std::cout << "T=" << a.instance.train.size() << " |S|=" << a.instance.space.size()
            << " label=" << to_string(a.label) << '\n';
  for (const auto& s : a.stats) {
    std::cout << "  " << s.metric << ": ";
    if (s.stats) {
      std::cout << format_double(s.stats->mean) << " +- " << format_double(s.stats->stddev);
    } else {
      std::cout << "nan";
    }
    std::cout << '\n';
  }
  if (a.kl_train) {
    std::cout << "  KL_Train=" << format_double(*a.kl_train)
              << " KL_Target=" << format_double(*a.kl_target) << '\n';
  }
}

void write_checkpoint(const TrainedModel& m, const ExperimentConfig& c, const fs::path& path) {
  if (m.mps) {
    tnbm::save_mps(*m.mps, path);
  } else if (m.gan) {
    auto g = c.gan;
    g.n_epochs = c.n_epochs;
    g.seed = c.seed_train + static_cast<std::uint64_t>(m.selected_run);
    gan::save_gan(*m.gan, g, path);
  } else {
    throw ConfigError("the random baseline has no checkpoint");
  }
}

TrainedModel read_checkpoint(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.contains("format")) {
    throw ConfigError(path.string() + ": not a model checkpoint");
  }
  TrainedModel m;
  if (j.at("format") == "genbench-mps") {
    m.kind = ModelKind::tnbm;
    m.mps = tnbm::load_mps(path);
    m.width = m.mps->n_sites();
    m.parameter_count = m.mps->parameter_count();
  } else if (j.at("format") == "genbench-gan") {
    m.kind = ModelKind::gan;
    m.gan = gan::load_gan(path).first;
    m.width = m.gan->generator.output_size();
    m.parameter_count =
        m.gan->generator.parameter_count() + m.gan->discriminator.parameter_count();
  } else {
    throw ConfigError(path.string() + ": unknown checkpoint format");
  }
  return m;
}

void write_loss_history(const TrainedModel& m, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "epoch,loss,discriminator_loss\n";
  for (const auto& r : m.loss_history) {
    out << r.epoch << ',' << format_double(r.loss) << ',' << format_optional(r.discriminator_loss)
        << '\n';
  }
}

std::vector<std::uint64_t> parse_q_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& field : split_csv(s)) {
    const double v = parse_double(field);
    if (!(v >= 1.0) || v != static_cast<double>(static_cast<std::uint64_t>(v))) {
      throw ConfigError("Q values must be positive integers, got '" + field + "'");
    }
    out.push_back(static_cast<std::uint64_t>(v));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generalization benchmark for generative models on constrained bitstrings"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--config", g.config, "Experiment config (JSON); desk defaults when omitted")
      ->check(CLI::ExistingFile);
  app.add_option("--seed-dataset", g.seed_dataset, "Training-set draw seed");
  app.add_option("--seed-train", g.seed_train, "Model initialization and training seed");
  app.add_option("--seed-sample", g.seed_sample, "Query sampling seed");
  app.add_option("--out", g.out, "Output directory");

  auto* gen_universe = app.add_subcommand("gen-universe", "Write a synthetic asset universe");
  int n_assets = 12;
  std::uint64_t universe_seed = 7;
  gen_universe->add_option("--n", n_assets, "Number of assets")->check(CLI::Range(1, kMaxWidth));
  gen_universe->add_option("--universe-seed", universe_seed, "Universe seed");

  auto* make_dataset = app.add_subcommand("make-dataset", "Draw (and optionally reweight) a training set");

  auto* train = app.add_subcommand("train", "Train the configured model");

  auto* sample = app.add_subcommand("sample", "Draw queries from a checkpoint");
  fs::path model_path;
  std::optional<std::uint64_t> sample_count;
  sample->add_option("--model", model_path, "Checkpoint written by train")
      ->required()
      ->check(CLI::ExistingFile);
  sample->add_option("--count", sample_count, "Number of queries (default: config Q)");

  auto* eval = app.add_subcommand("eval", "Evaluate a samples file against a training set");
  fs::path samples_path;
  std::optional<fs::path> dataset_path;
  eval->add_option("--samples", samples_path, "Samples CSV")->required()->check(CLI::ExistingFile);
  eval->add_option("--dataset", dataset_path, "Dataset CSV (default: redraw from config)")
      ->check(CLI::ExistingFile);

  auto* sweep_q_cmd = app.add_subcommand("sweep-q", "Metric trends over cumulative query counts");
  std::string q_list = "1000,10000,100000";
  sweep_q_cmd->add_option("--q", q_list, "Ascending comma-separated Q values");

  auto* sweep_ds = app.add_subcommand("sweep-datasets", "Metric stability across training sets");
  int n_datasets = 5;
  sweep_ds->add_option("--n-datasets", n_datasets, "Number of datasets")->check(CLI::Range(2, 1000));

  auto* report = app.add_subcommand("report", "Full run: dataset, training, sampling, report files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen_universe->parsed()) {
      const fs::path out = g.out.value_or("out");
      fs::create_directories(out);
      save_universe(synth_universe(n_assets, universe_seed), out / "mu.csv", out / "cov.csv");
      std::cout << "wrote " << (out / "mu.csv").string() << " and " << (out / "cov.csv").string()
                << '\n';
      return kExitOk;
    }

    const ExperimentConfig cfg = resolve(g);

    if (make_dataset->parsed()) {
      const auto inst = build_instance(cfg);
      const auto path = ensure_out(cfg) / "dataset.csv";
      write_dataset(path, inst.train, inst.cost ? &inst.cost : nullptr);
      std::cout << "T=" << inst.train.size() << " of |S|=" << inst.space.size() << " -> "
                << path.string() << '\n';
    } else if (train->parsed()) {
      const Prepared prep = prepare(cfg);
      const auto dir = ensure_out(cfg);
      write_dataset(dir / "dataset.csv", prep.instance.train,
                    prep.instance.cost ? &prep.instance.cost : nullptr);
      write_loss_history(prep.model, dir / "loss_history.csv");
      write_checkpoint(prep.model, cfg, dir / "model.json");
      std::cout << "parameters=" << prep.model.parameter_count;
      if (!prep.model.loss_history.empty()) {
        std::cout << " final_loss=" << format_double(prep.model.loss_history.back().loss);
      }
      std::cout << " -> " << (dir / "model.json").string() << '\n';
    } else if (sample->parsed()) {
      const TrainedModel m = read_checkpoint(model_path);
      std::mt19937_64 rng(cfg.seed_sample);
      const auto q = QuerySampler(m).draw(sample_count.value_or(cfg.queries), rng);
      const auto path = ensure_out(cfg) / "samples.csv";
      write_samples(path, q);
      std::cout << q.total() << " samples (" << q.unique_size() << " unique) -> " << path.string()
                << '\n';
    } else if (eval->parsed()) {
      Instance inst = build_instance(cfg);
      if (dataset_path) {
        inst.train = training_set_from_records(read_dataset(*dataset_path), inst.space);
      }
      const auto q = read_samples(samples_path);
      ExperimentConfig c = cfg;
      c.queries = q.total();
      TrainedModel external;
      external.width = q.width();
      external.external = true;
      const auto a = evaluate_samples(c, inst, external, {q});
      const auto path = ensure_out(cfg) / "metrics.csv";
      std::ofstream(path) << metrics_csv(a);
      std::cout << metrics_csv(a);
    } else if (sweep_q_cmd->parsed()) {
      const auto rows = sweep_q(cfg, parse_q_list(q_list));
      const auto path = ensure_out(cfg) / "trend_q.csv";
      write_trend(rows, path);
      std::cout << "wrote " << path.string() << '\n';
    } else if (sweep_ds->parsed()) {
      const auto table = sweep_datasets(cfg, n_datasets);
      const auto path = ensure_out(cfg) / "stability.csv";
      write_stability(table, path);
      std::cout << "wrote " << path.string() << '\n';
    } else if (report->parsed()) {
      const auto a = run_experiment(cfg);
      print_summary(a);
      std::cout << "report -> " << (cfg.output_dir / cfg.run_id).string() << '\n';
    }
    return kExitOk;
  } catch (const TrainingDivergedError& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const EvaluationError& e) {
    std::cerr << "evaluation error: " << e.what() << '\n';
    return kExitEvaluation;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const Error& e) {
    // Config, width, training-set, cost and space-size errors are all input problems.
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}
