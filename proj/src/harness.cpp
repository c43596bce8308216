#include "genbench/harness.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "genbench/errors.hpp"
#include "genbench/text.hpp"

#ifndef GENBENCH_VERSION
#define GENBENCH_VERSION "dev"
#endif

namespace genbench::harness {

namespace {

using nlohmann::json;

constexpr int kMaxKlWidth = 24;
constexpr int kRiskBins = 30;

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) ==
        allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void get_if(const json& j, const char* key, T& field) {
  if (j.contains(key)) j.at(key).get_to(field);
}

std::string parity_name(Parity p) { return p == Parity::even ? "even" : "odd"; }

Parity parity_from_string(const std::string& s) {
  if (s == "even") return Parity::even;
  if (s == "odd") return Parity::odd;
  throw ConfigError("parity must be 'even' or 'odd', got '" + s + "'");
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

// Rethrows the active genbench error with the run id prepended, keeping its type.
[[noreturn]] void rethrow_with_context(const std::string& run_id) {
  const std::string ctx = "run '" + run_id + "': ";
  try {
    throw;
  } catch (const ConfigError& e) {
    throw ConfigError(ctx + e.what());
  } catch (const TrainingDivergedError& e) {
    throw TrainingDivergedError(ctx + e.what());
  } catch (const NoValidSamplesError& e) {
    throw NoValidSamplesError(ctx + e.what());
  } catch (const EvaluationError& e) {
    throw EvaluationError(ctx + e.what());
  } catch (const IoError& e) {
    throw IoError(ctx + e.what());
  }
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Ascending costs with multiplicity; ties by encoding, as in the utility metric.
std::vector<std::pair<double, std::uint32_t>> sorted_costs(const SampleMultiset& s,
                                                           const CostOracle& cost) {
  std::vector<std::pair<double, std::uint32_t>> out;
  for (const auto& [bits, c] : s.counts()) {
    const double v = cost(Bitstring(s.width(), bits));
    for (std::uint64_t i = 0; i < c; ++i) out.emplace_back(v, bits);
  }
  std::sort(out.begin(), out.end());
  return out;
}

double train_utility(const TrainingSet& train, const CostOracle& cost, double t) {
  const auto sorted = sorted_costs(train.samples, cost);
  const auto n = utility_cutoff(sorted.size(), t);
  double s = 0.0;
  for (std::uint64_t i = 0; i < n; ++i) s += sorted[i].first;
  return s / static_cast<double>(n);
}

double train_minimum(const TrainingSet& train, const CostOracle& cost) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [bits, c] : train.samples.counts()) {
    best = std::min(best, cost(Bitstring(train.width(), bits)));
  }
  return best;
}

}  // namespace

BatchResult evaluate_batch(const Instance& inst, const SampleMultiset& queries,
                           const ExperimentConfig& cfg) {
  BatchResult b{validity_metrics(inst.train, inst.space, queries), {}, Behaviour::indeterminate};
  b.label = classify_behaviour(b.validity, cfg.tolerances);
  auto& q = b.quality;
  q.t_percent = cfg.utility_t;
  if (inst.cost) {
    q.mv_train = train_minimum(inst.train, inst.cost);
    q.u_train = train_utility(inst.train, inst.cost, cfg.utility_t);
    q.c_prime = q.mv_train;
    q.n_below_critical = count_below_threshold(queries, inst.train, inst.space, inst.cost, *q.c_prime);
    if (b.validity.counts.g_sol > 0) {
      const auto mv = minimum_value(std::span(&queries, 1), inst.train, inst.space, inst.cost);
      q.mv = mv.mv;
      q.u = utility(queries, inst.train, inst.space, inst.cost, cfg.utility_t).u;
    }
  }
  return b;
}

namespace {

// Values of one metric across batches; nullopt if any batch leaves it undefined.
template <typename Get>
std::optional<std::vector<double>> collect(const std::vector<BatchResult>& batches, Get get) {
  std::vector<double> out;
  for (const auto& b : batches) {
    const std::optional<double> v = get(b);
    if (!v) return std::nullopt;
    out.push_back(*v);
  }
  return out;
}

using Getter = std::optional<double> (*)(const BatchResult&);

const std::vector<std::pair<std::string, Getter>>& metric_getters() {
  static const std::vector<std::pair<std::string, Getter>> g = {
      {"E", [](const BatchResult& b) -> std::optional<double> { return b.validity.exploration; }},
      {"F", [](const BatchResult& b) { return b.validity.fidelity; }},
      {"R", [](const BatchResult& b) -> std::optional<double> { return b.validity.rate; }},
      {"R_tilde", [](const BatchResult& b) { return b.validity.rate_normalized; }},
      {"C", [](const BatchResult& b) { return b.validity.coverage; }},
      {"D", [](const BatchResult& b) -> std::optional<double> { return b.validity.data_copying; }},
      {"C_over_C_bar", [](const BatchResult& b) { return b.validity.coverage_over_ideal; }},
      {"MV", [](const BatchResult& b) { return b.quality.mv; }},
      {"U", [](const BatchResult& b) { return b.quality.u; }},
  };
  return g;
}

std::optional<double> mean_of(const std::vector<BatchResult>& batches, Getter get) {
  const auto v = collect(batches, get);
  if (!v) return std::nullopt;
  return mean(*v);
}

std::vector<NamedStats> stats_of(const std::vector<BatchResult>& batches) {
  std::vector<NamedStats> out;
  for (const auto& [name, get] : metric_getters()) {
    NamedStats s{name, std::nullopt};
    const auto v = collect(batches, get);
    if (v && v->size() >= 2) s.stats = aggregate_stats(*v);
    out.push_back(std::move(s));
  }
  return out;
}

Behaviour majority(const std::vector<BatchResult>& batches) {
  std::map<Behaviour, int> votes;
  for (const auto& b : batches) ++votes[b.label];
  Behaviour best = Behaviour::indeterminate;
  int best_n = -1;
  for (const auto& [label, n] : votes) {
    if (n > best_n) {
      best = label;
      best_n = n;
    }
  }
  return best;
}

std::vector<double> reference_distribution(const TrainingSet& train) {
  std::vector<double> p(std::size_t{1} << train.width(), 0.0);
  if (train.weights) {
    for (const auto& [bits, w] : *train.weights) p[bits] = w;
  } else {
    const double w = 1.0 / static_cast<double>(train.size());
    for (const auto& [bits, c] : train.samples.counts()) p[bits] = w;
  }
  return p;
}

std::vector<double> target_distribution(const SolutionSpace& space) {
  std::vector<double> p(std::size_t{1} << space.width(), 0.0);
  const double w = 1.0 / static_cast<double>(space.size());
  for (const auto& x : enumerate_space(space)) p[x.bits()] = w;
  return p;
}

template <typename Row>
void fill_trend_metrics(Row& row, const Instance& inst, const SampleMultiset& q, double t) {
  const auto v = validity_metrics(inst.train, inst.space, q);
  row.e = v.exploration;
  row.f = v.fidelity;
  row.r = v.rate;
  row.c = v.coverage;
  if (inst.cost && v.counts.g_sol > 0) {
    row.mv = minimum_value(std::span(&q, 1), inst.train, inst.space, inst.cost).mv;
    row.u = utility(q, inst.train, inst.space, inst.cost, t).u;
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

std::string fmt(const std::optional<double>& v) { return format_optional(v); }

json stats_json(const std::vector<NamedStats>& stats) {
  json j = json::object();
  for (const auto& s : stats) {
    if (!s.stats) {
      j[s.metric] = nullptr;
      continue;
    }
    j[s.metric] = {{"mean", s.stats->mean},
                   {"stddev", s.stats->stddev},
                   {"rel_pct_error", optional_json(s.stats->rel_pct_error)}};
  }
  return j;
}

void write_failure(const ExperimentConfig& cfg, const std::string& started, const std::string& what,
                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json m;
  m["status"] = "failed";
  m["failure"] = what;
  m["config"] = config_to_json(cfg);
  m["started_at"] = started;
  m["finished_at"] = utc_now();
  m["code_version"] = GENBENCH_VERSION;
  open_out(dir / "manifest.json") << m.dump(2) << '\n';
  open_out(dir / "FAILED") << what << '\n';
}

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::tnbm:
      return "tnbm";
    case ModelKind::gan:
      return "gan";
    case ModelKind::random:
      return "random";
  }
  return "random";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "tnbm") return ModelKind::tnbm;
  if (name == "gan") return ModelKind::gan;
  if (name == "random") return ModelKind::random;
  throw ConfigError("unknown model kind '" + name + "'");
}

ExperimentConfig desk_config() {
  ExperimentConfig c;
  c.run_id = "desk";
  return c;
}

ExperimentConfig paper_scale_config() {
  ExperimentConfig c;
  c.run_id = "paper_scale";
  c.task = SpaceParams{SpaceKind::cardinality, 20, 10, Parity::even, 0, 0};
  c.epsilon = 0.01;
  c.queries = 100000;
  return c;
}

void validate(const ExperimentConfig& c) {
  if (c.schema_version != kSchemaVersion) {
    throw ConfigError("unsupported schema_version " + std::to_string(c.schema_version));
  }
  if (c.run_id.empty() || c.run_id.find_first_of("/\\,\n") != std::string::npos) {
    throw ConfigError("run_id must be non-empty without separators or commas");
  }
  build_space(c.task);
  if (!(c.epsilon > 0.0 && c.epsilon <= 1.0)) throw ConfigError("epsilon must lie in (0, 1]");
  if (c.reweight && c.task.kind != SpaceKind::cardinality) {
    throw ConfigError("reweight needs a cost, which only cardinality tasks define");
  }
  if (c.task.kind == SpaceKind::cardinality && c.universe.mu_csv.has_value() != c.universe.cov_csv.has_value()) {
    throw ConfigError("universe needs both mu_csv and cov_csv");
  }
  if (c.n_epochs < 0) throw ConfigError("n_epochs must be >= 0");
  if (c.n_training_runs < 1) throw ConfigError("n_training_runs must be >= 1");
  if (c.queries < 1) throw ConfigError("queries must be >= 1");
  if (c.n_query_batches < 1) throw ConfigError("n_query_batches must be >= 1");
  if (c.mv_batches < 1 || c.mv_batches > c.n_query_batches) {
    throw ConfigError("mv_batches must lie in [1, n_query_batches]");
  }
  if (!(c.utility_t > 0.0 && c.utility_t <= 100.0)) throw ConfigError("utility_t must lie in (0, 100]");
  auto t = c.tnbm;
  t.n_epochs = c.n_epochs;
  if (c.model == ModelKind::tnbm) tnbm::validate(t);
  auto g = c.gan;
  g.n_epochs = c.n_epochs;
  if (c.model == ModelKind::gan) gan::validate(g);
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  try {
    check_keys(j,
               {"schema_version", "run_id", "task", "epsilon", "reweight", "model", "n_epochs",
                "n_training_runs", "queries", "n_query_batches", "mv_batches", "utility_t",
                "seeds", "output_dir", "tolerances"},
               "config");
    if (!j.contains("schema_version")) throw ConfigError("config lacks schema_version");
    get_if(j, "schema_version", c.schema_version);
    get_if(j, "run_id", c.run_id);
    if (j.contains("task")) {
      const auto& t = j.at("task");
      check_keys(t, {"kind", "n", "k", "parity", "rows", "cols", "universe"}, "task");
      if (t.contains("kind")) c.task.kind = space_kind_from_string(t.at("kind"));
      get_if(t, "n", c.task.width);
      get_if(t, "k", c.task.k);
      if (t.contains("parity")) c.task.parity = parity_from_string(t.at("parity"));
      get_if(t, "rows", c.task.rows);
      get_if(t, "cols", c.task.cols);
      if (c.task.kind == SpaceKind::bars_and_stripes && !t.contains("n")) {
        c.task.width = c.task.rows * c.task.cols;
      }
      if (t.contains("universe")) {
        const auto& u = t.at("universe");
        check_keys(u, {"synthetic_seed", "mu_csv", "cov_csv", "target_return"}, "task.universe");
        get_if(u, "synthetic_seed", c.universe.synthetic_seed);
        if (u.contains("mu_csv")) c.universe.mu_csv = u.at("mu_csv").get<std::string>();
        if (u.contains("cov_csv")) c.universe.cov_csv = u.at("cov_csv").get<std::string>();
        get_if(u, "target_return", c.universe.target_return);
      }
    }
    get_if(j, "epsilon", c.epsilon);
    get_if(j, "reweight", c.reweight);
    if (j.contains("model")) {
      const auto& m = j.at("model");
      check_keys(m, {"kind", "tnbm", "gan"}, "model");
      if (m.contains("kind")) c.model = model_kind_from_string(m.at("kind"));
      if (m.contains("tnbm")) {
        const auto& t = m.at("tnbm");
        check_keys(t, {"max_bond", "learning_rate", "svd_cutoff"}, "model.tnbm");
        get_if(t, "max_bond", c.tnbm.max_bond);
        get_if(t, "learning_rate", c.tnbm.learning_rate);
        get_if(t, "svd_cutoff", c.tnbm.svd_cutoff);
      }
      if (m.contains("gan")) {
        check_keys(m.at("gan"),
                   {"preset", "prior_size", "gen_hidden_size", "gen_layers", "gen_lr",
                    "disc_hidden_size", "disc_layers", "disc_lr", "negative_slope", "dropout",
                    "batch_size", "saturating_generator_loss"},
                   "model.gan");
        gan::from_json(m.at("gan"), c.gan);
      }
    }
    get_if(j, "n_epochs", c.n_epochs);
    get_if(j, "n_training_runs", c.n_training_runs);
    get_if(j, "queries", c.queries);
    get_if(j, "n_query_batches", c.n_query_batches);
    get_if(j, "mv_batches", c.mv_batches);
    get_if(j, "utility_t", c.utility_t);
    if (j.contains("seeds")) {
      const auto& s = j.at("seeds");
      check_keys(s, {"dataset", "train", "sample"}, "seeds");
      get_if(s, "dataset", c.seed_dataset);
      get_if(s, "train", c.seed_train);
      get_if(s, "sample", c.seed_sample);
    }
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("tolerances")) {
      const auto& t = j.at("tolerances");
      check_keys(t, {"near_one", "near_zero", "coverage_zero_units", "small_dgen_fraction",
                     "small_dgen_floor"},
                 "tolerances");
      get_if(t, "near_one", c.tolerances.near_one);
      get_if(t, "near_zero", c.tolerances.near_zero);
      get_if(t, "coverage_zero_units", c.tolerances.coverage_zero_units);
      get_if(t, "small_dgen_fraction", c.tolerances.small_dgen_fraction);
      get_if(t, "small_dgen_floor", c.tolerances.small_dgen_floor);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  validate(c);
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json task = {{"kind", to_string(c.task.kind)}, {"n", c.task.width}};
  switch (c.task.kind) {
    case SpaceKind::cardinality: {
      task["k"] = c.task.k;
      json u = {{"target_return", c.universe.target_return}};
      if (c.universe.mu_csv) {
        u["mu_csv"] = c.universe.mu_csv->string();
        u["cov_csv"] = c.universe.cov_csv->string();
      } else {
        u["synthetic_seed"] = c.universe.synthetic_seed;
      }
      task["universe"] = u;
      break;
    }
    case SpaceKind::parity:
      task["parity"] = parity_name(c.task.parity);
      break;
    case SpaceKind::bars_and_stripes:
      task["rows"] = c.task.rows;
      task["cols"] = c.task.cols;
      break;
  }
  json g = c.gan;
  g.erase("n_epochs");
  g.erase("seed");
  return {{"schema_version", c.schema_version},
          {"run_id", c.run_id},
          {"task", task},
          {"epsilon", c.epsilon},
          {"reweight", c.reweight},
          {"model",
           {{"kind", to_string(c.model)},
            {"tnbm",
             {{"max_bond", c.tnbm.max_bond},
              {"learning_rate", c.tnbm.learning_rate},
              {"svd_cutoff", c.tnbm.svd_cutoff}}},
            {"gan", g}}},
          {"n_epochs", c.n_epochs},
          {"n_training_runs", c.n_training_runs},
          {"queries", c.queries},
          {"n_query_batches", c.n_query_batches},
          {"mv_batches", c.mv_batches},
          {"utility_t", c.utility_t},
          {"seeds", {{"dataset", c.seed_dataset}, {"train", c.seed_train}, {"sample", c.seed_sample}}},
          {"output_dir", c.output_dir.string()},
          {"tolerances",
           {{"near_one", c.tolerances.near_one},
            {"near_zero", c.tolerances.near_zero},
            {"coverage_zero_units", c.tolerances.coverage_zero_units},
            {"small_dgen_fraction", c.tolerances.small_dgen_fraction},
            {"small_dgen_floor", c.tolerances.small_dgen_floor}}}};
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  open_out(path) << config_to_json(cfg).dump(2) << '\n';
}

// ---------------------------------------------------------------------------

SampleMultiset random_baseline_sample(int width, std::uint64_t count, std::uint64_t seed) {
  TrainedModel m;
  m.kind = ModelKind::random;
  m.width = width;
  std::mt19937_64 rng(seed);
  return QuerySampler(m).draw(count, rng);
}

Instance build_instance(const ExperimentConfig& cfg) {
  SolutionSpace space = build_space(cfg.task);
  std::optional<AssetUniverse> universe;
  CostOracle cost;
  if (cfg.task.kind == SpaceKind::cardinality) {
    if (cfg.universe.mu_csv) {
      universe = load_universe(*cfg.universe.mu_csv, *cfg.universe.cov_csv, cfg.universe.target_return);
      if (universe->n_assets() != cfg.task.width) {
        throw ConfigError("universe has " + std::to_string(universe->n_assets()) +
                          " assets but the task has N=" + std::to_string(cfg.task.width));
      }
    } else {
      universe = synth_universe(cfg.task.width, cfg.universe.synthetic_seed);
    }
    universe->target_return = cfg.universe.target_return;
    cost = make_risk_oracle(*universe);
  }
  TrainingSet train = draw_training_set(space, cfg.epsilon, cfg.seed_dataset);
  if (cfg.reweight) train = reweight(train, cost);
  return Instance{std::move(space), std::move(universe), std::move(cost), std::move(train)};
}

TrainedModel train_model(const ExperimentConfig& cfg, const TrainingSet& train) {
  TrainedModel best;
  best.kind = cfg.model;
  best.width = train.width();
  if (cfg.model == ModelKind::random) return best;

  std::vector<double> finals;
  std::optional<TrainedModel> chosen;
  for (int r = 0; r < cfg.n_training_runs; ++r) {
    const std::uint64_t seed = cfg.seed_train + static_cast<std::uint64_t>(r);
    TrainedModel cand;
    cand.kind = cfg.model;
    cand.width = train.width();
    double final_loss = 0.0;
    if (cfg.model == ModelKind::tnbm) {
      auto tc = cfg.tnbm;
      tc.n_epochs = cfg.n_epochs;
      tc.seed = seed;
      auto res = tnbm::train_dmrg(tnbm::init_mps(train.width(), tc.max_bond, seed), train, tc);
      for (std::size_t e = 0; e < res.loss_history.size(); ++e) {
        cand.loss_history.push_back({static_cast<int>(e + 1), res.loss_history[e], std::nullopt});
      }
      if (res.loss_history.empty()) {
        std::vector<std::uint32_t> xs;
        std::vector<double> ws;
        for (const auto& [bits, c] : train.samples.counts()) {
          xs.push_back(bits);
          ws.push_back(train.weights ? train.weights->at(bits) : 1.0);
        }
        final_loss = tnbm::negative_log_likelihood(res.model, xs, ws);
      } else {
        final_loss = res.loss_history.back();
      }
      cand.parameter_count = res.model.parameter_count();
      cand.mps = std::move(res.model);
    } else {
      auto gc = cfg.gan;
      gc.n_epochs = cfg.n_epochs;
      gc.seed = seed;
      auto res = gan::gan_train(gan::init_gan(gc, train.width(), seed), train, gc);
      for (std::size_t e = 0; e < res.history.size(); ++e) {
        cand.loss_history.push_back(
            {static_cast<int>(e + 1), res.history[e].generator, res.history[e].discriminator});
      }
      final_loss = res.history.empty() ? 0.0 : res.history.back().generator;
      cand.parameter_count =
          res.model.generator.parameter_count() + res.model.discriminator.parameter_count();
      cand.gan = std::move(res.model);
    }
    finals.push_back(final_loss);
    if (!chosen || final_loss < finals[static_cast<std::size_t>(chosen->selected_run)]) {
      cand.selected_run = r;
      chosen = std::move(cand);
    }
  }
  chosen->final_losses = std::move(finals);
  return std::move(*chosen);
}

QuerySampler::QuerySampler(const TrainedModel& model) : kind_(model.kind), width_(model.width) {
  if (width_ < 1 || width_ > kMaxWidth) throw ConfigError("sampler width outside [1, 30]");
  if (kind_ == ModelKind::tnbm) {
    if (!model.mps) throw ConfigError("TNBM sampler without a model");
    mps_.emplace(*model.mps);
  } else if (kind_ == ModelKind::gan) {
    if (!model.gan) throw ConfigError("GAN sampler without a model");
    gan_.emplace(model.gan->generator);
  }
}

void QuerySampler::extend(SampleMultiset& into, std::uint64_t count, std::mt19937_64& rng) const {
  switch (kind_) {
    case ModelKind::tnbm:
      for (std::uint64_t i = 0; i < count; ++i) into.add(mps_->draw(rng));
      break;
    case ModelKind::gan:
      for (const auto& x : gan_->draw_batch(count, rng)) into.add(x);
      break;
    case ModelKind::random: {
      const std::uint32_t hi =
          width_ == 32 ? ~std::uint32_t{0} : (std::uint32_t{1} << width_) - 1u;
      std::uniform_int_distribution<std::uint32_t> dist(0, hi);
      for (std::uint64_t i = 0; i < count; ++i) into.add(Bitstring(width_, dist(rng)));
      break;
    }
  }
}

SampleMultiset QuerySampler::draw(std::uint64_t count, std::mt19937_64& rng) const {
  SampleMultiset out(width_);
  extend(out, count, rng);
  return out;
}

std::uint64_t batch_seed(std::uint64_t seed_sample, int batch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed_sample),
                    static_cast<std::uint32_t>(seed_sample >> 32),
                    static_cast<std::uint32_t>(batch)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

Prepared prepare(const ExperimentConfig& cfg) {
  validate(cfg);
  Instance inst = build_instance(cfg);
  TrainedModel model = train_model(cfg, inst.train);
  return Prepared{cfg, std::move(inst), std::move(model)};
}

std::vector<double> model_distribution(const TrainedModel& model, const SampleMultiset& pooled) {
  if (model.width > kMaxKlWidth) throw EvaluationError("distribution too large to tabulate");
  const std::size_t n = std::size_t{1} << model.width;
  if (!model.external && model.kind == ModelKind::tnbm) return tnbm::mps_full_distribution(*model.mps);
  if (!model.external && model.kind == ModelKind::random) return std::vector<double>(n, 1.0 / static_cast<double>(n));
  if (pooled.total() == 0) throw EvaluationError("no samples for an empirical distribution");
  std::vector<double> p(n, 0.0);
  for (const auto& [bits, c] : pooled.counts()) {
    p[bits] = static_cast<double>(c) / static_cast<double>(pooled.total());
  }
  return p;
}

RunArtifact evaluate_samples(const ExperimentConfig& cfg, const Instance& inst,
                             const TrainedModel& model, const std::vector<SampleMultiset>& batches) {
  if (batches.empty()) throw EvaluationError("no query batches to evaluate");
  RunArtifact a{.cfg = cfg,
                .instance = inst,
                .model = model,
                .batches = {},
                .pooled_queries = SampleMultiset(inst.space.width()),
                .aggregate_mv = std::nullopt,
                .stats = {},
                .label = Behaviour::indeterminate,
                .kl_train = std::nullopt,
                .kl_target = std::nullopt,
                .started_at = utc_now(),
                .finished_at = {},
                .code_version = GENBENCH_VERSION,
                .failure = std::nullopt};
  for (const auto& q : batches) {
    a.batches.push_back(evaluate_batch(inst, q, cfg));
    a.pooled_queries.merge(q);
  }
  if (inst.cost) {
    const auto b = std::min(batches.size(), static_cast<std::size_t>(cfg.mv_batches));
    try {
      a.aggregate_mv = minimum_value(std::span(batches.data(), b), inst.train, inst.space, inst.cost).mv;
    } catch (const NoValidSamplesError&) {
      a.aggregate_mv.reset();
    }
  }
  a.stats = stats_of(a.batches);
  a.label = majority(a.batches);

  if (inst.space.width() <= kMaxKlWidth) {
    const auto p = model_distribution(model, a.pooled_queries);
    a.kl_train = kl_divergence(reference_distribution(inst.train), p);
    a.kl_target = inst.train.size() == inst.space.size()
                      ? *a.kl_train
                      : kl_divergence(target_distribution(inst.space), p);
  }
  a.finished_at = utc_now();
  return a;
}

RunArtifact evaluate(const Prepared& prep) {
  const QuerySampler sampler(prep.model);
  std::vector<SampleMultiset> batches;
  for (int b = 0; b < prep.cfg.n_query_batches; ++b) {
    std::mt19937_64 rng(batch_seed(prep.cfg.seed_sample, b));
    batches.push_back(sampler.draw(prep.cfg.queries, rng));
  }
  return evaluate_samples(prep.cfg, prep.instance, prep.model, batches);
}

RunArtifact run_experiment(const ExperimentConfig& cfg) {
  const std::string started = utc_now();
  const auto dir = cfg.output_dir / cfg.run_id;
  try {
    RunArtifact a = evaluate(prepare(cfg));
    a.started_at = started;
    export_report(a, dir);
    return a;
  } catch (const Error& e) {
    try {
      write_failure(cfg, started, e.what(), dir);
    } catch (const std::exception&) {
      // The original error is the one worth reporting.
    }
    rethrow_with_context(cfg.run_id);
  }
}

// ---------------------------------------------------------------------------

std::vector<TrendRow> sweep_q(const Prepared& prep, const std::vector<std::uint64_t>& q_values) {
  if (!std::is_sorted(q_values.begin(), q_values.end()) ||
      std::adjacent_find(q_values.begin(), q_values.end()) != q_values.end()) {
    throw ConfigError("sweep_q needs strictly ascending Q values");
  }
  const auto& inst = prep.instance;
  const QuerySampler sampler(prep.model);
  std::mt19937_64 rng(prep.cfg.seed_sample);
  SampleMultiset acc(inst.space.width());
  std::vector<TrendRow> rows;
  for (const auto q : q_values) {
    sampler.extend(acc, q - acc.total(), rng);
    TrendRow row;
    row.queries = q;
    fill_trend_metrics(row, inst, acc, prep.cfg.utility_t);
    if (inst.train.size() < inst.space.size()) {
      const auto refs = coverage_references(inst.space.size(), inst.train.size(), q);
      row.ub = refs.upper_bound;
      row.c_bar = refs.ideal_coverage;
    } else {
      row.ub = std::numeric_limits<double>::quiet_NaN();
      row.c_bar = std::numeric_limits<double>::quiet_NaN();
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<TrendRow> sweep_q(const ExperimentConfig& cfg, const std::vector<std::uint64_t>& q_values) {
  return sweep_q(prepare(cfg), q_values);
}

StabilityTable sweep_datasets(const ExperimentConfig& cfg, int n_datasets) {
  if (n_datasets < 2) throw ConfigError("sweep_datasets needs at least two datasets");
  StabilityTable table;
  std::vector<BatchResult> per_dataset;
  for (int i = 0; i < n_datasets; ++i) {
    ExperimentConfig c = cfg;
    c.seed_dataset = cfg.seed_dataset + static_cast<std::uint64_t>(i);
    const Prepared prep = prepare(c);
    std::mt19937_64 rng(batch_seed(c.seed_sample, 0));
    const auto q = QuerySampler(prep.model).draw(c.queries, rng);
    StabilityRow row;
    row.dataset_seed = c.seed_dataset;
    row.train_size = prep.instance.train.size();
    row.space_size = prep.instance.space.size();
    fill_trend_metrics(row, prep.instance, q, c.utility_t);
    table.rows.push_back(row);
    per_dataset.push_back(evaluate_batch(prep.instance, q, c));
  }
  table.stats = stats_of(per_dataset);
  return table;
}

// ---------------------------------------------------------------------------

std::string metrics_csv(const RunArtifact& a) {
  std::ostringstream out;
  out << kMetricsHeader << '\n';
  const auto& n0 = a.batches.front().validity.counts;
  const auto row = [&](const std::string& batch_id, const std::optional<double>& e,
                       const std::optional<double>& f, const std::optional<double>& r,
                       const std::optional<double>& rt, const std::optional<double>& c,
                       const std::optional<double>& d, const std::optional<double>& ub,
                       const std::optional<double>& cbar, const std::optional<double>& ratio,
                       const std::optional<double>& mv, const std::optional<double>& mv_train,
                       const std::optional<double>& u, const std::optional<double>& u_train,
                       const std::optional<std::uint64_t>& below, Behaviour label) {
    out << a.cfg.run_id << ',' << batch_id << ',' << a.cfg.queries << ',' << n0.train_size << ','
        << n0.space_size << ',' << fmt(e) << ',' << fmt(f) << ',' << fmt(r) << ',' << fmt(rt) << ','
        << fmt(c) << ',' << fmt(d) << ',' << fmt(ub) << ',' << fmt(cbar) << ',' << fmt(ratio) << ','
        << fmt(mv) << ',' << fmt(mv_train) << ',' << fmt(u) << ',' << fmt(u_train) << ','
        << (below ? std::to_string(*below) : "nan") << ',' << to_string(label) << '\n';
  };
  const auto ub_of = [](const BatchResult& b) -> std::optional<double> {
    return b.validity.references ? std::optional(b.validity.references->upper_bound) : std::nullopt;
  };
  const auto cbar_of = [](const BatchResult& b) -> std::optional<double> {
    return b.validity.references ? std::optional(b.validity.references->ideal_coverage)
                                 : std::nullopt;
  };
  for (std::size_t i = 0; i < a.batches.size(); ++i) {
    const auto& b = a.batches[i];
    const auto& v = b.validity;
    const auto& q = b.quality;
    row(std::to_string(i), v.exploration, v.fidelity, v.rate, v.rate_normalized, v.coverage,
        v.data_copying, ub_of(b), cbar_of(b), v.coverage_over_ideal, q.mv, q.mv_train, q.u,
        q.u_train, q.n_below_critical, b.label);
  }

  const auto& getters = metric_getters();
  const auto agg = [&](const std::string& name) {
    for (const auto& [n, g] : getters) {
      if (n == name) return mean_of(a.batches, g);
    }
    return std::optional<double>{};
  };
  std::optional<std::uint64_t> below;
  const auto& q0 = a.batches.front().quality;
  if (a.instance.cost) {
    below = count_below_threshold(a.pooled_queries, a.instance.train, a.instance.space,
                                  a.instance.cost, *q0.c_prime);
  }
  row("aggregate", agg("E"), agg("F"), agg("R"), agg("R_tilde"), agg("C"), agg("D"),
      ub_of(a.batches.front()), cbar_of(a.batches.front()), agg("C_over_C_bar"), a.aggregate_mv,
      q0.mv_train, agg("U"), q0.u_train, below, a.label);
  return out.str();
}

void export_report(const RunArtifact& a, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  if (a.failure) {
    write_failure(a.cfg, a.started_at, *a.failure, dir);
    return;
  }
  open_out(dir / "metrics.csv") << metrics_csv(a);

  {
    auto out = open_out(dir / "loss_history.csv");
    out << "epoch,loss,discriminator_loss\n";
    for (const auto& r : a.model.loss_history) {
      out << r.epoch << ',' << format_double(r.loss) << ',' << fmt(r.discriminator_loss) << '\n';
    }
  }

  {
    auto out = open_out(dir / "cardinality_histogram.csv");
    out << "weight,count,fraction\n";
    std::vector<std::uint64_t> hist(static_cast<std::size_t>(a.instance.space.width()) + 1, 0);
    for (const auto& [bits, c] : a.pooled_queries.counts()) {
      hist[static_cast<std::size_t>(std::popcount(bits))] += c;
    }
    for (std::size_t w = 0; w < hist.size(); ++w) {
      out << w << ',' << hist[w] << ','
          << format_double(static_cast<double>(hist[w]) /
                           static_cast<double>(a.pooled_queries.total()))
          << '\n';
    }
  }

  {
    auto hist = open_out(dir / "risk_histogram.csv");
    auto cut = open_out(dir / "utility_cutoffs.csv");
    hist << "series,bin,bin_lo,bin_hi,fraction\n";
    cut << "series,cutoff_cost,utility\n";
    if (a.instance.cost) {
      const auto parts = partition_queries(a.pooled_queries, a.instance.train.samples, a.instance.space);
      const auto gen = sorted_costs(parts.g_sol, a.instance.cost);
      const auto tr = sorted_costs(a.instance.train.samples, a.instance.cost);
      double lo = tr.front().first;
      double hi = tr.back().first;
      if (!gen.empty()) {
        lo = std::min(lo, gen.front().first);
        hi = std::max(hi, gen.back().first);
      }
      const double width = hi > lo ? (hi - lo) / kRiskBins : 1.0;
      const auto emit = [&](const std::string& name,
                            const std::vector<std::pair<double, std::uint32_t>>& costs) {
        if (costs.empty()) return;
        std::vector<std::uint64_t> counts(kRiskBins, 0);
        for (const auto& [v, bits] : costs) {
          const auto bin = std::min<long>(kRiskBins - 1, static_cast<long>((v - lo) / width));
          ++counts[static_cast<std::size_t>(bin)];
        }
        for (int b = 0; b < kRiskBins; ++b) {
          hist << name << ',' << b << ',' << format_double(lo + b * width) << ','
               << format_double(lo + (b + 1) * width) << ','
               << format_double(static_cast<double>(counts[static_cast<std::size_t>(b)]) /
                                static_cast<double>(costs.size()))
               << '\n';
        }
        const auto n = utility_cutoff(costs.size(), a.cfg.utility_t);
        double s = 0.0;
        for (std::uint64_t i = 0; i < n; ++i) s += costs[i].first;
        cut << name << ',' << format_double(costs[n - 1].first) << ','
            << format_double(s / static_cast<double>(n)) << '\n';
      };
      emit("generated", gen);
      emit("train", tr);
    }
  }

  json m;
  m["status"] = "ok";
  m["config"] = config_to_json(a.cfg);
  m["space"] = a.instance.space.describe();
  m["space_size"] = a.instance.space.size();
  m["train_size"] = a.instance.train.size();
  m["parameter_count"] = a.model.parameter_count;
  m["final_losses"] = a.model.final_losses;
  m["selected_run"] = a.model.selected_run;
  m["label"] = to_string(a.label);
  m["kl_train"] = optional_json(a.kl_train);
  m["kl_target"] = optional_json(a.kl_target);
  m["aggregate_mv"] = optional_json(a.aggregate_mv);
  m["stats"] = stats_json(a.stats);
  m["started_at"] = a.started_at;
  m["finished_at"] = a.finished_at;
  m["code_version"] = a.code_version;
  m["files"] = {"metrics.csv", "loss_history.csv", "cardinality_histogram.csv",
                "risk_histogram.csv", "utility_cutoffs.csv"};
  open_out(dir / "manifest.json") << m.dump(2) << '\n';
}

void write_trend(const std::vector<TrendRow>& rows, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "Q,E,F,R,C,MV,U,UB,C_bar\n";
  for (const auto& r : rows) {
    out << r.queries << ',' << format_double(r.e) << ',' << fmt(r.f) << ',' << fmt(r.r) << ','
        << fmt(r.c) << ',' << fmt(r.mv) << ',' << fmt(r.u) << ',' << format_double(r.ub) << ','
        << format_double(r.c_bar) << '\n';
  }
}

void write_stability(const StabilityTable& t, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "dataset_seed,T,S_size,E,F,R,C,MV,U\n";
  for (const auto& r : t.rows) {
    out << r.dataset_seed << ',' << r.train_size << ',' << r.space_size << ','
        << format_double(r.e) << ',' << fmt(r.f) << ',' << fmt(r.r) << ',' << fmt(r.c) << ','
        << fmt(r.mv) << ',' << fmt(r.u) << '\n';
  }
  auto sp = path;
  sp.replace_filename(path.stem().string() + "_stats" + path.extension().string());
  auto st = open_out(sp);
  st << "metric,mean,stddev,rel_pct_error\n";
  for (const auto& s : t.stats) {
    if (!s.stats) {
      st << s.metric << ",nan,nan,nan\n";
      continue;
    }
    st << s.metric << ',' << format_double(s.stats->mean) << ',' << format_double(s.stats->stddev)
        << ',' << fmt(s.stats->rel_pct_error) << '\n';
  }
}

}  // namespace genbench::harness
