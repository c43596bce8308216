// Acceptance suite. Prints one PASS/FAIL line per criterion, followed by
// indented measurements, and exits non-zero if any criterion fails.
//
//   acceptance [--skip-paper-scale]
//
// After the criteria an informational N=20 TNBM line is printed; it is not
// graded.

#include <algorithm>
#include <cfloat>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "genbench/errors.hpp"
#include "genbench/gan.hpp"
#include "genbench/harness.hpp"
#include "genbench/metrics.hpp"
#include "genbench/text.hpp"
#include "genbench/tnbm.hpp"
#include "helpers.hpp"
#include "oracle.hpp"

using namespace genbench;
using namespace genbench::harness;
namespace fs = std::filesystem;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      notes.push_back("violated: " + what);
    }
  }
  void note(const std::string& s) { notes.push_back(s); }
};

std::string num(double v, int digits = 4) {
  if (std::isnan(v)) return "nan";
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

// R = E*F and C <= E*Q/(|S|-T) on every report seen anywhere in the suite.
struct IdentityLedger {
  std::uint64_t reports = 0;
  std::uint64_t violations = 0;
  std::string first;

  void check(const GeneralizationReport& r, const std::string& where) {
    ++reports;
    const auto& n = r.counts;
    bool ok = true;
    if (r.fidelity) {
      ok &= std::abs(r.rate - r.exploration * *r.fidelity) <= 4 * DBL_EPSILON * std::max(r.rate, DBL_MIN);
    } else {
      ok &= r.rate == 0.0 && n.g_new == 0;
    }
    ok &= n.g_sol <= n.g_new;
    if (r.coverage) {
      const double bound = r.exploration * static_cast<double>(n.queries) /
                           static_cast<double>(n.space_size - n.train_size);
      ok &= *r.coverage <= bound * (1 + 4 * DBL_EPSILON);
      ok &= n.g_sol_unique <= n.g_new;  // the same bound in integers
    }
    if (!ok && violations++ == 0) first = where;
  }
} identities;

void check_all(const RunArtifact& a, const std::string& where) {
  for (std::size_t b = 0; b < a.batches.size(); ++b) {
    identities.check(a.batches[b].validity, where + " batch " + std::to_string(b));
  }
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  Outcome o;
  const auto refs = coverage_references(184756, 1848, 100000);
  const double ratio = coverage_ratio(0.409, refs.ideal_coverage);
  o.require(std::abs(refs.upper_bound - 0.5412) <= 1e-4, "UB = 0.5412 +- 1e-4");
  o.require(std::abs(refs.ideal_coverage - 0.4211) <= 2e-4, "C_bar = 0.4211 +- 2e-4");
  o.require(std::abs(ratio - 0.971) <= 1e-3, "C/C_bar(0.409) = 0.971 +- 1e-3");
  o.note("UB=" + num(refs.upper_bound, 6) + " C_bar=" + num(refs.ideal_coverage, 6) +
         " C/C_bar=" + num(ratio, 6));
  return o;
}

// ---------------------------------------------------------------------------

SpaceParams to_params(const oracle::Space& s) {
  switch (s.kind) {
    case oracle::Kind::cardinality:
      return {SpaceKind::cardinality, s.n, s.k, Parity::even, 0, 0};
    case oracle::Kind::parity_even:
      return {SpaceKind::parity, s.n, 0, Parity::even, 0, 0};
    case oracle::Kind::parity_odd:
      return {SpaceKind::parity, s.n, 0, Parity::odd, 0, 0};
    case oracle::Kind::bas:
      return {SpaceKind::bars_and_stripes, s.n, 0, Parity::even, s.rows, s.cols};
  }
  return {};
}

oracle::Space random_space(std::mt19937_64& rng) {
  oracle::Space s;
  s.kind = static_cast<oracle::Kind>(std::uniform_int_distribution<int>(0, 3)(rng));
  if (s.kind == oracle::Kind::bas) {
    std::uniform_int_distribution<int> side(1, 5);
    do {
      s.rows = side(rng);
      s.cols = side(rng);
    } while (s.rows * s.cols > 10);
    s.n = s.rows * s.cols;
  } else {
    s.n = std::uniform_int_distribution<int>(1, 10)(rng);
    s.k = std::uniform_int_distribution<int>(0, s.n)(rng);
  }
  return s;
}

// Integer-valued costs keep every sum exact.
double hashed_cost(std::uint32_t x) { return static_cast<double>(((x * 2654435761u) >> 7) % 101u); }

Outcome criterion2() {
  Outcome o;
  std::mt19937_64 rng(20240601);
  std::map<std::string, int> kinds;
  std::uint64_t comparisons = 0;
  std::uint64_t mismatches = 0;
  std::string first_mismatch;
  const auto same = [&](bool ok, const std::string& what, int trial) {
    ++comparisons;
    if (!ok && mismatches++ == 0) first_mismatch = "instance " + std::to_string(trial) + ": " + what;
  };

  for (int trial = 0; trial < 200; ++trial) {
    const oracle::Space os = random_space(rng);
    const SolutionSpace space = build_space(to_params(os));
    ++kinds[space.describe().substr(0, space.describe().find('('))];
    auto members = oracle::members(os);
    same(members.size() == space.size(), "|S|", trial);

    std::shuffle(members.begin(), members.end(), rng);
    const auto t = std::uniform_int_distribution<std::size_t>(1, members.size())(rng);
    const std::vector<std::uint32_t> picked(members.begin(), members.begin() + static_cast<long>(t));
    const std::set<std::uint32_t> tset(picked.begin(), picked.end());
    const TrainingSet train = testing::make_train(space, picked);

    const int n_batches = std::uniform_int_distribution<int>(1, 3)(rng);
    std::vector<SampleMultiset> batches;
    std::vector<std::vector<std::uint64_t>> dense;
    for (int b = 0; b < n_batches; ++b) {
      const auto q = std::uniform_int_distribution<int>(1, 200)(rng);
      std::vector<std::uint64_t> d(std::size_t{1} << os.n, 0);
      SampleMultiset m(os.n);
      std::uniform_int_distribution<std::uint32_t> any(0, (1u << os.n) - 1);
      std::uniform_int_distribution<std::size_t> member(0, members.size() - 1);
      std::bernoulli_distribution from_space(0.5);
      for (int i = 0; i < q; ++i) {
        const std::uint32_t x = from_space(rng) ? members[member(rng)] : any(rng);
        ++d[x];
        m.add(Bitstring(os.n, x));
      }
      batches.push_back(m);
      dense.push_back(d);
    }

    std::vector<std::pair<std::string, CostOracle>> costs = {
        {"hashed", [](const Bitstring& x) { return hashed_cost(x.bits()); }}};
    if (os.kind == oracle::Kind::cardinality && os.k > 0 && os.n >= 2) {
      costs.emplace_back("risk", make_risk_oracle(synth_universe(os.n, static_cast<std::uint64_t>(trial))));
    }

    for (int b = 0; b < n_batches; ++b) {
      const auto c = oracle::count(os, tset, dense[static_cast<std::size_t>(b)]);
      const auto r = validity_metrics(train, space, batches[static_cast<std::size_t>(b)]);
      identities.check(r, "oracle instance " + std::to_string(trial));
      const auto& k = r.counts;
      same(k.queries == c.q && k.g_new == c.g_new && k.g_sol == c.g_sol &&
               k.g_sol_unique == c.g_sol_unique && k.d_gen_unique == c.d_gen_unique &&
               k.train_size == c.train_size && k.space_size == c.space_size,
           "counts", trial);
      const double q = static_cast<double>(c.q);
      same(r.exploration == static_cast<double>(c.g_new) / q, "E", trial);
      same(r.data_copying == 1.0 - static_cast<double>(c.g_new) / q, "D", trial);
      same(r.rate == static_cast<double>(c.g_sol) / q, "R", trial);
      same(c.g_new == 0 ? !r.fidelity
                        : r.fidelity && *r.fidelity == static_cast<double>(c.g_sol) / static_cast<double>(c.g_new),
           "F", trial);
      const double eps = static_cast<double>(c.train_size) / static_cast<double>(c.space_size);
      same(c.train_size == c.space_size ? !r.rate_normalized
                                        : r.rate_normalized && *r.rate_normalized == r.rate / (1.0 - eps),
           "R_tilde", trial);
      const auto unseen = c.space_size - c.train_size;
      same(unseen == 0 ? !r.coverage
                       : r.coverage && *r.coverage == static_cast<double>(c.g_sol_unique) / static_cast<double>(unseen),
           "C", trial);
      same(*r.coverage_per_query == static_cast<double>(c.g_sol_unique) / q, "C_q", trial);
      if (unseen > 0) {
        const double ub = static_cast<double>(std::min(c.q, c.space_size)) / static_cast<double>(c.space_size);
        const double cbar = 1.0 - std::pow(1.0 - 1.0 / static_cast<double>(unseen), q);
        same(r.references->upper_bound == ub, "UB", trial);
        same(std::abs(r.references->ideal_coverage - cbar) <= 1e-12 * std::max(cbar, 1e-300), "C_bar", trial);
      }

      for (const auto& [name, cost] : costs) {
        const auto oc = [&cost, n = os.n](std::uint32_t x) { return cost(Bitstring(n, x)); };
        const auto sorted = oracle::solution_costs(os, tset, dense[static_cast<std::size_t>(b)], oc);
        std::vector<std::pair<double, std::uint32_t>> train_sorted;
        for (auto x : tset) train_sorted.emplace_back(oc(x), x);
        std::sort(train_sorted.begin(), train_sorted.end());
        for (int pct : {1, 5, 10, 25, 50, 100}) {
          if (sorted.empty()) {
            bool threw = false;
            try {
              utility(batches[static_cast<std::size_t>(b)], train, space, cost, pct);
            } catch (const NoValidSamplesError&) {
              threw = true;
            }
            same(threw, "utility on an empty G_sol", trial);
            continue;
          }
          const auto u = utility(batches[static_cast<std::size_t>(b)], train, space, cost, pct);
          same(u.u == oracle::utility(sorted, pct), name + " U t=" + std::to_string(pct), trial);
          same(u.u_train == oracle::utility(train_sorted, pct), name + " U_train", trial);
        }
        const double mv_train = train_sorted.front().first;
        for (double c_prime : {mv_train, 50.0, -1.0, std::numeric_limits<double>::infinity()}) {
          same(count_below_threshold(batches[static_cast<std::size_t>(b)], train, space, cost, c_prime) ==
                   oracle::below(os, tset, dense[static_cast<std::size_t>(b)], oc, c_prime),
               name + " count_below", trial);
        }
      }
    }

    for (const auto& [name, cost] : costs) {
      const auto oc = [&cost, n = os.n](std::uint32_t x) { return cost(Bitstring(n, x)); };
      bool any_empty = false;
      double sum = 0.0;
      for (const auto& d : dense) {
        const auto sorted = oracle::solution_costs(os, tset, d, oc);
        if (sorted.empty()) {
          any_empty = true;
          break;
        }
        sum += sorted.front().first;
      }
      if (any_empty) {
        bool threw = false;
        try {
          minimum_value(batches, train, space, cost);
        } catch (const NoValidSamplesError&) {
          threw = true;
        }
        same(threw, "MV with an empty batch", trial);
      } else {
        const auto mv = minimum_value(batches, train, space, cost);
        same(mv.mv == sum / static_cast<double>(n_batches), name + " MV", trial);
        double mt = std::numeric_limits<double>::infinity();
        for (auto x : tset) mt = std::min(mt, oc(x));
        same(mv.mv_train == mt, name + " MV_train", trial);
      }
    }
  }
  o.require(mismatches == 0, first_mismatch);
  std::string mix;
  for (const auto& [k, n] : kinds) mix += k + "=" + std::to_string(n) + " ";
  o.note("200 instances (" + mix + "), " + std::to_string(comparisons) + " comparisons, " +
         std::to_string(mismatches) + " mismatches");
  return o;
}

// ---------------------------------------------------------------------------

double full_sum(const tnbm::MpsModel& m) {
  double s = 0.0;
  for (double p : tnbm::mps_full_distribution(m)) s += p;
  return s;
}

Outcome criterion4() {
  Outcome o;
  // (a) normalization at init and after every epoch.
  double worst = 0.0;
  int epochs_checked = 0;
  std::mt19937_64 rng(404);
  for (int n : {4, 6, 8, 10, 12}) {
    for (auto params : {testing::cardinality(n, n / 2), testing::parity(n, Parity::odd)}) {
      const auto space = build_space(params);
      const auto train = draw_training_set(space, 0.1, static_cast<std::uint64_t>(n));
      tnbm::TnbmTrainConfig cfg;
      cfg.n_epochs = n == 12 ? 100 : 20;
      const auto init = tnbm::init_mps(n, cfg.max_bond, static_cast<std::uint64_t>(n) + 1);
      worst = std::max(worst, std::abs(full_sum(init) - 1.0));
      tnbm::train_dmrg(init, train, cfg, [&](int, const tnbm::MpsModel& m) {
        worst = std::max(worst, std::abs(full_sum(m) - 1.0));
        ++epochs_checked;
      });
    }
  }
  o.require(worst <= 1e-8, "sum_x p(x) = 1 +- 1e-8");
  o.note("(a) " + std::to_string(epochs_checked) + " epochs over N in {4..12}: max |sum p - 1| = " + num(worst, 3));

  // (b) two-site gradient.
  double worst_grad = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = std::uniform_int_distribution<int>(2, 7)(rng);
    const int bond = std::uniform_int_distribution<int>(0, n - 2)(rng);
    auto m = tnbm::init_mps(n, std::uniform_int_distribution<int>(1, 5)(rng), static_cast<std::uint64_t>(trial));
    m.move_center(bond + std::uniform_int_distribution<int>(0, 1)(rng));
    std::vector<std::uint32_t> xs;
    std::vector<double> ws;
    const int t = std::uniform_int_distribution<int>(1, 8)(rng);
    for (int i = 0; i < t; ++i) {
      xs.push_back(std::uniform_int_distribution<std::uint32_t>(0, (1u << n) - 1)(rng));
      ws.push_back(std::uniform_real_distribution<double>(0.5, 2.0)(rng));
    }
    const tnbm::TwoSiteObjective obj(m, bond, xs, ws);
    const MatrixXd theta = obj.merged();
    const MatrixXd g = obj.gradient(theta);
    MatrixXd fd(theta.rows(), theta.cols());
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      MatrixXd a = theta, b = theta;
      a(i) += h;
      b(i) -= h;
      fd(i) = (obj.value(a) - obj.value(b)) / (2 * h);
    }
    worst_grad = std::max(worst_grad, (g - fd).norm() / fd.norm());
  }
  o.require(worst_grad < 1e-5, "gradient rel. error < 1e-5");
  o.note("(b) 50 instances: max rel. gradient error = " + num(worst_grad, 3));

  // (c) sampler vs exact distribution. For a correct sampler the expected TV
  // is about sum_x sqrt(p(1-p) / (2 pi Q)); that floor is reported alongside.
  const std::uint64_t q = 100000;
  double worst_tv = 0.0;
  std::string tv_detail;
  const auto tv_case = [&](const tnbm::MpsModel& m, const std::string& label, std::uint64_t seed) {
    const auto p = tnbm::mps_full_distribution(m);
    const auto s = tnbm::mps_sample(m, q, seed);
    double tv = 0.0, floor = 0.0;
    for (std::size_t x = 0; x < p.size(); ++x) {
      tv += std::abs(p[x] - static_cast<double>(s.count(static_cast<std::uint32_t>(x))) / static_cast<double>(q));
      floor += std::sqrt(p[x] * (1 - p[x]) / (2 * std::numbers::pi * static_cast<double>(q)));
    }
    tv *= 0.5;
    worst_tv = std::max(worst_tv, tv);
    tv_detail += " " + label + ":" + num(tv, 3) + "/" + num(floor, 3);
  };
  for (int n : {2, 4, 6}) tv_case(tnbm::init_mps(n, 4, 50 + n), "init N=" + std::to_string(n), 60 + n);
  // Near-flat N=10 distributions sit above 0.02 from sampling noise alone,
  // so the N=10 case uses a model trained to concentrate on few strings.
  for (int n : {6, 8, 10}) {
    const auto space = build_space(testing::cardinality(n, n / 2));
    tnbm::TnbmTrainConfig cfg;
    cfg.n_epochs = 100;
    const auto trained = tnbm::train_dmrg(tnbm::init_mps(n, 7, 70 + n),
                                          draw_training_set(space, 0.1, 80 + n), cfg).model;
    tv_case(trained, "trained N=" + std::to_string(n), 90 + n);
  }
  o.require(worst_tv < 0.02, "TV < 0.02");
  o.note("(c) TV/noise floor at Q=1e5:" + tv_detail);
  return o;
}

// ---------------------------------------------------------------------------

struct SeedRun {
  std::uint64_t seed = 0;
  double f = 0, r = 0, e = 0, c = 0;
  double kl_train = 0, kl_target = 0;
  double final_nll = 0;
};

double batch_mean(const RunArtifact& a, const std::string& metric) {
  for (const auto& s : a.stats) {
    if (s.metric == metric && s.stats) return s.stats->mean;
  }
  return std::nan("");
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<SeedRun> desk_seed_runs() {
  std::vector<SeedRun> out;
  for (std::uint64_t s = 0; s < 5; ++s) {
    ExperimentConfig c = desk_config();
    c.seed_dataset = 1 + s;
    c.seed_train = 2 + s;
    c.seed_sample = 3 + s;
    const auto a = evaluate(prepare(c));
    check_all(a, "desk seed " + std::to_string(s));
    out.push_back({s, batch_mean(a, "F"), batch_mean(a, "R"), batch_mean(a, "E"), batch_mean(a, "C"),
                   *a.kl_train, *a.kl_target, a.model.loss_history.back().loss});
  }
  return out;
}

Outcome criterion5(const std::vector<SeedRun>& runs) {
  Outcome o;
  const auto space = build_space(testing::cardinality(12, 6));
  const auto t = training_size(space.size(), 0.05);
  const double f_random = static_cast<double>(space.size() - t) / static_cast<double>(4096 - t);
  std::vector<double> fs_, rs;
  for (const auto& r : runs) {
    fs_.push_back(r.f);
    rs.push_back(r.r);
    o.note("seed " + std::to_string(r.seed) + ": E=" + num(r.e) + " F=" + num(r.f) + " R=" + num(r.r) +
           " C=" + num(r.c) + " NLL=" + num(r.final_nll) + " (ln|S|=" + num(std::log(924.0)) + ")");
  }
  const double mf = median(fs_), mr = median(rs);
  o.require(mf >= 0.8, "median F >= 0.8 (got " + num(mf) + ")");
  o.require(mr >= 0.75, "median R >= 0.75 (got " + num(mr) + ")");
  o.require(mf >= 2 * f_random, "median F >= 2 x random baseline " + num(f_random) + " (got " + num(mf) + ")");
  return o;
}

Outcome criterion6(const std::vector<SeedRun>& runs) {
  Outcome o;
  int ordered = 0;
  for (const auto& r : runs) {
    ordered += r.kl_target < r.kl_train ? 1 : 0;
    o.note("seed " + std::to_string(r.seed) + ": KL_Target=" + num(r.kl_target) + " KL_Train=" + num(r.kl_train));
  }
  o.require(ordered >= 4, "KL_Target < KL_Train in >= 4 of 5 seeds at eps=0.05 (got " + std::to_string(ordered) + ")");

  ExperimentConfig c = desk_config();
  c.epsilon = 1.0;
  const auto a = evaluate(prepare(c));
  check_all(a, "eps=1");
  o.require(a.kl_train && a.kl_target && *a.kl_target == *a.kl_train, "KL_Target == KL_Train at eps=1");
  const auto lines = [&] {
    std::vector<std::string> out;
    std::istringstream in(metrics_csv(a));
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
  }();
  const auto header = split_csv(lines.front());
  const auto col = [&](const std::string& name) {
    return static_cast<std::size_t>(std::find(header.begin(), header.end(), name) - header.begin());
  };
  bool all_nan = true;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_csv(lines[i]);
    all_nan &= f[col("R_tilde")] == "nan" && f[col("C")] == "nan";
  }
  o.require(all_nan, "R_tilde and C serialize as nan at eps=1");
  o.note("eps=1: KL_Target=" + num(*a.kl_target, 17) + " KL_Train=" + num(*a.kl_train, 17) +
         ", R_tilde/C nan in all " + std::to_string(lines.size() - 1) + " rows");
  return o;
}

// ---------------------------------------------------------------------------

Outcome criterion7() {
  Outcome o;
  std::mt19937_64 rng(707);
  const auto gaussian = [&](int rows, int cols) {
    std::normal_distribution<double> n;
    MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
    return m;
  };
  const auto fd = [](gan::Mlp net, const std::function<double(const gan::Mlp&)>& loss) {
    const VectorXd p = net.flat_parameters();
    VectorXd g(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      VectorXd a = p, b = p;
      a(i) += 1e-6;
      b(i) -= 1e-6;
      net.set_flat_parameters(a);
      const double fa = loss(net);
      net.set_flat_parameters(b);
      g(i) = (fa - loss(net)) / 2e-6;
    }
    return g;
  };
  double worst = 0.0;
  std::uniform_int_distribution<int> size(2, 6), layers(1, 3);
  for (int trial = 0; trial < 50; ++trial) {
    gan::GanConfig cfg;
    cfg.prior_size = size(rng);
    cfg.gen_hidden_size = size(rng);
    cfg.gen_layers = layers(rng);
    cfg.disc_hidden_size = size(rng);
    cfg.disc_layers = layers(rng);
    cfg.negative_slope = 0.05;
    cfg.dropout = 0.0;
    const int width = size(rng);
    auto m = gan::init_gan(cfg, width, static_cast<std::uint64_t>(trial));
    for (gan::Mlp* net : {&m.generator, &m.discriminator}) {
      const auto n = static_cast<int>(net->parameter_count());
      net->set_flat_parameters(net->flat_parameters() + 0.3 * gaussian(n, 1));
    }
    MatrixXd real = gaussian(width, 4).unaryExpr([](double v) { return v > 0 ? 1.0 : 0.0; });
    const MatrixXd z = gaussian(cfg.prior_size, 5);
    const MatrixXd fake = m.generator.forward(z);
    const auto d = gan::discriminator_loss(m.discriminator, real, fake, nullptr);
    const VectorXd dfd = fd(m.discriminator, [&](const gan::Mlp& net) {
      return gan::discriminator_loss(net, real, fake, nullptr).loss;
    });
    worst = std::max(worst, (d.grads - dfd).norm() / dfd.norm());
    const bool saturating = trial % 2 == 1;
    const auto g = gan::generator_loss(m.generator, m.discriminator, z, saturating, nullptr);
    const VectorXd gfd = fd(m.generator, [&](const gan::Mlp& net) {
      return gan::generator_loss(net, m.discriminator, z, saturating, nullptr).loss;
    });
    worst = std::max(worst, (g.grads - gfd).norm() / gfd.norm());
  }
  o.require(worst < 1e-4, "backprop rel. error < 1e-4");
  o.note("50 networks: max rel. gradient error = " + num(worst, 3));

  gan::AdamState s(1);
  VectorXd p = VectorXd::Constant(1, 1.0);
  gan::adam_update(s, p, VectorXd::Constant(1, 1.0), 0.1);
  o.require(p(0) == 1.0 - 0.1 * 1.0 / (1.0 + 1e-8), "Adam single step = 1 - 0.1/(1+1e-8)");
  o.note("Adam step: " + num(p(0), 17));

  const auto space = build_space(testing::cardinality(12, 6));
  const auto train = draw_training_set(space, 0.05, 1);
  auto cfg = gan::preset_config(gan::Preset::gan);
  cfg.n_epochs = 50;
  const auto init = gan::init_gan(cfg, 12, 5);
  const auto a = gan::gan_train(init, train, cfg);
  const auto b = gan::gan_train(init, train, cfg);
  bool same = a.model.generator.flat_parameters() == b.model.generator.flat_parameters() &&
              a.model.discriminator.flat_parameters() == b.model.discriminator.flat_parameters();
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    same &= a.history[i].generator == b.history[i].generator &&
            a.history[i].discriminator == b.history[i].discriminator;
  }
  o.require(same, "gan_train bitwise deterministic");

  struct Row {
    gan::Preset p;
    int prior, gh, gl;
    double glr;
    int dh, dl;
    double dlr, slope, dropout;
    int batch;
  };
  const Row table[] = {{gan::Preset::gan, 20, 20, 1, 0.02, 20, 1, 0.02, 0.02, 1e-5, 50},
                       {gan::Preset::gan_mc, 8, 6, 4, 0.051, 9, 3, 0.008, 0.007, 0.024, 71},
                       {gan::Preset::gan_plus, 12, 6, 1, 0.001, 9, 1, 0.006, 0.010, 0.107, 56}};
  bool presets = true;
  for (const auto& r : table) {
    const auto c = gan::preset_config(r.p);
    presets &= c.prior_size == r.prior && c.gen_hidden_size == r.gh && c.gen_layers == r.gl &&
               c.gen_lr == r.glr && c.disc_hidden_size == r.dh && c.disc_layers == r.dl &&
               c.disc_lr == r.dlr && c.negative_slope == r.slope && c.dropout == r.dropout &&
               c.batch_size == r.batch;
  }
  o.require(presets, "presets echo the reference table");
  const auto m = gan::init_gan(gan::preset_config(gan::Preset::gan), 20, 1);
  o.note("GAN preset at N=20: " +
         std::to_string(m.generator.parameter_count() + m.discriminator.parameter_count()) +
         " trainable parameters");
  return o;
}

// ---------------------------------------------------------------------------

Outcome criterion8() {
  Outcome o;
  const auto space = build_space(testing::cardinality(12, 6));
  const auto train = draw_training_set(space, 0.05, 8);
  std::vector<Bitstring> unseen;
  for (const auto& x : enumerate_space(space)) {
    if (!train.samples.contains(x.bits())) unseen.push_back(x);
  }
  const auto check = [&](const std::string& name, const SampleMultiset& q, Behaviour want) {
    const auto r = validity_metrics(train, space, q);
    identities.check(r, "classifier " + name);
    const auto got = classify_behaviour(r);
    o.require(got == want, name + " -> " + to_string(want) + " (got " + to_string(got) + ")");
    o.note(name + ": E=" + num(r.exploration) + " F=" + (r.fidelity ? num(*r.fidelity) : "nan") +
           " R=" + num(r.rate) + " C=" + num(r.coverage.value_or(std::nan(""))) + " -> " + to_string(got));
  };

  SampleMultiset gen(12);
  for (const auto& x : unseen) gen.add(x, 3);
  check("perfect generalization", gen, Behaviour::perfect_generalization);

  SampleMultiset mem(12);
  for (const auto& x : train.members()) mem.add(x, 200);
  check("perfect memorization", mem, Behaviour::perfect_memorization);

  SampleMultiset anomalous(12);
  for (std::uint32_t x = 0, added = 0; added < 400; ++x) {
    if (!space.contains(x) && !train.samples.contains(x)) {
      anomalous.add(Bitstring(12, x), 25);
      ++added;
    }
  }
  check("anomalous pre-generalization", anomalous, Behaviour::anomalous_pre_generalization);

  SampleMultiset mc_valid(12);
  mc_valid.add(unseen.front(), 10000);
  check("mode collapse, unseen valid", mc_valid, Behaviour::mode_collapse_unseen_valid);

  SampleMultiset mc_invalid(12);
  mc_invalid.add(Bitstring(12, 0xFFF), 10000);
  check("mode collapse, unseen invalid", mc_invalid, Behaviour::mode_collapse_unseen_invalid);

  SampleMultiset mc_seen(12);
  mc_seen.add(train.members().front(), 10000);
  check("mode collapse, seen", mc_seen, Behaviour::mode_collapse_seen);
  return o;
}

// ---------------------------------------------------------------------------

Outcome criterion9(const Prepared& prep) {
  Outcome o;
  const auto rows = sweep_q(prep, {1000, 10000, 100000});
  for (const auto& r : rows) {
    o.note("Q=" + std::to_string(r.queries) + ": F=" + num(*r.f) + " R=" + num(*r.r) + " C=" + num(*r.c) +
           " MV=" + num(*r.mv, 6) + " C_bar=" + num(r.c_bar));
  }
  bool c_up = true, mv_down = true;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    c_up &= *rows[i].c >= *rows[i - 1].c;
    mv_down &= *rows[i].mv <= *rows[i - 1].mv;
  }
  o.require(c_up, "C non-decreasing in Q");
  o.require(mv_down, "MV non-increasing in Q");

  // Per-batch noise at the smallest Q, from independent batches.
  ExperimentConfig c = prep.cfg;
  c.queries = 1000;
  c.n_query_batches = 30;
  c.mv_batches = 5;
  c.seed_sample = prep.cfg.seed_sample + 1000;
  const auto noise = evaluate(Prepared{c, prep.instance, prep.model});
  check_all(noise, "trend noise");
  double sf = 0, sr = 0;
  for (const auto& s : noise.stats) {
    if (s.metric == "F") sf = s.stats->stddev;
    if (s.metric == "R") sr = s.stats->stddev;
  }
  double df = 0, dr = 0;
  for (const auto& a : rows) {
    for (const auto& b : rows) {
      df = std::max(df, std::abs(*a.f - *b.f));
      dr = std::max(dr, std::abs(*a.r - *b.r));
    }
  }
  o.require(df < 3 * sf, "F spread < 3 sigma");
  o.require(dr < 3 * sr, "R spread < 3 sigma");
  o.note("spread F=" + num(df, 3) + " (3 sigma " + num(3 * sf, 3) + "), R=" + num(dr, 3) + " (3 sigma " +
         num(3 * sr, 3) + ")");
  return o;
}

Outcome criterion10(const Prepared& prep) {
  Outcome o;
  ExperimentConfig c = prep.cfg;
  c.n_query_batches = 30;
  const auto a = evaluate(Prepared{c, prep.instance, prep.model});
  check_all(a, "robustness");
  for (const auto& s : a.stats) {
    if (s.metric != "E" && s.metric != "F" && s.metric != "R" && s.metric != "C") continue;
    const double rel = s.stats && s.stats->rel_pct_error ? *s.stats->rel_pct_error : std::nan("");
    o.require(rel < 5.0, s.metric + " rel. error < 5%");
    o.note(s.metric + ": mean=" + num(s.stats->mean) + " rel. error=" + num(rel, 3) + "%");
  }
  return o;
}

Outcome criterion11() {
  Outcome o;
  const auto root = testing::scratch_dir("acceptance");
  auto gan_cfg = desk_config();
  gan_cfg.run_id = "desk_gan";
  gan_cfg.model = ModelKind::gan;
  gan_cfg.gan = gan::preset_config(gan::Preset::gan);
  gan_cfg.n_epochs = 50;
  auto bas_cfg = desk_config();
  bas_cfg.run_id = "bas_random";
  bas_cfg.task = testing::bas(3, 3);
  bas_cfg.epsilon = 0.5;
  bas_cfg.model = ModelKind::random;
  for (auto cfg : {desk_config(), gan_cfg, bas_cfg}) {
    std::string csv[2];
    for (int i = 0; i < 2; ++i) {
      cfg.output_dir = root / std::to_string(i);
      const auto a = run_experiment(cfg);
      check_all(a, "run " + cfg.run_id);
      std::ifstream in(cfg.output_dir / cfg.run_id / "metrics.csv", std::ios::binary);
      csv[i].assign(std::istreambuf_iterator<char>(in), {});
    }
    o.require(!csv[0].empty() && csv[0] == csv[1], cfg.run_id + " metrics.csv byte-identical");
    o.note(cfg.run_id + ": " + std::to_string(csv[0].size()) + " bytes, identical=" +
           (csv[0] == csv[1] ? "yes" : "no"));
  }
  fs::remove_all(root);
  return o;
}

Outcome criterion3() {
  Outcome o;
  o.require(identities.violations == 0, "first at " + identities.first);
  o.note(std::to_string(identities.reports) + " reports checked, " + std::to_string(identities.violations) +
         " violations");
  return o;
}

// Mode-collapse analogue: label of GAN-MC queries per seed, and E of the
// plain GAN preset. Informational.
void gan_info() {
  std::map<std::string, int> labels;
  std::string e_values;
  for (std::uint64_t s = 0; s < 5; ++s) {
    ExperimentConfig c = desk_config();
    c.model = ModelKind::gan;
    c.gan = gan::preset_config(gan::Preset::gan_mc);
    c.seed_dataset = 1 + s;
    c.seed_train = 2 + s;
    c.seed_sample = 3 + s;
    ++labels[to_string(evaluate(prepare(c)).label)];
    c.gan = gan::preset_config(gan::Preset::gan);
    e_values += " " + num(batch_mean(evaluate(prepare(c)), "E"), 3);
  }
  std::cout << "INFO desk-scale GAN-MC labels over 5 seeds:";
  for (const auto& [l, n] : labels) std::cout << ' ' << l << '=' << n;
  std::cout << "; GAN preset E per seed:" << e_values << '\n';
}

void paper_scale_info() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto a = evaluate(prepare(paper_scale_config()));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "INFO paper-scale TNBM (N=20, k=10, eps=0.01, Q=1e5): E=" << num(batch_mean(a, "E"))
            << " F=" << num(batch_mean(a, "F")) << " R=" << num(batch_mean(a, "R"))
            << " C=" << num(batch_mean(a, "C")) << " C/C_bar=" << num(batch_mean(a, "C_over_C_bar"))
            << " KL_Train=" << num(*a.kl_train) << " KL_Target=" << num(*a.kl_target) << " label="
            << to_string(a.label) << " (" << num(secs, 3) << " s)\n";
}

}  // namespace

int main(int argc, char** argv) {
  const bool paper_scale = !(argc > 1 && std::string(argv[1]) == "--skip-paper-scale");
  const char* names[] = {"",
                         "coverage references",
                         "brute-force oracle equivalence",
                         "identities and coverage bound",
                         "MPS correctness",
                         "desk-scale TNBM generalization",
                         "KL ordering and eps=1 serialization",
                         "GAN machinery",
                         "behaviour classifier",
                         "trend properties over Q",
                         "robustness over 30 batches",
                         "reproducibility"};
  std::map<int, Outcome> results;
  std::map<int, double> seconds;
  const auto run = [&](int id, const std::function<Outcome()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      results[id] = f();
    } catch (const std::exception& e) {
      Outcome o;
      o.require(false, std::string("exception: ") + e.what());
      results[id] = o;
    }
    seconds[id] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  run(1, criterion1);
  run(2, criterion2);
  run(4, criterion4);
  std::vector<SeedRun> seeds;
  run(5, [&] {
    seeds = desk_seed_runs();
    return criterion5(seeds);
  });
  run(6, [&] { return criterion6(seeds); });
  run(7, criterion7);
  run(8, criterion8);
  std::optional<Prepared> desk;
  run(9, [&] {
    desk = prepare(desk_config());
    return criterion9(*desk);
  });
  run(10, [&] { return criterion10(desk ? *desk : prepare(desk_config())); });
  run(11, criterion11);
  run(3, criterion3);  // last: collects reports from every other criterion

  int failed = 0;
  for (int id = 1; id <= 11; ++id) {
    const auto& o = results[id];
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << names[id] << " ("
              << num(seconds[id], 3) << " s)\n";
    for (const auto& n : o.notes) std::cout << "    " << n << '\n';
  }
  try {
    gan_info();
    if (paper_scale) paper_scale_info();
  } catch (const std::exception& e) {
    std::cout << "INFO run failed: " << e.what() << '\n';
  }
  std::cout << (11 - failed) << " of 11 criteria passed\n";
  return failed == 0 ? 0 : 1;
}
