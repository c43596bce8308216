#include "genbench/gan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "genbench/errors.hpp"

namespace genbench::gan {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr int kCheckpointVersion = 1;

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

MatrixXd activate(const MatrixXd& z, const Layer& layer) {
  switch (layer.activation) {
    case Activation::relu:
      return z.cwiseMax(0.0);
    case Activation::leaky_relu:
      return z.unaryExpr([s = layer.negative_slope](double v) { return v > 0 ? v : s * v; });
    case Activation::sigmoid:
      return z.unaryExpr([](double v) { return sigmoid(v); });
    case Activation::identity:
      return z;
  }
  return z;
}

MatrixXd activation_derivative(const MatrixXd& z, const Layer& layer) {
  switch (layer.activation) {
    case Activation::relu:
      return z.unaryExpr([](double v) { return v > 0 ? 1.0 : 0.0; });
    case Activation::leaky_relu:
      return z.unaryExpr([s = layer.negative_slope](double v) { return v > 0 ? 1.0 : s; });
    case Activation::sigmoid:
      return z.unaryExpr([](double v) {
        const double s = sigmoid(v);
        return s * (1.0 - s);
      });
    case Activation::identity:
      return MatrixXd::Ones(z.rows(), z.cols());
  }
  return MatrixXd::Ones(z.rows(), z.cols());
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu:
      return "relu";
    case Activation::leaky_relu:
      return "leaky_relu";
    case Activation::sigmoid:
      return "sigmoid";
    case Activation::identity:
      return "identity";
  }
  return "identity";
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "leaky_relu") return Activation::leaky_relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + s + "'");
}

Layer make_layer(int in, int out, Activation act, double slope, double stddev,
                 std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Layer l;
  l.weight.resize(out, in);
  for (Index r = 0; r < out; ++r) {
    for (Index c = 0; c < in; ++c) l.weight(r, c) = dist(rng);
  }
  l.bias = VectorXd::Zero(out);
  l.activation = act;
  l.negative_slope = slope;
  return l;
}

MatrixXd standard_normal(int rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  MatrixXd z(rows, cols);
  // Column by column so a batch draw matches repeated single draws.
  for (Index c = 0; c < cols; ++c) {
    for (Index r = 0; r < rows; ++r) z(r, c) = dist(rng);
  }
  return z;
}

nlohmann::json mlp_to_json(const Mlp& net) {
  nlohmann::json j;
  j["dropout"] = net.dropout_rate();
  auto& layers = j["layers"] = nlohmann::json::array();
  for (const auto& l : net.layers()) {
    std::vector<double> w;
    for (Index r = 0; r < l.weight.rows(); ++r) {
      for (Index c = 0; c < l.weight.cols(); ++c) w.push_back(l.weight(r, c));
    }
    layers.push_back({{"in", l.weight.cols()},
                      {"out", l.weight.rows()},
                      {"activation", to_string(l.activation)},
                      {"negative_slope", l.negative_slope},
                      {"weight", w},
                      {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  }
  return j;
}

Mlp mlp_from_json(const nlohmann::json& j) {
  std::vector<Layer> layers;
  for (const auto& lj : j.at("layers")) {
    const int in = lj.at("in");
    const int out = lj.at("out");
    const auto w = lj.at("weight").get<std::vector<double>>();
    const auto b = lj.at("bias").get<std::vector<double>>();
    if (w.size() != static_cast<std::size_t>(in * out) || b.size() != static_cast<std::size_t>(out)) {
      throw ConfigError("GAN checkpoint layer has the wrong number of entries");
    }
    Layer l;
    l.weight.resize(out, in);
    std::size_t idx = 0;
    for (Index r = 0; r < out; ++r) {
      for (Index c = 0; c < in; ++c) l.weight(r, c) = w[idx++];
    }
    l.bias = Eigen::Map<const VectorXd>(b.data(), out);
    l.activation = activation_from_string(lj.at("activation"));
    l.negative_slope = lj.at("negative_slope");
    layers.push_back(std::move(l));
  }
  return Mlp(std::move(layers), j.at("dropout").get<double>());
}

}  // namespace

Mlp::Mlp(std::vector<Layer> layers, double dropout_rate)
    : layers_(std::move(layers)), dropout_rate_(dropout_rate) {
  if (layers_.empty()) throw ConfigError("an MLP needs at least one layer");
  if (!(dropout_rate_ >= 0.0 && dropout_rate_ < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1)");
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.bias.size() != l.weight.rows()) throw ConfigError("bias size != layer output size");
    if (i > 0 && l.weight.cols() != layers_[i - 1].weight.rows()) {
      throw ConfigError("consecutive MLP layer dimensions disagree");
    }
    if (l.activation == Activation::leaky_relu && !(l.negative_slope > 0.0)) {
      throw ConfigError("leaky ReLU needs a positive negative slope");
    }
  }
}

MatrixXd Mlp::forward(const MatrixXd& x) const {
  MatrixXd a = x;
  for (const auto& l : layers_) {
    MatrixXd z = (l.weight * a).colwise() + l.bias;
    a = activate(z, l);
  }
  return a;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

VectorXd Mlp::flat_parameters() const {
  VectorXd flat(static_cast<Index>(parameter_count()));
  Index k = 0;
  for (const auto& l : layers_) {
    for (Index r = 0; r < l.weight.rows(); ++r) {
      for (Index c = 0; c < l.weight.cols(); ++c) flat(k++) = l.weight(r, c);
    }
    for (Index r = 0; r < l.bias.size(); ++r) flat(k++) = l.bias(r);
  }
  return flat;
}

void Mlp::set_flat_parameters(const VectorXd& flat) {
  if (flat.size() != static_cast<Index>(parameter_count())) {
    throw ConfigError("flat parameter vector has the wrong size");
  }
  Index k = 0;
  for (auto& l : layers_) {
    for (Index r = 0; r < l.weight.rows(); ++r) {
      for (Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = flat(k++);
    }
    for (Index r = 0; r < l.bias.size(); ++r) l.bias(r) = flat(k++);
  }
}

ForwardTrace forward_train(const Mlp& net, const MatrixXd& x, std::mt19937_64* rng) {
  ForwardTrace t;
  const auto& layers = net.layers();
  const std::size_t last = layers.size() - 1;
  MatrixXd a = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i == last && i > 0 && rng && net.dropout_rate() > 0.0) {
      const double keep = 1.0 - net.dropout_rate();
      std::bernoulli_distribution bern(keep);
      t.dropout_scale.resize(a.rows(), a.cols());
      for (Index c = 0; c < a.cols(); ++c) {
        for (Index r = 0; r < a.rows(); ++r) t.dropout_scale(r, c) = bern(*rng) ? 1.0 / keep : 0.0;
      }
      a = a.cwiseProduct(t.dropout_scale);
    }
    t.inputs.push_back(a);
    MatrixXd z = (layers[i].weight * a).colwise() + layers[i].bias;
    a = activate(z, layers[i]);
    t.pre.push_back(std::move(z));
  }
  t.output = std::move(a);
  return t;
}

Backward backward(const Mlp& net, const ForwardTrace& trace, const MatrixXd& grad_last_pre) {
  const auto& layers = net.layers();
  const std::size_t n = layers.size();
  std::vector<MatrixXd> gw(n);
  std::vector<VectorXd> gb(n);
  MatrixXd delta = grad_last_pre;
  MatrixXd g_in;
  for (std::size_t i = n; i-- > 0;) {
    gw[i] = delta * trace.inputs[i].transpose();
    gb[i] = delta.rowwise().sum();
    g_in = layers[i].weight.transpose() * delta;
    if (i == n - 1 && trace.dropout_scale.size() > 0) g_in = g_in.cwiseProduct(trace.dropout_scale);
    if (i > 0) delta = g_in.cwiseProduct(activation_derivative(trace.pre[i - 1], layers[i - 1]));
  }
  Backward out;
  out.param_grads.resize(static_cast<Index>(net.parameter_count()));
  Index k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (Index r = 0; r < gw[i].rows(); ++r) {
      for (Index c = 0; c < gw[i].cols(); ++c) out.param_grads(k++) = gw[i](r, c);
    }
    for (Index r = 0; r < gb[i].size(); ++r) out.param_grads(k++) = gb[i](r);
  }
  out.input_grads = std::move(g_in);
  return out;
}

// ---------------------------------------------------------------------------

std::string to_string(Preset p) {
  switch (p) {
    case Preset::gan:
      return "GAN";
    case Preset::gan_mc:
      return "GAN-MC";
    case Preset::gan_plus:
      return "GAN+";
  }
  return "GAN";
}

Preset preset_from_string(const std::string& name) {
  if (name == "GAN" || name == "gan") return Preset::gan;
  if (name == "GAN-MC" || name == "gan_mc" || name == "gan-mc") return Preset::gan_mc;
  if (name == "GAN+" || name == "gan_plus" || name == "gan+") return Preset::gan_plus;
  throw ConfigError("unknown GAN preset '" + name + "'");
}

GanConfig preset_config(Preset p) {
  GanConfig c;
  c.preset = p;
  switch (p) {
    case Preset::gan:
      c.prior_size = 20;
      c.gen_hidden_size = 20;
      c.gen_layers = 1;
      c.gen_lr = 0.02;
      c.disc_hidden_size = 20;
      c.disc_layers = 1;
      c.disc_lr = 0.02;
      c.negative_slope = 0.02;
      c.dropout = 1e-5;
      c.batch_size = 50;
      break;
    case Preset::gan_mc:
      c.prior_size = 8;
      c.gen_hidden_size = 6;
      c.gen_layers = 4;
      c.gen_lr = 0.051;
      c.disc_hidden_size = 9;
      c.disc_layers = 3;
      c.disc_lr = 0.008;
      c.negative_slope = 0.007;
      c.dropout = 0.024;
      c.batch_size = 71;
      break;
    case Preset::gan_plus:
      c.prior_size = 12;
      c.gen_hidden_size = 6;
      c.gen_layers = 1;
      c.gen_lr = 0.001;
      c.disc_hidden_size = 9;
      c.disc_layers = 1;
      c.disc_lr = 0.006;
      c.negative_slope = 0.010;
      c.dropout = 0.107;
      c.batch_size = 56;
      break;
  }
  return c;
}

void to_json(nlohmann::json& j, const GanConfig& c) {
  j = {{"preset", to_string(c.preset)},
       {"prior_size", c.prior_size},
       {"gen_hidden_size", c.gen_hidden_size},
       {"gen_layers", c.gen_layers},
       {"gen_lr", c.gen_lr},
       {"disc_hidden_size", c.disc_hidden_size},
       {"disc_layers", c.disc_layers},
       {"disc_lr", c.disc_lr},
       {"negative_slope", c.negative_slope},
       {"dropout", c.dropout},
       {"batch_size", c.batch_size},
       {"n_epochs", c.n_epochs},
       {"seed", c.seed},
       {"saturating_generator_loss", c.saturating_generator_loss}};
}

void from_json(const nlohmann::json& j, GanConfig& c) {
  const auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  if (j.contains("preset")) {
    const auto epochs = c.n_epochs;
    const auto seed = c.seed;
    c = preset_config(preset_from_string(j.at("preset").get<std::string>()));
    c.n_epochs = epochs;
    c.seed = seed;
  }
  get("prior_size", c.prior_size);
  get("gen_hidden_size", c.gen_hidden_size);
  get("gen_layers", c.gen_layers);
  get("gen_lr", c.gen_lr);
  get("disc_hidden_size", c.disc_hidden_size);
  get("disc_layers", c.disc_layers);
  get("disc_lr", c.disc_lr);
  get("negative_slope", c.negative_slope);
  get("dropout", c.dropout);
  get("batch_size", c.batch_size);
  get("n_epochs", c.n_epochs);
  get("seed", c.seed);
  get("saturating_generator_loss", c.saturating_generator_loss);
}

void validate(const GanConfig& c) {
  if (c.prior_size < 1 || c.gen_hidden_size < 1 || c.gen_layers < 1 ||
      c.disc_hidden_size < 1 || c.disc_layers < 1 || c.batch_size < 1 || c.n_epochs < 0) {
    throw ConfigError("GAN sizes must be positive");
  }
  if (!(c.gen_lr > 0.0) || !(c.disc_lr > 0.0)) throw ConfigError("GAN learning rates must be positive");
  if (!(c.negative_slope > 0.0)) throw ConfigError("GAN negative slope must be positive");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw ConfigError("GAN dropout must lie in [0, 1)");
}

GanModel init_gan(const GanConfig& cfg, int width, std::uint64_t seed) {
  validate(cfg);
  if (width < 1 || width > kMaxWidth) throw ConfigError("GAN output width outside [1, 30]");
  std::mt19937_64 rng(seed);
  const auto he = [](int fan_in) { return std::sqrt(2.0 / fan_in); };
  const auto lecun = [](int fan_in) { return std::sqrt(1.0 / fan_in); };

  std::vector<Layer> g;
  int in = cfg.prior_size;
  for (int i = 0; i < cfg.gen_layers; ++i) {
    g.push_back(make_layer(in, cfg.gen_hidden_size, Activation::relu, 0.0, he(in), rng));
    in = cfg.gen_hidden_size;
  }
  g.push_back(make_layer(in, width, Activation::sigmoid, 0.0, lecun(in), rng));

  std::vector<Layer> d;
  in = width;
  for (int i = 0; i < cfg.disc_layers; ++i) {
    d.push_back(make_layer(in, cfg.disc_hidden_size, Activation::leaky_relu,
                           cfg.negative_slope, he(in), rng));
    in = cfg.disc_hidden_size;
  }
  d.push_back(make_layer(in, 1, Activation::sigmoid, 0.0, lecun(in), rng));
  return GanModel{Mlp(std::move(g), 0.0), Mlp(std::move(d), cfg.dropout)};
}

void adam_update(AdamState& s, VectorXd& params, const VectorXd& grads, double lr) {
  if (params.size() != grads.size() || s.first_moment.size() != params.size() ||
      s.second_moment.size() != params.size()) {
    throw ConfigError("Adam state, parameters and gradients disagree in size");
  }
  if (!grads.allFinite()) throw TrainingDivergedError("non-finite gradient in Adam update");
  ++s.step_count;
  s.first_moment = s.beta1 * s.first_moment + (1.0 - s.beta1) * grads;
  s.second_moment = s.beta2 * s.second_moment + (1.0 - s.beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step_count));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step_count));
  for (Index i = 0; i < params.size(); ++i) {
    const double m_hat = s.first_moment(i) / c1;
    const double v_hat = s.second_moment(i) / c2;
    params(i) -= lr * m_hat / (std::sqrt(v_hat) + s.epsilon);
  }
}

LossAndGrads discriminator_loss(const Mlp& disc, const MatrixXd& real, const MatrixXd& fake,
                                std::mt19937_64* rng) {
  const Index nr = real.cols();
  const Index nf = fake.cols();
  MatrixXd x(real.rows(), nr + nf);
  x << real, fake;
  const auto trace = forward_train(disc, x, rng);
  const MatrixXd& z = trace.pre.back();
  MatrixXd dz(1, nr + nf);
  double loss = 0.0;
  for (Index c = 0; c < nr; ++c) {
    loss += softplus(-z(0, c)) / static_cast<double>(nr);
    dz(0, c) = (sigmoid(z(0, c)) - 1.0) / static_cast<double>(nr);
  }
  for (Index c = nr; c < nr + nf; ++c) {
    loss += softplus(z(0, c)) / static_cast<double>(nf);
    dz(0, c) = sigmoid(z(0, c)) / static_cast<double>(nf);
  }
  return {loss, backward(disc, trace, dz).param_grads};
}

LossAndGrads generator_loss(const Mlp& gen, const Mlp& disc, const MatrixXd& z,
                            bool saturating, std::mt19937_64* rng) {
  const auto gtrace = forward_train(gen, z, nullptr);
  const auto dtrace = forward_train(disc, gtrace.output, rng);
  const MatrixXd& logits = dtrace.pre.back();
  const auto b = static_cast<double>(z.cols());
  MatrixXd dz(1, z.cols());
  double loss = 0.0;
  for (Index c = 0; c < z.cols(); ++c) {
    const double l = logits(0, c);
    if (saturating) {
      loss -= softplus(l) / b;  // log(1 - sigmoid(l))
      dz(0, c) = -sigmoid(l) / b;
    } else {
      loss += softplus(-l) / b;
      dz(0, c) = (sigmoid(l) - 1.0) / b;
    }
  }
  const MatrixXd d_fake = backward(disc, dtrace, dz).input_grads;
  const MatrixXd& out = gtrace.output;
  const MatrixXd d_gen_pre = d_fake.cwiseProduct(out.cwiseProduct((1.0 - out.array()).matrix()));
  return {loss, backward(gen, gtrace, d_gen_pre).param_grads};
}

GanTrainResult gan_train(GanModel model, const TrainingSet& train, const GanConfig& cfg) {
  validate(cfg);
  if (train.size() == 0) throw InvalidTrainingSetError("empty training set");
  if (train.width() != model.generator.output_size() ||
      train.width() != model.discriminator.input_size()) {
    throw WidthMismatchError("training width does not match the GAN");
  }
  const int width = train.width();
  std::vector<std::uint32_t> keys;
  std::vector<double> weights;
  for (const auto& [bits, c] : train.samples.counts()) {
    keys.push_back(bits);
    if (train.weights) weights.push_back(train.weights->at(bits));
  }
  const std::size_t t = keys.size();
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t n_batches = (t + bs - 1) / bs;

  std::mt19937_64 rng(cfg.seed);
  std::discrete_distribution<std::size_t> weighted(weights.begin(), weights.end());
  std::vector<std::size_t> order(t);
  for (std::size_t i = 0; i < t; ++i) order[i] = i;

  VectorXd gp = model.generator.flat_parameters();
  VectorXd dp = model.discriminator.flat_parameters();
  AdamState gs(gp.size());
  AdamState ds(dp.size());

  GanTrainResult result{model, {}};
  for (int epoch = 0; epoch < cfg.n_epochs; ++epoch) {
    if (!train.weights) std::shuffle(order.begin(), order.end(), rng);
    EpochLosses sum;
    for (std::size_t b = 0; b < n_batches; ++b) {
      std::vector<std::size_t> idx;
      if (train.weights) {
        for (std::size_t i = 0; i < bs; ++i) idx.push_back(weighted(rng));
      } else {
        for (std::size_t i = b * bs; i < std::min(t, (b + 1) * bs); ++i) idx.push_back(order[i]);
      }
      const auto m = static_cast<Index>(idx.size());
      MatrixXd real(width, m);
      for (Index c = 0; c < m; ++c) {
        for (int r = 0; r < width; ++r) {
          real(r, c) = static_cast<double>((keys[idx[static_cast<std::size_t>(c)]] >> r) & 1u);
        }
      }
      const MatrixXd fake = result.model.generator.forward(standard_normal(cfg.prior_size, m, rng));
      const auto dl = discriminator_loss(result.model.discriminator, real, fake, &rng);
      adam_update(ds, dp, dl.grads, cfg.disc_lr);
      result.model.discriminator.set_flat_parameters(dp);

      const MatrixXd z = standard_normal(cfg.prior_size, m, rng);
      const auto gl = generator_loss(result.model.generator, result.model.discriminator, z,
                                     cfg.saturating_generator_loss, &rng);
      adam_update(gs, gp, gl.grads, cfg.gen_lr);
      result.model.generator.set_flat_parameters(gp);

      if (!std::isfinite(dl.loss) || !std::isfinite(gl.loss)) {
        throw TrainingDivergedError("non-finite GAN loss at epoch " + std::to_string(epoch));
      }
      sum.discriminator += dl.loss;
      sum.generator += gl.loss;
    }
    sum.discriminator /= static_cast<double>(n_batches);
    sum.generator /= static_cast<double>(n_batches);
    result.history.push_back(sum);
  }
  return result;
}

std::uint32_t binarize(const VectorXd& p) {
  std::uint32_t bits = 0;
  for (Index i = 0; i < p.size(); ++i) {
    if (p(i) >= 0.5) bits |= std::uint32_t{1} << i;
  }
  return bits;
}

GanSampler::GanSampler(Mlp generator) : gen_(std::move(generator)) {}

Bitstring GanSampler::draw(std::mt19937_64& rng) const {
  const MatrixXd out = gen_.forward(standard_normal(gen_.input_size(), 1, rng));
  return Bitstring(width(), binarize(out.col(0)));
}

std::vector<Bitstring> GanSampler::draw_batch(std::uint64_t count, std::mt19937_64& rng) const {
  std::vector<Bitstring> out;
  out.reserve(count);
  constexpr std::uint64_t kChunk = 4096;
  for (std::uint64_t done = 0; done < count; done += kChunk) {
    const auto n = static_cast<Index>(std::min(kChunk, count - done));
    const MatrixXd probs = gen_.forward(standard_normal(gen_.input_size(), n, rng));
    for (Index c = 0; c < n; ++c) out.emplace_back(width(), binarize(probs.col(c)));
  }
  return out;
}

SampleMultiset gan_sample(const Mlp& generator, std::uint64_t count, std::uint64_t seed) {
  const GanSampler sampler(generator);
  std::mt19937_64 rng(seed);
  SampleMultiset out(sampler.width());
  for (const auto& x : sampler.draw_batch(count, rng)) out.add(x);
  return out;
}

void save_gan(const GanModel& model, const GanConfig& cfg, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "genbench-gan";
  j["version"] = kCheckpointVersion;
  j["config"] = cfg;
  j["generator"] = mlp_to_json(model.generator);
  j["discriminator"] = mlp_to_json(model.discriminator);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(1) << '\n';
}

std::pair<GanModel, GanConfig> load_gan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("format") != "genbench-gan" || j.at("version") != kCheckpointVersion) {
      throw ConfigError(path.string() + ": not a version 1 GAN checkpoint");
    }
    GanConfig cfg;
    from_json(j.at("config"), cfg);
    return {GanModel{mlp_from_json(j.at("generator")), mlp_from_json(j.at("discriminator"))},
            cfg};
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace genbench::gan
