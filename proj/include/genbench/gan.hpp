#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <random>
#include <string>
#include <vector>

#include "genbench/bitcore.hpp"
#include "genbench/tasks.hpp"

namespace genbench::gan {

enum class Activation { relu, leaky_relu, sigmoid, identity };

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
  Activation activation = Activation::identity;
  double negative_slope = 0.0;  // leaky_relu only
};

/// Feed-forward network acting on column batches (features x batch).
/// Dropout, when its rate is non-zero, is applied to the input of the final
/// layer during training only.
class Mlp {
 public:
  Mlp(std::vector<Layer> layers, double dropout_rate = 0.0);

  const std::vector<Layer>& layers() const { return layers_; }
  double dropout_rate() const { return dropout_rate_; }
  int input_size() const { return static_cast<int>(layers_.front().weight.cols()); }
  int output_size() const { return static_cast<int>(layers_.back().weight.rows()); }

  /// Inference pass (no dropout).
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;

  std::size_t parameter_count() const;
  /// Parameters layer by layer: weight row-major, then bias.
  Eigen::VectorXd flat_parameters() const;
  void set_flat_parameters(const Eigen::VectorXd& flat);

 private:
  std::vector<Layer> layers_;
  double dropout_rate_;
};

/// Activations recorded by a training forward pass.
struct ForwardTrace {
  std::vector<Eigen::MatrixXd> inputs;  // input to each layer, after dropout
  std::vector<Eigen::MatrixXd> pre;     // pre-activations
  Eigen::MatrixXd dropout_scale;        // 0 or 1/keep per unit; empty without dropout
  Eigen::MatrixXd output;
};

/// Training forward pass. Dropout masks are drawn from rng when given and the
/// rate is non-zero; a null rng disables dropout.
ForwardTrace forward_train(const Mlp& net, const Eigen::MatrixXd& x, std::mt19937_64* rng);

struct Backward {
  Eigen::VectorXd param_grads;  // flat_parameters() layout
  Eigen::MatrixXd input_grads;
};

/// Backpropagates dL/d(pre-activation of the last layer).
Backward backward(const Mlp& net, const ForwardTrace& trace, const Eigen::MatrixXd& grad_last_pre);

// ---------------------------------------------------------------------------

enum class Preset { gan, gan_mc, gan_plus };

std::string to_string(Preset p);
Preset preset_from_string(const std::string& name);

struct GanConfig {
  int prior_size = 20;
  int gen_hidden_size = 20;
  int gen_layers = 1;
  double gen_lr = 0.02;
  int disc_hidden_size = 20;
  int disc_layers = 1;
  double disc_lr = 0.02;
  double negative_slope = 0.02;
  double dropout = 1e-5;
  int batch_size = 50;
  int n_epochs = 100;
  std::uint64_t seed = 0;
  Preset preset = Preset::gan;
  /// Minimize mean log(1 - D(G(z))) instead of maximizing mean log D(G(z)).
  bool saturating_generator_loss = false;
};

/// Missing keys keep their current values, so a preset can be overridden
/// field by field.
void to_json(nlohmann::json& j, const GanConfig& cfg);
void from_json(const nlohmann::json& j, GanConfig& cfg);

/// Hyperparameters of the GAN, GAN-MC and GAN+ reference configurations.
GanConfig preset_config(Preset p);

/// Throws ConfigError for non-positive sizes/rates or dropout outside [0, 1).
void validate(const GanConfig& cfg);

struct GanModel {
  Mlp generator;
  Mlp discriminator;
};

/// Generator: prior -> gen_layers x ReLU(hidden) -> sigmoid(width).
/// Discriminator: width -> disc_layers x LeakyReLU(hidden) -> dropout -> sigmoid(1).
/// Weights N(0, 2/fan_in) for ReLU-family layers and N(0, 1/fan_in) for the
/// sigmoid outputs; zero biases.
GanModel init_gan(const GanConfig& cfg, int width, std::uint64_t seed);

// ---------------------------------------------------------------------------

struct AdamState {
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  long step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  explicit AdamState(Eigen::Index n_params = 0)
      : first_moment(Eigen::VectorXd::Zero(n_params)),
        second_moment(Eigen::VectorXd::Zero(n_params)) {}
};

/// Bias-corrected Adam step. Throws TrainingDivergedError on non-finite
/// gradients and ConfigError on shape mismatch.
void adam_update(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grads,
                 double lr);

// ---------------------------------------------------------------------------

struct LossAndGrads {
  double loss = 0;
  Eigen::VectorXd grads;
};

/// Binary cross-entropy of the discriminator on real (label 1) and fake
/// (label 0) columns: mean -log D(real) + mean -log(1 - D(fake)).
LossAndGrads discriminator_loss(const Mlp& disc, const Eigen::MatrixXd& real,
                                const Eigen::MatrixXd& fake, std::mt19937_64* rng);

/// Generator loss for prior samples z, with gradients w.r.t. the generator's
/// parameters. Non-saturating: mean -log D(G(z)).
LossAndGrads generator_loss(const Mlp& gen, const Mlp& disc, const Eigen::MatrixXd& z,
                            bool saturating, std::mt19937_64* rng);

struct EpochLosses {
  double discriminator = 0;
  double generator = 0;
};

struct GanTrainResult {
  GanModel model;
  std::vector<EpochLosses> history;
};

/// Alternating minibatch training: one discriminator step then one
/// generator step per minibatch, ceil(T / batch_size) minibatches per epoch.
/// Reweighted training sets are sampled with replacement from their weights.
GanTrainResult gan_train(GanModel model, const TrainingSet& train, const GanConfig& cfg);

/// Draws prior vectors and thresholds the generator's sigmoid outputs at 0.5
/// (exactly 0.5 maps to 1).
class GanSampler {
 public:
  explicit GanSampler(Mlp generator);
  Bitstring draw(std::mt19937_64& rng) const;
  std::vector<Bitstring> draw_batch(std::uint64_t count, std::mt19937_64& rng) const;
  int width() const { return gen_.output_size(); }

 private:
  Mlp gen_;
};

SampleMultiset gan_sample(const Mlp& generator, std::uint64_t count, std::uint64_t seed);

/// Exact-threshold binarization used by the sampler.
std::uint32_t binarize(const Eigen::VectorXd& probabilities);

void save_gan(const GanModel& model, const GanConfig& cfg, const std::filesystem::path& path);
/// Returns the model and the config echo stored with it.
std::pair<GanModel, GanConfig> load_gan(const std::filesystem::path& path);

}  // namespace genbench::gan
