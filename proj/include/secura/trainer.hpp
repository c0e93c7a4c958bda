#pragma once

// A small stack of adapted linear layers with exact reverse-mode gradients,
// plain SGD, and deterministic synthetic tasks for continual-learning runs.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "secura/adapters.hpp"
#include "secura/merge.hpp"
#include "secura/smagnorm.hpp"

namespace secura {

enum class Method { SecuraM1, SecuraM2, Lora, CurLora, Seq, Cabr };

std::string method_name(Method m);
std::optional<Method> parse_method(const std::string& name);

struct NoAdapter {};
using AdapterSlot =
    std::variant<NoAdapter, CabrAdapter<double>, LoraAdapter<double>, CurLoraAdapter<double>>;

enum class Activation { Tanh, Identity };

struct AdaptedLayer {
  Matrix w_base;  // out x in
  Vector bias;    // out, frozen
  Activation activation = Activation::Tanh;
  AdapterSlot adapter;
  std::optional<MergeState<double>> merge;
  std::optional<SMagNormConfig> smagnorm;
  bool train_base = false;  // full fine-tuning (SEQ)

  Index in_dim() const { return w_base.cols(); }
  Index out_dim() const { return w_base.rows(); }
};

struct Model {
  std::vector<AdaptedLayer> layers;
  std::uint64_t version = 0;  // bumped on every parameter mutation

  Index input_dim() const { return layers.front().in_dim(); }
  Index output_dim() const { return layers.back().out_dim(); }
};

struct ModelDims {
  Index input = 8;
  Index hidden = 32;
  Index hidden_layers = 2;
  Index output = 4;
};

Model make_base_model(const ModelDims& dims, std::uint64_t seed);

// Delta currently added to the layer's base (live adapter plus any M2 accumulator).
Matrix layer_delta(const AdaptedLayer& layer);
Matrix effective_weight(const AdaptedLayer& layer);

std::vector<Matrix*> trainable_params(AdaptedLayer& layer);
std::vector<std::string> trainable_names(const AdaptedLayer& layer);
Index trainable_count(const Model& model);

// ---------------------------------------------------------------------------
// Forward / backward. Batches are stored column-wise: x is in_dim x batch.

struct LayerCache {
  Matrix input;
  Matrix output;
  Matrix weight;
  std::optional<Matrix> restriction;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  std::uint64_t version = 0;
};

// Per-layer restriction matrices to use instead of recomputing them
// (an empty matrix keeps the computed one).
using RestrictionOverride = std::vector<Matrix>;

Matrix forward(const Model& model, const Matrix& x, ForwardCache* cache = nullptr,
               const RestrictionOverride* restriction = nullptr);

// gradients[l][k] pairs with trainable_params(model.layers[l])[k].
using Gradients = std::vector<std::vector<Matrix>>;

Gradients backward(const Model& model, const ForwardCache& cache, const Matrix& loss_grad);

void sgd_step(std::span<Matrix* const> params, std::span<const Matrix> grads,
              double learning_rate);
void sgd_step(Model& model, const Gradients& grads, double learning_rate);

double gradient_norm(const Gradients& grads);

// ---------------------------------------------------------------------------
// Losses and tasks

enum class LossKind { Mse, SoftmaxCrossEntropy };

double loss_value(LossKind kind, const Matrix& pred, const Matrix& target);
Matrix loss_gradient(LossKind kind, const Matrix& pred, const Matrix& target);

enum class TaskKind { SineRegression, LinearRegression, Classification };

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::SineRegression;
  LossKind loss = LossKind::Mse;
  double omega = 1.0;
  std::uint64_t projection_seed = 0;
  std::size_t steps = 0;
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  Index input_dim = 8;
  Index output_dim = 4;
};

struct Batch {
  Matrix x;  // input_dim x n
  Matrix y;  // output_dim x n (one-hot for classification)
};

class TaskSampler {
 public:
  TaskSampler(const TaskSpec& spec, std::uint64_t stream_seed);

  Batch next(std::size_t n);
  Batch make_batch(const Matrix& x) const;

 private:
  TaskSpec spec_;
  Matrix projection_;
  std::mt19937_64 rng_;
};

Batch evaluation_set(const TaskSpec& spec, std::size_t n, std::uint64_t seed);

// MSE for regression tasks, accuracy for classification tasks.
double evaluate(const Model& model, const TaskSpec& spec, const Batch& eval);
bool higher_is_better(const TaskSpec& spec);

// ---------------------------------------------------------------------------
// Adapter attachment and training loops

struct AdapterConfig {
  double r_fraction = 0.05;
  Index r = 0;  // 0 selects default_ranks
  Index m = 0;
  SMagNormConfig smagnorm;
  std::int64_t fusion_interval = 1;
};

void attach(Model& model, Method method, const AdapterConfig& config, std::uint64_t seed);

struct MergeLogEntry {
  std::size_t step = 0;
  std::size_t layer = 0;
  MergeStrategy strategy = MergeStrategy::M1;
  double folded_norm = 0.0;
};

struct MresSample {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

struct TaskReport {
  std::vector<double> loss_series;
  std::vector<double> grad_norm_series;
  std::vector<MresSample> mres_series;  // empty without S-MagNorm
  std::vector<MergeLogEntry> merges;
  std::vector<Matrix> base_before;
  std::vector<Matrix> base_after;
  double final_train_loss = 0.0;
};

struct TrainOptions {
  std::uint64_t stream_seed = 0;
  bool periodic_fusion = true;
};

TaskReport train_task(Model& model, const TaskSpec& task, const TrainOptions& options);

// Merges every adapter into persistent state regardless of the step interval.
// Returns the number of layers that merged.
std::size_t task_boundary_fusion(Model& model);

}  // namespace secura
