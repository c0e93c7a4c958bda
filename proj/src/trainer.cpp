#include "secura/trainer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace secura {

std::string method_name(Method m) {
  switch (m) {
    case Method::SecuraM1: return "SECURA_M1";
    case Method::SecuraM2: return "SECURA_M2";
    case Method::Lora: return "LORA";
    case Method::CurLora: return "CURLORA";
    case Method::Seq: return "SEQ";
    case Method::Cabr: return "CABR";
  }
  return "?";
}

std::optional<Method> parse_method(const std::string& name) {
  for (Method m : {Method::SecuraM1, Method::SecuraM2, Method::Lora, Method::CurLora,
                   Method::Seq, Method::Cabr}) {
    if (method_name(m) == name) return m;
  }
  return std::nullopt;
}

Model make_base_model(const ModelDims& dims, std::uint64_t seed) {
  if (dims.input <= 0 || dims.hidden <= 0 || dims.output <= 0 || dims.hidden_layers < 0) {
    throw ConfigError("model: dimensions must be positive");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> bias_dist(-0.1, 0.1);

  Model model;
  auto add_layer = [&](Index in, Index out, Activation act) {
    AdaptedLayer layer;
    layer.w_base.resize(out, in);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(in));
    for (Index i = 0; i < out; ++i) {
      for (Index j = 0; j < in; ++j) layer.w_base(i, j) = stddev * normal(rng);
    }
    layer.bias.resize(out);
    for (Index i = 0; i < out; ++i) layer.bias(i) = bias_dist(rng);
    layer.activation = act;
    model.layers.push_back(std::move(layer));
  };
  Index in = dims.input;
  for (Index l = 0; l < dims.hidden_layers; ++l) {
    add_layer(in, dims.hidden, Activation::Tanh);
    in = dims.hidden;
  }
  add_layer(in, dims.output, Activation::Identity);
  return model;
}

// ---------------------------------------------------------------------------

Matrix layer_delta(const AdaptedLayer& layer) {
  return std::visit(
      [&](const auto& ad) -> Matrix {
        using T = std::decay_t<decltype(ad)>;
        if constexpr (std::is_same_v<T, NoAdapter>) {
          return Matrix::Zero(layer.w_base.rows(), layer.w_base.cols());
        } else if constexpr (std::is_same_v<T, CabrAdapter<double>>) {
          return layer.merge ? total_delta(*layer.merge, ad) : materialize_delta(ad);
        } else {
          return materialize_delta(ad);
        }
      },
      layer.adapter);
}

namespace {

struct WeightParts {
  Matrix weight;
  std::optional<Matrix> restriction;
};

WeightParts compose_weight(const AdaptedLayer& layer, const Matrix* restriction_override) {
  if (std::holds_alternative<NoAdapter>(layer.adapter)) return {layer.w_base, std::nullopt};
  const Matrix delta = layer_delta(layer);
  if (!layer.smagnorm) return {layer.w_base + delta, std::nullopt};
  if (restriction_override && restriction_override->size() > 0) {
    require_same_shape(*restriction_override, layer.w_base, "restriction override");
    const Matrix merged = merged_weight(layer.w_base, delta);
    return {merged.array() / restriction_override->array(), *restriction_override};
  }
  auto trace = apply_smagnorm(layer.w_base, delta, *layer.smagnorm);
  return {std::move(trace.updated), std::move(trace.restriction)};
}

}  // namespace

Matrix effective_weight(const AdaptedLayer& layer) {
  return compose_weight(layer, nullptr).weight;
}

std::vector<Matrix*> trainable_params(AdaptedLayer& layer) {
  std::vector<Matrix*> out;
  if (layer.train_base) out.push_back(&layer.w_base);
  std::visit(
      [&](auto& ad) {
        using T = std::decay_t<decltype(ad)>;
        if constexpr (std::is_same_v<T, CabrAdapter<double>>) {
          out.push_back(&ad.w_a);
          out.push_back(&ad.w_b);
        } else if constexpr (std::is_same_v<T, LoraAdapter<double>>) {
          out.push_back(&ad.a);
          out.push_back(&ad.b);
        } else if constexpr (std::is_same_v<T, CurLoraAdapter<double>>) {
          out.push_back(&ad.u);
        }
      },
      layer.adapter);
  return out;
}

std::vector<std::string> trainable_names(const AdaptedLayer& layer) {
  std::vector<std::string> out;
  if (layer.train_base) out.emplace_back("w_base");
  std::visit(
      [&](const auto& ad) {
        using T = std::decay_t<decltype(ad)>;
        if constexpr (std::is_same_v<T, CabrAdapter<double>>) {
          out.emplace_back("w_a");
          out.emplace_back("w_b");
        } else if constexpr (std::is_same_v<T, LoraAdapter<double>>) {
          out.emplace_back("a");
          out.emplace_back("b");
        } else if constexpr (std::is_same_v<T, CurLoraAdapter<double>>) {
          out.emplace_back("u");
        }
      },
      layer.adapter);
  return out;
}

Index trainable_count(const Model& model) {
  Index n = 0;
  for (const auto& layer : model.layers) {
    if (layer.train_base) n += layer.w_base.size();
    std::visit(
        [&](const auto& ad) {
          if constexpr (!std::is_same_v<std::decay_t<decltype(ad)>, NoAdapter>) {
            n += ad.trainable_count();
          }
        },
        layer.adapter);
  }
  return n;
}

// ---------------------------------------------------------------------------

Matrix forward(const Model& model, const Matrix& x, ForwardCache* cache,
               const RestrictionOverride* restriction) {
  if (model.layers.empty()) throw ContractError("forward: empty model");
  if (restriction && restriction->size() != model.layers.size()) {
    throw ShapeError("forward: restriction override must have one entry per layer");
  }
  if (cache) {
    cache->layers.clear();
    cache->version = model.version;
  }
  Matrix act = x;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const AdaptedLayer& layer = model.layers[l];
    if (act.rows() != layer.in_dim()) {
      throw ShapeError(fmt::format("forward: layer {} expects {} inputs, got {}", l,
                                   layer.in_dim(), act.rows()));
    }
    WeightParts parts = compose_weight(layer, restriction ? &(*restriction)[l] : nullptr);
    Matrix z = parts.weight * act;
    z.colwise() += layer.bias;
    Matrix out = layer.activation == Activation::Tanh ? Matrix(z.array().tanh()) : z;
    if (cache) {
      cache->layers.push_back(
          {std::move(act), out, std::move(parts.weight), std::move(parts.restriction)});
    }
    act = std::move(out);
  }
  return act;
}

Gradients backward(const Model& model, const ForwardCache& cache, const Matrix& loss_grad) {
  if (cache.version != model.version || cache.layers.size() != model.layers.size()) {
    throw ContractError("backward: cache is stale or does not match the model");
  }
  Gradients grads(model.layers.size());
  Matrix upstream = loss_grad;
  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const AdaptedLayer& layer = model.layers[li];
    const LayerCache& lc = cache.layers[li];
    require_same_shape(upstream, lc.output, "backward");

    Matrix dz = layer.activation == Activation::Tanh
                    ? Matrix(upstream.array() * (1.0 - lc.output.array().square()))
                    : upstream;
    const Matrix g_weight = dz * lc.input.transpose();
    upstream = lc.weight.transpose() * dz;

    // Gradient w.r.t. the additive delta; the restriction matrix is constant.
    const Matrix g_delta =
        lc.restriction ? Matrix(g_weight.array() / lc.restriction->array()) : g_weight;

    auto& out = grads[li];
    if (layer.train_base) out.push_back(g_weight);
    std::visit(
        [&](const auto& ad) {
          using T = std::decay_t<decltype(ad)>;
          if constexpr (std::is_same_v<T, CabrAdapter<double>>) {
            const Matrix& c = ad.selection.c;
            const Matrix& r = ad.selection.r_mat;
            const Matrix ct_g_rt = c.transpose() * g_delta * r.transpose();  // r x r
            out.push_back(ct_g_rt * ad.w_b.transpose());
            out.push_back(ad.w_a.transpose() * ct_g_rt);
          } else if constexpr (std::is_same_v<T, LoraAdapter<double>>) {
            out.push_back(ad.scaling * g_delta * ad.b.transpose());
            out.push_back(ad.scaling * ad.a.transpose() * g_delta);
          } else if constexpr (std::is_same_v<T, CurLoraAdapter<double>>) {
            out.push_back(ad.selection.c.transpose() * g_delta *
                          ad.selection.r_mat.transpose());
          }
        },
        layer.adapter);
  }
  return grads;
}

void sgd_step(std::span<Matrix* const> params, std::span<const Matrix> grads,
              double learning_rate) {
  if (params.size() != grads.size()) throw ShapeError("sgd_step: parameter/gradient count");
  for (std::size_t k = 0; k < params.size(); ++k) {
    require_same_shape(*params[k], grads[k], "sgd_step");
    *params[k] -= learning_rate * grads[k];
  }
}

void sgd_step(Model& model, const Gradients& grads, double learning_rate) {
  if (grads.size() != model.layers.size()) throw ShapeError("sgd_step: layer count");
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto params = trainable_params(model.layers[l]);
    sgd_step(params, grads[l], learning_rate);
  }
  ++model.version;
}

double gradient_norm(const Gradients& grads) {
  double acc = 0.0;
  for (const auto& layer : grads) {
    for (const Matrix& g : layer) acc += g.squaredNorm();
  }
  return std::sqrt(acc);
}

// ---------------------------------------------------------------------------

namespace {

Matrix softmax_columns(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Index j = 0; j < logits.cols(); ++j) {
    const double mx = logits.col(j).maxCoeff();
    double sum = 0.0;
    for (Index i = 0; i < logits.rows(); ++i) {
      out(i, j) = std::exp(logits(i, j) - mx);
      sum += out(i, j);
    }
    out.col(j) /= sum;
  }
  return out;
}

}  // namespace

double loss_value(LossKind kind, const Matrix& pred, const Matrix& target) {
  require_same_shape(pred, target, "loss");
  if (kind == LossKind::Mse) {
    return (pred - target).squaredNorm() / static_cast<double>(pred.size());
  }
  double acc = 0.0;
  for (Index j = 0; j < pred.cols(); ++j) {
    const double mx = pred.col(j).maxCoeff();
    const double lse = mx + std::log((pred.col(j).array() - mx).exp().sum());
    for (Index i = 0; i < pred.rows(); ++i) acc -= target(i, j) * (pred(i, j) - lse);
  }
  return acc / static_cast<double>(pred.cols());
}

Matrix loss_gradient(LossKind kind, const Matrix& pred, const Matrix& target) {
  require_same_shape(pred, target, "loss_gradient");
  if (kind == LossKind::Mse) return 2.0 * (pred - target) / static_cast<double>(pred.size());
  return (softmax_columns(pred) - target) / static_cast<double>(pred.cols());
}

TaskSampler::TaskSampler(const TaskSpec& spec, std::uint64_t stream_seed)
    : spec_(spec), rng_(stream_seed) {
  if (spec.input_dim <= 0 || spec.output_dim <= 0) throw ConfigError("task: bad dimensions");
  std::mt19937_64 proj_rng(spec.projection_seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(spec.input_dim)));
  projection_.resize(spec.output_dim, spec.input_dim);
  for (Index i = 0; i < projection_.rows(); ++i) {
    for (Index j = 0; j < projection_.cols(); ++j) projection_(i, j) = normal(proj_rng);
  }
}

Batch TaskSampler::make_batch(const Matrix& x) const {
  Batch b;
  b.x = x;
  const Matrix proj = projection_ * x;
  if (spec_.kind == TaskKind::SineRegression) {
    b.y = (spec_.omega * proj.array()).sin();
  } else if (spec_.kind == TaskKind::LinearRegression) {
    b.y = proj;
  } else {
    b.y = Matrix::Zero(proj.rows(), proj.cols());
    for (Index j = 0; j < proj.cols(); ++j) {
      Index arg = 0;
      proj.col(j).maxCoeff(&arg);
      b.y(arg, j) = 1.0;
    }
  }
  return b;
}

Batch TaskSampler::next(std::size_t n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix x(spec_.input_dim, static_cast<Index>(n));
  for (Index j = 0; j < x.cols(); ++j) {
    for (Index i = 0; i < x.rows(); ++i) x(i, j) = normal(rng_);
  }
  return make_batch(x);
}

Batch evaluation_set(const TaskSpec& spec, std::size_t n, std::uint64_t seed) {
  TaskSampler sampler(spec, seed);
  return sampler.next(n);
}

bool higher_is_better(const TaskSpec& spec) { return spec.kind == TaskKind::Classification; }

double evaluate(const Model& model, const TaskSpec& spec, const Batch& eval) {
  const Matrix pred = forward(model, eval.x);
  if (spec.kind != TaskKind::Classification) return loss_value(LossKind::Mse, pred, eval.y);
  Index correct = 0;
  for (Index j = 0; j < pred.cols(); ++j) {
    Index p = 0, t = 0;
    pred.col(j).maxCoeff(&p);
    eval.y.col(j).maxCoeff(&t);
    if (p == t) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pred.cols());
}

// ---------------------------------------------------------------------------

void attach(Model& model, Method method, const AdapterConfig& config, std::uint64_t seed) {
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    AdaptedLayer& layer = model.layers[l];
    layer.adapter = NoAdapter{};
    layer.merge.reset();
    layer.smagnorm.reset();
    layer.train_base = false;

    const Index h = layer.out_dim();
    const Index d = layer.in_dim();
    RankDefaults ranks = default_ranks(h, d, config.r_fraction);
    if (config.r > 0) ranks.r = config.r;
    if (config.m > 0) {
      ranks.m = config.m;
    } else if (config.r > 0) {
      ranks.m = static_cast<Index>(std::ceil(4.0 * static_cast<double>(ranks.r) / 3.0));
    }

    switch (method) {
      case Method::Seq:
        layer.train_base = true;
        break;
      case Method::Lora:
        layer.adapter = lora_init(h, d, ranks.r, seed * 1000003ULL + l);
        break;
      case Method::CurLora:
        layer.adapter = curlora_init(layer.w_base, ranks.r);
        break;
      case Method::SecuraM1:
      case Method::SecuraM2:
      case Method::Cabr: {
        auto ad = cabr_init(layer.w_base, ranks.r, ranks.m);
        // Plain CABR: no periodic fusion and no S-MagNorm.
        if (method != Method::Cabr) {
          const auto strategy =
              method == Method::SecuraM2 ? MergeStrategy::M2 : MergeStrategy::M1;
          layer.merge = make_merge_state(strategy, config.fusion_interval, ad);
          config.smagnorm.validate();
          layer.smagnorm = config.smagnorm;
        }
        layer.adapter = std::move(ad);
        break;
      }
    }
  }
  ++model.version;
}

TaskReport train_task(Model& model, const TaskSpec& task, const TrainOptions& options) {
  TaskReport report;
  for (const auto& layer : model.layers) report.base_before.push_back(layer.w_base);
  TaskSampler sampler(task, options.stream_seed);
  ForwardCache cache;
  for (std::size_t step = 1; step <= task.steps; ++step) {
    const Batch batch = sampler.next(task.batch_size);
    const Matrix pred = forward(model, batch.x, &cache);
    const double loss = loss_value(task.loss, pred, batch.y);
    if (!std::isfinite(loss)) {
      throw NumericalError(
          fmt::format("train_task '{}': non-finite loss at step {}", task.name, step), step);
    }
    report.loss_series.push_back(loss);

    bool any_restriction = false;
    MresSample mres{std::numeric_limits<double>::infinity(),
                    -std::numeric_limits<double>::infinity(), 0.0};
    Index count = 0;
    for (const auto& lc : cache.layers) {
      if (!lc.restriction) continue;
      any_restriction = true;
      mres.min = std::min(mres.min, lc.restriction->minCoeff());
      mres.max = std::max(mres.max, lc.restriction->maxCoeff());
      mres.mean += lc.restriction->sum();
      count += lc.restriction->size();
    }
    if (any_restriction) {
      mres.mean /= static_cast<double>(count);
      report.mres_series.push_back(mres);
    }

    const Gradients grads = backward(model, cache, loss_gradient(task.loss, pred, batch.y));
    report.grad_norm_series.push_back(gradient_norm(grads));
    sgd_step(model, grads, task.learning_rate);

    if (!options.periodic_fusion) continue;
    bool merged_any = false;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      AdaptedLayer& layer = model.layers[l];
      if (!layer.merge) continue;
      auto* cabr = std::get_if<CabrAdapter<double>>(&layer.adapter);
      if (!cabr) continue;
      ++layer.merge->step_counter;
      if (auto ev = fusion_tick(*layer.merge, *cabr, layer.w_base)) {
        report.merges.push_back({step, l, layer.merge->strategy, ev.folded_norm});
        merged_any = true;
      }
    }
    if (merged_any) ++model.version;
  }
  report.final_train_loss = report.loss_series.empty() ? 0.0 : report.loss_series.back();
  for (const auto& layer : model.layers) report.base_after.push_back(layer.w_base);
  return report;
}

std::size_t task_boundary_fusion(Model& model) {
  std::size_t merged = 0;
  for (AdaptedLayer& layer : model.layers) {
    std::visit(
        [&](auto& ad) {
          using T = std::decay_t<decltype(ad)>;
          if constexpr (std::is_same_v<T, CabrAdapter<double>>) {
            if (layer.merge) {
              fuse_now(*layer.merge, ad, layer.w_base);
            } else {
              layer.w_base = merge_m1(ad, layer.w_base);
            }
            ++merged;
          } else if constexpr (std::is_same_v<T, LoraAdapter<double>>) {
            layer.w_base += materialize_delta(ad);
            ad.b.setZero();
            ++merged;
          } else if constexpr (std::is_same_v<T, CurLoraAdapter<double>>) {
            layer.w_base += materialize_delta(ad);
            ad.u.setZero();
            ++merged;
          }
        },
        layer.adapter);
  }
  ++model.version;
  return merged;
}

}  // namespace secura
