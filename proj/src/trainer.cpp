#include "bayesprompt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bayesprompt/error.hpp"
#include "bayesprompt/seed.hpp"
#include "json_io.hpp"

namespace bayesprompt {

namespace {

constexpr double kProbabilityFloor = 1e-12;

Eigen::VectorXd mask_representation(const PromptModel& model, const Eigen::VectorXd& h) {
  if (!model.pack.has_type_prompts) return h;
  return h + model.pack.type_subject + model.pack.type_object;
}

Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits) {
  const double top = logits.maxCoeff();
  return logits.array() - (top + std::log((logits.array() - top).exp().sum()));
}

Eigen::VectorXd logits_of(const PromptModel& model, const Eigen::VectorXd& h) {
  if (h.size() != model.pack.dim()) {
    throw Error(ErrorCode::DimensionMismatch, "example has dimension " + std::to_string(h.size()) +
                                                  ", prompts have " + std::to_string(model.pack.dim()));
  }
  return model.pack.label_prompts * mask_representation(model, h) / model.temperature + model.bias;
}

void check_batch(const PromptModel& model, const Eigen::MatrixXd& batch, const std::vector<std::size_t>& labels) {
  if (batch.rows() == 0) throw Error(ErrorCode::EmptyBatch, "loss needs at least one example");
  if (static_cast<std::size_t>(batch.rows()) != labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "batch rows differ from label count");
  }
  for (auto y : labels) {
    if (y >= model.pack.n_relations()) {
      throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(y) + " outside the prompt pack");
    }
  }
}

void check_label_space(const EmbeddingSet& set, const PromptPack& pack, const char* what) {
  if (set.relation_names != pack.relation_names) {
    throw Error(ErrorCode::LabelSpaceMismatch, std::string(what) + " relation names differ from the prompt pack");
  }
  if (set.dim() != static_cast<std::size_t>(pack.dim())) {
    throw Error(ErrorCode::DimensionMismatch, std::string(what) + " dimension differs from the prompt pack");
  }
}

}  // namespace

PromptModel PromptModel::from_pack(PromptPack pack, double temperature) {
  PromptModel m;
  m.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(pack.n_relations()));
  m.pack = std::move(pack);
  m.temperature = temperature;
  return m;
}

void validate(const PromptModel& model) {
  validate(model.pack);
  if (!(model.temperature > 0.0) || !std::isfinite(model.temperature)) {
    throw Error(ErrorCode::InvalidConfig, "temperature must be finite and > 0");
  }
  if (model.bias.size() != static_cast<Eigen::Index>(model.pack.n_relations()) || !model.bias.allFinite()) {
    throw Error(ErrorCode::DimensionMismatch, "bias must hold one finite value per relation");
  }
}

Eigen::VectorXd predict_distribution(const PromptModel& model, const Eigen::VectorXd& h) {
  Eigen::VectorXd p = log_softmax(logits_of(model, h)).array().exp();
  return p / p.sum();
}

double loss(const PromptModel& model, const Eigen::MatrixXd& batch, const std::vector<std::size_t>& labels) {
  check_batch(model, batch, labels);
  double total = 0.0;
  for (Eigen::Index i = 0; i < batch.rows(); ++i) {
    const Eigen::VectorXd lp = log_softmax(logits_of(model, batch.row(i).transpose()));
    total -= std::max(lp(static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)])),
                      std::log(kProbabilityFloor));
  }
  return total / static_cast<double>(batch.rows());
}

ModelGradients loss_gradients(const PromptModel& model, const Eigen::MatrixXd& batch,
                              const std::vector<std::size_t>& labels) {
  check_batch(model, batch, labels);
  const auto r = model.pack.label_prompts.rows();
  const auto d = model.pack.dim();
  ModelGradients g{Eigen::MatrixXd::Zero(r, d), Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(d),
                   Eigen::VectorXd::Zero(r)};
  const double scale = 1.0 / static_cast<double>(batch.rows());
  Eigen::VectorXd dz_total = Eigen::VectorXd::Zero(d);
  for (Eigen::Index i = 0; i < batch.rows(); ++i) {
    const Eigen::VectorXd z = mask_representation(model, batch.row(i).transpose());
    const Eigen::VectorXd logits = model.pack.label_prompts * z / model.temperature + model.bias;
    Eigen::VectorXd dlogit = log_softmax(logits).array().exp();
    dlogit(static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)])) -= 1.0;
    dlogit *= scale;
    g.label_prompts += dlogit * z.transpose() / model.temperature;
    dz_total += model.pack.label_prompts.transpose() * dlogit / model.temperature;
    g.bias += dlogit;
  }
  if (model.pack.has_type_prompts) {
    g.type_subject = dz_total;
    g.type_object = dz_total;
  }
  if (!model.train_bias) g.bias.setZero();
  return g;
}

void validate(const TrainConfig& config) {
  if (config.epochs < 1) throw Error(ErrorCode::InvalidConfig, "epochs must be >= 1");
  if (config.batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
  if (!(config.learning_rate >= 0.0) || !std::isfinite(config.learning_rate)) {
    throw Error(ErrorCode::InvalidConfig, "learning_rate must be finite and >= 0");
  }
  if (!(config.temperature > 0.0)) throw Error(ErrorCode::InvalidConfig, "temperature must be > 0");
  if (!(config.eval_split > 0.0 && config.eval_split < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "eval_split must lie in (0, 1)");
  }
}

F1Metrics f1_from_predictions(const std::vector<std::size_t>& gold, const std::vector<std::size_t>& predicted,
                              std::size_t n_classes, std::optional<std::size_t> null_label) {
  if (gold.size() != predicted.size()) throw Error(ErrorCode::DimensionMismatch, "prediction count");
  std::vector<std::size_t> tp(n_classes, 0), pred_count(n_classes, 0), gold_count(n_classes, 0);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    ++gold_count[gold[i]];
    ++pred_count[predicted[i]];
    if (gold[i] == predicted[i]) ++tp[gold[i]];
  }
  const auto ratio = [](std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  const auto harmonic = [](double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; };

  F1Metrics m;
  std::size_t all_tp = 0, all_pred = 0, all_gold = 0, positive_classes = 0;
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    ClassMetrics cm;
    cm.precision = ratio(tp[c], pred_count[c]);
    cm.recall = ratio(tp[c], gold_count[c]);
    cm.f1 = harmonic(cm.precision, cm.recall);
    cm.support = gold_count[c];
    m.per_class.push_back(cm);
    if (null_label && c == *null_label) continue;
    all_tp += tp[c];
    all_pred += pred_count[c];
    all_gold += gold_count[c];
    f1_sum += cm.f1;
    ++positive_classes;
  }
  m.micro_f1 = harmonic(ratio(all_tp, all_pred), ratio(all_tp, all_gold));
  m.macro_f1 = positive_classes == 0 ? 0.0 : f1_sum / static_cast<double>(positive_classes);
  return m;
}

F1Metrics evaluate_f1(const PromptModel& model, const EmbeddingSet& test, std::optional<std::size_t> null_label) {
  if (test.size() == 0) throw Error(ErrorCode::EmptyBatch, "test set is empty");
  check_label_space(test, model.pack, "test set");
  std::vector<std::size_t> predicted;
  predicted.reserve(test.size());
  for (Eigen::Index i = 0; i < test.vectors.rows(); ++i) {
    Eigen::Index best = 0;
    predict_distribution(model, test.vectors.row(i).transpose()).maxCoeff(&best);
    predicted.push_back(static_cast<std::size_t>(best));
  }
  return f1_from_predictions(test.labels, predicted, model.pack.n_relations(), null_label);
}

TrainedPromptModel train(const EmbeddingSet& train_set, const EmbeddingSet& val_set, const PromptPack& prompts,
                         const TrainConfig& config, std::optional<std::size_t> null_label,
                         const Particles* particles) {
  validate(config);
  if (train_set.size() == 0) throw Error(ErrorCode::EmptyBatch, "training set is empty");
  if (val_set.size() == 0) throw Error(ErrorCode::EmptyBatch, "validation set is empty");
  check_label_space(train_set, prompts, "training set");
  check_label_space(val_set, prompts, "validation set");
  const bool resample = config.resample_omega_each_iter && prompts.has_type_prompts;
  if (resample && !particles) {
    throw Error(ErrorCode::EmptyParticleSet, "per-update type prompt resampling needs particles");
  }

  TrainedPromptModel out;
  PromptModel model = PromptModel::from_pack(prompts, config.temperature);
  model.train_bias = config.train_bias;
  validate(model);
  auto shuffle_rng = make_rng(config.seed, "train-shuffle");
  auto omega_rng = make_rng(config.seed, "train-omega");
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  double best_f1 = -1.0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                    order.begin() + static_cast<std::ptrdiff_t>(stop));
      std::vector<std::size_t> labels;
      for (auto r : rows) labels.push_back(train_set.labels[r]);
      if (resample) {
        model.pack.type_subject = init_type_prompt(sample_latent(*particles, omega_rng));
        model.pack.type_object = init_type_prompt(sample_latent(*particles, omega_rng));
      }
      const auto g = loss_gradients(model, train_set.vectors(rows, Eigen::all), labels);
      model.pack.label_prompts -= config.learning_rate * g.label_prompts;
      model.pack.type_subject -= config.learning_rate * g.type_subject;
      model.pack.type_object -= config.learning_rate * g.type_object;
      model.bias -= config.learning_rate * g.bias;
    }
    const double epoch_loss = loss(model, train_set.vectors, train_set.labels);
    if (!std::isfinite(epoch_loss)) {
      throw Error(ErrorCode::NonFiniteUpdate, "training loss diverged at epoch " + std::to_string(epoch));
    }
    out.train_loss.push_back(epoch_loss);
    const auto val = evaluate_f1(model, val_set, null_label);
    out.val_f1.push_back(val.micro_f1);
    if (val.micro_f1 > best_f1) {
      best_f1 = val.micro_f1;
      out.best_epoch = epoch;
      out.best_val = val;
      out.model = model;
    }
  }
  return out;
}

std::pair<double, double> mean_and_std(const std::vector<double>& values) {
  if (values.empty()) throw Error(ErrorCode::EmptyBatch, "no values to aggregate");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n)};
}

namespace detail {

nlohmann::json metrics_to_json(const F1Metrics& metrics) {
  auto per_class = nlohmann::json::array();
  for (const auto& c : metrics.per_class) {
    per_class.push_back({{"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}});
  }
  return {{"micro_f1", metrics.micro_f1}, {"macro_f1", metrics.macro_f1}, {"per_class", per_class}};
}

}  // namespace detail

std::string metrics_json(const F1Metrics& metrics, int indent) { return detail::metrics_to_json(metrics).dump(indent); }

void save_prompt_model(const TrainedPromptModel& trained, const std::filesystem::path& path) {
  validate(trained.model);
  auto meta = detail::pack_metadata(trained.model.pack);
  meta["kind"] = "prompt_model";
  std::vector<double> bias(trained.model.bias.begin(), trained.model.bias.end());
  meta["scorer"] = {{"temperature", trained.model.temperature}, {"bias", bias},
                    {"train_bias", trained.model.train_bias}};
  meta["training"] = {{"train_loss", trained.train_loss},
                      {"val_f1", trained.val_f1},
                      {"best_epoch", trained.best_epoch},
                      {"best_val", detail::metrics_to_json(trained.best_val)}};
  write_bpem_matrix(detail::pack_rows(trained.model.pack), path);
  detail::write_json(meta, sidecar_path(path));
}

TrainedPromptModel load_prompt_model(const std::filesystem::path& path) {
  const auto meta = detail::read_json(sidecar_path(path));
  TrainedPromptModel out;
  out.model = PromptModel::from_pack(detail::pack_from(read_bpem_matrix(path), meta));
  try {
    if (meta.contains("scorer")) {
      const auto& s = meta.at("scorer");
      out.model.temperature = s.at("temperature").get<double>();
      const auto bias = s.at("bias").get<std::vector<double>>();
      out.model.bias = Eigen::Map<const Eigen::VectorXd>(bias.data(), static_cast<Eigen::Index>(bias.size()));
      out.model.train_bias = s.at("train_bias").get<bool>();
    }
    if (meta.contains("training")) {
      const auto& t = meta.at("training");
      out.train_loss = t.at("train_loss").get<std::vector<double>>();
      out.val_f1 = t.at("val_f1").get<std::vector<double>>();
      out.best_epoch = t.at("best_epoch").get<int>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::IoFailure, "malformed model metadata in " + path.string() + ": " + e.what());
  }
  validate(out.model);
  return out;
}

}  // namespace bayesprompt
