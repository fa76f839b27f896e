#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bayesprompt/embedding_store.hpp"
#include "bayesprompt/prompt_synthesis.hpp"
#include "bayesprompt/svgd.hpp"

namespace bayesprompt {

/// Masked-position scorer. The mask representation of example h is
/// z = h + t_subj + t_obj (type prompts dropped when the pack has none) and
/// the logit of class y is <z, l_y> / temperature + bias_y.
struct PromptModel {
  PromptPack pack;
  double temperature = 1.0;
  Eigen::VectorXd bias;  // one entry per relation
  bool train_bias = true;

  static PromptModel from_pack(PromptPack pack, double temperature = 1.0);
};

void validate(const PromptModel& model);

/// Class probabilities of the mask representation of `h`.
Eigen::VectorXd predict_distribution(const PromptModel& model, const Eigen::VectorXd& h);

/// Mean cross-entropy of `labels` given the rows of `batch`, with
/// probabilities floored at 1e-12 inside the log.
double loss(const PromptModel& model, const Eigen::MatrixXd& batch, const std::vector<std::size_t>& labels);

/// Gradients laid out like the trainable parameters of PromptModel.
struct ModelGradients {
  Eigen::MatrixXd label_prompts;
  Eigen::VectorXd type_subject;
  Eigen::VectorXd type_object;
  Eigen::VectorXd bias;
};

/// Analytic gradients of `loss` (away from the probability floor).
/// Type-prompt blocks are zero for packs without type prompts; the bias block
/// is zero when the bias is frozen.
ModelGradients loss_gradients(const PromptModel& model, const Eigen::MatrixXd& batch,
                              const std::vector<std::size_t>& labels);

struct TrainConfig {
  int epochs = 50;
  std::size_t batch_size = 4;
  double learning_rate = 0.05;
  double temperature = 1.0;
  /// Learn the per-class bias; when false it stays at zero.
  bool train_bias = true;
  std::uint64_t seed = 0;
  /// Redraw both type prompts from the particles before every update.
  bool resample_omega_each_iter = false;
  /// Held-out fraction of each class used for testing by the protocol.
  double eval_split = 0.3;
};

void validate(const TrainConfig& config);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct F1Metrics {
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  std::vector<ClassMetrics> per_class;
};

/// Argmax predictions scored against `test.labels`. With `null_label`, that
/// class is never a positive: micro-F1 counts only non-null predictions and
/// gold labels, and macro-F1 averages the other classes.
F1Metrics evaluate_f1(const PromptModel& model, const EmbeddingSet& test,
                      std::optional<std::size_t> null_label = std::nullopt);

/// Same metric from explicit predictions.
F1Metrics f1_from_predictions(const std::vector<std::size_t>& gold, const std::vector<std::size_t>& predicted,
                              std::size_t n_classes, std::optional<std::size_t> null_label = std::nullopt);

struct TrainedPromptModel {
  PromptModel model;
  std::vector<double> train_loss;  // full-train-set loss after each epoch
  std::vector<double> val_f1;      // micro-F1 on the validation set after each epoch
  int best_epoch = 0;              // 1-based
  F1Metrics best_val;
};

/// Mini-batch gradient descent on `loss`; returns the epoch with the best
/// validation micro-F1 (earliest on ties). `particles` is required only when
/// resampling type prompts every update.
TrainedPromptModel train(const EmbeddingSet& train_set, const EmbeddingSet& val_set, const PromptPack& prompts,
                         const TrainConfig& config, std::optional<std::size_t> null_label = std::nullopt,
                         const Particles* particles = nullptr);

/// Mean and population (divide-by-n) standard deviation.
std::pair<double, double> mean_and_std(const std::vector<double>& values);

/// Saves the pack like save_prompt_pack, adding scorer and training trace to
/// the sidecar. load_prompt_model also accepts a bare prompt pack.
void save_prompt_model(const TrainedPromptModel& trained, const std::filesystem::path& path);
TrainedPromptModel load_prompt_model(const std::filesystem::path& path);

std::string metrics_json(const F1Metrics& metrics, int indent = 2);

}  // namespace bayesprompt
