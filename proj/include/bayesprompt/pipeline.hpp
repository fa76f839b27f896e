#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bayesprompt/embedding_store.hpp"
#include "bayesprompt/gmm.hpp"
#include "bayesprompt/prompt_synthesis.hpp"
#include "bayesprompt/svgd.hpp"
#include "bayesprompt/trainer.hpp"

namespace bayesprompt {

struct Ablations {
  /// Single-component target instead of the class-count mixture.
  bool gaussian = false;
  /// Drop type prompts from the scorer.
  bool del_tpw = false;
  /// Random type prompts instead of transported-particle draws.
  bool random_type = false;

  std::vector<std::string> names() const;
};

struct PipelineConfig {
  SynthConfig synth;
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> words;
  EmConfig em;
  SvgdConfig svgd;
  TrainConfig train;
  std::size_t k = 16;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  /// Defaults to the number of relations.
  std::optional<std::size_t> components;
  Ablations ablations;
  std::optional<std::string> null_label;
};

void validate(const PipelineConfig& config);

/// Overlays keys present in `json_text` onto `config`; unknown keys throw
/// InvalidConfig.
void apply_config_json(PipelineConfig& config, const std::string& json_text);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
std::string pipeline_config_json(const PipelineConfig& config);

struct ProtocolSplits {
  EmbeddingSet train;
  EmbeddingSet val;
  EmbeddingSet test;
};

/// Per class, an `eval_split` fraction (at least one row when the class has
/// two or more) is held out as test; train and val are disjoint k-shot draws
/// from the rest.
ProtocolSplits make_protocol_splits(const EmbeddingSet& full, std::size_t k, double eval_split, std::uint64_t seed);

/// Rounds every entry to the nearest float32, matching what a BPEM file
/// stores, so in-process and file-based stage chains agree bit for bit.
Eigen::MatrixXd quantize_f32(const Eigen::MatrixXd& m);

// Stages of one seeded run; the CLI stage commands call exactly these.
std::size_t resolve_components(const PipelineConfig& config, const EmbeddingSet& train);
std::optional<std::size_t> resolve_null_label(const std::optional<std::string>& name,
                                              const std::vector<std::string>& relation_names);
GmmFit stage_fit_gmm(const EmbeddingSet& train, std::size_t n_components, const EmConfig& em, std::uint64_t seed);
SvgdResult stage_svgd(const EmbeddingSet& train, const GmmParams& target, const SvgdConfig& svgd);
TypePromptInit type_prompt_init(const Ablations& ablations);
PromptPack stage_synth_prompts(const EmbeddingSet& train, const Particles* particles,
                               const WordEmbeddingTable& table, TypePromptInit init, std::uint64_t seed);
TrainedPromptModel stage_train(const EmbeddingSet& train, const EmbeddingSet& val, const PromptPack& pack,
                               const TrainConfig& config, std::uint64_t seed, std::optional<std::size_t> null_label,
                               const Particles* particles);

struct RunResult {
  std::uint64_t seed = 0;
  F1Metrics test;
  int best_epoch = 0;
  double final_train_loss = 0.0;
  std::size_t components = 0;
};

struct ProtocolResult {
  std::vector<RunResult> runs;
  double mean_micro_f1 = 0.0;
  double std_micro_f1 = 0.0;
  double mean_macro_f1 = 0.0;
  double std_macro_f1 = 0.0;
  std::map<std::string, double> timings_ms;
};

WordEmbeddingTable resolve_word_table(const PipelineConfig& config, std::size_t dim);

/// For each seed: splits, k-shot, mixture fit, SVGD, prompt synthesis,
/// training, test F1; then mean and population std over seeds.
ProtocolResult run_seeded_protocol(const EmbeddingSet& full, const PipelineConfig& config);

/// Deterministic metrics document (no timings).
std::string protocol_json(const ProtocolResult& result, const PipelineConfig& config, std::size_t n_classes);
std::string run_metrics_json(const F1Metrics& metrics);

}  // namespace bayesprompt
