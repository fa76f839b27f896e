#include "bayesprompt/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "bayesprompt/error.hpp"
#include "bayesprompt/seed.hpp"
#include "json_io.hpp"

namespace bayesprompt {

using nlohmann::json;

std::vector<std::string> Ablations::names() const {
  std::vector<std::string> out;
  if (gaussian) out.emplace_back("gaussian");
  if (del_tpw) out.emplace_back("del_TPW");
  if (random_type) out.emplace_back("random_type");
  return out;
}

void validate(const PipelineConfig& config) {
  if (!config.data) validate(config.synth);
  validate(config.em);
  validate(config.svgd);
  validate(config.train);
  if (config.seeds.empty()) throw Error(ErrorCode::InvalidConfig, "at least one seed is required");
  if (config.components && *config.components < 1) {
    throw Error(ErrorCode::InvalidConfig, "components must be >= 1");
  }
  if (config.ablations.del_tpw && config.ablations.random_type) {
    throw Error(ErrorCode::InvalidConfig, "del_TPW and random_type both replace the type prompts");
  }
  if (config.ablations.random_type && config.train.resample_omega_each_iter) {
    throw Error(ErrorCode::InvalidConfig, "random_type has no particles to resample type prompts from");
  }
}

namespace {

std::string step_mode_name(StepMode m) { return m == StepMode::Fixed ? "fixed" : "adagrad"; }

StepMode parse_step_mode(const std::string& s) {
  if (s == "fixed") return StepMode::Fixed;
  if (s == "adagrad") return StepMode::Adagrad;
  throw Error(ErrorCode::InvalidConfig, "unknown step mode '" + s + "'");
}

GmmInit parse_init(const std::string& s) {
  if (s == "class-means") return GmmInit::ClassMeans;
  if (s == "kmeans++") return GmmInit::KMeansPlusPlus;
  throw Error(ErrorCode::InvalidConfig, "unknown mixture init '" + s + "'");
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw Error(ErrorCode::InvalidConfig, "unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void apply_config_json(PipelineConfig& c, const std::string& json_text) {
  try {
    const json j = json::parse(json_text);
    reject_unknown(j, {"synth", "data", "words", "em", "svgd", "train", "k", "seeds", "components", "ablate",
                       "null_label"},
                   "pipeline config");
    if (j.contains("synth")) {
      const auto& s = j.at("synth");
      reject_unknown(s, {"classes", "per_class", "dim", "separation", "stddev", "seed"}, "synth");
      read_if(s, "classes", c.synth.n_classes);
      read_if(s, "per_class", c.synth.per_class);
      read_if(s, "dim", c.synth.dim);
      read_if(s, "separation", c.synth.class_separation);
      read_if(s, "stddev", c.synth.within_class_stddev);
      read_if(s, "seed", c.synth.seed);
    }
    if (j.contains("data")) c.data = j.at("data").get<std::string>();
    if (j.contains("words")) c.words = j.at("words").get<std::string>();
    if (j.contains("em")) {
      const auto& e = j.at("em");
      reject_unknown(e, {"max_iters", "tol", "variance_floor", "init"}, "em");
      read_if(e, "max_iters", c.em.max_iters);
      read_if(e, "tol", c.em.tol);
      read_if(e, "variance_floor", c.em.variance_floor);
      if (e.contains("init")) c.em.init = parse_init(e.at("init").get<std::string>());
    }
    if (j.contains("svgd")) {
      const auto& s = j.at("svgd");
      reject_unknown(s, {"iters", "step", "step_mode", "adagrad_decay", "bandwidth"}, "svgd");
      read_if(s, "iters", c.svgd.n_iters);
      read_if(s, "step", c.svgd.base_step);
      read_if(s, "adagrad_decay", c.svgd.adagrad_decay);
      if (s.contains("step_mode")) c.svgd.step_mode = parse_step_mode(s.at("step_mode").get<std::string>());
      if (s.contains("bandwidth")) {
        const auto& b = s.at("bandwidth");
        if (b.is_string() && b.get<std::string>() == "auto") {
          c.svgd.bandwidth.reset();
        } else {
          c.svgd.bandwidth = b.get<double>();
        }
      }
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      reject_unknown(t, {"epochs", "batch_size", "lr", "temperature", "train_bias", "resample_omega_each_iter",
                        "eval_split"},
                     "train");
      read_if(t, "epochs", c.train.epochs);
      read_if(t, "batch_size", c.train.batch_size);
      read_if(t, "lr", c.train.learning_rate);
      read_if(t, "temperature", c.train.temperature);
      read_if(t, "train_bias", c.train.train_bias);
      read_if(t, "resample_omega_each_iter", c.train.resample_omega_each_iter);
      read_if(t, "eval_split", c.train.eval_split);
    }
    read_if(j, "k", c.k);
    read_if(j, "seeds", c.seeds);
    if (j.contains("components")) c.components = j.at("components").get<std::size_t>();
    if (j.contains("ablate")) {
      c.ablations = {};
      for (const auto& a : j.at("ablate").get<std::vector<std::string>>()) {
        if (a == "gaussian") {
          c.ablations.gaussian = true;
        } else if (a == "del_TPW") {
          c.ablations.del_tpw = true;
        } else if (a == "random_type") {
          c.ablations.random_type = true;
        } else {
          throw Error(ErrorCode::InvalidConfig, "unknown ablation '" + a + "'");
        }
      }
    }
    if (j.contains("null_label")) c.null_label = j.at("null_label").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("config: ") + e.what());
  }
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  PipelineConfig c;
  apply_config_json(c, ss.str());
  return c;
}

std::string pipeline_config_json(const PipelineConfig& c) {
  json j;
  j["synth"] = {{"classes", c.synth.n_classes},        {"per_class", c.synth.per_class},
                {"dim", c.synth.dim},                  {"separation", c.synth.class_separation},
                {"stddev", c.synth.within_class_stddev}, {"seed", c.synth.seed}};
  if (c.data) j["data"] = c.data->string();
  if (c.words) j["words"] = c.words->string();
  j["em"] = {{"max_iters", c.em.max_iters},
             {"tol", c.em.tol},
             {"variance_floor", c.em.variance_floor},
             {"init", c.em.init == GmmInit::ClassMeans ? "class-means" : "kmeans++"}};
  j["svgd"] = {{"iters", c.svgd.n_iters},
               {"step", c.svgd.base_step},
               {"step_mode", step_mode_name(c.svgd.step_mode)},
               {"adagrad_decay", c.svgd.adagrad_decay}};
  if (c.svgd.bandwidth) {
    j["svgd"]["bandwidth"] = *c.svgd.bandwidth;
  } else {
    j["svgd"]["bandwidth"] = "auto";
  }
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"lr", c.train.learning_rate},
                {"temperature", c.train.temperature},
                {"train_bias", c.train.train_bias},
                {"resample_omega_each_iter", c.train.resample_omega_each_iter},
                {"eval_split", c.train.eval_split}};
  j["k"] = c.k;
  j["seeds"] = c.seeds;
  if (c.components) j["components"] = *c.components;
  j["ablate"] = c.ablations.names();
  if (c.null_label) j["null_label"] = *c.null_label;
  return j.dump(2);
}

ProtocolSplits make_protocol_splits(const EmbeddingSet& full, std::size_t k, double eval_split, std::uint64_t seed) {
  if (!(eval_split > 0.0 && eval_split < 1.0)) throw Error(ErrorCode::InvalidConfig, "eval_split must lie in (0, 1)");
  auto rng = make_rng(seed, "split");
  std::vector<std::size_t> test_rows, pool_rows;
  for (std::size_t c = 0; c < full.n_classes(); ++c) {
    auto members = full.members_of(c);
    std::shuffle(members.begin(), members.end(), rng);
    std::size_t n_test = static_cast<std::size_t>(std::llround(eval_split * static_cast<double>(members.size())));
    if (members.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, members.size() - 1);
    else n_test = 0;
    test_rows.insert(test_rows.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
    pool_rows.insert(pool_rows.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test), members.end());
  }
  std::sort(test_rows.begin(), test_rows.end());
  std::sort(pool_rows.begin(), pool_rows.end());

  ProtocolSplits s;
  s.test = full.select(test_rows);
  const EmbeddingSet pool = full.select(pool_rows);
  const auto train_rows = kshot_indices(pool, k, substream_seed(seed, "train"));
  s.train = pool.select(train_rows);

  // Validation draws come from the pool rows the training draw left behind.
  std::vector<bool> used(pool.size(), false);
  for (auto r : train_rows) used[r] = true;
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (!used[i]) rest.push_back(i);
  }
  s.val = kshot_sample(pool.select(rest), k, substream_seed(seed, "val"));
  return s;
}

Eigen::MatrixXd quantize_f32(const Eigen::MatrixXd& m) {
  return m.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
}

std::size_t resolve_components(const PipelineConfig& config, const EmbeddingSet& train) {
  if (config.ablations.gaussian) return 1;
  return config.components.value_or(train.n_classes());
}

std::optional<std::size_t> resolve_null_label(const std::optional<std::string>& name,
                                              const std::vector<std::string>& relation_names) {
  if (!name) return std::nullopt;
  const auto it = std::find(relation_names.begin(), relation_names.end(), *name);
  if (it == relation_names.end()) throw Error(ErrorCode::InvalidConfig, "null label '" + *name + "' is not a relation");
  return static_cast<std::size_t>(it - relation_names.begin());
}

GmmFit stage_fit_gmm(const EmbeddingSet& train, std::size_t n_components, const EmConfig& em, std::uint64_t seed) {
  EmConfig cfg = em;
  cfg.seed = substream_seed(seed, "gmm");
  return fit_gmm(train, n_components, cfg);
}

SvgdResult stage_svgd(const EmbeddingSet& train, const GmmParams& target, const SvgdConfig& svgd) {
  Particles init{train.vectors, 0};
  auto result = svgd_run(init, target, svgd);
  result.particles.particles = quantize_f32(result.particles.particles);
  return result;
}

TypePromptInit type_prompt_init(const Ablations& ablations) {
  if (ablations.del_tpw) return TypePromptInit::Omitted;
  if (ablations.random_type) return TypePromptInit::Random;
  return TypePromptInit::Latent;
}

PromptPack stage_synth_prompts(const EmbeddingSet& train, const Particles* particles,
                               const WordEmbeddingTable& table, TypePromptInit init, std::uint64_t seed) {
  PromptPack pack = synthesize_prompts(train, particles, table, {init, substream_seed(seed, "prompts")});
  pack.label_prompts = quantize_f32(pack.label_prompts);
  pack.type_subject = quantize_f32(pack.type_subject);
  pack.type_object = quantize_f32(pack.type_object);
  return pack;
}

TrainedPromptModel stage_train(const EmbeddingSet& train, const EmbeddingSet& val, const PromptPack& pack,
                               const TrainConfig& config, std::uint64_t seed, std::optional<std::size_t> null_label,
                               const Particles* particles) {
  TrainConfig cfg = config;
  cfg.seed = substream_seed(seed, "train");
  auto trained = bayesprompt::train(train, val, pack, cfg, null_label, particles);
  auto& p = trained.model.pack;
  p.label_prompts = quantize_f32(p.label_prompts);
  p.type_subject = quantize_f32(p.type_subject);
  p.type_object = quantize_f32(p.type_object);
  return trained;
}

WordEmbeddingTable resolve_word_table(const PipelineConfig& config, std::size_t dim) {
  if (!config.words) return WordEmbeddingTable(dim);
  auto table = load_word_table(*config.words);
  if (table.dim() != dim) throw Error(ErrorCode::DimensionMismatch, "word table dimension differs from data");
  return table;
}

ProtocolResult run_seeded_protocol(const EmbeddingSet& full, const PipelineConfig& config) {
  validate(config);
  validate(full);
  using Clock = std::chrono::steady_clock;
  ProtocolResult out;
  auto timed = [&out](const char* stage, auto&& fn) {
    const auto start = Clock::now();
    auto r = fn();
    out.timings_ms[stage] += std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    return r;
  };

  const auto table = resolve_word_table(config, full.dim());
  const auto null_label = resolve_null_label(config.null_label, full.relation_names);
  const auto init = type_prompt_init(config.ablations);
  const bool needs_particles = init == TypePromptInit::Latent;

  std::vector<double> micro, macro;
  for (const auto seed : config.seeds) {
    const auto splits = timed("kshot", [&] { return make_protocol_splits(full, config.k, config.train.eval_split, seed); });
    RunResult run;
    run.seed = seed;
    run.components = resolve_components(config, splits.train);
    std::optional<Particles> particles;
    if (needs_particles) {
      const auto gmm = timed("fit_gmm", [&] { return stage_fit_gmm(splits.train, run.components, config.em, seed); });
      particles = timed("svgd", [&] { return stage_svgd(splits.train, gmm.params, config.svgd).particles; });
    }
    const Particles* theta = particles ? &*particles : nullptr;
    const auto pack = timed("synth_prompts", [&] { return stage_synth_prompts(splits.train, theta, table, init, seed); });
    const auto trained = timed("train", [&] {
      return stage_train(splits.train, splits.val, pack, config.train, seed, null_label, theta);
    });
    run.test = timed("eval", [&] { return evaluate_f1(trained.model, splits.test, null_label); });
    run.best_epoch = trained.best_epoch;
    run.final_train_loss = trained.train_loss.back();
    micro.push_back(run.test.micro_f1);
    macro.push_back(run.test.macro_f1);
    out.runs.push_back(std::move(run));
  }
  std::tie(out.mean_micro_f1, out.std_micro_f1) = mean_and_std(micro);
  std::tie(out.mean_macro_f1, out.std_macro_f1) = mean_and_std(macro);
  return out;
}

std::string run_metrics_json(const F1Metrics& metrics) { return detail::metrics_to_json(metrics).dump(2); }

std::string protocol_json(const ProtocolResult& result, const PipelineConfig& config, std::size_t n_classes) {
  json runs = json::array();
  for (const auto& r : result.runs) {
    runs.push_back({{"seed", r.seed},
                    {"components", r.components},
                    {"best_epoch", r.best_epoch},
                    {"final_train_loss", r.final_train_loss},
                    {"metrics", detail::metrics_to_json(r.test)}});
  }
  json j{{"k", config.k},
         {"n_classes", n_classes},
         {"components", result.runs.empty() ? 0 : result.runs.front().components},
         {"ablate", config.ablations.names()},
         {"type_prompts", std::string(to_string(type_prompt_init(config.ablations)))},
         {"seeds", config.seeds},
         {"micro_f1", {{"mean", result.mean_micro_f1}, {"std", result.std_micro_f1}}},
         {"macro_f1", {{"mean", result.mean_macro_f1}, {"std", result.std_macro_f1}}},
         {"runs", runs}};
  return j.dump(2);
}

}  // namespace bayesprompt
