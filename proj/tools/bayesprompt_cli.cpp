// Command-line driver: each pipeline stage as a subcommand, plus the
// end-to-end seeded protocol. Final JSON goes to stdout, logs to stderr.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bayesprompt/embedding_store.hpp"
#include "bayesprompt/error.hpp"
#include "bayesprompt/gmm.hpp"
#include "bayesprompt/pipeline.hpp"
#include "bayesprompt/prompt_synthesis.hpp"
#include "bayesprompt/seed.hpp"
#include "bayesprompt/svgd.hpp"
#include "bayesprompt/trainer.hpp"

namespace bp = bayesprompt;
using nlohmann::json;

namespace {

constexpr int kExitStageError = 1;
constexpr int kExitConfigError = 2;

void write_text(const std::string& text, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw bp::Error(bp::ErrorCode::IoFailure, "cannot write " + path);
  out << text << '\n';
}

void write_loss_trace(const bp::TrainedPromptModel& t, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw bp::Error(bp::ErrorCode::IoFailure, "cannot write " + path);
  out << "epoch,train_loss,val_micro_f1\n";
  out.precision(17);
  for (std::size_t i = 0; i < t.train_loss.size(); ++i) {
    out << (i + 1) << ',' << t.train_loss[i] << ',' << t.val_f1[i] << '\n';
  }
}

bp::Ablations parse_ablations(const std::vector<std::string>& names) {
  bp::Ablations a;
  for (const auto& n : names) {
    if (n == "gaussian") {
      a.gaussian = true;
    } else if (n == "del_TPW") {
      a.del_tpw = true;
    } else if (n == "random_type") {
      a.random_type = true;
    } else {
      throw bp::Error(bp::ErrorCode::InvalidConfig, "unknown ablation '" + n + "'");
    }
  }
  return a;
}

std::optional<double> parse_bandwidth(const std::string& s) {
  if (s.empty() || s == "auto") return std::nullopt;
  return std::stod(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Particle-initialized prompt synthesis and training over an embedding space"};
  app.require_subcommand(1);

  // Shared option storage; each subcommand binds the subset it uses.
  std::string config_path, output, trace, data, val_path, test_path, gmm_path, particles_path, prompts_path,
      model_path, words_path, null_label;
  std::uint64_t seed = 0;
  std::optional<std::size_t> components;
  std::optional<int> iters;
  std::optional<double> step;
  std::string bandwidth;
  std::optional<std::size_t> k;
  std::vector<std::string> ablate;
  std::optional<double> lr;
  std::optional<int> epochs;

  bp::SynthConfig synth;
  auto* gen = app.add_subcommand("gen-synth", "Write a synthetic labeled embedding set");
  gen->add_option("--classes", synth.n_classes, "Number of classes");
  gen->add_option("--per-class", synth.per_class, "Rows per class");
  gen->add_option("--dim", synth.dim, "Dimension");
  gen->add_option("--separation", synth.class_separation, "Minimum distance between class centers");
  gen->add_option("--stddev", synth.within_class_stddev, "Within-class standard deviation");
  gen->add_option("--seed", seed, "Seed");
  gen->add_option("-o,--output", output, "Output BPEM path")->required();

  double eval_split = bp::TrainConfig{}.eval_split;
  std::string val_out, test_out;
  auto* kshot = app.add_subcommand("kshot", "Split a full set into k-shot train/val and a held-out test set");
  kshot->add_option("--data", data, "Full embedding set")->required();
  kshot->add_option("--k", k, "Examples per class");
  kshot->add_option("--eval-split", eval_split, "Held-out test fraction per class");
  kshot->add_option("--seed", seed, "Run seed");
  kshot->add_option("-o,--output", output, "Training split output")->required();
  kshot->add_option("--val-out", val_out, "Validation split output");
  kshot->add_option("--test-out", test_out, "Test split output");

  bp::EmConfig em;
  std::string em_init = "class-means";
  auto* fit = app.add_subcommand("fit-gmm", "Fit the mixture target to a training set");
  fit->add_option("--data", data, "Training set")->required();
  fit->add_option("--components", components, "Mixture components (default: number of relations)");
  fit->add_option("--max-iters", em.max_iters, "EM iteration cap");
  fit->add_option("--tol", em.tol, "Relative log-likelihood tolerance");
  fit->add_option("--variance-floor", em.variance_floor, "Variance floor relative to data variance");
  fit->add_option("--init", em_init, "class-means | kmeans++");
  fit->add_option("--ablate", ablate, "gaussian fits a single component");
  fit->add_option("--seed", seed, "Run seed");
  fit->add_option("-o,--output", output, "Mixture JSON output")->required();

  bp::SvgdConfig svgd_cfg;
  std::string step_mode = "adagrad";
  auto* svgd = app.add_subcommand("svgd", "Transport the training representations toward the mixture");
  svgd->add_option("--data", data, "Training set (initial particles)")->required();
  svgd->add_option("--gmm", gmm_path, "Mixture JSON")->required();
  svgd->add_option("--iters", iters, "Iterations");
  svgd->add_option("--step", step, "Base step size");
  svgd->add_option("--step-mode", step_mode, "adagrad | fixed");
  svgd->add_option("--bandwidth", bandwidth, "auto or a fixed positive bandwidth");
  svgd->add_option("--seed", seed, "Run seed");
  svgd->add_option("--trace", trace, "CSV diagnostic trace");
  svgd->add_option("-o,--output", output, "Particle BPEM output")->required();

  auto* synth_prompts = app.add_subcommand("synth-prompts", "Build label and type prompt embeddings");
  synth_prompts->add_option("--data", data, "Training set")->required();
  synth_prompts->add_option("--particles", particles_path, "Transported particles");
  synth_prompts->add_option("--words", words_path, "Word embedding table");
  synth_prompts->add_option("--ablate", ablate, "del_TPW | random_type");
  synth_prompts->add_option("--seed", seed, "Run seed");
  synth_prompts->add_option("-o,--output", output, "Prompt pack output")->required();

  bp::TrainConfig train_cfg;
  bool resample = false;
  auto* train = app.add_subcommand("train", "Train prompt parameters");
  train->add_option("--data", data, "Training set")->required();
  train->add_option("--val", val_path, "Validation set")->required();
  train->add_option("--prompts", prompts_path, "Prompt pack")->required();
  train->add_option("--particles", particles_path, "Particles for per-update resampling");
  train->add_option("--epochs", epochs, "Epochs");
  train->add_option("--batch-size", train_cfg.batch_size, "Mini-batch size");
  train->add_option("--lr", lr, "Learning rate");
  train->add_option("--temperature", train_cfg.temperature, "Scorer temperature");
  train->add_flag("--resample-omega", resample, "Redraw type prompts before every update");
  train->add_option("--null-label", null_label, "Relation excluded from positive classes");
  train->add_option("--seed", seed, "Run seed");
  train->add_option("--trace", trace, "CSV loss trace");
  train->add_option("-o,--output", output, "Model output")->required();

  auto* eval = app.add_subcommand("eval", "F1 of a prompt model or pack on a test set");
  eval->add_option("--model", model_path, "Trained model or bare prompt pack")->required();
  eval->add_option("--data", data, "Test set")->required();
  eval->add_option("--null-label", null_label, "Relation excluded from positive classes");
  eval->add_option("--seed", seed, "Accepted for uniformity; evaluation is deterministic");
  eval->add_option("-o,--output", output, "Metrics JSON output");

  std::vector<std::uint64_t> seeds;
  std::size_t n_seeds = 5;
  bool timings = true;
  auto* pipeline = app.add_subcommand("pipeline", "Seeded end-to-end protocol");
  pipeline->add_option("--config", config_path, "JSON config");
  pipeline->add_option("--data", data, "Full embedding set (synthetic data otherwise)");
  pipeline->add_option("--words", words_path, "Word embedding table");
  pipeline->add_option("--k", k, "Examples per class");
  pipeline->add_option("--seeds", seeds, "Explicit run seeds")->delimiter(',');
  pipeline->add_option("--seed", seed, "Top-level seed; run seeds derive from it unless --seeds is given");
  pipeline->add_option("--n-seeds", n_seeds, "Number of derived run seeds");
  pipeline->add_option("--components", components, "Mixture components");
  pipeline->add_option("--iters", iters, "SVGD iterations");
  pipeline->add_option("--step", step, "SVGD base step");
  pipeline->add_option("--bandwidth", bandwidth, "auto or fixed bandwidth");
  pipeline->add_option("--lr", lr, "Learning rate");
  pipeline->add_option("--epochs", epochs, "Epochs");
  pipeline->add_option("--ablate", ablate, "gaussian | del_TPW | random_type");
  pipeline->add_option("--null-label", null_label, "Relation excluded from positive classes");
  pipeline->add_flag("--timings,!--no-timings", timings, "Include per-stage timings on stdout");
  pipeline->add_option("-o,--output", output, "Deterministic metrics JSON output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfigError;
  }

  std::string stage = app.get_subcommands().front()->get_name();
  try {
    if (gen->parsed()) {
      synth.seed = seed;
      const auto set = bp::generate_synthetic_set(synth);
      bp::save_embedding_set(set, output);
      std::cout << json{{"output", output}, {"rows", set.size()}, {"dim", set.dim()}}.dump() << '\n';
    } else if (kshot->parsed()) {
      const auto full = bp::load_embedding_set(data);
      const auto splits = bp::make_protocol_splits(full, k.value_or(16), eval_split, seed);
      bp::save_embedding_set(splits.train, output);
      if (!val_out.empty()) bp::save_embedding_set(splits.val, val_out);
      if (!test_out.empty()) bp::save_embedding_set(splits.test, test_out);
      std::cout << json{{"train", splits.train.size()}, {"val", splits.val.size()}, {"test", splits.test.size()}}.dump()
                << '\n';
    } else if (fit->parsed()) {
      if (em_init == "class-means") {
        em.init = bp::GmmInit::ClassMeans;
      } else if (em_init == "kmeans++") {
        em.init = bp::GmmInit::KMeansPlusPlus;
      } else {
        throw bp::Error(bp::ErrorCode::InvalidConfig, "unknown init '" + em_init + "'");
      }
      const auto train_set = bp::load_embedding_set(data);
      bp::PipelineConfig pc;
      pc.components = components;
      pc.ablations = parse_ablations(ablate);
      const auto n = bp::resolve_components(pc, train_set);
      const auto result = bp::stage_fit_gmm(train_set, n, em, seed);
      bp::save_gmm(result.params, output);
      std::cerr << "fit-gmm: " << result.iterations << " EM iterations, converged=" << result.converged << '\n';
      std::cout << json{{"components", n}, {"iterations", result.iterations}, {"converged", result.converged},
                        {"log_likelihood", result.log_likelihood.back()}}
                       .dump()
                << '\n';
    } else if (svgd->parsed()) {
      if (iters) svgd_cfg.n_iters = *iters;
      if (step) svgd_cfg.base_step = *step;
      if (step_mode == "fixed") {
        svgd_cfg.step_mode = bp::StepMode::Fixed;
      } else if (step_mode != "adagrad") {
        throw bp::Error(bp::ErrorCode::InvalidConfig, "unknown step mode '" + step_mode + "'");
      }
      svgd_cfg.bandwidth = parse_bandwidth(bandwidth);
      svgd_cfg.seed = seed;
      const auto train_set = bp::load_embedding_set(data);
      const auto target = bp::load_gmm(gmm_path);
      const auto result = bp::stage_svgd(train_set, target, svgd_cfg);
      bp::save_particles(result.particles, output);
      if (!trace.empty()) bp::write_svgd_trace(result.trace, trace);
      std::cout << json{{"particles", result.particles.size()}, {"iterations", result.particles.iteration}}.dump()
                << '\n';
    } else if (synth_prompts->parsed()) {
      const auto train_set = bp::load_embedding_set(data);
      const auto init = bp::type_prompt_init(parse_ablations(ablate));
      std::optional<bp::Particles> particles;
      if (!particles_path.empty()) particles = bp::load_particles(particles_path);
      bp::PipelineConfig pc;
      if (!words_path.empty()) pc.words = words_path;
      const auto table = bp::resolve_word_table(pc, train_set.dim());
      const auto pack =
          bp::stage_synth_prompts(train_set, particles ? &*particles : nullptr, table, init, seed);
      bp::save_prompt_pack(pack, output);
      std::cout << json{{"relations", pack.n_relations()}, {"type_prompts", bp::to_string(pack.type_init)}}.dump()
                << '\n';
    } else if (train->parsed()) {
      if (epochs) train_cfg.epochs = *epochs;
      if (lr) train_cfg.learning_rate = *lr;
      train_cfg.resample_omega_each_iter = resample;
      const auto train_set = bp::load_embedding_set(data);
      const auto val_set = bp::load_embedding_set(val_path);
      const auto pack = bp::load_prompt_pack(prompts_path);
      std::optional<bp::Particles> particles;
      if (!particles_path.empty()) particles = bp::load_particles(particles_path);
      const auto null_idx = bp::resolve_null_label(
          null_label.empty() ? std::nullopt : std::optional<std::string>(null_label), train_set.relation_names);
      const auto trained = bp::stage_train(train_set, val_set, pack, train_cfg, seed, null_idx,
                                           particles ? &*particles : nullptr);
      bp::save_prompt_model(trained, output);
      if (!trace.empty()) write_loss_trace(trained, trace);
      std::cout << json{{"best_epoch", trained.best_epoch},
                        {"best_val_micro_f1", trained.best_val.micro_f1},
                        {"final_train_loss", trained.train_loss.back()}}
                       .dump()
                << '\n';
    } else if (eval->parsed()) {
      const auto trained = bp::load_prompt_model(model_path);
      const auto test_set = bp::load_embedding_set(data);
      const auto null_idx = bp::resolve_null_label(
          null_label.empty() ? std::nullopt : std::optional<std::string>(null_label), test_set.relation_names);
      const auto metrics = bp::evaluate_f1(trained.model, test_set, null_idx);
      const auto text = bp::run_metrics_json(metrics);
      if (!output.empty()) write_text(text, output);
      std::cout << text << '\n';
    } else if (pipeline->parsed()) {
      bp::PipelineConfig pc;
      if (!config_path.empty()) pc = bp::load_pipeline_config(config_path);
      if (!data.empty()) pc.data = data;
      if (!words_path.empty()) pc.words = words_path;
      if (k) pc.k = *k;
      if (!seeds.empty()) {
        pc.seeds = seeds;
      } else if (pipeline->count("--seed") > 0 || pipeline->count("--n-seeds") > 0) {
        pc.seeds.clear();
        for (std::size_t i = 0; i < n_seeds; ++i) {
          pc.seeds.push_back(bp::substream_seed(seed, "run-" + std::to_string(i)));
        }
      }
      if (pipeline->count("--seed") > 0) pc.synth.seed = bp::substream_seed(seed, "data");
      if (components) pc.components = components;
      if (iters) pc.svgd.n_iters = *iters;
      if (step) pc.svgd.base_step = *step;
      if (!bandwidth.empty()) pc.svgd.bandwidth = parse_bandwidth(bandwidth);
      if (lr) pc.train.learning_rate = *lr;
      if (epochs) pc.train.epochs = *epochs;
      if (!ablate.empty()) pc.ablations = parse_ablations(ablate);
      if (!null_label.empty()) pc.null_label = null_label;
      bp::validate(pc);

      stage = "load";
      const auto full = pc.data ? bp::load_embedding_set(*pc.data) : bp::generate_synthetic_set(pc.synth);
      stage = "pipeline";
      const auto result = bp::run_seeded_protocol(full, pc);
      const auto metrics = bp::protocol_json(result, pc, full.n_classes());
      if (!output.empty()) write_text(metrics, output);
      json doc{{"metrics", json::parse(metrics)}};
      if (timings) doc["timings_ms"] = result.timings_ms;
      std::cout << doc.dump(2) << '\n';
    }
  } catch (const bp::Error& e) {
    std::cerr << stage << ": " << e.what() << '\n';
    return e.code() == bp::ErrorCode::InvalidConfig ? kExitConfigError : kExitStageError;
  } catch (const std::exception& e) {
    std::cerr << stage << ": " << e.what() << '\n';
    return kExitStageError;
  }
  return 0;
}
