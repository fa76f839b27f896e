#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "bayesprompt/seed.hpp"
#include "bayesprompt/trainer.hpp"
#include "test_util.hpp"

using namespace bayesprompt;

namespace {

PromptPack make_pack(const Eigen::MatrixXd& labels, bool types = true) {
  PromptPack p;
  for (Eigen::Index i = 0; i < labels.rows(); ++i) {
    p.relation_names.push_back("r" + std::to_string(i));
    p.verbalizer.push_back(verbalizer_word(p.relation_names.back()));
  }
  p.label_prompts = labels;
  p.type_subject = Eigen::VectorXd::Zero(labels.cols());
  p.type_object = Eigen::VectorXd::Zero(labels.cols());
  p.has_type_prompts = types;
  p.type_init = types ? TypePromptInit::Latent : TypePromptInit::Omitted;
  return p;
}

struct Instance {
  PromptModel model;
  Eigen::MatrixXd batch;
  std::vector<std::size_t> labels;
};

Instance random_instance(Rng& rng, int classes, int dim, int batch) {
  std::normal_distribution<double> n(0, 1);
  std::uniform_int_distribution<std::size_t> lab(0, static_cast<std::size_t>(classes - 1));
  auto fill = [&](auto& m) {
    for (auto& v : m.reshaped()) v = n(rng);
  };
  Eigen::MatrixXd l(classes, dim);
  fill(l);
  Instance in{PromptModel::from_pack(make_pack(l), 0.5 + std::abs(n(rng))), Eigen::MatrixXd(batch, dim), {}};
  in.model.pack.type_subject.resize(dim);
  in.model.pack.type_object.resize(dim);
  fill(in.model.pack.type_subject);
  fill(in.model.pack.type_object);
  fill(in.model.bias);
  fill(in.batch);
  for (int i = 0; i < batch; ++i) in.labels.push_back(lab(rng));
  return in;
}

// Central difference of the loss in one scalar parameter.
template <typename Ref>
double central(Instance& in, Ref&& param, double eps = 1e-6) {
  const double keep = param;
  param = keep + eps;
  const double up = loss(in.model, in.batch, in.labels);
  param = keep - eps;
  const double down = loss(in.model, in.batch, in.labels);
  param = keep;
  return (up - down) / (2 * eps);
}

}  // namespace

TEST_CASE("softmax of a two-class example") {
  Eigen::MatrixXd l(2, 2);
  l << 1, 0, 0, 1;
  const auto model = PromptModel::from_pack(make_pack(l));
  const auto p = predict_distribution(model, Eigen::Vector2d(1, 0));
  CHECK(p(0) == doctest::Approx(0.731059).epsilon(1e-6));
  CHECK(p(1) == doctest::Approx(0.268941).epsilon(1e-6));
  CHECK(p(0) == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1)).epsilon(1e-15));
}

TEST_CASE("tied label prompts give the uniform loss") {
  Rng rng(1);
  std::normal_distribution<double> n(0, 3);
  Eigen::MatrixXd l = Eigen::MatrixXd::Constant(19, 8, 0.7);
  const auto model = PromptModel::from_pack(make_pack(l));
  Eigen::MatrixXd batch(11, 8);
  for (auto& v : batch.reshaped()) v = n(rng);
  std::vector<std::size_t> labels;
  for (int i = 0; i < 11; ++i) labels.push_back(static_cast<std::size_t>(i) % 19);
  CHECK(std::abs(loss(model, batch, labels) - std::log(19.0)) <= 1e-6);
  CHECK(loss(model, batch, labels) == doctest::Approx(2.944439).epsilon(1e-6));
  const auto p = predict_distribution(model, batch.row(0).transpose());
  CHECK((p.array() - 1.0 / 19).abs().maxCoeff() < 1e-15);
}

TEST_CASE("loss of a hand built batch") {
  const auto model = [] {
    auto m = PromptModel::from_pack(make_pack(Eigen::MatrixXd::Zero(4, 2)));
    m.bias << std::log(0.5), std::log(0.25), std::log(0.125), std::log(0.125);
    return m;
  }();
  Eigen::MatrixXd batch = Eigen::MatrixXd::Random(2, 2);
  const double got = loss(model, batch, {0, 1});
  CHECK(got == doctest::Approx(1.039721).epsilon(1e-6));
  CHECK(got == doctest::Approx(-(std::log(0.5) + std::log(0.25)) / 2).epsilon(1e-14));
}

TEST_CASE("perfect fit has zero loss and vanishing gradients") {
  const Eigen::MatrixXd l = 100.0 * Eigen::MatrixXd::Identity(3, 3);
  const auto model = PromptModel::from_pack(make_pack(l));
  const Eigen::MatrixXd batch = Eigen::MatrixXd::Identity(3, 3);
  const std::vector<std::size_t> labels{0, 1, 2};
  CHECK(loss(model, batch, labels) < 1e-12);
  const auto g = loss_gradients(model, batch, labels);
  CHECK(g.label_prompts.norm() < 1e-6);
  CHECK(g.type_subject.norm() < 1e-6);
  CHECK(g.bias.norm() < 1e-6);
}

TEST_CASE("probability floor keeps the loss finite") {
  Eigen::MatrixXd l(2, 1);
  l << 1e6, -1e6;
  const auto model = PromptModel::from_pack(make_pack(l));
  const double got = loss(model, Eigen::MatrixXd::Ones(1, 1), {1});
  CHECK(std::isfinite(got));
  CHECK(got == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("gradients match finite differences") {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    auto in = random_instance(rng, 3, 4, 5);
    const auto g = loss_gradients(in.model, in.batch, in.labels);
    for (Eigen::Index r = 0; r < 3; ++r) {
      for (Eigen::Index c = 0; c < 4; ++c) {
        CHECK(rel_err(g.label_prompts(r, c), central(in, in.model.pack.label_prompts(r, c))) < 1e-5);
      }
      CHECK(rel_err(g.bias(r), central(in, in.model.bias(r))) < 1e-5);
    }
    for (Eigen::Index c = 0; c < 4; ++c) {
      CHECK(rel_err(g.type_subject(c), central(in, in.model.pack.type_subject(c))) < 1e-5);
      CHECK(rel_err(g.type_object(c), central(in, in.model.pack.type_object(c))) < 1e-5);
    }
  }
}

TEST_CASE("frozen parts get zero gradients") {
  Rng rng(3);
  auto in = random_instance(rng, 3, 4, 5);
  in.model.train_bias = false;
  in.model.pack.has_type_prompts = false;
  const auto g = loss_gradients(in.model, in.batch, in.labels);
  CHECK(g.bias.isZero());
  CHECK(g.type_subject.isZero());
  CHECK(g.type_object.isZero());
  CHECK_FALSE(g.label_prompts.isZero());
}

TEST_CASE("duplicated batch gives the same gradients") {
  Rng rng(4);
  auto in = random_instance(rng, 3, 4, 5);
  Eigen::MatrixXd twice(10, 4);
  twice << in.batch, in.batch;
  auto labels = in.labels;
  labels.insert(labels.end(), in.labels.begin(), in.labels.end());
  const auto a = loss_gradients(in.model, in.batch, in.labels);
  const auto b = loss_gradients(in.model, twice, labels);
  CHECK((a.label_prompts - b.label_prompts).norm() < 1e-14);
  CHECK((a.type_subject - b.type_subject).norm() < 1e-14);
  CHECK((a.bias - b.bias).norm() < 1e-14);
}

TEST_CASE("empty batch") {
  const auto model = PromptModel::from_pack(make_pack(Eigen::MatrixXd::Identity(2, 2)));
  try {
    loss(model, Eigen::MatrixXd(0, 2), {});
    FAIL("expected EmptyBatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyBatch);
  }
}

TEST_CASE("bias shift and temperature") {
  Rng rng(5);
  for (int t = 0; t < 10; ++t) {
    auto in = random_instance(rng, 5, 3, 4);
    auto shifted = in.model;
    shifted.bias.array() += 3.7;
    auto zero_bias = in.model;
    zero_bias.bias.setZero();
    for (Eigen::Index i = 0; i < in.batch.rows(); ++i) {
      const Eigen::VectorXd h = in.batch.row(i).transpose();
      CHECK((predict_distribution(in.model, h) - predict_distribution(shifted, h)).cwiseAbs().maxCoeff() < 1e-12);
      CHECK(std::abs(predict_distribution(in.model, h).sum() - 1) < 1e-12);
      Eigen::Index a = 0, b = 0;
      predict_distribution(zero_bias, h).maxCoeff(&a);
      auto hot = zero_bias;
      hot.temperature *= 7.5;
      predict_distribution(hot, h).maxCoeff(&b);
      CHECK(a == b);
    }
  }
}

TEST_CASE("f1 arithmetic") {
  // positive class 1: TP=2, FN=1, FP=1
  const auto m = f1_from_predictions({1, 1, 1, 0}, {1, 1, 0, 1}, 2, 0);
  CHECK(m.micro_f1 == doctest::Approx(0.6667).epsilon(1e-4));
  CHECK(m.micro_f1 == doctest::Approx(2.0 / 3).epsilon(1e-15));
  CHECK(m.macro_f1 == doctest::Approx(2.0 / 3).epsilon(1e-15));

  const auto perfect = f1_from_predictions({0, 1, 2, 2}, {0, 1, 2, 2}, 3);
  CHECK(perfect.micro_f1 == 1.0);
  CHECK(perfect.macro_f1 == 1.0);

  const auto all_null = f1_from_predictions({0, 1, 2}, {0, 0, 0}, 3, 0);
  CHECK(all_null.micro_f1 == 0.0);

  // five classes, enumerated confusion
  const std::vector<std::size_t> gold{0, 1, 2, 3, 4, 1, 2, 3, 0, 0};
  const std::vector<std::size_t> pred{0, 2, 2, 3, 0, 1, 1, 4, 4, 0};
  const auto five = f1_from_predictions(gold, pred, 5, 0);
  // non-null: predicted 7, gold 7, correct 3
  CHECK(five.micro_f1 == doctest::Approx(3.0 / 7).epsilon(1e-15));
  CHECK(five.per_class[2].precision == doctest::Approx(0.5));
  CHECK(five.per_class[2].recall == doctest::Approx(0.5));
  for (const auto& c : five.per_class) {
    CHECK(c.f1 >= 0.0);
    CHECK(c.f1 <= 1.0);
  }
}

TEST_CASE("mean and population std") {
  auto [m, s] = mean_and_std({0.2, 0.4});
  CHECK(m == doctest::Approx(0.3));
  CHECK(s == doctest::Approx(0.1));
  CHECK(mean_and_std({0.7}).second == 0.0);
  CHECK(mean_and_std({0.5, 0.5, 0.5, 0.5, 0.5}).second == 0.0);
}

TEST_CASE("separable set trains to low loss") {
  const auto full = generate_synthetic_set({.n_classes = 3, .per_class = 40, .dim = 4, .class_separation = 10,
                                            .within_class_stddev = 0.5, .seed = 3});
  const auto pack = synthesize_prompts(full, nullptr, WordEmbeddingTable(4), {TypePromptInit::Omitted, 1});
  const auto trained = train(full, full, pack, TrainConfig{});
  REQUIRE(trained.train_loss.size() == 50);
  CHECK(trained.train_loss.back() < 0.1);
  for (std::size_t e = 1; e < trained.train_loss.size(); ++e) {
    CHECK(trained.train_loss[e] <= trained.train_loss[e - 1] * 1.02);
  }
  CHECK(trained.best_val.micro_f1 == 1.0);

  const auto again = train(full, full, pack, TrainConfig{});
  CHECK(again.train_loss == trained.train_loss);
  CHECK(again.model.pack.label_prompts == trained.model.pack.label_prompts);
}

TEST_CASE("zero learning rate leaves the loss constant") {
  const auto full = generate_synthetic_set({.n_classes = 3, .per_class = 5, .dim = 4, .seed = 4});
  const auto pack = synthesize_prompts(full, nullptr, WordEmbeddingTable(4), {TypePromptInit::Random, 1});
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.learning_rate = 0.0;
  const auto t = train(full, full, pack, cfg);
  for (double l : t.train_loss) CHECK(l == t.train_loss.front());
}

TEST_CASE("label space mismatch") {
  const auto full = generate_synthetic_set({.n_classes = 3, .per_class = 5, .dim = 4, .seed = 4});
  const auto other = generate_synthetic_set({.n_classes = 4, .per_class = 5, .dim = 4, .seed = 4});
  const auto pack = synthesize_prompts(full, nullptr, WordEmbeddingTable(4), {TypePromptInit::Omitted, 1});
  try {
    train(other, other, pack, TrainConfig{});
    FAIL("expected LabelSpaceMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::LabelSpaceMismatch);
  }
}

TEST_CASE("evaluate an untrained pack") {
  const auto full = generate_synthetic_set({.n_classes = 3, .per_class = 5, .dim = 4, .seed = 4});
  const auto pack = synthesize_prompts(full, nullptr, WordEmbeddingTable(4), {TypePromptInit::Omitted, 1});
  const auto m = evaluate_f1(PromptModel::from_pack(pack), full);
  CHECK(m.micro_f1 >= 0.0);
  CHECK(m.micro_f1 <= 1.0);
  CHECK(m.per_class.size() == 3);
}

TEST_CASE("model round trip") {
  TempDir dir;
  const auto full = generate_synthetic_set({.n_classes = 3, .per_class = 6, .dim = 4, .seed = 5});
  const auto pack = synthesize_prompts(full, nullptr, WordEmbeddingTable(4), {TypePromptInit::Random, 1});
  TrainConfig cfg;
  cfg.epochs = 3;
  auto trained = train(full, full, pack, cfg);
  auto& p = trained.model.pack;
  p.label_prompts = p.label_prompts.cast<float>().cast<double>();
  p.type_subject = p.type_subject.cast<float>().cast<double>();
  p.type_object = p.type_object.cast<float>().cast<double>();
  save_prompt_model(trained, dir / "m.bpem");
  const auto back = load_prompt_model(dir / "m.bpem");
  CHECK(back.model.pack.label_prompts == p.label_prompts);
  CHECK(back.model.bias == trained.model.bias);
  CHECK(back.model.temperature == trained.model.temperature);
  CHECK(back.train_loss == trained.train_loss);
  CHECK(back.best_epoch == trained.best_epoch);
  CHECK(evaluate_f1(back.model, full).micro_f1 == evaluate_f1(trained.model, full).micro_f1);
}
