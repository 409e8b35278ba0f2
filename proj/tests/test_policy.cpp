#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "chorus/error.hpp"
#include "chorus/policy.hpp"
#include "support.hpp"

using namespace chorus;
using chorus::test::random_net;
using chorus::test::random_vector;

namespace {

/// Net whose class probabilities are exactly softmax(bs) for every input.
ScoringNetParameters constant_class_net(const std::array<double, 5>& logits) {
  auto p = ScoringNetParameters::zeros(3, 4, 2);
  for (int i = 0; i < 5; ++i) p.bs(i) = logits[static_cast<std::size_t>(i)];
  p.freeze_output();
  return p;
}

CandidateSet candidates_of(std::vector<CandidateResponse> c) {
  CandidateSet s;
  s.candidates = std::move(c);
  return s;
}

}  // namespace

TEST_CASE("softmax matches hand computations") {
  const std::vector<double> a{1, 2, 3};
  const auto p = softmax_probabilities(a, 1.0);
  CHECK(std::abs(p[0] - 0.09003) < 1e-5);
  CHECK(std::abs(p[1] - 0.24473) < 1e-5);
  CHECK(std::abs(p[2] - 0.66524) < 1e-5);

  const std::vector<double> z{0, 0, 0};
  for (double v : softmax_probabilities(z, 1.0)) CHECK(v == doctest::Approx(1.0 / 3.0));

  const std::vector<double> b{1, 2};
  const auto q = softmax_probabilities(b, 0.5);
  CHECK(std::abs(q[0] - 0.11920) < 1e-5);
  CHECK(std::abs(q[1] - 0.88080) < 1e-5);
}

TEST_CASE("softmax sums to one and ignores a constant shift") {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const auto s = random_vector(1 + rng.index(12), rng, -50, 50);
    const double temp = rng.uniform(0.05, 5.0);
    const auto p = softmax_probabilities(s, temp);
    double total = 0;
    for (double v : p) {
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(std::abs(total - 1.0) < 1e-6);
    auto shifted = s;
    const double c = rng.uniform(-100, 100);
    for (auto& v : shifted) v += c;
    const auto ps = softmax_probabilities(shifted, temp);
    for (std::size_t k = 0; k < p.size(); ++k) CHECK(std::abs(ps[k] - p[k]) < 1e-9);
  }
}

TEST_CASE("softmax is stable for extreme scores") {
  const std::vector<double> s{1e6, -1e6, 1e6 - 1};
  const auto p = softmax_probabilities(s, 1.0);
  for (double v : p) CHECK(std::isfinite(v));
  CHECK(p[1] == 0.0);
}

TEST_CASE("softmax rejects a non-positive temperature") {
  const std::vector<double> s{1, 2};
  CHECK_THROWS_AS(softmax_probabilities(s, 0.0), Error);
  CHECK_THROWS_AS(softmax_probabilities(s, -1.0), Error);
}

TEST_CASE("greedy choice examples") {
  CHECK(act_greedy(std::vector<double>{0.2, 0.9, 0.1}) == 1);
  CHECK(act_greedy(std::vector<double>{-4.0}) == 0);
  CHECK(act_greedy(std::vector<double>{0.5, 0.5}) == 0);
  CHECK(act_greedy(std::vector<double>{0.1, 0.7, 0.7}) == 1);
}

TEST_CASE("greedy equals the argmax of the stochastic probabilities") {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    auto s = random_vector(1 + rng.index(10), rng, -3, 3);
    if (rng.bernoulli(0.2) && s.size() > 1) s[1] = s[0];
    const auto g = act_greedy(s);
    for (double temp : {0.1, 1.0, 10.0}) {
      const auto p = softmax_probabilities(s, temp);
      std::size_t arg = 0;
      for (std::size_t k = 1; k < p.size(); ++k) {
        if (p[k] > p[arg]) arg = k;
      }
      CHECK(arg == g);
    }
  }
}

TEST_CASE("stochastic selection follows the softmax probabilities") {
  Rng rng(2);
  const std::vector<double> s{0.0, std::log(3.0)};
  std::size_t ones = 0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    const auto d = act_stochastic(s, 1.0, rng);
    CHECK(d.probs.size() == 2);
    ones += d.index;
  }
  CHECK(static_cast<double>(ones) / n == doctest::Approx(0.75).epsilon(0.02));
}

TEST_CASE("forward with frozen output weights is the expected label") {
  const std::array<double, 5> probs{0.1, 0.2, 0.4, 0.2, 0.1};
  std::array<double, 5> logits{};
  for (std::size_t i = 0; i < 5; ++i) logits[i] = std::log(probs[i]);
  const auto a = forward(constant_class_net(logits), std::vector<double>{0.3, -1.0, 2.0});
  CHECK(a.score == doctest::Approx(3.0).epsilon(1e-12));
  for (std::size_t i = 0; i < 5; ++i) CHECK(a.class_probs[i] == doctest::Approx(probs[i]).epsilon(1e-12));

  const auto one = forward(constant_class_net({60, 0, 0, 0, 0}), std::vector<double>{1, 1, 1});
  CHECK(one.score == doctest::Approx(1.0).epsilon(1e-12));

  auto zero = ScoringNetParameters::zeros(3, 4, 2);
  zero.freeze_output();
  const auto u = forward(zero, std::vector<double>{5, -5, 2});
  for (double v : u.class_probs) CHECK(v == doctest::Approx(0.2));
  CHECK(u.score == doctest::Approx(3.0));
}

TEST_CASE("activations satisfy their invariants") {
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    const auto p = random_net(7, rng);
    const auto a = forward(p, random_vector(7, rng, -3, 3));
    CHECK(a.h1.minCoeff() >= 0.0);
    double total = 0;
    for (double v : a.class_probs) {
      CHECK(v > 0.0);
      total += v;
    }
    CHECK(std::abs(total - 1.0) < 1e-6);
    const double expected = p.w_out3.dot(a.h2) +
                            Eigen::Map<const Eigen::VectorXd>(a.class_probs.data(), 5).dot(p.w_out4) + p.out_bias;
    CHECK(a.score == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("batched and single forward agree") {
  Rng rng(12);
  const auto p = random_net(7, rng);
  std::vector<std::vector<double>> xs;
  for (int i = 0; i < 9; ++i) xs.push_back(random_vector(7, rng));
  const auto s = score_all(p, xs);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    CHECK(s(static_cast<Eigen::Index>(i)) == doctest::Approx(forward(p, xs[i]).score).epsilon(1e-12));
  }
}

TEST_CASE("frozen output keeps scores within the label range") {
  Rng rng(21);
  for (int net = 0; net < 10; ++net) {
    auto p = ScoringNetParameters::initialize(12, rng, 16, 6);
    p.w1 *= 8.0;
    p.ws *= 8.0;
    for (int i = 0; i < 1000; ++i) {
      const double s = forward(p, random_vector(12, rng, -20, 20)).score;
      CHECK(s >= 1.0);
      CHECK(s <= 5.0);
    }
  }
}

TEST_CASE("forward rejects a wrong input dimension") {
  Rng rng(1);
  const auto p = random_net(7, rng);
  CHECK_THROWS_AS(forward(p, std::vector<double>(6, 0.0)), Error);
}

TEST_CASE("cross-entropy gradient matches finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) CHECK(chorus::test::cross_entropy_gradient_error(seed) < 1e-3);
}

TEST_CASE("squared-error gradient matches finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) CHECK(chorus::test::mse_gradient_error(seed) < 1e-3);
}

TEST_CASE("untrained network on balanced labels has cross-entropy near ln 5") {
  Rng rng(4);
  const auto data = chorus::test::separable_dataset(500, rng);
  auto p = ScoringNetParameters::initialize(2, rng, 32, 16);
  CHECK(cross_entropy(p, data) == doctest::Approx(std::log(5.0)).epsilon(0.05));
}

TEST_CASE("supervised training separates the synthetic clusters") {
  Rng rng(9);
  const auto train = chorus::test::separable_dataset(1000, rng);
  const auto dev = chorus::test::separable_dataset(250, rng);
  SgdConfig cfg;
  cfg.hidden1 = 32;
  cfg.hidden2 = 16;
  cfg.learning_rate = 0.1;
  cfg.batch_size = 16;
  cfg.max_epochs = 50;
  cfg.seed = 3;
  TrainingReport rep;
  const auto p = train_supervised_amt(train, dev, cfg, &rep);
  CHECK(std::abs(rep.initial_dev_loss - std::log(5.0)) < 0.1 * std::log(5.0));
  CHECK(rep.best_dev_loss < 0.2);
  CHECK(cross_entropy(p, dev) == doctest::Approx(rep.best_dev_loss));
  CHECK(p.output_frozen);
  CHECK(p.w_out3.isZero(0.0));
  CHECK(p.out_bias == 0.0);
}

TEST_CASE("a single repeated example is memorized") {
  const std::vector<LabeledExample> one{{{0.5, -1.0, 2.0}, 4}};
  SgdConfig cfg;
  cfg.hidden1 = 8;
  cfg.hidden2 = 4;
  cfg.batch_size = 1;
  cfg.max_epochs = 100;
  cfg.patience = 100;
  cfg.learning_rate = 0.05;
  TrainingReport rep;
  train_supervised_amt(one, one, cfg, &rep);
  REQUIRE(rep.dev_loss.size() == 100);
  for (std::size_t i = 1; i < rep.dev_loss.size(); ++i) CHECK(rep.dev_loss[i] <= rep.dev_loss[i - 1]);
  CHECK(rep.dev_loss.back() < 0.1 * rep.initial_dev_loss);
}

TEST_CASE("supervised training validates its input") {
  const std::vector<LabeledExample> bad{{{0.0}, 6}};
  const std::vector<LabeledExample> good{{{0.0}, 2}};
  CHECK_THROWS_AS(train_supervised_amt(bad, good, {}), Error);
  CHECK_THROWS_AS(train_supervised_amt({}, good, {}), Error);
  SgdConfig cfg;
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(train_supervised_amt(good, good, cfg), Error);
}

TEST_CASE("training is deterministic given a seed") {
  Rng rng(13);
  const auto data = chorus::test::separable_dataset(200, rng);
  SgdConfig cfg;
  cfg.hidden1 = 8;
  cfg.hidden2 = 4;
  cfg.max_epochs = 3;
  cfg.seed = 77;
  CHECK(train_supervised_amt(data, data, cfg).hash() == train_supervised_amt(data, data, cfg).hash());
}

TEST_CASE("fine-tuning at zero loss changes nothing") {
  auto p = ScoringNetParameters::zeros(3, 4, 2);
  p.freeze_output();
  Rng rng(3);
  std::vector<RegressionExample> data;
  for (int i = 0; i < 20; ++i) data.push_back({random_vector(3, rng), 3.0});
  TrainingReport rep;
  const auto q = finetune_learned_reward(p, data, {}, &rep);
  CHECK(rep.initial_dev_loss == 0.0);
  CHECK(q.hash() == p.hash());
}

TEST_CASE("fine-tuning toward a constant target lowers the error every step") {
  Rng rng(6);
  auto p = ScoringNetParameters::initialize(4, rng, 6, 3);
  std::vector<RegressionExample> data;
  for (int i = 0; i < 30; ++i) data.push_back({random_vector(4, rng), 4.5});
  SgdConfig cfg;
  cfg.batch_size = data.size();
  cfg.max_epochs = 10;
  cfg.patience = 10;
  cfg.learning_rate = 0.05;
  TrainingReport rep;
  const auto q = finetune_learned_reward(p, data, cfg, &rep);
  REQUIRE(rep.dev_loss.size() == 10);
  CHECK(rep.dev_loss[0] < rep.initial_dev_loss);
  for (std::size_t i = 1; i < rep.dev_loss.size(); ++i) CHECK(rep.dev_loss[i] < rep.dev_loss[i - 1]);
  CHECK(q.out_bias > 0.0);
  CHECK_FALSE(q.output_frozen);
  CHECK(q.w1 == p.w1);
  CHECK(q.w2 == p.w2);
  CHECK(q.ws == p.ws);
  CHECK(q.bs == p.bs);
}

TEST_CASE("one fine-tuning step moves the score toward the target") {
  auto p = ScoringNetParameters::zeros(2, 3, 2);
  p.freeze_output();
  const std::vector<RegressionExample> data{{{1.0, -1.0}, 5.0}};
  CHECK(forward(p, data[0].features).score == doctest::Approx(3.0));
  SgdConfig cfg;
  cfg.batch_size = 1;
  cfg.max_epochs = 1;
  cfg.learning_rate = 0.01;
  const auto q = finetune_learned_reward(p, data, cfg);
  const double s = forward(q, data[0].features).score;
  CHECK(s > 3.0);
  CHECK(s < 5.0);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  Rng rng(31);
  auto p = random_net(7, rng);
  p.w1(0, 0) = 0.1 + 0.2;
  p.b1(1) = std::nextafter(1.0, 2.0);
  p.out_bias = -1.0 / 3.0;
  p.layout_fingerprint = "layout-abc";
  const auto path = chorus::test::scratch_dir("policy_ckpt") / "net.json";
  save_checkpoint(p, path);
  const auto q = load_checkpoint(path);
  CHECK(q.hash() == p.hash());
  CHECK(q.layout_fingerprint == "layout-abc");
  CHECK(q.output_frozen == p.output_frozen);
  for (int i = 0; i < 50; ++i) {
    const auto x = random_vector(7, rng, -3, 3);
    const double a = forward(p, x).score, b = forward(q, x).score;
    CHECK(std::memcmp(&a, &b, sizeof a) == 0);
  }
}

TEST_CASE("loading a damaged checkpoint fails cleanly") {
  const auto dir = chorus::test::scratch_dir("policy_bad_ckpt");
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.json"), Error);
  {
    std::ofstream(dir / "trunc.json") << R"({"version": 1, "input_dim": 3)";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "trunc.json"), Error);
}

TEST_CASE("a priority candidate overrides the policy") {
  const auto h = chorus::test::user_says("hello");
  const auto c = candidates_of({{"a", "one", false}, {"b", "two", true}, {"c", "three", true}});
  Rng rng(0);
  const auto r = select_from(h, c, RandomPolicy{}, {}, rng);
  CHECK(r.turn.chosen_index == 1);
  CHECK(r.turn.was_priority);
  CHECK(r.turn.behavior_prob == 1.0);
  CHECK(r.response.text == "two");
}

TEST_CASE("non-priority turns record the behavior probability") {
  const auto h = chorus::test::user_says("hello");
  const auto c = candidates_of({{"a", "one", false}, {"b", "two", false}, {"c", "three", false}, {"d", "four", false}});
  Rng rng(0);
  const auto r = select_from(h, c, RandomPolicy{}, {}, rng);
  CHECK_FALSE(r.turn.was_priority);
  CHECK(r.turn.behavior_prob == doctest::Approx(0.25));

  const auto pref = select_from(h, c, PreferencePolicy("pref", {"z", "c", "a"}), {}, rng);
  CHECK(pref.turn.chosen_index == 2);
  CHECK(pref.turn.behavior_prob == 1.0);
}

TEST_CASE("greedy network policy puts all mass on the argmax") {
  auto p = std::make_shared<ScoringNetParameters>(ScoringNetParameters::zeros(2, 2, 1));
  p->output_frozen = false;
  p->w1.setIdentity();
  p->w2 << 1.0, 0.0;
  p->w_out3 << 1.0;
  p->w_out4.setZero();
  const NetPolicy greedy("g", p, nullptr, NetPolicy::Mode::Greedy);
  const auto c = candidates_of({{"a", "x", false}, {"b", "y", false}, {"c", "z", false}});
  const std::vector<std::vector<double>> feats{{0.2, 0}, {0.9, 0}, {0.9, 0}};
  Rng rng(0);
  const auto d = greedy.decide(chorus::test::user_says("hi"), c, feats, rng);
  CHECK(d.index == 1);
  CHECK(d.probs == std::vector<double>{0.0, 1.0, 0.0});

  const NetPolicy soft("s", p, nullptr, NetPolicy::Mode::Stochastic, 0.5);
  const auto sd = soft.decide(chorus::test::user_says("hi"), c, feats, rng);
  const auto expected = softmax_probabilities(std::vector<double>{0.2, 0.9, 0.9}, 0.5);
  for (std::size_t i = 0; i < 3; ++i) CHECK(sd.probs[i] == doctest::Approx(expected[i]));
}

TEST_CASE("network policy checks the feature layout") {
  const auto& comp = chorus::test::components();
  auto p = std::make_shared<const ScoringNetParameters>(ScoringNetParameters::zeros(5, 2, 2));
  CHECK_THROWS_AS(NetPolicy("n", p, comp.extractor, NetPolicy::Mode::Greedy), Error);
}
