#include <doctest.h>

#include <cmath>
#include <map>

#include "chorus/error.hpp"
#include "chorus/store.hpp"
#include "support.hpp"

using namespace chorus;
using chorus::test::components;
using chorus::test::mdp_fixture;

namespace {

const NluResources& nlu() { return *components().nlu; }

DialogueHistory said(const std::string& text, const std::string& session) {
  return chorus::test::history_of({{Speaker::User, text}}, session);
}

AbstractState state_of(const DialogueHistory& h) { return classify_abstract_state(nlu(), h); }

/// Head that puts all its mass on `cls` whatever the input.
void force_class(MlpHead& head, std::size_t cls) {
  head.b2.setZero();
  head.b2(static_cast<Eigen::Index>(cls)) = 800.0;
}

/// Head whose output is softmax(logs) = `probs` for every input.
template <std::size_t N>
void fix_probs(MlpHead& head, const std::array<double, N>& probs) {
  for (std::size_t i = 0; i < N; ++i) head.b2(static_cast<Eigen::Index>(i)) = std::log(probs[i]);
}

TransitionExample transition_to(AbstractState next, std::size_t feature_dim = 3) {
  TransitionExample ex;
  ex.input.features.assign(feature_dim, 0.0);
  ex.next = next;
  return ex;
}

AbstractState make_state(DialogueAct a, Sentiment s, bool generic) {
  AbstractState z;
  z.act = a;
  z.sentiment = s;
  z.is_generic = generic;
  return z;
}

}  // namespace

TEST_CASE("expected reward examples") {
  CHECK(expected_reward(std::vector<double>{0, 0, 1, 0, 0}) == 0.0);
  CHECK(expected_reward(std::vector<double>{0.2, 0.2, 0.2, 0.2, 0.2}) == doctest::Approx(0.0));
  CHECK(expected_reward(std::vector<double>{0.5, 0.5, 0, 0, 0}) == doctest::Approx(-1.5));
  CHECK(expected_reward(std::vector<double>{0, 0, 0, 0, 1}) == 2.0);
  CHECK_THROWS_AS(expected_reward(std::vector<double>{0.5, 0.5, 0.5, 0, 0}), Error);
  CHECK_THROWS_AS(expected_reward(std::vector<double>{0.5, 0.5}), Error);
}

TEST_CASE("a single-history bucket always returns that history") {
  HistoryPool pool;
  const auto h = said("i love movies", "a");
  pool.add(h, state_of(h), nlu());
  Rng rng(1);
  for (int i = 0; i < 50; ++i) CHECK(sample_history(pool, state_of(h), rng) == h);
}

TEST_CASE("draws from a bucket are uniform") {
  HistoryPool pool;
  const std::vector<std::string> texts{"i love movies", "i love music", "i love books", "i love games"};
  const auto z = state_of(said(texts[0], "x"));
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const auto h = said(texts[i], "s" + std::to_string(i));
    REQUIRE(state_of(h) == z);
    pool.add(h, z, nlu());
  }
  REQUIRE(pool.bucket_size(z) == 4);
  Rng rng(2);
  std::map<std::string, int> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[sample_history(pool, z, rng).session_id()];
  for (const auto& [id, c] : counts) CHECK(std::abs(static_cast<double>(c) / n - 0.25) < 0.01);
}

TEST_CASE("empty buckets fall back to the same dialogue act first") {
  HistoryPool pool;
  const auto love = said("i love movies", "a");
  const auto bye = said("goodbye", "b");
  const auto zl = state_of(love), zb = state_of(bye);
  REQUIRE(zl.act == DialogueAct::Statement);
  REQUIRE(zl.sentiment == Sentiment::Positive);
  REQUIRE(zb.act == DialogueAct::Goodbye);
  REQUIRE(zb.sentiment != Sentiment::Positive);
  pool.add(love, zl, nlu());
  pool.add(bye, zb, nlu());

  auto same_act = zl;
  same_act.sentiment = Sentiment::Negative;
  same_act.is_generic = !zl.is_generic;
  AbstractState realized;
  Rng rng(3);
  CHECK(pool.sample(same_act, rng, &realized) == love);
  CHECK(realized == zl);

  auto goodbye_positive = zb;
  goodbye_positive.sentiment = Sentiment::Positive;
  CHECK(pool.resolve(goodbye_positive) == zb);

  // No Greeting bucket: nearest by component mismatches, which is the Statement bucket.
  CHECK(pool.resolve(make_state(DialogueAct::Greeting, zl.sentiment, zl.is_generic)) == zl);
}

TEST_CASE("pool construction rejects inconsistent entries") {
  HistoryPool pool;
  CHECK_THROWS_AS(pool.add(said("i love movies", "a"), make_state(DialogueAct::Goodbye, Sentiment::Neutral, false), nlu()),
                  Error);
  auto ends_with_system = said("hi", "a");
  ends_with_system.push(Speaker::System, "hello");
  CHECK_THROWS_AS(pool.add(ends_with_system, state_of(said("hi", "a")), nlu()), Error);
  Rng rng(0);
  CHECK_THROWS_AS(pool.sample(AbstractState{}, rng), Error);
  CHECK_THROWS_AS(pool.sample_initial_state(rng), Error);
}

TEST_CASE("pools hold every user-ending prefix in its own bucket") {
  const auto h = chorus::test::history_of({{Speaker::User, "hello"},
                                           {Speaker::System, "hi there"},
                                           {Speaker::User, "i love movies"},
                                           {Speaker::System, "me too"},
                                           {Speaker::User, "goodbye"}},
                                          "p");
  const auto pool = HistoryPool::build({h}, nlu(), PoolSplit::Train);
  CHECK(pool.size() == 3);
  for (std::size_t i = 0; i < AbstractState::kCount; ++i) {
    const auto z = AbstractState::from_index(i);
    for (const auto& stored : pool.bucket(z)) {
      CHECK(stored.ends_with_user());
      CHECK(state_of(stored) == z);
    }
  }
}

TEST_CASE("train and eval pools are disjoint by session") {
  const auto& f = mdp_fixture();
  CHECK(f.train_pool->size() > 0);
  CHECK(f.eval_pool->size() > 0);
  CHECK_NOTHROW(check_disjoint(*f.train_pool, *f.eval_pool));
  for (const auto& id : f.eval_pool->session_ids()) CHECK(is_eval_session(id, 0.2, 42));
  for (const auto& id : f.train_pool->session_ids()) CHECK_FALSE(is_eval_session(id, 0.2, 42));

  HistoryPool a, b;
  const auto h = said("i love movies", "shared");
  a.add(h, state_of(h), nlu());
  b.add(h, state_of(h), nlu());
  CHECK_THROWS_AS(check_disjoint(a, b), Error);
}

TEST_CASE("the uniform transition model has joint perplexity 60") {
  const auto m = TransitionModelParameters::uniform(3, 7);
  std::vector<TransitionExample> eval;
  for (std::size_t i = 0; i < AbstractState::kCount; ++i) eval.push_back(transition_to(AbstractState::from_index(i)));
  CHECK(joint_perplexity(m, eval) == doctest::Approx(60.0).epsilon(1e-12));
  const auto b = perplexity_breakdown(m, eval);
  CHECK(b.act == doctest::Approx(10.0));
  CHECK(b.sentiment == doctest::Approx(3.0));
  CHECK(b.generic == doctest::Approx(2.0));
}

TEST_CASE("perfect predictions have perplexity one") {
  auto m = TransitionModelParameters::uniform(3, 4);
  const auto z = make_state(DialogueAct::Request, Sentiment::Negative, true);
  force_class(m.act, static_cast<std::size_t>(z.act));
  force_class(m.sentiment, static_cast<std::size_t>(z.sentiment));
  force_class(m.generic, 1);
  std::vector<TransitionExample> eval(5, transition_to(z));
  CHECK(joint_perplexity(m, eval) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("joint perplexity on a hand fixture") {
  auto m = TransitionModelParameters::uniform(3, 4);
  fix_probs(m.act, std::array<double, 10>{0.3, 0.2, 0.1, 0.1, 0.1, 0.05, 0.05, 0.04, 0.03, 0.03});
  fix_probs(m.sentiment, std::array<double, 3>{0.2, 0.5, 0.3});
  fix_probs(m.generic, std::array<double, 2>{0.9, 0.1});
  const std::vector<TransitionExample> eval{
      transition_to(AbstractState::from_index(0 * 6 + 1 * 2 + 0)),  // .3 * .5 * .9 = .135
      transition_to(AbstractState::from_index(2 * 6 + 0 * 2 + 1)),  // .1 * .2 * .1 = .002
      transition_to(AbstractState::from_index(5 * 6 + 2 * 2 + 0)),  // .05 * .3 * .9 = .0135
  };
  // (.135 * .002 * .0135)^(-1/3)
  CHECK(std::abs(joint_perplexity(m, eval) - 64.97817196028589) < 1e-9);

  // Baseline fitted on the same three: acts and sentiments 1/3 each, generic 2/3 and 1/3.
  const auto base = ClassFrequencyBaseline::fit(eval);
  CHECK(std::abs(joint_perplexity(base, eval) - std::cbrt(729.0 * 27.0 / 4.0)) < 1e-9);
}

TEST_CASE("zero-probability targets are floored before the log") {
  auto m = TransitionModelParameters::uniform(3, 4);
  force_class(m.act, 0);
  force_class(m.sentiment, 0);
  force_class(m.generic, 0);
  const std::vector<TransitionExample> eval{transition_to(AbstractState::from_index(AbstractState::kCount - 1))};
  const double ppl = joint_perplexity(m, eval);
  CHECK(std::isfinite(ppl));
  CHECK(ppl == doctest::Approx(1e27).epsilon(1e-6));
}

TEST_CASE("head outputs are distributions") {
  Rng rng(4);
  const auto m = TransitionModelParameters::initialize(6, rng, 9);
  for (int i = 0; i < 100; ++i) {
    TransitionInput in;
    in.features = chorus::test::random_vector(6, rng, -3, 3);
    in.label = 1 + static_cast<int>(rng.index(5));
    in.state = AbstractState::from_index(rng.index(AbstractState::kCount));
    in.wh = rng.bernoulli(0.5);
    const auto d = m.predict(in);
    double sa = 0, ss = 0, sg = 0, joint = 0;
    for (double v : d.act) sa += v;
    for (double v : d.sentiment) ss += v;
    for (double v : d.generic) sg += v;
    for (std::size_t k = 0; k < AbstractState::kCount; ++k) joint += d.joint(AbstractState::from_index(k));
    CHECK(std::abs(sa - 1) < 1e-6);
    CHECK(std::abs(ss - 1) < 1e-6);
    CHECK(std::abs(sg - 1) < 1e-6);
    CHECK(std::abs(joint - 1) < 1e-6);
  }
}

TEST_CASE("transition input layout") {
  TransitionInput in;
  in.features = {0.5, -0.5};
  in.label = 4;
  in.state = make_state(DialogueAct::Request, Sentiment::Positive, true);
  in.wh = true;
  const auto x = transition_input_vector(in);
  REQUIRE(x.size() == 2 + 5 + 10 + 3 + 2);
  std::vector<double> expected(x.size(), 0.0);
  expected[0] = 0.5;
  expected[1] = -0.5;
  expected[2 + 3] = 1.0;
  expected[7 + static_cast<std::size_t>(DialogueAct::Request)] = 1.0;
  expected[17 + 2] = 1.0;
  expected[20] = 1.0;
  expected[21] = 1.0;
  CHECK(x == expected);
  in.label = 0;
  CHECK_THROWS_AS(transition_input_vector(in), Error);
}

TEST_CASE("a deterministic act transition is learned almost perfectly") {
  Rng rng(5);
  auto make = [&](std::size_t n) {
    std::vector<TransitionExample> out;
    for (std::size_t i = 0; i < n; ++i) {
      TransitionExample ex;
      ex.input.features = chorus::test::random_vector(4, rng);
      ex.input.label = 1 + static_cast<int>(rng.index(5));
      ex.input.state = AbstractState::from_index(rng.index(AbstractState::kCount));
      ex.next = AbstractState::from_index(rng.index(AbstractState::kCount));
      ex.next.act = static_cast<DialogueAct>((static_cast<std::size_t>(ex.input.state.act) + 3) % kNumActs);
      out.push_back(ex);
    }
    return out;
  };
  const auto train = make(2000);
  const auto held_out = make(500);
  TransitionTrainConfig cfg;
  cfg.max_epochs = 60;
  cfg.patience = 60;
  cfg.learning_rate = 0.2;
  TransitionTrainReport rep;
  const auto m = train_transition_model(train, cfg, &rep);
  const auto b = perplexity_breakdown(m, held_out);
  CHECK(b.act < 1.1);
  CHECK(b.sentiment == doctest::Approx(3.0).epsilon(0.05));
  CHECK(b.generic == doctest::Approx(2.0).epsilon(0.05));
  CHECK(rep.eval_perplexity < rep.baseline_perplexity);
  CHECK(rep.train_size == 1400);
  CHECK(rep.eval_size == 600);
}

TEST_CASE("a single-class target collapses the head onto it") {
  Rng rng(6);
  std::vector<TransitionExample> data;
  for (int i = 0; i < 200; ++i) {
    auto ex = transition_to(make_state(DialogueAct::Other, Sentiment::Neutral, false), 3);
    ex.input.features = chorus::test::random_vector(3, rng);
    data.push_back(ex);
  }
  TransitionTrainConfig cfg;
  cfg.max_epochs = 30;
  const auto m = train_transition_model(data, cfg);
  CHECK(perplexity_breakdown(m, data).joint < 1.2);
}

TEST_CASE("the trained transition model beats the class-frequency baseline") {
  const auto& r = mdp_fixture().transition_report;
  MESSAGE("transitions " << mdp_fixture().transitions.size() << ", perplexity " << r.eval_perplexity << " vs baseline "
                         << r.baseline_perplexity);
  CHECK(r.eval_perplexity < r.baseline_perplexity);
  CHECK(r.eval_perplexity < r.initial_perplexity);
}

TEST_CASE("transition models round-trip") {
  Rng rng(7);
  auto m = TransitionModelParameters::initialize(4, rng, 5);
  m.layout_fingerprint = "fp";
  const auto path = chorus::test::scratch_dir("transition_io") / "t.json";
  save_transition_model(m, path);
  const auto back = load_transition_model(path);
  CHECK(back.act.w1 == m.act.w1);
  CHECK(back.act.b2 == m.act.b2);
  CHECK(back.sentiment.w2 == m.sentiment.w2);
  CHECK(back.generic.b1 == m.generic.b1);
  CHECK(back.layout_fingerprint == "fp");
  CHECK_THROWS_AS(load_transition_model(path.parent_path() / "none.json"), Error);
}

TEST_CASE("simulated steps stay consistent with their buckets") {
  const auto& f = mdp_fixture();
  const auto& mdp = *f.mdp;
  const RandomPolicy agent;
  Rng rng(8);
  auto z = mdp.initial_state(rng);
  std::size_t t = 0, consistent = 0;
  const std::size_t steps = 1000;
  for (std::size_t i = 0; i < steps; ++i) {
    const auto s = mdp.step(z, agent, rng);
    consistent += state_of(s.h_t) == s.z_t;
    CHECK(s.r_t >= -2.0);
    CHECK(s.r_t <= 2.0);
    CHECK(s.y_t >= 1);
    CHECK(s.y_t <= 5);
    const auto cands = mdp.ensemble().generate(s.h_t);
    if (const auto p = cands.first_priority()) {
      CHECK(s.was_priority);
      CHECK(s.action_index == *p);
    }
    CHECK(cands[s.action_index] == s.a_t);
    ++t;
    if (mdp.is_terminal(s.z_next, t)) {
      z = mdp.initial_state(rng);
      t = 0;
    } else {
      z = s.z_next;
    }
  }
  CHECK(consistent == steps);
}

TEST_CASE("steps are reproducible under a fixed seed") {
  const auto& mdp = *mdp_fixture().mdp;
  const RandomPolicy agent;
  auto run = [&] {
    Rng rng(9);
    std::vector<MdpStep> out;
    auto z = mdp.initial_state(rng);
    for (int i = 0; i < 100; ++i) {
      out.push_back(mdp.step(z, agent, rng));
      z = out.back().z_next;
    }
    return out;
  };
  const auto a = run(), b = run();
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].z_t == b[i].z_t);
    CHECK(a[i].h_t == b[i].h_t);
    CHECK(a[i].action_index == b[i].action_index);
    CHECK(a[i].r_t == b[i].r_t);
    CHECK(a[i].y_t == b[i].y_t);
    CHECK(a[i].z_next == b[i].z_next);
  }
}

TEST_CASE("a scripted scorer and deterministic heads fix reward and next state") {
  const auto& f = mdp_fixture();
  const auto& comp = components();
  const auto d = comp.extractor->layout()->dimension();
  auto scorer = ScoringNetParameters::zeros(d, 3, 2);
  scorer.bs << 0, 0, 0, 0, 800;
  scorer.freeze_output();
  auto transition = TransitionModelParameters::uniform(d, 3);
  const auto target = make_state(DialogueAct::Request, Sentiment::Negative, true);
  force_class(transition.act, static_cast<std::size_t>(target.act));
  force_class(transition.sentiment, static_cast<std::size_t>(target.sentiment));
  force_class(transition.generic, 1);
  MdpConfig cfg;
  cfg.smoothing = 0.0;
  const DiscourseMdp mdp(f.train_pool, comp.ensemble, comp.extractor,
                         std::make_shared<const ScoringNetParameters>(scorer),
                         std::make_shared<const TransitionModelParameters>(transition), cfg);
  const RandomPolicy agent;
  Rng rng(10);
  auto z = mdp.initial_state(rng);
  for (int i = 0; i < 100; ++i) {
    const auto s = mdp.step(z, agent, rng);
    CHECK(s.r_t == 2.0);
    CHECK(s.y_t == 5);
    CHECK(s.z_next == target);
    z = s.z_next;
  }
}

TEST_CASE("episodes end on goodbye or at the turn cap") {
  const auto& mdp = *mdp_fixture().mdp;
  CHECK(mdp.config().max_turns == 40);
  CHECK(mdp.is_terminal(make_state(DialogueAct::Goodbye, Sentiment::Neutral, false), 1));
  CHECK_FALSE(mdp.is_terminal(make_state(DialogueAct::Statement, Sentiment::Neutral, false), 39));
  CHECK(mdp.is_terminal(make_state(DialogueAct::Statement, Sentiment::Neutral, false), 40));
}

TEST_CASE("the simulator checks component shapes") {
  const auto& f = mdp_fixture();
  const auto& comp = components();
  auto small = std::make_shared<const ScoringNetParameters>(ScoringNetParameters::zeros(4, 2, 2));
  CHECK_THROWS_AS(DiscourseMdp(f.train_pool, comp.ensemble, comp.extractor, small, f.transition), Error);
  auto empty = std::make_shared<const HistoryPool>();
  CHECK_THROWS_AS(DiscourseMdp(empty, comp.ensemble, comp.extractor, f.setup.scorer, f.transition), Error);
}
