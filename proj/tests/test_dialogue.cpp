#include <doctest.h>

#include <fstream>

#include "chorus/error.hpp"
#include "chorus/policy.hpp"
#include "support.hpp"

using namespace chorus;
using chorus::test::components;
using chorus::test::user_says;

TEST_CASE("append_turn grows the history and keeps earlier entries") {
  DialogueHistory h("s1");
  h = append_turn(h, {Speaker::User, "hi", 0});
  CHECK(h.size() == 1);
  h = append_turn(h, {Speaker::System, "hello there", 1});
  h = append_turn(h, {Speaker::User, "how are you", 2});
  const auto before = std::vector<Utterance>(h.utterances().begin(), h.utterances().end());
  const auto longer = append_turn(h, {Speaker::System, "fine", 3});
  REQUIRE(longer.size() == 4);
  for (std::size_t i = 0; i < 3; ++i) CHECK(longer[i] == before[i]);
  CHECK(longer.session_id() == "s1");
}

TEST_CASE("append_turn rejects blank text and wrong turn indices") {
  DialogueHistory h("s");
  CHECK_THROWS_AS(append_turn(h, {Speaker::User, "   \t ", 0}), Error);
  CHECK_THROWS_AS(append_turn(h, {Speaker::User, "", 0}), Error);
  CHECK_THROWS_AS(append_turn(h, {Speaker::User, "hi", 3}), Error);
}

TEST_CASE("speakers may repeat") {
  DialogueHistory h("s");
  h.push(Speaker::User, "hi");
  h.push(Speaker::User, "are you there");
  CHECK(h.size() == 2);
  CHECK(h.last_user_text() == "are you there");
  CHECK(h[1].turn_index == 1);
}

TEST_CASE("the name question gets the priority identity answer") {
  const auto& comp = components();
  Rng rng(1);
  RandomPolicy policy;
  const auto sel = select_response(user_says("what is your name"), *comp.ensemble, policy, rng);
  CHECK(sel.response.text == "I am Chorus, an open-domain socialbot");
  CHECK(sel.response.priority);
  CHECK(sel.turn.was_priority);
  CHECK(sel.turn.behavior_prob == 1.0);
}

TEST_CASE("age and location questions are priority questions") {
  const auto& comp = components();
  for (const char* q : {"how old are you", "where are you from", "Where do you live?"}) {
    const auto set = comp.ensemble->generate(user_says(q));
    CHECK_MESSAGE(set.first_priority().has_value(), q);
  }
}

TEST_CASE("a single non-priority candidate is chosen with probability one") {
  CandidateSet set;
  set.candidates = {{"fallback", "tell me more", false}};
  Rng rng(3);
  RandomPolicy policy;
  const auto sel = select_from(user_says("hmm"), set, policy, {}, rng);
  CHECK(sel.turn.chosen_index == 0);
  CHECK(sel.turn.behavior_prob == 1.0);
  CHECK_FALSE(sel.turn.was_priority);
}

namespace {

std::filesystem::path write_rules(const std::filesystem::path& dir, const std::string& name, const std::string& rules) {
  const auto p = dir / name;
  std::ofstream(p) << rules;
  return p;
}

}  // namespace

TEST_CASE("two priority candidates resolve by registry order") {
  const auto dir = chorus::test::scratch_dir("registry_order");
  const auto a = write_rules(dir, "a.tsv", "hello*\tfrom a\t1\n");
  const auto b = write_rules(dir, "b.tsv", "hello*\tfrom b\t1\n");
  for (const bool a_first : {true, false}) {
    std::vector<ResponseModelSpec> reg;
    ResponseModelSpec sa{"model_a", ModelKind::Template, std::nullopt, a};
    ResponseModelSpec sb{"model_b", ModelKind::Template, std::nullopt, b};
    if (a_first) reg = {sa, sb};
    else reg = {sb, sa};
    reg.push_back({"fallback", ModelKind::Fallback, std::nullopt, std::nullopt});
    const ResponseEnsemble ensemble(reg);
    Rng rng(0);
    RandomPolicy policy;
    const auto sel = select_response(user_says("hello there"), ensemble, policy, rng);
    CHECK(sel.response.text == (a_first ? "from a" : "from b"));
  }
}

TEST_CASE("priority dominance over random candidate sets") {
  Rng gen(11);
  RandomPolicy random;
  PreferencePolicy alice("alicebot", {"alicebot"});
  for (int trial = 0; trial < 500; ++trial) {
    CandidateSet set;
    const auto k = 1 + gen.index(8);
    for (std::size_t i = 0; i < k; ++i) {
      set.candidates.push_back({i % 2 ? "alicebot" : "m" + std::to_string(i), "r" + std::to_string(i), false});
    }
    const auto first = gen.index(k);
    set.candidates[first].priority = true;
    if (gen.bernoulli(0.5)) set.candidates[gen.index(k)].priority = true;
    for (const SelectionPolicy* p : {static_cast<const SelectionPolicy*>(&random), static_cast<const SelectionPolicy*>(&alice)}) {
      Rng rng(trial);
      const auto sel = select_from(user_says("x"), set, *p, {}, rng);
      CHECK(sel.response.priority);
      CHECK(sel.turn.chosen_index == *set.first_priority());
      CHECK(sel.turn.behavior_prob == 1.0);
    }
  }
}

TEST_CASE("select_response is reproducible and logs the policy's own probability") {
  const auto& comp = components();
  Rng init(5);
  auto params = std::make_shared<const ScoringNetParameters>(
      ScoringNetParameters::initialize(comp.extractor->layout()->dimension(), init, 16, 8));
  NetPolicy policy("stoch", params, comp.extractor, NetPolicy::Mode::Stochastic, 0.5);
  const auto h = chorus::test::history_of(
      {{Speaker::User, "hi"}, {Speaker::System, "hello"}, {Speaker::User, "tell me about movies"}});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r1(seed), r2(seed);
    const auto a = select_response(h, *comp.ensemble, policy, r1);
    const auto b = select_response(h, *comp.ensemble, policy, r2);
    CHECK(a.turn == b.turn);
    if (a.turn.was_priority) continue;
    const auto scores = policy.scores(h, a.turn.candidates, {});
    const auto probs = softmax_probabilities(scores, 0.5);
    CHECK(a.turn.behavior_prob == doctest::Approx(probs[a.turn.chosen_index]).epsilon(1e-12));
  }
}

TEST_CASE("the ensemble always includes the fallback and never exceeds the registry") {
  const auto& comp = components();
  Rng gen(2);
  const std::vector<std::string> words = {"movie", "the", "pasta", "hello", "why", "é", "42", "?", "bye", "robot"};
  for (int i = 0; i < 300; ++i) {
    std::string text;
    const auto n = 1 + gen.index(6);
    for (std::size_t k = 0; k < n; ++k) text += words[gen.index(words.size())] + " ";
    const auto set = comp.ensemble->generate(user_says(text));
    CHECK(set.size() >= 1);
    CHECK(set.size() <= comp.ensemble->size());
    bool fallback = false;
    for (const auto& c : set.candidates) {
      fallback |= c.model_name == "fallback";
      CHECK(has_content(c.text));
      CHECK(comp.ensemble->model_index(c.model_name).has_value());
    }
    CHECK(fallback);
  }
}

TEST_CASE("the pets rule fires for a pets question") {
  const auto set = components().ensemble->generate(user_says("do you have pets"));
  bool found = false;
  for (const auto& c : set.candidates) found |= c.text == "I do not have pets , but I would love a robot dog .";
  CHECK(found);
}

TEST_CASE("ensemble generation is deterministic") {
  const auto& comp = components();
  const auto h = user_says("tell me a fact about space");
  CHECK(comp.ensemble->generate(h) == comp.ensemble->generate(h));
}

TEST_CASE("template matching ignores case and spacing") {
  const Pattern p("*what is your name*");
  Rng gen(9);
  const std::string base = "so what is your name then";
  for (int i = 0; i < 200; ++i) {
    std::string s;
    for (char c : base) {
      if (c == ' ') s += std::string(1 + gen.index(3), gen.bernoulli(0.5) ? ' ' : '\t');
      else s += gen.bernoulli(0.5) ? static_cast<char>(std::toupper(c)) : c;
    }
    CHECK(p.matches(normalize(s)));
  }
  CHECK_FALSE(Pattern("*name*").matches(normalize("my username")));
  CHECK(Pattern("*").matches(normalize("anything")));
  CHECK(Pattern("hi*").matches("hi there"));
  CHECK_FALSE(Pattern("hi*").matches("oh hi"));
}

TEST_CASE("tokenize lowercases and splits on punctuation") {
  CHECK(tokenize("Hello, World! It's") == std::vector<std::string>{"hello", "world", "it", "s"});
  CHECK(tokenize("  ").empty());
  CHECK(tokenize("café au lait") == std::vector<std::string>{"café", "au", "lait"});
}

namespace {

RetrievalCorpus toy_corpus() {
  return RetrievalCorpus({{"star wars movie", "r0"}, {"star trek show", "r1"}, {"cooking pasta recipe", "r2"}});
}

}  // namespace

TEST_CASE("retrieval matches hand-computed TF-IDF cosines") {
  // Query "star wars": idf(star) = ln(3/2), idf(other) = ln 3; every tf is 1 so ln 2 cancels.
  const double a2 = std::pow(std::log(1.5), 2), b2 = std::pow(std::log(3.0), 2);
  const double norm_q = std::sqrt(a2 + b2);
  const double cos0 = (a2 + b2) / (norm_q * std::sqrt(a2 + 2 * b2));
  const double cos1 = a2 / (norm_q * std::sqrt(a2 + 2 * b2));
  const auto hits = toy_corpus().retrieve("star wars", 5);
  REQUIRE(hits.size() == 2);
  CHECK(hits[0].entry == 0);
  CHECK(hits[0].score == doctest::Approx(cos0).epsilon(1e-12));
  CHECK(hits[1].entry == 1);
  CHECK(hits[1].score == doctest::Approx(cos1).epsilon(1e-12));
}

TEST_CASE("retrieval of an exact context scores one") {
  const auto hits = toy_corpus().retrieve("Cooking pasta recipe!", 1);
  REQUIRE(hits.size() == 1);
  CHECK(hits[0].response == "r2");
  CHECK(std::abs(hits[0].score - 1.0) < 1e-9);
}

TEST_CASE("retrieval with no shared tokens is empty") {
  CHECK(toy_corpus().retrieve("quantum physics", 3).empty());
  CHECK(retrieve_response(user_says("zebra"), toy_corpus(), 2).empty());
}

TEST_CASE("retrieval scores are bounded and non-increasing") {
  const auto corpus = RetrievalCorpus::load(chorus::test::data_dir() / "models" / "movies.jsonl");
  for (const char* q : {"what is your favorite movie", "tell me about the director", "films actors"}) {
    const auto hits = corpus.retrieve(q, 10);
    for (std::size_t i = 0; i < hits.size(); ++i) {
      CHECK(hits[i].score > 0.0);
      CHECK(hits[i].score <= 1.0);
      if (i > 0) CHECK(hits[i].score <= hits[i - 1].score);
    }
  }
}

TEST_CASE("duplicating a non-matching entry keeps the ranking of matches") {
  auto base = toy_corpus().retrieve("star wars", 5);
  RetrievalCorpus dup({{"star wars movie", "r0"},
                       {"star trek show", "r1"},
                       {"cooking pasta recipe", "r2"},
                       {"cooking pasta recipe", "r2"}});
  const auto hits = dup.retrieve("star wars", 5);
  REQUIRE(hits.size() == base.size());
  for (std::size_t i = 0; i < hits.size(); ++i) CHECK(hits[i].entry == base[i].entry);
  CHECK(dup.document_frequency("cooking") == 2);
}

TEST_CASE("registry validation") {
  CHECK_THROWS_AS(ResponseEnsemble(std::vector<ResponseModelSpec>{}), Error);
  std::vector<ResponseModelSpec> no_fallback = {{"t", ModelKind::Template, std::nullopt, std::nullopt}};
  CHECK_THROWS_AS(ResponseEnsemble{no_fallback}, Error);
  std::vector<ResponseModelSpec> retrieval_without_corpus = {
      {"r", ModelKind::Retrieval, std::nullopt, std::nullopt},
      {"fallback", ModelKind::Fallback, std::nullopt, std::nullopt}};
  CHECK_THROWS_AS(ResponseEnsemble{retrieval_without_corpus}, Error);
  std::vector<ResponseModelSpec> duplicate = {{"fallback", ModelKind::Fallback, std::nullopt, std::nullopt},
                                              {"fallback", ModelKind::Fallback, std::nullopt, std::nullopt}};
  CHECK_THROWS_AS(ResponseEnsemble{duplicate}, Error);
}

TEST_CASE("the initiator advances through its questions") {
  const auto& comp = components();
  const auto idx = comp.ensemble->model_index("initiatorbot");
  REQUIRE(idx);
  std::set<std::string> seen;
  DialogueHistory h("init");
  for (int i = 0; i < 4; ++i) {
    h.push(Speaker::User, "ok");
    for (const auto& c : comp.ensemble->generate(h).candidates) {
      if (c.model_name == "initiatorbot") seen.insert(c.text);
    }
    h.push(Speaker::System, "sure");
  }
  CHECK(seen.size() > 1);
}
