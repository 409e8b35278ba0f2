#include <doctest.h>

#include <cmath>
#include <set>

#include "chorus/error.hpp"
#include "support.hpp"

using namespace chorus;
using chorus::test::components;
using chorus::test::user_says;

namespace {

const NluResources& nlu() { return *components().nlu; }
const FeatureExtractor& extractor() { return *components().extractor; }

std::vector<double> segment_of(const PolicyFeatureVector& v, std::string_view name) {
  const auto& s = v.layout->segment(name);
  return {v.values.begin() + static_cast<std::ptrdiff_t>(s.offset),
          v.values.begin() + static_cast<std::ptrdiff_t>(s.offset + s.length)};
}

std::string random_text(Rng& rng) {
  static const std::vector<std::string> pieces = {
      "the", "of", "and", "movie", "love", "hate", "not", "very", "what", "why", "bye", "hello", "é", "日本",
      "🙂", "?", "!", ",", "  ", "\t", "star", "wars", "politics", "president", "robot", "\xc3\xa9t\xc3\xa9", "42"};
  std::string s;
  const auto n = rng.index(12);
  for (std::size_t i = 0; i < n; ++i) s += pieces[rng.index(pieces.size())] + (rng.bernoulli(0.7) ? " " : "");
  return s;
}

}  // namespace

TEST_CASE("abstract state space has 60 values and round-trips through its index") {
  CHECK(AbstractState::kCount == 60);
  std::set<std::size_t> seen;
  for (std::size_t i = 0; i < AbstractState::kCount; ++i) {
    const auto z = AbstractState::from_index(i);
    CHECK(z.index() == i);
    seen.insert(z.index());
  }
  CHECK(seen.size() == 60);
}

TEST_CASE("stop-word utterances are generic") {
  const auto z = classify_abstract_state(nlu(), user_says("the of and"));
  CHECK(z.is_generic);
  CHECK_FALSE(classify_abstract_state(nlu(), user_says("the movie")).is_generic);
}

TEST_CASE("goodbye is classified as Goodbye") {
  CHECK(classify_abstract_state(nlu(), user_says("goodbye")).act == DialogueAct::Goodbye);
  CHECK(classify_act(nlu(), "ok bye now") == DialogueAct::Goodbye);
}

TEST_CASE("act rules follow the shipped table") {
  CHECK(classify_act(nlu(), "hello there") == DialogueAct::Greeting);
  CHECK(classify_act(nlu(), "yes please") == DialogueAct::Accept);
  CHECK(classify_act(nlu(), "no") == DialogueAct::Reject);
  CHECK(classify_act(nlu(), "what is your name") == DialogueAct::PersonalQuestion);
  CHECK(classify_act(nlu(), "what is a black hole") == DialogueAct::GenericQuestion);
  CHECK(classify_act(nlu(), "tell me a story") == DialogueAct::Request);
  CHECK(classify_act(nlu(), "what do you think about the president") == DialogueAct::Politics);
  CHECK(classify_act(nlu(), "i watched a film") == DialogueAct::Statement);
  CHECK(classify_act(nlu(), "hmm") == DialogueAct::Other);
  CHECK(classify_act(nlu(), "") == DialogueAct::Other);
}

TEST_CASE("sentiment uses the lexicons") {
  CHECK(classify_sentiment(nlu(), "i love this") == Sentiment::Positive);
  CHECK(classify_sentiment(nlu(), "i hate this") == Sentiment::Negative);
  CHECK(classify_sentiment(nlu(), "i do not love this") == Sentiment::Negative);
  CHECK(classify_sentiment(nlu(), "the table") == Sentiment::Neutral);
  CHECK(classify_abstract_state(nlu(), user_says("i love this")).sentiment == Sentiment::Positive);
}

TEST_CASE("the abstract state comes from the last user utterance") {
  const auto h = chorus::test::history_of(
      {{Speaker::User, "goodbye"}, {Speaker::System, "wait"}, {Speaker::User, "i love movies"}, {Speaker::System, "ok"}});
  const auto z = classify_abstract_state(nlu(), h);
  CHECK(z.act == DialogueAct::Statement);
  CHECK(z.sentiment == Sentiment::Positive);
}

TEST_CASE("classification is a pure function") {
  Rng rng(3);
  std::vector<std::string> texts;
  for (int i = 0; i < 10000; ++i) texts.push_back(random_text(rng));
  std::vector<std::size_t> first;
  for (const auto& t : texts) first.push_back(classify_abstract_state(nlu(), user_says(has_content(t) ? t : "x")).index());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    CHECK(classify_abstract_state(nlu(), user_says(has_content(texts[i]) ? texts[i] : "x")).index() == first[i]);
  }
}

TEST_CASE("policy feature layout") {
  const auto& layout = *extractor().layout();
  const std::size_t e = 50, k = components().ensemble->size();
  CHECK(k == 12);
  CHECK(layout.embedding_dim() == e);
  CHECK(layout.dimension() == 3 * e + 3 + k + 10 * k + 1 + 1 + 1 + 2 + 2 + 1 + 1);
  std::size_t total = 0;
  for (const auto& s : layout.segments()) {
    CHECK(s.offset == total);
    total += s.length;
  }
  CHECK(total == layout.dimension());
  const FeatureLayout again(e, k);
  CHECK(again.fingerprint() == layout.fingerprint());
  CHECK(FeatureLayout(e, k + 1).fingerprint() != layout.fingerprint());
}

TEST_CASE("unknown response tokens give a zero response embedding") {
  const auto v = extractor().policy_features(user_says("tell me about movies"), {"alicebot", "zzqx wvvk", false});
  for (double x : segment_of(v, "response_embedding")) CHECK(x == 0.0);
}

TEST_CASE("model one-hot marks the candidate's model") {
  const auto& names = extractor().model_names();
  const auto v = extractor().policy_features(user_says("hi"), {names[2], "hello", false});
  const auto onehot = segment_of(v, "model");
  for (std::size_t i = 0; i < onehot.size(); ++i) CHECK(onehot[i] == (i == 2 ? 1.0 : 0.0));
  const auto axm = segment_of(v, "act_x_model");
  const auto act = static_cast<std::size_t>(classify_act(nlu(), "hi"));
  for (std::size_t i = 0; i < axm.size(); ++i) CHECK(axm[i] == (i == act * names.size() + 2 ? 1.0 : 0.0));
}

TEST_CASE("bigram overlap") {
  // Oracle: does any adjacent token pair of the response occur adjacently in the user utterance?
  const auto oracle = [](const std::string& resp, const std::string& user) {
    const auto r = tokenize(resp), u = tokenize(user);
    for (std::size_t i = 0; i + 1 < r.size(); ++i) {
      for (std::size_t j = 0; j + 1 < u.size(); ++j) {
        if (r[i] == u[j] && r[i + 1] == u[j + 1]) return 1.0;
      }
    }
    return 0.0;
  };
  const std::vector<std::pair<std::string, std::string>> cases = {
      {"i love star wars too", "have you seen star wars"},
      {"stars and wars", "have you seen star wars"},
      {"wars star", "star wars"},
      {"Star Wars!", "star wars"},
  };
  for (const auto& [resp, user] : cases) {
    const auto v = extractor().policy_features(user_says(user), {"alicebot", resp, false});
    CHECK(segment_of(v, "bigram_overlap")[0] == oracle(resp, user));
  }
  CHECK(oracle("i love star wars too", "have you seen star wars") == 1.0);
}

TEST_CASE("policy features are finite and similarities bounded on random input") {
  Rng rng(17);
  const auto& names = extractor().model_names();
  for (int i = 0; i < 2000; ++i) {
    DialogueHistory h("r");
    const auto turns = 1 + rng.index(5);
    for (std::size_t t = 0; t < turns; ++t) {
      auto text = random_text(rng);
      if (!has_content(text)) text = "x";
      h.push(t % 2 ? Speaker::System : Speaker::User, text);
    }
    if (!h.ends_with_user()) h.push(Speaker::User, "ok");
    auto resp = random_text(rng);
    if (!has_content(resp)) resp = "y";
    const auto v = extractor().policy_features(h, {names[rng.index(names.size())], resp, false});
    REQUIRE(v.values.size() == extractor().layout()->dimension());
    for (double x : v.values) CHECK(std::isfinite(x));
    for (double s : segment_of(v, "embedding_similarity")) {
      CHECK(s >= -1.0 - 1e-12);
      CHECK(s <= 1.0 + 1e-12);
    }
    std::array<double, 5> probs{0.1, 0.2, 0.3, 0.2, 0.2};
    const auto r = extractor().reward_features(h, {names[0], resp, false}, probs, false);
    for (double x : r.values) CHECK(std::isfinite(x));
  }
}

TEST_CASE("reward features for a priority candidate") {
  const std::array<double, 5> probs{0.1, 0.2, 0.4, 0.2, 0.1};
  const auto r = extractor().reward_features(user_says("what is your name"),
                                             {"identity", "I am Chorus, an open-domain socialbot", true}, probs, true);
  for (std::size_t i = 0; i < 5; ++i) CHECK(r.values[reward_feature::kClassProbs + i] == 0.0);
  CHECK(r.values[reward_feature::kPriority] == 1.0);
}

TEST_CASE("reward features: class probabilities, generic bit and lengths") {
  const std::array<double, 5> probs{0.1, 0.2, 0.4, 0.2, 0.1};
  const auto h = user_says("tell me something");
  const auto generic = extractor().reward_features(h, {"alicebot", "the and of", false}, probs, false);
  CHECK(generic.values[reward_feature::kGenericResponse] == 1.0);
  double sum = 0;
  for (std::size_t i = 0; i < 5; ++i) sum += generic.values[reward_feature::kClassProbs + i];
  CHECK(sum <= 1.0 + 1e-12);
  CHECK(generic.values[reward_feature::kPriority] == 0.0);

  const auto nine = extractor().reward_features(h, {"alicebot", "one two three four five six seven eight nine", false},
                                                probs, false);
  CHECK(nine.values[reward_feature::kResponseLength] == 9.0);
  CHECK(nine.values[reward_feature::kResponseLength + 1] == 3.0);
  CHECK(nine.values[reward_feature::kGenericResponse] == 0.0);

  CHECK(kRewardFeatureDim == 23);
  CHECK(reward_feature::kDialogueLength + 3 == kRewardFeatureDim);
}

TEST_CASE("reward features: dialogue length and user segments") {
  const std::array<double, 5> probs{0.2, 0.2, 0.2, 0.2, 0.2};
  const auto h = chorus::test::history_of({{Speaker::User, "hi"},
                                           {Speaker::System, "hello"},
                                           {Speaker::User, "i hate this"},
                                           {Speaker::System, "sorry"},
                                           {Speaker::User, "huh what"}});
  const auto r = extractor().reward_features(h, {"alicebot", "let me explain", false}, probs, false);
  const double t = r.values[reward_feature::kDialogueLength];
  CHECK(t > 0);
  CHECK(r.values[reward_feature::kDialogueLength + 1] == doctest::Approx(std::sqrt(t)));
  CHECK(r.values[reward_feature::kDialogueLength + 2] == doctest::Approx(std::log1p(t)));
  CHECK(r.values[reward_feature::kUserLength] == 2.0);
  CHECK(r.values[reward_feature::kUserLength + 1] == doctest::Approx(std::sqrt(2.0)));
  CHECK(r.values[reward_feature::kConfusion] == 1.0);
  double sentiment = 0;
  for (std::size_t i = 0; i < 3; ++i) sentiment += r.values[reward_feature::kSentiment + i];
  CHECK(sentiment == 1.0);
}

TEST_CASE("reward features reject class probabilities that do not sum to one") {
  const std::array<double, 5> bad{0.2, 0.2, 0.2, 0.2, 0.3};
  CHECK_THROWS_AS(extractor().reward_features(user_says("hi"), {"alicebot", "hello", false}, bad, false), Error);
}

TEST_CASE("embedding lookup is total") {
  const auto& comp = components();
  CHECK(comp.embeddings->dimension() == 50);
  const auto m = comp.embeddings->mean({"zzzz", "qqqq"});
  CHECK(m.size() == 50);
  for (double x : m) CHECK(x == 0.0);
  CHECK(comp.embeddings->find("zzzz") == nullptr);
  CHECK(cosine({1, 0}, {0, 0}) == 0.0);
  CHECK(cosine({1, 2}, {2, 4}) == doctest::Approx(1.0));
}

TEST_CASE("wh-word detection") {
  CHECK(extractor().user_has_wh(user_says("why is the sky blue")));
  CHECK_FALSE(extractor().user_has_wh(user_says("the sky is blue")));
}
