#include "chorus/analysis.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "chorus/error.hpp"
#include "chorus/text.hpp"

namespace chorus {

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_variance(const std::vector<double>& v) {
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

std::size_t model_slot(const std::vector<std::string>& models, const std::string& name) {
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (models[i] == name) return i;
  }
  fail(ErrorKind::NotFound, "model '" + name + "' is not in the model list");
}

}  // namespace

PolicyEvalReport simulate_policy(const DiscourseMdp& mdp, const SelectionPolicy& policy, std::size_t n_episodes,
                                 Rng& rng) {
  require(n_episodes > 0, "simulate_policy: n_episodes must be positive");
  EpisodeRecorder rec;
  PolicyEvalReport report;
  report.policy_id = policy.id();
  for (std::size_t e = 0; e < n_episodes; ++e) {
    auto z = mdp.initial_state(rng);
    double ret = 0.0;
    std::size_t len = 0;
    while (true) {
      const auto s = mdp.step(z, policy, rng);
      rec.select(s.a_t.model_name);
      ret += s.r_t;
      ++len;
      if (mdp.is_terminal(s.z_next, len)) break;
      z = s.z_next;
    }
    rec.add(ret, len);
    report.episode_returns.push_back(ret);
    report.episode_lengths.push_back(len);
  }
  report.stats = rec.finish(mdp.ensemble().model_names());
  return report;
}

std::unique_ptr<SelectionPolicy> make_heuristic_policy(const std::string& id) {
  if (id == "random") return std::make_unique<RandomPolicy>();
  if (id == "alicebot") return std::make_unique<PreferencePolicy>(id, std::vector<std::string>{"alicebot"});
  if (id == "evibot_alicebot") {
    return std::make_unique<PreferencePolicy>(id, std::vector<std::string>{"evibot", "alicebot"});
  }
  fail(ErrorKind::NotFound, "unknown policy '" + id + "'");
}

void write_policy_reports_csv(const std::vector<PolicyEvalReport>& reports, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "policy,n_episodes,average_return,std_return,average_reward_per_step,std_reward_per_step,"
         "average_dialogue_length,std_dialogue_length\n";
  out.precision(10);
  for (const auto& r : reports) {
    const auto& s = r.stats;
    out << r.policy_id << ',' << s.episodes << ',' << s.average_return << ',' << s.std_return << ','
        << s.average_reward_per_step << ',' << s.std_reward_per_step << ',' << s.average_length << ','
        << s.std_length << '\n';
  }
}

void write_episodes_csv(const std::vector<PolicyEvalReport>& reports, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "policy,episode,return,length\n";
  out.precision(10);
  for (const auto& r : reports) {
    for (std::size_t i = 0; i < r.episode_returns.size(); ++i) {
      out << r.policy_id << ',' << i << ',' << r.episode_returns[i] << ',' << r.episode_lengths[i] << '\n';
    }
  }
}

std::string format_policy_reports(const std::vector<PolicyEvalReport>& reports) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(24) << "Policy" << std::setw(20) << "Average return" << std::setw(30)
     << "Average reward per time step" << "Average dialogue length\n";
  for (const auto& r : reports) {
    const auto& s = r.stats;
    std::ostringstream a, b, c;
    a << std::fixed << std::setprecision(2) << s.average_return << " ± " << s.std_return;
    b << std::fixed << std::setprecision(2) << s.average_reward_per_step << " ± " << s.std_reward_per_step;
    c << std::fixed << std::setprecision(2) << s.average_length << " ± " << s.std_length;
    os << std::setw(24) << r.policy_id << std::setw(20) << a.str() << std::setw(30) << b.str() << c.str() << '\n';
  }
  return os.str();
}

std::map<std::string, double> selection_frequencies(const SelectionPolicy& policy,
                                                    const std::vector<PolicyState>& states,
                                                    const std::vector<std::string>& models, Rng& rng) {
  require(!states.empty(), "selection_frequencies: no states");
  std::map<std::string, double> freq;
  for (const auto& m : models) freq[m] = 0.0;
  for (const auto& s : states) {
    const auto r = select_from(s.history, s.candidates, policy, s.features, rng);
    freq[r.response.model_name] += 1.0;
  }
  for (auto& [m, v] : freq) v /= static_cast<double>(states.size());
  return freq;
}

std::size_t ContingencyTable::total() const {
  std::size_t t = 0;
  for (const auto& row : counts) {
    for (auto c : row) t += c;
  }
  return t;
}

ContingencyTable contingency(const SelectionPolicy& a, const SelectionPolicy& b, const std::vector<PolicyState>& states,
                             const std::vector<std::string>& models, Rng& rng) {
  ContingencyTable t;
  t.row_policy = a.id();
  t.column_policy = b.id();
  t.models = models;
  t.counts.assign(models.size(), std::vector<std::size_t>(models.size(), 0));
  for (const auto& s : states) {
    const auto ra = select_from(s.history, s.candidates, a, s.features, rng);
    const auto rb = select_from(s.history, s.candidates, b, s.features, rng);
    ++t.counts[model_slot(models, ra.response.model_name)][model_slot(models, rb.response.model_name)];
  }
  return t;
}

void write_contingency_csv(const ContingencyTable& t, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << t.row_policy << '\\' << t.column_policy;
  for (const auto& m : t.models) out << ',' << m;
  out << '\n';
  for (std::size_t i = 0; i < t.models.size(); ++i) {
    out << t.models[i];
    for (auto c : t.counts[i]) out << ',' << c;
    out << '\n';
  }
}

double ci95_half_width(const std::vector<double>& values) {
  require(values.size() >= 2, "confidence interval needs at least two values");
  return 1.96 * std::sqrt(sample_variance(values)) / std::sqrt(static_cast<double>(values.size()));
}

WelchTest welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() >= 2 && b.size() >= 2, "Welch t-test needs at least two values per group");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double va = sample_variance(a) / na, vb = sample_variance(b) / nb;
  const double diff = mean_of(a) - mean_of(b);
  WelchTest w;
  if (va + vb == 0.0) {
    // Both groups constant: the difference is either exactly zero or certain.
    w.df = na + nb - 2.0;
    if (diff == 0.0) return w;
    w.t = diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    w.p_value = 0.0;
    w.significant = true;
    return w;
  }
  w.t = diff / std::sqrt(va + vb);
  w.df = (va + vb) * (va + vb) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
  const boost::math::students_t dist(w.df);
  w.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(w.t)));
  w.significant = std::abs(w.t) > boost::math::quantile(boost::math::complement(dist, 0.025));
  return w;
}

std::vector<DialogueRecord> drop_returning_users(const std::vector<DialogueRecord>& records) {
  std::set<std::string> seen;
  std::vector<DialogueRecord> out;
  for (const auto& r : records) {
    if (r.user_id && r.user_score) {
      if (!seen.insert(*r.user_id).second) continue;
    }
    out.push_back(r);
  }
  return out;
}

AbReport ab_statistics(const std::map<std::string, std::vector<DialogueRecord>>& groups, const NluResources& nlu) {
  AbReport report;
  std::vector<std::vector<double>> scores;
  for (const auto& [policy, records] : groups) {
    AbGroupStats g;
    g.policy_id = policy;
    std::vector<double> s, lengths, pos, neg;
    for (const auto& r : records) {
      if (!r.user_score) continue;
      s.push_back(*r.user_score);
      const auto n_user = r.dialogue.count(Speaker::User);
      lengths.push_back(static_cast<double>(n_user));
      double p = 0.0, q = 0.0;
      for (const auto& u : r.dialogue.utterances()) {
        if (u.speaker != Speaker::User) continue;
        const auto c = classify_sentiment(nlu, u.text);
        p += c == Sentiment::Positive;
        q += c == Sentiment::Negative;
      }
      pos.push_back(n_user ? 100.0 * p / static_cast<double>(n_user) : 0.0);
      neg.push_back(n_user ? 100.0 * q / static_cast<double>(n_user) : 0.0);
    }
    g.n = s.size();
    if (g.n > 0) {
      g.mean_score = mean_of(s);
      g.mean_length = mean_of(lengths);
      g.positive_pct = mean_of(pos);
      g.negative_pct = mean_of(neg);
    }
    if (g.n >= 2) {
      g.score_ci = ci95_half_width(s);
      g.length_ci = ci95_half_width(lengths);
    }
    report.groups.push_back(g);
    scores.push_back(std::move(s));
  }
  for (std::size_t i = 0; i < report.groups.size(); ++i) {
    for (std::size_t j = i + 1; j < report.groups.size(); ++j) {
      if (scores[i].size() < 2 || scores[j].size() < 2) continue;
      report.pairs.push_back(
          AbPairwise{report.groups[i].policy_id, report.groups[j].policy_id, welch_t_test(scores[i], scores[j])});
    }
  }
  return report;
}

namespace {

bool better_than_some(const AbReport& r, const std::string& policy) {
  for (const auto& p : r.pairs) {
    if (!p.test.significant) continue;
    if ((p.policy_a == policy && p.test.t > 0) || (p.policy_b == policy && p.test.t < 0)) return true;
  }
  return false;
}

std::string opt(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(10);
  os << *v;
  return os.str();
}

}  // namespace

void write_ab_csv(const AbReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "policy,n,user_score,user_score_ci95,dialogue_length,dialogue_length_ci95,pos_utterances_pct,"
         "neg_utterances_pct,significant\n";
  out.precision(10);
  for (const auto& g : report.groups) {
    out << g.policy_id << ',' << g.n << ',' << g.mean_score << ',' << opt(g.score_ci) << ',' << g.mean_length << ','
        << opt(g.length_ci) << ',' << g.positive_pct << ',' << g.negative_pct << ','
        << (better_than_some(report, g.policy_id) ? 1 : 0) << '\n';
  }
}

void write_ab_pairs_csv(const AbReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "policy_a,policy_b,t,df,p_value,significant\n";
  out.precision(10);
  for (const auto& p : report.pairs) {
    out << p.policy_a << ',' << p.policy_b << ',' << p.test.t << ',' << p.test.df << ',' << p.test.p_value << ','
        << (p.test.significant ? 1 : 0) << '\n';
  }
}

std::string format_ab_report(const AbReport& report) {
  std::ostringstream os;
  os << "A/B testing results (± 95% confidence intervals; * significant at 95%)\n"
        "Utterance sentiment from the lexicon classifier.\n";
  os << std::left << std::setw(24) << "Policy" << std::setw(18) << "User score" << std::setw(20) << "Dialogue length"
     << std::setw(18) << "Pos. utterances" << "Neg. utterances\n";
  for (const auto& g : report.groups) {
    auto pm = [](double m, const std::optional<double>& ci) {
      std::ostringstream s;
      s << std::fixed << std::setprecision(2) << m;
      if (ci) s << " ± " << *ci;
      return s.str();
    };
    auto pct = [](double v) {
      std::ostringstream s;
      s << std::fixed << std::setprecision(2) << v << '%';
      return s.str();
    };
    const std::string name = g.policy_id + (better_than_some(report, g.policy_id) ? "*" : "");
    os << std::setw(24) << name << std::setw(18) << pm(g.mean_score, g.score_ci) << std::setw(20)
       << pm(g.mean_length, g.length_ci) << std::setw(18) << pct(g.positive_pct) << pct(g.negative_pct) << '\n';
  }
  for (const auto& p : report.pairs) {
    os << std::fixed << std::setprecision(4) << p.policy_a << " vs " << p.policy_b << ": t = " << p.test.t
       << ", df = " << p.test.df << ", p = " << p.test.p_value << (p.test.significant ? " *" : "") << '\n';
  }
  return os.str();
}

std::size_t count_noun_phrases(const NluResources& nlu, std::string_view text) {
  const auto tokens = tokenize(text);
  std::size_t count = 0, i = 0;
  while (i < tokens.size()) {
    std::size_t j = i;
    if (nlu.determiners.contains(tokens[j])) ++j;
    std::size_t adj_end = j;
    while (adj_end < tokens.size() && nlu.adjectives.contains(tokens[adj_end]) && !nlu.nouns.contains(tokens[adj_end])) {
      ++adj_end;
    }
    std::size_t k = adj_end;
    while (k < tokens.size() && nlu.nouns.contains(tokens[k])) ++k;
    if (k > adj_end) {
      ++count;
      i = k;
    } else {
      ++i;
    }
  }
  return count;
}

std::size_t content_overlap(const NluResources& nlu, std::string_view response, std::string_view user) {
  std::set<std::string> a, b;
  for (auto& t : tokenize(response)) {
    if (!nlu.stop_words.contains(t)) a.insert(std::move(t));
  }
  for (auto& t : tokenize(user)) {
    if (!nlu.stop_words.contains(t)) b.insert(std::move(t));
  }
  std::size_t n = 0;
  for (const auto& t : a) n += b.count(t);
  return n;
}

LinguisticStats linguistic_stats(const std::vector<DialogueHistory>& dialogues, const NluResources& nlu) {
  require(!dialogues.empty(), "linguistic_stats: no dialogues");
  LinguisticStats s;
  double np = 0.0, ov = 0.0;
  for (const auto& d : dialogues) {
    for (std::size_t i = 1; i < d.size(); ++i) {
      if (d[i].speaker != Speaker::System || d[i - 1].speaker != Speaker::User) continue;
      np += static_cast<double>(count_noun_phrases(nlu, d[i].text));
      ov += static_cast<double>(content_overlap(nlu, d[i].text, d[i - 1].text));
      ++s.responses;
    }
  }
  if (s.responses) {
    s.noun_phrases_per_response = np / static_cast<double>(s.responses);
    s.overlap_with_user = ov / static_cast<double>(s.responses);
  }
  return s;
}

}  // namespace chorus
