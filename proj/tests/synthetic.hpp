#pragma once

// Deterministic synthetic dialogue corpus shared by the training, augmentation
// and acceptance suites.
//
// Construction: ten cue/marker families. A record of family f carries the
// token cue<f> in its most recent context turn and the token mark<f> in its
// response. Odd families are SARCASM, even ones NOT_SARCASM, and responses
// draw their filler words from a per-class pool. This makes the corpus
// linearly separable for the classifier, gives retrieval a class-aligned
// signal, and makes "does this response follow that context" learnable from
// cue/marker agreement.

#include "sarc/dataset.hpp"

#include <random>
#include <string>
#include <vector>

namespace sarc::synth {

inline constexpr int kFamilies = 10;

inline Label family_label(int family) {
  return family % 2 == 1 ? Label::Sarcasm : Label::NotSarcasm;
}

struct Sample {
  DialogueRecord record;
  int family = 0;
};

inline std::string cue_token(int family) { return "cue" + std::to_string(family); }
inline std::string marker_token(int family) { return "mark" + std::to_string(family); }

inline std::vector<Sample> corpus(int n, uint64_t seed, const std::string& id_prefix) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> family_dist(0, kFamilies - 1);
  std::uniform_int_distribution<int> n_ctx(1, 3);
  std::uniform_int_distribution<int> n_fill(3, 5);
  std::uniform_int_distribution<int> n_resp(4, 6);
  std::uniform_int_distribution<int> pool(0, 9);

  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.family = family_dist(rng);
    const Label label = family_label(s.family);
    DialogueRecord& rec = s.record;
    rec.id = id_prefix + std::to_string(i);
    rec.label = label;

    const int turns = n_ctx(rng);
    for (int t = 0; t < turns; ++t) {
      std::string turn;
      const int words = n_fill(rng);
      for (int w = 0; w < words; ++w) {
        if (!turn.empty()) turn += ' ';
        turn += "ctx" + std::to_string(pool(rng));
      }
      rec.context.push_back(std::move(turn));
    }
    {
      // the cue lives in the most recent turn so every window size sees it
      std::string& last = rec.context.back();
      std::uniform_int_distribution<size_t> cut(0, last.size());
      const std::string cue = cue_token(s.family);
      size_t at = cut(rng);
      while (at > 0 && last[at - 1] != ' ') --at;  // insert at a word boundary
      last.insert(at, at == last.size() ? " " + cue : cue + " ");
    }

    const std::string filler = label == Label::Sarcasm ? "snark" : "plain";
    std::vector<std::string> words;
    const int rwords = n_resp(rng);
    for (int w = 0; w < rwords; ++w) words.push_back(filler + std::to_string(pool(rng)));
    std::uniform_int_distribution<size_t> where(0, words.size());
    words.insert(words.begin() + static_cast<long>(where(rng)), marker_token(s.family));
    std::string response;
    for (const auto& w : words) {
      if (!response.empty()) response += ' ';
      response += w;
    }
    rec.response = std::move(response);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<DialogueRecord> records_of(const std::vector<Sample>& samples) {
  std::vector<DialogueRecord> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.record);
  return out;
}

// Same records with labels stripped, plus the ground truth for scoring.
inline std::pair<std::vector<DialogueRecord>, std::vector<Label>> unlabeled_of(
    const std::vector<Sample>& samples) {
  std::vector<DialogueRecord> records;
  std::vector<Label> truth;
  records.reserve(samples.size());
  for (const auto& s : samples) {
    DialogueRecord rec = s.record;
    truth.push_back(*rec.label);
    rec.label.reset();
    records.push_back(std::move(rec));
  }
  return {std::move(records), std::move(truth)};
}

}  // namespace sarc::synth
