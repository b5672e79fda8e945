#pragma once

#include <string>
#include <vector>

#include "pixellm/util.hpp"

namespace pixellm {

// Deterministic synthetic English-like corpora for desk-scale experiments.
// One document per line; all ASCII.

// Exactly n template sentences.
std::vector<std::string> generate_sentences(int n, uint64_t seed);

// Sentences until the total byte size (including newlines) reaches the target.
std::vector<std::string> generate_corpus_bytes(size_t target_bytes,
                                               uint64_t seed);

// The 200-sentence smoke corpus bundled with the toolkit; the checked-in
// data file must match this generator byte for byte.
inline constexpr uint64_t kSmokeCorpusSeed = 20240;
std::vector<std::string> bundled_smoke_corpus();

// Balanced binary sentiment set; the label-determining keyword is the final
// word of each sentence, which makes the task linearly separable from the
// last position's hidden state.
struct LabeledSet {
  std::vector<int> labels;
  std::vector<std::string> texts;
};
LabeledSet generate_sentiment(int n, uint64_t seed);

// Serialized labeled lines: label<TAB>text.
std::vector<std::string> labeled_lines(const LabeledSet& set);

// The showcase sentence and its documented homoglyph-substituted variant
// (replacements at: 'a' in "an", 'a' in "day", 'e' in "keeps", 'd'/'o'/'c'
// in "doctor", 'a' and 'y' in "away"; first dictionary candidate each).
std::string showcase_sentence();
std::string showcase_noised();

// n distinct sentences with the same scalar shape as ref: every ASCII
// lowercase letter is replaced by a random one, everything else kept.
std::vector<std::string> random_like_sentences(const std::string& ref, int n,
                                               uint64_t seed);

}  // namespace pixellm
