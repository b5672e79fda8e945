#include "pixellm/corpus.hpp"

#include <array>

namespace pixellm {

namespace {

const std::vector<std::string> kDeterminers = {"the", "a",    "every",
                                               "some", "this", "that"};
const std::vector<std::string> kAdjectives = {
    "quick",  "old",    "bright", "quiet",    "heavy",  "green",
    "small",  "clever", "tired",  "warm",     "cold",   "sharp",
    "gentle", "proud",  "plain",  "wonderful", "superb", "charming",
    "terrible", "dreadful", "awful", "dismal"};
const std::vector<std::string> kNouns = {
    "fox",     "river",  "bridge", "garden",  "market", "mountain",
    "teacher", "sailor", "engine", "letter",  "window", "basket",
    "signal",  "harbor", "village", "stone",  "forest", "lantern",
    "wagon",   "meadow", "doctor",  "apple",  "day",    "film",
    "play",    "show",   "story",   "song"};
const std::vector<std::string> kVerbs = {
    "guards",  "crosses", "follows", "builds", "paints",
    "carries", "watches", "repairs", "studies", "opens",
    "closes",  "finds",   "keeps",   "moves",  "sells"};
const std::vector<std::string> kAdverbs = {"slowly", "quietly",   "often",
                                           "rarely", "carefully", "quickly",
                                           "early",  "late"};
const std::vector<std::string> kPlaces = {
    "near the river", "beyond the hill", "across the bay",
    "under the arch", "by the gate",     "past the mill"};

const std::vector<std::string> kPositiveWords = {
    "wonderful", "delightful", "superb", "excellent", "charming"};
const std::vector<std::string> kNegativeWords = {
    "terrible", "dreadful", "awful", "dismal", "bleak"};
const std::vector<std::string> kTopics = {"film", "play",  "show",
                                          "story", "song", "market"};
const std::vector<std::string> kLinkers = {"felt", "seemed", "was", "looked"};
const std::vector<std::string> kIntensifiers = {"truly", "rather", "quite",
                                                "really"};

const std::string& pick(const std::vector<std::string>& bank, Rng& rng) {
  return bank[static_cast<size_t>(rng.next_below(bank.size()))];
}

std::string make_sentence(Rng& rng) {
  switch (rng.next_below(3)) {
    case 0:
      return pick(kDeterminers, rng) + " " + pick(kAdjectives, rng) + " " +
             pick(kNouns, rng) + " " + pick(kVerbs, rng) + " " +
             pick(kDeterminers, rng) + " " + pick(kAdjectives, rng) + " " +
             pick(kNouns, rng) + " " + pick(kPlaces, rng);
    case 1:
      return pick(kDeterminers, rng) + " " + pick(kNouns, rng) + " " +
             pick(kVerbs, rng) + " " + pick(kDeterminers, rng) + " " +
             pick(kNouns, rng) + " " + pick(kAdverbs, rng);
    default:
      return pick(kAdverbs, rng) + " the " + pick(kNouns, rng) + " " +
             pick(kVerbs, rng) + " " + pick(kDeterminers, rng) + " " +
             pick(kAdjectives, rng) + " " + pick(kNouns, rng);
  }
}

}  // namespace

std::vector<std::string> generate_sentences(int n, uint64_t seed) {
  if (n < 0) throw InputError("sentence count must be nonnegative");
  Rng rng(seed);
  std::vector<std::string> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(make_sentence(rng));
  return out;
}

std::vector<std::string> generate_corpus_bytes(size_t target_bytes,
                                               uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> out;
  size_t total = 0;
  while (total < target_bytes) {
    std::string s = make_sentence(rng);
    total += s.size() + 1;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::string> bundled_smoke_corpus() {
  return generate_sentences(200, kSmokeCorpusSeed);
}

LabeledSet generate_sentiment(int n, uint64_t seed) {
  if (n < 2) throw InputError("sentiment set needs at least 2 examples");
  Rng rng(seed);
  LabeledSet set;
  for (int i = 0; i < n; ++i) {
    int label = i % 2;
    const auto& bank = label == 1 ? kPositiveWords : kNegativeWords;
    std::string text = "the " + pick(kAdjectives, rng) + " " +
                       pick(kTopics, rng) + " " + pick(kLinkers, rng) + " " +
                       pick(kIntensifiers, rng) + " " + pick(bank, rng);
    set.labels.push_back(label);
    set.texts.push_back(std::move(text));
  }
  return set;
}

std::vector<std::string> labeled_lines(const LabeledSet& set) {
  std::vector<std::string> lines;
  lines.reserve(set.labels.size());
  for (size_t i = 0; i < set.labels.size(); ++i) {
    lines.push_back(std::to_string(set.labels[i]) + "\t" + set.texts[i]);
  }
  return lines;
}

std::string showcase_sentence() { return "an apple a day keeps doctor away"; }

std::string showcase_noised() {
  // scalar index -> Cyrillic lookalike
  static const std::array<std::pair<size_t, uint32_t>, 8> subs = {{
      {0, 0x0430},   // 'a' in "an"
      {12, 0x0430},  // 'a' in "day"
      {16, 0x0435},  // 'e' in "keeps"
      {21, 0x0501},  // 'd' in "doctor"
      {22, 0x043E},  // 'o' in "doctor"
      {23, 0x0441},  // 'c' in "doctor"
      {28, 0x0430},  // 'a' in "away"
      {31, 0x0443},  // 'y' in "away"
  }};
  std::vector<char32_t> cps = utf8_decode(showcase_sentence());
  for (const auto& [idx, rep] : subs) {
    cps[idx] = static_cast<char32_t>(rep);
  }
  std::string out;
  for (char32_t c : cps) out += utf8_encode_one(c);
  return out;
}

std::vector<std::string> random_like_sentences(const std::string& ref, int n,
                                               uint64_t seed) {
  if (n < 0) throw InputError("sentence count must be nonnegative");
  std::vector<char32_t> cps = utf8_decode(ref);
  Rng rng(seed);
  std::vector<std::string> out;
  out.reserve(static_cast<size_t>(n));
  while (static_cast<int>(out.size()) < n) {
    std::string s;
    for (char32_t c : cps) {
      uint32_t emit = static_cast<uint32_t>(c);
      if (emit >= 'a' && emit <= 'z') {
        emit = 'a' + static_cast<uint32_t>(rng.next_below(26));
      }
      s += utf8_encode_one(static_cast<char32_t>(emit));
    }
    if (s == ref) continue;
    bool dup = false;
    for (const auto& prev : out) {
      if (prev == s) {
        dup = true;
        break;
      }
    }
    if (!dup) out.push_back(std::move(s));
  }
  return out;
}

}  // namespace pixellm
