#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pixellm/util.hpp"

namespace pixellm {

// Byte-level BPE vocabulary.
//
// Id layout: 0..3 are the special tokens PAD/BOS/EOS/UNK, 4..259 are the 256
// single-byte pieces, and 260.. are learned merges in rank order. The byte
// base guarantees every input is representable, so encode never emits UNK.
struct BpeVocab {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumSpecial = 4;
  static constexpr int kByteBase = kNumSpecial;  // byte b has id kByteBase + b
  static constexpr int kFirstMerge = kByteBase + 256;

  // (left id, right id) per merge; rank equals position.
  std::vector<std::pair<int, int>> merges;
  // Raw byte string per id; empty for the special tokens.
  std::vector<std::string> id_to_bytes;

  int size() const { return static_cast<int>(id_to_bytes.size()); }
  bool is_special(int id) const { return id >= 0 && id < kNumSpecial; }
  const std::string& piece_bytes(int id) const;  // throws InputError on bad id

  void validate() const;  // density, surface uniqueness, merge part ordering
};

// Greedy highest-frequency training with lexicographic tie-breaking on the
// pair's (left bytes, right bytes). Pairs whose concatenation collides with
// an existing piece are skipped to keep surfaces unique. Training stops early
// if the corpus runs out of mergeable pairs.
BpeVocab train_bpe(const std::vector<std::string>& corpus_lines, int target_vocab);

std::vector<int> encode(const BpeVocab& vocab, const std::string& text);
std::string decode(const BpeVocab& vocab, const std::vector<int>& ids);

// Renderable surface: the piece with the leading-space marker stripped;
// special tokens and whitespace/control-only pieces map to ""; pieces whose
// bytes are not valid UTF-8 are spelled out as "<0xHH>" per byte so they stay
// renderable.
std::string surface(const BpeVocab& vocab, int id);

// Same rule applied to raw piece bytes (used for on-the-fly renders of
// corrupted or out-of-vocabulary pieces).
std::string surface_from_bytes(const std::string& bytes);

// Human-readable form for the vocab file: spaces shown as the low block
// marker, non-text bytes as <0xHH>.
std::string piece_display(const BpeVocab& vocab, int id);

// Versioned text format: specials, base pieces, then merges one per line.
std::string save_bpe(const BpeVocab& vocab);
void save_bpe(const BpeVocab& vocab, const std::string& path);
BpeVocab load_bpe_text(const std::string& text);   // throws FormatError
BpeVocab load_bpe(const std::string& path);

// Pre-tokenization boundaries: maximal runs of (spaces)(non-spaces). Merges
// never cross segment boundaries. Exposed for tests.
std::vector<std::string> pretokenize(const std::string& text);

}  // namespace pixellm
