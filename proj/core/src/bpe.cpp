#include "pixellm/bpe.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <unordered_map>
#include <unordered_set>

namespace pixellm {

namespace {

const char* kSpecialNames[BpeVocab::kNumSpecial] = {"<pad>", "<bos>", "<eos>",
                                                    "<unk>"};

struct PairHash {
  size_t operator()(const std::pair<int, int>& p) const {
    return (static_cast<size_t>(p.first) << 32) ^ static_cast<size_t>(p.second);
  }
};

std::string byte_hex(uint8_t b) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "<0x%02X>", b);
  return buf;
}

}  // namespace

const std::string& BpeVocab::piece_bytes(int id) const {
  if (id < 0 || id >= size()) {
    throw InputError("token id out of range: " + std::to_string(id));
  }
  return id_to_bytes[id];
}

void BpeVocab::validate() const {
  if (size() < kFirstMerge) throw FormatError("vocab smaller than base alphabet");
  if (static_cast<int>(merges.size()) != size() - kFirstMerge) {
    throw FormatError("merge count inconsistent with vocab size");
  }
  std::unordered_set<std::string> seen;
  for (int id = 0; id < size(); ++id) {
    if (id < kNumSpecial) {
      if (!id_to_bytes[id].empty()) throw FormatError("special token with bytes");
      continue;
    }
    if (id < kFirstMerge) {
      if (id_to_bytes[id].size() != 1 ||
          static_cast<uint8_t>(id_to_bytes[id][0]) != id - kByteBase) {
        throw FormatError("byte piece table corrupt");
      }
    }
    if (!seen.insert(id_to_bytes[id]).second) {
      throw FormatError("duplicate piece surface at id " + std::to_string(id));
    }
  }
  for (size_t r = 0; r < merges.size(); ++r) {
    auto [l, rgt] = merges[r];
    int merged_id = kFirstMerge + static_cast<int>(r);
    if (l < kNumSpecial || rgt < kNumSpecial || l >= merged_id || rgt >= merged_id) {
      throw FormatError("merge refers to a non-earlier piece");
    }
    if (id_to_bytes[merged_id] != id_to_bytes[l] + id_to_bytes[rgt]) {
      throw FormatError("merge bytes inconsistent");
    }
  }
}

std::vector<std::string> pretokenize(const std::string& text) {
  std::vector<std::string> segments;
  size_t i = 0;
  const size_t n = text.size();
  while (i < n) {
    size_t start = i;
    while (i < n && text[i] == ' ') ++i;
    while (i < n && text[i] != ' ') ++i;
    segments.push_back(text.substr(start, i - start));
  }
  return segments;
}

BpeVocab train_bpe(const std::vector<std::string>& corpus_lines, int target_vocab) {
  if (target_vocab < BpeVocab::kFirstMerge) {
    throw InputError("target_vocab must be at least " +
                     std::to_string(BpeVocab::kFirstMerge) +
                     " (specials plus byte alphabet)");
  }
  bool any_content = false;
  for (const auto& l : corpus_lines) {
    if (!l.empty()) {
      any_content = true;
      break;
    }
  }
  if (!any_content) throw InputError("empty corpus");

  BpeVocab vocab;
  vocab.id_to_bytes.resize(BpeVocab::kFirstMerge);
  for (int b = 0; b < 256; ++b) {
    vocab.id_to_bytes[BpeVocab::kByteBase + b] =
        std::string(1, static_cast<char>(b));
  }
  std::unordered_set<std::string> existing(vocab.id_to_bytes.begin() + 4,
                                           vocab.id_to_bytes.end());

  // Unique segments with multiplicities keep the pair scan proportional to
  // the vocabulary, not the corpus.
  std::unordered_map<std::string, int64_t> seg_counts;
  for (const auto& line : corpus_lines) {
    for (auto& seg : pretokenize(line)) seg_counts[std::move(seg)] += 1;
  }
  struct Seg {
    std::vector<int> toks;
    int64_t count;
  };
  std::vector<Seg> segs;
  segs.reserve(seg_counts.size());
  for (const auto& [text, count] : seg_counts) {
    Seg s;
    s.count = count;
    s.toks.reserve(text.size());
    for (unsigned char b : text) s.toks.push_back(BpeVocab::kByteBase + b);
    segs.push_back(std::move(s));
  }
  // Deterministic iteration order regardless of hash-map internals.
  std::sort(segs.begin(), segs.end(),
            [](const Seg& a, const Seg& b) { return a.toks < b.toks; });

  std::unordered_set<std::pair<int, int>, PairHash> banned;

  while (vocab.size() < target_vocab) {
    std::unordered_map<std::pair<int, int>, int64_t, PairHash> pair_counts;
    for (const Seg& s : segs) {
      for (size_t i = 0; i + 1 < s.toks.size(); ++i) {
        pair_counts[{s.toks[i], s.toks[i + 1]}] += s.count;
      }
    }
    std::pair<int, int> best{-1, -1};
    int64_t best_count = 0;
    for (const auto& [pair, count] : pair_counts) {
      if (banned.count(pair)) continue;
      if (count < best_count) continue;
      if (count > best_count) {
        best = pair;
        best_count = count;
        continue;
      }
      // Tie: lexicographically smallest by (left bytes, right bytes).
      const std::string& bl = vocab.id_to_bytes[best.first];
      const std::string& br = vocab.id_to_bytes[best.second];
      const std::string& cl = vocab.id_to_bytes[pair.first];
      const std::string& cr = vocab.id_to_bytes[pair.second];
      if (std::tie(cl, cr) < std::tie(bl, br)) best = pair;
    }
    if (best_count == 0) break;  // nothing left to merge

    std::string merged_bytes =
        vocab.id_to_bytes[best.first] + vocab.id_to_bytes[best.second];
    if (existing.count(merged_bytes)) {
      // Merging would duplicate an existing surface; skip this pair for good.
      banned.insert(best);
      continue;
    }
    int new_id = vocab.size();
    vocab.id_to_bytes.push_back(merged_bytes);
    vocab.merges.push_back(best);
    existing.insert(merged_bytes);

    for (Seg& s : segs) {
      auto& t = s.toks;
      size_t w = 0;
      for (size_t r = 0; r < t.size(); ++r) {
        if (r + 1 < t.size() && t[r] == best.first && t[r + 1] == best.second) {
          t[w++] = new_id;
          ++r;
        } else {
          t[w++] = t[r];
        }
      }
      t.resize(w);
    }
  }
  vocab.validate();
  return vocab;
}

std::vector<int> encode(const BpeVocab& vocab, const std::string& text) {
  std::unordered_map<std::pair<int, int>, int, PairHash> rank;
  for (size_t r = 0; r < vocab.merges.size(); ++r) {
    rank[vocab.merges[r]] = static_cast<int>(r);
  }
  std::vector<int> out;
  for (const std::string& seg : pretokenize(text)) {
    std::vector<int> toks;
    toks.reserve(seg.size());
    for (unsigned char b : seg) toks.push_back(BpeVocab::kByteBase + b);
    for (;;) {
      int best_rank = -1;
      for (size_t i = 0; i + 1 < toks.size(); ++i) {
        auto it = rank.find({toks[i], toks[i + 1]});
        if (it != rank.end() && (best_rank < 0 || it->second < best_rank)) {
          best_rank = it->second;
        }
      }
      if (best_rank < 0) break;
      auto [l, r] = vocab.merges[best_rank];
      int new_id = BpeVocab::kFirstMerge + best_rank;
      size_t w = 0;
      for (size_t i = 0; i < toks.size(); ++i) {
        if (i + 1 < toks.size() && toks[i] == l && toks[i + 1] == r) {
          toks[w++] = new_id;
          ++i;
        } else {
          toks[w++] = toks[i];
        }
      }
      toks.resize(w);
    }
    out.insert(out.end(), toks.begin(), toks.end());
  }
  return out;
}

std::string decode(const BpeVocab& vocab, const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) out += vocab.piece_bytes(id);  // specials contribute ""
  return out;
}

std::string surface(const BpeVocab& vocab, int id) {
  if (vocab.is_special(id)) return "";
  return surface_from_bytes(vocab.piece_bytes(id));
}

std::string surface_from_bytes(const std::string& bytes) {
  size_t start = 0;
  while (start < bytes.size() && bytes[start] == ' ') ++start;
  std::string visible = bytes.substr(start);
  if (visible.empty()) return "";
  if (utf8_valid(visible)) {
    bool all_control = true;
    for (char32_t c : utf8_decode(visible)) {
      if (c > 0x20 && c != 0x7F && !(c >= 0x80 && c <= 0x9F)) {
        all_control = false;
        break;
      }
    }
    return all_control ? "" : visible;
  }
  // Partial UTF-8 sequences get an explicit, renderable byte spelling.
  std::string out;
  for (unsigned char b : visible) out += byte_hex(b);
  return out;
}

std::string piece_display(const BpeVocab& vocab, int id) {
  if (vocab.is_special(id)) return kSpecialNames[id];
  const std::string& bytes = vocab.piece_bytes(id);
  if (utf8_valid(bytes)) {
    std::string out;
    for (char32_t c : utf8_decode(bytes)) {
      if (c == ' ') {
        out += "\xE2\x96\x81";  // U+2581, the conventional space marker
      } else if (c <= 0x20 || c == 0x7F) {
        out += byte_hex(static_cast<uint8_t>(c));
      } else {
        out += utf8_encode_one(c);
      }
    }
    return out;
  }
  std::string out;
  for (unsigned char b : bytes) out += byte_hex(b);
  return out;
}

std::string save_bpe(const BpeVocab& vocab) {
  std::string out = "pixellm-bpe v1\n";
  out += "vocab_size " + std::to_string(vocab.size()) + "\n";
  out += "specials " + std::to_string(BpeVocab::kNumSpecial) + "\n";
  for (int id = 0; id < BpeVocab::kNumSpecial; ++id) {
    out += std::to_string(id) + " " + kSpecialNames[id] + "\n";
  }
  out += "bytes 256\n";
  for (int b = 0; b < 256; ++b) {
    out += std::to_string(BpeVocab::kByteBase + b) + " " + byte_hex(b) + "\n";
  }
  out += "merges " + std::to_string(vocab.merges.size()) + "\n";
  for (size_t r = 0; r < vocab.merges.size(); ++r) {
    int id = BpeVocab::kFirstMerge + static_cast<int>(r);
    out += std::to_string(id) + " " + std::to_string(vocab.merges[r].first) +
           " " + std::to_string(vocab.merges[r].second) + " # " +
           piece_display(vocab, id) + "\n";
  }
  return out;
}

void save_bpe(const BpeVocab& vocab, const std::string& path) {
  write_file(path, save_bpe(vocab));
}

BpeVocab load_bpe_text(const std::string& text) {
  std::vector<std::string> lines = split(text, '\n');
  size_t ln = 0;
  auto next_line = [&]() -> std::string {
    while (ln < lines.size()) {
      std::string s = lines[ln++];
      if (!s.empty() && s.back() == '\r') s.pop_back();
      if (!trim(s).empty()) return s;
    }
    throw FormatError("tokenizer file truncated");
  };
  if (trim(next_line()) != "pixellm-bpe v1") {
    throw FormatError("tokenizer file: unknown format/version");
  }
  auto expect_count = [&](const std::string& key) -> long {
    std::string line = next_line();
    auto parts = split(trim(line), ' ');
    if (parts.size() != 2 || parts[0] != key) {
      throw FormatError("tokenizer file: expected '" + key + " N', got: " + line);
    }
    return std::stol(parts[1]);
  };
  long vocab_size = expect_count("vocab_size");
  long specials = expect_count("specials");
  if (specials != BpeVocab::kNumSpecial) {
    throw FormatError("tokenizer file: unsupported special token count");
  }
  for (int i = 0; i < specials; ++i) next_line();
  long bytes = expect_count("bytes");
  if (bytes != 256) throw FormatError("tokenizer file: byte alphabet must be 256");
  for (int i = 0; i < bytes; ++i) next_line();
  long merges = expect_count("merges");
  if (vocab_size != BpeVocab::kFirstMerge + merges) {
    throw FormatError("tokenizer file: vocab_size inconsistent with merges");
  }

  BpeVocab vocab;
  vocab.id_to_bytes.resize(BpeVocab::kFirstMerge);
  for (int b = 0; b < 256; ++b) {
    vocab.id_to_bytes[BpeVocab::kByteBase + b] =
        std::string(1, static_cast<char>(b));
  }
  for (long r = 0; r < merges; ++r) {
    std::string line = next_line();
    size_t comment = line.find('#');
    if (comment != std::string::npos) line = line.substr(0, comment);
    auto parts = split(trim(line), ' ');
    if (parts.size() != 3) {
      throw FormatError("tokenizer file: malformed merge line: " + line);
    }
    int id = std::stoi(parts[0]);
    int l = std::stoi(parts[1]);
    int rgt = std::stoi(parts[2]);
    if (id != BpeVocab::kFirstMerge + static_cast<int>(r)) {
      throw FormatError("tokenizer file: merge ids must be dense");
    }
    if (l < 0 || l >= id || rgt < 0 || rgt >= id) {
      throw FormatError("tokenizer file: merge refers to invalid piece");
    }
    vocab.merges.emplace_back(l, rgt);
    vocab.id_to_bytes.push_back(vocab.id_to_bytes[l] + vocab.id_to_bytes[rgt]);
  }
  vocab.validate();
  return vocab;
}

BpeVocab load_bpe(const std::string& path) {
  try {
    return load_bpe_text(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace pixellm
