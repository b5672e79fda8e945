#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include "pixellm/atlas.hpp"
#include "pixellm/bpe.hpp"
#include "pixellm/util.hpp"

namespace testsup {

// Repository data directory, injected at compile time.
inline std::string data_path(const std::string& rel) {
  return std::string(PIXELLM_DATA_DIR) + "/" + rel;
}

// Unique scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    auto base = std::filesystem::temp_directory_path();
    for (int i = 0;; ++i) {
      auto p = base / (tag + "-" + std::to_string(::getpid()) + "-" +
                       std::to_string(i));
      std::error_code ec;
      if (std::filesystem::create_directory(p, ec)) {
        path_ = p;
        break;
      }
    }
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const {
    return (path_ / name).string();
  }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

// Exact elementwise equality for Eigen expressions.
template <typename A, typename B>
bool mat_eq(const A& a, const B& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         (a.array() == b.array()).all();
}

// Atlas over a tokenizer's full id range, one row per rendered surface.
template <typename Vocab, typename Render>
pixellm::VocabAtlas atlas_for(const Vocab& vocab, const Render& rc) {
  std::vector<std::string> surfaces(static_cast<size_t>(vocab.size()));
  for (int id = 0; id < vocab.size(); ++id) {
    surfaces[static_cast<size_t>(id)] = pixellm::surface(vocab, id);
  }
  return pixellm::VocabAtlas::build(surfaces, rc);
}

// Mixed-script fuzz string: ASCII, accents, Greek, Cyrillic, Devanagari, a
// CJK slice, and an emoji block that the font does not cover (notdef path).
inline std::string fuzz_string(pixellm::Rng& rng, int max_len = 24) {
  static const std::pair<char32_t, char32_t> pools[] = {
      {0x20, 0x7E},   {0xC0, 0x17F},     {0x390, 0x3C9},     {0x410, 0x44F},
      {0x900, 0x97F}, {0x4E00, 0x4EFF},  {0x1F600, 0x1F64F},
  };
  const int len = static_cast<int>(rng.next_below(max_len + 1));
  std::vector<char32_t> scalars;
  for (int i = 0; i < len; ++i) {
    if (rng.next_below(8) == 0) {
      scalars.push_back(U' ');
      continue;
    }
    const auto& p = pools[rng.next_below(std::size(pools))];
    scalars.push_back(p.first +
                      static_cast<char32_t>(rng.next_below(p.second - p.first + 1)));
  }
  return pixellm::utf8_encode(scalars);
}

}  // namespace testsup
