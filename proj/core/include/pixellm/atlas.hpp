#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pixellm/render.hpp"

namespace pixellm {

struct ConsistencyError : Error {
  using Error::Error;
};

using MatrixRMf =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Hash binding an atlas to its rendering: render config fields, the exact
// font bytes, and the rasterizer version tag.
std::array<uint8_t, 32> render_config_hash(const RenderConfig& config);

// Version tag folded into the hash; bump on any rasterizer change.
inline constexpr const char* kRasterizerVersion = "pixellm-raster-1";

// Immutable matrix of pre-rendered token images, one row per token, stored as
// 8-bit intensities (round(255 * coverage)). Lookups expose rows as floats in
// [0,1] (value / 255), which is exactly what a fresh quantized render yields.
class VocabAtlas {
 public:
  // Surfaces indexed by dense token id.
  static VocabAtlas build(const std::vector<std::string>& surfaces,
                          const RenderConfig& config);
  // Map form; ids must be dense 0..n-1 or an InputError is thrown.
  static VocabAtlas build(const std::map<uint32_t, std::string>& vocab,
                          const RenderConfig& config);

  uint32_t vocab_size() const { return vocab_size_; }
  int image_height() const { return height_; }
  int image_width() const { return width_; }
  int row_elems() const { return height_ * width_; }
  const std::array<uint8_t, 32>& config_hash() const { return config_hash_; }
  const std::string& surface(uint32_t id) const;
  const std::vector<std::string>& surfaces() const { return surfaces_; }

  // Raw 8-bit row (H*W bytes).
  const uint8_t* row_bytes(uint32_t id) const;
  const std::vector<uint8_t>& data() const { return data_; }

  // Float row view in [0,1]; row j of the result equals row ids[j].
  MatrixRMf lookup(const std::vector<int>& ids) const;
  // Equivalent selection expressed as the matrix product one_hot * atlas.
  // one_hot must be exactly one-hot per row (s x |v|).
  MatrixRMf lookup_as_product(const MatrixRMf& one_hot) const;
  // Single row as a float vector.
  Eigen::RowVectorXf row(uint32_t id) const;

  // New atlas with extra rows appended; base rows are byte-identical. The
  // config must hash to this atlas's config_hash.
  VocabAtlas extend(const std::vector<std::string>& extra,
                    const RenderConfig& config) const;

  void persist(const std::string& path) const;
  std::string serialize() const;
  static VocabAtlas restore(const std::string& path);
  static VocabAtlas deserialize(const std::string& bytes);  // throws FormatError

 private:
  VocabAtlas() = default;

  uint32_t vocab_size_ = 0;
  int height_ = 0;
  int width_ = 0;
  int channels_ = 1;
  std::array<uint8_t, 32> config_hash_{};
  std::vector<std::string> surfaces_;
  std::vector<uint8_t> data_;  // vocab_size * height * width, row-major
};

}  // namespace pixellm
