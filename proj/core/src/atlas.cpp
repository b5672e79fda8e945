#include "pixellm/atlas.hpp"

#include <cstring>

namespace pixellm {

namespace {

constexpr char kMagic[8] = {'P', 'X', 'A', 'T', 'L', 'A', 'S', '1'};

void put_u32le(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

uint32_t get_u32le(const std::string& s, size_t off) {
  if (off + 4 > s.size()) throw FormatError("atlas file truncated");
  return static_cast<uint8_t>(s[off]) |
         (static_cast<uint32_t>(static_cast<uint8_t>(s[off + 1])) << 8) |
         (static_cast<uint32_t>(static_cast<uint8_t>(s[off + 2])) << 16) |
         (static_cast<uint32_t>(static_cast<uint8_t>(s[off + 3])) << 24);
}

}  // namespace

std::array<uint8_t, 32> render_config_hash(const RenderConfig& config) {
  const Font& font = resolve_font(config);
  std::string blob = config.canonical_string();
  blob += kRasterizerVersion;
  blob.push_back('\0');
  blob.append(reinterpret_cast<const char*>(font.bytes().data()),
              font.bytes().size());
  std::vector<uint8_t> digest = sha256(blob);
  std::array<uint8_t, 32> out;
  std::memcpy(out.data(), digest.data(), 32);
  return out;
}

VocabAtlas VocabAtlas::build(const std::vector<std::string>& surfaces,
                             const RenderConfig& config) {
  config.validate();
  VocabAtlas atlas;
  atlas.vocab_size_ = static_cast<uint32_t>(surfaces.size());
  atlas.height_ = config.image_height;
  atlas.width_ = config.image_width;
  atlas.channels_ = config.channels;
  atlas.config_hash_ = render_config_hash(config);
  atlas.surfaces_ = surfaces;
  const size_t row = static_cast<size_t>(atlas.height_) * atlas.width_;
  atlas.data_.resize(row * surfaces.size());
  for (size_t i = 0; i < surfaces.size(); ++i) {
    GlyphImage img = render_word(surfaces[i], config);
    std::vector<uint8_t> q = quantize_image(img);
    std::memcpy(atlas.data_.data() + i * row, q.data(), row);
  }
  return atlas;
}

VocabAtlas VocabAtlas::build(const std::map<uint32_t, std::string>& vocab,
                             const RenderConfig& config) {
  std::vector<std::string> surfaces(vocab.size());
  uint32_t expect = 0;
  for (const auto& [id, surf] : vocab) {
    if (id != expect) {
      throw InputError("vocabulary ids must be dense 0..n-1; missing id " +
                       std::to_string(expect));
    }
    surfaces[id] = surf;
    ++expect;
  }
  return build(surfaces, config);
}

const std::string& VocabAtlas::surface(uint32_t id) const {
  if (id >= vocab_size_) {
    throw InputError("atlas surface id out of range: " + std::to_string(id));
  }
  return surfaces_[id];
}

const uint8_t* VocabAtlas::row_bytes(uint32_t id) const {
  if (id >= vocab_size_) {
    throw InputError("atlas row id out of range: " + std::to_string(id));
  }
  return data_.data() + static_cast<size_t>(id) * row_elems();
}

MatrixRMf VocabAtlas::lookup(const std::vector<int>& ids) const {
  const int cols = row_elems();
  MatrixRMf out(static_cast<Eigen::Index>(ids.size()), cols);
  for (size_t j = 0; j < ids.size(); ++j) {
    if (ids[j] < 0 || static_cast<uint32_t>(ids[j]) >= vocab_size_) {
      throw InputError("atlas lookup id out of range: " + std::to_string(ids[j]));
    }
    const uint8_t* src = data_.data() + static_cast<size_t>(ids[j]) * cols;
    float* dst = out.row(static_cast<Eigen::Index>(j)).data();
    for (int c = 0; c < cols; ++c) dst[c] = src[c] / 255.0f;
  }
  return out;
}

MatrixRMf VocabAtlas::lookup_as_product(const MatrixRMf& one_hot) const {
  if (one_hot.cols() != static_cast<Eigen::Index>(vocab_size_)) {
    throw InputError("one-hot matrix has wrong column count");
  }
  for (Eigen::Index r = 0; r < one_hot.rows(); ++r) {
    int ones = 0;
    for (Eigen::Index c = 0; c < one_hot.cols(); ++c) {
      float v = one_hot(r, c);
      if (v == 1.0f) {
        ++ones;
      } else if (v != 0.0f) {
        throw InputError("one-hot matrix contains a value other than 0/1");
      }
    }
    if (ones != 1) {
      throw InputError("one-hot row " + std::to_string(r) +
                       " must contain exactly one 1");
    }
  }
  // Actual product: selection falls out exactly because 1*x + sum of 0*x
  // incurs no rounding.
  const int cols = row_elems();
  MatrixRMf atlas_f(static_cast<Eigen::Index>(vocab_size_), cols);
  for (uint32_t i = 0; i < vocab_size_; ++i) {
    const uint8_t* src = data_.data() + static_cast<size_t>(i) * cols;
    float* dst = atlas_f.row(i).data();
    for (int c = 0; c < cols; ++c) dst[c] = src[c] / 255.0f;
  }
  return one_hot * atlas_f;
}

Eigen::RowVectorXf VocabAtlas::row(uint32_t id) const {
  const uint8_t* src = row_bytes(id);
  Eigen::RowVectorXf out(row_elems());
  for (int c = 0; c < row_elems(); ++c) out[c] = src[c] / 255.0f;
  return out;
}

VocabAtlas VocabAtlas::extend(const std::vector<std::string>& extra,
                              const RenderConfig& config) const {
  std::array<uint8_t, 32> h = render_config_hash(config);
  if (h != config_hash_) {
    throw ConsistencyError(
        "extend_atlas: render config/font does not match the base atlas");
  }
  VocabAtlas out;
  out.vocab_size_ = vocab_size_ + static_cast<uint32_t>(extra.size());
  out.height_ = height_;
  out.width_ = width_;
  out.channels_ = channels_;
  out.config_hash_ = config_hash_;
  out.surfaces_ = surfaces_;
  out.surfaces_.insert(out.surfaces_.end(), extra.begin(), extra.end());
  const size_t row = static_cast<size_t>(row_elems());
  out.data_.resize(row * out.vocab_size_);
  std::memcpy(out.data_.data(), data_.data(), data_.size());
  for (size_t i = 0; i < extra.size(); ++i) {
    GlyphImage img = render_word(extra[i], config);
    std::vector<uint8_t> q = quantize_image(img);
    std::memcpy(out.data_.data() + (vocab_size_ + i) * row, q.data(), row);
  }
  return out;
}

std::string VocabAtlas::serialize() const {
  std::string out(kMagic, sizeof(kMagic));
  put_u32le(out, vocab_size_);
  put_u32le(out, static_cast<uint32_t>(height_));
  put_u32le(out, static_cast<uint32_t>(width_));
  put_u32le(out, static_cast<uint32_t>(channels_));
  out.append(reinterpret_cast<const char*>(config_hash_.data()), 32);
  std::string table;
  for (const std::string& s : surfaces_) {
    table += s;
    table.push_back('\0');
  }
  put_u32le(out, static_cast<uint32_t>(table.size()));
  out += table;
  out.append(reinterpret_cast<const char*>(data_.data()), data_.size());
  return out;
}

void VocabAtlas::persist(const std::string& path) const {
  write_file(path, serialize());
}

VocabAtlas VocabAtlas::deserialize(const std::string& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw FormatError("atlas file: bad magic");
  }
  VocabAtlas atlas;
  size_t off = 8;
  atlas.vocab_size_ = get_u32le(bytes, off);
  atlas.height_ = static_cast<int>(get_u32le(bytes, off + 4));
  atlas.width_ = static_cast<int>(get_u32le(bytes, off + 8));
  atlas.channels_ = static_cast<int>(get_u32le(bytes, off + 12));
  off += 16;
  if (atlas.height_ <= 0 || atlas.width_ <= 0 || atlas.channels_ != 1) {
    throw FormatError("atlas file: invalid dimensions");
  }
  if (bytes.size() < off + 32) throw FormatError("atlas file truncated");
  std::memcpy(atlas.config_hash_.data(), bytes.data() + off, 32);
  off += 32;
  uint32_t table_len = get_u32le(bytes, off);
  off += 4;
  if (bytes.size() < off + table_len) throw FormatError("atlas file truncated");
  atlas.surfaces_.reserve(atlas.vocab_size_);
  size_t pos = off, end = off + table_len;
  for (uint32_t i = 0; i < atlas.vocab_size_; ++i) {
    size_t nul = bytes.find('\0', pos);
    if (nul == std::string::npos || nul >= end) {
      throw FormatError("atlas file: surface table corrupt");
    }
    atlas.surfaces_.emplace_back(bytes.data() + pos, nul - pos);
    pos = nul + 1;
  }
  if (pos != end) throw FormatError("atlas file: surface table corrupt");
  off = end;
  size_t need = static_cast<size_t>(atlas.vocab_size_) * atlas.row_elems();
  if (bytes.size() - off != need) {
    throw FormatError("atlas file: pixel payload size mismatch");
  }
  atlas.data_.assign(bytes.begin() + static_cast<std::ptrdiff_t>(off), bytes.end());
  return atlas;
}

VocabAtlas VocabAtlas::restore(const std::string& path) {
  try {
    return deserialize(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace pixellm
