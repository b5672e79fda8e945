#include "pixellm/model.hpp"

#include <cstring>
#include <sstream>

namespace pixellm {

void ModelConfig::validate() const {
  if (hidden_size < 1) throw ConfigError("hidden_size must be positive");
  if (intermediate_size < 1) throw ConfigError("intermediate_size must be positive");
  if (num_heads < 1) throw ConfigError("num_heads must be positive");
  if (num_layers < 1) throw ConfigError("num_layers must be positive");
  if (vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
  if (max_positions < 1) throw ConfigError("max_positions must be positive");
  if (rmsnorm_eps <= 0) throw ConfigError("rmsnorm_eps must be positive");
  if (hidden_size % num_heads != 0) {
    throw ConfigError("hidden_size must be divisible by num_heads");
  }
  if (pos_scheme == PosScheme::rotary && head_dim() % 2 != 0) {
    throw ConfigError("rotary positions require an even head dimension");
  }
  if (embedding_mode == EmbeddingMode::pixel) {
    if (image_height < 1 || image_width < 1) {
      throw ConfigError("pixel mode requires positive image dimensions");
    }
  }
  if (rope_base <= 1.0) throw ConfigError("rope_base must exceed 1");
}

ModelConfig ModelConfig::from_config(const KeyValueConfig& kv) {
  ModelConfig cfg;
  cfg.hidden_size = static_cast<int>(kv.get_int("hidden_size", cfg.hidden_size));
  cfg.intermediate_size =
      static_cast<int>(kv.get_int("intermediate_size", cfg.intermediate_size));
  cfg.num_heads = static_cast<int>(kv.get_int("num_heads", cfg.num_heads));
  cfg.num_layers = static_cast<int>(kv.get_int("num_layers", cfg.num_layers));
  cfg.vocab_size = static_cast<int>(kv.get_int("vocab_size", cfg.vocab_size));
  cfg.max_positions =
      static_cast<int>(kv.get_int("max_positions", cfg.max_positions));
  cfg.rmsnorm_eps = kv.get_double("rmsnorm_eps", cfg.rmsnorm_eps);
  std::string m = kv.get_string("embedding_mode", "pixel");
  if (m == "pixel") cfg.embedding_mode = EmbeddingMode::pixel;
  else if (m == "token") cfg.embedding_mode = EmbeddingMode::token;
  else throw ConfigError("embedding_mode must be pixel or token, got '" + m + "'");
  cfg.image_height = static_cast<int>(kv.get_int("image_height", cfg.image_height));
  cfg.image_width = static_cast<int>(kv.get_int("image_width", cfg.image_width));
  std::string p = kv.get_string("pos_scheme", "rotary");
  if (p == "rotary") cfg.pos_scheme = PosScheme::rotary;
  else if (p == "learned_absolute") cfg.pos_scheme = PosScheme::learned_absolute;
  else throw ConfigError("pos_scheme must be rotary or learned_absolute, got '" + p + "'");
  cfg.seed = static_cast<uint64_t>(kv.get_int("model_seed", 0));
  cfg.rope_base = kv.get_double("rope_base", cfg.rope_base);
  cfg.validate();
  return cfg;
}

void ModelConfig::to_config(KeyValueConfig& kv) const {
  kv.set("hidden_size", std::to_string(hidden_size));
  kv.set("intermediate_size", std::to_string(intermediate_size));
  kv.set("num_heads", std::to_string(num_heads));
  kv.set("num_layers", std::to_string(num_layers));
  kv.set("vocab_size", std::to_string(vocab_size));
  kv.set("max_positions", std::to_string(max_positions));
  kv.set("rmsnorm_eps", format_double(rmsnorm_eps));
  kv.set("embedding_mode",
         embedding_mode == EmbeddingMode::pixel ? "pixel" : "token");
  kv.set("image_height", std::to_string(image_height));
  kv.set("image_width", std::to_string(image_width));
  kv.set("pos_scheme",
         pos_scheme == PosScheme::rotary ? "rotary" : "learned_absolute");
  kv.set("model_seed", std::to_string(seed));
  kv.set("rope_base", format_double(rope_base));
}

std::vector<int> generate(const ModelConfig& cfg, Parameters<float>& params,
                          const VocabAtlas* atlas,
                          const std::vector<int>& prompt_ids, int max_new,
                          const GenerateOptions& options) {
  if (prompt_ids.empty()) throw InputError("generate: empty prompt");
  if (static_cast<int>(prompt_ids.size()) > cfg.max_positions) {
    throw InputError("generate: prompt exceeds max_positions (" +
                     std::to_string(cfg.max_positions) + ")");
  }
  if (max_new < 0) throw InputError("generate: max_new must be nonnegative");
  const int input_limit =
      cfg.embedding_mode == EmbeddingMode::pixel && atlas
          ? static_cast<int>(atlas->vocab_size())
          : cfg.vocab_size;
  for (int id : prompt_ids) {
    if (id < 0 || id >= input_limit) {
      throw InputError("generate: prompt id out of range: " + std::to_string(id));
    }
  }

  Rng rng(options.seed);
  std::vector<int> ids = prompt_ids;
  for (int step = 0; step < max_new; ++step) {
    if (static_cast<int>(ids.size()) >= cfg.max_positions) break;
    MatRM<float> logits;
    if (cfg.embedding_mode == EmbeddingMode::pixel) {
      if (!atlas) throw ConfigError("pixel mode generation requires an atlas");
      MatRM<float> e = pixel_embed(cfg, params, *atlas, ids);
      logits = forward_from_embeddings(cfg, params, e, 1,
                                       static_cast<int>(ids.size()));
    } else {
      logits = forward<float>(cfg, params, nullptr, ids);
    }
    Eigen::Index last = logits.rows() - 1;
    int next = 0;
    if (options.strategy == GenerateOptions::Strategy::greedy) {
      float best = logits(last, 0);
      for (int c = 1; c < cfg.vocab_size; ++c) {
        if (logits(last, c) > best) {
          best = logits(last, c);
          next = c;
        }
      }
    } else {
      if (options.temperature <= 0) {
        throw ConfigError("temperature must be positive");
      }
      double inv_t = 1.0 / options.temperature;
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < cfg.vocab_size; ++c) {
        mx = std::max(mx, static_cast<double>(logits(last, c)) * inv_t);
      }
      std::vector<double> probs(static_cast<size_t>(cfg.vocab_size));
      double denom = 0;
      for (int c = 0; c < cfg.vocab_size; ++c) {
        double e = std::exp(static_cast<double>(logits(last, c)) * inv_t - mx);
        probs[static_cast<size_t>(c)] = e;
        denom += e;
      }
      double u = rng.next_double() * denom;
      double acc = 0;
      next = cfg.vocab_size - 1;
      for (int c = 0; c < cfg.vocab_size; ++c) {
        acc += probs[static_cast<size_t>(c)];
        if (u < acc) {
          next = c;
          break;
        }
      }
    }
    ids.push_back(next);
    if (next == options.eos_id) break;
  }
  return ids;
}

namespace {

constexpr char kModelMagic[8] = {'P', 'X', 'M', 'O', 'D', 'E', 'L', '1'};
constexpr uint32_t kModelVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

uint32_t get_u32(const std::string& in, size_t& off) {
  if (off + 4 > in.size()) throw FormatError("model file: truncated");
  uint32_t v = static_cast<uint8_t>(in[off]) |
               (static_cast<uint32_t>(static_cast<uint8_t>(in[off + 1])) << 8) |
               (static_cast<uint32_t>(static_cast<uint8_t>(in[off + 2])) << 16) |
               (static_cast<uint32_t>(static_cast<uint8_t>(in[off + 3])) << 24);
  off += 4;
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     Parameters<float>& params,
                     const std::array<uint8_t, 32>* atlas_hash) {
  std::string out;
  out.append(kModelMagic, sizeof(kModelMagic));
  put_u32(out, kModelVersion);
  KeyValueConfig kv;
  cfg.to_config(kv);
  std::string cfg_text = kv.serialize();
  put_u32(out, static_cast<uint32_t>(cfg_text.size()));
  out += cfg_text;
  out.push_back(atlas_hash ? 1 : 0);
  std::array<uint8_t, 32> hash{};
  if (atlas_hash) hash = *atlas_hash;
  out.append(reinterpret_cast<const char*>(hash.data()), hash.size());
  auto refs = params.tensor_refs();
  put_u32(out, static_cast<uint32_t>(refs.size()));
  for (const auto& r : refs) {
    put_u32(out, static_cast<uint32_t>(r.name.size()));
    out += r.name;
    put_u32(out, static_cast<uint32_t>(r.shape.size()));
    for (int d : r.shape) put_u32(out, static_cast<uint32_t>(d));
    out.append(reinterpret_cast<const char*>(r.data), r.size * sizeof(float));
  }
  write_file(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::string in = read_file(path);
  size_t off = 0;
  if (in.size() < sizeof(kModelMagic) ||
      std::memcmp(in.data(), kModelMagic, sizeof(kModelMagic)) != 0) {
    throw FormatError("model file: bad magic");
  }
  off = sizeof(kModelMagic);
  uint32_t version = get_u32(in, off);
  if (version != kModelVersion) {
    throw FormatError("model file: unsupported version " + std::to_string(version));
  }
  uint32_t cfg_len = get_u32(in, off);
  if (off + cfg_len > in.size()) throw FormatError("model file: truncated config");
  KeyValueConfig kv = KeyValueConfig::parse(in.substr(off, cfg_len));
  off += cfg_len;

  Checkpoint ck;
  ck.config = ModelConfig::from_config(kv);
  if (off >= in.size()) throw FormatError("model file: truncated");
  ck.has_atlas_hash = in[off] != 0;
  ++off;
  if (off + 32 > in.size()) throw FormatError("model file: truncated hash");
  std::memcpy(ck.atlas_hash.data(), in.data() + off, 32);
  off += 32;

  ck.params.allocate(ck.config);
  auto refs = ck.params.tensor_refs();
  uint32_t n_tensors = get_u32(in, off);
  if (n_tensors != refs.size()) {
    throw FormatError("model file: tensor count mismatch");
  }
  for (auto& r : refs) {
    uint32_t name_len = get_u32(in, off);
    if (off + name_len > in.size()) throw FormatError("model file: truncated name");
    std::string name = in.substr(off, name_len);
    off += name_len;
    if (name != r.name) {
      throw FormatError("model file: unexpected tensor '" + name +
                        "' (wanted '" + r.name + "')");
    }
    uint32_t ndim = get_u32(in, off);
    if (ndim != r.shape.size()) {
      throw FormatError("model file: rank mismatch for " + name);
    }
    for (uint32_t d = 0; d < ndim; ++d) {
      uint32_t dim = get_u32(in, off);
      if (dim != static_cast<uint32_t>(r.shape[d])) {
        throw FormatError("model file: shape mismatch for " + name);
      }
    }
    size_t bytes = r.size * sizeof(float);
    if (off + bytes > in.size()) throw FormatError("model file: truncated tensor " + name);
    std::memcpy(r.data, in.data() + off, bytes);
    off += bytes;
  }
  if (off != in.size()) throw FormatError("model file: trailing bytes");
  return ck;
}

std::string parameters_checksum(Parameters<float>& params) {
  std::string buf;
  for (const auto& r : params.tensor_refs()) {
    buf.append(reinterpret_cast<const char*>(r.data), r.size * sizeof(float));
  }
  return sha256_hex(buf);
}

}  // namespace pixellm
