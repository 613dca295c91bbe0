#include "rwkv/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "weight files assume a little-endian host");

namespace rwkv {

using nlohmann::json;

std::uint64_t param_count(const ModelConfig& cfg) {
  if (!cfg.valid()) throw std::invalid_argument("param_count: invalid config");
  if (cfg.ffn() != 4 * cfg.dim)
    throw std::invalid_argument("param_count: closed form assumes ffn_dim = 4*dim");
  const std::uint64_t v = cfg.vocab, d = cfg.dim, l = cfg.layers;
  return 2 * v * d + 13 * d * d * l + d * (11 * l + 4);
}

std::uint64_t flops_per_token(const ModelConfig& cfg) {
  if (!cfg.valid()) throw std::invalid_argument("flops_per_token: invalid config");
  if (cfg.ffn() != 4 * cfg.dim)
    throw std::invalid_argument("flops_per_token: closed form assumes ffn_dim = 4*dim");
  const std::uint64_t v = cfg.vocab, d = cfg.dim, l = cfg.layers;
  return 2 * (v * d + 13 * d * d * l);
}

std::uint64_t scalar_count(const Parameters& p) {
  std::uint64_t n = 0;
  visit_tensors(p, [&](const std::string&, const double*,
                       const std::vector<std::size_t>& shape) {
    std::uint64_t s = 1;
    for (std::size_t dim : shape) s *= dim;
    n += s;
  });
  return n;
}

Parameters make_parameters(const ModelConfig& cfg) {
  if (!cfg.valid()) throw std::invalid_argument("make_parameters: invalid config");
  const std::size_t d = cfg.dim, h = cfg.ffn();
  Parameters p;
  p.embedding = Matrix(cfg.vocab, d);
  p.ln0 = {Vector(d, 0.0), Vector(d, 0.0)};
  p.ln_out = {Vector(d, 0.0), Vector(d, 0.0)};
  p.head = Matrix(cfg.vocab, d);
  p.blocks.resize(cfg.layers);
  for (BlockParams& b : p.blocks) {
    b.ln1 = {Vector(d, 0.0), Vector(d, 0.0)};
    b.ln2 = {Vector(d, 0.0), Vector(d, 0.0)};
    b.tm.w_r = Matrix(d, d);
    b.tm.w_k = Matrix(d, d);
    b.tm.w_v = Matrix(d, d);
    b.tm.w_o = Matrix(d, d);
    b.tm.mu_r.assign(d, 0.0);
    b.tm.mu_k.assign(d, 0.0);
    b.tm.mu_v.assign(d, 0.0);
    b.tm.wkv.decay_param.assign(d, 0.0);
    b.tm.wkv.bonus.assign(d, 0.0);
    b.cm.w_r = Matrix(d, d);
    b.cm.w_k = Matrix(h, d);
    b.cm.w_v = Matrix(d, h);
    b.cm.mu_r.assign(d, 0.0);
    b.cm.mu_k.assign(d, 0.0);
  }
  return p;
}

Matrix forward_parallel(const Parameters& params, const ModelConfig& cfg,
                        std::span<const int> tokens, ModelActs* acts) {
  if (tokens.empty()) throw std::invalid_argument("forward_parallel: empty input");
  if (tokens.size() > cfg.ctx_len)
    throw std::invalid_argument("forward_parallel: sequence longer than ctx_len");
  const std::size_t t_len = tokens.size();
  const std::size_t d = cfg.dim;
  Matrix x(t_len, d);
  for (std::size_t t = 0; t < t_len; ++t) {
    const int tok = tokens[t];
    if (tok < 0 || static_cast<std::size_t>(tok) >= cfg.vocab)
      throw std::invalid_argument("forward_parallel: token id out of range");
    const double* src = params.embedding.row(static_cast<std::size_t>(tok));
    std::memcpy(x.row(t), src, d * sizeof(double));
  }
  if (acts) {
    acts->embedded = x;
    acts->blocks.resize(params.blocks.size());
  }
  // An empty ln0 disables the post-embedding normalization (used by the
  // conventional-init ablation arm).
  if (!params.ln0.gamma.empty())
    x = layer_norm_rows(x, params.ln0.gamma, params.ln0.beta);
  if (acts) acts->ln0_out = x;
  for (std::size_t l = 0; l < params.blocks.size(); ++l)
    x = block_forward(x, params.blocks[l], acts ? &acts->blocks[l] : nullptr);
  if (acts) acts->body_out = x;
  Matrix normed = layer_norm_rows(x, params.ln_out.gamma, params.ln_out.beta);
  if (acts) acts->ln_out_out = normed;
  return project(normed, params.head);
}

namespace {

constexpr char kMagic[] = "RWKVSPEC1";
constexpr std::size_t kMagicLen = 9;

json config_to_json(const ModelConfig& cfg) {
  return json{{"vocab", cfg.vocab},
              {"dim", cfg.dim},
              {"layers", cfg.layers},
              {"ffn_dim", cfg.ffn()},
              {"ctx_len", cfg.ctx_len}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.vocab = j.at("vocab").get<std::size_t>();
  cfg.dim = j.at("dim").get<std::size_t>();
  cfg.layers = j.at("layers").get<std::size_t>();
  cfg.ffn_dim = j.at("ffn_dim").get<std::size_t>();
  cfg.ctx_len = j.at("ctx_len").get<std::size_t>();
  return cfg;
}

}  // namespace

void save_weights(const Parameters& params, const ModelConfig& cfg,
                  const std::string& path) {
  json manifest = json::array();
  std::uint64_t offset = 0;
  visit_tensors(params, [&](const std::string& name, const double*,
                            const std::vector<std::size_t>& shape) {
    std::uint64_t count = 1;
    for (std::size_t s : shape) count *= s;
    manifest.push_back({{"name", name}, {"shape", shape}, {"offset", offset}});
    offset += count * sizeof(double);
  });
  const json header = {{"config", config_to_json(cfg)}, {"tensors", manifest}};
  const std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw WeightsError(WeightsErrorKind::Io, "cannot open for writing: " + path);
  out.write(kMagic, kMagicLen);
  const std::uint64_t header_len = header_text.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  visit_tensors(params, [&](const std::string&, const double* data,
                            const std::vector<std::size_t>& shape) {
    std::uint64_t count = 1;
    for (std::size_t s : shape) count *= s;
    out.write(reinterpret_cast<const char*>(data),
              static_cast<std::streamsize>(count * sizeof(double)));
  });
  out.flush();
  if (!out) throw WeightsError(WeightsErrorKind::Io, "write failed: " + path);
}

namespace {

struct ParsedHeader {
  ModelConfig cfg;
  json tensors;
  std::uint64_t payload_start = 0;
};

ParsedHeader read_header(std::ifstream& in, const std::string& path) {
  char magic[kMagicLen];
  if (!in.read(magic, kMagicLen))
    throw WeightsError(WeightsErrorKind::Truncated, "file too short for magic: " + path);
  if (std::memcmp(magic, kMagic, kMagicLen) != 0)
    throw WeightsError(WeightsErrorKind::BadMagic, "bad magic: " + path);
  std::uint64_t header_len = 0;
  if (!in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len)))
    throw WeightsError(WeightsErrorKind::Truncated, "file too short for header length: " + path);
  std::string header_text(header_len, '\0');
  if (!in.read(header_text.data(), static_cast<std::streamsize>(header_len)))
    throw WeightsError(WeightsErrorKind::Truncated, "truncated header: " + path);
  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::exception& e) {
    throw WeightsError(WeightsErrorKind::ShapeMismatch,
                       std::string("unparsable header: ") + e.what());
  }
  ParsedHeader out;
  try {
    out.cfg = config_from_json(header.at("config"));
    out.tensors = header.at("tensors");
  } catch (const json::exception& e) {
    throw WeightsError(WeightsErrorKind::ShapeMismatch,
                       std::string("malformed header: ") + e.what());
  }
  out.payload_start = kMagicLen + sizeof(std::uint64_t) + header_len;
  return out;
}

}  // namespace

ModelConfig peek_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WeightsError(WeightsErrorKind::Io, "cannot open: " + path);
  return read_header(in, path).cfg;
}

std::pair<Parameters, ModelConfig> load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WeightsError(WeightsErrorKind::Io, "cannot open: " + path);
  ParsedHeader header = read_header(in, path);
  const ModelConfig cfg = header.cfg;
  if (!cfg.valid())
    throw WeightsError(WeightsErrorKind::ShapeMismatch, "invalid config in header");
  Parameters params = make_parameters(cfg);

  // Index the manifest by name, validating entries as declared.
  struct Entry {
    std::vector<std::size_t> shape;
    std::uint64_t offset;
  };
  std::map<std::string, Entry> index;
  for (const auto& t : header.tensors) {
    try {
      index[t.at("name").get<std::string>()] =
          Entry{t.at("shape").get<std::vector<std::size_t>>(),
                t.at("offset").get<std::uint64_t>()};
    } catch (const json::exception& e) {
      throw WeightsError(WeightsErrorKind::ShapeMismatch,
                         std::string("malformed manifest entry: ") + e.what());
    }
  }

  in.seekg(0, std::ios::end);
  const std::uint64_t file_size = static_cast<std::uint64_t>(in.tellg());

  visit_tensors(params, [&](const std::string& name, double* data,
                            const std::vector<std::size_t>& shape) {
    auto it = index.find(name);
    if (it == index.end())
      throw WeightsError(WeightsErrorKind::ShapeMismatch, "missing tensor: " + name);
    if (it->second.shape != shape)
      throw WeightsError(WeightsErrorKind::ShapeMismatch,
                         "shape mismatch for tensor: " + name);
    std::uint64_t count = 1;
    for (std::size_t s : shape) count *= s;
    const std::uint64_t bytes = count * sizeof(double);
    const std::uint64_t at = header.payload_start + it->second.offset;
    if (at + bytes > file_size)
      throw WeightsError(WeightsErrorKind::Truncated,
                         "truncated payload for tensor: " + name);
    in.seekg(static_cast<std::streamoff>(at));
    if (!in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(bytes)))
      throw WeightsError(WeightsErrorKind::Truncated,
                         "read failed for tensor: " + name);
  });
  return {std::move(params), cfg};
}

ModelConfig load_config_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("unparsable config " + path + ": " + e.what());
  }
  ModelConfig cfg;
  cfg.vocab = j.value("vocab", cfg.vocab);
  cfg.dim = j.value("dim", cfg.dim);
  cfg.layers = j.value("layers", cfg.layers);
  cfg.ffn_dim = j.value("ffn_dim", std::size_t{0});
  cfg.ctx_len = j.value("ctx_len", cfg.ctx_len);
  if (!cfg.valid()) throw std::runtime_error("invalid config: " + path);
  return cfg;
}

void save_config_json(const ModelConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config: " + path);
  out << config_to_json(cfg).dump(2) << "\n";
}

}  // namespace rwkv
