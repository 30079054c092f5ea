#include "depthmae/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace depthmae {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'D', 'M', 'A', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kByteOrderMark = 0x01020304;

template <typename U>
void put_le(std::ostream& out, U value) {
  unsigned char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get_le(std::istream& in) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw CheckpointError("checkpoint truncated");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

void put_string(std::ostream& out, const std::string& s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_bytes(std::istream& in, std::uint64_t n) {
  if (n > (1ULL << 32)) throw CheckpointError("checkpoint field length is implausible");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw CheckpointError("checkpoint truncated");
  return s;
}

void put_scalar(std::ostream& out, double v, unsigned width) {
  if (width == 4) {
    put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  } else {
    put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
}

double get_scalar(std::istream& in, unsigned width) {
  if (width == 4) return static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(in)));
  return std::bit_cast<double>(get_le<std::uint64_t>(in));
}

std::map<std::string, std::string> model_metadata(const ModelConfig& m) {
  return {
      {"model.image_size", std::to_string(m.image_size)},
      {"model.patch_size", std::to_string(m.patch_size)},
      {"model.channels", std::to_string(m.channels)},
      {"model.enc_layers", std::to_string(m.enc_layers)},
      {"model.enc_heads", std::to_string(m.enc_heads)},
      {"model.enc_dim", std::to_string(m.enc_dim)},
      {"model.dec_layers", std::to_string(m.dec_layers)},
      {"model.dec_heads", std::to_string(m.dec_heads)},
      {"model.dec_dim", std::to_string(m.dec_dim)},
      {"model.mlp_ratio", std::to_string(m.mlp_ratio)},
      {"model.mask_ratio", hex_double(m.mask_ratio)},
      {"max_depth", hex_double(m.max_depth)},
  };
}

std::size_t take_size(std::map<std::string, std::string>& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw CheckpointError("checkpoint metadata lacks " + key);
  const std::size_t v = std::stoull(it->second);
  meta.erase(it);
  return v;
}

double take_double(std::map<std::string, std::string>& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw CheckpointError("checkpoint metadata lacks " + key);
  const double v = parse_double(it->second);
  meta.erase(it);
  return v;
}

}  // namespace

std::string stage_name(Stage stage) { return stage == Stage::kPretrain ? "pretrain" : "finetune"; }

Stage parse_stage(const std::string& name) {
  if (name == "pretrain") return Stage::kPretrain;
  if (name == "finetune") return Stage::kFinetune;
  throw std::invalid_argument("unknown stage '" + name + "'");
}

std::string hex_double(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", value);
  return buf;
}

double parse_double(const std::string& text) {
  std::size_t used = 0;
  const double v = std::stod(text, &used);
  if (used != text.size()) throw std::invalid_argument("not a number: '" + text + "'");
  return v;
}

void Checkpoint::save(const fs::path& path) const {
  if (scalar_bytes != 4 && scalar_bytes != 8) throw CheckpointError("scalar width must be 4 or 8 bytes");
  std::ostringstream meta;
  auto all = model_metadata(model);
  all["depth_scale"] = hex_double(depth_scale);
  for (const auto& [k, v] : metadata) all[k] = v;
  for (const auto& [k, v] : all) meta << k << '=' << v << '\n';
  const std::string meta_text = meta.str();

  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    put_le<std::uint32_t>(out, kVersion);
    put_le<std::uint32_t>(out, kByteOrderMark);
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(scalar_bytes));
    put_le<std::uint8_t>(out, stage == Stage::kPretrain ? 0 : 1);
    put_le<std::uint16_t>(out, 0);
    put_le<std::uint64_t>(out, meta_text.size());
    out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));
    put_le<std::uint64_t>(out, tensors.size());
    for (const auto& t : tensors) {
      if (shape_numel(t.shape) != t.values.size()) throw CheckpointError("tensor " + t.name + " has inconsistent shape");
      put_string(out, t.name);
      put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
      for (std::size_t d : t.shape) put_le<std::uint64_t>(out, d);
      for (double v : t.values) put_scalar(out, v, scalar_bytes);
    }
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint Checkpoint::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw CheckpointError(path.string() + " is not a depthmae checkpoint");
  }
  const auto version = get_le<std::uint32_t>(in);
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  if (get_le<std::uint32_t>(in) != kByteOrderMark) throw CheckpointError("checkpoint byte-order mark mismatch");
  Checkpoint ckpt;
  ckpt.scalar_bytes = get_le<std::uint8_t>(in);
  if (ckpt.scalar_bytes != 4 && ckpt.scalar_bytes != 8) throw CheckpointError("unsupported scalar width");
  const auto stage = get_le<std::uint8_t>(in);
  if (stage > 1) throw CheckpointError("unknown stage tag");
  ckpt.stage = stage == 0 ? Stage::kPretrain : Stage::kFinetune;
  get_le<std::uint16_t>(in);

  std::istringstream meta(get_bytes(in, get_le<std::uint64_t>(in)));
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("malformed metadata line '" + line + "'");
    ckpt.metadata[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto& m = ckpt.metadata;
  ckpt.model.image_size = take_size(m, "model.image_size");
  ckpt.model.patch_size = take_size(m, "model.patch_size");
  ckpt.model.channels = take_size(m, "model.channels");
  ckpt.model.enc_layers = take_size(m, "model.enc_layers");
  ckpt.model.enc_heads = take_size(m, "model.enc_heads");
  ckpt.model.enc_dim = take_size(m, "model.enc_dim");
  ckpt.model.dec_layers = take_size(m, "model.dec_layers");
  ckpt.model.dec_heads = take_size(m, "model.dec_heads");
  ckpt.model.dec_dim = take_size(m, "model.dec_dim");
  ckpt.model.mlp_ratio = take_size(m, "model.mlp_ratio");
  ckpt.model.mask_ratio = take_double(m, "model.mask_ratio");
  ckpt.model.max_depth = take_double(m, "max_depth");
  ckpt.depth_scale = take_double(m, "depth_scale");

  const auto count = get_le<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name = get_bytes(in, get_le<std::uint32_t>(in));
    const auto rank = get_le<std::uint32_t>(in);
    if (rank > 8) throw CheckpointError("tensor " + t.name + " has implausible rank");
    for (std::uint32_t d = 0; d < rank; ++d) t.shape.push_back(get_le<std::uint64_t>(in));
    const std::size_t n = shape_numel(t.shape);
    if (n > (1ULL << 31)) throw CheckpointError("tensor " + t.name + " is implausibly large");
    t.values.resize(n);
    for (double& v : t.values) v = get_scalar(in, ckpt.scalar_bytes);
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

const StoredTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

template <typename T>
void store_params(Checkpoint& ckpt, const ModelParams<T>& params) {
  for (const auto& p : params.named()) {
    StoredTensor t{p.name, p.tensor.shape(), std::vector<double>(p.tensor.data().begin(), p.tensor.data().end())};
    ckpt.tensors.push_back(std::move(t));
  }
}

template <typename T>
InitReport load_matching(const ModelParams<T>& params, const Checkpoint& ckpt) {
  InitReport report;
  std::vector<std::string> mismatches;
  const auto named = params.named();
  for (const auto& p : named) {
    const StoredTensor* stored = ckpt.find(p.name);
    if (!stored) {
      report.not_in_checkpoint.push_back(p.name);
    } else if (stored->shape != p.tensor.shape()) {
      mismatches.push_back(p.name + " " + shape_string(stored->shape) + " vs model " + shape_string(p.tensor.shape()));
    }
  }
  if (!mismatches.empty()) {
    std::string msg = "checkpoint is incompatible with the model configuration:";
    for (const auto& m : mismatches) msg += "\n  " + m;
    throw CheckpointError(msg);
  }
  for (const auto& p : named) {
    const StoredTensor* stored = ckpt.find(p.name);
    if (!stored) continue;
    auto dst = p.tensor;
    auto span = dst.mutable_data();
    for (std::size_t i = 0; i < span.size(); ++i) span[i] = static_cast<T>(stored->values[i]);
    report.loaded.push_back(p.name);
  }
  return report;
}

template <typename T>
DepthCompletionModel<T> model_from_checkpoint(const Checkpoint& ckpt) {
  auto params = init_params<T>(ckpt.model, 0);
  const InitReport report = load_matching(params, ckpt);
  if (!report.not_in_checkpoint.empty()) {
    throw CheckpointError("checkpoint lacks parameter " + report.not_in_checkpoint.front());
  }
  return DepthCompletionModel<T>(ckpt.model, std::move(params));
}

template void store_params(Checkpoint&, const ModelParams<float>&);
template void store_params(Checkpoint&, const ModelParams<double>&);
template InitReport load_matching(const ModelParams<float>&, const Checkpoint&);
template InitReport load_matching(const ModelParams<double>&, const Checkpoint&);
template DepthCompletionModel<float> model_from_checkpoint<float>(const Checkpoint&);
template DepthCompletionModel<double> model_from_checkpoint<double>(const Checkpoint&);

}  // namespace depthmae
