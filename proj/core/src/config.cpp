#include "depthmae/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace depthmae {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long out = 0;
  try {
    if (!v.empty() && v.front() == '-') throw std::invalid_argument(v);
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a nonnegative integer, got '" + v + "'");
  }
  if (used != v.size()) throw ConfigError(key, "expected a nonnegative integer, got '" + v + "'");
  return static_cast<std::size_t>(out);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
  if (used != v.size()) throw ConfigError(key, "expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

fs::path resolve(const fs::path& base, const std::string& v) {
  if (v.empty()) return {};
  fs::path p(v);
  if (p.is_relative() && !base.empty()) p = base / p;
  return p.lexically_normal();
}

using Setter = std::function<void(RunConfig&, const std::string&, const fs::path&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto size_key = [&t](const char* key, std::size_t ModelConfig::*field) {
      t[key] = [key, field](RunConfig& c, const std::string& v, const fs::path&) { c.model.*field = to_size(key, v); };
    };
    size_key("image_size", &ModelConfig::image_size);
    size_key("patch_size", &ModelConfig::patch_size);
    size_key("channels", &ModelConfig::channels);
    size_key("enc_layers", &ModelConfig::enc_layers);
    size_key("enc_heads", &ModelConfig::enc_heads);
    size_key("enc_dim", &ModelConfig::enc_dim);
    size_key("dec_layers", &ModelConfig::dec_layers);
    size_key("dec_heads", &ModelConfig::dec_heads);
    size_key("dec_dim", &ModelConfig::dec_dim);
    size_key("mlp_ratio", &ModelConfig::mlp_ratio);
    t["mask_ratio"] = [](RunConfig& c, const std::string& v, const fs::path&) { c.model.mask_ratio = to_double("mask_ratio", v); };
    t["max_depth"] = [](RunConfig& c, const std::string& v, const fs::path&) { c.model.max_depth = to_double("max_depth", v); };

    t["epochs"] = [](RunConfig& c, const std::string& v, const fs::path&) { c.train.epochs = to_size("epochs", v); };
    t["batch_size"] = [](RunConfig& c, const std::string& v, const fs::path&) { c.train.batch_size = to_size("batch_size", v); };
    t["learning_rate"] = [](RunConfig& c, const std::string& v, const fs::path&) { c.train.learning_rate = to_double("learning_rate", v); };
    t["weight_decay"] = [](RunConfig& c, const std::string& v, const fs::path&) { c.train.weight_decay = to_double("weight_decay", v); };
    t["beta1"] = [](RunConfig& c, const std::string& v, const fs::path&) { c.train.beta1 = to_double("beta1", v); };
    t["beta2"] = [](RunConfig& c, const std::string& v, const fs::path&) { c.train.beta2 = to_double("beta2", v); };
    t["adam_eps"] = [](RunConfig& c, const std::string& v, const fs::path&) { c.train.adam_eps = to_double("adam_eps", v); };
    t["cosine_decay"] = [](RunConfig& c, const std::string& v, const fs::path&) { c.train.cosine_decay = to_bool("cosine_decay", v); };
    t["shuffle"] = [](RunConfig& c, const std::string& v, const fs::path&) { c.train.shuffle = to_bool("shuffle", v); };
    t["seed"] = [](RunConfig& c, const std::string& v, const fs::path&) { c.train.seed = to_size("seed", v); };
    t["checkpoint_every"] = [](RunConfig& c, const std::string& v, const fs::path&) { c.train.checkpoint_every = to_size("checkpoint_every", v); };
    t["resume_path"] = [](RunConfig& c, const std::string& v, const fs::path& b) { c.train.resume_path = resolve(b, v); };
    t["init_checkpoint"] = [](RunConfig& c, const std::string& v, const fs::path& b) { c.train.init_checkpoint = resolve(b, v); };
    t["precision"] = [](RunConfig& c, const std::string& v, const fs::path&) {
      try {
        c.train.precision = parse_precision(v);
      } catch (const std::invalid_argument& e) {
        throw ConfigError("precision", e.what());
      }
    };

    t["manifest"] = [](RunConfig& c, const std::string& v, const fs::path& b) { c.manifest = resolve(b, v); };
    t["dataset_root"] = [](RunConfig& c, const std::string& v, const fs::path& b) { c.dataset_root = resolve(b, v); };
    t["out_dir"] = [](RunConfig& c, const std::string& v, const fs::path& b) { c.out_dir = resolve(b, v); };
    t["depth_scale"] = [](RunConfig& c, const std::string& v, const fs::path&) { c.depth_scale = to_double("depth_scale", v); };
    return t;
  }();
  return table;
}

}  // namespace

RunConfig RunConfig::defaults(Stage stage) {
  RunConfig c;
  c.train = TrainConfig::defaults(stage);
  return c;
}

RunConfig RunConfig::parse(std::string_view text, Stage stage, const fs::path& base_dir) {
  RunConfig c = defaults(stage);
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(body, "line " + std::to_string(line_no) + " is not of the form key = value");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (setters().count(key) && !seen.insert(key).second) throw ConfigError(key, "given more than once");
    c.set(key, value, base_dir);
  }
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value, const fs::path& base_dir) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw ConfigError(key, "unknown configuration key");
  it->second(*this, value, base_dir);
}

RunConfig RunConfig::load(const fs::path& path, Stage stage) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), stage, fs::absolute(path).parent_path());
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  auto path_text = [](const fs::path& p) { return p.empty() ? std::string() : fs::absolute(p).lexically_normal().string(); };
  os << "# stage: " << stage_name(train.stage) << '\n';
  os << "image_size = " << model.image_size << '\n';
  os << "patch_size = " << model.patch_size << '\n';
  os << "channels = " << model.channels << '\n';
  os << "enc_layers = " << model.enc_layers << '\n';
  os << "enc_heads = " << model.enc_heads << '\n';
  os << "enc_dim = " << model.enc_dim << '\n';
  os << "dec_layers = " << model.dec_layers << '\n';
  os << "dec_heads = " << model.dec_heads << '\n';
  os << "dec_dim = " << model.dec_dim << '\n';
  os << "mlp_ratio = " << model.mlp_ratio << '\n';
  os << "mask_ratio = " << num(model.mask_ratio) << '\n';
  os << "max_depth = " << num(model.max_depth) << '\n';
  os << "epochs = " << train.epochs << '\n';
  os << "batch_size = " << train.batch_size << '\n';
  os << "learning_rate = " << num(train.learning_rate) << '\n';
  os << "weight_decay = " << num(train.weight_decay) << '\n';
  os << "beta1 = " << num(train.beta1) << '\n';
  os << "beta2 = " << num(train.beta2) << '\n';
  os << "adam_eps = " << num(train.adam_eps) << '\n';
  os << "cosine_decay = " << (train.cosine_decay ? "true" : "false") << '\n';
  os << "shuffle = " << (train.shuffle ? "true" : "false") << '\n';
  os << "seed = " << train.seed << '\n';
  os << "checkpoint_every = " << train.checkpoint_every << '\n';
  os << "precision = " << precision_name(train.precision) << '\n';
  if (!train.resume_path.empty()) os << "resume_path = " << path_text(train.resume_path) << '\n';
  if (!train.init_checkpoint.empty()) os << "init_checkpoint = " << path_text(train.init_checkpoint) << '\n';
  if (!manifest.empty()) os << "manifest = " << path_text(manifest) << '\n';
  if (!dataset_root.empty()) os << "dataset_root = " << path_text(dataset_root) << '\n';
  if (!out_dir.empty()) os << "out_dir = " << path_text(out_dir) << '\n';
  os << "depth_scale = " << num(depth_scale) << '\n';
  return os.str();
}

void RunConfig::validate() const {
  if (manifest.empty()) throw ConfigError("manifest", "is required");
  if (out_dir.empty()) throw ConfigError("out_dir", "is required (set it in the config or pass --out-dir)");
  if (!(depth_scale > 0.0)) throw ConfigError("depth_scale", "must be positive");
  model.validate();
  train.validate();
}

}  // namespace depthmae
