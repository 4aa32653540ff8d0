#include "g2/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace g2::train {

dpim::NetConfig TrainConfig::net() const {
  dpim::NetConfig n;
  n.resolution = resolution;
  n.d_id = d_id;
  n.d_w = d_w;
  n.d_z = d_z;
  n.d_s = d_s;
  n.d_e = d_e;
  n.genp = genp;
  n.geop = geop;
  n.iff = iff;
  n.mask_per_channel = mask_per_channel;
  n.noise_injection = noise_injection;
  return n;
}

namespace {

struct Field {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

std::string fmt_f(float v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

float parse_f(const std::string& key, const std::string& v) {
  try {
    return std::stof(v);
  } catch (...) {
    fail_param("config: bad float for key '" + key + "': " + v);
  }
}

int parse_i(const std::string& key, const std::string& v) {
  try {
    return std::stoi(v);
  } catch (...) {
    fail_param("config: bad integer for key '" + key + "': " + v);
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    return std::stoull(v);
  } catch (...) {
    fail_param("config: bad integer for key '" + key + "': " + v);
  }
}

bool parse_b(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail_param("config: bad boolean for key '" + key + "': " + v);
}

// ordered map: the serialization order is the canonical one
const std::vector<std::pair<std::string, Field>>& fields() {
  auto I = [](auto getter, auto setter) {
    return Field{getter, setter};
  };
  static const std::vector<std::pair<std::string, Field>> f = {
#define G2_INT(name, member)                                              \
  {name, Field{[](const TrainConfig& c) { return std::to_string(c.member); }, \
               [](TrainConfig& c, const std::string& v) { c.member = parse_i(name, v); }}}
#define G2_U64(name, member)                                              \
  {name, Field{[](const TrainConfig& c) { return std::to_string(c.member); }, \
               [](TrainConfig& c, const std::string& v) { c.member = parse_u64(name, v); }}}
#define G2_FLT(name, member)                                       \
  {name, Field{[](const TrainConfig& c) { return fmt_f(c.member); }, \
               [](TrainConfig& c, const std::string& v) { c.member = parse_f(name, v); }}}
#define G2_BOOL(name, member)                                                   \
  {name, Field{[](const TrainConfig& c) { return c.member ? "true" : "false"; }, \
               [](TrainConfig& c, const std::string& v) { c.member = parse_b(name, v); }}}
#define G2_STR(name, member)                                 \
  {name, Field{[](const TrainConfig& c) { return c.member; }, \
               [](TrainConfig& c, const std::string& v) { c.member = v; }}}
      G2_INT("batch_size", batch_size),
      G2_FLT("lr_backbone", lr_backbone),
      G2_FLT("lr_other", lr_other),
      G2_FLT("beta1", beta1),
      G2_FLT("beta2", beta2),
      G2_INT("steps", steps),
      G2_U64("seed", seed),
      G2_INT("resolution", resolution),
      G2_INT("d_id", d_id),
      G2_INT("d_w", d_w),
      G2_INT("d_z", d_z),
      G2_INT("d_s", d_s),
      G2_INT("d_e", d_e),
      G2_BOOL("genp", genp),
      G2_BOOL("geop", geop),
      G2_BOOL("iff", iff),
      G2_BOOL("mask_per_channel", mask_per_channel),
      G2_BOOL("noise_injection", noise_injection),
      G2_FLT("lambda_div", weights.lambda_div),
      G2_FLT("lambda_rec", weights.lambda_rec),
      G2_FLT("lambda_adv", weights.lambda_adv),
      G2_FLT("lambda_id", weights.lambda_id),
      G2_FLT("lambda_geo", weights.lambda_geo),
      G2_FLT("lambda_hide", weights.lambda_hide),
      G2_FLT("lambda_lm", weights.lambda_lm),
      G2_FLT("eps_sigma", eps_sigma),
      G2_INT("checkpoint_every", checkpoint_every),
      G2_INT("r1_every", r1_every),
      G2_FLT("r1_gamma", r1_gamma),
      G2_INT("embedder_steps", embedder_steps),
      G2_INT("estimator_steps", estimator_steps),
      G2_INT("prior_steps", prior_steps),
      G2_INT("aux_batch", aux_batch),
      G2_U64("model_seed", model_seed),
      G2_INT("model_vertices", model_vertices),
      G2_INT("pool", pool),
      G2_STR("data_dir", data_dir),
      G2_STR("out_dir", out_dir),
#undef G2_INT
#undef G2_U64
#undef G2_FLT
#undef G2_BOOL
#undef G2_STR
  };
  (void)I;
  return f;
}

}  // namespace

std::string TrainConfig::serialize() const {
  std::string out;
  for (const auto& [name, field] : fields()) {
    out += name;
    out += "=";
    out += field.get(*this);
    out += "\n";
  }
  return out;
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      fail_param("config: line " + std::to_string(lineno) + " is not key=value");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    bool found = false;
    for (const auto& [name, field] : fields())
      if (name == key) {
        field.set(cfg, val);
        found = true;
        break;
      }
    if (!found) fail_param("config: unknown key '" + key + "'");
  }
  return cfg;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse(text);
}

std::uint64_t TrainConfig::hash() const { return fnv1a(serialize()); }

}  // namespace g2::train
