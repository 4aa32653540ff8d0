#include <cstring>
#include <filesystem>
#include <fstream>

#include "g2/checkpoint.hpp"
#include "g2/common.hpp"

namespace g2::train {

namespace {

void w_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void w_i32(std::ostream& os, std::int32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void w_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void w_str(std::ostream& os, const std::string& s) {
  w_u64(os, s.size());
  os.write(s.data(), std::streamsize(s.size()));
}
void w_f32s(std::ostream& os, const std::vector<float>& v) {
  w_u64(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * 4));
}

std::uint32_t r_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
std::int32_t r_i32(std::istream& is) {
  std::int32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
std::uint64_t r_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
std::string r_str(std::istream& is) {
  std::string s(r_u64(is), '\0');
  is.read(s.data(), std::streamsize(s.size()));
  return s;
}
std::vector<float> r_f32s(std::istream& is) {
  std::vector<float> v(r_u64(is));
  is.read(reinterpret_cast<char*>(v.data()), std::streamsize(v.size() * 4));
  return v;
}

void w_moments(std::ostream& os, const std::vector<std::vector<float>>& m) {
  w_u64(os, m.size());
  for (const auto& v : m) w_f32s(os, v);
}
std::vector<std::vector<float>> r_moments(std::istream& is) {
  std::vector<std::vector<float>> m(r_u64(is));
  for (auto& v : m) v = r_f32s(is);
  return m;
}

}  // namespace

void save_checkpoint(const CheckpointContainer& ck, const std::string& path) {
  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + tmp.string());
    os.write("G2CK", 4);
    w_u32(os, ck.version);
    w_u64(os, ck.config_hash);
    w_str(os, ck.config_text);
    w_u32(os, ck.step);
    w_u64(os, ck.rng_state.size());
    for (auto v : ck.rng_state) w_u64(os, v);
    w_u64(os, ck.params.size());
    for (const auto& [name, data] : ck.params) {
      w_str(os, name);
      w_f32s(os, data);
    }
    w_i32(os, ck.adam_t_gen);
    w_moments(os, ck.m_gen);
    w_moments(os, ck.v_gen);
    w_i32(os, ck.adam_t_disc);
    w_moments(os, ck.m_disc);
    w_moments(os, ck.v_disc);
    if (!os) throw std::runtime_error("save_checkpoint: write failed: " + tmp.string());
  }
  fs::rename(tmp, target);  // atomic publish
}

CheckpointContainer load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (std::memcmp(magic, "G2CK", 4) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  CheckpointContainer ck;
  ck.version = r_u32(is);
  if (ck.version != 1)
    throw std::runtime_error("load_checkpoint: unsupported version in " + path);
  ck.config_hash = r_u64(is);
  ck.config_text = r_str(is);
  ck.step = r_u32(is);
  ck.rng_state.resize(r_u64(is));
  for (auto& v : ck.rng_state) v = r_u64(is);
  ck.params.resize(r_u64(is));
  for (auto& [name, data] : ck.params) {
    name = r_str(is);
    data = r_f32s(is);
  }
  ck.adam_t_gen = r_i32(is);
  ck.m_gen = r_moments(is);
  ck.v_gen = r_moments(is);
  ck.adam_t_disc = r_i32(is);
  ck.m_disc = r_moments(is);
  ck.v_disc = r_moments(is);
  if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);
  return ck;
}

}  // namespace g2::train
