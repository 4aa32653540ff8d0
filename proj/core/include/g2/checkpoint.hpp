#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace g2::train {

/// G2CK container: magic, version, config hash + embedded config text,
/// step counter, rng state, name-indexed little-endian float32 parameter
/// blobs, and the Adam moments for both optimizers. Loading a saved
/// container restores training bit-exactly for the next step.
struct CheckpointContainer {
  std::uint32_t version = 1;
  std::uint64_t config_hash = 0;
  std::string config_text;
  std::uint32_t step = 0;
  std::vector<std::uint64_t> rng_state;
  std::vector<std::pair<std::string, std::vector<float>>> params;
  std::int32_t adam_t_gen = 0, adam_t_disc = 0;
  std::vector<std::vector<float>> m_gen, v_gen, m_disc, v_disc;
};

void save_checkpoint(const CheckpointContainer& ck, const std::string& path);
CheckpointContainer load_checkpoint(const std::string& path);

}  // namespace g2::train
