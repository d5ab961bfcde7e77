#pragma once

#include <memory>
#include <string>

#include "hopmix/data.hpp"
#include "hopmix/mixer.hpp"

namespace hopmix {

// Checkpoint format (little-endian):
//   "HMX1" | u32 version=1 | u32 config length | config UTF-8 echo |
//   u32 entry count | entries
// where each entry is
//   u32 name length | name | u32 rank | u64 dims... | f64 data...
// Entries cover every parameter in registry order, then the persistent
// power-iteration vectors, then data normalization stats ("data.mean",
// "data.std"). Round-trips bit-exactly.
void save_checkpoint(const std::string& path, MixerModel& model, const NormStats& stats);

struct LoadedCheckpoint {
  MixerConfig cfg;
  std::unique_ptr<MixerModel> model;
  NormStats stats;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace hopmix
