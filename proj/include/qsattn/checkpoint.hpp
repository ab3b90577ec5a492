#ifndef QSATTN_CHECKPOINT_HPP
#define QSATTN_CHECKPOINT_HPP

#include <map>
#include <string>
#include <vector>

#include "qsattn/tensor.hpp"

namespace qsattn {

// On-disk checkpoint: `<stem>.bin` holds the flat little-endian 32-bit float
// payload, `<stem>.manifest` lists `name ndim dims... byte-offset` per tensor
// under the `QSATTN-CKPT-1` version header.
inline constexpr const char* kCheckpointMagic = "QSATTN-CKPT-1";

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

void save_checkpoint(const std::string& stem, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> load_checkpoint(const std::string& stem);

inline std::map<std::string, CheckpointEntry> checkpoint_index(std::vector<CheckpointEntry> entries) {
  std::map<std::string, CheckpointEntry> m;
  for (auto& e : entries) {
    std::string key = e.name;
    m.emplace(std::move(key), std::move(e));
  }
  return m;
}

template <std::floating_point S>
CheckpointEntry make_entry(std::string name, const Tensor<S>& t) {
  CheckpointEntry e;
  e.name = std::move(name);
  e.shape = t.shape();
  e.values.resize(t.data().size());
  for (size_t i = 0; i < e.values.size(); ++i) e.values[i] = static_cast<float>(t.data()[i]);
  return e;
}

template <std::floating_point S>
void assign_from_entry(Tensor<S>& t, const CheckpointEntry& e) {
  if (t.shape() != e.shape)
    throw IoError("checkpoint: tensor '" + e.name + "' has shape " + shape_str(e.shape) + ", expected " +
                  shape_str(t.shape()));
  auto& d = t.mutable_data();
  for (size_t i = 0; i < d.size(); ++i) d[i] = static_cast<S>(e.values[i]);
}

// Rounds a tensor's values onto the 32-bit float grid. Trainable state lives
// on that grid so the f32 checkpoint format round-trips bitwise.
template <std::floating_point S>
void quantize_to_f32(Tensor<S>& t) {
  if constexpr (!std::is_same_v<S, float>) {
    for (auto& v : t.mutable_data()) v = static_cast<S>(static_cast<float>(v));
  }
}

}  // namespace qsattn

#endif  // QSATTN_CHECKPOINT_HPP
