#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "actbridge/tensor.hpp"

namespace actbridge {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Named map of trainable/frozen tensors. Iteration order is the sorted
// name order, which every consumer (optimizer, serializer, gradient
// check) relies on for determinism.
class ParameterStore {
 public:
  Tensor add(const std::string& name, Tensor t, bool trainable = true);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const;

  bool trainable(const std::string& name) const;
  void set_trainable(const std::string& name, bool trainable);
  // Flips the trainable flag on every parameter whose name starts with
  // the prefix.
  void set_trainable_prefix(const std::string& prefix, bool trainable);

  std::vector<std::string> names() const;
  std::vector<std::string> trainable_names() const;
  std::size_t total_count() const;  // total scalar parameters

  void zero_grads();

  // Rounds every value to the nearest float32. Keeps in-memory state
  // identical to what a checkpoint round-trip restores.
  void round_to_f32();

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  struct Entry {
    Tensor tensor;
    bool trainable = true;
  };
  std::map<std::string, Entry> entries_;
};

// Checkpoint layout (version 1), little-endian throughout:
//   magic   "ABCK" (4 bytes)
//   u32     format version
//   u32     metadata length, then metadata bytes (free-form text)
//   u64     parameter count
//   per parameter:
//     u32   name length, then name bytes
//     u32   rank (always 2)
//     u64   extents[rank]
//     f32   values, row-major
// Values are stored at 32-bit precision; the round-trip is bit-exact for
// stores whose values are float32-representable (see round_to_f32).
void save_store(const std::string& path, const ParameterStore& store,
                const std::string& metadata);
// Loads into an existing store; every file entry must match an existing
// parameter's shape. Names present in the store but missing from the
// file are an error, as are extras in the file.
void load_store(const std::string& path, ParameterStore& store,
                std::string* metadata_out = nullptr);

}  // namespace actbridge
