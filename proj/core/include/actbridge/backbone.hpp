#pragma once

#include <vector>

#include "actbridge/config.hpp"
#include "actbridge/param_store.hpp"
#include "actbridge/tensor.hpp"

namespace actbridge {

struct TokenizationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Segment : std::uint8_t {
  kThirdView,
  kGripperView,
  kInstruction,
  kActionQuery,
};

struct TokenSequence {
  Tensor tokens;  // L x d
  std::vector<Segment> segment_ids;
  std::size_t query_start = 0;
  std::size_t query_len = 0;
};

// Per-layer conditions tapped from the encoder: raw[i] covers the
// non-query tokens, aq[i] the ActionQuery span, both from layer i+1's
// output (1-based layers 1..M).
struct ConditionSet {
  std::vector<Tensor> raw;
  std::vector<Tensor> aq;
};

struct ObservationStub {
  std::vector<double> third_view_grid;  // G*G*c, row-major cells
  std::vector<double> gripper_patch;    // g*g*c
  std::vector<int> instruction_ids;
  std::vector<double> proprio;  // P_dim
};

// Trainable multi-layer encoder standing in for the VLM. Registers its
// parameters under the "backbone." prefix; the ActionQuery embeddings
// live at "backbone.action_query" and stay trainable in freeze mode.
class BackboneStub {
 public:
  BackboneStub(const PolicyConfig& cfg, ParameterStore& store, Rng& rng);

  // Projects grid patches, gripper patches, and instruction embeddings
  // to width d. The query span is not yet present.
  TokenSequence tokenize_observation(const ObservationStub& obs) const;

  // Appends the trainable query tokens as a contiguous trailing span.
  TokenSequence insert_action_queries(const TokenSequence& seq) const;

  // Runs the M pre-norm blocks and taps every layer's output.
  ConditionSet encode_layers(const TokenSequence& seq) const;

  // tokenize + insert queries + encode.
  ConditionSet encode(const ObservationStub& obs) const;

  const PolicyConfig& config() const { return cfg_; }

  // Excludes encoder weights from optimization; ActionQuery embeddings
  // remain trainable either way.
  static void set_frozen(ParameterStore& store, bool frozen);

 private:
  Tensor p(const std::string& name) const { return store_->get(name); }
  Tensor block(std::size_t layer, const Tensor& x) const;

  PolicyConfig cfg_;
  const ParameterStore* store_;
};

}  // namespace actbridge
