#include "actbridge/backbone.hpp"

#include <cmath>

namespace actbridge {

namespace {

// Xavier-style bound for a fan_in x fan_out affine map.
double init_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Tensor affine_param(ParameterStore& store, const std::string& name,
                    std::size_t rows, std::size_t cols, Rng& rng) {
  return store.add(name, Tensor::rand_uniform(rows, cols,
                                              init_bound(rows, cols), rng,
                                              /*requires_grad=*/true));
}

Tensor bias_param(ParameterStore& store, const std::string& name,
                  std::size_t cols) {
  return store.add(name, Tensor::zeros(1, cols, /*requires_grad=*/true));
}

Tensor ln_params(ParameterStore& store, const std::string& prefix,
                 std::size_t d) {
  store.add(prefix + ".gain", Tensor::full(1, d, 1.0, true));
  store.add(prefix + ".bias", Tensor::zeros(1, d, true));
  return {};
}

// Attention over pre-projected q/k/v with an optional causal mask.
Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        std::size_t heads, bool causal) {
  if (!causal) return scaled_dot_attention(q, k, v, heads);
  const std::size_t dh = q.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> mask_data(q.rows() * k.rows(), 0.0);
  for (std::size_t r = 0; r < q.rows(); ++r)
    for (std::size_t c = r + 1; c < k.rows(); ++c)
      mask_data[r * k.rows() + c] = -1e9;
  Tensor mask = Tensor::from_data(q.rows(), k.rows(), std::move(mask_data));
  std::vector<Tensor> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor scores = add(scale(matmul(qh, transpose(kh)), inv_sqrt), mask);
    outs.push_back(matmul(softmax_rows(scores), vh));
  }
  return heads == 1 ? outs[0] : concat_cols(outs);
}

}  // namespace

BackboneStub::BackboneStub(const PolicyConfig& cfg, ParameterStore& store,
                           Rng& rng)
    : cfg_(cfg), store_(&store) {
  cfg_.validate();
  const std::size_t d = cfg_.hidden;
  const std::size_t c = cfg_.channels;
  Rng r = rng.split(0x6262);  // backbone stream

  // Content projections start an order of magnitude above Xavier. A
  // frozen random encoder pools tokens near-uniformly, so cell content
  // must dominate both attention logits and pooled values or the single
  // occupied cell drowns among empty ones.
  const double content_scale = 10.0;
  store.add("backbone.grid_proj.w",
            Tensor::rand_uniform(c, d, content_scale * init_bound(c, d), r,
                                 true));
  bias_param(store, "backbone.grid_proj.b", d);
  store.add("backbone.grip_proj.w",
            Tensor::rand_uniform(c, d, content_scale * init_bound(c, d), r,
                                 true));
  bias_param(store, "backbone.grip_proj.b", d);
  // Embedding scales matter in the frozen regime: token position is the
  // only carrier of absolute cell location, so it must be comparable to
  // the content projection or a frozen encoder buries it.
  store.add("backbone.instr_embed",
            Tensor::randn(cfg_.vocab, d, 0.5, r, true));
  store.add("backbone.seg_embed", Tensor::randn(4, d, 0.3, r, true));
  store.add("backbone.pos_embed",
            Tensor::randn(cfg_.max_seq_len(), d, 0.5, r, true));
  store.add("backbone.action_query",
            Tensor::randn(cfg_.n_query, d, 0.5, r, true));

  const std::size_t ff = 2 * d;
  for (std::size_t i = 0; i < cfg_.layers; ++i) {
    const std::string pfx = "backbone.layer" + std::to_string(i);
    ln_params(store, pfx + ".ln1", d);
    affine_param(store, pfx + ".attn.wq", d, d, r);
    bias_param(store, pfx + ".attn.bq", d);
    affine_param(store, pfx + ".attn.wk", d, d, r);
    bias_param(store, pfx + ".attn.bk", d);
    affine_param(store, pfx + ".attn.wv", d, d, r);
    bias_param(store, pfx + ".attn.bv", d);
    affine_param(store, pfx + ".attn.wo", d, d, r);
    bias_param(store, pfx + ".attn.bo", d);
    ln_params(store, pfx + ".ln2", d);
    affine_param(store, pfx + ".ffn.w1", d, ff, r);
    bias_param(store, pfx + ".ffn.b1", ff);
    affine_param(store, pfx + ".ffn.w2", ff, d, r);
    bias_param(store, pfx + ".ffn.b2", d);
  }
}

TokenSequence BackboneStub::tokenize_observation(
    const ObservationStub& obs) const {
  const std::size_t c = cfg_.channels;
  const std::size_t n_grid = cfg_.grid * cfg_.grid;
  const std::size_t n_grip = cfg_.gripper_grid * cfg_.gripper_grid;
  if (obs.third_view_grid.size() != n_grid * c)
    throw TokenizationError("third_view_grid has " +
                            std::to_string(obs.third_view_grid.size()) +
                            " values, expected " + std::to_string(n_grid * c));
  if (obs.gripper_patch.size() != n_grip * c)
    throw TokenizationError("gripper_patch has " +
                            std::to_string(obs.gripper_patch.size()) +
                            " values, expected " + std::to_string(n_grip * c));
  for (int id : obs.instruction_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab)
      throw TokenizationError("instruction id " + std::to_string(id) +
                              " outside vocabulary of " +
                              std::to_string(cfg_.vocab));
  }

  Tensor grid = linear(
      Tensor::from_data(n_grid, c, obs.third_view_grid),
      p("backbone.grid_proj.w"), p("backbone.grid_proj.b"));
  Tensor grip = linear(
      Tensor::from_data(n_grip, c, obs.gripper_patch),
      p("backbone.grip_proj.w"), p("backbone.grip_proj.b"));

  std::vector<Tensor> parts{grid, grip};
  if (!obs.instruction_ids.empty()) {
    Tensor table = p("backbone.instr_embed");
    std::vector<Tensor> rows;
    rows.reserve(obs.instruction_ids.size());
    for (int id : obs.instruction_ids)
      rows.push_back(slice_rows(table, static_cast<std::size_t>(id), 1));
    parts.push_back(concat_rows(rows));
  }
  Tensor tokens = concat_rows(parts);

  TokenSequence seq;
  seq.segment_ids.reserve(tokens.rows());
  for (std::size_t i = 0; i < n_grid; ++i)
    seq.segment_ids.push_back(Segment::kThirdView);
  for (std::size_t i = 0; i < n_grip; ++i)
    seq.segment_ids.push_back(Segment::kGripperView);
  for (std::size_t i = 0; i < obs.instruction_ids.size(); ++i)
    seq.segment_ids.push_back(Segment::kInstruction);

  // Segment embedding, added per token.
  Tensor seg = p("backbone.seg_embed");
  std::vector<Tensor> seg_rows;
  seg_rows.reserve(seq.segment_ids.size());
  for (Segment s : seq.segment_ids)
    seg_rows.push_back(slice_rows(seg, static_cast<std::size_t>(s), 1));
  seq.tokens = add(tokens, concat_rows(seg_rows));
  seq.query_start = seq.tokens.rows();
  seq.query_len = 0;
  return seq;
}

TokenSequence BackboneStub::insert_action_queries(
    const TokenSequence& seq) const {
  if (cfg_.n_query == 0)
    throw ConfigError("ActionQuery count is zero; the query path cannot be "
                      "empty");
  Tensor queries = p("backbone.action_query");
  Tensor qseg = slice_rows(p("backbone.seg_embed"),
                           static_cast<std::size_t>(Segment::kActionQuery), 1);
  std::vector<Tensor> qrows;
  for (std::size_t i = 0; i < cfg_.n_query; ++i)
    qrows.push_back(add(slice_rows(queries, i, 1), qseg));

  TokenSequence out;
  out.tokens = concat_rows({seq.tokens, concat_rows(qrows)});
  out.segment_ids = seq.segment_ids;
  for (std::size_t i = 0; i < cfg_.n_query; ++i)
    out.segment_ids.push_back(Segment::kActionQuery);
  out.query_start = seq.tokens.rows();
  out.query_len = cfg_.n_query;

  // Positional embeddings cover the full sequence including queries.
  const std::size_t L = out.tokens.rows();
  if (L > cfg_.max_seq_len())
    throw TokenizationError("sequence of " + std::to_string(L) +
                            " tokens exceeds maximum " +
                            std::to_string(cfg_.max_seq_len()));
  Tensor pos = slice_rows(p("backbone.pos_embed"), 0, L);
  out.tokens = add(out.tokens, pos);
  return out;
}

Tensor BackboneStub::block(std::size_t layer, const Tensor& x) const {
  const std::string pfx = "backbone.layer" + std::to_string(layer);
  Tensor h = layer_norm(x, p(pfx + ".ln1.gain"), p(pfx + ".ln1.bias"));
  Tensor q = linear(h, p(pfx + ".attn.wq"), p(pfx + ".attn.bq"));
  Tensor k = linear(h, p(pfx + ".attn.wk"), p(pfx + ".attn.bk"));
  Tensor v = linear(h, p(pfx + ".attn.wv"), p(pfx + ".attn.bv"));
  Tensor attn = masked_attention(q, k, v, cfg_.heads, cfg_.causal_encoder);
  Tensor x1 = add(x, linear(attn, p(pfx + ".attn.wo"), p(pfx + ".attn.bo")));
  Tensor h2 = layer_norm(x1, p(pfx + ".ln2.gain"), p(pfx + ".ln2.bias"));
  Tensor f = linear(relu_t(linear(h2, p(pfx + ".ffn.w1"), p(pfx + ".ffn.b1"))),
                    p(pfx + ".ffn.w2"), p(pfx + ".ffn.b2"));
  return add(x1, f);
}

ConditionSet BackboneStub::encode_layers(const TokenSequence& seq) const {
  if (seq.query_len != cfg_.n_query)
    throw ConfigError("token sequence query span of " +
                      std::to_string(seq.query_len) +
                      " does not match configured ActionQuery count " +
                      std::to_string(cfg_.n_query));
  ConditionSet conds;
  conds.raw.reserve(cfg_.layers);
  conds.aq.reserve(cfg_.layers);
  Tensor x = seq.tokens;
  for (std::size_t i = 0; i < cfg_.layers; ++i) {
    x = block(i, x);
    conds.raw.push_back(slice_rows(x, 0, seq.query_start));
    conds.aq.push_back(slice_rows(x, seq.query_start, seq.query_len));
  }
  return conds;
}

ConditionSet BackboneStub::encode(const ObservationStub& obs) const {
  return encode_layers(insert_action_queries(tokenize_observation(obs)));
}

void BackboneStub::set_frozen(ParameterStore& store, bool frozen) {
  store.set_trainable_prefix("backbone.", !frozen);
  store.set_trainable("backbone.action_query", true);
}

}  // namespace actbridge
