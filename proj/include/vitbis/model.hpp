#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "vitbis/ops.hpp"
#include "vitbis/tensor.hpp"

namespace vitbis {

// ---------------------------------------------------------------------------
// Building blocks. Each block is a free function over tensors plus a small
// parameter struct, so blocks can be tested and gradient-checked in
// isolation; the model class below only wires them together.
// ---------------------------------------------------------------------------

struct PatchEmbedding {
  Tensor projection;  // [P*P*C, d]
  Tensor position;    // [N, d]
};

// x [B,C,H,W] -> tokens [B,N,d]: flattened patches projected and shifted by
// the learned position table. The patch size is inferred from the projection
// row count.
Tensor embed_patches(const Tensor& x, const PatchEmbedding& pe);

// Channel split for the multi-scale block: the remainder goes to the 1x1
// branch, so the three parts always sum to C. Requires C >= 3.
std::array<std::int64_t, 3> multi_scale_split(std::int64_t channels);

struct MultiScaleParams {
  Tensor w1, b1;  // 1x1 on the first split
  Tensor w3, b3;  // 3x3, pad 1, on the second
  Tensor w5, b5;  // 5x5, pad 2, on the third
};

// Split along channels, convolve each part at its own receptive field, and
// concatenate back to the input width. Spatial dims are preserved.
Tensor multi_scale_block(const Tensor& x, const MultiScaleParams& p);

struct AttentionParams {
  Tensor wq, wk, wv;  // [d,d]
  Tensor wo;          // [d,d], applied after head concat
  Tensor bias_table;  // [(2M-1)^2, heads]; undefined disables the bias
  std::int64_t heads = 1;
  std::int64_t window = 0;  // M; tokens must form an MxM grid when biased
};

// Flattens a relative offset between two tokens of an MxM grid into an index
// of the (2M-1)x(2M-1) bias table.
std::int64_t relative_bias_index(std::int64_t window, std::int64_t from,
                                 std::int64_t to);

// Attention probabilities [B*heads, N, N]; rows sum to one.
Tensor msa_attention(const Tensor& z, const AttentionParams& p);

// Multi-head self attention over tokens [B,N,d]: per head
// softmax(Q K^T / sqrt(d_head) + bias) V, heads concatenated back to d.
Tensor msa(const Tensor& z, const AttentionParams& p);

// msa followed by the learned merge of the concatenated heads.
Tensor tmsa(const Tensor& z, const AttentionParams& p);

struct LayerNormParams {
  Tensor gamma, beta;
};

struct MlpParams {
  Tensor w1, b1;  // [d, hidden], [hidden]
  Tensor w2, b2;  // [hidden, d], [d]
};

Tensor mlp_forward(const Tensor& z, const MlpParams& p, const std::string& activation);

struct TransformerBlockParams {
  LayerNormParams norm1, norm2;
  AttentionParams attn;
  MlpParams mlp;
  std::string activation = "gelu";  // gelu | relu | none
};

// Pre-norm residual block:
//   z' = tmsa(norm(z)) + z;  out = mlp(norm(z')) + z'.
Tensor transformer_block(const Tensor& z, const TransformerBlockParams& p);

struct GsaParams {
  Tensor wm, bm;  // 1x1, C -> C/8 (at least 1)
  Tensor wn, bn;  // 1x1, C -> C/8
  Tensor ww, bw;  // 1x1, C -> C
  // With the flag set, each value position is scaled by its attention column
  // sum instead of mixing values across positions. Column sums are one, so
  // this collapses to the value projection alone; kept selectable for
  // comparison, off by default.
  bool verbatim_attention = false;
};

// Position-to-position attention map [B, H*W, H*W] built from the M and N
// projections; entry (i, j) scores source position i against target j, and
// every column (fixed j) sums to one.
Tensor gsa_attention(const Tensor& x, const GsaParams& p);

// Global self attention over a feature map [B,C,H,W]: the W projection
// at target position j becomes the attention-weighted sum of W over source
// positions. Output has the input's shape.
Tensor gsa(const Tensor& x, const GsaParams& p);

enum class UpsampleMode { bilinear, transposed_conv };

UpsampleMode parse_upsample_mode(const std::string& name);
std::string upsample_mode_name(UpsampleMode m);

struct DecoderStageParams {
  UpsampleMode mode = UpsampleMode::bilinear;
  Tensor up_main_w;      // [Cin,Cin,4,4], transposed_conv mode only
  Tensor up_proc_w;      // [Cin,Cin,4,4], transposed_conv mode only
  Tensor proc_w, proc_b; // 3x3 after the processed upsample path
  Tensor fuse_w, fuse_b; // 3x3 mixing both paths plus the skip
};

// One decoder stage: the previous feature map is upsampled x2 twice over
// two paths (one convolved, one raw), concatenated with the skip, and mixed
// down to the stage width by the fuse convolution. The skip must already
// have the upsampled spatial dims.
Tensor decoder_stage(const Tensor& prev, const Tensor& skip,
                     const DecoderStageParams& p);

// ---------------------------------------------------------------------------
// Model configuration
// ---------------------------------------------------------------------------

struct ModelConfig {
  std::int64_t patch_size = 4;       // P
  std::int64_t embed_dim = 64;       // d
  std::int64_t depth = 2;            // L, blocks per stack
  std::int64_t num_heads = 4;        // n
  double mlp_ratio = 4.0;
  std::int64_t reduced_channels = 32;  // K, decoder entry width
  std::int64_t num_classes = 2;        // J
  std::int64_t num_stacks = 3;         // encoder stacks == decoder stages
  UpsampleMode upsample_mode = UpsampleMode::bilinear;
  std::int64_t window_size = 0;        // M; 0 derives the full token grid
  bool use_gsa = true;
  bool use_relative_bias = true;
  bool gsa_verbatim_attention = false;
  std::string mlp_activation = "gelu";
  std::int64_t in_h = 32, in_w = 32, in_ch = 1;

  void validate() const;  // throws ConfigMismatch

  std::int64_t grid_h() const { return in_h / patch_size; }
  std::int64_t grid_w() const { return in_w / patch_size; }
  std::int64_t tokens() const { return grid_h() * grid_w(); }
  std::int64_t mlp_hidden() const;
  // Relative bias is only defined on a square token grid.
  bool bias_enabled() const { return use_relative_bias && grid_h() == grid_w(); }
  std::int64_t window() const { return window_size > 0 ? window_size : grid_h(); }
  // Channel width of decoder stage n (1-based): K halved per stage, floor 4.
  std::int64_t stage_width(std::int64_t n) const;
};

struct Param {
  std::string name;
  Shape shape;
  std::shared_ptr<std::vector<double>> value;
};

// ---------------------------------------------------------------------------
// The full encoder-decoder model.
//
// Encoder: patch embedding, a multi-scale conv block on the token grid,
// then num_stacks stacks of depth transformer blocks; the token state after
// each stack is kept as a skip. The final tokens pass through the global
// attention module (residually) and a 1x1 reduction from d to K channels.
//
// Decoder: the reduced map enters a ladder anchored at full resolution
// (stage n outputs H / 2^(num_stacks - n)), so the entry map is resized from
// the token grid to H / 2^num_stacks first. Each stage doubles resolution,
// fuses the matching skip (projected 1x1 and resized), and halves channels.
// A final multi-scale block and a 1x1 head produce per-class logits.
// ---------------------------------------------------------------------------

class VitbisModel {
 public:
  explicit VitbisModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  // Truncated-normal initialization (cut at two sigma): sigma 0.02 for
  // embeddings and linear weights, fan-in scaled for conv kernels, zeros for
  // biases and the bias tables, ones for LN gains.
  void init_params(std::uint64_t seed);

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  Param* find_param(const std::string& name);
  std::int64_t parameter_count() const;

  struct ForwardOptions {
    // 1..num_stacks zeroes that skip at its injection point; 0 disables.
    std::int64_t zero_skip = 0;
  };

  // Builds the graph on `tape` (pass nullptr for inference). Input
  // [B, in_ch, in_h, in_w]; output logits [B, num_classes, in_h, in_w].
  Tensor forward(Tape* tape, const Tensor& x, const ForwardOptions& opts);
  Tensor forward(Tape* tape, const Tensor& x) {
    return forward(tape, x, ForwardOptions{});
  }

  // Leaves bound during the latest forward, aligned with params(). Valid
  // only when that forward received a tape.
  const std::vector<Tensor>& bound_leaves() const { return bound_; }

 private:
  Tensor bound(const std::string& name) const;
  void bind(Tape* tape);

  ModelConfig cfg_;
  std::vector<Param> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<Tensor> bound_;
};

}  // namespace vitbis
