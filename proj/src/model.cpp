#include "vitbis/model.hpp"

#include <cmath>

#include "vitbis/rng.hpp"

namespace vitbis {

namespace {

using i64 = std::int64_t;

// [B,N,d] tokens <-> [B,d,h,w] feature map, N = h*w in row-major grid order.
Tensor to_grid(const Tensor& tok, i64 h, i64 w) {
  const i64 B = tok.shape[0], d = tok.shape[2];
  return permute(reshape(tok, {B, h, w, d}), {0, 3, 1, 2});
}

Tensor to_tokens(const Tensor& grid) {
  const i64 B = grid.shape[0], d = grid.shape[1], h = grid.shape[2], w = grid.shape[3];
  return reshape(permute(grid, {0, 2, 3, 1}), {B, h * w, d});
}

// Heads of [B,N,d] as [B*heads, N, d/heads].
Tensor split_heads(const Tensor& t, i64 heads) {
  const i64 B = t.shape[0], N = t.shape[1], d = t.shape[2];
  const i64 dh = d / heads;
  return reshape(permute(reshape(t, {B, N, heads, dh}), {0, 2, 1, 3}),
                 {B * heads, N, dh});
}

Tensor merge_heads(const Tensor& t, i64 batch, i64 heads) {
  const i64 N = t.shape[1], dh = t.shape[2];
  return reshape(permute(reshape(t, {batch, heads, N, dh}), {0, 2, 1, 3}),
                 {batch, N, heads * dh});
}

i64 cm_channels(i64 c) { return std::max<i64>(1, c / 8); }

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Parameter-free resize between dyadically related square-factor grids.
Tensor resized(const Tensor& t, i64 from, i64 to) {
  if (from == to) return t;
  if (to > from) {
    if (to % from != 0) throw ConfigMismatch("resize factor is not integral");
    return bilinear_upsample(t, to / from);
  }
  if (from % to != 0) throw ConfigMismatch("resize factor is not integral");
  return avg_pool2d(t, from / to);
}

}  // namespace

// ---------------------------------------------------------------------------
// Patch embedding
// ---------------------------------------------------------------------------

Tensor embed_patches(const Tensor& x, const PatchEmbedding& pe) {
  if (x.shape.rank() != 4) throw ShapeMismatch("embed_patches input must be rank 4");
  if (pe.projection.shape.rank() != 2 || pe.position.shape.rank() != 2) {
    throw ShapeMismatch("embed_patches parameters must be rank 2");
  }
  const i64 C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const i64 rows = pe.projection.shape[0];
  if (rows % C != 0) {
    throw ShapeMismatch("projection rows not a multiple of input channels");
  }
  const i64 P = static_cast<i64>(std::llround(std::sqrt(static_cast<double>(rows / C))));
  if (P < 1 || P * P * C != rows || H % P != 0 || W % P != 0) {
    throw ShapeMismatch("projection rows " + std::to_string(rows) +
                        " do not describe a square patch of " + x.shape.str());
  }
  const i64 N = (H / P) * (W / P);
  if (pe.position.shape != Shape{N, pe.projection.shape[1]}) {
    throw ShapeMismatch("position table must be [" + std::to_string(N) + ", d]");
  }
  return add(matmul(patchify(x, P), pe.projection), pe.position);
}

// ---------------------------------------------------------------------------
// Multi-scale conv block
// ---------------------------------------------------------------------------

std::array<std::int64_t, 3> multi_scale_split(std::int64_t channels) {
  if (channels < 3) {
    throw ShapeMismatch("multi-scale block needs at least 3 channels, got " +
                        std::to_string(channels));
  }
  const i64 third = channels / 3;
  return {channels - 2 * third, third, third};
}

Tensor multi_scale_block(const Tensor& x, const MultiScaleParams& p) {
  if (x.shape.rank() != 4) throw ShapeMismatch("multi_scale_block input must be rank 4");
  const auto parts = multi_scale_split(x.shape[1]);
  if (p.w1.shape != Shape{parts[0], parts[0], 1, 1} ||
      p.w3.shape != Shape{parts[1], parts[1], 3, 3} ||
      p.w5.shape != Shape{parts[2], parts[2], 5, 5}) {
    throw ShapeMismatch("multi-scale weights do not match channel split of " +
                        x.shape.str());
  }
  auto xs = split(x, {parts[0], parts[1], parts[2]}, 1);
  Tensor y1 = conv2d(xs[0], p.w1, p.b1, 1, 0);
  Tensor y3 = conv2d(xs[1], p.w3, p.b3, 1, 1);
  Tensor y5 = conv2d(xs[2], p.w5, p.b5, 1, 2);
  return concat({y1, y3, y5}, 1);
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

std::int64_t relative_bias_index(std::int64_t window, std::int64_t from,
                                 std::int64_t to) {
  const i64 M = window;
  const i64 dr = from / M - to / M + (M - 1);
  const i64 dc = from % M - to % M + (M - 1);
  return dr * (2 * M - 1) + dc;
}

namespace {

void check_attention(const Tensor& z, const AttentionParams& p) {
  if (z.shape.rank() != 3) throw ShapeMismatch("attention input must be [B,N,d]");
  const i64 d = z.shape[2];
  if (p.heads < 1 || d % p.heads != 0) {
    throw ShapeMismatch("head count " + std::to_string(p.heads) +
                        " does not divide width " + std::to_string(d));
  }
  const Shape dd{d, d};
  if (p.wq.shape != dd || p.wk.shape != dd || p.wv.shape != dd) {
    throw ShapeMismatch("attention projections must be [d,d]");
  }
  if (p.wo.defined() && p.wo.shape != dd) {
    throw ShapeMismatch("attention output projection must be [d,d]");
  }
  if (p.bias_table.defined()) {
    const i64 M = p.window;
    if (M < 1 || M * M != z.shape[1]) {
      throw BiasGridMismatch("bias window " + std::to_string(M) +
                             " does not tile " + std::to_string(z.shape[1]) +
                             " tokens");
    }
    if (p.bias_table.shape != Shape{(2 * M - 1) * (2 * M - 1), p.heads}) {
      throw BiasGridMismatch("bias table must be [(2M-1)^2, heads]");
    }
  }
}

}  // namespace

Tensor msa_attention(const Tensor& z, const AttentionParams& p) {
  check_attention(z, p);
  const i64 B = z.shape[0], N = z.shape[1], d = z.shape[2];
  const i64 n = p.heads, dh = d / n;
  Tensor qh = split_heads(matmul(z, p.wq), n);
  Tensor kh = split_heads(matmul(z, p.wk), n);
  Tensor logits = scale(matmul(qh, permute(kh, {0, 2, 1})),
                        1.0 / std::sqrt(static_cast<double>(dh)));
  if (p.bias_table.defined()) {
    const i64 M = p.window;
    std::vector<i64> idx(static_cast<std::size_t>(N * N));
    for (i64 i = 0; i < N; ++i) {
      for (i64 j = 0; j < N; ++j) {
        idx[static_cast<std::size_t>(i * N + j)] = relative_bias_index(M, i, j);
      }
    }
    // [N*N, heads] -> [heads, N, N], added per head across the batch.
    Tensor bias = permute(reshape(gather_rows(p.bias_table, idx), {N, N, n}), {2, 0, 1});
    logits = reshape(add(reshape(logits, {B, n, N, N}), bias), {B * n, N, N});
  }
  return softmax(logits, 2);
}

Tensor msa(const Tensor& z, const AttentionParams& p) {
  check_attention(z, p);
  const i64 B = z.shape[0];
  Tensor attn = msa_attention(z, p);
  Tensor vh = split_heads(matmul(z, p.wv), p.heads);
  return merge_heads(matmul(attn, vh), B, p.heads);
}

Tensor tmsa(const Tensor& z, const AttentionParams& p) {
  if (!p.wo.defined()) throw ShapeMismatch("tmsa requires an output projection");
  return matmul(msa(z, p), p.wo);
}

Tensor mlp_forward(const Tensor& z, const MlpParams& p, const std::string& activation) {
  Tensor h = add(matmul(z, p.w1), p.b1);
  if (activation == "gelu") h = gelu(h);
  else if (activation == "relu") h = relu(h);
  else if (activation != "none") throw ConfigMismatch("unknown activation: " + activation);
  return add(matmul(h, p.w2), p.b2);
}

Tensor transformer_block(const Tensor& z, const TransformerBlockParams& p) {
  Tensor a = tmsa(layernorm(z, p.norm1.gamma, p.norm1.beta), p.attn);
  Tensor z2 = add(a, z);
  Tensor m = mlp_forward(layernorm(z2, p.norm2.gamma, p.norm2.beta), p.mlp, p.activation);
  return add(m, z2);
}

// ---------------------------------------------------------------------------
// Global self attention
// ---------------------------------------------------------------------------

Tensor gsa_attention(const Tensor& x, const GsaParams& p) {
  if (x.shape.rank() != 4) throw ShapeMismatch("gsa input must be rank 4");
  const i64 B = x.shape[0], H = x.shape[2], W = x.shape[3];
  Tensor m = conv2d(x, p.wm, p.bm, 1, 0);
  Tensor n = conv2d(x, p.wn, p.bn, 1, 0);
  const i64 cm = m.shape[1], hw = H * W;
  Tensor mf = reshape(m, {B, cm, hw});
  Tensor nf = reshape(n, {B, cm, hw});
  // (i, j) = M_i . N_j; normalizing over i makes columns sum to one.
  Tensor logits = matmul(permute(mf, {0, 2, 1}), nf);
  return softmax(logits, 1);
}

Tensor gsa(const Tensor& x, const GsaParams& p) {
  const i64 B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  Tensor attn = gsa_attention(x, p);
  Tensor w = conv2d(x, p.ww, p.bw, 1, 0);
  if (w.shape[1] != C) throw ShapeMismatch("gsa value projection must keep width");
  Tensor wf = reshape(w, {B, C, H * W});
  Tensor out;
  if (!p.verbatim_attention) {
    // out[:, j] = sum_i attn[i, j] * W[:, i]
    out = matmul(wf, attn);
  } else {
    // Printed form: each target keeps its own value, scaled by the attention
    // column sum. Kept as written, including the gradient paths through the
    // attention map.
    Tensor colsum = reduce_sum(attn, 1);  // [B, H*W]
    std::vector<i64> ones(static_cast<std::size_t>(B), 1);
    auto wparts = split(wf, ones, 0);
    auto sparts = split(colsum, ones, 0);
    std::vector<Tensor> scaled;
    for (i64 b = 0; b < B; ++b) {
      scaled.push_back(mul(wparts[static_cast<std::size_t>(b)],
                           reshape(sparts[static_cast<std::size_t>(b)], {H * W})));
    }
    out = concat(scaled, 0);
  }
  return reshape(out, {B, C, H, W});
}

// ---------------------------------------------------------------------------
// Decoder stage
// ---------------------------------------------------------------------------

UpsampleMode parse_upsample_mode(const std::string& name) {
  if (name == "bilinear") return UpsampleMode::bilinear;
  if (name == "transposed_conv") return UpsampleMode::transposed_conv;
  throw ConfigMismatch("unknown upsample mode: " + name);
}

std::string upsample_mode_name(UpsampleMode m) {
  return m == UpsampleMode::bilinear ? "bilinear" : "transposed_conv";
}

Tensor decoder_stage(const Tensor& prev, const Tensor& skip,
                     const DecoderStageParams& p) {
  if (prev.shape.rank() != 4 || skip.shape.rank() != 4) {
    throw ShapeMismatch("decoder_stage inputs must be rank 4");
  }
  if (skip.shape[0] != prev.shape[0] || skip.shape[2] != 2 * prev.shape[2] ||
      skip.shape[3] != 2 * prev.shape[3]) {
    throw ShapeMismatch("skip " + skip.shape.str() +
                        " does not match upsampled dims of " + prev.shape.str());
  }
  Tensor up_main, up_proc;
  if (p.mode == UpsampleMode::bilinear) {
    up_main = bilinear_upsample(prev, 2);
    up_proc = up_main;
  } else {
    up_main = conv_transpose2d(prev, p.up_main_w, 2);
    up_proc = conv_transpose2d(prev, p.up_proc_w, 2);
  }
  Tensor processed = conv2d(up_proc, p.proc_w, p.proc_b, 1, 1);
  Tensor cat = concat({processed, up_main, skip}, 1);
  return conv2d(cat, p.fuse_w, p.fuse_b, 1, 1);
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

std::int64_t ModelConfig::mlp_hidden() const {
  return static_cast<i64>(std::llround(mlp_ratio * static_cast<double>(embed_dim)));
}

std::int64_t ModelConfig::stage_width(std::int64_t n) const {
  return std::max<i64>(reduced_channels >> n, 4);
}

void ModelConfig::validate() const {
  if (patch_size < 1) throw ConfigMismatch("patch_size must be positive");
  if (embed_dim < 3) throw ConfigMismatch("embed_dim must be at least 3");
  if (depth < 1) throw ConfigMismatch("depth must be positive");
  if (num_heads < 1 || embed_dim % num_heads != 0) {
    throw ConfigMismatch("num_heads must divide embed_dim");
  }
  if (mlp_hidden() < 1) throw ConfigMismatch("mlp_ratio too small");
  if (reduced_channels < 1) throw ConfigMismatch("reduced_channels must be positive");
  if (num_classes < 2) throw ConfigMismatch("num_classes must be at least 2");
  if (num_stacks < 1) throw ConfigMismatch("num_stacks must be positive");
  if (in_ch < 1) throw ConfigMismatch("input channels must be positive");
  if (in_h < 1 || in_w < 1 || in_h % patch_size != 0 || in_w % patch_size != 0) {
    throw ConfigMismatch("input dims must be divisible by patch_size");
  }
  const i64 down = i64{1} << num_stacks;
  if (in_h % down != 0 || in_w % down != 0) {
    throw ConfigMismatch("input dims must be divisible by 2^num_stacks");
  }
  // The decoder ladder is anchored at full resolution, so the token grid
  // must relate to every rung by an integral factor.
  if (down % patch_size != 0 && patch_size % down != 0) {
    throw ConfigMismatch("patch_size and 2^num_stacks must divide one another");
  }
  if (bias_enabled()) {
    const i64 M = window();
    if (M * M != tokens()) {
      throw ConfigMismatch("window_size^2 must equal the token count");
    }
  }
  if (mlp_activation != "gelu" && mlp_activation != "relu" && mlp_activation != "none") {
    throw ConfigMismatch("unknown mlp_activation: " + mlp_activation);
  }
}

// ---------------------------------------------------------------------------
// VitbisModel
// ---------------------------------------------------------------------------

VitbisModel::VitbisModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  auto reg = [&](const std::string& name, const Shape& s) {
    index_[name] = params_.size();
    params_.push_back(Param{
        name, s,
        std::make_shared<std::vector<double>>(static_cast<std::size_t>(s.numel()), 0.0)});
  };
  auto reg_ms = [&](const std::string& prefix, i64 ch) {
    const auto s = multi_scale_split(ch);
    reg(prefix + ".conv1.w", {s[0], s[0], 1, 1});
    reg(prefix + ".conv1.b", {s[0]});
    reg(prefix + ".conv3.w", {s[1], s[1], 3, 3});
    reg(prefix + ".conv3.b", {s[1]});
    reg(prefix + ".conv5.w", {s[2], s[2], 5, 5});
    reg(prefix + ".conv5.b", {s[2]});
  };

  const i64 d = cfg_.embed_dim;
  reg("embed.projection", {cfg_.patch_size * cfg_.patch_size * cfg_.in_ch, d});
  reg("embed.position", {cfg_.tokens(), d});
  reg_ms("enc_ms", d);

  const i64 M = cfg_.window();
  const i64 hidden = cfg_.mlp_hidden();
  for (i64 s = 0; s < cfg_.num_stacks; ++s) {
    for (i64 l = 0; l < cfg_.depth; ++l) {
      const std::string pre =
          "stack" + std::to_string(s) + ".block" + std::to_string(l) + ".";
      reg(pre + "norm1.gamma", {d});
      reg(pre + "norm1.beta", {d});
      reg(pre + "attn.wq", {d, d});
      reg(pre + "attn.wk", {d, d});
      reg(pre + "attn.wv", {d, d});
      reg(pre + "attn.wo", {d, d});
      if (cfg_.bias_enabled()) {
        reg(pre + "attn.bias_table", {(2 * M - 1) * (2 * M - 1), cfg_.num_heads});
      }
      reg(pre + "norm2.gamma", {d});
      reg(pre + "norm2.beta", {d});
      reg(pre + "mlp.w1", {d, hidden});
      reg(pre + "mlp.b1", {hidden});
      reg(pre + "mlp.w2", {hidden, d});
      reg(pre + "mlp.b2", {d});
    }
  }

  if (cfg_.use_gsa) {
    const i64 cm = cm_channels(d);
    reg("gsa.m.w", {cm, d, 1, 1});
    reg("gsa.m.b", {cm});
    reg("gsa.n.w", {cm, d, 1, 1});
    reg("gsa.n.b", {cm});
    reg("gsa.w.w", {d, d, 1, 1});
    reg("gsa.w.b", {d});
  }

  reg("reduce.w", {cfg_.reduced_channels, d, 1, 1});
  reg("reduce.b", {cfg_.reduced_channels});

  i64 cin = cfg_.reduced_channels;
  for (i64 n = 1; n <= cfg_.num_stacks; ++n) {
    const std::string pre = "dec" + std::to_string(n) + ".";
    const i64 wn = cfg_.stage_width(n);
    if (cfg_.upsample_mode == UpsampleMode::transposed_conv) {
      reg(pre + "up_main.w", {cin, cin, 4, 4});
      reg(pre + "up_proc.w", {cin, cin, 4, 4});
    }
    reg(pre + "proc.w", {cin, cin, 3, 3});
    reg(pre + "proc.b", {cin});
    reg(pre + "skip.w", {wn, d, 1, 1});
    reg(pre + "skip.b", {wn});
    reg(pre + "fuse.w", {wn, 2 * cin + wn, 3, 3});
    reg(pre + "fuse.b", {wn});
    cin = wn;
  }

  reg_ms("dec_ms", cin);
  reg("head.w", {cfg_.num_classes, cin, 1, 1});
  reg("head.b", {cfg_.num_classes});
}

void VitbisModel::init_params(std::uint64_t seed) {
  SplitMix64 rng = derived_rng(seed, stream::kInit);
  for (Param& p : params_) {
    std::vector<double>& v = *p.value;
    if (ends_with(p.name, ".gamma")) {
      for (double& x : v) x = 1.0;
    } else if (ends_with(p.name, ".beta") || ends_with(p.name, ".b") ||
               ends_with(p.name, "bias_table")) {
      for (double& x : v) x = 0.0;
    } else if (p.shape.rank() == 4) {
      // Conv kernels: fan-in scaled so feature magnitude survives the
      // decoder depth. Transposed kernels see fan_in/stride^2 taps per
      // output pixel.
      i64 fan_in;
      if (p.name.find("up_main") != std::string::npos ||
          p.name.find("up_proc") != std::string::npos) {
        fan_in = p.shape[0] * 4;
      } else {
        fan_in = p.shape[1] * p.shape[2] * p.shape[3];
      }
      const double sigma = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (double& x : v) x = rng.trunc_normal(sigma);
    } else {
      for (double& x : v) x = rng.trunc_normal(0.02);
    }
  }
}

Param* VitbisModel::find_param(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

std::int64_t VitbisModel::parameter_count() const {
  i64 n = 0;
  for (const Param& p : params_) n += p.shape.numel();
  return n;
}

Tensor VitbisModel::bound(const std::string& name) const {
  return bound_[index_.at(name)];
}

void VitbisModel::bind(Tape* tape) {
  bound_.clear();
  bound_.reserve(params_.size());
  for (const Param& p : params_) {
    if (tape) {
      bound_.push_back(tape->leaf(p.shape, p.value, /*requires_grad=*/true));
    } else {
      Tensor t;
      t.shape = p.shape;
      t.data = p.value;
      bound_.push_back(t);
    }
  }
}

Tensor VitbisModel::forward(Tape* tape, const Tensor& x, const ForwardOptions& opts) {
  if (x.shape != Shape{x.shape[0], cfg_.in_ch, cfg_.in_h, cfg_.in_w}) {
    throw ShapeMismatch("input " + x.shape.str() + " does not match configured size");
  }
  if (opts.zero_skip < 0 || opts.zero_skip > cfg_.num_stacks) {
    throw ConfigMismatch("zero_skip out of range");
  }
  bind(tape);

  const i64 h0 = cfg_.grid_h(), w0 = cfg_.grid_w();
  const i64 S = cfg_.num_stacks;

  // Encoder.
  PatchEmbedding pe{bound("embed.projection"), bound("embed.position")};
  Tensor tok = embed_patches(x, pe);
  MultiScaleParams enc_ms{bound("enc_ms.conv1.w"), bound("enc_ms.conv1.b"),
                          bound("enc_ms.conv3.w"), bound("enc_ms.conv3.b"),
                          bound("enc_ms.conv5.w"), bound("enc_ms.conv5.b")};
  tok = to_tokens(multi_scale_block(to_grid(tok, h0, w0), enc_ms));

  std::vector<Tensor> skips;
  for (i64 s = 0; s < S; ++s) {
    for (i64 l = 0; l < cfg_.depth; ++l) {
      const std::string pre =
          "stack" + std::to_string(s) + ".block" + std::to_string(l) + ".";
      TransformerBlockParams bp;
      bp.norm1 = {bound(pre + "norm1.gamma"), bound(pre + "norm1.beta")};
      bp.norm2 = {bound(pre + "norm2.gamma"), bound(pre + "norm2.beta")};
      bp.attn.wq = bound(pre + "attn.wq");
      bp.attn.wk = bound(pre + "attn.wk");
      bp.attn.wv = bound(pre + "attn.wv");
      bp.attn.wo = bound(pre + "attn.wo");
      bp.attn.heads = cfg_.num_heads;
      if (cfg_.bias_enabled()) {
        bp.attn.bias_table = bound(pre + "attn.bias_table");
        bp.attn.window = cfg_.window();
      }
      bp.mlp = {bound(pre + "mlp.w1"), bound(pre + "mlp.b1"),
                bound(pre + "mlp.w2"), bound(pre + "mlp.b2")};
      bp.activation = cfg_.mlp_activation;
      tok = transformer_block(tok, bp);
    }
    skips.push_back(tok);
  }

  Tensor grid = to_grid(tok, h0, w0);
  if (cfg_.use_gsa) {
    GsaParams gp{bound("gsa.m.w"), bound("gsa.m.b"), bound("gsa.n.w"),
                 bound("gsa.n.b"), bound("gsa.w.w"), bound("gsa.w.b"),
                 cfg_.gsa_verbatim_attention};
    grid = add(gsa(grid, gp), grid);
  }
  Tensor cur = conv2d(grid, bound("reduce.w"), bound("reduce.b"), 1, 0);

  // Decoder ladder, anchored so stage n lands on H / 2^(S-n).
  cur = resized(cur, h0, cfg_.in_h >> S);
  for (i64 n = 1; n <= S; ++n) {
    const std::string pre = "dec" + std::to_string(n) + ".";
    const i64 skip_id = S + 1 - n;  // deepest stack feeds the lowest stage
    const i64 out_h = cfg_.in_h >> (S - n);
    Tensor sp;
    if (opts.zero_skip == skip_id) {
      sp = Tensor::zeros({x.shape[0], cfg_.stage_width(n), out_h,
                          (cfg_.in_w >> (S - n))});
    } else {
      Tensor sg = to_grid(skips[static_cast<std::size_t>(skip_id - 1)], h0, w0);
      sp = conv2d(sg, bound(pre + "skip.w"), bound(pre + "skip.b"), 1, 0);
      sp = resized(sp, h0, out_h);
    }
    DecoderStageParams dp;
    dp.mode = cfg_.upsample_mode;
    if (dp.mode == UpsampleMode::transposed_conv) {
      dp.up_main_w = bound(pre + "up_main.w");
      dp.up_proc_w = bound(pre + "up_proc.w");
    }
    dp.proc_w = bound(pre + "proc.w");
    dp.proc_b = bound(pre + "proc.b");
    dp.fuse_w = bound(pre + "fuse.w");
    dp.fuse_b = bound(pre + "fuse.b");
    cur = decoder_stage(cur, sp, dp);
  }

  MultiScaleParams dec_ms{bound("dec_ms.conv1.w"), bound("dec_ms.conv1.b"),
                          bound("dec_ms.conv3.w"), bound("dec_ms.conv3.b"),
                          bound("dec_ms.conv5.w"), bound("dec_ms.conv5.b")};
  cur = multi_scale_block(cur, dec_ms);
  return conv2d(cur, bound("head.w"), bound("head.b"), 1, 0);
}

}  // namespace vitbis
