#include "vitbis/grad_suite.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "vitbis/grad_check.hpp"
#include "vitbis/model.hpp"
#include "vitbis/ops.hpp"
#include "vitbis/rng.hpp"

namespace vitbis {

namespace {

using i64 = std::int64_t;
using u64 = std::uint64_t;

Tensor rand_t(SplitMix64& rng, const Shape& s, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(s);
  for (double& v : t.mutable_values()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero, for kinks (relu) and divisions.
Tensor rand_away(SplitMix64& rng, const Shape& s, double margin) {
  Tensor t = Tensor::zeros(s);
  for (double& v : t.mutable_values()) {
    const double mag = rng.uniform(margin, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

// Weighted full reduction. A plain sum would hide permutation and scatter
// mistakes; the fixed random weight makes every output coordinate matter
// differently.
Tensor weighted_sum(const Tensor& x, const Tensor& w) {
  return reduce_sum(mul(x, w));
}

struct CheckDef {
  std::string name;
  std::function<GradCheckReport(u64 seed)> run;
};

GradCheckReport check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                      u64 seed) {
  return grad_check(f, inputs, 1e-5, 1e-4, /*max_coords_per_input=*/24, seed);
}

std::vector<CheckDef> build_checks() {
  std::vector<CheckDef> defs;
  auto add_def = [&](std::string name, std::function<GradCheckReport(u64)> fn) {
    defs.push_back({std::move(name), std::move(fn)});
  };

  add_def("add", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor a = rand_t(r, {2, 3, 4}), b = rand_t(r, {2, 3, 4});
    Tensor w = rand_t(r, {2, 3, 4});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(add(in[0], in[1]), w);
    }, {a, b}, seed);
  });

  add_def("add broadcast", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor a = rand_t(r, {2, 3, 4}), b = rand_t(r, {3, 4});
    Tensor w = rand_t(r, {2, 3, 4});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(add(in[0], in[1]), w);
    }, {a, b}, seed);
  });

  add_def("add scalar", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor a = rand_t(r, {3, 5});
    Tensor w = rand_t(r, {3, 5});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(add(in[0], 0.7), w);
    }, {a}, seed);
  });

  add_def("sub", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor a = rand_t(r, {4, 3}), b = rand_t(r, {4, 3});
    Tensor w = rand_t(r, {4, 3});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(sub(in[0], in[1]), w);
    }, {a, b}, seed);
  });

  add_def("sub from scalar", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor a = rand_t(r, {4, 3});
    Tensor w = rand_t(r, {4, 3});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(sub(1.5, in[0]), w);
    }, {a}, seed);
  });

  add_def("mul broadcast", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor a = rand_t(r, {2, 3, 4}), b = rand_t(r, {4});
    Tensor w = rand_t(r, {2, 3, 4});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(mul(in[0], in[1]), w);
    }, {a, b}, seed);
  });

  add_def("div", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor a = rand_t(r, {3, 4}), b = rand_away(r, {3, 4}, 0.5);
    Tensor w = rand_t(r, {3, 4});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(div(in[0], in[1]), w);
    }, {a, b}, seed);
  });

  add_def("scale", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor a = rand_t(r, {2, 6});
    Tensor w = rand_t(r, {2, 6});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(scale(in[0], -2.5), w);
    }, {a}, seed);
  });

  add_def("matmul 2d", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor a = rand_t(r, {3, 4}), b = rand_t(r, {4, 5});
    Tensor w = rand_t(r, {3, 5});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(matmul(in[0], in[1]), w);
    }, {a, b}, seed);
  });

  add_def("matmul batched x 2d", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor a = rand_t(r, {2, 3, 4}), b = rand_t(r, {4, 5});
    Tensor w = rand_t(r, {2, 3, 5});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(matmul(in[0], in[1]), w);
    }, {a, b}, seed);
  });

  add_def("matmul batched", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor a = rand_t(r, {2, 3, 4}), b = rand_t(r, {2, 4, 5});
    Tensor w = rand_t(r, {2, 3, 5});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(matmul(in[0], in[1]), w);
    }, {a, b}, seed);
  });

  add_def("conv2d", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor x = rand_t(r, {2, 3, 6, 6});
    Tensor k = rand_t(r, {4, 3, 3, 3});
    Tensor b = rand_t(r, {4});
    Tensor w = rand_t(r, {2, 4, 6, 6});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(conv2d(in[0], in[1], in[2], 1, 1), w);
    }, {x, k, b}, seed);
  });

  add_def("conv2d strided", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor x = rand_t(r, {1, 2, 6, 6});
    Tensor k = rand_t(r, {3, 2, 2, 2});
    Tensor w = rand_t(r, {1, 3, 3, 3});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(conv2d(in[0], in[1], Tensor{}, 2, 0), w);
    }, {x, k}, seed);
  });

  add_def("conv_transpose2d", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor x = rand_t(r, {1, 4, 3, 3});
    Tensor k = rand_t(r, {4, 3, 4, 4});
    Tensor w = rand_t(r, {1, 3, 6, 6});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(conv_transpose2d(in[0], in[1], 2), w);
    }, {x, k}, seed);
  });

  add_def("bilinear_upsample", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor x = rand_t(r, {1, 2, 3, 3});
    Tensor w = rand_t(r, {1, 2, 6, 6});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(bilinear_upsample(in[0], 2), w);
    }, {x}, seed);
  });

  add_def("avg_pool2d", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor x = rand_t(r, {1, 2, 4, 4});
    Tensor w = rand_t(r, {1, 2, 2, 2});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(avg_pool2d(in[0], 2), w);
    }, {x}, seed);
  });

  add_def("softmax", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor x = rand_t(r, {2, 3, 5}, -2.0, 2.0);
    Tensor w = rand_t(r, {2, 3, 5});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(softmax(in[0], 2), w);
    }, {x}, seed);
  });

  add_def("softmax inner axis", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor x = rand_t(r, {2, 4, 3}, -2.0, 2.0);
    Tensor w = rand_t(r, {2, 4, 3});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(softmax(in[0], 1), w);
    }, {x}, seed);
  });

  add_def("layernorm", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor x = rand_t(r, {2, 3, 8});
    Tensor g = rand_t(r, {8}, 0.5, 1.5);
    Tensor b = rand_t(r, {8});
    Tensor w = rand_t(r, {2, 3, 8});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(layernorm(in[0], in[1], in[2]), w);
    }, {x, g, b}, seed);
  });

  add_def("gelu", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor x = rand_t(r, {3, 7}, -2.0, 2.0);
    Tensor w = rand_t(r, {3, 7});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(gelu(in[0]), w);
    }, {x}, seed);
  });

  add_def("relu", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor x = rand_away(r, {3, 7}, 0.05);
    Tensor w = rand_t(r, {3, 7});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(relu(in[0]), w);
    }, {x}, seed);
  });

  add_def("log", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor x = rand_t(r, {3, 5}, 0.5, 2.0);
    Tensor w = rand_t(r, {3, 5});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(log(in[0]), w);
    }, {x}, seed);
  });

  add_def("clamp", [](u64 seed) {
    SplitMix64 r(seed);
    // Bounds at +-0.5; keep every coordinate at least 0.05 away from them so
    // the finite-difference probe never crosses the kink.
    Tensor x = Tensor::zeros({4, 5});
    for (double& v : x.mutable_values()) {
      const double u = r.uniform();
      if (u < 0.5) v = r.uniform(-0.45, 0.45);
      else if (u < 0.75) v = r.uniform(0.55, 1.0);
      else v = r.uniform(-1.0, -0.55);
    }
    Tensor w = rand_t(r, {4, 5});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(clamp(in[0], -0.5, 0.5), w);
    }, {x}, seed);
  });

  add_def("concat", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor a = rand_t(r, {2, 2, 3}), b = rand_t(r, {2, 1, 3}), c = rand_t(r, {2, 4, 3});
    Tensor w = rand_t(r, {2, 7, 3});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(concat({in[0], in[1], in[2]}, 1), w);
    }, {a, b, c}, seed);
  });

  add_def("split", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor x = rand_t(r, {2, 6, 3});
    Tensor w0 = rand_t(r, {2, 2, 3}), w1 = rand_t(r, {2, 3, 3}), w2 = rand_t(r, {2, 1, 3});
    return check([w0, w1, w2](Tape&, const std::vector<Tensor>& in) {
      auto parts = split(in[0], {2, 3, 1}, 1);
      Tensor s = add(weighted_sum(parts[0], w0), weighted_sum(parts[1], w1));
      return add(s, weighted_sum(parts[2], w2));
    }, {x}, seed);
  });

  add_def("reshape", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor x = rand_t(r, {2, 3, 4});
    Tensor w = rand_t(r, {4, 6});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(reshape(in[0], {4, 6}), w);
    }, {x}, seed);
  });

  add_def("permute", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor x = rand_t(r, {2, 3, 4});
    Tensor w = rand_t(r, {4, 2, 3});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(permute(in[0], {2, 0, 1}), w);
    }, {x}, seed);
  });

  add_def("reduce_sum axis", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor x = rand_t(r, {2, 3, 4});
    Tensor w = rand_t(r, {2, 4});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(reduce_sum(in[0], 1), w);
    }, {x}, seed);
  });

  add_def("reduce_mean", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor x = rand_t(r, {3, 4});
    Tensor w = rand_t(r, {3});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      Tensor rows = reduce_mean(in[0], 1);
      return add(weighted_sum(rows, w), reduce_mean(in[0]));
    }, {x}, seed);
  });

  add_def("gather_rows", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor table = rand_t(r, {7, 4});
    Tensor w = rand_t(r, {5, 4});
    // Repeated rows exercise gradient accumulation in the scatter.
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(gather_rows(in[0], {0, 3, 3, 6, 1}), w);
    }, {table}, seed);
  });

  add_def("patchify", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor x = rand_t(r, {1, 2, 4, 4});
    Tensor w = rand_t(r, {1, 4, 8});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(patchify(in[0], 2), w);
    }, {x}, seed);
  });

  add_def("patch embedding", [](u64 seed) {
    SplitMix64 r(seed);
    Tensor x = rand_t(r, {1, 2, 4, 4});
    Tensor proj = rand_t(r, {8, 6});
    Tensor pos = rand_t(r, {4, 6});
    Tensor w = rand_t(r, {1, 4, 6});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      return weighted_sum(embed_patches(in[0], {in[1], in[2]}), w);
    }, {x, proj, pos}, seed);
  });

  add_def("multi_scale_block", [](u64 seed) {
    SplitMix64 r(seed);
    // 5 channels split {3,1,1}.
    Tensor x = rand_t(r, {1, 5, 4, 4});
    Tensor w1 = rand_t(r, {3, 3, 1, 1}), b1 = rand_t(r, {3});
    Tensor w3 = rand_t(r, {1, 1, 3, 3}), b3 = rand_t(r, {1});
    Tensor w5 = rand_t(r, {1, 1, 5, 5}), b5 = rand_t(r, {1});
    Tensor w = rand_t(r, {1, 5, 4, 4});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      MultiScaleParams p{in[1], in[2], in[3], in[4], in[5], in[6]};
      return weighted_sum(multi_scale_block(in[0], p), w);
    }, {x, w1, b1, w3, b3, w5, b5}, seed);
  });

  add_def("msa with bias", [](u64 seed) {
    SplitMix64 r(seed);
    const i64 n = 4, d = 6, heads = 2, m = 2;
    Tensor z = rand_t(r, {2, n, d});
    Tensor wq = rand_t(r, {d, d}), wk = rand_t(r, {d, d}), wv = rand_t(r, {d, d});
    Tensor bias = rand_t(r, {(2 * m - 1) * (2 * m - 1), heads});
    Tensor w = rand_t(r, {2, n, d});
    return check([w, heads, m](Tape&, const std::vector<Tensor>& in) {
      AttentionParams p;
      p.wq = in[1];
      p.wk = in[2];
      p.wv = in[3];
      p.bias_table = in[4];
      p.heads = heads;
      p.window = m;
      return weighted_sum(msa(in[0], p), w);
    }, {z, wq, wk, wv, bias}, seed);
  });

  add_def("transformer_block", [](u64 seed) {
    SplitMix64 r(seed);
    const i64 n = 4, d = 8, heads = 2, m = 2, hidden = 12;
    Tensor z = rand_t(r, {1, n, d});
    Tensor g1 = rand_t(r, {d}, 0.5, 1.5), be1 = rand_t(r, {d});
    Tensor wq = rand_t(r, {d, d}), wk = rand_t(r, {d, d});
    Tensor wv = rand_t(r, {d, d}), wo = rand_t(r, {d, d});
    Tensor bias = rand_t(r, {(2 * m - 1) * (2 * m - 1), heads});
    Tensor g2 = rand_t(r, {d}, 0.5, 1.5), be2 = rand_t(r, {d});
    Tensor w1 = rand_t(r, {d, hidden}), b1 = rand_t(r, {hidden});
    Tensor w2 = rand_t(r, {hidden, d}), b2 = rand_t(r, {d});
    Tensor w = rand_t(r, {1, n, d});
    return check([w, heads, m](Tape&, const std::vector<Tensor>& in) {
      TransformerBlockParams p;
      p.norm1 = {in[1], in[2]};
      p.attn.wq = in[3];
      p.attn.wk = in[4];
      p.attn.wv = in[5];
      p.attn.wo = in[6];
      p.attn.bias_table = in[7];
      p.attn.heads = heads;
      p.attn.window = m;
      p.norm2 = {in[8], in[9]};
      p.mlp = {in[10], in[11], in[12], in[13]};
      return weighted_sum(transformer_block(in[0], p), w);
    }, {z, g1, be1, wq, wk, wv, wo, bias, g2, be2, w1, b1, w2, b2}, seed);
  });

  add_def("gsa", [](u64 seed) {
    SplitMix64 r(seed);
    const i64 c = 8, cr = 1;
    Tensor x = rand_t(r, {1, c, 3, 3});
    Tensor wm = rand_t(r, {cr, c, 1, 1}), bm = rand_t(r, {cr});
    Tensor wn = rand_t(r, {cr, c, 1, 1}), bn = rand_t(r, {cr});
    Tensor ww = rand_t(r, {c, c, 1, 1}), bw = rand_t(r, {c});
    Tensor w = rand_t(r, {1, c, 3, 3});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      GsaParams p{in[1], in[2], in[3], in[4], in[5], in[6]};
      return weighted_sum(gsa(in[0], p), w);
    }, {x, wm, bm, wn, bn, ww, bw}, seed);
  });

  add_def("decoder_stage", [](u64 seed) {
    SplitMix64 r(seed);
    const i64 cin = 4, wout = 3;
    Tensor prev = rand_t(r, {1, cin, 3, 3});
    Tensor skip = rand_t(r, {1, 2, 6, 6});
    Tensor proc_w = rand_t(r, {wout, cin, 3, 3}), proc_b = rand_t(r, {wout});
    Tensor fuse_w = rand_t(r, {wout, wout + cin + 2, 3, 3}), fuse_b = rand_t(r, {wout});
    Tensor w = rand_t(r, {1, wout, 6, 6});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      DecoderStageParams p;
      p.mode = UpsampleMode::bilinear;
      p.proc_w = in[2];
      p.proc_b = in[3];
      p.fuse_w = in[4];
      p.fuse_b = in[5];
      return weighted_sum(decoder_stage(in[0], in[1], p), w);
    }, {prev, skip, proc_w, proc_b, fuse_w, fuse_b}, seed);
  });

  add_def("decoder_stage transposed", [](u64 seed) {
    SplitMix64 r(seed);
    const i64 cin = 3, wout = 2;
    Tensor prev = rand_t(r, {1, cin, 3, 3});
    Tensor skip = rand_t(r, {1, 2, 6, 6});
    Tensor up_main = rand_t(r, {cin, cin, 4, 4});
    Tensor up_proc = rand_t(r, {cin, cin, 4, 4});
    Tensor proc_w = rand_t(r, {wout, cin, 3, 3}), proc_b = rand_t(r, {wout});
    Tensor fuse_w = rand_t(r, {wout, wout + cin + 2, 3, 3}), fuse_b = rand_t(r, {wout});
    Tensor w = rand_t(r, {1, wout, 6, 6});
    return check([w](Tape&, const std::vector<Tensor>& in) {
      DecoderStageParams p;
      p.mode = UpsampleMode::transposed_conv;
      p.up_main_w = in[2];
      p.up_proc_w = in[3];
      p.proc_w = in[4];
      p.proc_b = in[5];
      p.fuse_w = in[6];
      p.fuse_b = in[7];
      return weighted_sum(decoder_stage(in[0], in[1], p), w);
    }, {prev, skip, up_main, up_proc, proc_w, proc_b, fuse_w, fuse_b}, seed);
  });

  return defs;
}

}  // namespace

bool run_gradient_suite(u64 base_seed, std::ostream& out, i64 seeds) {
  const std::vector<CheckDef> defs = build_checks();
  i64 passed = 0, total = 0;
  for (const CheckDef& def : defs) {
    for (i64 s = 0; s < seeds; ++s) {
      const u64 seed = base_seed + static_cast<u64>(s);
      const GradCheckReport rep = def.run(seed);
      ++total;
      if (rep.pass) ++passed;
      char line[160];
      std::snprintf(line, sizeof line,
                    "%-4s %-28s seed=%llu coords=%lld max_rel_err=%.3e\n",
                    rep.pass ? "ok" : "FAIL", def.name.c_str(),
                    static_cast<unsigned long long>(seed),
                    static_cast<long long>(rep.coords_checked), rep.max_rel_err);
      out << line;
      if (!rep.pass) {
        char detail[160];
        std::snprintf(detail, sizeof detail,
                      "     worst input=%lld coord=%lld analytic=%.9e numeric=%.9e\n",
                      static_cast<long long>(rep.worst_input),
                      static_cast<long long>(rep.worst_coord), rep.worst_analytic,
                      rep.worst_numeric);
        out << detail;
      }
    }
  }
  out << "gradient suite: " << passed << "/" << total << " checks passed\n";
  return passed == total;
}

}  // namespace vitbis
