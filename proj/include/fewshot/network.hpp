#pragma once

// The two-armed few-shot segmentation network: a conditioner arm encoding the
// support set into task representations, and a segmenter arm whose feature
// maps are recalibrated by interaction (SE) blocks at configurable sites.
// Backward passes are hand-wired per block.

#include <functional>
#include <utility>
#include <vector>

#include "fewshot/config.hpp"
#include "fewshot/layers.hpp"
#include "fewshot/rng.hpp"
#include "fewshot/se_blocks.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot {

template <class T>
struct BlockParams {
  ConvParams<T> conv;
  PReluParams<T> prelu;
  BatchNormParams<T> bn;
};

template <class T>
struct ArmParams {
  std::vector<BlockParams<T>> encoders;
  BlockParams<T> bottleneck;
  std::vector<BlockParams<T>> decoders;
};

template <class T>
struct NetworkParams {
  FewShotConfig cfg;
  ArmParams<T> conditioner, segmenter;
  std::vector<SseParams<T>> sse;  // one per interaction site when spatial
  std::vector<CseParams<T>> cse;  // one per interaction site when channel
  ConvParams<T> classifier;       // 1x1, 2 outputs
};

// ---------------------------------------------------------------------------
// Initialization

template <class T>
ConvParams<T> init_conv(int out_c, int in_c, int k, Rng& rng) {
  ConvParams<T> p;
  p.weights = Tensor4<T>(out_c, in_c, k, k);
  p.bias.assign(out_c, T(0));
  // fan-in scaled, zero mean (He-style, suits the PReLU blocks)
  const double sd = std::sqrt(2.0 / (double(in_c) * k * k));
  for (auto& v : p.weights.data) v = T(rng.normal() * sd);
  return p;
}

template <class T>
BlockParams<T> init_block(int out_c, int in_c, int k, Rng& rng) {
  BlockParams<T> b;
  b.conv = init_conv<T>(out_c, in_c, k, rng);
  b.prelu.alpha.assign(out_c, T(0.25));
  b.bn.gamma.assign(out_c, T(1));
  b.bn.beta.assign(out_c, T(0));
  b.bn.running_mean.assign(out_c, T(0));
  b.bn.running_var.assign(out_c, T(1));
  return b;
}

template <class T>
ArmParams<T> init_arm(int width, int input_c, bool skip, int depth, Rng& rng) {
  ArmParams<T> arm;
  for (int s = 0; s < depth; ++s)
    arm.encoders.push_back(init_block<T>(width, s == 0 ? input_c : width, 5, rng));
  arm.bottleneck = init_block<T>(width, width, 5, rng);
  for (int s = 0; s < depth; ++s)
    arm.decoders.push_back(init_block<T>(width, skip ? 2 * width : width, 5, rng));
  return arm;
}

template <class T>
NetworkParams<T> init_network_params(const FewShotConfig& cfg, Rng& rng) {
  validate_config(cfg);
  NetworkParams<T> p;
  p.cfg = cfg;
  p.conditioner = init_arm<T>(cfg.cond_channels, 2, cfg.skip_conditioner,
                              cfg.depth, rng);
  p.segmenter = init_arm<T>(cfg.seg_channels, 1, cfg.skip_segmenter,
                            cfg.depth, rng);
  const auto sites = interaction_sites(cfg);
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (cfg.se_type == SeType::spatial) {
      SseParams<T> sp;
      sp.w_sq.assign(cfg.cond_channels, T(0));
      const double sd = std::sqrt(2.0 / cfg.cond_channels);
      for (auto& v : sp.w_sq) v = T(rng.normal() * sd);
      sp.bias = T(0);
      p.sse.push_back(std::move(sp));
    } else {
      CseParams<T> cp;
      cp.out_c = cfg.seg_channels;
      cp.in_c = cfg.cond_channels;
      cp.w_map.assign(std::size_t(cp.out_c) * cp.in_c, T(0));
      const double sd = std::sqrt(2.0 / cfg.cond_channels);
      for (auto& v : cp.w_map) v = T(rng.normal() * sd);
      cp.bias.assign(cp.out_c, T(0));
      p.cse.push_back(std::move(cp));
    }
  }
  p.classifier = init_conv<T>(2, cfg.seg_channels, 1, rng);
  return p;
}

// ---------------------------------------------------------------------------
// Flat views over every parameter array, used by the optimizer, the
// checkpoint writer and gradcheck. Order is fixed.

template <class T>
struct ParamRef {
  std::string name;
  T* data;
  std::size_t len;
};

template <class T>
void collect_block_arrays(const std::string& prefix, BlockParams<T>& b,
                          std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".conv.w", b.conv.weights.data.data(),
                 b.conv.weights.data.size()});
  out.push_back({prefix + ".conv.b", b.conv.bias.data(), b.conv.bias.size()});
  out.push_back({prefix + ".prelu.alpha", b.prelu.alpha.data(),
                 b.prelu.alpha.size()});
  out.push_back({prefix + ".bn.gamma", b.bn.gamma.data(), b.bn.gamma.size()});
  out.push_back({prefix + ".bn.beta", b.bn.beta.data(), b.bn.beta.size()});
}

template <class T>
void collect_arm_arrays(const std::string& prefix, ArmParams<T>& arm,
                        std::vector<ParamRef<T>>& out) {
  for (std::size_t s = 0; s < arm.encoders.size(); ++s)
    collect_block_arrays(prefix + ".enc" + std::to_string(s), arm.encoders[s],
                         out);
  collect_block_arrays(prefix + ".bottleneck", arm.bottleneck, out);
  for (std::size_t s = 0; s < arm.decoders.size(); ++s)
    collect_block_arrays(prefix + ".dec" + std::to_string(s), arm.decoders[s],
                         out);
}

template <class T>
std::vector<ParamRef<T>> trainable_arrays(NetworkParams<T>& p) {
  std::vector<ParamRef<T>> out;
  collect_arm_arrays("cond", p.conditioner, out);
  collect_arm_arrays("seg", p.segmenter, out);
  for (std::size_t i = 0; i < p.sse.size(); ++i) {
    out.push_back({"sse" + std::to_string(i) + ".w_sq", p.sse[i].w_sq.data(),
                   p.sse[i].w_sq.size()});
    out.push_back({"sse" + std::to_string(i) + ".bias", &p.sse[i].bias, 1});
  }
  for (std::size_t i = 0; i < p.cse.size(); ++i) {
    out.push_back({"cse" + std::to_string(i) + ".w_map", p.cse[i].w_map.data(),
                   p.cse[i].w_map.size()});
    out.push_back({"cse" + std::to_string(i) + ".bias", p.cse[i].bias.data(),
                   p.cse[i].bias.size()});
  }
  out.push_back({"classifier.w", p.classifier.weights.data.data(),
                 p.classifier.weights.data.size()});
  out.push_back({"classifier.b", p.classifier.bias.data(),
                 p.classifier.bias.size()});
  return out;
}

// Batch-norm running statistics: persisted but not optimized.
template <class T>
std::vector<ParamRef<T>> state_arrays(NetworkParams<T>& p) {
  std::vector<ParamRef<T>> out;
  auto arm = [&](const std::string& prefix, ArmParams<T>& a) {
    auto blk = [&](const std::string& bp, BlockParams<T>& b) {
      out.push_back({bp + ".bn.rmean", b.bn.running_mean.data(),
                     b.bn.running_mean.size()});
      out.push_back({bp + ".bn.rvar", b.bn.running_var.data(),
                     b.bn.running_var.size()});
    };
    for (std::size_t s = 0; s < a.encoders.size(); ++s)
      blk(prefix + ".enc" + std::to_string(s), a.encoders[s]);
    blk(prefix + ".bottleneck", a.bottleneck);
    for (std::size_t s = 0; s < a.decoders.size(); ++s)
      blk(prefix + ".dec" + std::to_string(s), a.decoders[s]);
  };
  arm("cond", p.conditioner);
  arm("seg", p.segmenter);
  return out;
}

template <class T>
NetworkParams<T> make_zero_grads(const NetworkParams<T>& p) {
  NetworkParams<T> g = p;
  for (auto& ref : trainable_arrays(g))
    std::fill(ref.data, ref.data + ref.len, T(0));
  return g;
}

template <class T>
void add_scaled(T* dst, const T* src, std::size_t len, T scale = T(1)) {
  for (std::size_t i = 0; i < len; ++i) dst[i] += scale * src[i];
}

// ---------------------------------------------------------------------------
// Channel concat / split for the skip-connection variants

template <class T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w)
    throw ShapeError("concat_channels: mismatched " + a.shape_str() + " vs " +
                     b.shape_str());
  Tensor4<T> out(a.n, a.c + b.c, a.h, a.w);
  const int hw = a.h * a.w;
  for (int i = 0; i < a.n; ++i) {
    std::copy(a.data.begin() + std::size_t(i) * a.c * hw,
              a.data.begin() + std::size_t(i + 1) * a.c * hw,
              out.data.begin() + std::size_t(i) * (a.c + b.c) * hw);
    std::copy(b.data.begin() + std::size_t(i) * b.c * hw,
              b.data.begin() + std::size_t(i + 1) * b.c * hw,
              out.data.begin() + (std::size_t(i) * (a.c + b.c) + a.c) * hw);
  }
  return out;
}

template <class T>
void split_channels(const Tensor4<T>& g, int ca, Tensor4<T>& ga,
                    Tensor4<T>& gb) {
  const int cb = g.c - ca;
  ga = Tensor4<T>(g.n, ca, g.h, g.w);
  gb = Tensor4<T>(g.n, cb, g.h, g.w);
  const int hw = g.h * g.w;
  for (int i = 0; i < g.n; ++i) {
    std::copy(g.data.begin() + std::size_t(i) * g.c * hw,
              g.data.begin() + (std::size_t(i) * g.c + ca) * hw,
              ga.data.begin() + std::size_t(i) * ca * hw);
    std::copy(g.data.begin() + (std::size_t(i) * g.c + ca) * hw,
              g.data.begin() + std::size_t(i + 1) * g.c * hw,
              gb.data.begin() + std::size_t(i) * cb * hw);
  }
}

// ---------------------------------------------------------------------------
// Generic block: conv(5x5, same pad) -> PReLU -> batchnorm

template <class T>
struct GenericCache {
  Tensor4<T> x;         // conv input
  Tensor4<T> conv_out;  // PReLU input
  BnCache<T> bn;
};

template <class T>
Tensor4<T> generic_block_forward(const Tensor4<T>& x, const BlockParams<T>& bp,
                                 BnMode mode, GenericCache<T>& cache) {
  cache.x = x;
  cache.conv_out = conv2d_forward(x, bp.conv, (bp.conv.kernel() - 1) / 2);
  Tensor4<T> act = prelu_forward(cache.conv_out, bp.prelu);
  BnResult<T> bn = batchnorm_forward(act, bp.bn, mode);
  cache.bn = std::move(bn.cache);
  return std::move(bn.y);
}

template <class T>
Tensor4<T> generic_block_backward(const BlockParams<T>& bp,
                                  const GenericCache<T>& cache,
                                  const Tensor4<T>& grad_y,
                                  BlockParams<T>& gp) {
  BnGrads<T> bg = batchnorm_backward(cache.bn, bp.bn, grad_y);
  add_scaled(gp.bn.gamma.data(), bg.gamma.data(), bg.gamma.size());
  add_scaled(gp.bn.beta.data(), bg.beta.data(), bg.beta.size());
  PReluGrads<T> pg = prelu_backward(cache.conv_out, bp.prelu, bg.x);
  add_scaled(gp.prelu.alpha.data(), pg.alpha.data(), pg.alpha.size());
  ConvGrads<T> cg =
      conv2d_backward(cache.x, bp.conv, pg.x, (bp.conv.kernel() - 1) / 2);
  add_scaled(gp.conv.weights.data.data(), cg.w.data.data(), cg.w.data.size());
  add_scaled(gp.conv.bias.data(), cg.b.data(), cg.b.size());
  return std::move(cg.x);
}

// ---------------------------------------------------------------------------
// One arm: encoders (block + pool), bottleneck, decoders (unpool + block).
// The hook is invoked on the stream after every block output, in forward
// order; the backward hook is invoked on the gradient stream at the same
// points in reverse.

template <class T>
struct ArmCache {
  std::vector<GenericCache<T>> enc;
  std::vector<PoolIndices> idx;
  std::vector<Tensor4<T>> prepool;
  GenericCache<T> bottleneck;
  std::vector<GenericCache<T>> dec;
};

template <class T, class Hook>
Tensor4<T> arm_forward(const Tensor4<T>& input, const ArmParams<T>& ap,
                       bool skip, BnMode mode, ArmCache<T>& cache,
                       Hook&& hook) {
  const int depth = int(ap.encoders.size());
  cache.enc.resize(depth);
  cache.idx.resize(depth);
  cache.prepool.resize(depth);
  cache.dec.resize(depth);
  Tensor4<T> stream = input;
  for (int s = 0; s < depth; ++s) {
    Tensor4<T> pre =
        generic_block_forward(stream, ap.encoders[s], mode, cache.enc[s]);
    PoolResult<T> pr = maxpool2x2(pre);
    cache.prepool[s] = std::move(pre);
    cache.idx[s] = std::move(pr.idx);
    stream = std::move(pr.y);
    hook(SiteKind::encoder, s, stream);
  }
  stream = generic_block_forward(stream, ap.bottleneck, mode, cache.bottleneck);
  hook(SiteKind::bottleneck, 0, stream);
  for (int s = 0; s < depth; ++s) {
    const int es = depth - 1 - s;
    Tensor4<T> up = unpool2x2(stream, cache.idx[es]);
    Tensor4<T> conv_in =
        skip ? concat_channels(up, cache.prepool[es]) : std::move(up);
    stream = generic_block_forward(conv_in, ap.decoders[s], mode, cache.dec[s]);
    hook(SiteKind::decoder, s, stream);
  }
  return stream;
}

template <class T, class Hook>
Tensor4<T> arm_backward(const ArmParams<T>& ap, const ArmCache<T>& cache,
                        bool skip, Tensor4<T> grad, ArmParams<T>& gp,
                        Hook&& hook) {
  const int depth = int(ap.encoders.size());
  std::vector<Tensor4<T>> skip_grads(depth);
  for (int s = depth - 1; s >= 0; --s) {
    hook(SiteKind::decoder, s, grad);
    const int es = depth - 1 - s;
    Tensor4<T> g_conv_in =
        generic_block_backward(ap.decoders[s], cache.dec[s], grad,
                               gp.decoders[s]);
    Tensor4<T> g_up;
    if (skip) {
      split_channels(g_conv_in, g_conv_in.c - cache.prepool[es].c, g_up,
                     skip_grads[es]);
    } else {
      g_up = std::move(g_conv_in);
    }
    grad = unpool2x2_backward(cache.idx[es], g_up);
  }
  hook(SiteKind::bottleneck, 0, grad);
  grad = generic_block_backward(ap.bottleneck, cache.bottleneck, grad,
                                gp.bottleneck);
  for (int s = depth - 1; s >= 0; --s) {
    hook(SiteKind::encoder, s, grad);
    Tensor4<T> g_pre = maxpool2x2_backward(cache.idx[s], grad);
    if (skip && skip_grads[s].n > 0)
      add_scaled(g_pre.data.data(), skip_grads[s].data.data(),
                 g_pre.data.size());
    grad = generic_block_backward(ap.encoders[s], cache.enc[s], g_pre,
                                  gp.encoders[s]);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Full two-arm forward / backward

template <class T>
struct SeSiteCache {
  Tensor4<T> u_seg_in;  // segmenter stream before recalibration
  SseCache<T> sse;
  CseCache<T> cse;
};

template <class T>
struct TwoArmCache {
  ArmCache<T> cond, seg;
  std::vector<Tensor4<T>> task_rep;  // conditioner map per enabled site
  std::vector<SeSiteCache<T>> se;
  Tensor4<T> classifier_in, logits, probs;
  int sup_n = 0, sup_c = 0, sup_h = 0, sup_w = 0;
};

template <class T>
struct TwoArmOutput {
  Tensor4<T> logits, probs;
};

inline int site_ordinal(const std::vector<Site>& sites, SiteKind k, int s) {
  for (std::size_t i = 0; i < sites.size(); ++i)
    if (sites[i].kind == k && sites[i].index == s) return int(i);
  return -1;
}

template <class T>
TwoArmOutput<T> two_arm_forward(const Tensor4<T>& support2ch,
                                const Tensor4<T>& query,
                                const NetworkParams<T>& p, BnMode mode,
                                TwoArmCache<T>& cache) {
  const auto sites = interaction_sites(p.cfg);
  cache.task_rep.assign(sites.size(), Tensor4<T>());
  cache.se.assign(sites.size(), SeSiteCache<T>());
  cache.sup_n = support2ch.n;
  cache.sup_c = support2ch.c;
  cache.sup_h = support2ch.h;
  cache.sup_w = support2ch.w;
  if (!sites.empty()) {
    arm_forward(support2ch, p.conditioner, p.cfg.skip_conditioner, mode,
                cache.cond, [&](SiteKind k, int s, Tensor4<T>& stream) {
                  const int o = site_ordinal(sites, k, s);
                  if (o >= 0) cache.task_rep[o] = stream;
                });
  }
  Tensor4<T> seg_out = arm_forward(
      query, p.segmenter, p.cfg.skip_segmenter, mode, cache.seg,
      [&](SiteKind k, int s, Tensor4<T>& stream) {
        const int o = site_ordinal(sites, k, s);
        if (o < 0) return;
        cache.se[o].u_seg_in = stream;
        Tensor4<T> out;
        if (p.cfg.se_type == SeType::spatial)
          cache.se[o].sse = sse_forward(cache.task_rep[o], stream, p.sse[o], out);
        else
          cache.se[o].cse = cse_forward(cache.task_rep[o], stream, p.cse[o], out);
        stream = std::move(out);
      });
  cache.classifier_in = std::move(seg_out);
  cache.logits = conv2d_forward(cache.classifier_in, p.classifier, 0);
  cache.probs = softmax_over_channels(cache.logits);
  return {cache.logits, cache.probs};
}

// Fold this step's batch statistics into the running estimates. Call once per
// training step, after a train-mode forward.
template <class T>
void commit_running_stats(NetworkParams<T>& p, const TwoArmCache<T>& cache) {
  auto arm = [](ArmParams<T>& a, const ArmCache<T>& c) {
    if (c.enc.empty()) return;  // arm was skipped this step
    for (std::size_t s = 0; s < a.encoders.size(); ++s)
      batchnorm_update_running(a.encoders[s].bn, c.enc[s].bn);
    batchnorm_update_running(a.bottleneck.bn, c.bottleneck.bn);
    for (std::size_t s = 0; s < a.decoders.size(); ++s)
      batchnorm_update_running(a.decoders[s].bn, c.dec[s].bn);
  };
  arm(p.conditioner, cache.cond);
  arm(p.segmenter, cache.seg);
}

template <class T>
struct TwoArmGrads {
  NetworkParams<T> params;
  Tensor4<T> support;  // grad wrt the stacked 2-channel support input
  Tensor4<T> query;
};

template <class T>
TwoArmGrads<T> two_arm_backward(const NetworkParams<T>& p,
                                const TwoArmCache<T>& cache,
                                const Tensor4<T>& grad_probs) {
  const auto sites = interaction_sites(p.cfg);
  TwoArmGrads<T> g{make_zero_grads(p), Tensor4<T>(), Tensor4<T>()};
  Tensor4<T> grad_logits = softmax_backward(cache.probs, grad_probs);
  ConvGrads<T> cg =
      conv2d_backward(cache.classifier_in, p.classifier, grad_logits, 0);
  add_scaled(g.params.classifier.weights.data.data(), cg.w.data.data(),
             cg.w.data.size());
  add_scaled(g.params.classifier.bias.data(), cg.b.data(), cg.b.size());

  std::vector<Tensor4<T>> site_grads(sites.size());
  g.query = arm_backward(
      p.segmenter, cache.seg, p.cfg.skip_segmenter, std::move(cg.x),
      g.params.segmenter, [&](SiteKind k, int s, Tensor4<T>& grad) {
        const int o = site_ordinal(sites, k, s);
        if (o < 0) return;
        if (p.cfg.se_type == SeType::spatial) {
          SseGrads<T> sg =
              sse_backward(cache.task_rep[o], cache.se[o].u_seg_in, p.sse[o],
                           cache.se[o].sse, grad);
          add_scaled(g.params.sse[o].w_sq.data(), sg.w_sq.data(),
                     sg.w_sq.size());
          g.params.sse[o].bias += sg.bias;
          site_grads[o] = std::move(sg.u_con);
          grad = std::move(sg.u_seg);
        } else {
          CseGrads<T> sg =
              cse_backward(cache.task_rep[o], cache.se[o].u_seg_in, p.cse[o],
                           cache.se[o].cse, grad);
          add_scaled(g.params.cse[o].w_map.data(), sg.w_map.data(),
                     sg.w_map.size());
          add_scaled(g.params.cse[o].bias.data(), sg.bias.data(),
                     sg.bias.size());
          site_grads[o] = std::move(sg.u_con);
          grad = std::move(sg.u_seg);
        }
      });

  if (!sites.empty()) {
    const Tensor4<T>& final_out =
        cache.cond.dec.back().bn.x_hat;  // shape reference only
    g.support = arm_backward(
        p.conditioner, cache.cond, p.cfg.skip_conditioner,
        zeros_like(final_out), g.params.conditioner,
        [&](SiteKind k, int s, Tensor4<T>& grad) {
          const int o = site_ordinal(sites, k, s);
          if (o >= 0)
            add_scaled(grad.data.data(), site_grads[o].data.data(),
                       grad.data.size());
        });
  } else {
    g.support = Tensor4<T>(cache.sup_n, cache.sup_c, cache.sup_h, cache.sup_w);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Spec-facing entry points

template <class T>
void validate_network_input(const Tensor4<T>& image, int depth,
                            const char* who) {
  const int div = 1 << depth;
  if (image.h % div != 0 || image.w % div != 0)
    throw ShapeError(std::string(who) + ": spatial dims " + image.shape_str() +
                     " not divisible by 2^depth = " + std::to_string(div));
}

// Runs the support pair through the conditioner and returns the feature map
// at every enabled interaction site, in site order.
template <class T>
std::vector<Tensor4<T>> conditioner_forward(const Tensor4<T>& support_image,
                                            const Tensor4<T>& support_mask,
                                            const NetworkParams<T>& p,
                                            BnMode mode = BnMode::infer) {
  require_same_shape(support_image, support_mask, "conditioner_forward");
  validate_network_input(support_image, p.cfg.depth, "conditioner_forward");
  for (const T v : support_mask.data)
    if (v != T(0) && v != T(1))
      throw ConfigError("conditioner_forward: support mask must be binary");
  const Tensor4<T> stacked = concat_channels(support_image, support_mask);
  const auto sites = interaction_sites(p.cfg);
  std::vector<Tensor4<T>> rep(sites.size());
  ArmCache<T> cache;
  arm_forward(stacked, p.conditioner, p.cfg.skip_conditioner, mode, cache,
              [&](SiteKind k, int s, Tensor4<T>& stream) {
                const int o = site_ordinal(sites, k, s);
                if (o >= 0) rep[o] = stream;
              });
  return rep;
}

template <class T>
struct SegmenterOutput {
  Tensor4<T> logits;  // (n, 2, h, w)
  Tensor4<T> probs;   // softmax of logits
  Tensor4<T> mask;    // (n, 1, h, w), foreground = 1
};

template <class T>
SegmenterOutput<T> segmenter_forward(const Tensor4<T>& query_image,
                                     const std::vector<Tensor4<T>>& task_rep,
                                     const NetworkParams<T>& p,
                                     BnMode mode = BnMode::infer) {
  const auto sites = interaction_sites(p.cfg);
  if (task_rep.size() != sites.size())
    throw ConfigError("segmenter_forward: task representation has " +
                      std::to_string(task_rep.size()) + " maps, config needs " +
                      std::to_string(sites.size()));
  validate_network_input(query_image, p.cfg.depth, "segmenter_forward");
  ArmCache<T> cache;
  Tensor4<T> seg_out = arm_forward(
      query_image, p.segmenter, p.cfg.skip_segmenter, mode, cache,
      [&](SiteKind k, int s, Tensor4<T>& stream) {
        const int o = site_ordinal(sites, k, s);
        if (o < 0) return;
        stream = (p.cfg.se_type == SeType::spatial)
                     ? sse_apply(task_rep[o], stream, p.sse[o])
                     : cse_apply(task_rep[o], stream, p.cse[o]);
      });
  SegmenterOutput<T> out;
  out.logits = conv2d_forward(seg_out, p.classifier, 0);
  out.probs = softmax_over_channels(out.logits);
  out.mask = Tensor4<T>(out.probs.n, 1, out.probs.h, out.probs.w);
  const int hw = out.probs.h * out.probs.w;
  for (int i = 0; i < out.probs.n; ++i)
    for (int q = 0; q < hw; ++q) {
      const T bg = out.probs.data[(std::size_t(i) * 2 + 0) * hw + q];
      const T fg = out.probs.data[(std::size_t(i) * 2 + 1) * hw + q];
      out.mask.data[std::size_t(i) * hw + q] = fg > bg ? T(1) : T(0);
    }
  return out;
}

}  // namespace fewshot
