#include "fewshot/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "fewshot/loss.hpp"
#include "fewshot/network.hpp"

namespace fewshot {

GradCheckReport run_gradcheck(GradCheckProblem& problem, Rng& rng,
                              double step) {
  std::vector<int> sig0;
  const std::vector<double> y0 = problem.forward(&sig0);
  std::vector<double> gout(y0.size());
  for (auto& g : gout) g = rng.normal();

  const auto analytic = problem.backward(gout);

  GradCheckReport report;
  for (std::size_t a = 0; a < problem.arrays.size(); ++a) {
    auto& arr = problem.arrays[a];
    for (std::size_t i = 0; i < arr.len; ++i) {
      const double saved = arr.data[i];
      std::vector<int> sig_plus, sig_minus;
      arr.data[i] = saved + step;
      const std::vector<double> yp = problem.forward(&sig_plus);
      arr.data[i] = saved - step;
      const std::vector<double> ym = problem.forward(&sig_minus);
      arr.data[i] = saved;
      if (sig_plus != sig_minus) {
        ++report.skipped;
        continue;
      }
      double lp = 0, lm = 0;
      for (std::size_t j = 0; j < gout.size(); ++j) {
        lp += gout[j] * yp[j];
        lm += gout[j] * ym[j];
      }
      const double numeric = (lp - lm) / (2.0 * step);
      const double a_val = analytic[a][i];
      const double rel = std::abs(a_val - numeric) /
                         std::max({std::abs(a_val), std::abs(numeric), 1e-8});
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_coordinate =
            arr.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

namespace {

using T4 = Tensor4<double>;

T4 random_tensor(int n, int c, int h, int w, Rng& rng, double scale = 1.0) {
  T4 t(n, c, h, w);
  for (auto& v : t.data) v = rng.normal() * scale;
  return t;
}

// magnitudes in [0.1, 1.1] with random sign: stays clear of the PReLU kink
T4 kink_safe_tensor(int n, int c, int h, int w, Rng& rng) {
  T4 t(n, c, h, w);
  for (auto& v : t.data) {
    const double mag = 0.1 + rng.uniform(0.0, 1.0);
    v = rng.uniform(0.0, 1.0) < 0.5 ? -mag : mag;
  }
  return t;
}

// shuffled grid values spaced 0.02 apart: argmax stable under 1e-3 steps
T4 separated_tensor(int n, int c, int h, int w, Rng& rng) {
  T4 t(n, c, h, w);
  std::vector<double> vals(t.data.size());
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.02 * double(i);
  for (std::size_t i = vals.size(); i > 1; --i)
    std::swap(vals[i - 1], vals[rng.below(i)]);
  t.data = vals;
  return t;
}

void append_signs(const T4& t, std::vector<int>* sig) {
  if (!sig) return;
  for (const double v : t.data) sig->push_back(v >= 0 ? 1 : 0);
}

void append_idx(const PoolIndices& idx, std::vector<int>* sig) {
  if (!sig) return;
  for (const auto v : idx.argmax) sig->push_back(int(v));
}

ConvParams<double> random_conv(int out_c, int in_c, int k, Rng& rng,
                               double scale = 0.3) {
  ConvParams<double> p;
  p.weights = random_tensor(out_c, in_c, k, k, rng, scale);
  p.bias.resize(out_c);
  for (auto& b : p.bias) b = rng.normal() * 0.3;
  return p;
}

BlockParams<double> random_block(int out_c, int in_c, int k, Rng& rng) {
  BlockParams<double> b;
  // The batchnorm that closes each block makes the loss invariant to a
  // per-channel scaling of the conv weights, so larger weights shrink the
  // step's relative truncation error without changing the function tested.
  b.conv = random_conv(out_c, in_c, k, rng, 1.5);
  b.prelu.alpha.resize(out_c);
  for (auto& a : b.prelu.alpha) a = 0.25 + 0.1 * rng.normal();
  b.bn.gamma.resize(out_c);
  b.bn.beta.resize(out_c);
  for (auto& g : b.bn.gamma) g = 1.0 + 0.2 * rng.normal();
  for (auto& g : b.bn.beta) g = 0.2 * rng.normal();
  b.bn.running_mean.assign(out_c, 0.0);
  b.bn.running_var.assign(out_c, 1.0);
  return b;
}

std::vector<double> flat(const T4& t) { return t.data; }

struct Holder {
  // keeps problem state alive for the closures
  std::vector<T4> tensors;
  std::vector<ConvParams<double>> convs;
  std::vector<BlockParams<double>> blocks;
  std::vector<SseParams<double>> sses;
  std::vector<CseParams<double>> cses;
  std::vector<PoolIndices> idx;
  std::vector<std::vector<double>> vectors;
  NetworkParams<double> net;
};

using ProblemFactory =
    std::function<GradCheckProblem(Holder&, Rng&)>;

GradCheckProblem conv_problem(Holder& h, Rng& rng, int n, int c, int hh,
                              int ww, int out_c, int k, bool corrupt) {
  h.tensors.push_back(random_tensor(n, c, hh, ww, rng));
  h.convs.push_back(random_conv(out_c, c, k, rng));
  T4& x = h.tensors.back();
  ConvParams<double>& p = h.convs.back();
  const int pad = (k - 1) / 2;
  GradCheckProblem prob;
  prob.arrays = {{"x", x.data.data(), x.data.size()},
                 {"w", p.weights.data.data(), p.weights.data.size()},
                 {"b", p.bias.data(), p.bias.size()}};
  prob.forward = [&x, &p, pad](std::vector<int>*) {
    return flat(conv2d_forward(x, p, pad));
  };
  prob.backward = [&x, &p, pad, corrupt](const std::vector<double>& gout) {
    T4 gy(x.n, p.out_c(), x.h, x.w);
    gy.data = gout;
    auto g = conv2d_backward(x, p, gy, pad);
    if (corrupt)
      for (auto& v : g.w.data) v *= 1.01;  // detector-sanity fixture
    return std::vector<std::vector<double>>{g.x.data, g.w.data, g.b};
  };
  return prob;
}

GradCheckProblem prelu_problem(Holder& h, Rng& rng) {
  h.tensors.push_back(kink_safe_tensor(1, 3, 6, 6, rng));
  h.vectors.push_back({0.25, 0.4, 0.1});
  T4& x = h.tensors.back();
  auto& alpha = h.vectors.back();
  GradCheckProblem prob;
  prob.arrays = {{"x", x.data.data(), x.data.size()},
                 {"alpha", alpha.data(), alpha.size()}};
  prob.forward = [&x, &alpha](std::vector<int>* sig) {
    append_signs(x, sig);
    PReluParams<double> p{alpha};
    return flat(prelu_forward(x, p));
  };
  prob.backward = [&x, &alpha](const std::vector<double>& gout) {
    PReluParams<double> p{alpha};
    T4 gy = x;
    gy.data = gout;
    auto g = prelu_backward(x, p, gy);
    return std::vector<std::vector<double>>{g.x.data, g.alpha};
  };
  return prob;
}

GradCheckProblem batchnorm_problem(Holder& h, Rng& rng) {
  h.tensors.push_back(random_tensor(2, 3, 5, 5, rng));
  h.blocks.push_back(random_block(3, 3, 1, rng));
  T4& x = h.tensors.back();
  BatchNormParams<double>& p = h.blocks.back().bn;
  GradCheckProblem prob;
  prob.arrays = {{"x", x.data.data(), x.data.size()},
                 {"gamma", p.gamma.data(), p.gamma.size()},
                 {"beta", p.beta.data(), p.beta.size()}};
  prob.forward = [&x, &p](std::vector<int>*) {
    return flat(batchnorm_forward(x, p, BnMode::train).y);
  };
  prob.backward = [&x, &p](const std::vector<double>& gout) {
    auto r = batchnorm_forward(x, p, BnMode::train);
    T4 gy = x;
    gy.data = gout;
    auto g = batchnorm_backward(r.cache, p, gy);
    return std::vector<std::vector<double>>{g.x.data, g.gamma, g.beta};
  };
  return prob;
}

GradCheckProblem maxpool_unpool_problem(Holder& h, Rng& rng) {
  h.tensors.push_back(separated_tensor(1, 2, 8, 8, rng));
  T4& x = h.tensors.back();
  GradCheckProblem prob;
  prob.arrays = {{"x", x.data.data(), x.data.size()}};
  prob.forward = [&x](std::vector<int>* sig) {
    auto pr = maxpool2x2(x);
    append_idx(pr.idx, sig);
    return flat(unpool2x2(pr.y, pr.idx));
  };
  prob.backward = [&x](const std::vector<double>& gout) {
    auto pr = maxpool2x2(x);
    T4 gy(x.n, x.c, x.h, x.w);
    gy.data = gout;
    auto g_pooled = unpool2x2_backward(pr.idx, gy);
    auto gx = maxpool2x2_backward(pr.idx, g_pooled);
    return std::vector<std::vector<double>>{gx.data};
  };
  return prob;
}

GradCheckProblem sigmoid_problem(Holder& h, Rng& rng) {
  h.tensors.push_back(random_tensor(1, 2, 5, 5, rng, 2.0));
  T4& x = h.tensors.back();
  GradCheckProblem prob;
  prob.arrays = {{"x", x.data.data(), x.data.size()}};
  prob.forward = [&x](std::vector<int>*) { return flat(sigmoid(x)); };
  prob.backward = [&x](const std::vector<double>& gout) {
    auto y = sigmoid(x);
    T4 gy = x;
    gy.data = gout;
    return std::vector<std::vector<double>>{sigmoid_backward(y, gy).data};
  };
  return prob;
}

GradCheckProblem softmax_problem(Holder& h, Rng& rng) {
  h.tensors.push_back(random_tensor(1, 3, 4, 4, rng, 2.0));
  T4& x = h.tensors.back();
  GradCheckProblem prob;
  prob.arrays = {{"x", x.data.data(), x.data.size()}};
  prob.forward = [&x](std::vector<int>*) {
    return flat(softmax_over_channels(x));
  };
  prob.backward = [&x](const std::vector<double>& gout) {
    auto y = softmax_over_channels(x);
    T4 gy = x;
    gy.data = gout;
    return std::vector<std::vector<double>>{softmax_backward(y, gy).data};
  };
  return prob;
}

GradCheckProblem sse_problem(Holder& h, Rng& rng) {
  h.tensors.push_back(random_tensor(1, 2, 6, 6, rng));  // u_con
  h.tensors.push_back(random_tensor(1, 3, 6, 6, rng));  // u_seg
  h.sses.push_back({{0.5, -0.3}, 0.1});
  T4& ucon = h.tensors[h.tensors.size() - 2];
  T4& useg = h.tensors.back();
  SseParams<double>& p = h.sses.back();
  GradCheckProblem prob;
  prob.arrays = {{"u_con", ucon.data.data(), ucon.data.size()},
                 {"u_seg", useg.data.data(), useg.data.size()},
                 {"w_sq", p.w_sq.data(), p.w_sq.size()},
                 {"bias", &p.bias, 1}};
  prob.forward = [&](std::vector<int>*) { return flat(sse_apply(ucon, useg, p)); };
  prob.backward = [&](const std::vector<double>& gout) {
    T4 out;
    auto cache = sse_forward(ucon, useg, p, out);
    T4 gy = useg;
    gy.data = gout;
    auto g = sse_backward(ucon, useg, p, cache, gy);
    return std::vector<std::vector<double>>{g.u_con.data, g.u_seg.data,
                                            g.w_sq, {g.bias}};
  };
  return prob;
}

GradCheckProblem cse_problem(Holder& h, Rng& rng) {
  h.tensors.push_back(random_tensor(1, 2, 6, 6, rng));
  h.tensors.push_back(random_tensor(1, 3, 6, 6, rng));
  CseParams<double> cp;
  cp.out_c = 3;
  cp.in_c = 2;
  cp.w_map.resize(6);
  for (auto& v : cp.w_map) v = rng.normal() * 0.5;
  cp.bias = {0.1, -0.2, 0.05};
  h.cses.push_back(std::move(cp));
  T4& ucon = h.tensors[h.tensors.size() - 2];
  T4& useg = h.tensors.back();
  CseParams<double>& p = h.cses.back();
  GradCheckProblem prob;
  prob.arrays = {{"u_con", ucon.data.data(), ucon.data.size()},
                 {"u_seg", useg.data.data(), useg.data.size()},
                 {"w_map", p.w_map.data(), p.w_map.size()},
                 {"bias", p.bias.data(), p.bias.size()}};
  prob.forward = [&](std::vector<int>*) { return flat(cse_apply(ucon, useg, p)); };
  prob.backward = [&](const std::vector<double>& gout) {
    T4 out;
    auto cache = cse_forward(ucon, useg, p, out);
    T4 gy = useg;
    gy.data = gout;
    auto g = cse_backward(ucon, useg, p, cache, gy);
    return std::vector<std::vector<double>>{g.u_con.data, g.u_seg.data,
                                            g.w_map, g.bias};
  };
  return prob;
}

void add_block_arrays(const std::string& prefix, BlockParams<double>& b,
                      GradCheckProblem& prob) {
  prob.arrays.push_back({prefix + ".conv.w", b.conv.weights.data.data(),
                         b.conv.weights.data.size()});
  prob.arrays.push_back({prefix + ".conv.b", b.conv.bias.data(),
                         b.conv.bias.size()});
  prob.arrays.push_back({prefix + ".alpha", b.prelu.alpha.data(),
                         b.prelu.alpha.size()});
  prob.arrays.push_back({prefix + ".gamma", b.bn.gamma.data(),
                         b.bn.gamma.size()});
  prob.arrays.push_back({prefix + ".beta", b.bn.beta.data(),
                         b.bn.beta.size()});
}

std::vector<std::vector<double>> block_grad_vectors(
    const BlockParams<double>& g) {
  return {g.conv.weights.data, g.conv.bias, g.prelu.alpha, g.bn.gamma,
          g.bn.beta};
}

GradCheckProblem encoder_block_problem(Holder& h, Rng& rng) {
  h.tensors.push_back(random_tensor(1, 2, 16, 16, rng));
  h.blocks.push_back(random_block(4, 2, 5, rng));
  T4& x = h.tensors.back();
  BlockParams<double>& bp = h.blocks.back();
  GradCheckProblem prob;
  prob.arrays = {{"x", x.data.data(), x.data.size()}};
  add_block_arrays("blk", bp, prob);
  prob.forward = [&x, &bp](std::vector<int>* sig) {
    GenericCache<double> cache;
    auto pre = generic_block_forward(x, bp, BnMode::train, cache);
    append_signs(cache.conv_out, sig);
    auto pr = maxpool2x2(pre);
    append_idx(pr.idx, sig);
    return flat(pr.y);
  };
  prob.backward = [&x, &bp](const std::vector<double>& gout) {
    GenericCache<double> cache;
    auto pre = generic_block_forward(x, bp, BnMode::train, cache);
    auto pr = maxpool2x2(pre);
    T4 gy(pr.y.n, pr.y.c, pr.y.h, pr.y.w);
    gy.data = gout;
    auto g_pre = maxpool2x2_backward(pr.idx, gy);
    BlockParams<double> gbp = bp;
    for (auto& v : gbp.conv.weights.data) v = 0;
    std::fill(gbp.conv.bias.begin(), gbp.conv.bias.end(), 0.0);
    std::fill(gbp.prelu.alpha.begin(), gbp.prelu.alpha.end(), 0.0);
    std::fill(gbp.bn.gamma.begin(), gbp.bn.gamma.end(), 0.0);
    std::fill(gbp.bn.beta.begin(), gbp.bn.beta.end(), 0.0);
    auto gx = generic_block_backward(bp, cache, g_pre, gbp);
    std::vector<std::vector<double>> out{gx.data};
    for (auto& v : block_grad_vectors(gbp)) out.push_back(std::move(v));
    return out;
  };
  return prob;
}

GradCheckProblem decoder_block_problem(Holder& h, Rng& rng) {
  // fixed pooling indices from a throwaway map; they are data, not a
  // differentiable input
  auto pr = maxpool2x2(separated_tensor(1, 4, 16, 16, rng));
  h.idx.push_back(pr.idx);
  h.tensors.push_back(random_tensor(1, 4, 8, 8, rng));
  h.blocks.push_back(random_block(4, 4, 5, rng));
  PoolIndices& idx = h.idx.back();
  T4& y = h.tensors.back();
  BlockParams<double>& bp = h.blocks.back();
  GradCheckProblem prob;
  prob.arrays = {{"y", y.data.data(), y.data.size()}};
  add_block_arrays("blk", bp, prob);
  prob.forward = [&y, &idx, &bp](std::vector<int>* sig) {
    auto up = unpool2x2(y, idx);
    GenericCache<double> cache;
    auto out = generic_block_forward(up, bp, BnMode::train, cache);
    append_signs(cache.conv_out, sig);
    return flat(out);
  };
  prob.backward = [&y, &idx, &bp](const std::vector<double>& gout) {
    auto up = unpool2x2(y, idx);
    GenericCache<double> cache;
    auto out = generic_block_forward(up, bp, BnMode::train, cache);
    T4 gy = out;
    gy.data = gout;
    BlockParams<double> gbp = bp;
    for (auto& v : gbp.conv.weights.data) v = 0;
    std::fill(gbp.conv.bias.begin(), gbp.conv.bias.end(), 0.0);
    std::fill(gbp.prelu.alpha.begin(), gbp.prelu.alpha.end(), 0.0);
    std::fill(gbp.bn.gamma.begin(), gbp.bn.gamma.end(), 0.0);
    std::fill(gbp.bn.beta.begin(), gbp.bn.beta.end(), 0.0);
    auto g_up = generic_block_backward(bp, cache, gy, gbp);
    auto g_y = unpool2x2_backward(idx, g_up);
    std::vector<std::vector<double>> outv{g_y.data};
    for (auto& v : block_grad_vectors(gbp)) outv.push_back(std::move(v));
    return outv;
  };
  return prob;
}

GradCheckProblem dice_problem(Holder& h, Rng& rng) {
  T4 pred(1, 1, 6, 6);
  for (auto& v : pred.data) v = rng.uniform(0.2, 0.8);
  T4 target(1, 1, 6, 6);
  for (auto& v : target.data) v = rng.uniform(0.0, 1.0) < 0.5 ? 0.0 : 1.0;
  h.tensors.push_back(std::move(pred));
  h.tensors.push_back(std::move(target));
  T4& p = h.tensors[h.tensors.size() - 2];
  T4& t = h.tensors.back();
  GradCheckProblem prob;
  prob.arrays = {{"pred", p.data.data(), p.data.size()}};
  prob.forward = [&p, &t](std::vector<int>*) {
    return std::vector<double>{dice_loss(p, t)};
  };
  prob.backward = [&p, &t](const std::vector<double>& gout) {
    auto g = dice_loss_grad(p, t);
    for (auto& v : g.data) v *= gout[0];
    return std::vector<std::vector<double>>{g.data};
  };
  return prob;
}

void append_cache_signature(const TwoArmCache<double>& cache,
                            std::vector<int>* sig) {
  if (!sig) return;
  auto arm = [&](const ArmCache<double>& a) {
    for (const auto& e : a.enc) append_signs(e.conv_out, sig);
    for (const auto& i : a.idx) append_idx(i, sig);
    if (a.bottleneck.conv_out.n > 0)
      append_signs(a.bottleneck.conv_out, sig);
    for (const auto& d : a.dec) append_signs(d.conv_out, sig);
  };
  arm(cache.cond);
  arm(cache.seg);
}

GradCheckProblem two_arm_problem(Holder& h, Rng& rng) {
  FewShotConfig cfg;
  cfg.depth = 2;
  cfg.cond_channels = 2;
  cfg.seg_channels = 3;
  cfg.se_type = SeType::spatial;
  cfg.se_positions = {true, true, true};
  h.net = init_network_params<double>(cfg, rng);
  // enlarge the block conv weights (absorbed by each block's batchnorm) to
  // tame finite-difference truncation at the fixed 1e-3 step; the classifier
  // has no batchnorm behind it and stays at its initialization scale
  auto scale_arm = [](ArmParams<double>& arm) {
    for (auto* b : {&arm.bottleneck})
      for (auto& v : b->conv.weights.data) v *= 4.0;
    for (auto& b : arm.encoders)
      for (auto& v : b.conv.weights.data) v *= 4.0;
    for (auto& b : arm.decoders)
      for (auto& v : b.conv.weights.data) v *= 4.0;
  };
  scale_arm(h.net.conditioner);
  scale_arm(h.net.segmenter);
  h.tensors.push_back(random_tensor(1, 2, 16, 16, rng));
  h.tensors.push_back(random_tensor(1, 1, 16, 16, rng));
  T4& support = h.tensors[h.tensors.size() - 2];
  T4& query = h.tensors.back();
  NetworkParams<double>& net = h.net;
  GradCheckProblem prob;
  for (auto& r : trainable_arrays(net))
    prob.arrays.push_back({r.name, r.data, r.len});
  prob.arrays.push_back({"support", support.data.data(), support.data.size()});
  prob.arrays.push_back({"query", query.data.data(), query.data.size()});
  prob.forward = [&net, &support, &query](std::vector<int>* sig) {
    TwoArmCache<double> cache;
    auto out = two_arm_forward(support, query, net, BnMode::train, cache);
    append_cache_signature(cache, sig);
    return flat(out.probs);
  };
  prob.backward = [&net, &support, &query](const std::vector<double>& gout) {
    TwoArmCache<double> cache;
    two_arm_forward(support, query, net, BnMode::train, cache);
    T4 gp = cache.probs;
    gp.data = gout;
    auto g = two_arm_backward(net, cache, gp);
    std::vector<std::vector<double>> out;
    for (auto& r : trainable_arrays(g.params))
      out.emplace_back(r.data, r.data + r.len);
    out.push_back(g.support.data);
    out.push_back(g.query.data);
    return out;
  };
  return prob;
}

GradCheckProblem make_problem(const std::string& op_id, Holder& h, Rng& rng) {
  if (op_id == "conv5x5") return conv_problem(h, rng, 1, 2, 6, 6, 3, 5, false);
  if (op_id == "conv1x1") return conv_problem(h, rng, 1, 3, 5, 5, 2, 1, false);
  if (op_id == "conv5x5_corrupted_fixture")
    return conv_problem(h, rng, 1, 2, 6, 6, 3, 5, true);
  if (op_id == "prelu") return prelu_problem(h, rng);
  if (op_id == "batchnorm_train") return batchnorm_problem(h, rng);
  if (op_id == "maxpool_unpool") return maxpool_unpool_problem(h, rng);
  if (op_id == "sigmoid") return sigmoid_problem(h, rng);
  if (op_id == "softmax_channels") return softmax_problem(h, rng);
  if (op_id == "sse") return sse_problem(h, rng);
  if (op_id == "cse") return cse_problem(h, rng);
  if (op_id == "encoder_block") return encoder_block_problem(h, rng);
  if (op_id == "decoder_block") return decoder_block_problem(h, rng);
  if (op_id == "dice_loss") return dice_problem(h, rng);
  if (op_id == "two_arm_16x16") return two_arm_problem(h, rng);
  throw ConfigError("gradcheck: unknown op id '" + op_id + "'");
}

}  // namespace

GradCheckReport gradcheck_report(const std::string& op_id, std::uint64_t seed,
                                 double step) {
  Holder h;
  Rng rng(mix_seed(seed, 17));
  GradCheckProblem prob = make_problem(op_id, h, rng);
  return run_gradcheck(prob, rng, step);
}

double gradcheck(const std::string& op_id, std::uint64_t seed) {
  return gradcheck_report(op_id, seed).max_rel_error;
}

std::vector<std::string> gradcheck_default_suite() {
  return {"conv5x5",       "conv1x1",         "prelu",
          "batchnorm_train", "maxpool_unpool", "sigmoid",
          "softmax_channels", "sse",           "cse",
          "encoder_block", "decoder_block",   "dice_loss",
          "two_arm_16x16"};
}

}  // namespace fewshot
