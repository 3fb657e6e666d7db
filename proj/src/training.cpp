#include "fewshot/training.hpp"

#include <cmath>
#include <fstream>

#include "fewshot/loss.hpp"

namespace fewshot {

void TrainHyperparams::validate() const {
  if (learning_rate < 0 || weight_decay < 0)
    throw ConfigError("hyperparams: learning_rate and weight_decay must be >= 0");
  if (momentum < 0 || momentum >= 1)
    throw ConfigError("hyperparams: momentum must be in [0,1)");
  if (epochs < 0 || iters_per_epoch < 1)
    throw ConfigError("hyperparams: epochs >= 0 and iters_per_epoch >= 1 required");
}

void LabelUniverse::validate() const {
  if (train_classes.empty())
    throw ConfigError("label universe: train class set is empty");
  for (int c : train_classes)
    if (test_classes.count(c))
      throw ConfigError("label universe: class " + std::to_string(c) +
                        " appears in both train and test sets");
}

EpisodeDataset EpisodeDataset::build(std::vector<NormalizedVolume> volumes) {
  EpisodeDataset ds;
  ds.volumes_ = std::move(volumes);
  for (std::size_t vi = 0; vi < ds.volumes_.size(); ++vi) {
    const Volume& v = ds.volumes_[vi].v;
    if (!v.has_labels()) continue;
    for (int z = 0; z < v.dims.d; ++z) {
      std::set<int> present;
      const std::size_t base = std::size_t(z) * v.dims.h * v.dims.w;
      for (std::size_t q = 0; q < std::size_t(v.dims.h) * v.dims.w; ++q)
        if (v.labels[base + q] != 0) present.insert(v.labels[base + q]);
      for (int c : present) ds.by_class_[c].push_back({int(vi), z});
    }
  }
  return ds;
}

void EpisodeDataset::validate_for(const std::set<int>& classes) const {
  for (int c : classes) {
    auto it = by_class_.find(c);
    const std::size_t count = it == by_class_.end() ? 0 : it->second.size();
    if (count < 2)
      throw ConfigError("dataset: class " + std::to_string(c) + " has " +
                        std::to_string(count) +
                        " eligible slices, need at least 2");
  }
}

Tensor4<float> EpisodeDataset::slice_image(SliceRef ref) const {
  const Volume& v = volumes_[ref.volume].v;
  Tensor4<float> img(1, 1, v.dims.h, v.dims.w);
  const std::size_t base = std::size_t(ref.slice) * v.dims.h * v.dims.w;
  std::copy(v.intensities.begin() + base,
            v.intensities.begin() + base + img.data.size(), img.data.begin());
  return img;
}

Tensor4<float> EpisodeDataset::slice_mask(SliceRef ref, int class_id) const {
  const Volume& v = volumes_[ref.volume].v;
  Tensor4<float> mask(1, 1, v.dims.h, v.dims.w);
  const std::size_t base = std::size_t(ref.slice) * v.dims.h * v.dims.w;
  for (std::size_t q = 0; q < mask.data.size(); ++q)
    mask.data[q] = v.labels[base + q] == class_id ? 1.f : 0.f;
  return mask;
}

Episode EpisodeDataset::sample_episode(const LabelUniverse& universe,
                                       Rng& rng) const {
  universe.validate();
  const std::vector<int> classes(universe.train_classes.begin(),
                                 universe.train_classes.end());
  const int alpha = classes[rng.below(classes.size())];
  const auto it = by_class_.find(alpha);
  if (it == by_class_.end() || it->second.size() < 2)
    throw ConfigError("sample_episode: class " + std::to_string(alpha) +
                      " has fewer than 2 eligible slices");
  const auto& refs = it->second;
  // two distinct slices, without replacement
  const std::size_t i = rng.below(refs.size());
  std::size_t j = rng.below(refs.size() - 1);
  if (j >= i) ++j;
  Episode ep;
  ep.class_id = alpha;
  ep.support_image = slice_image(refs[i]);
  ep.support_mask = slice_mask(refs[i], alpha);
  ep.query_image = slice_image(refs[j]);
  ep.query_mask = slice_mask(refs[j], alpha);
  return ep;
}

SgdState make_sgd_state(const NetworkParams<float>& params) {
  return SgdState{make_zero_grads(params)};
}

void sgd_step(NetworkParams<float>& params, NetworkParams<float>& grads,
              SgdState& state, const TrainHyperparams& hp) {
  auto ps = trainable_arrays(params);
  auto gs = trainable_arrays(grads);
  auto vs = trainable_arrays(state.velocity);
  for (std::size_t a = 0; a < ps.size(); ++a) {
    float* w = ps[a].data;
    const float* g = gs[a].data;
    float* v = vs[a].data;
    for (std::size_t i = 0; i < ps[a].len; ++i) {
      const float g_eff = g[i] + hp.weight_decay * w[i];
      v[i] = hp.momentum * v[i] + g_eff;
      w[i] -= hp.learning_rate * v[i];
    }
  }
}

namespace {

// foreground (channel 1) probability map as (n,1,h,w)
Tensor4<float> foreground_channel(const Tensor4<float>& probs) {
  Tensor4<float> fg(probs.n, 1, probs.h, probs.w);
  const int hw = probs.h * probs.w;
  for (int i = 0; i < probs.n; ++i)
    std::copy(probs.data.begin() + (std::size_t(i) * probs.c + 1) * hw,
              probs.data.begin() + (std::size_t(i) * probs.c + 2) * hw,
              fg.data.begin() + std::size_t(i) * hw);
  return fg;
}

}  // namespace

TrainResult train(const EpisodeDataset& dataset, const LabelUniverse& universe,
                  const FewShotConfig& cfg, const TrainHyperparams& hp) {
  hp.validate();
  universe.validate();
  validate_config(cfg);
  dataset.validate_for(universe.train_classes);

  Rng rng(hp.seed);
  TrainResult result;
  result.params = init_network_params<float>(cfg, rng);
  SgdState state = make_sgd_state(result.params);
  TwoArmCache<float> cache;

  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    double epoch_sum = 0.0;
    for (int it = 0; it < hp.iters_per_epoch; ++it) {
      const int iteration = epoch * hp.iters_per_epoch + it;
      Episode ep = dataset.sample_episode(universe, rng);
      const Tensor4<float> support =
          concat_channels(ep.support_image, ep.support_mask);
      two_arm_forward(support, ep.query_image, result.params, BnMode::train,
                      cache);
      const Tensor4<float> fg = foreground_channel(cache.probs);
      const float loss = dice_loss(fg, ep.query_mask);
      if (!std::isfinite(loss))
        throw TrainingError("non-finite loss at iteration " +
                            std::to_string(iteration) + " (class " +
                            std::to_string(ep.class_id) + ", loss " +
                            std::to_string(loss) + ")");
      const Tensor4<float> gfg = dice_loss_grad(fg, ep.query_mask);
      Tensor4<float> grad_probs(cache.probs.n, cache.probs.c, cache.probs.h,
                                cache.probs.w);
      const int hw = cache.probs.h * cache.probs.w;
      for (int i = 0; i < cache.probs.n; ++i)
        std::copy(gfg.data.begin() + std::size_t(i) * hw,
                  gfg.data.begin() + std::size_t(i + 1) * hw,
                  grad_probs.data.begin() +
                      (std::size_t(i) * cache.probs.c + 1) * hw);
      TwoArmGrads<float> grads =
          two_arm_backward(result.params, cache, grad_probs);
      commit_running_stats(result.params, cache);
      sgd_step(result.params, grads.params, state, hp);
      result.curve.push_back({iteration, epoch, ep.class_id, loss});
      epoch_sum += loss;
    }
    result.epoch_means.push_back(float(epoch_sum / hp.iters_per_epoch));
  }
  return result;
}

void write_loss_csv(const std::vector<LossRecord>& curve,
                    const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("write_loss_csv: cannot open '" + path + "'");
  f << "iteration,epoch,class_id,loss\n";
  for (const auto& r : curve)
    f << r.iteration << "," << r.epoch << "," << r.class_id << "," << r.loss
      << "\n";
}

}  // namespace fewshot
