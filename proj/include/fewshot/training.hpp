#pragma once

// Episodic training: batch sampler, SGD with momentum and weight decay, and
// the training loop.

#include <map>
#include <set>
#include <string>
#include <vector>

#include "fewshot/network.hpp"
#include "fewshot/rng.hpp"
#include "fewshot/tensor.hpp"
#include "fewshot/volume.hpp"

namespace fewshot {

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Episode {
  Tensor4<float> support_image, support_mask;
  Tensor4<float> query_image, query_mask;
  int class_id = 0;
};

struct TrainHyperparams {
  float learning_rate = 0.01f;
  float weight_decay = 1e-4f;
  float momentum = 0.99f;
  int epochs = 10;
  int iters_per_epoch = 500;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainHyperparams&) const = default;
};

struct LabelUniverse {
  std::set<int> train_classes;
  std::set<int> test_classes;

  void validate() const;  // rejects intersecting sets
};

struct SliceRef {
  int volume = 0;
  int slice = 0;
};

// Normalized training volumes indexed by class: which (volume, slice) pairs
// contain each class.
class EpisodeDataset {
 public:
  static EpisodeDataset build(std::vector<NormalizedVolume> volumes);

  // every class in `classes` must appear on >= 2 slices
  void validate_for(const std::set<int>& classes) const;

  Tensor4<float> slice_image(SliceRef ref) const;
  Tensor4<float> slice_mask(SliceRef ref, int class_id) const;

  Episode sample_episode(const LabelUniverse& universe, Rng& rng) const;

  const std::map<int, std::vector<SliceRef>>& index() const { return by_class_; }
  const std::vector<NormalizedVolume>& volumes() const { return volumes_; }

 private:
  std::vector<NormalizedVolume> volumes_;
  std::map<int, std::vector<SliceRef>> by_class_;
};

struct SgdState {
  NetworkParams<float> velocity;  // one buffer per parameter, zero-initialized
};

SgdState make_sgd_state(const NetworkParams<float>& params);

// g' = g + wd*w; v <- momentum*v + g'; w <- w - lr*v  (classical momentum)
void sgd_step(NetworkParams<float>& params, NetworkParams<float>& grads,
              SgdState& state, const TrainHyperparams& hp);

struct LossRecord {
  int iteration = 0;  // global, 0-based
  int epoch = 0;      // 0-based
  int class_id = 0;
  float loss = 0.f;
};

struct TrainResult {
  NetworkParams<float> params;
  std::vector<LossRecord> curve;
  std::vector<float> epoch_means;
};

TrainResult train(const EpisodeDataset& dataset, const LabelUniverse& universe,
                  const FewShotConfig& cfg, const TrainHyperparams& hp);

void write_loss_csv(const std::vector<LossRecord>& curve,
                    const std::string& path);

}  // namespace fewshot
