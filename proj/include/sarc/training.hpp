#pragma once

#include "sarc/dataset.hpp"
#include "sarc/eval.hpp"
#include "sarc/layers.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace sarc {

struct CyclicLRConfig {
  double base_lr = 1e-6;
  double max_lr = 2e-5;
  long step_size = 0;  // iterations per half cycle; 0 = two epochs' worth
  double momentum_high = 0.825;
  double momentum_low = 0.725;

  void validate() const;
};

// Triangular schedule. Learning rate climbs base->max over step_size
// iterations and back; momentum moves inversely (high at base lr, low at max).
std::pair<double, double> cyclic_lr(long iteration, const CyclicLRConfig& cfg);

struct TrainConfig {
  int batch_size = 4;
  int max_epochs = 10;
  int patience = 3;
  uint64_t seed = 0;
  CyclicLRConfig lr;
  std::vector<int> window_sizes{3};
  int min_freq = 2;

  void validate() const;
};

/// Classical momentum: m = mu * m + g; theta -= eta * m.
class MomentumSgd {
 public:
  void step(ParamMap& params, const ParamMap& grads, double lr, double momentum);

 private:
  ParamMap velocity_;
};

struct TrainSample {
  std::string id;
  std::vector<int> ids;
  Label label = Label::NotSarcasm;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double valid_precision = 0.0;  // macro
  double valid_recall = 0.0;
  double valid_f1 = 0.0;
  double lr_min = 0.0;
  double lr_max = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
  double best_f1 = 0.0;
};

// Minibatch gradient descent with cycled momentum on mean cross-entropy.
// Stops when validation macro-F1 fails to improve for `patience` epochs and
// returns the best checkpoint, not the last.
ModelParams train(const ModelParams& init, const std::vector<TrainSample>& train_data,
                  const std::vector<TrainSample>& valid_data, const TrainConfig& cfg,
                  TrainHistory* history = nullptr);

Label predict_label(const Vec& probs);  // argmax, ties to NOT_SARCASM
MetricReport evaluate_model(const ModelParams& params, const std::vector<TrainSample>& samples);

enum class Combine { MeanProb, MajorityVote };

struct EnsembleMember {
  int window_size = 0;
  ModelParams params;
  TrainHistory history;
};

struct EnsembleModel {
  std::vector<EnsembleMember> members;  // ascending by window size
  Combine combine = Combine::MeanProb;
};

TrainSample make_sample(const ContextWindowView& view, const Vocab& vocab, int max_seq_len);

// One member per window size, each trained on the corpus windowed to its
// size. Vocabulary is built once from the training records.
EnsembleModel train_context_ensemble(const std::vector<DialogueRecord>& train_records,
                                     const std::vector<DialogueRecord>& valid_records,
                                     const EncoderConfig& enc, const BiLstmConfig& lstm,
                                     const NextVladConfig& vlad, Pooling pooling,
                                     const TrainConfig& cfg);

std::pair<Label, Vec> ensemble_predict(const EnsembleModel& model, const DialogueRecord& record);

}  // namespace sarc
