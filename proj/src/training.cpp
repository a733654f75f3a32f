#include "sarc/training.hpp"
#include <limits>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace sarc {

void CyclicLRConfig::validate() const {
  if (!(base_lr < max_lr)) throw ConfigError("cyclic lr: base_lr must be < max_lr");
  if (base_lr < 0) throw ConfigError("cyclic lr: base_lr must be >= 0");
  if (!(momentum_low < momentum_high)) {
    throw ConfigError("cyclic lr: momentum_low must be < momentum_high");
  }
  if (step_size < 0) throw ConfigError("cyclic lr: step_size must be >= 0");
}

std::pair<double, double> cyclic_lr(long iteration, const CyclicLRConfig& cfg) {
  if (iteration < 0) throw ConfigError("cyclic_lr: iteration must be >= 0");
  const long step = std::max<long>(cfg.step_size, 1);
  const double it = static_cast<double>(iteration);
  const double cycle = std::floor(1.0 + it / (2.0 * step));
  const double x = std::abs(it / step - 2.0 * cycle + 1.0);
  const double ramp = std::max(0.0, 1.0 - x);
  const double lr = cfg.base_lr + (cfg.max_lr - cfg.base_lr) * ramp;
  const double momentum = cfg.momentum_high - (cfg.momentum_high - cfg.momentum_low) * ramp;
  return {lr, momentum};
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("training: max_epochs must be >= 1");
  if (patience < 1) throw ConfigError("training: patience must be >= 1");
  if (window_sizes.empty()) throw ConfigError("training: window_sizes must be non-empty");
  if (min_freq < 1) throw ConfigError("training: min_freq must be >= 1");
  CyclicLRConfig probe = lr;
  if (probe.base_lr == probe.max_lr) {
    // the all-zero schedule is allowed for identity tests
    if (probe.base_lr != 0.0) throw ConfigError("cyclic lr: base_lr must be < max_lr");
  } else {
    probe.validate();
  }
}

void MomentumSgd::step(ParamMap& params, const ParamMap& grads, double lr, double momentum) {
  for (auto& [name, tensor] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    auto vit = velocity_.find(name);
    if (vit == velocity_.end()) vit = velocity_.emplace(name, Tensor(tensor.shape())).first;
    vit->second.flat() = momentum * vit->second.flat() + git->second.flat();
    tensor.flat() -= lr * vit->second.flat();
  }
}

Label predict_label(const Vec& probs) {
  return probs[1] > probs[0] ? Label::Sarcasm : Label::NotSarcasm;
}

MetricReport evaluate_model(const ModelParams& params, const std::vector<TrainSample>& samples) {
  std::vector<Label> pred, gold;
  pred.reserve(samples.size());
  gold.reserve(samples.size());
  for (const auto& s : samples) {
    pred.push_back(predict_label(model_forward(s.ids, params, Mode::Eval)));
    gold.push_back(s.label);
  }
  return metrics(confusion(pred, gold));
}

ModelParams train(const ModelParams& init, const std::vector<TrainSample>& train_data,
                  const std::vector<TrainSample>& valid_data, const TrainConfig& cfg,
                  TrainHistory* history) {
  cfg.validate();
  if (train_data.empty() || valid_data.empty()) {
    throw DataError("train: training and validation sets must be non-empty");
  }

  CyclicLRConfig lr_cfg = cfg.lr;
  if (lr_cfg.step_size == 0) {
    const long iters_per_epoch =
        (static_cast<long>(train_data.size()) + cfg.batch_size - 1) / cfg.batch_size;
    lr_cfg.step_size = std::max<long>(1, 2 * iters_per_epoch);
  }

  ModelParams params = init;
  MomentumSgd optimizer;
  std::mt19937_64 shuffle_rng(cfg.seed);
  std::mt19937_64 dropout_rng(cfg.seed + 0x9e3779b97f4a7c15ULL);

  TrainHistory local;
  TrainHistory& hist = history ? *history : local;
  hist = TrainHistory{};

  ModelParams best = params;
  int epochs_since_best = 0;
  long iteration = 0;

  std::vector<size_t> order(train_data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    long seen = 0;
    double lr_lo = std::numeric_limits<double>::infinity(), lr_hi = 0.0;

    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t stop = std::min(order.size(), start + cfg.batch_size);
      ParamMap grads;
      double batch_loss = 0.0;
      for (size_t i = start; i < stop; ++i) {
        const TrainSample& s = train_data[order[i]];
        ForwardCache cache;
        Vec probs = model_forward(s.ids, params, Mode::Train, &dropout_rng, &cache);
        batch_loss += cross_entropy(probs, static_cast<int>(s.label));
        model_backward(static_cast<int>(s.label), cache, params, grads);
      }
      const double scale = 1.0 / static_cast<double>(stop - start);
      batch_loss *= scale;
      const auto [lr, momentum] = cyclic_lr(iteration, lr_cfg);
      if (!std::isfinite(batch_loss)) {
        std::ostringstream os;
        os << "training diverged: non-finite loss at iteration " << iteration << " (epoch "
           << epoch + 1 << ", lr " << lr << ")";
        throw NumericalError(os.str());
      }
      for (auto& [name, g] : grads) g.flat() *= scale;
      optimizer.step(params.tensors, grads, lr, momentum);
      lr_lo = std::min(lr_lo, lr);
      lr_hi = std::max(lr_hi, lr);
      epoch_loss += batch_loss * static_cast<double>(stop - start);
      seen += static_cast<long>(stop - start);
      ++iteration;
    }

    MetricReport valid = evaluate_model(params, valid_data);
    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.train_loss = epoch_loss / static_cast<double>(seen);
    stats.valid_precision = valid.macro_precision;
    stats.valid_recall = valid.macro_recall;
    stats.valid_f1 = valid.macro_f1;
    stats.lr_min = lr_lo;
    stats.lr_max = lr_hi;
    hist.epochs.push_back(stats);

    if (hist.best_epoch < 0 || valid.macro_f1 > hist.best_f1) {
      hist.best_f1 = valid.macro_f1;
      hist.best_epoch = stats.epoch;
      best = params;
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (epochs_since_best >= cfg.patience) break;
    }
  }
  return best;
}

TrainSample make_sample(const ContextWindowView& view, const Vocab& vocab, int max_seq_len) {
  TrainSample s;
  s.id = view.source_id;
  s.ids = assemble_ids(view.turns, view.response, vocab, max_seq_len);
  if (view.label.has_value()) s.label = *view.label;
  return s;
}

namespace {

std::vector<TrainSample> windowed_samples(const std::vector<DialogueRecord>& records,
                                          int window_size, const Vocab& vocab, int max_seq_len) {
  std::vector<TrainSample> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    for (const auto& view : context_windows(rec, {window_size})) {
      if (!view.label.has_value()) {
        throw DataError("training sample " + rec.id + " has no label");
      }
      out.push_back(make_sample(view, vocab, max_seq_len));
    }
  }
  return out;
}

}  // namespace

EnsembleModel train_context_ensemble(const std::vector<DialogueRecord>& train_records,
                                     const std::vector<DialogueRecord>& valid_records,
                                     const EncoderConfig& enc, const BiLstmConfig& lstm,
                                     const NextVladConfig& vlad, Pooling pooling,
                                     const TrainConfig& cfg) {
  cfg.validate();
  Vocab vocab = build_vocab(train_records, cfg.min_freq);

  EncoderConfig enc_sized = enc;
  enc_sized.vocab_size = vocab.size();

  std::vector<int> sizes = cfg.window_sizes;
  std::sort(sizes.begin(), sizes.end(), [](int a, int b) {
    const long ea = a == kFullContext ? std::numeric_limits<long>::max() : a;
    const long eb = b == kFullContext ? std::numeric_limits<long>::max() : b;
    return ea < eb;
  });
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());

  EnsembleModel model;
  uint64_t member_index = 0;
  for (int w : sizes) {
    auto train_samples = windowed_samples(train_records, w, vocab, enc_sized.max_seq_len);
    auto valid_samples = windowed_samples(valid_records, w, vocab, enc_sized.max_seq_len);

    ModelParams init = init_params(enc_sized, lstm, vlad, pooling, cfg.seed + member_index);
    init.vocab_tokens = vocab.id_to_token;
    init.window_size = w;

    EnsembleMember member;
    member.window_size = w;
    TrainConfig member_cfg = cfg;
    member_cfg.seed = cfg.seed + member_index;
    member.params = train(init, train_samples, valid_samples, member_cfg, &member.history);
    model.members.push_back(std::move(member));
    ++member_index;
  }
  return model;
}

std::pair<Label, Vec> ensemble_predict(const EnsembleModel& model, const DialogueRecord& record) {
  if (model.members.empty()) throw ConfigError("ensemble_predict: no members");
  Vec mean_probs = Vec::Zero(2);
  Vec votes = Vec::Zero(2);
  for (const auto& member : model.members) {
    Vocab vocab = Vocab::from_tokens(member.params.vocab_tokens);
    auto views = context_windows(record, {member.window_size});
    TrainSample sample = make_sample(views.front(), vocab, member.params.encoder.max_seq_len);
    Vec probs = model_forward(sample.ids, member.params, Mode::Eval);
    mean_probs += probs;
    votes[static_cast<int>(predict_label(probs))] += 1.0;
  }
  mean_probs /= static_cast<double>(model.members.size());
  if (model.combine == Combine::MeanProb) {
    return {predict_label(mean_probs), mean_probs};
  }
  const Label voted = votes[1] > votes[0] ? Label::Sarcasm : Label::NotSarcasm;
  return {voted, mean_probs};
}

}  // namespace sarc
