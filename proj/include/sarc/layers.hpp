#pragma once

#include "sarc/tensor.hpp"

#include <optional>
#include <random>
#include <string>
#include <vector>

namespace sarc {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Mode { Train, Eval };
enum class Pooling { NextVlad, Max, Mean };

std::string to_string(Pooling p);
Pooling parse_pooling(const std::string& s);

struct EncoderConfig {
  int num_layers = 4;
  int hidden_dim = 64;  // D
  int num_heads = 4;
  int ffn_dim = 128;
  int max_seq_len = 64;
  int vocab_size = 0;
};

struct BiLstmConfig {
  int num_layers = 2;
  int hidden_dim = 16;  // H; output feature dimension is 2H
  double dropout = 0.25;
};

struct NextVladConfig {
  int groups = 4;        // G
  int expansion = 2;     // lambda
  int num_clusters = 8;  // K
  int output_dim = 32;   // post-VLAD projection dimension
  int input_dim = 32;    // N; must equal 2H when stacked after the BiLSTM

  int expanded_dim() const { return expansion * input_dim; }
  int group_dim() const { return expanded_dim() / groups; }
  int descriptor_len() const { return num_clusters * group_dim(); }
};

/// Named parameter tensors plus the configs that fix their shapes. The vocab
/// travels with the parameters so a checkpoint is self-contained.
struct ModelParams {
  EncoderConfig encoder;
  BiLstmConfig bilstm;
  NextVladConfig nextvlad;
  Pooling pooling = Pooling::NextVlad;
  bool finetune_encoder = true;
  int window_size = 3;  // context window this model was trained with (-1 = full)
  std::vector<std::string> vocab_tokens;
  ParamMap tensors;
};

// Validates config invariants (head divisibility, group divisibility, dims)
// and throws ConfigError on violation.
void validate_configs(const EncoderConfig& enc, const BiLstmConfig& lstm,
                      const NextVladConfig& vlad, Pooling pooling);

ModelParams init_params(const EncoderConfig& enc, const BiLstmConfig& lstm,
                        const NextVladConfig& vlad, Pooling pooling, uint64_t seed);

int classifier_input_dim(const ModelParams& p);

// ---- encoder ----

struct LayerNormCache {
  Mat xhat;
  Vec inv_sigma;
};

struct EncoderLayerCache {
  Mat x_in, q, k, v;
  std::vector<Mat> attn;  // per-head row-softmax, T x T
  Mat o, m, r1;
  LayerNormCache ln1;
  Mat y, f1, f2, f3, r2;
  LayerNormCache ln2;
};

struct EncoderCache {
  std::vector<int> ids;
  Mat x0;
  std::vector<EncoderLayerCache> layers;
};

// Per-token contextual states, T x D. Errors when T exceeds max_seq_len or an
// id is outside the vocabulary; truncation belongs upstream.
Mat encode(const std::vector<int>& ids, const ModelParams& p, Mode mode,
           EncoderCache* cache = nullptr);
void encode_backward(const Mat& grad_out, const EncoderCache& cache, const ModelParams& p,
                     ParamMap& grads);

// ---- bilstm ----

struct LstmDirCache {
  Mat x;  // inputs in this direction's processing order
  Mat gi, gf, gg, go, c, tanh_c, h;
};

struct BiLstmLayerCache {
  LstmDirCache fw, bw;
  Mat mask;  // inverted-dropout mask applied to this layer's output
  bool dropout_applied = false;
};

struct BiLstmCache {
  std::vector<BiLstmLayerCache> layers;
};

// Concatenated forward/backward top-layer states, T x 2H. Dropout sits only
// between stacked layers and only in train mode; rng is required then.
Mat bilstm_forward(const Mat& x, const ModelParams& p, Mode mode, std::mt19937_64* rng,
                   BiLstmCache* cache = nullptr);
Mat bilstm_backward(const Mat& grad_out, const BiLstmCache& cache, const ModelParams& p,
                    ParamMap& grads);

// ---- nextvlad ----

struct NextVladCache {
  Mat x, xe;
  Mat attn;    // T x G, sigmoid group attention
  Mat assign;  // (T*G) x K, row-softmax cluster assignment
  Tensor v;    // K x P aggregated residuals, pre-normalization
  Tensor vn;   // K x P intra-normalized
};

Vec nextvlad_forward(const Mat& x, const ModelParams& p, NextVladCache* cache = nullptr);
Mat nextvlad_backward(const Vec& grad_out, const NextVladCache& cache, const ModelParams& p,
                      ParamMap& grads);

// ---- pooling / classifier ----

Vec pool(const Mat& h, Pooling mode);  // Max or Mean
Mat pool_backward(const Vec& grad_out, const Mat& h, Pooling mode);

Vec classify(const Vec& features, const ModelParams& p);
// -log p(gold), eps-clamped inside the log.
double cross_entropy(const Vec& probs, int gold);
// Backward through classify and cross_entropy jointly; returns grad wrt the
// feature vector and accumulates classifier grads.
Vec classify_ce_backward(const Vec& probs, int gold, const Vec& features, const ModelParams& p,
                         ParamMap& grads);

// ---- full stack ----

struct ForwardCache {
  EncoderCache enc;
  bool used_encoder = false;
  Mat h_enc;   // T x D features entering the BiLSTM
  BiLstmCache lstm;
  Mat h_lstm;  // T x 2H
  NextVladCache vlad;
  Vec pooled;
  Vec probs;
};

Vec model_forward(const std::vector<int>& ids, const ModelParams& p, Mode mode,
                  std::mt19937_64* rng = nullptr, ForwardCache* cache = nullptr);
// Same stack fed with precomputed per-token embeddings instead of token ids.
Vec model_forward_embedded(const Mat& embedded, const ModelParams& p, Mode mode,
                           std::mt19937_64* rng = nullptr, ForwardCache* cache = nullptr);
void model_backward(int gold, const ForwardCache& cache, const ModelParams& p, ParamMap& grads);

}  // namespace sarc
