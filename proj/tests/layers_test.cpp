#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sarc/checkpoint.hpp"
#include "sarc/gradcheck.hpp"
#include "sarc/layers.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

using namespace sarc;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo = -1.0,
               double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = dist(rng);
  return m;
}

// Small full-stack configuration used across the gradient checks.
ModelParams small_model(int enc_layers = 1, int d = 8, int heads = 2, int h = 6,
                        int lstm_layers = 2, Pooling pooling = Pooling::NextVlad,
                        uint64_t seed = 99) {
  EncoderConfig enc;
  enc.num_layers = enc_layers;
  enc.hidden_dim = d;
  enc.num_heads = heads;
  enc.ffn_dim = 2 * d;
  enc.max_seq_len = 16;
  enc.vocab_size = 12;
  BiLstmConfig lstm;
  lstm.num_layers = lstm_layers;
  lstm.hidden_dim = h;
  lstm.dropout = 0.0;
  NextVladConfig vlad;
  vlad.input_dim = 2 * h;
  vlad.expansion = 2;
  vlad.groups = 4;
  vlad.num_clusters = 8;
  vlad.output_dim = 16;
  return init_params(enc, lstm, vlad, pooling, seed);
}

ParamMap subset(const ParamMap& all, const std::string& prefix) {
  ParamMap out;
  for (const auto& [name, t] : all) {
    if (name.rfind(prefix, 0) == 0) out.emplace(name, t);
  }
  return out;
}

ModelParams overlay(const ModelParams& base, const ParamMap& replacement) {
  ModelParams p = base;
  for (const auto& [name, t] : replacement) p.tensors[name] = t;
  return p;
}

double dot_loss(const Mat& out, const Mat& direction) {
  return (out.array() * direction.array()).sum();
}

}  // namespace

TEST_CASE("encode shapes and errors") {
  ModelParams p = small_model();
  Mat out = encode({5}, p, Mode::Eval);
  CHECK(out.rows() == 1);
  CHECK(out.cols() == 8);

  CHECK_THROWS_AS(encode({1, 2, 99}, p, Mode::Eval), ShapeError);
  std::vector<int> too_long(17, 1);
  CHECK_THROWS_AS(encode(too_long, p, Mode::Eval), ShapeError);
  CHECK_THROWS_AS(encode({}, p, Mode::Eval), ShapeError);
}

TEST_CASE("encode is position sensitive") {
  ModelParams p = small_model();
  Mat a = encode({4, 5, 6, 7}, p, Mode::Eval);
  Mat b = encode({7, 5, 6, 4}, p, Mode::Eval);  // swap two non-adjacent tokens
  CHECK((a - b).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("encode eval mode is deterministic") {
  ModelParams p = small_model();
  Mat a = encode({1, 4, 9, 2}, p, Mode::Eval);
  Mat b = encode({1, 4, 9, 2}, p, Mode::Eval);
  CHECK((a.array() == b.array()).all());
}

TEST_CASE("encoder gradient check") {
  ModelParams p = small_model(1, 8, 2);
  std::vector<int> ids{3, 7, 9};
  std::mt19937_64 rng(5);
  Mat direction = random_mat(3, 8, rng);

  EncoderCache cache;
  encode(ids, p, Mode::Eval, &cache);
  ParamMap grads;
  encode_backward(direction, cache, p, grads);

  auto loss = [&](const ParamMap& q) {
    return dot_loss(encode(ids, overlay(p, q), Mode::Eval), direction);
  };
  auto reports = grad_check(loss, subset(p.tensors, "encoder."), subset(grads, "encoder."),
                            1e-5, 1e-4);
  for (const auto& r : reports) {
    INFO(r.param_name, " rel err ", r.max_relative_error);
    CHECK(r.passed);
  }
}

TEST_CASE("bilstm output shape") {
  ModelParams p = small_model();
  Mat x = Mat::Zero(1, 8);
  Mat out = bilstm_forward(x, p, Mode::Eval, nullptr);
  CHECK(out.rows() == 1);
  CHECK(out.cols() == 12);
}

TEST_CASE("bilstm directional symmetry with tied weights") {
  ModelParams p = small_model(1, 8, 2, 6, 2);
  const int H = 6;
  // Tie backward weights to forward ones; make upper-layer input blocks
  // symmetric so swapping the concatenated halves commutes with the cell.
  for (int l = 0; l < 2; ++l) {
    const std::string prefix = "bilstm.layer" + std::to_string(l) + ".";
    for (const char* w : {"wx", "wh", "b"}) {
      p.tensors[prefix + "bw." + w] = p.tensors[prefix + "fw." + w];
    }
    if (l > 0) {
      Tensor& wx = p.tensors[prefix + "fw.wx"];
      wx.mat().bottomRows(H) = wx.mat().topRows(H);
      p.tensors[prefix + "bw.wx"] = wx;
    }
  }
  std::mt19937_64 rng(17);
  Mat x = random_mat(5, 8, rng);
  Mat y = bilstm_forward(x, p, Mode::Eval, nullptr);
  Mat yr = bilstm_forward(x.colwise().reverse(), p, Mode::Eval, nullptr);
  Mat swapped(yr.rows(), yr.cols());
  swapped.leftCols(H) = yr.rightCols(H);
  swapped.rightCols(H) = yr.leftCols(H);
  CHECK((swapped - Mat(y.colwise().reverse())).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("bilstm gradient check, dropout off") {
  ModelParams p = small_model(1, 8, 2, 6, 2);
  std::mt19937_64 rng(7);
  Mat x = random_mat(4, 8, rng);
  Mat direction = random_mat(4, 12, rng);

  BiLstmCache cache;
  bilstm_forward(x, p, Mode::Eval, nullptr, &cache);
  ParamMap grads;
  bilstm_backward(direction, cache, p, grads);

  auto loss = [&](const ParamMap& q) {
    return dot_loss(bilstm_forward(x, overlay(p, q), Mode::Eval, nullptr), direction);
  };
  auto reports = grad_check(loss, subset(p.tensors, "bilstm."), subset(grads, "bilstm."),
                            1e-5, 1e-4);
  for (const auto& r : reports) {
    INFO(r.param_name, " rel err ", r.max_relative_error);
    CHECK(r.passed);
  }
}

TEST_CASE("bilstm dropout only between stacked layers in train mode") {
  ModelParams p = small_model(1, 8, 2, 6, 2);
  p.bilstm.dropout = 0.5;
  std::mt19937_64 rng(23);
  Mat x = random_mat(4, 8, rng);

  Mat eval_out = bilstm_forward(x, p, Mode::Eval, nullptr);
  std::mt19937_64 drop_rng(1);
  Mat train_out = bilstm_forward(x, p, Mode::Train, &drop_rng);
  CHECK((eval_out - train_out).cwiseAbs().maxCoeff() > 1e-9);

  // single layer: nothing between layers, train == eval
  ModelParams p1 = small_model(1, 8, 2, 6, 1);
  p1.bilstm.dropout = 0.5;
  std::mt19937_64 drop_rng2(1);
  Mat a = bilstm_forward(x, p1, Mode::Eval, nullptr);
  Mat b = bilstm_forward(x, p1, Mode::Train, &drop_rng2);
  CHECK((a.array() == b.array()).all());
}

TEST_CASE("bilstm train-mode gradient with dropout mask cached") {
  ModelParams p = small_model(1, 8, 2, 6, 2);
  p.bilstm.dropout = 0.25;
  std::mt19937_64 rng(31);
  Mat x = random_mat(4, 8, rng);
  Mat direction = random_mat(4, 12, rng);

  // With the mask frozen in the cache, the dropped-out forward is a
  // deterministic function; its gradient must still check out.
  BiLstmCache cache;
  std::mt19937_64 drop_rng(11);
  bilstm_forward(x, p, Mode::Train, &drop_rng, &cache);
  ParamMap grads;
  bilstm_backward(direction, cache, p, grads);

  auto loss = [&](const ParamMap& q) {
    // replay with the same mask by reusing eval-mode plus manual masking
    ModelParams pq = overlay(p, q);
    Mat h = x;
    for (int l = 0; l < pq.bilstm.num_layers; ++l) {
      ModelParams single = pq;
      single.bilstm.num_layers = 1;
      ParamMap only;
      const std::string src = "bilstm.layer" + std::to_string(l) + ".";
      for (const auto& [name, t] : pq.tensors) {
        if (name.rfind(src, 0) == 0) only["bilstm.layer0." + name.substr(src.size())] = t;
      }
      single.tensors = only;
      h = bilstm_forward(h, single, Mode::Eval, nullptr);
      if (cache.layers[static_cast<size_t>(l)].dropout_applied) {
        h = h.cwiseProduct(cache.layers[static_cast<size_t>(l)].mask);
      }
    }
    return dot_loss(h, direction);
  };
  auto reports = grad_check(loss, subset(p.tensors, "bilstm."), subset(grads, "bilstm."),
                            1e-5, 1e-4);
  for (const auto& r : reports) {
    INFO(r.param_name, " rel err ", r.max_relative_error);
    CHECK(r.passed);
  }
}

TEST_CASE("nextvlad shape arithmetic") {
  ModelParams p = small_model(1, 8, 2, 8);  // 2H = 16 = input_dim
  p.nextvlad.input_dim = 16;
  p.nextvlad.expansion = 2;
  p.nextvlad.groups = 4;
  p.nextvlad.num_clusters = 8;
  p.nextvlad.output_dim = 32;
  ModelParams q = init_params(p.encoder, p.bilstm, p.nextvlad, Pooling::NextVlad, 3);

  std::mt19937_64 rng(3);
  Mat x = random_mat(5, 16, rng);
  NextVladCache cache;
  Vec out = nextvlad_forward(x, q, &cache);
  CHECK(q.nextvlad.descriptor_len() == 64);
  CHECK(cache.vn.dim(0) * cache.vn.dim(1) == 64);
  CHECK(out.size() == 32);
}

TEST_CASE("nextvlad cluster assignments sum to one") {
  ModelParams p = small_model();
  std::mt19937_64 rng(13);
  Mat x = random_mat(6, 12, rng);
  NextVladCache cache;
  nextvlad_forward(x, p, &cache);
  for (Eigen::Index r = 0; r < cache.assign.rows(); ++r) {
    CHECK(std::abs(cache.assign.row(r).sum() - 1.0) <= 1e-12);
  }
}

TEST_CASE("nextvlad group divisibility enforced") {
  EncoderConfig enc;
  enc.vocab_size = 10;
  BiLstmConfig lstm;
  lstm.hidden_dim = 8;
  NextVladConfig vlad;
  vlad.input_dim = 16;
  vlad.expansion = 1;
  vlad.groups = 3;  // 3 does not divide 16
  CHECK_THROWS_AS(init_params(enc, lstm, vlad, Pooling::NextVlad, 1), ConfigError);
}

TEST_CASE("nextvlad duplicated timesteps: descriptor scales then normalizes away") {
  ModelParams p = small_model(1, 8, 2, 8);
  p.nextvlad.input_dim = 16;
  ModelParams q = init_params(p.encoder, p.bilstm, p.nextvlad, Pooling::NextVlad, 21);

  std::mt19937_64 rng(29);
  Mat one = random_mat(1, 16, rng);
  Mat five = one.replicate(5, 1);

  NextVladCache c1, c5;
  Vec o1 = nextvlad_forward(one, q, &c1);
  Vec o5 = nextvlad_forward(five, q, &c5);
  // unnormalized descriptor scales linearly in T
  CHECK((c5.v.mat() - 5.0 * c1.v.mat()).cwiseAbs().maxCoeff() <= 1e-9);
  // intra-normalized descriptor and output are T-invariant
  CHECK((c5.vn.mat() - c1.vn.mat()).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK((o5 - o1).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("nextvlad gradient check over all parameters") {
  ModelParams p = small_model(1, 8, 2, 8);
  p.nextvlad.input_dim = 16;
  ModelParams q = init_params(p.encoder, p.bilstm, p.nextvlad, Pooling::NextVlad, 37);

  std::mt19937_64 rng(41);
  Mat x = random_mat(6, 16, rng);
  Vec direction = random_mat(q.nextvlad.output_dim, 1, rng).col(0);

  NextVladCache cache;
  nextvlad_forward(x, q, &cache);
  ParamMap grads;
  nextvlad_backward(direction, cache, q, grads);

  auto loss = [&](const ParamMap& pm) {
    return nextvlad_forward(x, overlay(q, pm), nullptr).dot(direction);
  };
  auto reports = grad_check(loss, subset(q.tensors, "nextvlad."), subset(grads, "nextvlad."),
                            1e-5, 1e-4);
  for (const auto& r : reports) {
    INFO(r.param_name, " rel err ", r.max_relative_error);
    CHECK(r.passed);
  }
}

TEST_CASE("nextvlad input gradient") {
  ModelParams p = small_model();
  std::mt19937_64 rng(43);
  Mat x = random_mat(4, 12, rng);
  Vec direction = random_mat(p.nextvlad.output_dim, 1, rng).col(0);

  NextVladCache cache;
  nextvlad_forward(x, p, &cache);
  ParamMap grads;
  Mat dx = nextvlad_backward(direction, cache, p, grads);

  ParamMap params{{"input", Tensor::from_matrix(x)}};
  ParamMap analytic{{"input", Tensor::from_matrix(dx)}};
  auto loss = [&](const ParamMap& pm) {
    return nextvlad_forward(pm.at("input").mat(), p, nullptr).dot(direction);
  };
  CHECK(all_passed(grad_check(loss, params, analytic, 1e-5, 1e-4)));
}

TEST_CASE("pool values") {
  Mat single = Mat::Zero(1, 3);
  single << 1.0, -2.0, 0.5;
  CHECK((pool(single, Pooling::Max) - pool(single, Pooling::Mean)).cwiseAbs().maxCoeff() == 0.0);

  Mat h(2, 2);
  h << 1, 5, 3, 2;
  Vec mx = pool(h, Pooling::Max);
  Vec mn = pool(h, Pooling::Mean);
  CHECK(mx[0] == 3.0);
  CHECK(mx[1] == 5.0);
  CHECK(mn[0] == 2.0);
  CHECK(mn[1] == 3.5);
}

TEST_CASE("mean pooling is permutation invariant") {
  std::mt19937_64 rng(47);
  Mat h = random_mat(6, 4, rng);
  Mat perm(6, 4);
  const int order[6] = {3, 0, 5, 1, 4, 2};
  for (int i = 0; i < 6; ++i) perm.row(i) = h.row(order[i]);
  CHECK((pool(h, Pooling::Mean) - pool(perm, Pooling::Mean)).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("pool backward routes gradients") {
  Mat h(3, 2);
  h << 1, 9, 5, 2, 3, 4;
  Vec g(2);
  g << 1.0, 2.0;
  Mat dmax = pool_backward(g, h, Pooling::Max);
  CHECK(dmax(1, 0) == 1.0);
  CHECK(dmax(0, 1) == 2.0);
  CHECK(dmax.sum() == 3.0);
  Mat dmean = pool_backward(g, h, Pooling::Mean);
  CHECK(std::abs(dmean.col(0).sum() - 1.0) <= 1e-15);
  CHECK(std::abs(dmean.col(1).sum() - 2.0) <= 1e-15);
}

TEST_CASE("classifier zero weights give uniform probabilities") {
  ModelParams p = small_model();
  p.tensors["classifier.w"] = Tensor({16, 2});
  p.tensors["classifier.b"] = Tensor({2});
  Vec v = Vec::Ones(16);
  Vec probs = classify(v, p);
  CHECK(probs[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(probs[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("classifier probabilities sum to one") {
  ModelParams p = small_model();
  std::mt19937_64 rng(53);
  for (int trial = 0; trial < 20; ++trial) {
    Vec v = random_mat(16, 1, rng, -4.0, 4.0).col(0);
    Vec probs = classify(v, p);
    CHECK(std::abs(probs.sum() - 1.0) <= 1e-12);
  }
}

TEST_CASE("cross entropy values") {
  Vec uniform(2);
  uniform << 0.5, 0.5;
  CHECK(cross_entropy(uniform, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(cross_entropy(uniform, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  Vec certain(2);
  certain << 1.0, 0.0;
  CHECK(cross_entropy(certain, 0) == 0.0);
  CHECK(std::isfinite(cross_entropy(certain, 1)));  // eps clamp inside the log
}

TEST_CASE("batch mean cross entropy matches per-example oracle") {
  ModelParams p = small_model();
  std::mt19937_64 rng(59);
  std::uniform_int_distribution<int> coin(0, 1);
  double batch = 0.0, oracle = 0.0;
  const int n = 32;
  for (int i = 0; i < n; ++i) {
    Vec v = random_mat(16, 1, rng).col(0);
    Vec probs = classify(v, p);
    int gold = coin(rng);
    batch += cross_entropy(probs, gold);
    oracle += -std::log(std::max(probs[gold], 1e-12));
  }
  CHECK(std::abs(batch / n - oracle / n) <= 1e-12);
}

TEST_CASE("classifier gradient through cross entropy") {
  ModelParams p = small_model();
  std::mt19937_64 rng(61);
  Vec v = random_mat(16, 1, rng).col(0);
  Vec probs = classify(v, p);
  ParamMap grads;
  Vec dv = classify_ce_backward(probs, 1, v, p, grads);

  ParamMap params = subset(p.tensors, "classifier.");
  params.emplace("input", Tensor::from_vector(v));
  ParamMap analytic = subset(grads, "classifier.");
  analytic.emplace("input", Tensor::from_vector(dv));
  auto loss = [&](const ParamMap& q) {
    ModelParams pq = overlay(p, q);
    return cross_entropy(classify(q.at("input").vec(), pq), 1);
  };
  auto reports = grad_check(loss, params, analytic, 1e-5, 1e-6);
  for (const auto& r : reports) {
    INFO(r.param_name, " rel err ", r.max_relative_error);
    CHECK(r.passed);
  }
}

TEST_CASE("full stack shape contract across configs") {
  struct Case {
    int enc_layers, d, heads, h;
    Pooling pooling;
  };
  const Case cases[] = {
      {1, 8, 2, 6, Pooling::NextVlad},  {2, 12, 3, 4, Pooling::NextVlad},
      {1, 8, 4, 5, Pooling::Max},       {2, 16, 2, 8, Pooling::Mean},
      {3, 12, 2, 6, Pooling::NextVlad},
  };
  for (const auto& c : cases) {
    ModelParams p = small_model(c.enc_layers, c.d, c.heads, c.h, 2, c.pooling);
    std::vector<int> ids{1, 5, 7, 9, 2};
    ForwardCache cache;
    Vec probs = model_forward(ids, p, Mode::Eval, nullptr, &cache);
    CHECK(cache.h_enc.rows() == 5);
    CHECK(cache.h_enc.cols() == c.d);
    CHECK(cache.h_lstm.cols() == 2 * c.h);
    CHECK(cache.pooled.size() == classifier_input_dim(p));
    CHECK(probs.size() == 2);
    CHECK(std::abs(probs.sum() - 1.0) <= 1e-12);
  }
}

TEST_CASE("full stack gradient check") {
  ModelParams p = small_model(1, 8, 2, 4, 1);
  std::vector<int> ids{3, 6, 2, 8};
  ForwardCache cache;
  model_forward(ids, p, Mode::Eval, nullptr, &cache);
  ParamMap grads;
  model_backward(1, cache, p, grads);

  auto loss = [&](const ParamMap& q) {
    return cross_entropy(model_forward(ids, overlay(p, q), Mode::Eval), 1);
  };
  auto reports = grad_check(loss, p.tensors, grads, 1e-5, 1e-4);
  for (const auto& r : reports) {
    INFO(r.param_name, " rel err ", r.max_relative_error);
    CHECK(r.passed);
  }
}

TEST_CASE("frozen encoder skips encoder gradients") {
  ModelParams p = small_model();
  p.finetune_encoder = false;
  std::vector<int> ids{1, 2, 3};
  ForwardCache cache;
  model_forward(ids, p, Mode::Eval, nullptr, &cache);
  ParamMap grads;
  model_backward(0, cache, p, grads);
  for (const auto& [name, g] : grads) {
    CHECK(name.rfind("encoder.", 0) != 0);
  }
}

TEST_CASE("precomputed embedding path matches encoder path") {
  ModelParams p = small_model();
  std::vector<int> ids{2, 4, 6};
  Mat emb = encode(ids, p, Mode::Eval);

  const std::string path = std::filesystem::temp_directory_path() / "sarc_emb_test.jsonl";
  save_embeddings(path, {{"sample0", emb}});
  auto loaded = load_embeddings(path);
  REQUIRE(loaded.count("sample0") == 1);

  Vec direct = model_forward(ids, p, Mode::Eval);
  Vec via_file = model_forward_embedded(loaded.at("sample0"), p, Mode::Eval);
  CHECK((direct - via_file).cwiseAbs().maxCoeff() <= 1e-12);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint round trip is lossless") {
  ModelParams p = small_model();
  p.vocab_tokens = {"<pad>", "<unk>", "<cls>", "<sep>", "hello", "world"};
  p.window_size = 2;
  const std::string path = std::filesystem::temp_directory_path() / "sarc_ckpt_test.bin";
  save_checkpoint(path, p);
  ModelParams q = load_checkpoint(path);

  CHECK(q.encoder.hidden_dim == p.encoder.hidden_dim);
  CHECK(q.bilstm.hidden_dim == p.bilstm.hidden_dim);
  CHECK(q.nextvlad.num_clusters == p.nextvlad.num_clusters);
  CHECK(q.pooling == p.pooling);
  CHECK(q.window_size == 2);
  CHECK(q.vocab_tokens == p.vocab_tokens);
  REQUIRE(q.tensors.size() == p.tensors.size());
  for (const auto& [name, t] : p.tensors) {
    REQUIRE(q.tensors.count(name) == 1);
    const Tensor& u = q.tensors.at(name);
    REQUIRE(u.same_shape(t));
    for (Eigen::Index i = 0; i < t.size(); ++i) CHECK(u.at(i) == t.at(i));
  }
  std::remove(path.c_str());
}

TEST_CASE("checkpoint version mismatch is a hard error") {
  ModelParams p = small_model();
  const std::string path = std::filesystem::temp_directory_path() / "sarc_ckpt_ver_test.bin";
  save_checkpoint(path, p);
  // bump the version field in place (offset 8, little-endian u32)
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    uint32_t bogus = 999;
    f.write(reinterpret_cast<const char*>(&bogus), sizeof(bogus));
  }
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  std::remove(path.c_str());
}
