#include "sarc/layers.hpp"

#include <algorithm>
#include <cmath>

namespace sarc {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kIntraNormEps = 1e-12;

const Tensor& param(const ModelParams& p, const std::string& name) {
  auto it = p.tensors.find(name);
  if (it == p.tensors.end()) throw ConfigError("missing parameter tensor: " + name);
  return it->second;
}

Eigen::Map<const Mat> pmat(const ModelParams& p, const std::string& name) {
  return param(p, name).mat();
}

Eigen::Map<const Vec> pvec(const ModelParams& p, const std::string& name) {
  return param(p, name).vec();
}

// Accumulation slot in the gradient map, created zero-filled on first touch.
Tensor& grad_slot(ParamMap& grads, const std::string& name, std::vector<Eigen::Index> shape) {
  auto it = grads.find(name);
  if (it == grads.end()) it = grads.emplace(name, Tensor(std::move(shape))).first;
  return it->second;
}

double sigmoid_s(double v) {
  return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

Mat sigmoid_m(const Mat& x) {
  return x.unaryExpr([](double v) { return sigmoid_s(v); });
}

Vec sigmoid_v(const Vec& x) {
  return x.unaryExpr([](double v) { return sigmoid_s(v); });
}

// Row-wise softmax with max subtraction.
Mat softmax_rows(const Mat& x) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

// d/dx of row softmax given y = softmax_rows(x).
Mat softmax_rows_backward(const Mat& g, const Mat& y) {
  Mat out(y.rows(), y.cols());
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double dot = g.row(r).dot(y.row(r));
    out.row(r) = ((g.row(r).array() - dot) * y.row(r).array()).matrix();
  }
  return out;
}

Mat layernorm_forward(const Mat& x, const Vec& gamma, const Vec& beta, LayerNormCache* cache) {
  const Eigen::Index rows = x.rows(), cols = x.cols();
  Mat xhat(rows, cols);
  Vec inv_sigma(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    inv_sigma[r] = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(r) = ((x.row(r).array() - mu) * inv_sigma[r]).matrix();
  }
  Mat out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    out.row(r) = xhat.row(r).cwiseProduct(gamma.transpose()) + beta.transpose();
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_sigma = std::move(inv_sigma);
  }
  return out;
}

Mat layernorm_backward(const Mat& grad, const LayerNormCache& cache, const Vec& gamma,
                       Vec& dgamma, Vec& dbeta) {
  const Eigen::Index rows = grad.rows(), cols = grad.cols();
  dgamma += (grad.array() * cache.xhat.array()).colwise().sum().matrix().transpose();
  dbeta += grad.colwise().sum().transpose();
  Mat dx(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    Eigen::Array<double, 1, Eigen::Dynamic> dxhat =
        grad.row(r).array() * gamma.transpose().array();
    const double mean_dxhat = dxhat.mean();
    const double mean_dxhat_xhat = (dxhat * cache.xhat.row(r).array()).mean();
    dx.row(r) = ((dxhat - mean_dxhat - cache.xhat.row(r).array() * mean_dxhat_xhat) *
                 cache.inv_sigma[r])
                    .matrix();
  }
  return dx;
}

void init_uniform(Tensor& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.at(i) = dist(rng);
}

}  // namespace

std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::NextVlad: return "nextvlad";
    case Pooling::Max: return "max";
    case Pooling::Mean: return "mean";
  }
  return "nextvlad";
}

Pooling parse_pooling(const std::string& s) {
  if (s == "nextvlad") return Pooling::NextVlad;
  if (s == "max") return Pooling::Max;
  if (s == "mean") return Pooling::Mean;
  throw ConfigError("unknown pooling mode: " + s);
}

void validate_configs(const EncoderConfig& enc, const BiLstmConfig& lstm,
                      const NextVladConfig& vlad, Pooling pooling) {
  if (enc.num_layers < 1) throw ConfigError("encoder.num_layers must be >= 1");
  if (enc.hidden_dim < 1 || enc.num_heads < 1 || enc.hidden_dim % enc.num_heads != 0) {
    throw ConfigError("encoder.hidden_dim must be a positive multiple of num_heads");
  }
  if (enc.ffn_dim < 1) throw ConfigError("encoder.ffn_dim must be >= 1");
  if (enc.max_seq_len < 1) throw ConfigError("encoder.max_seq_len must be >= 1");
  if (enc.vocab_size < 1) throw ConfigError("encoder.vocab_size must be >= 1");
  if (lstm.num_layers < 1) throw ConfigError("bilstm.num_layers must be >= 1");
  if (lstm.hidden_dim < 1) throw ConfigError("bilstm.hidden_dim must be >= 1");
  if (lstm.dropout < 0.0 || lstm.dropout >= 1.0) throw ConfigError("bilstm.dropout must be in [0,1)");
  if (pooling == Pooling::NextVlad) {
    if (vlad.groups < 1 || vlad.expansion < 1 || vlad.num_clusters < 1 || vlad.output_dim < 1) {
      throw ConfigError("nextvlad dimensions must be positive");
    }
    if (vlad.input_dim != 2 * lstm.hidden_dim) {
      throw ConfigError("nextvlad.input_dim must equal 2*bilstm.hidden_dim");
    }
    if (vlad.expanded_dim() % vlad.groups != 0) {
      throw ConfigError("nextvlad.groups must divide expansion*input_dim (" +
                        std::to_string(vlad.groups) + " does not divide " +
                        std::to_string(vlad.expanded_dim()) + ")");
    }
  }
}

ModelParams init_params(const EncoderConfig& enc, const BiLstmConfig& lstm,
                        const NextVladConfig& vlad, Pooling pooling, uint64_t seed) {
  validate_configs(enc, lstm, vlad, pooling);
  ModelParams p;
  p.encoder = enc;
  p.bilstm = lstm;
  p.nextvlad = vlad;
  p.pooling = pooling;
  std::mt19937_64 rng(seed);

  const int D = enc.hidden_dim;
  auto add = [&](const std::string& name, std::vector<Eigen::Index> shape, double fan_in) {
    Tensor t(std::move(shape));
    init_uniform(t, 1.0 / std::sqrt(fan_in), rng);
    p.tensors.emplace(name, std::move(t));
  };
  auto add_zeros = [&](const std::string& name, std::vector<Eigen::Index> shape) {
    p.tensors.emplace(name, Tensor(std::move(shape)));
  };
  auto add_const = [&](const std::string& name, Eigen::Index n, double value) {
    Tensor t({n});
    t.flat() = value;
    p.tensors.emplace(name, std::move(t));
  };

  add("encoder.token_embedding", {enc.vocab_size, D}, D);
  add("encoder.position_embedding", {enc.max_seq_len, D}, D);
  for (int l = 0; l < enc.num_layers; ++l) {
    const std::string prefix = "encoder.layer" + std::to_string(l) + ".";
    for (const char* w : {"wq", "wk", "wv", "wo"}) add(prefix + "attn." + w, {D, D}, D);
    for (const char* b : {"bq", "bk", "bv", "bo"}) add_zeros(prefix + "attn." + b, {D});
    add_const(prefix + "ln1.gamma", D, 1.0);
    add_zeros(prefix + "ln1.beta", {D});
    add(prefix + "ffn.w1", {D, enc.ffn_dim}, D);
    add_zeros(prefix + "ffn.b1", {enc.ffn_dim});
    add(prefix + "ffn.w2", {enc.ffn_dim, D}, enc.ffn_dim);
    add_zeros(prefix + "ffn.b2", {D});
    add_const(prefix + "ln2.gamma", D, 1.0);
    add_zeros(prefix + "ln2.beta", {D});
  }

  const int H = lstm.hidden_dim;
  for (int l = 0; l < lstm.num_layers; ++l) {
    const int in_dim = l == 0 ? D : 2 * H;
    for (const char* dir : {"fw", "bw"}) {
      const std::string prefix = "bilstm.layer" + std::to_string(l) + "." + dir + ".";
      add(prefix + "wx", {in_dim, 4 * H}, in_dim);
      add(prefix + "wh", {H, 4 * H}, H);
      Tensor b({4 * H});
      b.flat().segment(H, H) = 1.0;  // forget gate bias
      p.tensors.emplace(prefix + "b", std::move(b));
    }
  }

  if (pooling == Pooling::NextVlad) {
    const int E = vlad.expanded_dim(), G = vlad.groups, K = vlad.num_clusters;
    const int P = vlad.group_dim();
    add("nextvlad.expand.w", {vlad.input_dim, E}, vlad.input_dim);
    add("nextvlad.attention.w", {E, G}, E);
    add_zeros("nextvlad.attention.b", {G});
    add("nextvlad.assign.w", {E, G * K}, E);
    add_zeros("nextvlad.assign.b", {G * K});
    add("nextvlad.centers", {K, P}, P);
    add("nextvlad.project.w", {K * P, vlad.output_dim}, K * P);
  }

  const int F = classifier_input_dim(p);
  add("classifier.w", {F, 2}, F);
  add_zeros("classifier.b", {2});
  return p;
}

int classifier_input_dim(const ModelParams& p) {
  return p.pooling == Pooling::NextVlad ? p.nextvlad.output_dim : 2 * p.bilstm.hidden_dim;
}

// ---- encoder ----

Mat encode(const std::vector<int>& ids, const ModelParams& p, Mode /*mode*/,
           EncoderCache* cache) {
  const auto& cfg = p.encoder;
  const Eigen::Index T = static_cast<Eigen::Index>(ids.size());
  if (T < 1) throw ShapeError("encode: empty token sequence");
  if (T > cfg.max_seq_len) {
    throw ShapeError("encode: sequence length " + std::to_string(T) + " exceeds max_seq_len " +
                     std::to_string(cfg.max_seq_len));
  }
  auto te = pmat(p, "encoder.token_embedding");
  auto pe = pmat(p, "encoder.position_embedding");
  const int D = cfg.hidden_dim;

  Mat x(T, D);
  for (Eigen::Index t = 0; t < T; ++t) {
    const int id = ids[static_cast<size_t>(t)];
    if (id < 0 || id >= cfg.vocab_size) {
      throw ShapeError("encode: token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(cfg.vocab_size));
    }
    x.row(t) = te.row(id) + pe.row(t);
  }
  if (cache) {
    cache->ids = ids;
    cache->x0 = x;
    cache->layers.assign(static_cast<size_t>(cfg.num_layers), {});
  }

  const int heads = cfg.num_heads;
  const int dh = D / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  for (int l = 0; l < cfg.num_layers; ++l) {
    const std::string prefix = "encoder.layer" + std::to_string(l) + ".";
    EncoderLayerCache local;
    EncoderLayerCache& c = cache ? cache->layers[static_cast<size_t>(l)] : local;
    c.x_in = x;
    c.q = (x * pmat(p, prefix + "attn.wq")).rowwise() +
          pvec(p, prefix + "attn.bq").transpose();
    c.k = (x * pmat(p, prefix + "attn.wk")).rowwise() +
          pvec(p, prefix + "attn.bk").transpose();
    c.v = (x * pmat(p, prefix + "attn.wv")).rowwise() +
          pvec(p, prefix + "attn.bv").transpose();

    c.o.resize(T, D);
    c.attn.resize(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      auto qh = c.q.middleCols(h * dh, dh);
      auto kh = c.k.middleCols(h * dh, dh);
      auto vh = c.v.middleCols(h * dh, dh);
      Mat scores = qh * kh.transpose() * scale;
      c.attn[static_cast<size_t>(h)] = softmax_rows(scores);
      c.o.middleCols(h * dh, dh) = c.attn[static_cast<size_t>(h)] * vh;
    }
    c.m = (c.o * pmat(p, prefix + "attn.wo")).rowwise() +
          pvec(p, prefix + "attn.bo").transpose();
    c.r1 = c.x_in + c.m;
    c.y = layernorm_forward(c.r1, pvec(p, prefix + "ln1.gamma"), pvec(p, prefix + "ln1.beta"),
                            &c.ln1);
    c.f1 = (c.y * pmat(p, prefix + "ffn.w1")).rowwise() + pvec(p, prefix + "ffn.b1").transpose();
    c.f2 = c.f1.array().tanh().matrix();
    c.f3 = (c.f2 * pmat(p, prefix + "ffn.w2")).rowwise() + pvec(p, prefix + "ffn.b2").transpose();
    c.r2 = c.y + c.f3;
    x = layernorm_forward(c.r2, pvec(p, prefix + "ln2.gamma"), pvec(p, prefix + "ln2.beta"),
                          &c.ln2);
  }
  return x;
}

void encode_backward(const Mat& grad_out, const EncoderCache& cache, const ModelParams& p,
                     ParamMap& grads) {
  const auto& cfg = p.encoder;
  const int D = cfg.hidden_dim;
  const int heads = cfg.num_heads;
  const int dh = D / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Eigen::Index T = cache.x0.rows();

  Mat dx = grad_out;
  for (int l = cfg.num_layers - 1; l >= 0; --l) {
    const std::string prefix = "encoder.layer" + std::to_string(l) + ".";
    const EncoderLayerCache& c = cache.layers[static_cast<size_t>(l)];

    // layernorm 2
    {
      Tensor& tg = grad_slot(grads, prefix + "ln2.gamma", {D});
      Tensor& tb = grad_slot(grads, prefix + "ln2.beta", {D});
      Vec dgamma = Vec::Zero(D), dbeta = Vec::Zero(D);
      dx = layernorm_backward(dx, c.ln2, pvec(p, prefix + "ln2.gamma"), dgamma, dbeta);
      tg.vec() += dgamma;
      tb.vec() += dbeta;
    }
    // r2 = y + f3
    Mat dy = dx;
    Mat df3 = dx;
    // f3 = f2 * w2 + b2
    grad_slot(grads, prefix + "ffn.w2", {cfg.ffn_dim, D}).mat().noalias() +=
        c.f2.transpose() * df3;
    grad_slot(grads, prefix + "ffn.b2", {D}).vec() += df3.colwise().sum().transpose();
    Mat df2 = df3 * pmat(p, prefix + "ffn.w2").transpose();
    // f2 = tanh(f1)
    Mat df1 = (df2.array() * (1.0 - c.f2.array().square())).matrix();
    grad_slot(grads, prefix + "ffn.w1", {D, cfg.ffn_dim}).mat().noalias() +=
        c.y.transpose() * df1;
    grad_slot(grads, prefix + "ffn.b1", {cfg.ffn_dim}).vec() += df1.colwise().sum().transpose();
    dy.noalias() += df1 * pmat(p, prefix + "ffn.w1").transpose();
    // layernorm 1
    Mat dr1;
    {
      Tensor& tg = grad_slot(grads, prefix + "ln1.gamma", {D});
      Tensor& tb = grad_slot(grads, prefix + "ln1.beta", {D});
      Vec dgamma = Vec::Zero(D), dbeta = Vec::Zero(D);
      dr1 = layernorm_backward(dy, c.ln1, pvec(p, prefix + "ln1.gamma"), dgamma, dbeta);
      tg.vec() += dgamma;
      tb.vec() += dbeta;
    }
    // r1 = x_in + m
    Mat dx_in = dr1;
    Mat dm = dr1;
    // m = o * wo + bo
    grad_slot(grads, prefix + "attn.wo", {D, D}).mat().noalias() += c.o.transpose() * dm;
    grad_slot(grads, prefix + "attn.bo", {D}).vec() += dm.colwise().sum().transpose();
    Mat do_ = dm * pmat(p, prefix + "attn.wo").transpose();

    Mat dq = Mat::Zero(T, D), dk = Mat::Zero(T, D), dv = Mat::Zero(T, D);
    for (int h = 0; h < heads; ++h) {
      const Mat& a = c.attn[static_cast<size_t>(h)];
      auto qh = c.q.middleCols(h * dh, dh);
      auto kh = c.k.middleCols(h * dh, dh);
      auto vh = c.v.middleCols(h * dh, dh);
      Mat doh = do_.middleCols(h * dh, dh);
      Mat da = doh * vh.transpose();
      dv.middleCols(h * dh, dh).noalias() += a.transpose() * doh;
      Mat ds = softmax_rows_backward(da, a);
      dq.middleCols(h * dh, dh).noalias() += ds * kh * scale;
      dk.middleCols(h * dh, dh).noalias() += ds.transpose() * qh * scale;
    }
    grad_slot(grads, prefix + "attn.wq", {D, D}).mat().noalias() += c.x_in.transpose() * dq;
    grad_slot(grads, prefix + "attn.bq", {D}).vec() += dq.colwise().sum().transpose();
    grad_slot(grads, prefix + "attn.wk", {D, D}).mat().noalias() += c.x_in.transpose() * dk;
    grad_slot(grads, prefix + "attn.bk", {D}).vec() += dk.colwise().sum().transpose();
    grad_slot(grads, prefix + "attn.wv", {D, D}).mat().noalias() += c.x_in.transpose() * dv;
    grad_slot(grads, prefix + "attn.bv", {D}).vec() += dv.colwise().sum().transpose();

    dx_in.noalias() += dq * pmat(p, prefix + "attn.wq").transpose();
    dx_in.noalias() += dk * pmat(p, prefix + "attn.wk").transpose();
    dx_in.noalias() += dv * pmat(p, prefix + "attn.wv").transpose();
    dx = std::move(dx_in);
  }

  Tensor& dte = grad_slot(grads, "encoder.token_embedding", {cfg.vocab_size, D});
  Tensor& dpe = grad_slot(grads, "encoder.position_embedding", {cfg.max_seq_len, D});
  for (Eigen::Index t = 0; t < T; ++t) {
    dte.mat().row(cache.ids[static_cast<size_t>(t)]) += dx.row(t);
    dpe.mat().row(t) += dx.row(t);
  }
}

// ---- bilstm ----

namespace {

Mat lstm_dir_forward(const Mat& x, Eigen::Ref<const Mat> wx, Eigen::Ref<const Mat> wh,
                     Eigen::Ref<const Vec> b, LstmDirCache* cache) {
  const Eigen::Index T = x.rows();
  const Eigen::Index H = wh.rows();
  Mat gi(T, H), gf(T, H), gg(T, H), go(T, H), cs(T, H), tc(T, H), hs(T, H);
  Vec h_prev = Vec::Zero(H), c_prev = Vec::Zero(H);
  for (Eigen::Index t = 0; t < T; ++t) {
    Vec z = wx.transpose() * x.row(t).transpose() + wh.transpose() * h_prev + b;
    Vec i = sigmoid_v(z.segment(0, H));
    Vec f = sigmoid_v(z.segment(H, H));
    Vec g = z.segment(2 * H, H).array().tanh().matrix();
    Vec o = sigmoid_v(z.segment(3 * H, H));
    Vec c = f.cwiseProduct(c_prev) + i.cwiseProduct(g);
    Vec tch = c.array().tanh().matrix();
    Vec h = o.cwiseProduct(tch);
    gi.row(t) = i.transpose();
    gf.row(t) = f.transpose();
    gg.row(t) = g.transpose();
    go.row(t) = o.transpose();
    cs.row(t) = c.transpose();
    tc.row(t) = tch.transpose();
    hs.row(t) = h.transpose();
    h_prev = h;
    c_prev = c;
  }
  if (cache) {
    cache->x = x;
    cache->gi = gi;
    cache->gf = gf;
    cache->gg = gg;
    cache->go = go;
    cache->c = cs;
    cache->tanh_c = tc;
    cache->h = hs;
  }
  return hs;
}

// Returns dX in the direction's processing order and accumulates weight grads.
Mat lstm_dir_backward(const Mat& dh_in, const LstmDirCache& c, Eigen::Ref<const Mat> wx,
                      Eigen::Ref<const Mat> wh, Eigen::Ref<Mat> dwx, Eigen::Ref<Mat> dwh,
                      Eigen::Ref<Vec> db) {
  const Eigen::Index T = c.x.rows();
  const Eigen::Index H = wh.rows();
  Mat dx = Mat::Zero(T, c.x.cols());
  Vec dh_next = Vec::Zero(H), dc_next = Vec::Zero(H);
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    Vec dh = dh_in.row(t).transpose() + dh_next;
    Vec o = c.go.row(t).transpose();
    Vec tch = c.tanh_c.row(t).transpose();
    Vec do_ = dh.cwiseProduct(tch);
    Vec dc = dc_next + dh.cwiseProduct(o).cwiseProduct(
                           (1.0 - tch.array().square()).matrix());
    Vec i = c.gi.row(t).transpose();
    Vec f = c.gf.row(t).transpose();
    Vec g = c.gg.row(t).transpose();
    Vec c_prev = t > 0 ? Vec(c.c.row(t - 1).transpose()) : Vec(Vec::Zero(H));
    Vec di = dc.cwiseProduct(g);
    Vec df = dc.cwiseProduct(c_prev);
    Vec dg = dc.cwiseProduct(i);

    Vec dz(4 * H);
    dz.segment(0, H) = (di.array() * i.array() * (1.0 - i.array())).matrix();
    dz.segment(H, H) = (df.array() * f.array() * (1.0 - f.array())).matrix();
    dz.segment(2 * H, H) = (dg.array() * (1.0 - g.array().square())).matrix();
    dz.segment(3 * H, H) = (do_.array() * o.array() * (1.0 - o.array())).matrix();

    dwx.noalias() += c.x.row(t).transpose() * dz.transpose();
    if (t > 0) dwh.noalias() += c.h.row(t - 1).transpose() * dz.transpose();
    db += dz;
    dx.row(t) = (wx * dz).transpose();
    dh_next = wh * dz;
    dc_next = dc.cwiseProduct(f);
  }
  return dx;
}

}  // namespace

Mat bilstm_forward(const Mat& x, const ModelParams& p, Mode mode, std::mt19937_64* rng,
                   BiLstmCache* cache) {
  const auto& cfg = p.bilstm;
  if (x.rows() < 1) throw ShapeError("bilstm: empty sequence");
  const int H = cfg.hidden_dim;
  const bool use_dropout = mode == Mode::Train && cfg.dropout > 0.0 && cfg.num_layers > 1;
  if (use_dropout && rng == nullptr) {
    throw std::invalid_argument("bilstm: train-mode dropout needs an RNG");
  }
  if (cache) cache->layers.assign(static_cast<size_t>(cfg.num_layers), {});

  Mat input = x;
  for (int l = 0; l < cfg.num_layers; ++l) {
    const std::string prefix = "bilstm.layer" + std::to_string(l) + ".";
    BiLstmLayerCache local;
    BiLstmLayerCache& c = cache ? cache->layers[static_cast<size_t>(l)] : local;

    Mat hf = lstm_dir_forward(input, pmat(p, prefix + "fw.wx"), pmat(p, prefix + "fw.wh"),
                              pvec(p, prefix + "fw.b"), &c.fw);
    Mat hb_rev = lstm_dir_forward(input.colwise().reverse(), pmat(p, prefix + "bw.wx"),
                                  pmat(p, prefix + "bw.wh"), pvec(p, prefix + "bw.b"), &c.bw);
    Mat out(input.rows(), 2 * H);
    out.leftCols(H) = hf;
    out.rightCols(H) = hb_rev.colwise().reverse();

    if (use_dropout && l + 1 < cfg.num_layers) {
      const double keep = 1.0 - cfg.dropout;
      std::uniform_real_distribution<double> dist(0.0, 1.0);
      c.mask.resize(out.rows(), out.cols());
      for (Eigen::Index i = 0; i < out.rows(); ++i)
        for (Eigen::Index j = 0; j < out.cols(); ++j)
          c.mask(i, j) = dist(*rng) < keep ? 1.0 / keep : 0.0;
      out = out.cwiseProduct(c.mask);
      c.dropout_applied = true;
    }
    input = std::move(out);
  }
  return input;
}

Mat bilstm_backward(const Mat& grad_out, const BiLstmCache& cache, const ModelParams& p,
                    ParamMap& grads) {
  const auto& cfg = p.bilstm;
  const int H = cfg.hidden_dim;
  Mat dout = grad_out;
  for (int l = cfg.num_layers - 1; l >= 0; --l) {
    const std::string prefix = "bilstm.layer" + std::to_string(l) + ".";
    const BiLstmLayerCache& c = cache.layers[static_cast<size_t>(l)];
    if (c.dropout_applied) dout = dout.cwiseProduct(c.mask);

    const Eigen::Index in_dim = c.fw.x.cols();
    Tensor& dwx_f = grad_slot(grads, prefix + "fw.wx", {in_dim, 4 * H});
    Tensor& dwh_f = grad_slot(grads, prefix + "fw.wh", {H, 4 * H});
    Tensor& db_f = grad_slot(grads, prefix + "fw.b", {4 * H});
    Tensor& dwx_b = grad_slot(grads, prefix + "bw.wx", {in_dim, 4 * H});
    Tensor& dwh_b = grad_slot(grads, prefix + "bw.wh", {H, 4 * H});
    Tensor& db_b = grad_slot(grads, prefix + "bw.b", {4 * H});

    Mat dh_f = dout.leftCols(H);
    Mat dx_f = lstm_dir_backward(dh_f, c.fw, pmat(p, prefix + "fw.wx"),
                                 pmat(p, prefix + "fw.wh"), dwx_f.mat(), dwh_f.mat(),
                                 db_f.vec());

    Mat dh_b_rev = dout.rightCols(H).colwise().reverse();
    Mat dx_b_rev = lstm_dir_backward(dh_b_rev, c.bw, pmat(p, prefix + "bw.wx"),
                                     pmat(p, prefix + "bw.wh"), dwx_b.mat(), dwh_b.mat(),
                                     db_b.vec());

    dout = dx_f + dx_b_rev.colwise().reverse();
  }
  return dout;
}

// ---- nextvlad ----

Vec nextvlad_forward(const Mat& x, const ModelParams& p, NextVladCache* cache) {
  const auto& cfg = p.nextvlad;
  if (x.rows() < 1) throw ShapeError("nextvlad: empty sequence");
  if (x.cols() != cfg.input_dim) {
    throw ShapeError("nextvlad: input dim " + std::to_string(x.cols()) + " != configured " +
                     std::to_string(cfg.input_dim));
  }
  const Eigen::Index T = x.rows();
  const int G = cfg.groups, K = cfg.num_clusters, P = cfg.group_dim();

  NextVladCache local;
  NextVladCache& c = cache ? *cache : local;
  c.x = x;
  c.xe.noalias() = x * pmat(p, "nextvlad.expand.w");
  c.attn = sigmoid_m(((c.xe * pmat(p, "nextvlad.attention.w")).rowwise() +
                      pvec(p, "nextvlad.attention.b").transpose()));
  Mat assign_logits = (c.xe * pmat(p, "nextvlad.assign.w")).rowwise() +
                      pvec(p, "nextvlad.assign.b").transpose();  // T x (G*K)
  c.assign.resize(T * G, K);
  for (Eigen::Index t = 0; t < T; ++t)
    for (int g = 0; g < G; ++g)
      c.assign.row(t * G + g) = assign_logits.row(t).segment(g * K, K);
  c.assign = softmax_rows(c.assign);

  auto centers = pmat(p, "nextvlad.centers");
  Mat v = Mat::Zero(K, P);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (int g = 0; g < G; ++g) {
      const double a = c.attn(t, g);
      auto group = c.xe.row(t).segment(g * P, P);
      for (int k = 0; k < K; ++k) {
        const double w = a * c.assign(t * G + g, k);
        v.row(k) += w * (group - centers.row(k));
      }
    }
  }
  c.v = Tensor::from_matrix(v);
  c.vn = l2_normalize(c.v, 1, kIntraNormEps);

  // flatten row-major and project
  Eigen::Map<const Vec> flat(c.vn.data(), K * P);
  return pmat(p, "nextvlad.project.w").transpose() * flat;
}

Mat nextvlad_backward(const Vec& grad_out, const NextVladCache& c, const ModelParams& p,
                      ParamMap& grads) {
  const auto& cfg = p.nextvlad;
  const Eigen::Index T = c.x.rows();
  const int G = cfg.groups, K = cfg.num_clusters, P = cfg.group_dim();
  const int E = cfg.expanded_dim();
  auto centers = pmat(p, "nextvlad.centers");

  Eigen::Map<const Vec> flat(c.vn.data(), K * P);
  grad_slot(grads, "nextvlad.project.w", {K * P, cfg.output_dim}).mat().noalias() +=
      flat * grad_out.transpose();
  Vec dflat = pmat(p, "nextvlad.project.w") * grad_out;
  Tensor dvn({K, P});
  dvn.flat() = Eigen::Map<const Eigen::ArrayXd>(dflat.data(), K * P);
  Tensor dv_t = l2_normalize_backward(dvn, c.v, 1, kIntraNormEps);
  Mat dv = dv_t.mat();

  Tensor& dcenters = grad_slot(grads, "nextvlad.centers", {K, P});
  Mat dattn = Mat::Zero(T, G);
  Mat dassign = Mat::Zero(T * G, K);
  Mat dxe = Mat::Zero(T, E);

  for (Eigen::Index t = 0; t < T; ++t) {
    for (int g = 0; g < G; ++g) {
      const double a = c.attn(t, g);
      auto group = c.xe.row(t).segment(g * P, P);
      for (int k = 0; k < K; ++k) {
        const double alpha = c.assign(t * G + g, k);
        const double w = a * alpha;
        const Eigen::RowVectorXd resid = group - centers.row(k);
        const double dot = dv.row(k).dot(resid);
        dcenters.mat().row(k) -= w * dv.row(k);
        dxe.row(t).segment(g * P, P) += w * dv.row(k);
        dattn(t, g) += alpha * dot;
        dassign(t * G + g, k) += a * dot;
      }
    }
  }

  // assignment softmax + logits
  Mat dlogits_rows = softmax_rows_backward(dassign, c.assign);  // (T*G) x K
  Mat dassign_logits(T, G * K);
  for (Eigen::Index t = 0; t < T; ++t)
    for (int g = 0; g < G; ++g)
      dassign_logits.row(t).segment(g * K, K) = dlogits_rows.row(t * G + g);
  grad_slot(grads, "nextvlad.assign.w", {E, G * K}).mat().noalias() +=
      c.xe.transpose() * dassign_logits;
  grad_slot(grads, "nextvlad.assign.b", {G * K}).vec() +=
      dassign_logits.colwise().sum().transpose();
  dxe.noalias() += dassign_logits * pmat(p, "nextvlad.assign.w").transpose();

  // attention sigmoid + logits
  Mat dattn_logits = (dattn.array() * c.attn.array() * (1.0 - c.attn.array())).matrix();
  grad_slot(grads, "nextvlad.attention.w", {E, G}).mat().noalias() +=
      c.xe.transpose() * dattn_logits;
  grad_slot(grads, "nextvlad.attention.b", {G}).vec() +=
      dattn_logits.colwise().sum().transpose();
  dxe.noalias() += dattn_logits * pmat(p, "nextvlad.attention.w").transpose();

  grad_slot(grads, "nextvlad.expand.w", {cfg.input_dim, E}).mat().noalias() +=
      c.x.transpose() * dxe;
  return dxe * pmat(p, "nextvlad.expand.w").transpose();
}

// ---- pooling / classifier ----

Vec pool(const Mat& h, Pooling mode) {
  if (h.rows() < 1) throw ShapeError("pool: empty sequence");
  switch (mode) {
    case Pooling::Max: return h.colwise().maxCoeff().transpose();
    case Pooling::Mean: return h.colwise().mean().transpose();
    case Pooling::NextVlad: break;
  }
  throw ConfigError("pool: mode must be max or mean");
}

Mat pool_backward(const Vec& grad_out, const Mat& h, Pooling mode) {
  Mat dx = Mat::Zero(h.rows(), h.cols());
  if (mode == Pooling::Mean) {
    dx = (grad_out.transpose() / static_cast<double>(h.rows())).replicate(h.rows(), 1);
    return dx;
  }
  if (mode == Pooling::Max) {
    for (Eigen::Index c = 0; c < h.cols(); ++c) {
      Eigen::Index arg = 0;
      h.col(c).maxCoeff(&arg);
      dx(arg, c) = grad_out[c];
    }
    return dx;
  }
  throw ConfigError("pool_backward: mode must be max or mean");
}

Vec classify(const Vec& features, const ModelParams& p) {
  auto w = pmat(p, "classifier.w");
  if (features.size() != w.rows()) {
    throw ShapeError("classify: feature dim " + std::to_string(features.size()) +
                     " != classifier input dim " + std::to_string(w.rows()));
  }
  Vec logits = w.transpose() * features + pvec(p, "classifier.b");
  Tensor probs = softmax(Tensor::from_vector(logits), 0);
  return probs.vec();
}

double cross_entropy(const Vec& probs, int gold) {
  if (gold < 0 || gold >= probs.size()) throw std::invalid_argument("cross_entropy: bad label");
  return -std::log(std::max(probs[gold], 1e-12));
}

Vec classify_ce_backward(const Vec& probs, int gold, const Vec& features, const ModelParams& p,
                         ParamMap& grads) {
  Vec dlogits = probs;
  dlogits[gold] -= 1.0;
  grad_slot(grads, "classifier.w", {features.size(), 2}).mat().noalias() +=
      features * dlogits.transpose();
  grad_slot(grads, "classifier.b", {2}).vec() += dlogits;
  return pmat(p, "classifier.w") * dlogits;
}

// ---- full stack ----

Vec model_forward(const std::vector<int>& ids, const ModelParams& p, Mode mode,
                  std::mt19937_64* rng, ForwardCache* cache) {
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.h_enc = encode(ids, p, mode, &c.enc);
  c.used_encoder = true;
  return model_forward_embedded(c.h_enc, p, mode, rng, cache ? cache : nullptr);
}

Vec model_forward_embedded(const Mat& embedded, const ModelParams& p, Mode mode,
                           std::mt19937_64* rng, ForwardCache* cache) {
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  if (!c.used_encoder) c.h_enc = embedded;
  c.h_lstm = bilstm_forward(embedded, p, mode, rng, &c.lstm);
  if (p.pooling == Pooling::NextVlad) {
    c.pooled = nextvlad_forward(c.h_lstm, p, &c.vlad);
  } else {
    c.pooled = pool(c.h_lstm, p.pooling);
  }
  c.probs = classify(c.pooled, p);
  return c.probs;
}

void model_backward(int gold, const ForwardCache& cache, const ModelParams& p, ParamMap& grads) {
  Vec dpooled = classify_ce_backward(cache.probs, gold, cache.pooled, p, grads);
  Mat dh_lstm;
  if (p.pooling == Pooling::NextVlad) {
    dh_lstm = nextvlad_backward(dpooled, cache.vlad, p, grads);
  } else {
    dh_lstm = pool_backward(dpooled, cache.h_lstm, p.pooling);
  }
  Mat dh_enc = bilstm_backward(dh_lstm, cache.lstm, p, grads);
  if (cache.used_encoder && p.finetune_encoder) {
    encode_backward(dh_enc, cache.enc, p, grads);
  }
}

}  // namespace sarc
