#include "sarc/augmentation.hpp"

#include "sarc/checkpoint.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace sarc {

namespace {

using nlohmann::json;

DialogueRecord make_augmented(std::string id, std::vector<std::string> context,
                              std::string response, Label label, Provenance prov) {
  DialogueRecord rec;
  rec.id = std::move(id);
  rec.context = std::move(context);
  rec.response = std::move(response);
  rec.label = label;
  rec.provenance = std::move(prov);
  return rec;
}

}  // namespace

ContextNegativesResult derive_context_negatives(const std::vector<DialogueRecord>& records) {
  ContextNegativesResult result;
  for (const auto& rec : records) {
    if (rec.context.size() < 2) {
      ++result.skipped;
      continue;
    }
    std::vector<std::string> context(rec.context.begin(), rec.context.end() - 1);
    result.records.push_back(make_augmented(
        "neg:" + rec.id, std::move(context), rec.context.back(), Label::NotSarcasm,
        Provenance{rec.id, "context_negative", std::nullopt, std::nullopt}));
  }
  return result;
}

SynonymTranslator::SynonymTranslator() {
  tables_["fr"] = {{"great", "excellent"}, {"good", "pleasant"},   {"happy", "delighted"},
                   {"bad", "awful"},       {"sure", "certainly"},  {"really", "truly"},
                   {"love", "adore"},      {"nice", "charming"}};
  tables_["es"] = {{"great", "terrific"},  {"good", "decent"},     {"happy", "cheerful"},
                   {"bad", "dreadful"},    {"sure", "definitely"}, {"really", "genuinely"},
                   {"love", "cherish"},    {"nice", "lovely"}};
  tables_["nl"] = {{"great", "splendid"},  {"good", "solid"},      {"happy", "content"},
                   {"bad", "terrible"},    {"sure", "surely"},     {"really", "actually"},
                   {"love", "treasure"},   {"nice", "pleasing"}};
}

std::optional<std::string> SynonymTranslator::round_trip(const std::string& text,
                                                         const std::string& lang) {
  auto table_it = tables_.find(lang);
  if (table_it == tables_.end()) return std::nullopt;
  const auto& table = table_it->second;

  std::istringstream is(text);
  std::string word, out;
  while (is >> word) {
    std::string lowered = word;
    std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    auto it = table.find(lowered);
    if (!out.empty()) out += ' ';
    out += it == table.end() ? word : it->second;
  }
  return out;
}

HttpTranslator::HttpTranslator(HttpTranslatorConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty()) {
    throw ExternalServiceError("http translator: endpoint not configured");
  }
}

std::optional<std::string> HttpTranslator::translate(const std::string& text,
                                                     const std::string& source,
                                                     const std::string& target) {
  // split the endpoint into base url and path
  std::string base = config_.endpoint, path = "/";
  const auto scheme = base.find("://");
  if (scheme != std::string::npos) {
    const auto slash = base.find('/', scheme + 3);
    if (slash != std::string::npos) {
      path = base.substr(slash);
      base = base.substr(0, slash);
    }
  }

  const json request{{"text", text}, {"source", source}, {"target", target}};
  for (int attempt = 0; attempt <= config_.retries; ++attempt) {
    httplib::Client client(base);
    client.set_connection_timeout(0, config_.timeout_ms * 1000);
    client.set_read_timeout(0, config_.timeout_ms * 1000);
    httplib::Headers headers;
    if (!config_.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + config_.api_key);
    }
    auto res = client.Post(path, headers, request.dump(), "application/json");
    if (res && res->status == 200) {
      try {
        return json::parse(res->body).at("text").get<std::string>();
      } catch (const json::exception&) {
        return std::nullopt;
      }
    }
  }
  return std::nullopt;
}

std::optional<std::string> HttpTranslator::round_trip(const std::string& text,
                                                      const std::string& lang) {
  auto there = translate(text, "en", lang);
  if (!there.has_value()) return std::nullopt;
  return translate(*there, lang, "en");
}

BackTranslationResult back_translate(const std::vector<std::string>& texts,
                                     const std::vector<std::string>& languages,
                                     Translator& translator) {
  if (languages.empty()) throw ExternalServiceError("back_translate: no languages configured");
  BackTranslationResult result;
  size_t attempts = 0, failures = 0;
  for (size_t i = 0; i < texts.size(); ++i) {
    for (const auto& lang : languages) {
      ++attempts;
      std::optional<std::string> para = translator.round_trip(texts[i], lang);
      if (!para.has_value()) {
        ++failures;
        result.errors.push_back("text #" + std::to_string(i) + " via " + lang + ": " +
                                translator.name() + " round trip failed");
        continue;
      }
      if (*para == texts[i]) continue;  // identical paraphrases carry nothing
      result.items.push_back({i, lang, std::move(*para)});
    }
  }
  if (attempts > 0 && failures == attempts) {
    throw ExternalServiceError("back_translate: every round trip failed (" +
                               std::to_string(failures) + " attempts)");
  }
  return result;
}

BalanceResult balance_with_positives(const std::vector<DialogueRecord>& records,
                                     Translator& translator,
                                     const std::vector<std::string>& languages) {
  long positives = 0, negatives = 0;
  std::vector<size_t> sarcastic;
  for (size_t i = 0; i < records.size(); ++i) {
    if (!records[i].label.has_value()) {
      throw DataError("balance_with_positives: record " + records[i].id + " has no label");
    }
    if (*records[i].label == Label::Sarcasm) {
      ++positives;
      sarcastic.push_back(i);
    } else {
      ++negatives;
    }
  }

  BalanceResult result;
  result.records = records;
  if (positives >= negatives || sarcastic.empty()) {
    result.residual_imbalance = negatives - positives;
    return result;
  }

  std::vector<std::string> texts;
  texts.reserve(sarcastic.size());
  for (size_t i : sarcastic) texts.push_back(records[i].response);
  BackTranslationResult bt = back_translate(texts, languages, translator);
  result.errors = std::move(bt.errors);

  long need = negatives - positives;
  for (const auto& item : bt.items) {
    if (need == 0) break;
    const DialogueRecord& source = records[sarcastic[item.source_index]];
    result.records.push_back(make_augmented(
        "bt:" + source.id + ":" + item.language, source.context, item.paraphrase,
        Label::Sarcasm, Provenance{source.id, "back_translation", std::nullopt, std::nullopt}));
    ++result.added;
    --need;
  }
  result.residual_imbalance = need;
  return result;
}

// ---- response encoders ----

TfIdfEncoder TfIdfEncoder::fit(const std::vector<DialogueRecord>& records) {
  if (records.empty()) throw DataError("TfIdfEncoder: empty corpus");
  std::map<std::string, long> df;
  for (const auto& rec : records) {
    auto toks = tokenize(rec.response);
    std::sort(toks.begin(), toks.end());
    toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
    for (const auto& t : toks) ++df[t];
  }
  TfIdfEncoder enc;
  const double n = static_cast<double>(records.size());
  int next = 0;
  for (const auto& [token, count] : df) {  // std::map: lexicographic, deterministic
    enc.index_.emplace(token, next++);
    enc.idf_.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(count))) + 1.0);
  }
  return enc;
}

Vec TfIdfEncoder::encode(const DialogueRecord& record) const {
  Vec v = Vec::Zero(static_cast<Eigen::Index>(idf_.size()));
  for (const auto& tok : tokenize(record.response)) {
    auto it = index_.find(tok);
    if (it != index_.end()) v[it->second] += idf_[static_cast<size_t>(it->second)];
  }
  const double norm = v.norm();
  if (norm > 0) v /= norm;
  return v;
}

ModelResponseEncoder::ModelResponseEncoder(const ModelParams& params)
    : params_(params), vocab_(Vocab::from_tokens(params.vocab_tokens)) {
  if (params_.vocab_tokens.empty()) {
    throw ConfigError("ModelResponseEncoder: checkpoint carries no vocabulary");
  }
}

Vec ModelResponseEncoder::encode(const DialogueRecord& record) const {
  std::vector<int> ids = assemble_ids({}, record.response, vocab_, params_.encoder.max_seq_len);
  Mat states = sarc::encode(ids, params_, Mode::Eval);
  return states.colwise().mean().transpose();
}

FileResponseEncoder FileResponseEncoder::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path);
  FileResponseEncoder enc;
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": invalid JSON: " + e.what());
    }
    const auto id = j.at("id").get<std::string>();
    const auto values = j.at("vector").get<std::vector<double>>();
    if (values.empty()) throw DataError(path + ":" + std::to_string(line_no) + ": empty vector");
    if (enc.dim_ == 0) enc.dim_ = static_cast<int>(values.size());
    if (static_cast<int>(values.size()) != enc.dim_) {
      throw DataError(path + ":" + std::to_string(line_no) + ": vector dimension mismatch");
    }
    Vec v(enc.dim_);
    for (int i = 0; i < enc.dim_; ++i) v[i] = values[static_cast<size_t>(i)];
    enc.vectors_.emplace(id, std::move(v));
  }
  if (enc.vectors_.empty()) throw DataError(path + ": no sentence vectors");
  return enc;
}

Vec FileResponseEncoder::encode(const DialogueRecord& record) const {
  auto it = vectors_.find(record.id);
  if (it == vectors_.end()) {
    throw DataError("FileResponseEncoder: no sentence vector for record " + record.id);
  }
  return it->second;
}

// ---- retrieval ----

ResponseIndex ResponseIndex::build(const std::vector<DialogueRecord>& records,
                                   const ResponseEncoder& encoder) {
  if (records.empty()) throw DataError("ResponseIndex: no records");
  ResponseIndex index;
  index.dim_ = encoder.dim();
  index.entries_.reserve(records.size());
  for (const auto& rec : records) {
    if (!rec.label.has_value()) {
      throw DataError("ResponseIndex: record " + rec.id + " is unlabeled");
    }
    Vec embedding = encoder.encode(rec);
    if (embedding.size() != index.dim_) {
      throw DataError("ResponseIndex: encoder returned dimension " +
                      std::to_string(embedding.size()) + " for record " + rec.id +
                      ", expected " + std::to_string(index.dim_));
    }
    if (!embedding.allFinite()) {
      throw DataError("ResponseIndex: non-finite embedding for record " + rec.id);
    }
    index.entries_.push_back({rec.id, *rec.label, std::move(embedding), rec.response});
  }
  return index;
}

std::vector<RetrievalCandidate> retrieve_topk(const ResponseIndex& index, const Vec& query,
                                              int k) {
  if (k < 1 || static_cast<size_t>(k) > index.size()) {
    throw DataError("retrieve_topk: k must be in [1, " + std::to_string(index.size()) +
                    "], got " + std::to_string(k));
  }
  if (query.size() != index.dim()) {
    throw ShapeError("retrieve_topk: query dimension " + std::to_string(query.size()) +
                     " does not match index dimension " + std::to_string(index.dim()));
  }

  const double qnorm = query.norm();
  const auto& entries = index.entries();
  std::vector<std::pair<double, size_t>> scored(entries.size());
  for (size_t i = 0; i < entries.size(); ++i) {
    const double enorm = entries[i].embedding.norm();
    const double denom = qnorm * enorm;
    scored[i] = {denom == 0.0 ? 0.0 : query.dot(entries[i].embedding) / denom, i};
  }
  std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return entries[a.second].record_id < entries[b.second].record_id;
  });

  std::vector<RetrievalCandidate> out;
  out.reserve(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    const IndexEntry& e = entries[scored[static_cast<size_t>(i)].second];
    out.push_back({e.record_id, e.response, e.label, scored[static_cast<size_t>(i)].first});
  }
  return out;
}

// ---- NSP scorer ----

namespace {

constexpr const char* kNspEmbedding = "nsp.embedding";
constexpr const char* kNspHiddenW = "nsp.hidden.w";
constexpr const char* kNspHiddenB = "nsp.hidden.b";
constexpr const char* kNspOutW = "nsp.out.w";
constexpr const char* kNspOutB = "nsp.out.b";

struct NspInput {
  std::vector<int> context_ids;
  std::vector<int> candidate_ids;
  bool truncated = false;
};

NspInput nsp_input(const std::vector<std::string>& context, const std::string& candidate,
                   const Vocab& vocab, int max_seq_len) {
  NspInput in;
  for (const auto& turn : context) {
    for (const auto& tok : tokenize(turn)) in.context_ids.push_back(vocab.id(tok));
  }
  for (const auto& tok : tokenize(candidate)) in.candidate_ids.push_back(vocab.id(tok));

  // sequence is [context..., SEP, candidate...]; trim the oldest context first
  long total = static_cast<long>(in.context_ids.size() + 1 + in.candidate_ids.size());
  while (total > max_seq_len && !in.context_ids.empty()) {
    in.context_ids.erase(in.context_ids.begin());
    in.truncated = true;
    --total;
  }
  while (total > max_seq_len && !in.candidate_ids.empty()) {
    in.candidate_ids.pop_back();
    in.truncated = true;
    --total;
  }
  return in;
}

Vec mean_embedding(const std::vector<int>& ids, const Tensor& embedding) {
  Vec u = Vec::Zero(embedding.dim(1));
  if (ids.empty()) return u;
  for (int id : ids) u += embedding.mat().row(id).transpose();
  return u / static_cast<double>(ids.size());
}

struct NspForward {
  Vec u, v, f, h;
  double logit = 0.0;
  double p = 0.5;
};

NspForward nsp_forward(const NspInput& in, const ParamMap& tensors) {
  const Tensor& emb = tensors.at(kNspEmbedding);
  const Eigen::Index e = emb.dim(1);
  NspForward fwd;
  fwd.u = mean_embedding(in.context_ids, emb);
  fwd.v = mean_embedding(in.candidate_ids, emb);
  fwd.f.resize(3 * e);
  fwd.f << fwd.u, fwd.v, fwd.u.cwiseProduct(fwd.v);
  fwd.h = (tensors.at(kNspHiddenW).mat().transpose() * fwd.f +
           tensors.at(kNspHiddenB).vec())
              .array()
              .tanh()
              .matrix();
  fwd.logit = tensors.at(kNspOutW).vec().dot(fwd.h) + tensors.at(kNspOutB).at(0);
  fwd.p = fwd.logit >= 0 ? 1.0 / (1.0 + std::exp(-fwd.logit))
                         : std::exp(fwd.logit) / (1.0 + std::exp(fwd.logit));
  return fwd;
}

void nsp_backward(const NspInput& in, const NspForward& fwd, double target,
                  const ParamMap& tensors, ParamMap& grads) {
  const Tensor& emb = tensors.at(kNspEmbedding);
  const Eigen::Index e = emb.dim(1);

  auto slot = [&](const char* name) -> Tensor& {
    auto it = grads.find(name);
    if (it == grads.end()) it = grads.emplace(name, Tensor(tensors.at(name).shape())).first;
    return it->second;
  };

  const double ds = fwd.p - target;
  slot(kNspOutW).vec() += fwd.h * ds;
  slot(kNspOutB).at(0) += ds;
  Vec dh = tensors.at(kNspOutW).vec() * ds;
  Vec dz = (dh.array() * (1.0 - fwd.h.array().square())).matrix();
  slot(kNspHiddenW).mat() += fwd.f * dz.transpose();
  slot(kNspHiddenB).vec() += dz;
  Vec df = tensors.at(kNspHiddenW).mat() * dz;

  Vec du = df.segment(0, e) + df.segment(2 * e, e).cwiseProduct(fwd.v);
  Vec dv = df.segment(e, e) + df.segment(2 * e, e).cwiseProduct(fwd.u);
  Tensor& demb = slot(kNspEmbedding);
  if (!in.context_ids.empty()) {
    const Vec per = du / static_cast<double>(in.context_ids.size());
    for (int id : in.context_ids) demb.mat().row(id) += per.transpose();
  }
  if (!in.candidate_ids.empty()) {
    const Vec per = dv / static_cast<double>(in.candidate_ids.size());
    for (int id : in.candidate_ids) demb.mat().row(id) += per.transpose();
  }
}

double bce(double p, double target) {
  const double eps = 1e-12;
  return -(target * std::log(std::max(p, eps)) +
           (1.0 - target) * std::log(std::max(1.0 - p, eps)));
}

}  // namespace

NspScorer::NspScorer(Vocab vocab, NspConfig config, ParamMap tensors)
    : vocab_(std::move(vocab)), config_(config), tensors_(std::move(tensors)) {}

NspScorer NspScorer::zero_initialized(const Vocab& vocab, const NspConfig& config) {
  ParamMap tensors;
  tensors.emplace(kNspEmbedding, Tensor({vocab.size(), config.embed_dim}));
  tensors.emplace(kNspHiddenW, Tensor({3 * config.embed_dim, config.hidden_dim}));
  tensors.emplace(kNspHiddenB, Tensor({config.hidden_dim}));
  tensors.emplace(kNspOutW, Tensor({config.hidden_dim}));
  tensors.emplace(kNspOutB, Tensor({1}));
  return NspScorer(vocab, config, std::move(tensors));
}

double NspScorer::score(const std::vector<std::string>& context,
                        const std::string& candidate) const {
  NspInput in = nsp_input(context, candidate, vocab_, config_.max_seq_len);
  if (in.truncated) truncations_.fetch_add(1, std::memory_order_relaxed);
  return nsp_forward(in, tensors_).p;
}

void NspScorer::save(const std::string& path) const {
  nlohmann::json config{{"kind", "nsp"},
                        {"embed_dim", config_.embed_dim},
                        {"hidden_dim", config_.hidden_dim},
                        {"max_seq_len", config_.max_seq_len},
                        {"vocab", vocab_.id_to_token}};
  save_container(path, config, tensors_);
}

NspScorer NspScorer::load(const std::string& path) {
  auto [config, tensors] = load_container(path);
  if (config.value("kind", "") != "nsp") {
    throw CheckpointError(path + " does not contain an NSP scorer");
  }
  NspConfig cfg;
  cfg.embed_dim = config.at("embed_dim").get<int>();
  cfg.hidden_dim = config.at("hidden_dim").get<int>();
  cfg.max_seq_len = config.at("max_seq_len").get<int>();
  Vocab vocab = Vocab::from_tokens(config.at("vocab").get<std::vector<std::string>>());
  return NspScorer(std::move(vocab), cfg, std::move(tensors));
}

NspScorer train_nsp_scorer(const std::vector<DialogueRecord>& dialogues, const NspConfig& config,
                           NspHistory* history) {
  if (dialogues.size() < 2) throw DataError("train_nsp_scorer: need at least 2 dialogues");
  const bool degenerate = std::all_of(
      dialogues.begin(), dialogues.end(),
      [&](const DialogueRecord& r) { return r.response == dialogues.front().response; });
  if (degenerate) {
    throw DataError("train_nsp_scorer: all responses identical, cannot form negative pairs");
  }

  Vocab vocab = build_vocab(dialogues, 1);
  std::mt19937_64 rng(config.seed);

  // initialize: random embedding and hidden layer, zero output head
  NspScorer scorer = NspScorer::zero_initialized(vocab, config);
  {
    std::uniform_real_distribution<double> emb_dist(-1.0 / std::sqrt(config.embed_dim),
                                                    1.0 / std::sqrt(config.embed_dim));
    Tensor& emb = scorer.tensors_.at(kNspEmbedding);
    for (Eigen::Index i = 0; i < emb.size(); ++i) emb.at(i) = emb_dist(rng);
    std::uniform_real_distribution<double> w_dist(-1.0 / std::sqrt(3.0 * config.embed_dim),
                                                  1.0 / std::sqrt(3.0 * config.embed_dim));
    Tensor& w = scorer.tensors_.at(kNspHiddenW);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.at(i) = w_dist(rng);
  }

  // pair construction: one positive and one negative per dialogue, 1:1 exact
  struct Pair {
    NspInput input;
    double target;
  };
  std::vector<Pair> pairs;
  pairs.reserve(2 * dialogues.size());
  std::uniform_int_distribution<size_t> pick(0, dialogues.size() - 1);
  for (size_t i = 0; i < dialogues.size(); ++i) {
    const auto& rec = dialogues[i];
    pairs.push_back(
        {nsp_input(rec.context, rec.response, vocab, config.max_seq_len), 1.0});
    size_t j = pick(rng);
    int guard = 0;
    while (j == i || dialogues[j].response == rec.response) {
      j = pick(rng);
      if (++guard > 1000) {
        throw DataError("train_nsp_scorer: cannot sample a distinct negative response");
      }
    }
    pairs.push_back(
        {nsp_input(rec.context, dialogues[j].response, vocab, config.max_seq_len), 0.0});
  }

  std::shuffle(pairs.begin(), pairs.end(), rng);
  const size_t n_valid = std::max<size_t>(
      1, static_cast<size_t>(std::llround(config.valid_fraction * pairs.size())));
  std::vector<Pair> valid(pairs.end() - static_cast<long>(n_valid), pairs.end());
  pairs.resize(pairs.size() - n_valid);

  NspHistory local;
  NspHistory& hist = history ? *history : local;
  hist = NspHistory{};
  for (const auto& pr : pairs) {
    hist.initial_loss += bce(nsp_forward(pr.input, scorer.tensors_).p, pr.target);
  }
  hist.initial_loss /= static_cast<double>(pairs.size());

  ParamMap best_tensors = scorer.tensors_;
  ParamMap velocity;
  std::vector<size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (size_t start = 0; start < order.size(); start += config.batch_size) {
      const size_t stop = std::min(order.size(), start + config.batch_size);
      ParamMap grads;
      for (size_t i = start; i < stop; ++i) {
        const Pair& pr = pairs[order[i]];
        NspForward fwd = nsp_forward(pr.input, scorer.tensors_);
        epoch_loss += bce(fwd.p, pr.target);
        nsp_backward(pr.input, fwd, pr.target, scorer.tensors_, grads);
      }
      const double scale = 1.0 / static_cast<double>(stop - start);
      for (auto& [name, g] : grads) {
        g.flat() *= scale;
        auto vit = velocity.find(name);
        if (vit == velocity.end()) vit = velocity.emplace(name, Tensor(g.shape())).first;
        vit->second.flat() = config.momentum * vit->second.flat() + g.flat();
        scorer.tensors_.at(name).flat() -= config.lr * vit->second.flat();
      }
    }
    hist.epoch_loss.push_back(epoch_loss / static_cast<double>(pairs.size()));

    long correct = 0;
    for (const auto& pr : valid) {
      const double p = nsp_forward(pr.input, scorer.tensors_).p;
      if ((p > 0.5 ? 1.0 : 0.0) == pr.target) ++correct;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(valid.size());
    hist.valid_accuracy.push_back(acc);
    if (acc > hist.best_accuracy) {
      hist.best_accuracy = acc;
      best_tensors = scorer.tensors_;
    }
  }
  scorer.tensors_ = std::move(best_tensors);
  return scorer;
}

// ---- CRA ----

std::optional<DialogueRecord> cra_augment(const DialogueRecord& unlabeled,
                                          const ResponseIndex& index, const CraConfig& cfg) {
  if (index.size() == 0) throw DataError("cra_augment: empty index");
  if (cfg.encoder == nullptr || cfg.scorer == nullptr) {
    throw ConfigError("cra_augment: encoder and scorer handles are required");
  }
  if (unlabeled.context.empty() || unlabeled.response.empty()) {
    throw DataError("cra_augment: record " + unlabeled.id +
                    " needs non-empty context and response");
  }
  if (cfg.k < 1) throw ConfigError("cra_augment: k must be >= 1");

  const int k = std::min<int>(cfg.k, static_cast<int>(index.size()));
  Vec query = cfg.encoder->encode(unlabeled);
  std::vector<RetrievalCandidate> candidates = retrieve_topk(index, query, k);

  const RetrievalCandidate* best = nullptr;
  double best_score = -1.0;
  for (const auto& cand : candidates) {
    const double s = cfg.scorer->score(unlabeled.context, cand.response);
    if (s > best_score ||
        (s == best_score && best != nullptr && cand.record_id < best->record_id)) {
      best_score = s;
      best = &cand;
    }
  }
  if (best == nullptr || best_score < cfg.min_nsp_confidence) return std::nullopt;

  return make_augmented("cra:" + unlabeled.id, unlabeled.context, best->response, best->label,
                        Provenance{unlabeled.id, "cra", best->cosine, best_score});
}

}  // namespace sarc
