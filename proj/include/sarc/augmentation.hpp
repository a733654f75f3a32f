#pragma once

#include "sarc/dataset.hpp"
#include "sarc/layers.hpp"
#include "sarc/tensor.hpp"

#include <atomic>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace sarc {

class ExternalServiceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- labeled augmentation ----

struct ContextNegativesResult {
  std::vector<DialogueRecord> records;
  int skipped = 0;  // inputs with fewer than 2 context turns
};

// Promotes the last context turn to the response slot and labels the result
// NOT_SARCASM. Provenance links back to the source record.
ContextNegativesResult derive_context_negatives(const std::vector<DialogueRecord>& records);

/// Round-trips text through another language. Implementations must be
/// deterministic for reproducible corpora (the HTTP client is only as
/// deterministic as the service behind it).
class Translator {
 public:
  virtual ~Translator() = default;
  virtual std::string name() const = 0;
  // English -> lang -> English; nullopt on failure.
  virtual std::optional<std::string> round_trip(const std::string& text,
                                                const std::string& lang) = 0;
};

// Returns the input unchanged; paraphrases all get dropped downstream.
class IdentityTranslator : public Translator {
 public:
  std::string name() const override { return "identity"; }
  std::optional<std::string> round_trip(const std::string& text, const std::string&) override {
    return text;
  }
};

// Deterministic word-substitution tables keyed by language; the test fixture
// for back-translation behavior.
class SynonymTranslator : public Translator {
 public:
  SynonymTranslator();
  std::string name() const override { return "synonym"; }
  std::optional<std::string> round_trip(const std::string& text,
                                        const std::string& lang) override;

 private:
  std::map<std::string, std::map<std::string, std::string>> tables_;
};

struct HttpTranslatorConfig {
  std::string endpoint;  // http://host:port/path
  std::string api_key;
  int timeout_ms = 10000;
  int retries = 2;
};

// POSTs {"text", "source", "target"} and expects {"text": ...} back; used
// twice per round trip.
class HttpTranslator : public Translator {
 public:
  explicit HttpTranslator(HttpTranslatorConfig config);
  std::string name() const override { return "http"; }
  std::optional<std::string> round_trip(const std::string& text,
                                        const std::string& lang) override;

 private:
  std::optional<std::string> translate(const std::string& text, const std::string& source,
                                       const std::string& target);
  HttpTranslatorConfig config_;
};

struct BackTranslationItem {
  size_t source_index = 0;
  std::string language;
  std::string paraphrase;
};

struct BackTranslationResult {
  std::vector<BackTranslationItem> items;   // paraphrases != source text
  std::vector<std::string> errors;          // per-item failures, batch continues
};

// Throws ExternalServiceError when every round trip failed.
BackTranslationResult back_translate(const std::vector<std::string>& texts,
                                     const std::vector<std::string>& languages,
                                     Translator& translator);

struct BalanceResult {
  std::vector<DialogueRecord> records;  // input + appended positives
  int added = 0;
  long residual_imbalance = 0;  // negatives minus positives after balancing
  std::vector<std::string> errors;
};

// Appends back-translated paraphrases of SARCASM responses (context kept)
// until the label counts match or the paraphrase supply runs out.
BalanceResult balance_with_positives(const std::vector<DialogueRecord>& records,
                                     Translator& translator,
                                     const std::vector<std::string>& languages);

// ---- response encoders ----

class ResponseEncoder {
 public:
  virtual ~ResponseEncoder() = default;
  virtual int dim() const = 0;
  virtual Vec encode(const DialogueRecord& record) const = 0;
};

// Training-free deterministic baseline: L2-normalized tf-idf over the corpus
// vocabulary it was fitted on.
class TfIdfEncoder : public ResponseEncoder {
 public:
  static TfIdfEncoder fit(const std::vector<DialogueRecord>& records);
  int dim() const override { return static_cast<int>(idf_.size()); }
  Vec encode(const DialogueRecord& record) const override;

 private:
  std::unordered_map<std::string, int> index_;
  std::vector<double> idf_;
};

// Mean-pooled token states from a trained encoder stack.
class ModelResponseEncoder : public ResponseEncoder {
 public:
  explicit ModelResponseEncoder(const ModelParams& params);
  int dim() const override { return params_.encoder.hidden_dim; }
  Vec encode(const DialogueRecord& record) const override;

 private:
  const ModelParams& params_;
  Vocab vocab_;
};

// Sentence vectors imported from a JSONL file keyed by record id.
class FileResponseEncoder : public ResponseEncoder {
 public:
  static FileResponseEncoder load(const std::string& path);
  int dim() const override { return dim_; }
  Vec encode(const DialogueRecord& record) const override;

 private:
  std::map<std::string, Vec> vectors_;
  int dim_ = 0;
};

// ---- retrieval ----

struct IndexEntry {
  std::string record_id;
  Label label = Label::NotSarcasm;
  Vec embedding;
  std::string response;
};

/// Immutable exact-retrieval index over labeled responses.
class ResponseIndex {
 public:
  static ResponseIndex build(const std::vector<DialogueRecord>& records,
                             const ResponseEncoder& encoder);
  size_t size() const { return entries_.size(); }
  int dim() const { return dim_; }
  const std::vector<IndexEntry>& entries() const { return entries_; }

 private:
  std::vector<IndexEntry> entries_;
  int dim_ = 0;
};

struct RetrievalCandidate {
  std::string record_id;
  std::string response;
  Label label = Label::NotSarcasm;
  double cosine = 0.0;
};

// Exactly k candidates, cosine descending, ties broken by record id ascending;
// identical to a full linear scan by construction.
std::vector<RetrievalCandidate> retrieve_topk(const ResponseIndex& index, const Vec& query,
                                              int k);

// ---- NSP scorer ----

struct NspConfig {
  int embed_dim = 32;
  int hidden_dim = 32;
  int max_seq_len = 64;
  int epochs = 30;
  int batch_size = 8;
  double lr = 0.15;
  double momentum = 0.8;
  double valid_fraction = 0.2;
  uint64_t seed = 1;
};

struct NspHistory {
  double initial_loss = 0.0;  // before any update; ln 2 for a zero head
  std::vector<double> epoch_loss;
  std::vector<double> valid_accuracy;
  double best_accuracy = 0.0;
};

/// Pair classifier scoring "does this candidate follow that context".
/// Context and candidate tokens are mean-pooled separately and combined
/// through an interaction MLP; the output head starts at zero, so an
/// untrained scorer answers 0.5 everywhere.
class NspScorer {
 public:
  NspScorer() = default;
  NspScorer(Vocab vocab, NspConfig config, ParamMap tensors);
  NspScorer(const NspScorer& other)
      : vocab_(other.vocab_),
        config_(other.config_),
        tensors_(other.tensors_),
        truncations_(other.truncations_.load()) {}
  NspScorer(NspScorer&& other) noexcept
      : vocab_(std::move(other.vocab_)),
        config_(other.config_),
        tensors_(std::move(other.tensors_)),
        truncations_(other.truncations_.load()) {}
  NspScorer& operator=(const NspScorer& other) {
    if (this != &other) {
      vocab_ = other.vocab_;
      config_ = other.config_;
      tensors_ = other.tensors_;
      truncations_ = other.truncations_.load();
    }
    return *this;
  }
  NspScorer& operator=(NspScorer&& other) noexcept {
    vocab_ = std::move(other.vocab_);
    config_ = other.config_;
    tensors_ = std::move(other.tensors_);
    truncations_ = other.truncations_.load();
    return *this;
  }

  double score(const std::vector<std::string>& context, const std::string& candidate) const;
  long truncations() const { return truncations_.load(); }

  const Vocab& vocab() const { return vocab_; }
  const NspConfig& config() const { return config_; }
  const ParamMap& tensors() const { return tensors_; }

  static NspScorer zero_initialized(const Vocab& vocab, const NspConfig& config);

  void save(const std::string& path) const;
  static NspScorer load(const std::string& path);

 private:
  friend NspScorer train_nsp_scorer(const std::vector<DialogueRecord>&, const NspConfig&,
                                    NspHistory*);
  Vocab vocab_;
  NspConfig config_;
  ParamMap tensors_;
  mutable std::atomic<long> truncations_{0};
};

// Trains on true (context -> response) pairs plus an equal number of
// negatives drawn from other records. Throws DataError when the corpus
// cannot supply negatives (all responses identical).
NspScorer train_nsp_scorer(const std::vector<DialogueRecord>& dialogues, const NspConfig& config,
                           NspHistory* history = nullptr);

// ---- CRA ----

struct CraConfig {
  int k = 50;
  double min_nsp_confidence = 0.5;
  const ResponseEncoder* encoder = nullptr;
  const NspScorer* scorer = nullptr;
};

// Embeds the unlabeled response, retrieves the top-k labeled candidates,
// reranks them by NSP confidence against the unlabeled context, and transfers
// the winning candidate's response and label. Returns nothing when the best
// confidence stays below the threshold.
std::optional<DialogueRecord> cra_augment(const DialogueRecord& unlabeled,
                                          const ResponseIndex& index, const CraConfig& cfg);

}  // namespace sarc
