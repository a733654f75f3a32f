#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace sarc {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Label { NotSarcasm = 0, Sarcasm = 1 };

std::string to_string(Label label);
Label parse_label(const std::string& s);  // throws DataError on unknown strings

struct Provenance {
  std::string source_id;
  std::string method;  // context_negative | back_translation | cra
  std::optional<double> cosine;
  std::optional<double> nsp_confidence;
};

/// One conversation: ordered context turns (oldest first), the response, and
/// an optional label. Augmented records carry provenance.
struct DialogueRecord {
  std::string id;
  std::vector<std::string> context;
  std::string response;
  std::optional<Label> label;
  std::optional<Provenance> provenance;
};

// Strict, atomic JSONL parse: any malformed line fails the whole call with a
// message naming the line. Ids are synthesized from line numbers when absent.
std::vector<DialogueRecord> parse_jsonl(const std::string& path, bool labeled);
std::vector<DialogueRecord> parse_jsonl_text(const std::string& text, bool labeled,
                                             const std::string& origin);

std::string record_to_json(const DialogueRecord& record);
void write_jsonl(const std::string& path, const std::vector<DialogueRecord>& records);

struct SplitSpec {
  double train_fraction = 0.8;
  uint64_t seed = 0;
  bool stratify = false;
};

// Seeded shuffle then partition; |train| = round(fraction * total).
std::pair<std::vector<DialogueRecord>, std::vector<DialogueRecord>> split(
    const std::vector<DialogueRecord>& records, const SplitSpec& spec);

// Window size sentinel: full context regardless of length.
inline constexpr int kFullContext = -1;

struct ContextWindowView {
  std::string source_id;
  int window_size = 0;
  std::vector<std::string> turns;
  std::string response;
  std::optional<Label> label;
};

// One view per requested size using the min(w, n) most recent turns; views
// that collapse to the same effective window are deduplicated (the smallest
// requesting size wins). Sizes must be >= 0 or kFullContext.
std::vector<ContextWindowView> context_windows(const DialogueRecord& record,
                                               const std::vector<int>& sizes);

struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;

  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int> token_to_id;

  int id(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnk : it->second;
  }
  int size() const { return static_cast<int>(id_to_token.size()); }

  static Vocab from_tokens(std::vector<std::string> tokens);
};

// Lowercased word tokens; @-mentions, #hashtags, and URL-ish tokens are kept
// whole, everything else splits on punctuation.
std::vector<std::string> tokenize(const std::string& text);

Vocab build_vocab(const std::vector<DialogueRecord>& records, int min_freq);

// Classifier input: CLS, each turn oldest-first followed by SEP, response,
// SEP. Over-length sequences are trimmed from the oldest end (right after
// CLS) so the response survives as long as possible.
std::vector<int> assemble_ids(const std::vector<std::string>& turns, const std::string& response,
                              const Vocab& vocab, int max_seq_len);

}  // namespace sarc
