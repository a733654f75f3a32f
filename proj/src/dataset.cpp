#include "sarc/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>

namespace sarc {

namespace {

using nlohmann::json;

std::string line_ref(const std::string& origin, size_t line_no) {
  return origin + ":" + std::to_string(line_no);
}

DialogueRecord record_from_json(const json& j, bool labeled, const std::string& where) {
  DialogueRecord rec;
  if (!j.is_object()) throw DataError(where + ": expected a JSON object");

  if (j.contains("id")) {
    if (j.at("id").is_string()) {
      rec.id = j.at("id").get<std::string>();
    } else if (j.at("id").is_number_integer()) {
      rec.id = std::to_string(j.at("id").get<int64_t>());
    } else {
      throw DataError(where + ": field 'id' must be a string");
    }
  }

  if (!j.contains("response")) throw DataError(where + ": missing required field 'response'");
  if (!j.at("response").is_string()) throw DataError(where + ": field 'response' must be a string");
  rec.response = j.at("response").get<std::string>();
  if (rec.response.empty()) throw DataError(where + ": field 'response' must be non-empty");

  if (!j.contains("context")) throw DataError(where + ": missing required field 'context'");
  if (!j.at("context").is_array()) {
    throw DataError(where + ": field 'context' must be an array of strings");
  }
  for (const auto& turn : j.at("context")) {
    if (!turn.is_string()) throw DataError(where + ": field 'context' must contain only strings");
    rec.context.push_back(turn.get<std::string>());
  }

  if (j.contains("label") && !j.at("label").is_null()) {
    if (!j.at("label").is_string()) throw DataError(where + ": field 'label' must be a string");
    rec.label = parse_label(j.at("label").get<std::string>());
  } else if (labeled) {
    throw DataError(where + ": missing required field 'label'");
  }

  if (j.contains("provenance") && !j.at("provenance").is_null()) {
    const auto& pj = j.at("provenance");
    Provenance prov;
    prov.source_id = pj.value("source_id", "");
    prov.method = pj.value("method", "");
    if (pj.contains("cosine") && !pj.at("cosine").is_null()) {
      prov.cosine = pj.at("cosine").get<double>();
    }
    if (pj.contains("nsp_confidence") && !pj.at("nsp_confidence").is_null()) {
      prov.nsp_confidence = pj.at("nsp_confidence").get<double>();
    }
    rec.provenance = std::move(prov);
  }

  if (rec.context.empty() && !rec.provenance.has_value()) {
    throw DataError(where + ": raw records must have a non-empty context");
  }
  return rec;
}

}  // namespace

std::string to_string(Label label) {
  return label == Label::Sarcasm ? "SARCASM" : "NOT_SARCASM";
}

Label parse_label(const std::string& s) {
  if (s == "SARCASM") return Label::Sarcasm;
  if (s == "NOT_SARCASM") return Label::NotSarcasm;
  throw DataError("unknown label string: '" + s + "'");
}

std::vector<DialogueRecord> parse_jsonl_text(const std::string& text, bool labeled,
                                             const std::string& origin) {
  std::vector<DialogueRecord> records;
  std::istringstream is(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(line_ref(origin, line_no) + ": invalid JSON: " + e.what());
    }
    DialogueRecord rec = record_from_json(j, labeled, line_ref(origin, line_no));
    if (rec.id.empty()) rec.id = std::to_string(line_no);
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<DialogueRecord> parse_jsonl(const std::string& path, bool labeled) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path);
  std::ostringstream buffer;
  buffer << is.rdbuf();
  return parse_jsonl_text(buffer.str(), labeled, path);
}

std::string record_to_json(const DialogueRecord& record) {
  json j;
  if (record.label.has_value()) j["label"] = to_string(*record.label);
  j["response"] = record.response;
  j["context"] = record.context;
  j["id"] = record.id;
  if (record.provenance.has_value()) {
    const Provenance& p = *record.provenance;
    json pj{{"source_id", p.source_id}, {"method", p.method}};
    pj["cosine"] = p.cosine.has_value() ? json(*p.cosine) : json(nullptr);
    pj["nsp_confidence"] = p.nsp_confidence.has_value() ? json(*p.nsp_confidence) : json(nullptr);
    j["provenance"] = std::move(pj);
  }
  return j.dump();
}

void write_jsonl(const std::string& path, const std::vector<DialogueRecord>& records) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path + " for writing");
  for (const auto& rec : records) os << record_to_json(rec) << "\n";
  if (!os) throw DataError("write failed for " + path);
}

std::pair<std::vector<DialogueRecord>, std::vector<DialogueRecord>> split(
    const std::vector<DialogueRecord>& records, const SplitSpec& spec) {
  if (records.size() < 2) throw DataError("split needs at least 2 records");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw DataError("train_fraction must be in (0, 1)");
  }

  auto partition = [&](const std::vector<size_t>& indices, std::mt19937_64& rng,
                       std::vector<size_t>& train_idx, std::vector<size_t>& valid_idx) {
    std::vector<size_t> shuffled = indices;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    size_t n_train = static_cast<size_t>(
        std::llround(spec.train_fraction * static_cast<double>(shuffled.size())));
    n_train = std::min(std::max<size_t>(n_train, 1), shuffled.size() - 1);
    train_idx.insert(train_idx.end(), shuffled.begin(), shuffled.begin() + n_train);
    valid_idx.insert(valid_idx.end(), shuffled.begin() + n_train, shuffled.end());
  };

  std::mt19937_64 rng(spec.seed);
  std::vector<size_t> train_idx, valid_idx;
  if (spec.stratify) {
    std::vector<size_t> pos, neg, unlabeled;
    for (size_t i = 0; i < records.size(); ++i) {
      if (!records[i].label.has_value()) {
        unlabeled.push_back(i);
      } else if (*records[i].label == Label::Sarcasm) {
        pos.push_back(i);
      } else {
        neg.push_back(i);
      }
    }
    for (const auto* group : {&pos, &neg, &unlabeled}) {
      if (group->size() >= 2) {
        partition(*group, rng, train_idx, valid_idx);
      } else {
        train_idx.insert(train_idx.end(), group->begin(), group->end());
      }
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(valid_idx.begin(), valid_idx.end());
  } else {
    std::vector<size_t> all(records.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = i;
    partition(all, rng, train_idx, valid_idx);
  }

  std::pair<std::vector<DialogueRecord>, std::vector<DialogueRecord>> out;
  out.first.reserve(train_idx.size());
  out.second.reserve(valid_idx.size());
  for (size_t i : train_idx) out.first.push_back(records[i]);
  for (size_t i : valid_idx) out.second.push_back(records[i]);
  return out;
}

std::vector<ContextWindowView> context_windows(const DialogueRecord& record,
                                               const std::vector<int>& sizes) {
  if (sizes.empty()) throw DataError("context_windows: sizes must be non-empty");
  const int n = static_cast<int>(record.context.size());

  std::vector<int> ordered = sizes;
  // kFullContext sorts last so explicit sizes claim their windows first
  std::sort(ordered.begin(), ordered.end(), [](int a, int b) {
    const long ea = a == kFullContext ? std::numeric_limits<long>::max() : a;
    const long eb = b == kFullContext ? std::numeric_limits<long>::max() : b;
    return ea < eb;
  });
  ordered.erase(std::unique(ordered.begin(), ordered.end()), ordered.end());

  std::vector<ContextWindowView> views;
  std::vector<int> seen_effective;
  for (int w : ordered) {
    if (w < 0 && w != kFullContext) throw DataError("context window sizes must be >= 0");
    const int effective = w == kFullContext ? n : std::min(w, n);
    if (std::find(seen_effective.begin(), seen_effective.end(), effective) !=
        seen_effective.end()) {
      continue;
    }
    seen_effective.push_back(effective);
    ContextWindowView view;
    view.source_id = record.id;
    view.window_size = w;
    view.turns.assign(record.context.end() - effective, record.context.end());
    view.response = record.response;
    view.label = record.label;
    views.push_back(std::move(view));
  }
  return views;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string lowered = text;
  std::transform(lowered.begin(), lowered.end(), lowered.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });

  std::istringstream is(lowered);
  std::string word;
  while (is >> word) {
    // Mentions, hashtags, and URL placeholders carry signal; keep them whole.
    if (word[0] == '@' || word[0] == '#' || word[0] == '<' ||
        word.find("://") != std::string::npos || word.rfind("http", 0) == 0) {
      tokens.push_back(word);
      continue;
    }
    std::string current;
    for (char ch : word) {
      const auto uc = static_cast<unsigned char>(ch);
      if (std::isalnum(uc) || ch == '\'' || uc >= 0x80) {
        current.push_back(ch);
      } else if (!current.empty()) {
        tokens.push_back(current);
        current.clear();
      }
    }
    if (!current.empty()) tokens.push_back(current);
  }
  return tokens;
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  Vocab v;
  v.id_to_token = std::move(tokens);
  for (size_t i = 0; i < v.id_to_token.size(); ++i) {
    v.token_to_id.emplace(v.id_to_token[i], static_cast<int>(i));
  }
  return v;
}

Vocab build_vocab(const std::vector<DialogueRecord>& records, int min_freq) {
  if (min_freq < 1) throw DataError("build_vocab: min_freq must be >= 1");
  std::map<std::string, long> counts;
  for (const auto& rec : records) {
    for (const auto& turn : rec.context) {
      for (auto& tok : tokenize(turn)) ++counts[tok];
    }
    for (auto& tok : tokenize(rec.response)) ++counts[tok];
  }

  std::vector<std::pair<std::string, long>> kept;
  for (const auto& [tok, count] : counts) {
    if (count >= min_freq) kept.emplace_back(tok, count);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  std::vector<std::string> tokens = {"<pad>", "<unk>", "<cls>", "<sep>"};
  for (auto& [tok, count] : kept) tokens.push_back(tok);
  return Vocab::from_tokens(std::move(tokens));
}

std::vector<int> assemble_ids(const std::vector<std::string>& turns, const std::string& response,
                              const Vocab& vocab, int max_seq_len) {
  std::vector<int> ids;
  ids.push_back(Vocab::kCls);
  for (const auto& turn : turns) {
    for (const auto& tok : tokenize(turn)) ids.push_back(vocab.id(tok));
    ids.push_back(Vocab::kSep);
  }
  for (const auto& tok : tokenize(response)) ids.push_back(vocab.id(tok));
  ids.push_back(Vocab::kSep);

  while (static_cast<int>(ids.size()) > max_seq_len && ids.size() > 1) {
    ids.erase(ids.begin() + 1);
  }
  return ids;
}

}  // namespace sarc
