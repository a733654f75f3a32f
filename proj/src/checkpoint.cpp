#include "sarc/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace sarc {

namespace {

constexpr char kMagic[8] = {'S', 'A', 'R', 'C', 'C', 'K', 'P', 'T'};

template <typename T>
void write_pod(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw CheckpointError("checkpoint truncated");
  return value;
}

void write_string(std::ostream& os, const std::string& s) {
  write_pod<uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const uint64_t len = read_pod<uint64_t>(is);
  std::string s(len, '\0');
  is.read(s.data(), static_cast<std::streamsize>(len));
  if (!is) throw CheckpointError("checkpoint truncated");
  return s;
}

}  // namespace

void save_container(const std::string& path, const nlohmann::json& config,
                    const ParamMap& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(os, kCheckpointVersion);
  write_string(os, config.dump());
  write_pod<uint64_t>(os, tensors.size());
  for (const auto& [name, tensor] : tensors) {
    write_string(os, name);
    write_pod<uint32_t>(os, static_cast<uint32_t>(tensor.ndim()));
    for (Eigen::Index d : tensor.shape()) write_pod<uint64_t>(os, static_cast<uint64_t>(d));
    os.write(reinterpret_cast<const char*>(tensor.data()),
             static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(tensor.size())));
  }
  if (!os) throw CheckpointError("write failed for " + path);
}

std::pair<nlohmann::json, ParamMap> load_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path + " is not a checkpoint container");
  }
  const uint32_t version = read_pod<uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) +
                          " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  nlohmann::json config;
  try {
    config = nlohmann::json::parse(read_string(is));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint config blob is invalid JSON: ") + e.what());
  }
  const uint64_t count = read_pod<uint64_t>(is);
  ParamMap tensors;
  for (uint64_t i = 0; i < count; ++i) {
    std::string name = read_string(is);
    const uint32_t ndim = read_pod<uint32_t>(is);
    std::vector<Eigen::Index> shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<Eigen::Index>(read_pod<uint64_t>(is));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.size())));
    if (!is) throw CheckpointError("checkpoint truncated in tensor " + name);
    tensors.emplace(std::move(name), std::move(t));
  }
  return {std::move(config), std::move(tensors)};
}

nlohmann::json model_config_json(const ModelParams& p) {
  return nlohmann::json{
      {"kind", "model"},
      {"encoder",
       {{"num_layers", p.encoder.num_layers},
        {"hidden_dim", p.encoder.hidden_dim},
        {"num_heads", p.encoder.num_heads},
        {"ffn_dim", p.encoder.ffn_dim},
        {"max_seq_len", p.encoder.max_seq_len},
        {"vocab_size", p.encoder.vocab_size}}},
      {"bilstm",
       {{"num_layers", p.bilstm.num_layers},
        {"hidden_dim", p.bilstm.hidden_dim},
        {"dropout", p.bilstm.dropout}}},
      {"nextvlad",
       {{"groups", p.nextvlad.groups},
        {"expansion", p.nextvlad.expansion},
        {"num_clusters", p.nextvlad.num_clusters},
        {"output_dim", p.nextvlad.output_dim},
        {"input_dim", p.nextvlad.input_dim}}},
      {"pooling", to_string(p.pooling)},
      {"finetune_encoder", p.finetune_encoder},
      {"window_size", p.window_size},
      {"vocab", p.vocab_tokens}};
}

void model_config_from_json(const nlohmann::json& j, ModelParams& p) {
  const auto& enc = j.at("encoder");
  p.encoder.num_layers = enc.at("num_layers").get<int>();
  p.encoder.hidden_dim = enc.at("hidden_dim").get<int>();
  p.encoder.num_heads = enc.at("num_heads").get<int>();
  p.encoder.ffn_dim = enc.at("ffn_dim").get<int>();
  p.encoder.max_seq_len = enc.at("max_seq_len").get<int>();
  p.encoder.vocab_size = enc.at("vocab_size").get<int>();
  const auto& lstm = j.at("bilstm");
  p.bilstm.num_layers = lstm.at("num_layers").get<int>();
  p.bilstm.hidden_dim = lstm.at("hidden_dim").get<int>();
  p.bilstm.dropout = lstm.at("dropout").get<double>();
  const auto& vlad = j.at("nextvlad");
  p.nextvlad.groups = vlad.at("groups").get<int>();
  p.nextvlad.expansion = vlad.at("expansion").get<int>();
  p.nextvlad.num_clusters = vlad.at("num_clusters").get<int>();
  p.nextvlad.output_dim = vlad.at("output_dim").get<int>();
  p.nextvlad.input_dim = vlad.at("input_dim").get<int>();
  p.pooling = parse_pooling(j.at("pooling").get<std::string>());
  p.finetune_encoder = j.at("finetune_encoder").get<bool>();
  p.window_size = j.at("window_size").get<int>();
  p.vocab_tokens = j.at("vocab").get<std::vector<std::string>>();
}

void save_checkpoint(const std::string& path, const ModelParams& params) {
  save_container(path, model_config_json(params), params.tensors);
}

ModelParams load_checkpoint(const std::string& path) {
  auto [config, tensors] = load_container(path);
  if (config.value("kind", "") != "model") {
    throw CheckpointError(path + " does not contain a model checkpoint");
  }
  ModelParams p;
  try {
    model_config_from_json(config, p);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint config: ") + e.what());
  }
  p.tensors = std::move(tensors);
  validate_configs(p.encoder, p.bilstm, p.nextvlad, p.pooling);
  return p;
}

void save_embeddings(const std::string& path, const std::map<std::string, Mat>& embeddings) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw CheckpointError("cannot open " + path + " for writing");
  for (const auto& [id, m] : embeddings) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      rows.push_back(std::move(row));
    }
    os << nlohmann::json{{"id", id}, {"embedding", std::move(rows)}}.dump() << "\n";
  }
}

std::map<std::string, Mat> load_embeddings(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw CheckpointError("cannot open " + path);
  std::map<std::string, Mat> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(path + ":" + std::to_string(line_no) + ": invalid JSON: " + e.what());
    }
    const auto id = j.at("id").get<std::string>();
    const auto& rows = j.at("embedding");
    if (!rows.is_array() || rows.empty()) {
      throw CheckpointError(path + ":" + std::to_string(line_no) + ": embedding must be a non-empty matrix");
    }
    const Eigen::Index r = static_cast<Eigen::Index>(rows.size());
    const Eigen::Index c = static_cast<Eigen::Index>(rows[0].size());
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
      if (static_cast<Eigen::Index>(rows[i].size()) != c) {
        throw CheckpointError(path + ":" + std::to_string(line_no) + ": ragged embedding rows");
      }
      for (Eigen::Index k = 0; k < c; ++k) m(i, k) = rows[i][k].get<double>();
    }
    out[id] = std::move(m);
  }
  return out;
}

}  // namespace sarc
