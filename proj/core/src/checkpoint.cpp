#include "kiwiqe/checkpoint.hpp"

#include <fstream>

#include "kiwiqe/errors.hpp"

namespace kiwiqe {
namespace {

constexpr const char* kFormat = "kiwiqe-checkpoint";

template <typename T>
T get(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ParseError("checkpoint", 0, std::string("missing key '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint", 0, std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {
      {"encoder",
       {{"num_layers", c.encoder.num_layers},
        {"num_heads", c.encoder.num_heads},
        {"model_dim", c.encoder.model_dim},
        {"ffn_dim", c.encoder.ffn_dim},
        {"vocab_size", c.encoder.vocab_size},
        {"max_positions", c.encoder.max_positions},
        {"seed", c.encoder.seed}}},
      {"tokenizer",
       {{"max_piece_chars", c.tokenizer.max_piece_chars},
        {"use_lp_prefix", c.tokenizer.use_lp_prefix},
        {"use_reference", c.tokenizer.use_reference}}},
      {"mix", std::string(to_string(c.mix))},
      {"transform", std::string(to_string(c.transform))},
      {"bad_threshold", c.bad_threshold},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  const auto enc = get<nlohmann::json>(j, "encoder");
  c.encoder.num_layers = get<int>(enc, "num_layers");
  c.encoder.num_heads = get<int>(enc, "num_heads");
  c.encoder.model_dim = get<int>(enc, "model_dim");
  c.encoder.ffn_dim = get<int>(enc, "ffn_dim");
  c.encoder.vocab_size = get<int>(enc, "vocab_size");
  c.encoder.max_positions = get<int>(enc, "max_positions");
  c.encoder.seed = get<std::uint64_t>(enc, "seed");
  const auto tok = get<nlohmann::json>(j, "tokenizer");
  c.tokenizer.max_piece_chars = get<std::size_t>(tok, "max_piece_chars");
  c.tokenizer.use_lp_prefix = get<bool>(tok, "use_lp_prefix");
  c.tokenizer.use_reference = get<bool>(tok, "use_reference");
  c.mix = parse_mix_mode(get<std::string>(j, "mix"));
  c.transform = parse_simplex_transform(get<std::string>(j, "transform"));
  c.bad_threshold = get<double>(j, "bad_threshold");
  return c;
}

nlohmann::json loss_config_to_json(const LossConfig& c) {
  return {{"lambda_sent", c.lambda_sent},
          {"lambda_word", c.lambda_word},
          {"class_weights", {c.class_weights[0], c.class_weights[1]}}};
}

LossConfig loss_config_from_json(const nlohmann::json& j) {
  LossConfig c;
  c.lambda_sent = get<double>(j, "lambda_sent");
  c.lambda_word = get<double>(j, "lambda_word");
  const auto w = get<std::vector<double>>(j, "class_weights");
  if (w.size() != 2) throw ParseError("checkpoint", 0, "class_weights must have two entries");
  c.class_weights = {w[0], w[1]};
  c.validate();
  return c;
}

nlohmann::json checkpoint_to_json(const QeModel& model, const LossConfig& loss) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, t] : model.params()) {
    params[name] = {{"shape", t.shape()}, {"data", t.values()}};
  }
  return {{"format", kFormat},
          {"version", kCheckpointVersion},
          {"model", model_config_to_json(model.config())},
          {"loss", loss_config_to_json(loss)},
          {"vocab", model.vocab().pieces()},
          {"params", std::move(params)}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != kFormat) {
    throw ParseError("checkpoint", 0, "not a kiwiqe checkpoint");
  }
  if (get<int>(j, "version") != kCheckpointVersion) {
    throw ParseError("checkpoint", 0, "unsupported checkpoint version");
  }
  Checkpoint ck;
  ck.config = model_config_from_json(get<nlohmann::json>(j, "model"));
  ck.loss = loss_config_from_json(get<nlohmann::json>(j, "loss"));
  const auto pieces = get<std::vector<std::string>>(j, "vocab");
  ck.vocab = Vocabulary::from_pieces(pieces);
  const auto params = get<nlohmann::json>(j, "params");
  for (const auto& [name, entry] : params.items()) {
    auto shape = get<Shape>(entry, "shape");
    auto data = get<std::vector<double>>(entry, "data");
    if (shape_size(shape) != data.size()) {
      throw ParseError("checkpoint", 0, "parameter " + name + " has inconsistent shape");
    }
    ck.params.set(name, Tensor::checked(std::move(shape), std::move(data)));
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const QeModel& model, const LossConfig& loss) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << checkpoint_to_json(model, loss).dump() << '\n';
  if (!out) throw Error("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string(), 0, e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace kiwiqe
