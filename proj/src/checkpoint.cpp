#include "dalign/checkpoint.hpp"

#include <map>

#include <nlohmann/json.hpp>

#include "dalign/binary_io.hpp"
#include "dalign/error.hpp"

namespace dalign {

namespace {

using json = nlohmann::ordered_json;

json config_to_json(const TrainConfig& c) {
  json j;
  j["lr"] = c.adam.lr;
  j["beta1"] = c.adam.beta1;
  j["beta2"] = c.adam.beta2;
  j["adam_eps"] = c.adam.eps;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["lambda"] = c.alignment.lambda;
  j["tau"] = c.alignment.tau;
  j["normalize_concepts"] = c.alignment.normalize_concepts;
  j["normalize_patches"] = c.alignment.normalize_patches;
  j["tie_head_to_prototypes"] = c.alignment.tie_head_to_prototypes;
  j["seed"] = c.seed;
  j["clip_norm"] = c.clip_norm;
  j["cosine_schedule"] = c.cosine_schedule;
  j["width"] = c.width;
  j["layers"] = c.layers;
  j["heads"] = c.heads;
  j["max_len"] = c.max_len;
  j["vocab_min_freq"] = c.vocab_min_freq;
  j["vocab_max_size"] = c.vocab_max_size;
  j["concept_min_freq"] = c.concept_min_freq;
  return j;
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.adam.lr = j.at("lr").get<double>();
  c.adam.beta1 = j.at("beta1").get<double>();
  c.adam.beta2 = j.at("beta2").get<double>();
  c.adam.eps = j.at("adam_eps").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.alignment.lambda = j.at("lambda").get<double>();
  c.alignment.tau = j.at("tau").get<double>();
  c.alignment.normalize_concepts = j.at("normalize_concepts").get<bool>();
  c.alignment.normalize_patches = j.at("normalize_patches").get<bool>();
  c.alignment.tie_head_to_prototypes = j.at("tie_head_to_prototypes").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.cosine_schedule = j.at("cosine_schedule").get<bool>();
  c.width = j.at("width").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.vocab_min_freq = j.at("vocab_min_freq").get<std::size_t>();
  c.vocab_max_size = j.at("vocab_max_size").get<std::size_t>();
  c.concept_min_freq = j.at("concept_min_freq").get<std::size_t>();
  return c;
}

void write_array(ByteWriter& w, const std::string& name, const Shape& shape,
                 std::span<const double> data) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.raw(name.data(), name.size());
  w.u32(static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) w.u64(d);
  for (double v : data) w.f64(v);
}

struct Array {
  Shape shape;
  std::vector<double> data;
};

void restore(std::map<std::string, Array>& arrays, const std::string& name, const Shape& shape,
             std::span<double> out) {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw FormatError("checkpoint: missing array " + name);
  if (it->second.shape != shape) {
    throw FormatError("checkpoint: array " + name + " has shape " + shape_str(it->second.shape) +
                      ", expected " + shape_str(shape));
  }
  std::copy(it->second.data.begin(), it->second.data.end(), out.begin());
  arrays.erase(it);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(Model& model) {
  json meta;
  meta["config"] = config_to_json(model.config);
  meta["out_dim"] = model.encoder.config().out_dim;
  meta["vocab"] = std::vector<std::string>(model.vocab.regular_tokens().begin(),
                                           model.vocab.regular_tokens().end());
  meta["concepts"] = model.concepts.names();
  meta["epoch"] = model.epoch;
  meta["step"] = model.step;
  meta["adam_steps"] = model.adam.steps();
  const std::string text = meta.dump();

  ByteWriter w;
  w.raw("DACK", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.raw(text.data(), text.size());
  auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(3 * params.size()));
  for (const auto& p : params) write_array(w, p.name, p.tensor.shape(), p.tensor.data());
  for (std::size_t i = 0; i < params.size(); ++i) {
    write_array(w, "adam.m." + params[i].name, params[i].tensor.shape(),
                model.adam.first_moments()[i]);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    write_array(w, "adam.v." + params[i].name, params[i].tensor.shape(),
                model.adam.second_moments()[i]);
  }
  return w.take();
}

Model decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.string(4) != "DACK") throw FormatError("checkpoint: bad magic at offset 0");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) +
                      " at offset 4");
  }
  const auto meta_len = r.u32();
  json meta;
  try {
    meta = json::parse(r.string(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad metadata: ") + e.what());
  }

  std::map<std::string, Array> arrays;
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto at = r.offset();
    const std::string name = r.string(r.u32());
    Array a;
    const auto rank = r.u32();
    if (rank > 8) throw FormatError("checkpoint: bad rank at offset " + std::to_string(at));
    for (std::uint32_t k = 0; k < rank; ++k) a.shape.push_back(r.u64());
    const auto n = shape_numel(a.shape);
    if (n > r.remaining() / 8) {
      throw FormatError("checkpoint: array " + name + " truncated at offset " + std::to_string(at));
    }
    a.data.resize(n);
    for (auto& v : a.data) v = r.f64();
    if (!arrays.emplace(name, std::move(a)).second) {
      throw FormatError("checkpoint: duplicate array " + name + " at offset " + std::to_string(at));
    }
  }
  if (!r.at_end()) {
    throw FormatError("checkpoint: trailing bytes at offset " + std::to_string(r.offset()));
  }

  try {
    Model model(config_from_json(meta.at("config")),
                Vocabulary(meta.at("vocab").get<std::vector<std::string>>()),
                ConceptVocabulary(meta.at("concepts").get<std::vector<std::string>>()),
                meta.at("out_dim").get<std::size_t>());
    model.epoch = meta.at("epoch").get<std::size_t>();
    model.step = meta.at("step").get<std::uint64_t>();
    model.adam.set_steps(meta.at("adam_steps").get<std::uint64_t>());
    auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& shape = params[i].tensor.shape();
      restore(arrays, params[i].name, shape, params[i].tensor.mutable_data());
      restore(arrays, "adam.m." + params[i].name, shape, model.adam.first_moments()[i]);
      restore(arrays, "adam.v." + params[i].name, shape, model.adam.second_moments()[i]);
    }
    if (!arrays.empty()) throw FormatError("checkpoint: unknown array " + arrays.begin()->first);
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad metadata: ") + e.what());
  }
}

void save_checkpoint(Model& model, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(model));
}

Model load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace dalign
