#include "crossenc/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "crossenc/errors.hpp"
#include "crossenc/retrieval.hpp"

namespace crossenc {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'X', 'E', 'N', 'C'};
constexpr uint32_t kVersion = 1;

void write_tensor(std::ofstream& out, const Tensor& t) {
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

void read_tensor(std::ifstream& in, Tensor& t, const std::string& what) {
  in.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (!in) throw DataError("checkpoint: truncated while reading " + what);
}

json tensor_manifest(const Var& p) {
  return json{{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}};
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const Vocab& vocab,
                     const std::vector<Var>& extra_params, const Adam* opt,
                     const TrainState* train) {
  std::vector<Var> params = model.param_list();

  json manifest;
  manifest["config"] = json::parse(config_to_json(model.cfg));
  manifest["vocab"] = vocab.words();
  manifest["fingerprint"] = model_fingerprint(model);
  json plist = json::array(), elist = json::array();
  for (const auto& p : params) plist.push_back(tensor_manifest(p));
  for (const auto& p : extra_params) elist.push_back(tensor_manifest(p));
  manifest["params"] = plist;
  manifest["extra_params"] = elist;

  const bool has_adam = opt && !opt->state().m.empty();
  manifest["adam"] = has_adam;
  if (has_adam) {
    if (opt->state().m.size() != params.size() + extra_params.size())
      throw NumericsError("checkpoint: optimizer tracks " + std::to_string(opt->state().m.size()) +
                          " tensors but model has " +
                          std::to_string(params.size() + extra_params.size()));
    manifest["adam_step"] = opt->state().step;
  }
  if (train) {
    manifest["step"] = train->step;
    manifest["data_rng"] = train->data_rng;
    manifest["dropout_rng"] = train->dropout_rng;
  }

  const std::string text = manifest.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot open " + path + " for writing");
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
  const uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(len));

  for (const auto& p : params) write_tensor(out, p->value);
  for (const auto& p : extra_params) write_tensor(out, p->value);
  if (has_adam) {
    for (const auto& m : opt->state().m) write_tensor(out, m);
    for (const auto& v : opt->state().v) write_tensor(out, v);
  }
  if (!out) throw DataError("checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path);

  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("checkpoint: " + path + " is not a checkpoint file");
  uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != kVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in) throw DataError("checkpoint: truncated header");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("checkpoint: truncated manifest");

  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: bad manifest: ") + e.what());
  }

  LoadedCheckpoint out;
  const ModelConfig cfg = config_from_json(manifest.at("config").dump());
  Rng scratch(cfg.seed);  // structure only; values are overwritten below
  out.model = Model::init(cfg, scratch);

  out.vocab = Vocab{};
  {
    // Rebuild through a temp file-free path: vocabulary is a plain word list.
    std::vector<std::string> words = manifest.at("vocab").get<std::vector<std::string>>();
    out.vocab = Vocab::from_words(std::move(words), cfg.n_special);
  }

  std::vector<Var> params = out.model.param_list();
  const json& plist = manifest.at("params");
  if (plist.size() != params.size())
    throw DataError("checkpoint: manifest lists " + std::to_string(plist.size()) +
                    " parameters, model has " + std::to_string(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    const json& m = plist[i];
    if (m.at("name").get<std::string>() != params[i]->name)
      throw DataError("checkpoint: parameter order mismatch at '" + params[i]->name + "'");
    if (m.at("rows").get<int>() != params[i]->value.rows() ||
        m.at("cols").get<int>() != params[i]->value.cols())
      throw DataError("checkpoint: shape mismatch for '" + params[i]->name + "'");
    read_tensor(in, params[i]->value, params[i]->name);
  }
  for (const json& m : manifest.at("extra_params")) {
    Tensor t(m.at("rows").get<int>(), m.at("cols").get<int>());
    read_tensor(in, t, m.at("name").get<std::string>());
    out.extra_params.push_back(make_param(std::move(t), m.at("name").get<std::string>()));
  }

  out.has_adam = manifest.value("adam", false);
  if (out.has_adam) {
    const size_t count = params.size() + out.extra_params.size();
    out.adam.step = manifest.value("adam_step", int64_t{0});
    out.adam.m.resize(count);
    out.adam.v.resize(count);
    auto shape_of = [&](size_t i) -> const Tensor& {
      return i < params.size() ? params[i]->value
                               : out.extra_params[i - params.size()]->value;
    };
    for (size_t i = 0; i < count; ++i) {
      out.adam.m[i] = Tensor(shape_of(i).rows(), shape_of(i).cols());
      read_tensor(in, out.adam.m[i], "adam.m");
    }
    for (size_t i = 0; i < count; ++i) {
      out.adam.v[i] = Tensor(shape_of(i).rows(), shape_of(i).cols());
      read_tensor(in, out.adam.v[i], "adam.v");
    }
  }

  out.train.step = manifest.value("step", int64_t{0});
  out.train.data_rng = manifest.value("data_rng", "");
  out.train.dropout_rng = manifest.value("dropout_rng", "");

  const std::string expect = manifest.value("fingerprint", "");
  if (!expect.empty() && expect != model_fingerprint(out.model))
    throw DataError("checkpoint: parameter fingerprint mismatch (corrupt file?)");
  return out;
}

}  // namespace crossenc
