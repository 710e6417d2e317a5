#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "qilcm/errors.hpp"
#include "qilcm/train.hpp"

namespace qilcm::train {

using diff::Tensor;
using json = nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

json config_to_json(const model::ModelConfig& c) {
  return json{{"d1", c.d1},
              {"d2", c.d2},
              {"att_hidden", c.att_hidden},
              {"rank_hidden", c.rank_hidden},
              {"eps", c.eps},
              {"pooling", c.pooling == model::Pooling::attention ? "attention"
                                                                 : "mean"},
              {"qn_enabled", c.qn_enabled},
              {"lambda_conf", c.lambda_conf}};
}

model::ModelConfig config_from_json(const json& j) {
  model::ModelConfig c;
  c.d1 = j.at("d1").get<std::size_t>();
  c.d2 = j.at("d2").get<std::size_t>();
  c.att_hidden = j.at("att_hidden").get<std::vector<std::size_t>>();
  c.rank_hidden = j.at("rank_hidden").get<std::vector<std::size_t>>();
  c.eps = j.at("eps").get<double>();
  const std::string pooling = j.at("pooling").get<std::string>();
  if (pooling == "attention") {
    c.pooling = model::Pooling::attention;
  } else if (pooling == "mean") {
    c.pooling = model::Pooling::mean;
  } else {
    throw ParseError("unknown pooling \"" + pooling + "\" in checkpoint");
  }
  c.qn_enabled = j.at("qn_enabled").get<bool>();
  c.lambda_conf = j.at("lambda_conf").get<double>();
  c.validate();
  return c;
}

json tensor_to_json(const Tensor& t) {
  return json{{"shape", t.shape()},
              {"values", std::vector<double>(t.values().begin(),
                                             t.values().end())}};
}

Tensor tensor_from_json(const json& j) {
  return Tensor(j.at("shape").get<std::vector<std::size_t>>(),
                j.at("values").get<std::vector<double>>());
}

}  // namespace

std::string checkpoint_to_json(const model::ModelBundle& bundle) {
  json j;
  j["format_version"] = kFormatVersion;
  j["config"] = config_to_json(bundle.config);
  j["schema"] = json::parse(data::schema_to_json(bundle.schema));
  if (bundle.normalizer) {
    j["normalizer"] = json{{"columns", bundle.normalizer->columns},
                           {"min", bundle.normalizer->min},
                           {"max", bundle.normalizer->max}};
  } else {
    j["normalizer"] = nullptr;
  }
  json params = json::object();
  for (const auto& [name, t] : bundle.params.named()) {
    params[name] = tensor_to_json(*t);
  }
  j["params"] = std::move(params);
  return j.dump(2);
}

model::ModelBundle checkpoint_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint JSON: ") + e.what());
  }
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kFormatVersion) {
      throw IncompatibleError("checkpoint format_version " +
                              std::to_string(version) + " is not supported (" +
                              "expected " + std::to_string(kFormatVersion) +
                              ")");
    }
    model::ModelBundle bundle;
    bundle.config = config_from_json(j.at("config"));
    bundle.schema = data::schema_from_json_text(j.at("schema").dump());
    if (!j.at("normalizer").is_null()) {
      const json& n = j.at("normalizer");
      data::Normalizer norm;
      norm.columns = n.at("columns").get<std::vector<std::size_t>>();
      norm.min = n.at("min").get<std::vector<double>>();
      norm.max = n.at("max").get<std::vector<double>>();
      bundle.normalizer = std::move(norm);
    }

    // Rebuild the parameter struct from (schema, config), then fill each
    // tensor by name so that shapes get cross-checked.
    bundle.params = model::init_params(bundle.schema, bundle.config, 0);
    const json& params = j.at("params");
    auto named = bundle.params.named_mutable();
    if (params.size() != named.size()) {
      throw IncompatibleError("checkpoint carries " +
                              std::to_string(params.size()) +
                              " parameter tensors, model expects " +
                              std::to_string(named.size()));
    }
    for (auto& [name, t] : named) {
      if (!params.contains(name)) {
        throw IncompatibleError("checkpoint is missing parameter '" + name +
                                "'");
      }
      *t = tensor_from_json(params.at(name));
    }
    model::validate_params(bundle.params, bundle.schema, bundle.config);
    return bundle;
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint JSON: ") + e.what());
  }
}

void save_checkpoint(const std::string& path,
                     const model::ModelBundle& bundle) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out << checkpoint_to_json(bundle) << "\n";
}

model::ModelBundle load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_json_text(buf.str());
}

}  // namespace qilcm::train
