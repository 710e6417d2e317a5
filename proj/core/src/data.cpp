#include "qilcm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "qilcm/errors.hpp"
#include "qilcm/rng.hpp"

namespace qilcm::data {

using json = nlohmann::json;

bool FeatureSchema::is_categorical(std::size_t col) const {
  for (const auto& c : categorical) {
    if (c.index == col) return true;
  }
  return false;
}

std::vector<std::size_t> FeatureSchema::numeric_columns() const {
  std::vector<std::size_t> cols;
  cols.reserve(n_numeric + (has_initial_order ? 1 : 0));
  for (std::size_t c = 0; c < raw_columns(); ++c) {
    if (!is_categorical(c)) cols.push_back(c);
  }
  if (has_initial_order) cols.push_back(raw_columns());
  return cols;
}

std::size_t FeatureSchema::embedding_dim(std::size_t cat) const {
  const CategoricalSpec& spec = categorical.at(cat);
  if (spec.dim > 0) return spec.dim;
  return std::min<std::size_t>(16, (spec.cardinality + 1) / 2);
}

void FeatureSchema::validate() const {
  std::vector<std::size_t> seen;
  for (const auto& c : categorical) {
    if (c.index >= raw_columns()) {
      throw SchemaError("categorical column index " + std::to_string(c.index) +
                        " outside the " + std::to_string(raw_columns()) +
                        " raw columns");
    }
    if (std::find(seen.begin(), seen.end(), c.index) != seen.end()) {
      throw SchemaError("duplicate categorical column index " +
                        std::to_string(c.index));
    }
    seen.push_back(c.index);
    if (c.cardinality < 2) {
      throw SchemaError("categorical column " + std::to_string(c.index) +
                        " needs cardinality >= 2");
    }
  }
}

FeatureSchema numeric_schema(std::size_t n_features) {
  FeatureSchema s;
  s.n_numeric = n_features;
  return s;
}

bool QueryGroup::all_labels_zero() const {
  return std::all_of(labels.begin(), labels.end(),
                     [](int y) { return y == 0; });
}

std::size_t Dataset::n_items() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.n_items;
  return n;
}

namespace {

[[noreturn]] void bad_token(const std::string& token, std::size_t line_number) {
  throw ParseError("line " + std::to_string(line_number) +
                   ": malformed token \"" + token + "\"");
}

bool parse_int(const std::string& tok, long long& out) {
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last;
}

bool parse_double(const std::string& tok, double& out) {
  if (tok.empty()) return false;
  char* end = nullptr;
  out = std::strtod(tok.c_str(), &end);
  return end == tok.c_str() + tok.size() && std::isfinite(out);
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> tokens;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) tokens.push_back(std::move(tok));
  return tokens;
}

}  // namespace

ParsedLine parse_letor_line(const std::string& line, std::size_t line_number) {
  std::vector<std::string> tokens = split_ws(line);
  // strip trailing comment
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i][0] == '#') {
      tokens.resize(i);
      break;
    }
  }
  if (tokens.size() < 2) {
    throw ParseError("line " + std::to_string(line_number) +
                     ": expected `<label> qid:<id> ...`");
  }
  ParsedLine out;
  long long label = 0;
  if (!parse_int(tokens[0], label) || label < 0) bad_token(tokens[0], line_number);
  out.label = static_cast<int>(label);
  if (tokens[1].rfind("qid:", 0) != 0) bad_token(tokens[1], line_number);
  long long qid = 0;
  if (!parse_int(tokens[1].substr(4), qid)) bad_token(tokens[1], line_number);
  out.qid = qid;
  for (std::size_t i = 2; i < tokens.size(); ++i) {
    const std::string& tok = tokens[i];
    const std::size_t colon = tok.find(':');
    if (colon == std::string::npos) bad_token(tok, line_number);
    long long fid = 0;
    double val = 0.0;
    if (!parse_int(tok.substr(0, colon), fid) || fid < 1 ||
        !parse_double(tok.substr(colon + 1), val)) {
      bad_token(tok, line_number);
    }
    out.features.emplace_back(static_cast<std::size_t>(fid), val);
  }
  return out;
}

Dataset load_dataset(const std::string& path, const FeatureSchema& schema) {
  schema.validate();
  if (schema.has_initial_order) {
    throw SchemaError("load_dataset expects a schema without the initial "
                      "order feature; it is appended by attach_initial_order");
  }
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);

  const std::size_t n_cols = schema.raw_columns();
  struct Builder {
    QueryGroup group;
  };
  std::vector<Builder> builders;
  std::unordered_map<std::int64_t, std::size_t> by_qid;

  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    ParsedLine parsed = parse_letor_line(line, line_number);
    auto [it, inserted] = by_qid.emplace(parsed.qid, builders.size());
    if (inserted) {
      builders.emplace_back();
      builders.back().group.qid = parsed.qid;
      builders.back().group.n_features = n_cols;
    }
    QueryGroup& g = builders[it->second].group;
    std::vector<double> row(n_cols, 0.0);
    for (const auto& [fid, val] : parsed.features) {
      if (fid > n_cols) {
        throw SchemaError("line " + std::to_string(line_number) +
                          ": feature id " + std::to_string(fid) +
                          " exceeds the schema's " + std::to_string(n_cols) +
                          " columns");
      }
      row[fid - 1] = val;
    }
    g.features.insert(g.features.end(), row.begin(), row.end());
    g.labels.push_back(parsed.label);
    g.source_lines.push_back(line_number - 1);
    ++g.n_items;
  }
  if (builders.empty()) throw DataError("empty dataset: " + path);

  Dataset ds;
  ds.schema = schema;
  ds.groups.reserve(builders.size());
  for (auto& b : builders) ds.groups.push_back(std::move(b.group));
  return ds;
}

std::size_t scan_max_feature_id(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);
  std::size_t max_fid = 0;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    for (const auto& [fid, val] : parse_letor_line(line, line_number).features) {
      max_fid = std::max(max_fid, fid);
    }
  }
  return max_fid;
}

Normalizer fit_normalizer(const Dataset& train) {
  if (train.groups.empty()) throw DomainError("fit_normalizer on empty dataset");
  Normalizer norm;
  norm.columns = train.schema.numeric_columns();
  norm.min.assign(norm.columns.size(), std::numeric_limits<double>::infinity());
  norm.max.assign(norm.columns.size(), -std::numeric_limits<double>::infinity());
  for (const auto& g : train.groups) {
    for (std::size_t i = 0; i < g.n_items; ++i) {
      for (std::size_t c = 0; c < norm.columns.size(); ++c) {
        const double v = g.feature(i, norm.columns[c]);
        norm.min[c] = std::min(norm.min[c], v);
        norm.max[c] = std::max(norm.max[c], v);
      }
    }
  }
  return norm;
}

Dataset apply_normalizer(const Dataset& ds, const Normalizer& norm) {
  if (norm.columns != ds.schema.numeric_columns()) {
    throw SchemaError("normalizer columns do not match the dataset schema");
  }
  Dataset out = ds;
  for (auto& g : out.groups) {
    for (std::size_t i = 0; i < g.n_items; ++i) {
      for (std::size_t c = 0; c < norm.columns.size(); ++c) {
        double& v = g.features[i * g.n_features + norm.columns[c]];
        const double range = norm.max[c] - norm.min[c];
        v = range > 0.0 ? (v - norm.min[c]) / range : 0.0;
        v = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  out.normalizer = norm;
  return out;
}

SplitResult split_dataset(const Dataset& ds, std::uint64_t seed) {
  const std::size_t n = ds.groups.size();
  if (n < 5) {
    throw DomainError("split_dataset needs at least 5 queries, got " +
                      std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  shuffle(order, rng);

  const std::size_t n_valid = n / 5;
  const std::size_t n_test = n / 5;
  const std::size_t n_train = n - n_valid - n_test;

  auto collect = [&](std::size_t begin, std::size_t count) {
    std::vector<std::size_t> idx(order.begin() + begin,
                                 order.begin() + begin + count);
    std::sort(idx.begin(), idx.end());
    Dataset part;
    part.schema = ds.schema;
    part.normalizer = ds.normalizer;
    part.groups.reserve(count);
    for (std::size_t i : idx) part.groups.push_back(ds.groups[i]);
    return part;
  };
  SplitResult out;
  out.train = collect(0, n_train);
  out.valid = collect(n_train, n_valid);
  out.test = collect(n_train + n_valid, n_test);
  return out;
}

Dataset drop_zero_label_queries(const Dataset& ds) {
  Dataset out;
  out.schema = ds.schema;
  out.normalizer = ds.normalizer;
  for (const auto& g : ds.groups) {
    if (!g.all_labels_zero()) out.groups.push_back(g);
  }
  return out;
}

std::vector<Batch> make_batches(const Dataset& ds, std::size_t batch_size,
                                std::uint64_t seed) {
  if (batch_size < 1) throw DomainError("batch_size must be >= 1");
  std::vector<std::size_t> order(ds.groups.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  shuffle(order, rng);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, order.size());
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

InitialScores load_initial_scores(const std::string& path, const Dataset& ds) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open initial-scores file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    lines.push_back(line);
  }
  if (lines.empty()) throw DataError("empty initial-scores file: " + path);

  InitialScores scores;
  const bool per_query = split_ws(lines[0]).size() >= 2;
  if (per_query) {
    // `<qid> <score_1> ... <score_n>`
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const auto tokens = split_ws(lines[i]);
      long long qid = 0;
      if (!parse_int(tokens[0], qid)) {
        throw ParseError("initial-scores line " + std::to_string(i + 1) +
                         ": malformed qid \"" + tokens[0] + "\"");
      }
      std::vector<double> vals;
      vals.reserve(tokens.size() - 1);
      for (std::size_t t = 1; t < tokens.size(); ++t) {
        double v = 0.0;
        if (!parse_double(tokens[t], v)) {
          throw ParseError("initial-scores line " + std::to_string(i + 1) +
                           ": malformed score \"" + tokens[t] + "\"");
        }
        vals.push_back(v);
      }
      if (!scores.emplace(qid, std::move(vals)).second) {
        throw DataError("initial-scores file repeats qid " +
                        std::to_string(qid));
      }
    }
    return scores;
  }

  // One score per line, parallel to the LETOR data file.
  std::vector<double> per_line;
  per_line.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    double v = 0.0;
    if (!parse_double(lines[i], v)) {
      throw ParseError("initial-scores line " + std::to_string(i + 1) +
                       ": malformed score \"" + lines[i] + "\"");
    }
    per_line.push_back(v);
  }
  for (const auto& g : ds.groups) {
    if (g.source_lines.size() != g.n_items) {
      throw DataError("parallel score format requires a dataset loaded from "
                      "file (missing line provenance for qid " +
                      std::to_string(g.qid) + ")");
    }
    std::vector<double> vals(g.n_items);
    for (std::size_t i = 0; i < g.n_items; ++i) {
      if (g.source_lines[i] >= per_line.size()) {
        throw DataError("initial-scores file has " +
                        std::to_string(per_line.size()) +
                        " lines but the dataset references line " +
                        std::to_string(g.source_lines[i] + 1));
      }
      vals[i] = per_line[g.source_lines[i]];
    }
    scores.emplace(g.qid, std::move(vals));
  }
  return scores;
}

Dataset attach_initial_order(const Dataset& ds, const InitialScores& scores,
                             std::size_t top_k) {
  if (top_k < 1) throw DomainError("attach_initial_order top_k must be >= 1");
  if (ds.schema.has_initial_order) {
    throw DataError("dataset already carries an initial-order feature");
  }
  Dataset out;
  out.schema = ds.schema;
  out.schema.has_initial_order = true;
  out.normalizer = std::nullopt;  // column set changed
  out.groups.reserve(ds.groups.size());

  for (const auto& g : ds.groups) {
    auto it = scores.find(g.qid);
    if (it == scores.end()) {
      throw DataError("no initial scores for qid " + std::to_string(g.qid));
    }
    const std::vector<double>& s = it->second;
    if (s.size() != g.n_items) {
      throw DataError("initial scores for qid " + std::to_string(g.qid) +
                      " cover " + std::to_string(s.size()) + " items, group has " +
                      std::to_string(g.n_items));
    }
    std::vector<std::size_t> order(g.n_items);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return s[a] > s[b];  // ties keep original index order
    });
    const std::size_t kept = std::min(top_k, g.n_items);
    order.resize(kept);

    QueryGroup ng;
    ng.qid = g.qid;
    ng.n_items = kept;
    ng.n_features = g.n_features + 1;
    ng.features.resize(kept * ng.n_features);
    ng.labels.resize(kept);
    ng.initial_order = order;
    for (std::size_t r = 0; r < kept; ++r) {
      const std::size_t src = order[r];
      for (std::size_t c = 0; c < g.n_features; ++c) {
        ng.features[r * ng.n_features + c] = g.feature(src, c);
      }
      ng.features[r * ng.n_features + g.n_features] =
          static_cast<double>(r + 1) / static_cast<double>(kept);
      ng.labels[r] = g.labels[src];
      if (!g.source_lines.empty()) {
        ng.source_lines.push_back(g.source_lines[src]);
      }
    }
    out.groups.push_back(std::move(ng));
  }
  return out;
}

namespace {

void reject_unknown_keys(const json& j, std::initializer_list<const char*> keys,
                         const std::string& where) {
  for (const auto& [key, val] : j.items()) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* k) {
          return key == k;
        }) == keys.end()) {
      throw ParseError("unknown key \"" + key + "\" in " + where);
    }
  }
}

}  // namespace

FeatureSchema schema_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("schema JSON: ") + e.what());
  }
  reject_unknown_keys(j, {"n_numeric", "categorical", "has_initial_order"},
                      "schema");
  FeatureSchema s;
  if (!j.contains("n_numeric") || !j["n_numeric"].is_number_unsigned()) {
    throw ParseError("schema JSON needs an unsigned \"n_numeric\"");
  }
  s.n_numeric = j["n_numeric"].get<std::size_t>();
  if (j.contains("categorical")) {
    for (const auto& c : j["categorical"]) {
      reject_unknown_keys(c, {"index", "cardinality", "dim"},
                          "schema categorical entry");
      CategoricalSpec spec;
      spec.index = c.at("index").get<std::size_t>();
      spec.cardinality = c.at("cardinality").get<std::size_t>();
      spec.dim = c.value("dim", std::size_t{0});
      s.categorical.push_back(spec);
    }
  }
  if (j.contains("has_initial_order")) {
    s.has_initial_order = j["has_initial_order"].get<bool>();
  }
  s.validate();
  return s;
}

FeatureSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open schema file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return schema_from_json_text(buf.str());
}

std::string schema_to_json(const FeatureSchema& schema) {
  json j;
  j["n_numeric"] = schema.n_numeric;
  j["categorical"] = json::array();
  for (const auto& c : schema.categorical) {
    j["categorical"].push_back(
        {{"index", c.index}, {"cardinality", c.cardinality}, {"dim", c.dim}});
  }
  j["has_initial_order"] = schema.has_initial_order;
  return j.dump(2);
}

}  // namespace qilcm::data
