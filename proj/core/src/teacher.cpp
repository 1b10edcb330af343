#include "distil/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>

#include <json.hpp>

#include "distil/error.hpp"

namespace distil {

std::vector<double> logit_transform(std::span<const double> probs, double eps) {
  if (!(eps > 0.0 && eps < 0.5)) throw ContractError("logit clamp must be in (0, 0.5)");
  std::vector<double> out(probs.size());
  for (std::size_t c = 0; c < probs.size(); ++c) {
    if (!(probs[c] >= 0.0 && probs[c] <= 1.0)) throw ContractError("logit_transform: probability outside [0, 1]");
    const double p = std::clamp(probs[c], eps, 1.0 - eps);
    out[c] = std::log(p / (1.0 - p));
  }
  return out;
}

std::size_t hard_label(std::span<const double> probs) {
  if (probs.empty()) throw ContractError("hard_label: empty probability vector");
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

TeacherRecord make_record(std::string id, std::string text, std::vector<double> probs, std::vector<double> hidden,
                          double eps) {
  TeacherRecord r;
  r.id = std::move(id);
  r.text = std::move(text);
  r.logits = logit_transform(probs, eps);
  r.hard_label = hard_label(probs);
  r.probs = std::move(probs);
  r.hidden = std::move(hidden);
  return r;
}

void validate_record(const TeacherRecord& r, double eps) {
  const std::string where = "teacher record '" + r.id + "': ";
  if (r.probs.size() < 2) throw DataError(where + "needs at least 2 class probabilities");
  if (r.logits.size() != r.probs.size()) throw DataError(where + "logits and probs differ in length");
  if (r.hidden.empty()) throw DataError(where + "empty hidden vector");
  double total = 0.0;
  for (double p : r.probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw DataError(where + "probability outside [0, 1]");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw DataError(where + "probability sum violation: probs sum to " + std::to_string(total));
  }
  const auto expected = logit_transform(r.probs, eps);
  for (std::size_t c = 0; c < expected.size(); ++c) {
    if (!(std::abs(r.logits[c] - expected[c]) <= 1e-6)) {
      throw DataError(where + "logit " + std::to_string(c) + " is not the log-odds of its probability");
    }
  }
  for (double h : r.hidden) {
    if (!std::isfinite(h)) throw DataError(where + "non-finite hidden value");
  }
  if (r.hard_label != hard_label(r.probs)) throw DataError(where + "hard_label is not the argmax of probs");
}

// --- oracle ---------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void softmax_inplace(std::vector<double>& v) {
  const double top = *std::max_element(v.begin(), v.end());
  double total = 0.0;
  for (double& x : v) total += x = std::exp(x - top);
  for (double& x : v) x /= total;
}

}  // namespace

OracleTeacher::OracleTeacher(const OracleSettings& settings) : settings_(settings) {
  if (settings.hash_dim == 0 || settings.hidden_dim == 0) throw ConfigError("oracle: dimensions must be positive");
  if (settings.num_classes < 2) throw ConfigError("oracle: needs at least 2 classes");
  set_temperature(settings.temperature);
  std::mt19937_64 rng(settings.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  weights_.resize(settings.hash_dim * settings.num_classes);
  for (double& w : weights_) w = normal(rng);
  projector_.resize(settings.hash_dim * settings.hidden_dim);
  for (double& w : projector_) w = normal(rng);
}

void OracleTeacher::set_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("oracle: temperature must be positive");
  settings_.temperature = temperature;
}

OracleTeacher::SparseFeatures OracleTeacher::sparse_features(const Encoded& encoded) const {
  std::map<std::size_t, double> counts;
  for (std::size_t i = 1; i + 1 < encoded.length; ++i) {
    counts[splitmix64(encoded.ids[i]) % settings_.hash_dim] += 1.0;
  }
  double norm = 0.0;
  for (const auto& [_, c] : counts) norm += c * c;
  norm = std::sqrt(norm);
  SparseFeatures f;
  for (const auto& [index, c] : counts) {
    f.index.push_back(index);
    f.value.push_back(c / norm);
  }
  return f;
}

std::vector<double> OracleTeacher::features(const Encoded& encoded) const {
  const SparseFeatures sparse = sparse_features(encoded);
  std::vector<double> dense(settings_.hash_dim, 0.0);
  for (std::size_t k = 0; k < sparse.index.size(); ++k) dense[sparse.index[k]] = sparse.value[k];
  return dense;
}

std::vector<double> OracleTeacher::scores(const SparseFeatures& f) const {
  const std::size_t C = settings_.num_classes;
  std::vector<double> s(C, 0.0);
  for (std::size_t k = 0; k < f.index.size(); ++k) {
    for (std::size_t c = 0; c < C; ++c) s[c] += f.value[k] * weights_[f.index[k] * C + c];
  }
  return s;
}

std::vector<double> OracleTeacher::probabilities(const Encoded& encoded) const {
  std::vector<double> s = scores(sparse_features(encoded));
  for (double& x : s) x /= settings_.temperature;
  softmax_inplace(s);
  return s;
}

TeacherRecord OracleTeacher::predict(const Encoded& encoded, std::string id, std::string text) const {
  const SparseFeatures f = sparse_features(encoded);
  std::vector<double> probs = scores(f);
  for (double& x : probs) x /= settings_.temperature;
  softmax_inplace(probs);

  const std::size_t H = settings_.hidden_dim;
  std::vector<double> hidden(H, 0.0);
  for (std::size_t k = 0; k < f.index.size(); ++k) {
    const double* row = &projector_[f.index[k] * H];
    for (std::size_t h = 0; h < H; ++h) hidden[h] += f.value[k] * row[h];
  }
  for (double& h : hidden) h = std::tanh(h);
  return make_record(std::move(id), std::move(text), std::move(probs), std::move(hidden));
}

void OracleTeacher::fit(std::span<const Encoded> inputs, std::span<const std::size_t> labels,
                        const OracleFitOptions& options) {
  if (inputs.size() != labels.size()) throw ContractError("oracle fit: inputs and labels differ in length");
  if (inputs.empty()) throw ContractError("oracle fit: no training data");
  const std::size_t C = settings_.num_classes;
  for (std::size_t y : labels) {
    if (y >= C) throw ContractError("oracle fit: label " + std::to_string(y) + " out of range");
  }
  std::vector<SparseFeatures> feats;
  feats.reserve(inputs.size());
  for (const Encoded& e : inputs) feats.push_back(sparse_features(e));

  std::vector<std::size_t> order(feats.size());
  for (std::size_t n = 0; n < order.size(); ++n) order[n] = n;
  std::mt19937_64 rng(settings_.seed ^ 0xf17'0000'0000'0003ULL);
  const double decay = 1.0 - options.learning_rate * options.l2;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t n : order) {
      std::vector<double> p = scores(feats[n]);
      softmax_inplace(p);
      p[labels[n]] -= 1.0;
      // The L2 shrinkage is applied to the touched rows only.
      for (std::size_t k = 0; k < feats[n].index.size(); ++k) {
        double* w = &weights_[feats[n].index[k] * C];
        for (std::size_t c = 0; c < C; ++c) w[c] = decay * w[c] - options.learning_rate * feats[n].value[k] * p[c];
      }
    }
  }
}

// --- artifact file ---------------------------------------------------------

namespace {

void append_number(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

void append_array(std::string& out, const std::vector<double>& values) {
  out.push_back('[');
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out.push_back(',');
    append_number(out, values[i]);
  }
  out.push_back(']');
}

}  // namespace

std::string format_record(const TeacherRecord& r) {
  std::string out = "{\"id\":";
  out += nlohmann::json(r.id).dump();
  out += ",\"text\":";
  out += nlohmann::json(r.text).dump();
  out += ",\"probs\":";
  append_array(out, r.probs);
  out += ",\"logits\":";
  append_array(out, r.logits);
  out += ",\"hidden\":";
  append_array(out, r.hidden);
  out += ",\"hard_label\":" + std::to_string(r.hard_label) + "}";
  return out;
}

TeacherRecord parse_record(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed teacher record: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("teacher record is not an object");
  try {
    TeacherRecord r;
    r.id = j.at("id").get<std::string>();
    r.text = j.at("text").get<std::string>();
    r.probs = j.at("probs").get<std::vector<double>>();
    r.logits = j.at("logits").get<std::vector<double>>();
    r.hidden = j.at("hidden").get<std::vector<double>>();
    const auto label = j.at("hard_label").get<long long>();
    if (label < 0) throw FormatError("negative hard_label");
    r.hard_label = static_cast<std::size_t>(label);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("teacher record field error: ") + e.what());
  }
}

void export_records(std::span<const TeacherRecord> records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write teacher records to " + path.string());
  for (const TeacherRecord& r : records) out << format_record(r) << '\n';
  if (!out) throw IoError("failed while writing " + path.string());
}

std::vector<TeacherRecord> import_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open teacher records " + path.string());
  std::vector<TeacherRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      TeacherRecord r = parse_record(line);
      validate_record(r);
      if (!records.empty()) {
        if (r.probs.size() != records.front().probs.size()) {
          throw DataError("record has " + std::to_string(r.probs.size()) + " classes, first record has " +
                          std::to_string(records.front().probs.size()));
        }
        if (r.hidden.size() != records.front().hidden.size()) {
          throw DataError("record hidden size " + std::to_string(r.hidden.size()) + " differs from H_t = " +
                          std::to_string(records.front().hidden.size()));
        }
      }
      records.push_back(std::move(r));
    } catch (const Error& e) {
      const std::string msg = path.string() + ":" + std::to_string(line_no) + ": " + e.what();
      if (e.category() == "format") throw FormatError(msg);
      throw DataError(msg);
    }
  }
  return records;
}

}  // namespace distil
