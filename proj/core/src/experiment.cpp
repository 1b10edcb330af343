#include "distil/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "distil/corpus.hpp"
#include "distil/error.hpp"
#include "distil/evaluation.hpp"

namespace distil {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

// --- config ------------------------------------------------------------------

bool ExperimentConfig::no_distillation() const noexcept {
  return regimen == Regimen::joint && weights.beta == 0.0 && weights.gamma == 0.0 && !hard_targets;
}

void ExperimentConfig::validate() const {
  auto require_file = [](const fs::path& p, const char* key, bool required) {
    if (p.empty()) {
      if (required) throw ConfigError(std::string("config: '") + key + "' is required");
      return;
    }
    if (!fs::exists(p)) throw ConfigError(std::string("config: '") + key + "' path does not exist: " + p.string());
  };
  if (!seed) throw ConfigError("config: 'seed' is required");
  require_file(corpus, "corpus", true);
  require_file(vocab, "vocab", true);
  require_file(teacher, "teacher", false);
  require_file(test, "test", false);
  require_file(embeddings, "embeddings", false);
  if (output_dir.empty()) throw ConfigError("config: 'output_dir' is required");
  weights.validate();
  if (embed_dim == 0 || lstm_hidden == 0 || teacher_hidden == 0) {
    throw ConfigError("config: embed_dim, lstm_hidden and teacher_hidden must be positive");
  }
  if (max_len < 2) throw ConfigError("config: max_len must be at least 2");
  if (!(dropout >= 0.0 && dropout < 1.0) || !(recurrent_dropout >= 0.0 && recurrent_dropout < 1.0)) {
    throw ConfigError("config: dropout rates must lie in [0, 1)");
  }
  if (batch_size == 0 || max_epochs == 0 || patience == 0) {
    throw ConfigError("config: batch_size, max_epochs and patience must be positive");
  }
  if (!(rho >= 0.0 && rho < 1.0) || !(eps > 0.0)) throw ConfigError("config: need 0 <= rho < 1 and eps > 0");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("config: validation_fraction must lie in [0, 1)");
  }
  if (labeled_per_class && *labeled_per_class == 0) throw ConfigError("config: labeled_per_class must be positive");
  if (hard_targets && regimen != Regimen::joint) throw ConfigError("config: hard_targets needs the joint regimen");
  if (!no_distillation() && teacher.empty()) {
    throw ConfigError("config: 'teacher' records are required unless distillation is off");
  }
}

namespace {

fs::path resolve(const json& v, const fs::path& base) {
  const fs::path p = v.get<std::string>();
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

ordered_json config_json(const ExperimentConfig& c) {
  ordered_json j;
  j["corpus"] = c.corpus.generic_string();
  j["vocab"] = c.vocab.generic_string();
  j["teacher"] = c.teacher.generic_string();
  j["test"] = c.test.generic_string();
  j["embeddings"] = c.embeddings.generic_string();
  j["output_dir"] = c.output_dir.generic_string();
  j["seed"] = c.seed ? ordered_json(*c.seed) : ordered_json(nullptr);
  j["regimen"] = std::string(to_string(c.regimen));
  j["hard_targets"] = c.hard_targets;
  j["labeled_per_class"] = c.labeled_per_class ? ordered_json(*c.labeled_per_class) : ordered_json(nullptr);
  j["alpha"] = c.weights.alpha;
  j["beta"] = c.weights.beta;
  j["gamma"] = c.weights.gamma;
  j["embed_dim"] = c.embed_dim;
  j["lstm_hidden"] = c.lstm_hidden;
  j["teacher_hidden"] = c.teacher_hidden;
  j["max_len"] = c.max_len;
  j["dropout"] = c.dropout;
  j["recurrent_dropout"] = c.recurrent_dropout;
  j["batch_size"] = c.batch_size;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["rho"] = c.rho;
  j["eps"] = c.eps;
  j["precision"] = c.precision == Precision::float64 ? "float64" : "float32";
  j["validation_fraction"] = c.validation_fraction;
  return j;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed while writing " + path.string());
}

std::vector<Encoded> encode_all(const std::vector<Instance>& instances, const Vocab& vocab, std::size_t max_len) {
  std::vector<Encoded> out;
  out.reserve(instances.size());
  for (const Instance& in : instances) out.push_back(encode(in.text, vocab, max_len));
  return out;
}

std::vector<std::size_t> labels_of(const std::vector<Instance>& instances, std::size_t num_classes) {
  std::vector<std::size_t> out;
  out.reserve(instances.size());
  for (const Instance& in : instances) {
    if (!in.label) throw DataError("instance '" + in.id + "' has no label");
    if (*in.label >= num_classes) {
      throw DataError("instance '" + in.id + "' has label " + std::to_string(*in.label) + " but the model has " +
                      std::to_string(num_classes) + " classes");
    }
    out.push_back(*in.label);
  }
  return out;
}

std::vector<Instance> labeled_only(std::vector<Instance> instances) {
  std::erase_if(instances, [](const Instance& in) { return !in.label; });
  return instances;
}

ordered_json metric_json(const MetricRecord& m) {
  auto opt = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  ordered_json j;
  j["step"] = m.step;
  j["stage"] = m.stage;
  j["phase"] = m.phase;
  j["epoch"] = m.epoch;
  j["ce"] = opt(m.ce);
  j["rl"] = opt(m.rl);
  j["ll"] = opt(m.ll);
  j["joint"] = opt(m.joint);
  j["validation_loss"] = m.validation_loss;
  j["validation_accuracy"] = opt(m.validation_accuracy);
  j["wall_seconds"] = m.wall_seconds;
  return j;
}

}  // namespace

ExperimentConfig parse_config(std::string_view text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");

  ExperimentConfig c;
  using Setter = void (*)(ExperimentConfig&, const json&, const fs::path&);
  static const std::unordered_map<std::string, Setter> setters{
      {"corpus", [](ExperimentConfig& c, const json& v, const fs::path& b) { c.corpus = resolve(v, b); }},
      {"vocab", [](ExperimentConfig& c, const json& v, const fs::path& b) { c.vocab = resolve(v, b); }},
      {"teacher", [](ExperimentConfig& c, const json& v, const fs::path& b) { c.teacher = resolve(v, b); }},
      {"test", [](ExperimentConfig& c, const json& v, const fs::path& b) { c.test = resolve(v, b); }},
      {"embeddings", [](ExperimentConfig& c, const json& v, const fs::path& b) { c.embeddings = resolve(v, b); }},
      {"output_dir", [](ExperimentConfig& c, const json& v, const fs::path& b) { c.output_dir = resolve(v, b); }},
      {"seed",
       [](ExperimentConfig& c, const json& v, const fs::path&) {
         if (v.is_null()) return;
         if (!v.is_number_unsigned()) throw ConfigError("must be a non-negative integer");
         c.seed = v.get<std::uint64_t>();
       }},
      {"regimen", [](ExperimentConfig& c, const json& v, const fs::path&) {
         c.regimen = parse_regimen(v.get<std::string>());
       }},
      {"hard_targets", [](ExperimentConfig& c, const json& v, const fs::path&) { c.hard_targets = v.get<bool>(); }},
      {"labeled_per_class",
       [](ExperimentConfig& c, const json& v, const fs::path&) {
         if (v.is_null()) return;
         if (!v.is_number_unsigned()) throw ConfigError("must be a positive integer");
         c.labeled_per_class = v.get<std::size_t>();
       }},
      {"alpha", [](ExperimentConfig& c, const json& v, const fs::path&) { c.weights.alpha = v.get<double>(); }},
      {"beta", [](ExperimentConfig& c, const json& v, const fs::path&) { c.weights.beta = v.get<double>(); }},
      {"gamma", [](ExperimentConfig& c, const json& v, const fs::path&) { c.weights.gamma = v.get<double>(); }},
      {"embed_dim", [](ExperimentConfig& c, const json& v, const fs::path&) { c.embed_dim = v.get<std::size_t>(); }},
      {"lstm_hidden",
       [](ExperimentConfig& c, const json& v, const fs::path&) { c.lstm_hidden = v.get<std::size_t>(); }},
      {"teacher_hidden",
       [](ExperimentConfig& c, const json& v, const fs::path&) { c.teacher_hidden = v.get<std::size_t>(); }},
      {"max_len", [](ExperimentConfig& c, const json& v, const fs::path&) { c.max_len = v.get<std::size_t>(); }},
      {"dropout", [](ExperimentConfig& c, const json& v, const fs::path&) { c.dropout = v.get<double>(); }},
      {"recurrent_dropout",
       [](ExperimentConfig& c, const json& v, const fs::path&) { c.recurrent_dropout = v.get<double>(); }},
      {"batch_size",
       [](ExperimentConfig& c, const json& v, const fs::path&) { c.batch_size = v.get<std::size_t>(); }},
      {"max_epochs",
       [](ExperimentConfig& c, const json& v, const fs::path&) { c.max_epochs = v.get<std::size_t>(); }},
      {"patience", [](ExperimentConfig& c, const json& v, const fs::path&) { c.patience = v.get<std::size_t>(); }},
      {"rho", [](ExperimentConfig& c, const json& v, const fs::path&) { c.rho = v.get<double>(); }},
      {"eps", [](ExperimentConfig& c, const json& v, const fs::path&) { c.eps = v.get<double>(); }},
      {"precision",
       [](ExperimentConfig& c, const json& v, const fs::path&) {
         const std::string p = v.get<std::string>();
         if (p == "float64") {
           c.precision = Precision::float64;
         } else if (p == "float32") {
           c.precision = Precision::float32;
         } else {
           throw ConfigError("must be \"float64\" or \"float32\"");
         }
       }},
      {"validation_fraction",
       [](ExperimentConfig& c, const json& v, const fs::path&) { c.validation_fraction = v.get<double>(); }},
  };
  for (const auto& [key, value] : j.items()) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("config: unknown key '" + key + "'");
    try {
      it->second(c, value, base_dir);
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.parent_path());
}

std::string dump_config(const ExperimentConfig& config) { return config_json(config).dump(2) + "\n"; }

std::string config_hash(const ExperimentConfig& config) {
  ordered_json j = config_json(config);
  j.erase("output_dir");
  return hex16(fnv1a(j.dump()));
}

// --- tokenize ----------------------------------------------------------------

TokenizeStats cmd_tokenize(const fs::path& input, const fs::path& vocab_path, std::size_t max_len,
                           const fs::path& output) {
  const Vocab vocab = Vocab::load(vocab_path);
  const std::vector<Instance> instances = load_instances(input);
  std::ofstream out(output, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + output.string());
  TokenizeStats stats;
  for (const Instance& in : instances) {
    const std::vector<std::string> pieces = tokenize(in.text, vocab);
    const Encoded enc = encode(in.text, vocab, max_len);
    ++stats.instances;
    stats.pieces += pieces.size();
    for (const std::string& p : pieces) stats.unknown += p == kUnkToken ? 1 : 0;
    stats.truncated += pieces.size() + 2 > max_len ? 1 : 0;
    stats.max_length = std::max(stats.max_length, enc.length);
    ordered_json j;
    j["id"] = in.id;
    j["ids"] = std::vector<std::size_t>(enc.ids.begin(), enc.ids.begin() + static_cast<std::ptrdiff_t>(enc.length));
    j["length"] = enc.length;
    j["tokens"] = render(enc, vocab);
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed while writing " + output.string());
  return stats;
}

// --- teacher-oracle ----------------------------------------------------------

TeacherOracleReport cmd_teacher_oracle(const TeacherOracleOptions& options) {
  const Corpus corpus = load_corpus(options.corpus);
  const Vocab vocab = Vocab::load(options.vocab);
  OracleSettings settings = options.settings;
  if (settings.num_classes == 0) settings.num_classes = corpus.num_classes;
  if (settings.num_classes != corpus.num_classes) {
    throw ConfigError("oracle has " + std::to_string(settings.num_classes) + " classes, corpus has " +
                      std::to_string(corpus.num_classes));
  }
  OracleTeacher oracle(settings);

  const std::vector<Instance> fit_set =
      options.fit.empty() ? corpus.labeled : labeled_only(load_instances(options.fit));
  if (!fit_set.empty()) {
    const std::vector<Encoded> inputs = encode_all(fit_set, vocab, options.max_len);
    oracle.fit(inputs, labels_of(fit_set, settings.num_classes), options.fit_options);
  }

  std::vector<TeacherRecord> records;
  auto emit = [&](const Instance& in) {
    records.push_back(oracle.predict(encode(in.text, vocab, options.max_len), in.id, in.text));
  };
  for (const Instance& in : corpus.unlabeled) emit(in);
  TeacherOracleReport report;
  if (!corpus.labeled.empty()) {
    std::vector<std::size_t> predicted, gold;
    for (const Instance& in : corpus.labeled) {
      const TeacherRecord r = oracle.predict(encode(in.text, vocab, options.max_len), in.id, in.text);
      predicted.push_back(r.hard_label);
      gold.push_back(*in.label);
      if (options.include_labeled) records.push_back(r);
    }
    report.labeled_accuracy = accuracy(predicted, gold);
  }
  export_records(records, options.output);

  report.records = records.size();
  report.num_classes = settings.num_classes;
  if (!records.empty()) report.prediction_variance = prediction_variance(records);
  report.max_variance = max_variance(settings.num_classes);
  return report;
}

// --- distil ------------------------------------------------------------------

DistilReport cmd_distil(const ExperimentConfig& config) {
  config.validate();
  const std::uint64_t seed = *config.seed;
  const Vocab vocab = Vocab::load(config.vocab);
  Corpus corpus = load_corpus(config.corpus);
  if (config.labeled_per_class) {
    const std::vector<Instance> extra = corpus.unlabeled;
    corpus = low_resource_split(corpus.labeled, *config.labeled_per_class, corpus.num_classes, seed);
    corpus.unlabeled.insert(corpus.unlabeled.end(), extra.begin(), extra.end());
    corpus.provenance.unlabeled = corpus.unlabeled.size();
  }
  std::vector<TeacherRecord> records;
  if (!config.teacher.empty()) records = import_records(config.teacher);

  DataSplit data = prepare_data(corpus, records, vocab, DataOptions{config.max_len, config.validation_fraction, seed});
  LossWeights weights = config.weights;
  if (config.hard_targets) {
    data = with_teacher_hard_labels(data);
    weights.beta = 0.0;
    weights.gamma = 0.0;
  }

  StudentConfig student;
  student.vocab_size = vocab.size();
  student.embed_dim = config.embed_dim;
  student.lstm_hidden = config.lstm_hidden;
  student.num_classes = corpus.num_classes;
  student.teacher_hidden = records.empty() ? config.teacher_hidden : records.front().hidden.size();
  student.max_len = config.max_len;
  student.dropout_rate = config.dropout;
  student.recurrent_dropout_rate = config.recurrent_dropout;

  TrainingConfig training;
  training.batch_size = config.batch_size;
  training.max_epochs = config.max_epochs;
  training.patience = config.patience;
  training.optimizer = AdadeltaOptions{config.rho, config.eps};
  training.seed = seed;
  training.precision = config.precision;

  fs::create_directories(config.output_dir);
  const std::string hash = config_hash(config);
  {
    ordered_json dumped = config_json(config);
    dumped["config_hash"] = hash;
    write_text(config.output_dir / "config.json", dumped.dump(2) + "\n");
  }

  std::ofstream metrics(config.output_dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
  if (!metrics) throw IoError("cannot write " + (config.output_dir / "metrics.jsonl").string());
  TrainingHooks hooks;
  hooks.on_epoch = [&](const MetricRecord& m) { metrics << metric_json(m).dump() << '\n' << std::flush; };
  if (!config.embeddings.empty()) {
    hooks.on_init = [&](StudentParams& params) { load_pretrained_embeddings(params, vocab, config.embeddings); };
  }
  TrainResult result = run_regimen(config.regimen, data, student, weights, training, hooks);
  metrics.close();

  save_checkpoint(result.params, config.output_dir / "checkpoint.bin");
  if (result.distilled) save_checkpoint(*result.distilled, config.output_dir / "distilled.bin");

  DistilReport report;
  report.config_hash = hash;
  report.total_steps = result.total_steps;
  report.stage_history = result.stage_history();
  if (!corpus.labeled.empty()) {
    const auto predicted = predict(result.params, encode_all(corpus.labeled, vocab, config.max_len));
    report.labeled_accuracy = accuracy(predicted, labels_of(corpus.labeled, corpus.num_classes));
  }
  if (!config.test.empty()) {
    const std::vector<Instance> test = labeled_only(load_instances(config.test));
    if (test.empty()) throw DataError("test file " + config.test.string() + " has no labeled instances");
    const auto predicted = predict(result.params, encode_all(test, vocab, config.max_len));
    report.test_accuracy = accuracy(predicted, labels_of(test, corpus.num_classes));
  }

  ordered_json summary;
  summary["config_hash"] = hash;
  summary["regimen"] = std::string(to_string(config.regimen));
  summary["no_distillation"] = config.no_distillation();
  summary["hard_targets"] = config.hard_targets;
  summary["seed"] = seed;
  summary["labeled"] = corpus.labeled.size();
  summary["unlabeled"] = corpus.unlabeled.size();
  summary["test_accuracy"] = report.test_accuracy ? ordered_json(*report.test_accuracy) : ordered_json(nullptr);
  summary["labeled_accuracy"] = report.labeled_accuracy;
  summary["total_steps"] = result.total_steps;
  summary["stage_history"] = report.stage_history;
  ordered_json phases = ordered_json::array();
  for (const PhaseSummary& p : result.phases) {
    ordered_json ph;
    ph["stage"] = p.stage;
    ph["phase"] = p.name;
    ph["epochs"] = p.epochs;
    ph["steps"] = p.steps;
    ph["best_epoch"] = p.best_epoch;
    ph["best_validation_loss"] = p.best_validation_loss;
    phases.push_back(ph);
  }
  summary["phases"] = phases;
  report.summary_json = summary.dump(2) + "\n";
  write_text(config.output_dir / "summary.json", report.summary_json);
  return report;
}

// --- evaluate ----------------------------------------------------------------

EvaluateReport cmd_evaluate(const fs::path& checkpoint, const fs::path& data, const fs::path& vocab_path,
                            const fs::path& teacher) {
  const StudentParams params = load_checkpoint(checkpoint);
  const Vocab vocab = Vocab::load(vocab_path);
  if (params.config.vocab_size != vocab.size()) {
    throw ConfigError("checkpoint expects a vocabulary of " + std::to_string(params.config.vocab_size) +
                      " tokens, " + vocab_path.string() + " has " + std::to_string(vocab.size()));
  }
  const std::vector<Instance> instances = load_instances(data);
  const std::vector<std::size_t> predicted = predict(params, encode_all(instances, vocab, params.config.max_len));

  EvaluateReport report;
  std::vector<std::size_t> pred_labeled, gold;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (!instances[i].label) continue;
    if (*instances[i].label >= params.config.num_classes) {
      throw ConfigError("instance '" + instances[i].id + "' has label " + std::to_string(*instances[i].label) +
                        " but the checkpoint has " + std::to_string(params.config.num_classes) + " classes");
    }
    pred_labeled.push_back(predicted[i]);
    gold.push_back(*instances[i].label);
  }
  report.instances = gold.size();
  if (!gold.empty()) {
    report.accuracy = distil::accuracy(pred_labeled, gold);
    report.per_class_accuracy = distil::per_class_accuracy(pred_labeled, gold, params.config.num_classes);
  }

  if (!teacher.empty()) {
    const std::vector<TeacherRecord> records = import_records(teacher);
    std::unordered_map<std::string, std::size_t> hard;
    for (const TeacherRecord& r : records) {
      if (r.probs.size() != params.config.num_classes) {
        throw ConfigError("teacher records have " + std::to_string(r.probs.size()) + " classes, checkpoint has " +
                          std::to_string(params.config.num_classes));
      }
      hard.emplace(r.id, r.hard_label);
    }
    std::size_t agree = 0;
    for (std::size_t i = 0; i < instances.size(); ++i) {
      const auto it = hard.find(instances[i].id);
      if (it == hard.end()) continue;
      ++report.teacher_matched;
      agree += it->second == predicted[i] ? 1 : 0;
    }
    if (report.teacher_matched) {
      report.teacher_agreement = static_cast<double>(agree) / static_cast<double>(report.teacher_matched);
    }
  } else if (gold.empty()) {
    throw DataError(data.string() + " has no labeled instances to evaluate");
  }
  return report;
}

// --- corpus helpers ----------------------------------------------------------

Corpus cmd_split(const SplitOptions& options) {
  if (options.test_size.has_value() == options.labeled_per_class.has_value()) {
    throw ConfigError("split: give exactly one of test size or labeled-per-class");
  }
  const std::vector<Instance> pool = load_instances(options.pool);
  Corpus corpus = options.test_size
                      ? derive_split(pool, *options.test_size, options.num_classes, options.seed)
                      : low_resource_split(pool, *options.labeled_per_class, options.num_classes, options.seed);
  save_corpus(corpus, options.output);
  return corpus;
}

SyntheticTask cmd_synth(const SyntheticTaskOptions& options, std::size_t pool_size, std::size_t test_size,
                        const fs::path& output_dir) {
  SyntheticTask task = make_synthetic_task(options, pool_size, test_size);
  fs::create_directories(output_dir);
  task.vocab().save(output_dir / "vocab.txt");
  for (auto [set, name] : {std::pair{&task.pool, "pool.jsonl"}, std::pair{&task.test, "test.jsonl"}}) {
    Corpus c;
    c.num_classes = options.num_classes;
    c.labeled = *set;
    c.provenance.seed = options.seed;
    c.provenance.labeled = set->size();
    save_corpus(c, output_dir / name);
  }
  return task;
}

}  // namespace distil
