#include "distil/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <unordered_map>
#include <utility>

#include "distil/error.hpp"
#include "distil/evaluation.hpp"

namespace distil {

// --- optimizer ---------------------------------------------------------------

void adadelta_update(std::span<double> param, std::span<const double> grad, AdadeltaSlot& slot,
                     const AdadeltaOptions& options) {
  if (slot.square_grad.empty() && slot.square_update.empty()) {
    slot.square_grad.assign(param.size(), 0.0);
    slot.square_update.assign(param.size(), 0.0);
  }
  if (slot.square_grad.size() != param.size() || slot.square_update.size() != param.size()) {
    throw DimensionError("adadelta: accumulator size " + std::to_string(slot.square_grad.size()) +
                         " does not match parameter size " + std::to_string(param.size()));
  }
  if (!grad.empty() && grad.size() != param.size()) {
    throw DimensionError("adadelta: gradient size " + std::to_string(grad.size()) +
                         " does not match parameter size " + std::to_string(param.size()));
  }
  const double rho = options.rho;
  const double eps = options.eps;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    double& eg = slot.square_grad[i];
    double& ex = slot.square_update[i];
    eg = rho * eg + (1.0 - rho) * g * g;
    const double dx = -(std::sqrt(ex + eps) / std::sqrt(eg + eps)) * g;
    ex = rho * ex + (1.0 - rho) * dx * dx;
    param[i] += dx;
  }
}

Adadelta::Adadelta(AdadeltaOptions options) : options_(options) {
  if (!(options_.rho >= 0.0 && options_.rho < 1.0)) throw ConfigError("adadelta: rho must lie in [0, 1)");
  if (!(options_.eps > 0.0)) throw ConfigError("adadelta: eps must be positive");
}

void Adadelta::step(std::span<Tensor> params) {
  if (slots_.empty()) slots_.resize(params.size());
  if (slots_.size() != params.size()) {
    throw DimensionError("adadelta: expected " + std::to_string(slots_.size()) + " parameter tensors, got " +
                         std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    if (!p.requires_grad()) continue;
    const std::span<const double> grad = p.has_grad() ? p.grad() : std::span<const double>{};
    adadelta_update(p.mutable_values(), grad, slots_[k], options_);
  }
}

// --- data --------------------------------------------------------------------

namespace {

// Indices [0, n) in a seeded random order; the first `take` are returned
// sorted so held-out sets keep corpus order.
std::vector<std::size_t> sample_sorted(std::vector<std::size_t> members, std::size_t take, Rng& rng) {
  std::shuffle(members.begin(), members.end(), rng);
  members.resize(take);
  std::sort(members.begin(), members.end());
  return members;
}

std::size_t holdout_count(std::size_t n, double fraction) {
  if (n < 2 || fraction <= 0.0) return 0;
  const auto wanted = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  return std::clamp<std::size_t>(wanted, 1, n - 1);
}

}  // namespace

DataSplit prepare_data(const Corpus& corpus, std::span<const TeacherRecord> records, const Vocab& vocab,
                       const DataOptions& options) {
  corpus.validate();
  if (!(options.validation_fraction >= 0.0 && options.validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must lie in [0, 1)");
  }

  DataSplit data;
  data.num_classes = corpus.num_classes;
  Rng rng(options.seed ^ 0x5eed'da7a'0000'0001ULL);

  // Labeled: class-stratified hold-out.
  std::vector<std::vector<std::size_t>> by_class(corpus.num_classes);
  for (std::size_t i = 0; i < corpus.labeled.size(); ++i) by_class[*corpus.labeled[i].label].push_back(i);
  std::vector<std::uint8_t> labeled_holdout(corpus.labeled.size(), 0);
  for (const auto& members : by_class) {
    const std::size_t take = holdout_count(members.size(), options.validation_fraction);
    for (std::size_t i : sample_sorted(members, take, rng)) labeled_holdout[i] = 1;
  }
  for (std::size_t i = 0; i < corpus.labeled.size(); ++i) {
    TrainingSet& set = labeled_holdout[i] ? data.validation : data.train;
    set.labeled.push_back(encode(corpus.labeled[i].text, vocab, options.max_len));
    set.labels.push_back(*corpus.labeled[i].label);
  }

  // Unlabeled: attach teacher outputs by id, then hold out a slice.
  std::unordered_map<std::string_view, const TeacherRecord*> by_id;
  if (!records.empty()) {
    data.teacher_hidden = records.front().hidden.size();
    for (const TeacherRecord& r : records) {
      if (r.probs.size() != corpus.num_classes) {
        throw DataError("teacher record '" + r.id + "' has " + std::to_string(r.probs.size()) +
                        " classes, corpus has " + std::to_string(corpus.num_classes));
      }
      if (r.hidden.size() != data.teacher_hidden) {
        throw DataError("teacher record '" + r.id + "' has hidden size " + std::to_string(r.hidden.size()) +
                        ", expected " + std::to_string(data.teacher_hidden));
      }
      by_id.emplace(r.id, &r);
    }
  }
  std::vector<std::size_t> all(corpus.unlabeled.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  std::vector<std::uint8_t> unlabeled_holdout(corpus.unlabeled.size(), 0);
  for (std::size_t i : sample_sorted(all, holdout_count(all.size(), options.validation_fraction), rng)) {
    unlabeled_holdout[i] = 1;
  }
  for (std::size_t i = 0; i < corpus.unlabeled.size(); ++i) {
    const Instance& inst = corpus.unlabeled[i];
    TrainingSet& set = unlabeled_holdout[i] ? data.validation : data.train;
    set.unlabeled.push_back(encode(inst.text, vocab, options.max_len));
    set.unlabeled_ids.push_back(inst.id);
    if (records.empty()) continue;
    const auto it = by_id.find(inst.id);
    if (it == by_id.end()) throw DataError("no teacher record for unlabeled instance '" + inst.id + "'");
    set.teacher_logits.push_back(it->second->logits);
    set.teacher_hidden.push_back(it->second->hidden);
    set.teacher_labels.push_back(it->second->hard_label);
  }
  return data;
}

DataSplit with_teacher_hard_labels(const DataSplit& data) {
  if (!data.train.has_teacher()) throw DataError("hard targets need teacher records for the unlabeled set");
  DataSplit out = data;
  TrainingSet& t = out.train;
  t.labeled.insert(t.labeled.end(), data.train.unlabeled.begin(), data.train.unlabeled.end());
  t.labels.insert(t.labels.end(), data.train.teacher_labels.begin(), data.train.teacher_labels.end());
  return out;
}

// --- batching ----------------------------------------------------------------

DualBatchStream::DualBatchStream(std::size_t labeled_count, std::size_t unlabeled_count, std::size_t batch_size,
                                 std::uint64_t seed, StreamMode mode)
    : labeled_count_(labeled_count),
      unlabeled_count_(unlabeled_count),
      batch_size_(batch_size),
      mode_(mode),
      rng_(seed) {
  if (batch_size_ == 0) throw ConfigError("batch size must be positive");
  if (mode_ != StreamMode::unlabeled_only && labeled_count_ == 0) throw DataError("batch stream: empty labeled pool");
  if (mode_ != StreamMode::labeled_only && unlabeled_count_ == 0) {
    throw DataError("batch stream: empty unlabeled pool");
  }
  const std::size_t driving = mode_ == StreamMode::labeled_only ? labeled_count_ : unlabeled_count_;
  // Single-pool streams never repeat an instance inside one batch.
  if (mode_ != StreamMode::dual) batch_size_ = std::min(batch_size_, driving);
  steps_per_epoch_ = (driving + batch_size_ - 1) / batch_size_;
}

std::size_t DualBatchStream::draw_cycled() {
  if (cycle_pos_ == cycle_.size()) {
    cycle_.resize(labeled_count_);
    for (std::size_t i = 0; i < labeled_count_; ++i) cycle_[i] = i;
    std::shuffle(cycle_.begin(), cycle_.end(), rng_);
    cycle_pos_ = 0;
  }
  return cycle_[cycle_pos_++];
}

std::vector<DualBatch> DualBatchStream::next_epoch() {
  const bool labeled_drives = mode_ == StreamMode::labeled_only;
  const std::size_t driving = labeled_drives ? labeled_count_ : unlabeled_count_;
  std::vector<std::size_t> order(driving);
  for (std::size_t i = 0; i < driving; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng_);

  std::vector<DualBatch> epoch(steps_per_epoch_);
  for (std::size_t s = 0; s < steps_per_epoch_; ++s) {
    std::vector<std::size_t> main(batch_size_);
    for (std::size_t j = 0; j < batch_size_; ++j) main[j] = order[(s * batch_size_ + j) % driving];
    if (labeled_drives) {
      epoch[s].labeled = std::move(main);
      continue;
    }
    epoch[s].unlabeled = std::move(main);
    if (mode_ == StreamMode::dual) {
      epoch[s].labeled.resize(batch_size_);
      for (std::size_t& idx : epoch[s].labeled) idx = draw_cycled();
    }
  }
  return epoch;
}

// --- early stopping ----------------------------------------------------------

StopDecision early_stop(std::span<const double> history, std::size_t patience) {
  if (patience == 0) throw ContractError("early_stop: patience must be at least 1");
  if (history.empty()) return StopDecision::proceed;
  const auto best = std::min_element(history.begin(), history.end());
  const auto since = static_cast<std::size_t>(std::distance(best, history.end())) - 1;
  return since >= patience ? StopDecision::stop : StopDecision::proceed;
}

EarlyStopper::EarlyStopper(std::size_t patience)
    : patience_(patience), best_(std::numeric_limits<double>::infinity()) {
  if (patience_ == 0) throw ContractError("early stopping patience must be at least 1");
}

bool EarlyStopper::update(double loss) {
  const bool improved = seen_ == 0 || loss < best_;
  if (improved) {
    best_ = loss;
    best_index_ = seen_;
    since_best_ = 0;
  } else {
    ++since_best_;
  }
  ++seen_;
  return improved;
}

// --- schedules ---------------------------------------------------------------

std::string_view to_string(Regimen regimen) {
  switch (regimen) {
    case Regimen::joint: return "joint";
    case Regimen::stagewise_rl_first: return "stagewise_rl_first";
    case Regimen::distil_then_finetune: return "distil_then_finetune";
  }
  return "?";
}

Regimen parse_regimen(std::string_view name) {
  for (Regimen r : {Regimen::joint, Regimen::stagewise_rl_first, Regimen::distil_then_finetune}) {
    if (to_string(r) == name) return r;
  }
  throw ConfigError("unknown regimen '" + std::string(name) +
                    "' (expected joint, stagewise_rl_first or distil_then_finetune)");
}

namespace {

constexpr std::array<bool, 3> kAll{true, true, true};
constexpr std::array<bool, 3> kHeads{false, false, true};
constexpr std::array<bool, 3> kHeadsBilstm{false, true, true};

void append_unfreezing(std::vector<PhaseSpec>& phases, const std::string& stage, const Objective& objective,
                       StreamMode mode) {
  phases.push_back({stage, "heads", objective, kHeads, mode});
  phases.push_back({stage, "heads+bilstm", objective, kHeadsBilstm, mode});
  phases.push_back({stage, "all", objective, kAll, mode});
}

StreamMode mode_for(const Objective& o) {
  if (o.uses_labeled() && o.uses_unlabeled()) return StreamMode::dual;
  return o.uses_labeled() ? StreamMode::labeled_only : StreamMode::unlabeled_only;
}

}  // namespace

std::vector<PhaseSpec> plan_phases(Regimen regimen, const LossWeights& weights) {
  weights.validate();
  std::vector<PhaseSpec> phases;
  switch (regimen) {
    case Regimen::joint:
      // The labeled stream stays paired with D_u even without distillation
      // terms, so zero beta and gamma replay the exact baseline trajectory.
      phases.push_back({"joint", "joint", {weights.alpha, weights.beta, weights.gamma}, kAll, StreamMode::dual});
      break;
    case Regimen::stagewise_rl_first: {
      const Objective rl{0.0, 1.0, 0.0};
      phases.push_back({"stage1", "rl", rl, kAll, StreamMode::unlabeled_only});
      const Objective stage2{weights.alpha, 0.0, weights.gamma};
      if (!stage2.uses_labeled() && !stage2.uses_unlabeled()) {
        throw ConfigError("stagewise_rl_first: alpha and gamma cannot both be zero");
      }
      append_unfreezing(phases, "stage2", stage2, mode_for(stage2));
      break;
    }
    case Regimen::distil_then_finetune: {
      const Objective distil{0.0, weights.beta, weights.gamma};
      if (!distil.uses_unlabeled()) throw ConfigError("distil_then_finetune: beta and gamma cannot both be zero");
      phases.push_back({"stage1", "distil", distil, kAll, StreamMode::unlabeled_only});
      append_unfreezing(phases, "stage2", Objective{1.0, 0.0, 0.0}, StreamMode::labeled_only);
      break;
    }
  }
  return phases;
}

void ScheduleState::enter(const PhaseSpec& phase) {
  const auto& t = phase.trainable;
  const std::size_t heads = static_cast<std::size_t>(ParamGroup::heads);
  const std::size_t bilstm = static_cast<std::size_t>(ParamGroup::bilstm);
  const std::size_t emb = static_cast<std::size_t>(ParamGroup::embeddings);
  if (!t[heads] && !t[bilstm] && !t[emb]) throw ContractError("phase '" + phase.name + "' trains nothing");
  if ((t[emb] && !t[bilstm]) || (t[bilstm] && !t[heads])) {
    throw ContractError("phase '" + phase.name + "' unfreezes out of heads, bilstm, embeddings order");
  }
  if (!started_ || phase.stage != stage_) {
    if (std::find(visited_.begin(), visited_.end(), phase.stage) != visited_.end()) {
      throw ContractError("stage '" + phase.stage + "' entered again after '" + stage_ + "'");
    }
    if (started_) ++stage_index_;
    started_ = true;
    stage_ = phase.stage;
    visited_.push_back(stage_);
  } else {
    for (std::size_t g = 0; g < 3; ++g) {
      if (unfrozen_[g] && !t[g]) {
        throw ContractError("phase '" + phase.name + "' refreezes " +
                            std::string(to_string(static_cast<ParamGroup>(g))) + " within stage '" + stage_ + "'");
      }
    }
  }
  unfrozen_ = t;
  phase_ = phase.name;
  epochs_in_phase_ = 0;
  best_validation_loss_ = std::numeric_limits<double>::infinity();
  patience_counter_ = 0;
}

void ScheduleState::record_epoch(double validation_loss, bool improved) {
  ++epochs_in_phase_;
  if (improved) {
    best_validation_loss_ = validation_loss;
    patience_counter_ = 0;
  } else {
    ++patience_counter_;
  }
}

// --- training runs -----------------------------------------------------------

namespace {

Regimen regimen_of(std::span<const PhaseSpec> phases) {
  if (phases.front().name == "joint") return Regimen::joint;
  return phases.front().name == "rl" ? Regimen::stagewise_rl_first : Regimen::distil_then_finetune;
}

}  // namespace

std::vector<std::string> TrainResult::stage_history() const {
  std::vector<std::string> out;
  out.reserve(phases.size());
  for (const PhaseSummary& p : phases) out.push_back(p.name);
  return out;
}

namespace {

std::vector<const Encoded*> gather(const std::vector<Encoded>& pool, std::span<const std::size_t> index) {
  std::vector<const Encoded*> out;
  out.reserve(index.size());
  for (std::size_t i : index) out.push_back(&pool[i]);
  return out;
}

Tensor gather_targets(const std::vector<std::vector<double>>& rows, std::span<const std::size_t> index) {
  const std::size_t width = rows[index.front()].size();
  std::vector<double> values;
  values.reserve(index.size() * width);
  for (std::size_t i : index) values.insert(values.end(), rows[i].begin(), rows[i].end());
  return Tensor({index.size(), width}, std::move(values));
}

std::vector<std::size_t> iota(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> out(end - begin);
  for (std::size_t i = begin; i < end; ++i) out[i - begin] = i;
  return out;
}

struct StepLosses {
  std::optional<Tensor> ce, rl, ll;
};

// Unweighted loss terms of one labeled / unlabeled batch pair. Terms with a
// zero weight are never built.
StepLosses batch_losses(const StudentParams& params, const TrainingSet& set, const Objective& objective,
                        std::span<const std::size_t> labeled, std::span<const std::size_t> unlabeled, bool training,
                        Rng& rng) {
  StepLosses out;
  if (objective.uses_labeled() && !labeled.empty()) {
    const auto batch = gather(set.labeled, labeled);
    const EncoderOutput enc = encode(params, batch, training, rng);
    std::vector<std::size_t> labels;
    labels.reserve(labeled.size());
    for (std::size_t i : labeled) labels.push_back(set.labels[i]);
    out.ce = cross_entropy(classify(params, enc.pooled), labels);
  }
  if (objective.uses_unlabeled() && !unlabeled.empty()) {
    const auto batch = gather(set.unlabeled, unlabeled);
    const EncoderOutput enc = encode(params, batch, training, rng);
    if (objective.rl != 0.0) {
      out.rl = representation_loss(project(params, enc.pooled), gather_targets(set.teacher_hidden, unlabeled));
    }
    if (objective.ll != 0.0) {
      out.ll = logit_loss(regress_logits(params, enc.pooled), gather_targets(set.teacher_logits, unlabeled));
    }
  }
  return out;
}

Tensor weighted_total(const Objective& objective, const StepLosses& losses) {
  return joint_loss(LossWeights{objective.ce, objective.rl, objective.ll}, losses.ce, losses.rl, losses.ll);
}

// Does the set carry the data a phase's objective reads?
bool covers(const TrainingSet& set, const Objective& objective) {
  if (objective.uses_labeled() && set.labeled.empty()) return false;
  if (objective.uses_unlabeled() && (set.unlabeled.empty() || !set.has_teacher())) return false;
  return true;
}

}  // namespace

LossBreakdown evaluate_objective(const StudentParams& params, const TrainingSet& set, const Objective& objective,
                                 std::size_t chunk) {
  if (chunk == 0) throw ContractError("evaluate_objective: chunk must be positive");
  NoGradScope no_grad;
  Rng unused(0);
  LossBreakdown out;
  auto chunked_mean = [&](std::size_t n, auto&& term) {
    double total = 0.0;
    for (std::size_t b = 0; b < n; b += chunk) {
      const std::size_t e = std::min(n, b + chunk);
      total += term(iota(b, e)) * static_cast<double>(e - b);
    }
    return total / static_cast<double>(n);
  };
  const Objective only_ce{objective.ce, 0.0, 0.0};
  const Objective only_rl{0.0, objective.rl, 0.0};
  const Objective only_ll{0.0, 0.0, objective.ll};
  if (objective.uses_labeled() && !set.labeled.empty()) {
    out.ce = chunked_mean(set.labeled.size(), [&](const std::vector<std::size_t>& idx) {
      return batch_losses(params, set, only_ce, idx, {}, false, unused).ce->item();
    });
    out.total += objective.ce * *out.ce;
  }
  if (objective.uses_unlabeled() && !set.unlabeled.empty()) {
    if (!set.has_teacher()) throw DataError("evaluate_objective: unlabeled set has no teacher outputs");
    if (objective.rl != 0.0) {
      out.rl = chunked_mean(set.unlabeled.size(), [&](const std::vector<std::size_t>& idx) {
        return batch_losses(params, set, only_rl, {}, idx, false, unused).rl->item();
      });
      out.total += objective.rl * *out.rl;
    }
    if (objective.ll != 0.0) {
      out.ll = chunked_mean(set.unlabeled.size(), [&](const std::vector<std::size_t>& idx) {
        return batch_losses(params, set, only_ll, {}, idx, false, unused).ll->item();
      });
      out.total += objective.ll * *out.ll;
    }
  }
  return out;
}

TrainResult run_phases(StudentParams initial, std::span<const PhaseSpec> phases, const DataSplit& data,
                       const TrainingConfig& config, const TrainingHooks& hooks) {
  if (config.max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (phases.empty()) throw ContractError("run_phases: no phases");
  PrecisionScope precision(config.precision);
  const auto started = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  };

  TrainResult result{std::move(initial), {}, {}, 0, std::nullopt};
  if (hooks.on_init) hooks.on_init(result.params);
  StudentParams& params = result.params;
  Adadelta optimizer(config.optimizer);
  ScheduleState schedule(regimen_of(phases));
  Rng dropout_rng(config.seed ^ 0xd509'0a7e'0000'0002ULL);

  for (std::size_t phase_index = 0; phase_index < phases.size(); ++phase_index) {
    const PhaseSpec& phase = phases[phase_index];
    const Objective& objective = phase.objective;
    if (objective.uses_labeled() && data.train.labeled.empty()) {
      throw DataError("phase '" + phase.name + "' needs labeled training data");
    }
    if (objective.uses_unlabeled() && (data.train.unlabeled.empty() || !data.train.has_teacher())) {
      throw DataError("phase '" + phase.name + "' needs unlabeled instances with teacher records");
    }
    schedule.enter(phase);
    for (std::size_t g = 0; g < 3; ++g) params.set_frozen(static_cast<ParamGroup>(g), !phase.trainable[g]);
    if (hooks.on_phase_start) hooks.on_phase_start(phase, params);

    StreamMode mode = phase.mode;
    if (mode == StreamMode::dual && data.train.unlabeled.empty()) mode = StreamMode::labeled_only;
    if (mode == StreamMode::dual && data.train.labeled.empty()) mode = StreamMode::unlabeled_only;
    DualBatchStream stream(data.train.labeled.size(), data.train.unlabeled.size(), config.batch_size,
                           config.seed + 0x9e37'79b9'7f4a'7c15ULL * (phase_index + 1), mode);

    // Validate on the held-out slice when it carries the objective's data,
    // otherwise on the training set itself.
    const TrainingSet& eval_set = covers(data.validation, objective) ? data.validation : data.train;
    auto validate = [&](std::size_t epoch, const MetricRecord* train_means) {
      MetricRecord m;
      if (train_means) m = *train_means;
      m.step = result.total_steps;
      m.stage = phase.stage;
      m.phase = phase.name;
      m.epoch = epoch;
      m.validation_loss = evaluate_objective(params, eval_set, objective, config.batch_size).total;
      if (!eval_set.labeled.empty()) {
        m.validation_accuracy = accuracy(predict(params, eval_set.labeled, config.batch_size), eval_set.labels);
      }
      m.wall_seconds = elapsed();
      result.metrics.push_back(m);
      if (hooks.on_epoch) hooks.on_epoch(m);
      return m.validation_loss;
    };

    EarlyStopper stopper(config.patience);
    stopper.update(validate(0, nullptr));
    StudentParams best = params.clone();
    PhaseSummary summary{phase.stage, phase.name, 0, 0, stopper.best_loss(), 0};

    std::vector<Tensor> tensors;
    for (NamedTensor& nt : params.named()) tensors.push_back(nt.tensor);

    for (std::size_t epoch = 1; epoch <= config.max_epochs && !stopper.should_stop(); ++epoch) {
      double ce_sum = 0.0, rl_sum = 0.0, ll_sum = 0.0, joint_sum = 0.0;
      const std::vector<DualBatch> batches = stream.next_epoch();
      for (const DualBatch& batch : batches) {
        params.zero_grad();
        const StepLosses losses =
            batch_losses(params, data.train, objective, batch.labeled, batch.unlabeled, true, dropout_rng);
        const Tensor total = weighted_total(objective, losses);
        total.backward();
        optimizer.step(tensors);
        ++result.total_steps;
        ++summary.steps;
        if (losses.ce) ce_sum += losses.ce->item();
        if (losses.rl) rl_sum += losses.rl->item();
        if (losses.ll) ll_sum += losses.ll->item();
        joint_sum += total.item();
        if (hooks.on_step) hooks.on_step(StepEvent{phase, result.total_steps, params});
      }
      const double n = static_cast<double>(batches.size());
      MetricRecord means;
      if (objective.uses_labeled()) means.ce = ce_sum / n;
      if (objective.rl != 0.0) means.rl = rl_sum / n;
      if (objective.ll != 0.0) means.ll = ll_sum / n;
      means.joint = joint_sum / n;
      const double loss = validate(epoch, &means);
      const bool improved = stopper.update(loss);
      schedule.record_epoch(loss, improved);
      ++summary.epochs;
      if (improved) {
        best = params.clone();
        summary.best_epoch = epoch;
        summary.best_validation_loss = loss;
      }
    }
    params = std::move(best);
    params.zero_grad();
    result.phases.push_back(summary);
  }
  return result;
}

namespace {

StudentConfig checked_student(const DataSplit& data, StudentConfig student) {
  if (student.num_classes != data.num_classes) {
    throw ConfigError("student has " + std::to_string(student.num_classes) + " classes, data has " +
                      std::to_string(data.num_classes));
  }
  if (data.teacher_hidden != 0 && student.teacher_hidden != data.teacher_hidden) {
    throw ConfigError("student teacher_hidden " + std::to_string(student.teacher_hidden) +
                      " does not match teacher records (" + std::to_string(data.teacher_hidden) + ")");
  }
  student.validate();
  return student;
}

}  // namespace

TrainResult run_joint(const DataSplit& data, const StudentConfig& student, const LossWeights& weights,
                      const TrainingConfig& config, const TrainingHooks& hooks) {
  const auto phases = plan_phases(Regimen::joint, weights);
  return run_phases(StudentParams::initialize(checked_student(data, student), config.seed), phases, data, config,
                    hooks);
}

TrainResult run_stagewise_rl_first(const DataSplit& data, const StudentConfig& student, const LossWeights& weights,
                                   const TrainingConfig& config, const TrainingHooks& hooks) {
  const auto phases = plan_phases(Regimen::stagewise_rl_first, weights);
  return run_phases(StudentParams::initialize(checked_student(data, student), config.seed), phases, data, config,
                    hooks);
}

TrainResult distil_stage(const DataSplit& data, const StudentConfig& student, const LossWeights& weights,
                         const TrainingConfig& config, const TrainingHooks& hooks) {
  const auto phases = plan_phases(Regimen::distil_then_finetune, weights);
  // Stage 1 only ever sees the unlabeled side of the data.
  DataSplit label_free;
  label_free.num_classes = data.num_classes;
  label_free.teacher_hidden = data.teacher_hidden;
  for (auto [from, to] : {std::pair{&data.train, &label_free.train}, std::pair{&data.validation, &label_free.validation}}) {
    to->unlabeled = from->unlabeled;
    to->unlabeled_ids = from->unlabeled_ids;
    to->teacher_logits = from->teacher_logits;
    to->teacher_hidden = from->teacher_hidden;
    to->teacher_labels = from->teacher_labels;
  }
  return run_phases(StudentParams::initialize(checked_student(data, student), config.seed),
                    std::span(phases).first(1), label_free, config, hooks);
}

TrainResult finetune_stage(const StudentParams& distilled, const DataSplit& data, const TrainingConfig& config,
                           const TrainingHooks& hooks) {
  const auto phases = plan_phases(Regimen::distil_then_finetune, LossWeights{});
  return run_phases(distilled.clone(), std::span(phases).subspan(1), data, config, hooks);
}

TrainResult run_distil_then_finetune(const DataSplit& data, const StudentConfig& student, const LossWeights& weights,
                                     const TrainingConfig& config, const TrainingHooks& hooks) {
  TrainResult first = distil_stage(data, student, weights, config, hooks);
  // Stage 2 continues the global step count of stage 1.
  std::size_t offset = first.total_steps;
  TrainingHooks shifted = hooks;
  if (hooks.on_step) {
    shifted.on_step = [&](const StepEvent& e) { hooks.on_step(StepEvent{e.phase, e.step + offset, e.params}); };
  }
  if (hooks.on_epoch) {
    shifted.on_epoch = [&](const MetricRecord& m) {
      MetricRecord copy = m;
      copy.step += offset;
      hooks.on_epoch(copy);
    };
  }
  shifted.on_init = nullptr;
  TrainResult second = finetune_stage(first.params, data, config, shifted);

  TrainResult out{std::move(second.params), std::move(first.phases), std::move(first.metrics),
                  first.total_steps + second.total_steps, std::move(first.params)};
  out.phases.insert(out.phases.end(), second.phases.begin(), second.phases.end());
  for (MetricRecord& m : second.metrics) {
    m.step += offset;
    out.metrics.push_back(std::move(m));
  }
  return out;
}

TrainResult run_regimen(Regimen regimen, const DataSplit& data, const StudentConfig& student,
                        const LossWeights& weights, const TrainingConfig& config, const TrainingHooks& hooks) {
  switch (regimen) {
    case Regimen::joint: return run_joint(data, student, weights, config, hooks);
    case Regimen::stagewise_rl_first: return run_stagewise_rl_first(data, student, weights, config, hooks);
    case Regimen::distil_then_finetune: return run_distil_then_finetune(data, student, weights, config, hooks);
  }
  throw ContractError("unknown regimen");
}

}  // namespace distil
