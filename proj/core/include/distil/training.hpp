#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "distil/autodiff.hpp"
#include "distil/corpus.hpp"
#include "distil/losses.hpp"
#include "distil/student.hpp"
#include "distil/teacher.hpp"
#include "distil/tokenizer.hpp"

namespace distil {

// --- optimizer ---------------------------------------------------------------

struct AdadeltaOptions {
  double rho = 0.95;
  double eps = 1e-6;
};

struct AdadeltaSlot {
  std::vector<double> square_grad;    // E[g^2]
  std::vector<double> square_update;  // E[dx^2]
};

// One Adadelta update of a single tensor, in place.
void adadelta_update(std::span<double> param, std::span<const double> grad, AdadeltaSlot& slot,
                     const AdadeltaOptions& options);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  // Updates every tensor that requires grad. A missing grad counts as zero;
  // frozen tensors and their state are left untouched.
  virtual void step(std::span<Tensor> params) = 0;
};

class Adadelta final : public Optimizer {
 public:
  explicit Adadelta(AdadeltaOptions options = {});
  void step(std::span<Tensor> params) override;

  const AdadeltaOptions& options() const noexcept { return options_; }
  // Accumulators mirror the parameter list of the first step() call.
  const std::vector<AdadeltaSlot>& slots() const noexcept { return slots_; }

 private:
  AdadeltaOptions options_;
  std::vector<AdadeltaSlot> slots_;
};

// --- data --------------------------------------------------------------------

struct TrainingSet {
  std::vector<Encoded> labeled;
  std::vector<std::size_t> labels;
  std::vector<Encoded> unlabeled;
  std::vector<std::string> unlabeled_ids;
  std::vector<std::vector<double>> teacher_logits;  // per unlabeled instance, empty without records
  std::vector<std::vector<double>> teacher_hidden;
  std::vector<std::size_t> teacher_labels;

  bool has_teacher() const noexcept { return !unlabeled.empty() && teacher_logits.size() == unlabeled.size(); }
};

struct DataSplit {
  TrainingSet train;
  TrainingSet validation;
  std::size_t num_classes = 0;
  std::size_t teacher_hidden = 0;  // 0 without teacher records
};

struct DataOptions {
  std::size_t max_len = kDefaultMaxLen;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
};

// Tokenizes the corpus, attaches teacher outputs to D_u by instance id and
// holds out a class-stratified validation slice of D_l plus a validation
// slice of D_u. An empty records span means no teacher; otherwise every
// unlabeled instance must have a record (DataError names the missing id).
DataSplit prepare_data(const Corpus& corpus, std::span<const TeacherRecord> records, const Vocab& vocab,
                       const DataOptions& options);

// Adds every unlabeled training instance to the labeled set with the
// teacher's hard label; the unlabeled pool stays as is.
DataSplit with_teacher_hard_labels(const DataSplit& data);

// --- batching ----------------------------------------------------------------

struct DualBatch {
  std::vector<std::size_t> labeled;    // indices into the labeled pool
  std::vector<std::size_t> unlabeled;  // indices into the unlabeled pool
};

enum class StreamMode { dual, labeled_only, unlabeled_only };

// Seeded generator of B labeled + B unlabeled indices per step. One epoch is
// one pass over the driving pool (D_u, or D_l in labeled_only mode), padded
// by wrap-around so every batch is full; the other pool reshuffles and
// cycles independently across epochs.
class DualBatchStream {
 public:
  DualBatchStream(std::size_t labeled_count, std::size_t unlabeled_count, std::size_t batch_size,
                  std::uint64_t seed, StreamMode mode = StreamMode::dual);

  std::size_t steps_per_epoch() const noexcept { return steps_per_epoch_; }
  std::vector<DualBatch> next_epoch();

 private:
  std::size_t draw_cycled();

  std::size_t labeled_count_, unlabeled_count_, batch_size_;
  StreamMode mode_;
  std::size_t steps_per_epoch_ = 0;
  Rng rng_;
  std::vector<std::size_t> cycle_;
  std::size_t cycle_pos_ = 0;
};

// --- early stopping ----------------------------------------------------------

enum class StopDecision { proceed, stop };

// Stop once `patience` epochs have passed since the best (lowest, first)
// entry of the history.
StopDecision early_stop(std::span<const double> history, std::size_t patience);

class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience);
  // Records a validation loss; returns true when it is a new best.
  bool update(double loss);
  bool should_stop() const noexcept { return since_best_ >= patience_; }
  double best_loss() const noexcept { return best_; }
  std::size_t best_index() const noexcept { return best_index_; }

 private:
  std::size_t patience_;
  double best_;
  std::size_t best_index_ = 0;
  std::size_t seen_ = 0;
  std::size_t since_best_ = 0;
};

// --- schedules ---------------------------------------------------------------

enum class Regimen { joint, stagewise_rl_first, distil_then_finetune };

std::string_view to_string(Regimen regimen);
Regimen parse_regimen(std::string_view name);

// Loss terms optimized in one phase. A zero weight drops the term entirely.
struct Objective {
  double ce = 0.0;
  double rl = 0.0;
  double ll = 0.0;

  bool uses_labeled() const noexcept { return ce != 0.0; }
  bool uses_unlabeled() const noexcept { return rl != 0.0 || ll != 0.0; }
};

struct PhaseSpec {
  std::string stage;
  std::string name;
  Objective objective;
  std::array<bool, 3> trainable;  // indexed by ParamGroup
  StreamMode mode;
};

// The phase list of a regimen, in execution order.
std::vector<PhaseSpec> plan_phases(Regimen regimen, const LossWeights& weights);

// Tracks the active stage and unfreeze phase. enter() rejects non-monotone
// stage transitions, unfreezing out of heads -> bilstm -> embeddings order,
// and refreezing a group within a stage.
class ScheduleState {
 public:
  explicit ScheduleState(Regimen regimen) : regimen_(regimen) {}

  void enter(const PhaseSpec& phase);
  void record_epoch(double validation_loss, bool improved);

  Regimen regimen() const noexcept { return regimen_; }
  std::size_t stage_index() const noexcept { return stage_index_; }
  const std::string& stage() const noexcept { return stage_; }
  const std::string& phase() const noexcept { return phase_; }
  bool unfrozen(ParamGroup group) const { return unfrozen_[static_cast<std::size_t>(group)]; }
  std::size_t epochs_in_phase() const noexcept { return epochs_in_phase_; }
  double best_validation_loss() const noexcept { return best_validation_loss_; }
  std::size_t patience_counter() const noexcept { return patience_counter_; }

 private:
  Regimen regimen_;
  std::size_t stage_index_ = 0;
  bool started_ = false;
  std::string stage_;
  std::vector<std::string> visited_;
  std::string phase_;
  std::array<bool, 3> unfrozen_{false, false, false};
  std::size_t epochs_in_phase_ = 0;
  double best_validation_loss_ = 0.0;
  std::size_t patience_counter_ = 0;
};

// --- training runs -----------------------------------------------------------

struct TrainingConfig {
  std::size_t batch_size = 64;
  std::size_t max_epochs = 30;  // per phase
  std::size_t patience = 3;
  AdadeltaOptions optimizer;
  std::uint64_t seed = 0;
  Precision precision = Precision::float64;
};

struct MetricRecord {
  std::size_t step = 0;
  std::string stage;
  std::string phase;
  std::size_t epoch = 0;  // 0 is the evaluation before the phase's first step
  std::optional<double> ce, rl, ll, joint;  // epoch means of the training losses
  double validation_loss = 0.0;
  std::optional<double> validation_accuracy;
  double wall_seconds = 0.0;
};

struct PhaseSummary {
  std::string stage;
  std::string name;
  std::size_t epochs = 0;
  std::size_t steps = 0;
  double best_validation_loss = 0.0;
  std::size_t best_epoch = 0;
};

struct StepEvent {
  const PhaseSpec& phase;
  std::size_t step;  // global optimizer step count after this update
  const StudentParams& params;
};

struct TrainingHooks {
  // Called once on freshly initialized parameters, before any evaluation.
  std::function<void(StudentParams&)> on_init;
  // Called once per phase after its freeze flags are applied, before its
  // first evaluation.
  std::function<void(const PhaseSpec&, const StudentParams&)> on_phase_start;
  std::function<void(const StepEvent&)> on_step;
  std::function<void(const MetricRecord&)> on_epoch;
};

struct TrainResult {
  StudentParams params;
  std::vector<PhaseSummary> phases;
  std::vector<MetricRecord> metrics;
  std::size_t total_steps = 0;
  std::optional<StudentParams> distilled;  // label-free checkpoint, distil_then_finetune only

  std::vector<std::string> stage_history() const;
};

// Runs the given phases from `initial`, restoring the best validation
// snapshot at the end of every phase.
TrainResult run_phases(StudentParams initial, std::span<const PhaseSpec> phases, const DataSplit& data,
                       const TrainingConfig& config, const TrainingHooks& hooks = {});

// alpha*CE on labeled batches + beta*RL + gamma*LL on unlabeled batches,
// everything trainable throughout.
TrainResult run_joint(const DataSplit& data, const StudentConfig& student, const LossWeights& weights,
                      const TrainingConfig& config, const TrainingHooks& hooks = {});

// Stage 1: RL alone on D_u. Stage 2: alpha*CE + gamma*LL with gradual
// unfreezing (heads, heads+bilstm, all).
TrainResult run_stagewise_rl_first(const DataSplit& data, const StudentConfig& student, const LossWeights& weights,
                                   const TrainingConfig& config, const TrainingHooks& hooks = {});

// Stage 1 alone: beta*RL + gamma*LL on D_u, never touching labels.
TrainResult distil_stage(const DataSplit& data, const StudentConfig& student, const LossWeights& weights,
                         const TrainingConfig& config, const TrainingHooks& hooks = {});

// Stage 2 alone: CE on D_l with gradual unfreezing, starting from a copy of
// the distilled checkpoint.
TrainResult finetune_stage(const StudentParams& distilled, const DataSplit& data, const TrainingConfig& config,
                           const TrainingHooks& hooks = {});

TrainResult run_distil_then_finetune(const DataSplit& data, const StudentConfig& student, const LossWeights& weights,
                                     const TrainingConfig& config, const TrainingHooks& hooks = {});

TrainResult run_regimen(Regimen regimen, const DataSplit& data, const StudentConfig& student,
                        const LossWeights& weights, const TrainingConfig& config, const TrainingHooks& hooks = {});

// Eval-mode objective on a data set; terms whose data are absent are skipped.
struct LossBreakdown {
  std::optional<double> ce, rl, ll;
  double total = 0.0;
};
LossBreakdown evaluate_objective(const StudentParams& params, const TrainingSet& set, const Objective& objective,
                                 std::size_t chunk = 64);

}  // namespace distil
