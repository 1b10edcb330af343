#include "distil/student.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include "distil/error.hpp"

namespace distil {

void StudentConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("student config: ") + name + " must be positive");
  };
  positive(vocab_size, "vocab_size");
  positive(embed_dim, "embed_dim");
  positive(lstm_hidden, "lstm_hidden");
  positive(num_classes, "num_classes");
  positive(teacher_hidden, "teacher_hidden");
  if (num_classes < 2) throw ConfigError("student config: num_classes must be at least 2");
  if (max_len < 2) throw ConfigError("student config: max_len must be at least 2");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("student config: dropout_rate must be in [0, 1)");
  if (!(recurrent_dropout_rate >= 0.0 && recurrent_dropout_rate < 1.0)) {
    throw ConfigError("student config: recurrent_dropout_rate must be in [0, 1)");
  }
}

std::string_view to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::embeddings: return "embeddings";
    case ParamGroup::bilstm: return "bilstm";
    case ParamGroup::heads: return "heads";
  }
  return "?";
}

namespace {

Tensor uniform(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(element_count(shape));
  for (double& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values), true);
}

LstmWeights init_lstm(std::size_t input_dim, std::size_t hidden, Rng& rng) {
  LstmWeights w;
  w.input = uniform({input_dim, 4 * hidden}, 0.1, rng);
  w.recurrent = uniform({hidden, 4 * hidden}, 0.1, rng);
  std::vector<double> bias(4 * hidden, 0.0);
  std::fill(bias.begin() + static_cast<std::ptrdiff_t>(hidden),
            bias.begin() + static_cast<std::ptrdiff_t>(2 * hidden), 1.0);
  w.bias = Tensor({4 * hidden}, std::move(bias), true);
  return w;
}

}  // namespace

StudentParams StudentParams::initialize(const StudentConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t enc = config.encoding_dim();
  StudentParams p;
  p.config = config;
  p.embedding = uniform({config.vocab_size, config.embed_dim}, 0.1, rng);
  p.forward_lstm = init_lstm(config.embed_dim, config.lstm_hidden, rng);
  p.backward_lstm = init_lstm(config.embed_dim, config.lstm_hidden, rng);
  p.classifier = uniform({enc, config.num_classes}, 0.1, rng);
  p.regressor_weight = uniform({config.num_classes, enc}, 0.1, rng);
  p.regressor_bias = Tensor::zeros({config.num_classes}, true);
  p.projector_weight = uniform({config.teacher_hidden, enc}, 0.1, rng);
  p.projector_bias = Tensor::zeros({config.teacher_hidden}, true);
  return p;
}

std::vector<NamedTensor> StudentParams::named() const {
  return {
      {"embedding", ParamGroup::embeddings, embedding},
      {"forward.input", ParamGroup::bilstm, forward_lstm.input},
      {"forward.recurrent", ParamGroup::bilstm, forward_lstm.recurrent},
      {"forward.bias", ParamGroup::bilstm, forward_lstm.bias},
      {"backward.input", ParamGroup::bilstm, backward_lstm.input},
      {"backward.recurrent", ParamGroup::bilstm, backward_lstm.recurrent},
      {"backward.bias", ParamGroup::bilstm, backward_lstm.bias},
      {"classifier", ParamGroup::heads, classifier},
      {"regressor.weight", ParamGroup::heads, regressor_weight},
      {"regressor.bias", ParamGroup::heads, regressor_bias},
      {"projector.weight", ParamGroup::heads, projector_weight},
      {"projector.bias", ParamGroup::heads, projector_bias},
  };
}

StudentParams StudentParams::clone() const {
  StudentParams p;
  p.config = config;
  p.frozen_ = frozen_;
  p.embedding = embedding.clone();
  p.forward_lstm = {forward_lstm.input.clone(), forward_lstm.recurrent.clone(), forward_lstm.bias.clone()};
  p.backward_lstm = {backward_lstm.input.clone(), backward_lstm.recurrent.clone(), backward_lstm.bias.clone()};
  p.classifier = classifier.clone();
  p.regressor_weight = regressor_weight.clone();
  p.regressor_bias = regressor_bias.clone();
  p.projector_weight = projector_weight.clone();
  p.projector_bias = projector_bias.clone();
  return p;
}

void StudentParams::set_frozen(ParamGroup group, bool frozen) {
  frozen_[static_cast<std::size_t>(group)] = frozen;
  for (NamedTensor& nt : named()) {
    if (nt.group == group) nt.tensor.set_requires_grad(!frozen);
  }
}

void StudentParams::zero_grad() {
  for (NamedTensor& nt : named()) nt.tensor.zero_grad();
}

bool StudentParams::identical_to(const StudentParams& other) const {
  if (!(config == other.config) || frozen_ != other.frozen_) return false;
  const auto mine = named();
  const auto theirs = other.named();
  for (std::size_t i = 0; i < mine.size(); ++i) {
    const Tensor& a = mine[i].tensor;
    const Tensor& b = theirs[i].tensor;
    if (a.shape() != b.shape()) return false;
    if (std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

namespace {

// Runs one LSTM direction. Rows whose step is outside their sequence carry
// their previous state unchanged, so the backward direction starts from a
// zero state at each sequence's own last token.
std::vector<Tensor> run_direction(const LstmWeights& w, const Tensor& embedded, std::size_t steps,
                                  std::size_t batch, std::span<const std::size_t> lengths, bool reverse,
                                  const Tensor& recurrent_mask) {
  const std::size_t hidden = w.recurrent.shape()[0];
  const Tensor projected = add_bias(matmul(embedded, w.input), w.bias);  // [T*B x 4L]

  Tensor h = Tensor::zeros({batch, hidden});
  Tensor c = Tensor::zeros({batch, hidden});
  std::vector<Tensor> states(steps);
  std::vector<std::uint8_t> active(batch);
  for (std::size_t i = 0; i < steps; ++i) {
    const std::size_t t = reverse ? steps - 1 - i : i;
    for (std::size_t b = 0; b < batch; ++b) active[b] = t < lengths[b] ? 1 : 0;

    const Tensor h_in = recurrent_mask.defined() ? mul(h, recurrent_mask) : h;
    const Tensor gates = add(slice_rows(projected, t * batch, batch), matmul(h_in, w.recurrent));
    const Tensor in_gate = sigmoid(slice_cols(gates, 0, hidden));
    const Tensor forget_gate = sigmoid(slice_cols(gates, hidden, hidden));
    const Tensor out_gate = sigmoid(slice_cols(gates, 2 * hidden, hidden));
    const Tensor candidate = tanh(slice_cols(gates, 3 * hidden, hidden));

    const Tensor c_next = add(mul(forget_gate, c), mul(in_gate, candidate));
    const Tensor h_next = mul(out_gate, tanh(c_next));
    c = select_rows(active, c_next, c);
    h = select_rows(active, h_next, h);
    states[t] = h;
  }
  return states;
}

}  // namespace

EncoderOutput encode(const StudentParams& params, std::span<const Encoded* const> batch, bool training,
                     Rng& rng) {
  if (batch.empty()) throw ContractError("encode: empty batch");
  const StudentConfig& cfg = params.config;
  const std::size_t B = batch.size();

  EncoderOutput out;
  out.lengths.resize(B);
  std::size_t steps = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const Encoded& e = *batch[b];
    if (e.length < 1 || e.length > e.ids.size()) {
      throw ContractError("encode: sequence length " + std::to_string(e.length) + " is invalid");
    }
    out.lengths[b] = e.length;
    steps = std::max(steps, e.length);
  }

  // Time-major ids: row t*B + b. Steps past a sequence's end reuse its
  // first id; those rows never reach the carried state.
  std::vector<std::size_t> ids(steps * B);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t b = 0; b < B; ++b) {
      const Encoded& e = *batch[b];
      const std::size_t id = t < e.length ? e.ids[t] : e.ids[0];
      if (id >= cfg.vocab_size) {
        throw ContractError("encode: token id " + std::to_string(id) + " exceeds vocab size " +
                            std::to_string(cfg.vocab_size));
      }
      ids[t * B + b] = id;
    }
  }

  const Tensor embedded = dropout(gather_rows(params.embedding, ids), cfg.dropout_rate, training, rng);

  Tensor fwd_mask, bwd_mask;
  if (training && cfg.recurrent_dropout_rate > 0.0) {
    fwd_mask = dropout_mask({B, cfg.lstm_hidden}, cfg.recurrent_dropout_rate, rng);
    bwd_mask = dropout_mask({B, cfg.lstm_hidden}, cfg.recurrent_dropout_rate, rng);
  }
  out.forward_states = run_direction(params.forward_lstm, embedded, steps, B, out.lengths, false, fwd_mask);
  out.backward_states = run_direction(params.backward_lstm, embedded, steps, B, out.lengths, true, bwd_mask);

  const Tensor pooled = concat_cols(max_over_time(out.forward_states, out.lengths),
                                    max_over_time(out.backward_states, out.lengths));
  out.pooled = dropout(pooled, cfg.dropout_rate, training, rng);
  return out;
}

EncoderOutput encode(const StudentParams& params, std::span<const Encoded> batch, bool training, Rng& rng) {
  std::vector<const Encoded*> ptrs;
  ptrs.reserve(batch.size());
  for (const Encoded& e : batch) ptrs.push_back(&e);
  return encode(params, std::span<const Encoded* const>(ptrs), training, rng);
}

Tensor classify(const StudentParams& params, const Tensor& encoding) {
  return softmax(matmul(encoding, params.classifier));
}

Tensor regress_logits(const StudentParams& params, const Tensor& encoding) {
  return add_bias(matmul(encoding, transpose(params.regressor_weight)), params.regressor_bias);
}

Tensor project(const StudentParams& params, const Tensor& encoding) {
  return gelu(add_bias(matmul(encoding, transpose(params.projector_weight)), params.projector_bias));
}

std::vector<std::size_t> predict(const StudentParams& params, std::span<const Encoded> inputs, std::size_t chunk) {
  if (chunk == 0) throw ContractError("predict: chunk size must be positive");
  // Eval mode never draws from the generator.
  Rng unused(0);
  std::vector<std::size_t> labels;
  labels.reserve(inputs.size());
  for (std::size_t start = 0; start < inputs.size(); start += chunk) {
    const auto part = inputs.subspan(start, std::min(chunk, inputs.size() - start));
    const Tensor probs = classify(params, encode(params, part, false, unused).pooled);
    const std::size_t C = probs.cols();
    const auto v = probs.values();
    for (std::size_t r = 0; r < part.size(); ++r) {
      const auto row = v.subspan(r * C, C);
      labels.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return labels;
}

std::size_t load_pretrained_embeddings(StudentParams& params, const Vocab& vocab, const std::filesystem::path& path) {
  if (vocab.size() != params.config.vocab_size) {
    throw ConfigError("pretrained embeddings: vocab has " + std::to_string(vocab.size()) +
                      " tokens but the student expects " + std::to_string(params.config.vocab_size));
  }
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embeddings file " + path.string());
  const std::size_t K = params.config.embed_dim;
  auto table = params.embedding.mutable_values();
  std::size_t replaced = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token)) continue;
    std::vector<double> row;
    double v;
    while (fields >> v) row.push_back(v);
    if (row.size() != K) {
      throw FormatError("embeddings line " + std::to_string(line_no) + ": expected " + std::to_string(K) +
                        " values, got " + std::to_string(row.size()));
    }
    if (!vocab.contains(token)) continue;
    std::copy(row.begin(), row.end(), table.begin() + static_cast<std::ptrdiff_t>(vocab.id(token) * K));
    ++replaced;
  }
  return replaced;
}

}  // namespace distil
