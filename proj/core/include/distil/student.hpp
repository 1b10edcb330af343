#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "distil/autodiff.hpp"
#include "distil/tokenizer.hpp"

namespace distil {

struct StudentConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 300;
  std::size_t lstm_hidden = 600;  // per direction
  std::size_t num_classes = 2;
  std::size_t teacher_hidden = 768;
  std::size_t max_len = kDefaultMaxLen;
  double dropout_rate = 0.4;
  double recurrent_dropout_rate = 0.2;

  std::size_t encoding_dim() const noexcept { return 2 * lstm_hidden; }
  void validate() const;
  bool operator==(const StudentConfig&) const = default;
};

// Freeze groups, listed bottom-up. Gradual unfreezing walks them top-down.
enum class ParamGroup : std::uint8_t { embeddings = 0, bilstm = 1, heads = 2 };

std::string_view to_string(ParamGroup group);

// One LSTM direction. Gate columns are laid out [input | forget | output | cell].
struct LstmWeights {
  Tensor input;      // [K x 4L]
  Tensor recurrent;  // [L x 4L]
  Tensor bias;       // [4L]
};

struct NamedTensor {
  std::string name;
  ParamGroup group;
  Tensor tensor;
};

struct StudentParams {
  StudentConfig config;
  Tensor embedding;  // [V x K]
  LstmWeights forward_lstm;
  LstmWeights backward_lstm;
  Tensor classifier;        // [2L x C], probabilities = softmax(z . W)
  Tensor regressor_weight;  // [C x 2L], scores = W z + b
  Tensor regressor_bias;    // [C]
  Tensor projector_weight;  // [H_t x 2L], projection = gelu(W z + b)
  Tensor projector_bias;    // [H_t]

  // Weights and embeddings ~ U(-0.1, 0.1); LSTM biases zero except the
  // forget gate (1.0); head biases zero. Everything starts unfrozen.
  static StudentParams initialize(const StudentConfig& config, std::uint64_t seed);

  // Deep copy; the result shares no storage with *this.
  StudentParams clone() const;

  // Every parameter tensor with its stable name and freeze group.
  std::vector<NamedTensor> named() const;

  void set_frozen(ParamGroup group, bool frozen);
  bool is_frozen(ParamGroup group) const { return frozen_[static_cast<std::size_t>(group)]; }
  void zero_grad();

  // Bitwise equality of config, freeze flags and every value.
  bool identical_to(const StudentParams& other) const;

 private:
  std::array<bool, 3> frozen_{false, false, false};
};

struct EncoderOutput {
  Tensor pooled;                       // z_s, [B x 2L]
  std::vector<Tensor> forward_states;  // per step t, [B x L]
  std::vector<Tensor> backward_states;
  std::vector<std::size_t> lengths;    // valid steps per row
};

// Runs the BiLSTM over each sequence's real tokens and max-pools every
// channel over the valid steps. In training mode dropout is applied to the
// embeddings and to the pooled encoding, and one recurrent-dropout mask per
// sequence and direction is applied to the hidden state fed back into the
// recurrence.
EncoderOutput encode(const StudentParams& params, std::span<const Encoded* const> batch, bool training,
                     Rng& rng);
EncoderOutput encode(const StudentParams& params, std::span<const Encoded> batch, bool training, Rng& rng);

Tensor classify(const StudentParams& params, const Tensor& encoding);
Tensor regress_logits(const StudentParams& params, const Tensor& encoding);
Tensor project(const StudentParams& params, const Tensor& encoding);

// Eval-mode argmax of the classifier head, processed in chunks.
std::vector<std::size_t> predict(const StudentParams& params, std::span<const Encoded> inputs,
                                 std::size_t chunk = 64);

// Little-endian binary dump of config, freeze flags and all tensors.
void save_checkpoint(const StudentParams& params, const std::filesystem::path& path);
StudentParams load_checkpoint(const std::filesystem::path& path);

// Replaces embedding rows of tokens found in a GloVe-style text file
// ("token v1 ... vK" per line). Returns the number of rows replaced.
std::size_t load_pretrained_embeddings(StudentParams& params, const Vocab& vocab,
                                       const std::filesystem::path& path);

}  // namespace distil
