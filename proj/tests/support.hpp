#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "distil/autodiff.hpp"
#include "distil/student.hpp"
#include "distil/tokenizer.hpp"

namespace distil::testing {

// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("distil_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// [PAD] [UNK] [CLS] [SEP] followed by w0 .. w{V-5}.
inline Vocab micro_vocab(std::size_t size) {
  std::vector<std::string> tokens{"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
  for (std::size_t i = 0; tokens.size() < size; ++i) tokens.push_back("w" + std::to_string(i));
  return Vocab(tokens);
}

// A framed sequence of `length` real ids (including [CLS] and [SEP]) padded
// to max_len, with word ids drawn from the non-special range of a micro vocab.
inline Encoded random_encoded(std::size_t vocab_size, std::size_t max_len, std::size_t length, Rng& rng) {
  Encoded e;
  e.max_len = max_len;
  e.length = length;
  e.ids.assign(max_len, 0);
  e.ids[0] = 2;
  std::uniform_int_distribution<std::size_t> word(4, vocab_size - 1);
  for (std::size_t t = 1; t + 1 < length; ++t) e.ids[t] = word(rng);
  e.ids[length - 1] = 3;
  return e;
}

inline StudentConfig micro_config() {
  StudentConfig c;
  c.vocab_size = 20;
  c.embed_dim = 4;
  c.lstm_hidden = 3;
  c.num_classes = 3;
  c.teacher_hidden = 6;
  c.max_len = 5;
  c.dropout_rate = 0.0;
  c.recurrent_dropout_rate = 0.0;
  return c;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0, bool requires_grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(element_count(shape));
  for (double& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

struct GradCheck {
  double max_relative_error = 0.0;  // worst single entry
  std::string worst;                // "<tensor name>[<index>]"
  // Worst over tensors of max|analytic - numeric| / max|numeric|. Unlike the
  // per-entry figure it stays meaningful for entries whose gradient is close
  // to zero, where O(eps^2) truncation error dominates.
  double max_tensor_relative_error = 0.0;
  std::string worst_tensor;
  std::size_t checked = 0;
};

// Relative error with a floor on the denominator so entries whose true
// gradient is numerically zero are judged on absolute error.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares autodiff gradients of `loss` against central differences for
// every element of every listed tensor.
inline GradCheck check_gradients(const std::function<Tensor()>& loss, std::vector<std::pair<std::string, Tensor>> wrt,
                                 double eps = 1e-3, double floor = 1e-6) {
  for (auto& [_, t] : wrt) t.zero_grad();
  loss().backward();
  GradCheck out;
  for (auto& [name, t] : wrt) {
    if (!t.requires_grad()) continue;
    const std::vector<double> analytic =
        t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end()) : std::vector<double>(t.size(), 0.0);
    std::span<double> values = t.mutable_values();
    double max_diff = 0.0, max_numeric = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = loss().item();
      values[i] = saved - eps;
      const double down = loss().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(analytic[i], numeric, floor);
      max_diff = std::max(max_diff, std::abs(analytic[i] - numeric));
      max_numeric = std::max(max_numeric, std::abs(numeric));
      ++out.checked;
      if (err > out.max_relative_error) {
        out.max_relative_error = err;
        out.worst = name + "[" + std::to_string(i) + "]";
      }
    }
    const double tensor_err = max_diff / std::max(max_numeric, floor);
    if (tensor_err > out.max_tensor_relative_error) {
      out.max_tensor_relative_error = tensor_err;
      out.worst_tensor = name;
    }
  }
  return out;
}

inline std::vector<std::pair<std::string, Tensor>> named_pairs(const StudentParams& params) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const NamedTensor& nt : params.named()) out.emplace_back(nt.name, nt.tensor);
  return out;
}

// Redraws every parameter from U(-scale, scale). Gradient checks use this to
// get hidden states large enough that max pooling has clear winners.
inline void randomize_params(StudentParams& params, Rng& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (const NamedTensor& nt : params.named()) {
    for (double& v : Tensor(nt.tensor).mutable_values()) v = u(rng);
  }
}

// Smallest gap between the largest and second-largest valid-step value of any
// pooled channel. Central differences are only meaningful when the step size
// moves states by much less than this, so the max-pool argmax cannot switch.
inline double pooling_margin(const EncoderOutput& out) {
  double margin = std::numeric_limits<double>::infinity();
  for (const auto* states : {&out.forward_states, &out.backward_states}) {
    const std::size_t channels = states->front().cols();
    for (std::size_t b = 0; b < out.lengths.size(); ++b) {
      for (std::size_t c = 0; c < channels; ++c) {
        std::vector<double> values;
        for (std::size_t t = 0; t < out.lengths[b]; ++t) values.push_back((*states)[t].at(b, c));
        if (values.size() < 2) continue;
        std::partial_sort(values.begin(), values.begin() + 2, values.end(), std::greater<>());
        margin = std::min(margin, values[0] - values[1]);
      }
    }
  }
  return margin;
}

}  // namespace distil::testing
