#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "distil/error.hpp"
#include "distil/student.hpp"

// Layout (all integers little-endian):
//   "DSTLCKPT" | u32 version
//   u64 vocab_size, embed_dim, lstm_hidden, num_classes, teacher_hidden, max_len
//   f64 dropout_rate, recurrent_dropout_rate
//   u8 frozen[3]
//   u32 tensor_count, then per tensor:
//     u32 name_len | name | u32 ndim | u64 dims[ndim] | f64 values[prod(dims)]

namespace distil {

namespace {

constexpr char kMagic[8] = {'D', 'S', 'T', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  template <typename T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    out_.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) { out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n)); }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  template <typename T>
  T get() {
    std::array<unsigned char, sizeof(T)> bytes;
    read(bytes.data(), sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  void read(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError("checkpoint " + source_ + " is truncated");
  }

 private:
  std::istream& in_;
  std::string source_;
};

}  // namespace

void save_checkpoint(const StudentParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  Writer w(out);
  w.put_bytes(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kVersion);
  const StudentConfig& c = params.config;
  for (std::size_t v : {c.vocab_size, c.embed_dim, c.lstm_hidden, c.num_classes, c.teacher_hidden, c.max_len}) {
    w.put<std::uint64_t>(v);
  }
  w.put<double>(c.dropout_rate);
  w.put<double>(c.recurrent_dropout_rate);
  for (ParamGroup g : {ParamGroup::embeddings, ParamGroup::bilstm, ParamGroup::heads}) {
    w.put<std::uint8_t>(params.is_frozen(g) ? 1 : 0);
  }
  const auto tensors = params.named();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const NamedTensor& nt : tensors) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(nt.name.size()));
    w.put_bytes(nt.name.data(), nt.name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(nt.tensor.shape().size()));
    for (std::size_t d : nt.tensor.shape()) w.put<std::uint64_t>(d);
    for (double v : nt.tensor.values()) w.put<double>(v);
  }
  if (!out) throw IoError("failed while writing checkpoint " + path.string());
}

StudentParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[sizeof(kMagic)];
  r.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw FormatError(path.string() + " is not a student checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));

  StudentConfig c;
  c.vocab_size = r.get<std::uint64_t>();
  c.embed_dim = r.get<std::uint64_t>();
  c.lstm_hidden = r.get<std::uint64_t>();
  c.num_classes = r.get<std::uint64_t>();
  c.teacher_hidden = r.get<std::uint64_t>();
  c.max_len = r.get<std::uint64_t>();
  c.dropout_rate = r.get<double>();
  c.recurrent_dropout_rate = r.get<double>();
  c.validate();
  std::array<bool, 3> frozen{};
  for (bool& f : frozen) f = r.get<std::uint8_t>() != 0;

  // Shapes come from a fresh initialization; the file must agree with them.
  StudentParams params = StudentParams::initialize(c, 0);
  auto tensors = params.named();
  const auto count = r.get<std::uint32_t>();
  if (count != tensors.size()) throw FormatError("checkpoint has " + std::to_string(count) + " tensors, expected " + std::to_string(tensors.size()));
  for (NamedTensor& nt : tensors) {
    std::string name(r.get<std::uint32_t>(), '\0');
    r.read(name.data(), name.size());
    if (name != nt.name) throw FormatError("checkpoint tensor '" + name + "' found where '" + nt.name + "' was expected");
    Shape shape(r.get<std::uint32_t>());
    for (std::size_t& d : shape) d = r.get<std::uint64_t>();
    if (shape != nt.tensor.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + to_string(shape) + ", config implies " +
                        to_string(nt.tensor.shape()));
    }
    for (double& v : nt.tensor.mutable_values()) v = r.get<double>();
  }
  params.set_frozen(ParamGroup::embeddings, frozen[0]);
  params.set_frozen(ParamGroup::bilstm, frozen[1]);
  params.set_frozen(ParamGroup::heads, frozen[2]);
  return params;
}

}  // namespace distil
