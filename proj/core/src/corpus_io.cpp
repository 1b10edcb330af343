#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "distil/corpus.hpp"
#include "distil/error.hpp"

namespace distil {

using nlohmann::json;

void Corpus::validate() const {
  if (num_classes < 2) throw DataError("corpus needs at least 2 classes");
  std::unordered_set<std::string> ids;
  for (const Instance& in : labeled) {
    if (!in.label) throw DataError("labeled instance '" + in.id + "' has no label");
    if (*in.label >= num_classes) {
      throw DataError("instance '" + in.id + "' has label " + std::to_string(*in.label) + " outside [0, " +
                      std::to_string(num_classes) + ")");
    }
    if (!ids.insert(in.id).second) throw DataError("duplicate instance id '" + in.id + "'");
  }
  for (const Instance& in : unlabeled) {
    if (in.label) throw DataError("unlabeled instance '" + in.id + "' carries a label");
    if (!ids.insert(in.id).second) throw DataError("duplicate instance id '" + in.id + "'");
  }
}

namespace {

json instance_json(const Instance& in) {
  json j;
  j["id"] = in.id;
  j["text"] = in.text;
  j["label"] = in.label ? json(*in.label) : json(nullptr);
  return j;
}

Instance parse_instance(const json& j) {
  Instance in;
  in.id = j.at("id").get<std::string>();
  in.text = j.at("text").get<std::string>();
  const json& label = j.at("label");
  if (!label.is_null()) {
    if (!label.is_number_integer() || label.get<long long>() < 0) throw FormatError("label must be a non-negative integer");
    in.label = label.get<std::size_t>();
  }
  return in;
}

template <typename OnHeader, typename OnInstance>
void read_lines(const std::filesystem::path& path, OnHeader on_header, OnInstance on_instance) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (!j.is_object()) throw FormatError("record is not an object");
      if (j.contains("type") && j.at("type") == "header") {
        on_header(j, line_no);
      } else {
        on_instance(parse_instance(j));
      }
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write corpus " + path.string());
  json header;
  header["type"] = "header";
  header["num_classes"] = corpus.num_classes;
  header["seed"] = corpus.provenance.seed;
  header["labeled_per_class"] = corpus.provenance.labeled_per_class;
  header["labeled"] = corpus.provenance.labeled;
  header["unlabeled"] = corpus.provenance.unlabeled;
  out << header.dump() << '\n';
  for (const Instance& in : corpus.labeled) out << instance_json(in).dump() << '\n';
  for (const Instance& in : corpus.unlabeled) out << instance_json(in).dump() << '\n';
  if (!out) throw IoError("failed while writing " + path.string());
}

Corpus load_corpus(const std::filesystem::path& path) {
  Corpus corpus;
  bool have_header = false;
  read_lines(
      path,
      [&](const json& j, std::size_t line_no) {
        if (have_header || line_no != 1) throw FormatError("header record must be the first line");
        have_header = true;
        corpus.num_classes = j.at("num_classes").get<std::size_t>();
        corpus.provenance.seed = j.value("seed", std::uint64_t{0});
        corpus.provenance.labeled_per_class = j.value("labeled_per_class", std::vector<std::size_t>{});
        corpus.provenance.labeled = j.value("labeled", std::size_t{0});
        corpus.provenance.unlabeled = j.value("unlabeled", std::size_t{0});
      },
      [&](Instance in) {
        if (!have_header) throw FormatError("corpus file has no header record");
        (in.label ? corpus.labeled : corpus.unlabeled).push_back(std::move(in));
      });
  if (!have_header) throw FormatError(path.string() + ": corpus file has no header record");
  corpus.validate();
  return corpus;
}

std::vector<Instance> load_instances(const std::filesystem::path& path) {
  std::vector<Instance> out;
  read_lines(
      path, [](const json&, std::size_t) {}, [&](Instance in) { out.push_back(std::move(in)); });
  return out;
}

}  // namespace distil
