#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "peg/error.hpp"

namespace peg {

using Json = nlohmann::json;

// Line-delimited record files. The first line of every file is a header
// object {"format": <name>, "version": <int>}; each following line is one
// JSON object.
inline constexpr int kRecordVersion = 1;

namespace formats {
inline constexpr std::string_view kCorpus = "peg.corpus";
inline constexpr std::string_view kQueries = "peg.queries";
inline constexpr std::string_view kDataset = "peg.dataset";
inline constexpr std::string_view kAudit = "peg.mining_audit";
inline constexpr std::string_view kQrels = "peg.qrels";
inline constexpr std::string_view kMetrics = "peg.metrics";
inline constexpr std::string_view kLossCurve = "peg.loss_curve";
inline constexpr std::string_view kFinetuneAudit = "peg.finetune_audit";
inline constexpr std::string_view kBench = "peg.bench";
}  // namespace formats

/// Writes header + rows. `extra_header` fields are merged into the header line.
class RecordWriter {
 public:
  RecordWriter(const std::filesystem::path& path, std::string_view format, const Json& extra_header = Json::object())
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open '" + path.string() + "' for writing");
    Json header = {{"format", std::string(format)}, {"version", kRecordVersion}};
    for (auto it = extra_header.begin(); it != extra_header.end(); ++it) header[it.key()] = it.value();
    write(header);
  }

  void write(const Json& row) {
    out_ << row.dump() << '\n';
    if (!out_) throw IoError("write failed on '" + path_.string() + "'");
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

struct RecordFile {
  Json header;
  std::vector<Json> rows;
};

inline RecordFile read_records(const std::filesystem::path& path, std::string_view format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  RecordFile file;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    Json value;
    try {
      value = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
    }
    if (!value.is_object()) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": record is not an object");
    }
    if (file.header.is_null()) {
      if (!value.contains("format") || value["format"] != format) {
        throw ValidationError(path.string() + ": expected a '" + std::string(format) + "' header line");
      }
      if (!value.contains("version") || !value["version"].is_number_integer() ||
          value["version"].get<int>() != kRecordVersion) {
        throw ValidationError(path.string() + ": unsupported " + std::string(format) + " version " +
                              (value.contains("version") ? value["version"].dump() : std::string("<missing>")));
      }
      file.header = std::move(value);
      continue;
    }
    file.rows.push_back(std::move(value));
  }
  if (file.header.is_null()) throw ValidationError(path.string() + ": missing header line");
  return file;
}

namespace detail {

template <typename T>
T field(const Json& row, const char* key, const std::filesystem::path& path) {
  try {
    return row.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ValidationError(path.string() + ": record " + row.dump() + " lacks a valid '" + key + "' field");
  }
}

}  // namespace detail

struct Passage {
  std::string id;
  std::string text;
  std::string source_doc;

  friend bool operator==(const Passage&, const Passage&) = default;
};

struct QueryRecord {
  std::string id;
  std::string text;

  friend bool operator==(const QueryRecord&, const QueryRecord&) = default;
};

struct Provenance {
  std::string query_id;
  std::string source_doc;
  std::string generator;
  std::size_t mined = 0;    // candidates returned by the miner
  std::size_t removed = 0;  // candidates removed by the judge

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct DatasetRecord {
  std::string query;
  std::string positive_id;
  std::vector<std::string> negative_ids;
  Provenance provenance;

  friend bool operator==(const DatasetRecord&, const DatasetRecord&) = default;
};

struct AuditRecord {
  std::string query_id;
  std::string candidate_id;
  std::string reason;

  friend bool operator==(const AuditRecord&, const AuditRecord&) = default;
};

inline void write_corpus(const std::filesystem::path& path, const std::vector<Passage>& passages) {
  RecordWriter w(path, formats::kCorpus);
  for (const auto& p : passages) w.write({{"id", p.id}, {"text", p.text}, {"source_doc", p.source_doc}});
}

inline std::vector<Passage> read_corpus(const std::filesystem::path& path) {
  std::vector<Passage> out;
  std::map<std::string, bool> seen;
  for (const auto& row : read_records(path, formats::kCorpus).rows) {
    Passage p{detail::field<std::string>(row, "id", path), detail::field<std::string>(row, "text", path),
              row.value("source_doc", std::string())};
    if (p.text.empty()) throw ValidationError(path.string() + ": passage '" + p.id + "' has empty text");
    if (seen[p.id]) throw ValidationError(path.string() + ": duplicate passage id '" + p.id + "'");
    seen[p.id] = true;
    out.push_back(std::move(p));
  }
  return out;
}

inline void write_queries(const std::filesystem::path& path, const std::vector<QueryRecord>& queries) {
  RecordWriter w(path, formats::kQueries);
  for (const auto& q : queries) w.write({{"id", q.id}, {"text", q.text}});
}

inline std::vector<QueryRecord> read_queries(const std::filesystem::path& path) {
  std::vector<QueryRecord> out;
  for (const auto& row : read_records(path, formats::kQueries).rows) {
    out.push_back({detail::field<std::string>(row, "id", path), detail::field<std::string>(row, "text", path)});
  }
  return out;
}

inline Json to_json(const DatasetRecord& r) {
  return {{"query", r.query},
          {"positive_id", r.positive_id},
          {"negative_ids", r.negative_ids},
          {"provenance",
           {{"query_id", r.provenance.query_id},
            {"source_doc", r.provenance.source_doc},
            {"generator", r.provenance.generator},
            {"mined", r.provenance.mined},
            {"removed", r.provenance.removed}}}};
}

inline void write_dataset(const std::filesystem::path& path, const std::vector<DatasetRecord>& records) {
  RecordWriter w(path, formats::kDataset);
  for (const auto& r : records) w.write(to_json(r));
}

inline std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path) {
  std::vector<DatasetRecord> out;
  for (const auto& row : read_records(path, formats::kDataset).rows) {
    DatasetRecord r;
    r.query = detail::field<std::string>(row, "query", path);
    r.positive_id = detail::field<std::string>(row, "positive_id", path);
    r.negative_ids = detail::field<std::vector<std::string>>(row, "negative_ids", path);
    if (row.contains("provenance")) {
      const Json& p = row["provenance"];
      r.provenance.query_id = p.value("query_id", std::string());
      r.provenance.source_doc = p.value("source_doc", std::string());
      r.provenance.generator = p.value("generator", std::string());
      r.provenance.mined = p.value("mined", std::size_t{0});
      r.provenance.removed = p.value("removed", std::size_t{0});
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_audit(const std::filesystem::path& path, const std::vector<AuditRecord>& records) {
  RecordWriter w(path, formats::kAudit);
  for (const auto& r : records) {
    w.write({{"query_id", r.query_id}, {"candidate_id", r.candidate_id}, {"reason", r.reason}});
  }
}

inline std::vector<AuditRecord> read_audit(const std::filesystem::path& path) {
  std::vector<AuditRecord> out;
  for (const auto& row : read_records(path, formats::kAudit).rows) {
    out.push_back({detail::field<std::string>(row, "query_id", path),
                   detail::field<std::string>(row, "candidate_id", path),
                   detail::field<std::string>(row, "reason", path)});
  }
  return out;
}

/// query_id -> doc_id -> grade. Grades must be >= 1.
inline std::map<std::string, std::map<std::string, int>> read_qrels(const std::filesystem::path& path) {
  std::map<std::string, std::map<std::string, int>> out;
  for (const auto& row : read_records(path, formats::kQrels).rows) {
    const auto grade = detail::field<int>(row, "grade", path);
    if (grade < 1) throw ValidationError(path.string() + ": relevance grades must be >= 1, got " + std::to_string(grade));
    out[detail::field<std::string>(row, "query_id", path)][detail::field<std::string>(row, "doc_id", path)] = grade;
  }
  return out;
}

inline void write_qrels(const std::filesystem::path& path,
                        const std::map<std::string, std::map<std::string, int>>& qrels) {
  RecordWriter w(path, formats::kQrels);
  for (const auto& [q, docs] : qrels) {
    for (const auto& [d, g] : docs) w.write({{"query_id", q}, {"doc_id", d}, {"grade", g}});
  }
}

}  // namespace peg
