#pragma once

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "driftwatch/chat.hpp"
#include "driftwatch/error.hpp"
#include "driftwatch/hash.hpp"
#include "driftwatch/metrics.hpp"
#include "driftwatch/version.hpp"

namespace driftwatch::store {

namespace fs = std::filesystem;
using nlohmann::json;

enum class BatchStatus { partial, complete };

struct ResponseBatch {
  std::string batch_id;
  std::string system_prompt;
  std::vector<std::string> task_prompts;
  std::uint32_t k = 0;
  std::map<Cell, chat::ChatResponse> cells;
  BatchStatus status = BatchStatus::partial;

  std::size_t expected_cells() const { return task_prompts.size() * k; }

  bool operator==(const ResponseBatch& other) const {
    if (batch_id != other.batch_id) return false;
    if (system_prompt != other.system_prompt) return false;
    if (task_prompts != other.task_prompts) return false;
    if (k != other.k || status != other.status) return false;
    if (cells.size() != other.cells.size()) return false;
    for (auto it = cells.begin(), jt = other.cells.begin(); it != cells.end();
         ++it, ++jt) {
      if (it->first != jt->first) return false;
      const auto& a = it->second;
      const auto& b = jt->second;
      if (a.text != b.text || a.provider != b.provider ||
          a.latency_ms != b.latency_ms ||
          a.request_fingerprint != b.request_fingerprint)
        return false;
    }
    return true;
  }
};

namespace detail {

// ids map to file names; anything outside [A-Za-z0-9._-] is replaced and a
// content hash is appended so distinct ids never collide
inline std::string file_stem(std::string_view batch_id) {
  std::string stem;
  bool mangled = false;
  for (char c : batch_id) {
    bool safe = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                (c >= '0' && c <= '9') || c == '.' || c == '_' || c == '-';
    stem.push_back(safe ? c : '_');
    mangled = mangled || !safe;
  }
  if (stem.empty() || mangled) stem += "-" + hash::hex64(hash::fnv1a64(batch_id));
  return stem;
}

inline fs::path batch_path(const fs::path& dir, std::string_view batch_id) {
  return dir / (file_stem(batch_id) + ".jsonl");
}

inline fs::path lock_path(const fs::path& dir, std::string_view batch_id) {
  return dir / (file_stem(batch_id) + ".lock");
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("no such file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

inline void write_file_atomic(const fs::path& path, std::string_view bytes) {
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw DataError("cannot create " + tmp.string());
  std::size_t off = 0;
  while (off < bytes.size()) {
    ssize_t n = ::write(fd, bytes.data() + off, bytes.size() - off);
    if (n < 0) {
      ::close(fd);
      ::unlink(tmp.c_str());
      throw DataError("write failed: " + tmp.string());
    }
    off += static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    ::unlink(tmp.c_str());
    throw DataError("rename failed: " + path.string());
  }
}

inline json parse_line(const std::string& line, std::size_t lineno) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw CorruptRecordError("malformed record", lineno);
  return j;
}

inline json cell_record(const Cell& cell, const chat::ChatResponse& resp) {
  return json{{"j", cell.j},
              {"i", cell.i},
              {"text", resp.text},
              {"provider", resp.provider},
              {"latency_ms", resp.latency_ms},
              {"fingerprint", resp.request_fingerprint}};
}

inline json batch_header(const ResponseBatch& b) {
  return json{{"schema", kBatchSchema},
              {"batch_id", b.batch_id},
              {"system_prompt", b.system_prompt},
              {"task_prompts", b.task_prompts},
              {"k", b.k}};
}

// splits raw bytes into (lines, torn_tail). A torn tail is trailing bytes
// after the last newline, the footprint of a writer killed mid-append.
inline std::pair<std::vector<std::string>, bool> split_lines(
    std::string_view raw) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < raw.size()) {
    std::size_t nl = raw.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.emplace_back(raw.substr(start));
      return {std::move(lines), true};
    }
    lines.emplace_back(raw.substr(start, nl - start));
    start = nl + 1;
  }
  return {std::move(lines), false};
}

}  // namespace detail

inline void update_status(ResponseBatch& b) {
  b.status = (b.expected_cells() > 0 && b.cells.size() == b.expected_cells())
                 ? BatchStatus::complete
                 : BatchStatus::partial;
}

inline void save_batch(const fs::path& dir, const ResponseBatch& b) {
  if (b.batch_id.empty()) throw DataError("batch_id must be non-empty");
  if (b.k == 0) throw DataError("k must be positive");
  if (b.task_prompts.empty()) throw DataError("task_prompts must be non-empty");
  ResponseBatch check = b;
  update_status(check);
  if (check.status != b.status)
    throw DataError("batch status inconsistent with cell count");
  std::string out = detail::batch_header(b).dump() + "\n";
  for (const auto& [cell, resp] : b.cells) {
    if (cell.j >= b.task_prompts.size() || cell.i >= b.k)
      throw DataError("cell out of range");
    out += detail::cell_record(cell, resp).dump() + "\n";
  }
  fs::create_directories(dir);
  detail::write_file_atomic(detail::batch_path(dir, b.batch_id), out);
}

// Strict loads reject any malformed line, naming it. Lenient loads drop one
// torn final record (no trailing newline) so a crashed collection can resume;
// every other defect stays fatal in both modes.
inline ResponseBatch load_batch(const fs::path& dir, std::string_view batch_id,
                                bool lenient = false) {
  fs::path path = detail::batch_path(dir, batch_id);
  if (!fs::exists(path))
    throw NotFoundError("no such batch: " + std::string(batch_id));
  std::string raw = detail::read_file(path);
  auto [lines, torn] = detail::split_lines(raw);
  if (lines.empty()) throw CorruptRecordError("empty batch file", 1);
  if (torn && lines.size() == 1)
    throw CorruptRecordError("torn header", 1);

  json header = detail::parse_line(lines[0], 1);
  if (header.value("schema", "") != kBatchSchema)
    throw CorruptRecordError("unrecognized schema", 1);

  ResponseBatch b;
  try {
    b.batch_id = header.at("batch_id").get<std::string>();
    b.system_prompt = header.at("system_prompt").get<std::string>();
    b.task_prompts = header.at("task_prompts").get<std::vector<std::string>>();
    b.k = header.at("k").get<std::uint32_t>();
  } catch (const json::exception&) {
    throw CorruptRecordError("incomplete header", 1);
  }
  if (b.k == 0 || b.task_prompts.empty())
    throw CorruptRecordError("degenerate header", 1);
  if (b.batch_id != batch_id)
    throw CorruptRecordError("batch_id mismatch", 1);

  for (std::size_t idx = 1; idx < lines.size(); ++idx) {
    const std::size_t lineno = idx + 1;
    const bool last = idx + 1 == lines.size();
    try {
      json rec = detail::parse_line(lines[idx], lineno);
      Cell cell{rec.at("j").get<std::size_t>(), rec.at("i").get<std::size_t>()};
      if (cell.j >= b.task_prompts.size() || cell.i >= b.k)
        throw CorruptRecordError("cell out of range", lineno);
      chat::ChatResponse resp;
      resp.text = rec.at("text").get<std::string>();
      resp.provider = rec.at("provider").get<std::string>();
      resp.latency_ms = rec.at("latency_ms").get<std::uint64_t>();
      resp.request_fingerprint = rec.at("fingerprint").get<std::string>();
      if (!b.cells.emplace(cell, std::move(resp)).second)
        throw CorruptRecordError("duplicate cell", lineno);
    } catch (const CorruptRecordError&) {
      if (lenient && last && torn) break;
      throw;
    } catch (const json::exception&) {
      if (lenient && last && torn) break;
      throw CorruptRecordError("incomplete record", lineno);
    }
  }
  update_status(b);
  return b;
}

// Append-oriented writer holding exclusive ownership of one batch file via a
// sibling .lock file. Reopening an existing file resumes: prior cells are
// indexed, a torn tail is trimmed, and the header must match.
class BatchWriter {
 public:
  BatchWriter(fs::path dir, std::string batch_id, std::string system_prompt,
              std::vector<std::string> task_prompts, std::uint32_t k)
      : dir_(std::move(dir)), batch_id_(std::move(batch_id)) {
    if (k == 0) throw DataError("k must be positive");
    if (task_prompts.empty()) throw DataError("task_prompts must be non-empty");
    fs::create_directories(dir_);
    lock_path_ = detail::lock_path(dir_, batch_id_);
    int lock_fd =
        ::open(lock_path_.c_str(), O_WRONLY | O_CREAT | O_EXCL, 0644);
    if (lock_fd < 0)
      throw LockError("batch is locked by another writer: " + batch_id_);
    std::string pid = std::to_string(::getpid()) + "\n";
    (void)!::write(lock_fd, pid.data(), pid.size());
    ::close(lock_fd);

    header_.batch_id = batch_id_;
    header_.system_prompt = std::move(system_prompt);
    header_.task_prompts = std::move(task_prompts);
    header_.k = k;

    fs::path path = detail::batch_path(dir_, batch_id_);
    try {
      if (fs::exists(path)) {
        resume(path);
      } else {
        detail::write_file_atomic(path,
                                  detail::batch_header(header_).dump() + "\n");
      }
      fd_ = ::open(path.c_str(), O_WRONLY | O_APPEND);
      if (fd_ < 0) throw DataError("cannot open for append: " + path.string());
    } catch (...) {
      ::unlink(lock_path_.c_str());
      throw;
    }
  }

  BatchWriter(const BatchWriter&) = delete;
  BatchWriter& operator=(const BatchWriter&) = delete;

  ~BatchWriter() { close(); }

  void append(const Cell& cell, const chat::ChatResponse& resp) {
    if (fd_ < 0) throw DataError("writer is closed");
    if (cell.j >= header_.task_prompts.size() || cell.i >= header_.k)
      throw DataError("cell out of range");
    if (present_.count(cell))
      throw DuplicateRecordError("cell written twice: (" +
                                 std::to_string(cell.j) + ", " +
                                 std::to_string(cell.i) + ")");
    std::string line = detail::cell_record(cell, resp).dump() + "\n";
    std::size_t off = 0;
    while (off < line.size()) {
      ssize_t n = ::write(fd_, line.data() + off, line.size() - off);
      if (n < 0) throw DataError("append failed for batch " + batch_id_);
      off += static_cast<std::size_t>(n);
    }
    present_.insert(cell);
  }

  bool has(const Cell& cell) const { return present_.count(cell) != 0; }
  const std::set<Cell>& present() const { return present_; }
  std::size_t expected() const { return header_.expected_cells(); }
  bool complete() const { return present_.size() == expected(); }

  std::vector<Cell> missing() const {
    std::vector<Cell> out;
    for (std::size_t j = 0; j < header_.task_prompts.size(); ++j)
      for (std::size_t i = 0; i < header_.k; ++i)
        if (!present_.count(Cell{j, i})) out.push_back(Cell{j, i});
    return out;
  }

  void close() {
    if (fd_ >= 0) {
      ::fsync(fd_);
      ::close(fd_);
      fd_ = -1;
      ::unlink(lock_path_.c_str());
    }
  }

 private:
  void resume(const fs::path& path) {
    ResponseBatch existing = load_batch(dir_, batch_id_, /*lenient=*/true);
    if (existing.system_prompt != header_.system_prompt ||
        existing.task_prompts != header_.task_prompts ||
        existing.k != header_.k)
      throw DataError("existing batch header disagrees: " + batch_id_);
    for (const auto& [cell, _] : existing.cells) present_.insert(cell);
    // trim a torn tail so appended records start on a fresh line
    std::string raw = detail::read_file(path);
    std::size_t last_nl = raw.rfind('\n');
    if (last_nl != std::string::npos && last_nl + 1 != raw.size())
      fs::resize_file(path, last_nl + 1);
  }

  fs::path dir_;
  std::string batch_id_;
  fs::path lock_path_;
  ResponseBatch header_;
  std::set<Cell> present_;
  int fd_ = -1;
};

// -------- outcome log --------

inline json outcome_record(const metrics::PairOutcome& o) {
  return json{{"pair_id", o.pair_id},
              {"p_value", o.p_value},
              {"decision", stats::to_string(o.decision)},
              {"ground_truth_distinct", o.ground_truth_distinct},
              {"s_obs", o.s_obs}};
}

inline metrics::PairOutcome outcome_from_json(const json& rec) {
  metrics::PairOutcome o;
  o.pair_id = rec.at("pair_id").get<std::string>();
  o.p_value = rec.at("p_value").get<double>();
  std::string d = rec.at("decision").get<std::string>();
  if (d == "distinct")
    o.decision = stats::Decision::distinct;
  else if (d == "insufficient_evidence")
    o.decision = stats::Decision::insufficient_evidence;
  else
    throw DataError("unknown decision: " + d);
  o.ground_truth_distinct = rec.at("ground_truth_distinct").get<bool>();
  o.s_obs = rec.at("s_obs").get<double>();
  return o;
}

// Append-only per-run log rejecting duplicate pair ids. Scanning happens once
// at open; appends are O(1).
class OutcomeLog {
 public:
  OutcomeLog(fs::path dir, std::string run_id)
      : path_(std::move(dir) / "outcomes.jsonl"), run_id_(std::move(run_id)) {
    if (run_id_.empty()) throw DataError("run_id must be non-empty");
    fs::create_directories(path_.parent_path());
    if (fs::exists(path_)) {
      auto [loaded_run, outcomes] = load(path_.parent_path());
      if (loaded_run != run_id_)
        throw DataError("outcome log belongs to run " + loaded_run);
      for (auto& o : outcomes) {
        seen_.insert(o.pair_id);
        outcomes_.push_back(std::move(o));
      }
    } else {
      json header{{"schema", kOutcomesSchema}, {"run_id", run_id_}};
      detail::write_file_atomic(path_, header.dump() + "\n");
    }
    fd_ = ::open(path_.c_str(), O_WRONLY | O_APPEND);
    if (fd_ < 0) throw DataError("cannot open for append: " + path_.string());
  }

  OutcomeLog(const OutcomeLog&) = delete;
  OutcomeLog& operator=(const OutcomeLog&) = delete;

  ~OutcomeLog() {
    if (fd_ >= 0) {
      ::fsync(fd_);
      ::close(fd_);
    }
  }

  void append(const metrics::PairOutcome& o) {
    if (seen_.count(o.pair_id))
      throw DuplicateRecordError("outcome already recorded for pair " +
                                 o.pair_id);
    std::string line = outcome_record(o).dump() + "\n";
    std::size_t off = 0;
    while (off < line.size()) {
      ssize_t n = ::write(fd_, line.data() + off, line.size() - off);
      if (n < 0) throw DataError("append failed: " + path_.string());
      off += static_cast<std::size_t>(n);
    }
    seen_.insert(o.pair_id);
    outcomes_.push_back(o);
  }

  bool has(std::string_view pair_id) const {
    return seen_.count(std::string(pair_id)) != 0;
  }
  const std::vector<metrics::PairOutcome>& outcomes() const {
    return outcomes_;
  }
  const std::string& run_id() const { return run_id_; }

  static std::pair<std::string, std::vector<metrics::PairOutcome>> load(
      const fs::path& dir, bool lenient = false) {
    fs::path path = dir / "outcomes.jsonl";
    if (!fs::exists(path))
      throw NotFoundError("no outcome log in " + dir.string());
    std::string raw = detail::read_file(path);
    auto [lines, torn] = detail::split_lines(raw);
    if (lines.empty()) throw CorruptRecordError("empty outcome log", 1);
    if (torn && lines.size() == 1) throw CorruptRecordError("torn header", 1);
    json header = detail::parse_line(lines[0], 1);
    if (header.value("schema", "") != kOutcomesSchema)
      throw CorruptRecordError("unrecognized schema", 1);
    std::string run_id;
    try {
      run_id = header.at("run_id").get<std::string>();
    } catch (const json::exception&) {
      throw CorruptRecordError("incomplete header", 1);
    }
    std::vector<metrics::PairOutcome> outcomes;
    std::set<std::string> seen;
    for (std::size_t idx = 1; idx < lines.size(); ++idx) {
      const std::size_t lineno = idx + 1;
      const bool last = idx + 1 == lines.size();
      try {
        json rec = detail::parse_line(lines[idx], lineno);
        metrics::PairOutcome o = outcome_from_json(rec);
        if (!seen.insert(o.pair_id).second)
          throw CorruptRecordError("duplicate outcome", lineno);
        outcomes.push_back(std::move(o));
      } catch (const CorruptRecordError&) {
        if (lenient && last && torn) break;
        throw;
      } catch (const std::exception&) {
        if (lenient && last && torn) break;
        throw CorruptRecordError("incomplete record", lineno);
      }
    }
    return {std::move(run_id), std::move(outcomes)};
  }

 private:
  fs::path path_;
  std::string run_id_;
  std::set<std::string> seen_;
  std::vector<metrics::PairOutcome> outcomes_;
  int fd_ = -1;
};

// -------- manifests and small JSON documents --------

inline void write_json_atomic(const fs::path& path, const json& doc) {
  fs::create_directories(path.parent_path());
  detail::write_file_atomic(path, doc.dump(2) + "\n");
}

inline json read_json(const fs::path& path) {
  std::string raw = detail::read_file(path);
  json doc = json::parse(raw, nullptr, false);
  if (doc.is_discarded())
    throw DataError("invalid json document: " + path.string());
  return doc;
}

inline std::string file_digest(const fs::path& path) {
  return hash::hex64(hash::fnv1a64(detail::read_file(path)));
}

}  // namespace driftwatch::store
