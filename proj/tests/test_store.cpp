#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "driftwatch/store.hpp"

using namespace driftwatch;
using namespace driftwatch::store;

namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("driftwatch_store_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

chat::ChatResponse response_for(std::size_t j, std::size_t i) {
  chat::ChatResponse r;
  r.text = "reply " + std::to_string(j) + "/" + std::to_string(i) +
           "\nwith a second line";
  r.provider = "simulator";
  r.latency_ms = 10 * j + i;
  r.request_fingerprint = hash::hex64(hash::fnv1a64(r.text));
  return r;
}

ResponseBatch sample_batch(std::size_t holes = 0) {
  ResponseBatch b;
  b.batch_id = "sample";
  b.system_prompt = "You are a helpful assistant.";
  b.task_prompts = {"First question?", "Second question?"};
  b.k = 2;
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t i = 0; i < 2; ++i)
      b.cells[Cell{j, i}] = response_for(j, i);
  while (holes-- > 0 && !b.cells.empty())
    b.cells.erase(std::prev(b.cells.end()));
  update_status(b);
  return b;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

fs::path batch_file(const fs::path& dir, const std::string& id) {
  return dir / (id + ".jsonl");
}

}  // namespace

TEST_CASE("batch round trip is exact") {
  fs::path dir = fresh_dir("roundtrip");
  ResponseBatch b = sample_batch();
  REQUIRE(b.status == BatchStatus::complete);
  save_batch(dir, b);
  CHECK(load_batch(dir, "sample") == b);

  ResponseBatch partial = sample_batch(1);
  partial.batch_id = "partial";
  REQUIRE(partial.status == BatchStatus::partial);
  save_batch(dir, partial);
  CHECK(load_batch(dir, "partial") == partial);
}

TEST_CASE("unknown batch id raises not-found") {
  fs::path dir = fresh_dir("missing");
  CHECK_THROWS_AS(load_batch(dir, "nope"), NotFoundError);
}

TEST_CASE("status field must agree with cell count") {
  fs::path dir = fresh_dir("status");
  ResponseBatch b = sample_batch();
  b.status = BatchStatus::partial;
  CHECK_THROWS_AS(save_batch(dir, b), DataError);
  b = sample_batch(1);
  b.status = BatchStatus::complete;
  CHECK_THROWS_AS(save_batch(dir, b), DataError);
}

TEST_CASE("truncated final record: strict names the line, lenient resumes") {
  fs::path dir = fresh_dir("torn");
  save_batch(dir, sample_batch());
  fs::path path = batch_file(dir, "sample");
  std::string raw = slurp(path);
  spit(path, raw.substr(0, raw.size() - 7));

  try {
    load_batch(dir, "sample");
    FAIL("strict load accepted a torn file");
  } catch (const CorruptRecordError& e) {
    CHECK(e.line() == 5);
  }

  ResponseBatch partial = load_batch(dir, "sample", /*lenient=*/true);
  CHECK(partial.status == BatchStatus::partial);
  CHECK(partial.cells.size() == 3);
}

TEST_CASE("interior corruption is fatal in both modes") {
  fs::path dir = fresh_dir("interior");
  save_batch(dir, sample_batch());
  fs::path path = batch_file(dir, "sample");
  std::string raw = slurp(path);
  std::size_t first_nl = raw.find('\n');
  std::size_t second_nl = raw.find('\n', first_nl + 1);
  raw.replace(first_nl + 1, second_nl - first_nl - 1, "{\"j\": garbage");
  spit(path, raw);

  CHECK_THROWS_AS(load_batch(dir, "sample"), CorruptRecordError);
  CHECK_THROWS_AS(load_batch(dir, "sample", true), CorruptRecordError);
}

TEST_CASE("newline-terminated malformed final record is corruption") {
  fs::path dir = fresh_dir("badfinal");
  save_batch(dir, sample_batch());
  fs::path path = batch_file(dir, "sample");
  spit(path, slurp(path) + "{\"j\":0,\"i\":1}\n");
  CHECK_THROWS_AS(load_batch(dir, "sample"), CorruptRecordError);
  CHECK_THROWS_AS(load_batch(dir, "sample", true), CorruptRecordError);
}

TEST_CASE("torn header is unrecoverable") {
  fs::path dir = fresh_dir("tornheader");
  save_batch(dir, sample_batch());
  fs::path path = batch_file(dir, "sample");
  std::string raw = slurp(path);
  spit(path, raw.substr(0, raw.find('\n') / 2));
  CHECK_THROWS_AS(load_batch(dir, "sample", true), CorruptRecordError);
}

TEST_CASE("duplicate cell lines are corruption") {
  fs::path dir = fresh_dir("dupcell");
  save_batch(dir, sample_batch());
  fs::path path = batch_file(dir, "sample");
  std::string raw = slurp(path);
  std::size_t first_nl = raw.find('\n');
  std::size_t second_nl = raw.find('\n', first_nl + 1);
  std::string cell_line = raw.substr(first_nl + 1, second_nl - first_nl);
  spit(path, raw + cell_line);
  CHECK_THROWS_AS(load_batch(dir, "sample"), CorruptRecordError);
}

TEST_CASE("ids with path-hostile characters still store cleanly") {
  fs::path dir = fresh_dir("mangled");
  ResponseBatch b = sample_batch();
  b.batch_id = "pair/xyz:a";
  save_batch(dir, b);
  CHECK(load_batch(dir, "pair/xyz:a") == b);
  // distinct hostile ids must not collide on one file
  ResponseBatch c = sample_batch();
  c.batch_id = "pair/xyz_a";
  save_batch(dir, c);
  CHECK(load_batch(dir, "pair/xyz:a").batch_id == "pair/xyz:a");
  CHECK(load_batch(dir, "pair/xyz_a").batch_id == "pair/xyz_a");
}

TEST_CASE("batch writer appends, resumes, and repairs torn tails") {
  fs::path dir = fresh_dir("writer");
  std::vector<std::string> prompts = {"First question?", "Second question?"};
  {
    BatchWriter w(dir, "w1", "sys", prompts, 2);
    CHECK(w.expected() == 4);
    w.append(Cell{0, 0}, response_for(0, 0));
    w.append(Cell{0, 1}, response_for(0, 1));
    CHECK_THROWS_AS(w.append(Cell{0, 0}, response_for(0, 0)),
                    DuplicateRecordError);
    CHECK_THROWS_AS(w.append(Cell{5, 0}, response_for(5, 0)), DataError);
    CHECK_FALSE(w.complete());
    CHECK(w.missing().size() == 2);
  }

  // simulate a crash that tore the last record
  fs::path path = batch_file(dir, "w1");
  std::string raw = slurp(path);
  spit(path, raw + "{\"j\":1,\"i\":0,\"te");

  {
    BatchWriter w(dir, "w1", "sys", prompts, 2);
    CHECK(w.present().size() == 2);
    w.append(Cell{1, 0}, response_for(1, 0));
    w.append(Cell{1, 1}, response_for(1, 1));
    CHECK(w.complete());
  }
  ResponseBatch b = load_batch(dir, "w1");
  CHECK(b.status == BatchStatus::complete);
  CHECK(b.cells.size() == 4);
}

TEST_CASE("writer lock excludes concurrent writers") {
  fs::path dir = fresh_dir("lock");
  std::vector<std::string> prompts = {"Only question?"};
  BatchWriter w(dir, "locked", "sys", prompts, 1);
  CHECK_THROWS_AS(BatchWriter(dir, "locked", "sys", prompts, 1), LockError);
  w.close();
  CHECK_NOTHROW(BatchWriter(dir, "locked", "sys", prompts, 1));
}

TEST_CASE("writer refuses to resume under a different header") {
  fs::path dir = fresh_dir("header");
  std::vector<std::string> prompts = {"Only question?"};
  { BatchWriter w(dir, "h1", "sys", prompts, 2); }
  CHECK_THROWS_AS(BatchWriter(dir, "h1", "other sys", prompts, 2), DataError);
  CHECK_THROWS_AS(BatchWriter(dir, "h1", "sys", prompts, 3), DataError);
}

TEST_CASE("outcome log appends once per pair and preserves order") {
  fs::path dir = fresh_dir("outcomes");
  metrics::PairOutcome o1{"pair-1", 0.02, stats::Decision::distinct, true,
                          0.41};
  metrics::PairOutcome o2{"pair-2", 0.73, stats::Decision::insufficient_evidence,
                          false, 0.98};
  {
    OutcomeLog log(dir, "run-1");
    log.append(o1);
    log.append(o2);
    CHECK_THROWS_AS(log.append(o1), DuplicateRecordError);
    CHECK(log.has("pair-1"));
  }
  auto [run_id, outcomes] = OutcomeLog::load(dir);
  CHECK(run_id == "run-1");
  REQUIRE(outcomes.size() == 2);
  CHECK(outcomes[0] == o1);
  CHECK(outcomes[1] == o2);

  // reopening resumes the duplicate guard
  OutcomeLog log(dir, "run-1");
  CHECK_THROWS_AS(log.append(o2), DuplicateRecordError);
  metrics::PairOutcome o3{"pair-3", 1.0, stats::Decision::insufficient_evidence,
                          false, 1.0};
  CHECK_NOTHROW(log.append(o3));
}

TEST_CASE("outcome log rejects a different run id") {
  fs::path dir = fresh_dir("outcomes_run");
  { OutcomeLog log(dir, "run-1"); }
  CHECK_THROWS_AS(OutcomeLog(dir, "run-2"), DataError);
}

TEST_CASE("ten thousand appends scan back in order") {
  fs::path dir = fresh_dir("volume");
  {
    OutcomeLog log(dir, "bulk");
    for (int n = 0; n < 10000; ++n) {
      metrics::PairOutcome o;
      o.pair_id = "pair-" + std::to_string(n);
      o.p_value = (n % 1000) / 1000.0;
      o.decision = n % 3 == 0 ? stats::Decision::distinct
                              : stats::Decision::insufficient_evidence;
      o.ground_truth_distinct = n % 2 == 0;
      o.s_obs = 1.0 - o.p_value;
      log.append(o);
    }
  }
  auto [run_id, outcomes] = OutcomeLog::load(dir);
  REQUIRE(outcomes.size() == 10000);
  for (int n = 0; n < 10000; ++n)
    REQUIRE(outcomes[n].pair_id == "pair-" + std::to_string(n));
}

TEST_CASE("json documents round trip through atomic writes") {
  fs::path dir = fresh_dir("docs");
  json doc{{"schema", kManifestSchema},
           {"run_id", "r1"},
           {"seeds", {{"master", 42}}}};
  write_json_atomic(dir / "manifest.json", doc);
  CHECK(read_json(dir / "manifest.json") == doc);

  spit(dir / "broken.json", "{oops");
  CHECK_THROWS_AS(read_json(dir / "broken.json"), DataError);
  CHECK_THROWS_AS(read_json(dir / "absent.json"), NotFoundError);
}

TEST_CASE("file digests are stable and content sensitive") {
  fs::path dir = fresh_dir("digest");
  spit(dir / "a.txt", "hello");
  spit(dir / "b.txt", "hello");
  spit(dir / "c.txt", "hello!");
  CHECK(file_digest(dir / "a.txt") == file_digest(dir / "b.txt"));
  CHECK(file_digest(dir / "a.txt") != file_digest(dir / "c.txt"));
}
