// driftwatch: audit a black-box chat service for hidden system-prompt
// steering by comparing embedded response distributions.
//
// Exit codes: 0 success, 1 operational error, 2 invalid usage.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "driftwatch/collect.hpp"
#include "driftwatch/embedder.hpp"
#include "driftwatch/error.hpp"
#include "driftwatch/harness.hpp"
#include "driftwatch/http_backends.hpp"
#include "driftwatch/metrics.hpp"
#include "driftwatch/prompts.hpp"
#include "driftwatch/store.hpp"
#include "driftwatch/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace driftwatch;

namespace {

struct GlobalOpts {
  std::string data_dir = DRIFTWATCH_DATA_DIR;
};

struct BackendOpts {
  std::string kind = "simulator";
  double bias_strength = 0.8;
  std::vector<std::string> triggers;
  std::uint32_t reply_length = 32;
  std::uint64_t seed_salt = 0;
  std::string base_url;
  std::string api_key_env;
  std::uint32_t timeout_ms = 30000;
};

struct PolicyOpts {
  std::uint32_t max_in_flight = 4;
  std::uint32_t retry_limit = 2;
  std::uint32_t backoff_ms = 100;
  std::optional<std::uint32_t> per_minute_cap;
  std::uint32_t rate_window_ms = 60000;
};

void add_backend_flags(CLI::App* sub, BackendOpts& o) {
  sub->add_option("--backend", o.kind, "simulator | openai_compat | anthropic")
      ->check(CLI::IsMember({"simulator", "openai_compat", "anthropic"}))
      ->capture_default_str();
  sub->add_option("--bias-strength", o.bias_strength,
                  "simulator marker substitution rate when triggered")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  sub->add_option("--trigger", o.triggers,
                  "simulator trigger substring (repeatable; default: the "
                  "bundled belief, controversy and deployment labels)");
  sub->add_option("--reply-length", o.reply_length,
                  "simulator tokens per reply")
      ->capture_default_str();
  sub->add_option("--seed-salt", o.seed_salt, "simulator stream salt")
      ->capture_default_str();
  sub->add_option("--base-url", o.base_url, "remote API root, e.g. https://…");
  sub->add_option("--api-key-env", o.api_key_env,
                  "environment variable holding the API key");
  sub->add_option("--timeout-ms", o.timeout_ms, "remote request timeout")
      ->capture_default_str();
}

void add_policy_flags(CLI::App* sub, PolicyOpts& o) {
  sub->add_option("--max-in-flight", o.max_in_flight,
                  "concurrent requests during collection")
      ->capture_default_str();
  sub->add_option("--retry-limit", o.retry_limit,
                  "retries per cell on transient failures")
      ->capture_default_str();
  sub->add_option("--backoff-ms", o.backoff_ms, "base retry backoff")
      ->capture_default_str();
  sub->add_option("--per-minute-cap", o.per_minute_cap,
                  "request rate cap per rate window");
  sub->add_option("--rate-window-ms", o.rate_window_ms,
                  "rate limiter window length")
      ->capture_default_str();
}

harness::BackendDescriptor make_descriptor(const BackendOpts& o,
                                           const fs::path& data_dir) {
  harness::BackendDescriptor d;
  d.kind = o.kind;
  d.simulator = chat::default_simulator_params();
  d.simulator.bias_strength = o.bias_strength;
  d.simulator.reply_length = o.reply_length;
  d.simulator.seed_salt = o.seed_salt;
  d.simulator.bias_triggers =
      o.triggers.empty() ? harness::simulator_triggers(data_dir) : o.triggers;
  d.base_url = o.base_url;
  d.api_key_env = o.api_key_env;
  if (d.api_key_env.empty())
    d.api_key_env =
        o.kind == "anthropic" ? "ANTHROPIC_API_KEY" : "OPENAI_API_KEY";
  d.timeout_ms = o.timeout_ms;
  return d;
}

collect::CollectionPolicy make_policy(const PolicyOpts& o) {
  collect::CollectionPolicy p;
  p.max_in_flight = o.max_in_flight;
  p.retry_limit = o.retry_limit;
  p.backoff_base_ms = o.backoff_ms;
  p.per_minute_cap = o.per_minute_cap;
  p.rate_window_ms = o.rate_window_ms;
  return p;
}

// ---- pairs file io -----------------------------------------------------------

void write_pairs_jsonl(const fs::path& path,
                       const std::vector<prompts::PromptPair>& pairs,
                       const std::string& domain) {
  std::string out = json{{"schema", kPairsSchema},
                         {"domain", domain},
                         {"count", pairs.size()}}
                        .dump() +
                    "\n";
  for (const auto& p : pairs) out += harness::pair_to_json(p).dump() + "\n";
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  store::detail::write_file_atomic(path, out);
}

std::pair<std::string, std::vector<prompts::PromptPair>> read_pairs_jsonl(
    const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw NotFoundError("cannot open pairs file: " + path.string());
  std::string line;
  if (!std::getline(in, line))
    throw CorruptRecordError("pairs file is empty: " + path.string(), 1);
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception&) {
    throw CorruptRecordError("pairs file header is not valid json", 1);
  }
  if (header.value("schema", "") != kPairsSchema)
    throw DataError("pairs file has schema '" + header.value("schema", "") +
                    "', expected " + kPairsSchema);
  std::string domain = header.value("domain", "custom");
  std::vector<prompts::PromptPair> pairs;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      pairs.push_back(harness::pair_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw CorruptRecordError(
          "pairs file record " + std::to_string(lineno) + ": " + e.what(),
          lineno);
    }
  }
  return {domain, pairs};
}

std::vector<std::string> read_task_prompt_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in.good())
    throw NotFoundError("cannot open task prompt file: " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(line);
  if (out.empty()) throw DataError("task prompt file is empty");
  return out;
}

// ---- generate-pairs ----------------------------------------------------------

struct GeneratePairsOpts {
  std::string domain;
  double control_fraction = 0.25;
  std::string control_style = "mixed";
  std::uint64_t seed = 0;
  std::uint32_t repeat_count = 50;
  std::string out;
};

void run_generate_pairs(const GlobalOpts& g, const GeneratePairsOpts& o) {
  harness::ExperimentSpec spec;
  spec.domain = prompts::domain_from_string(o.domain);
  spec.control_fraction = o.control_fraction;
  spec.control_style = prompts::control_style_from_string(o.control_style);
  spec.master_seed = o.seed;
  spec.repeat_count = o.repeat_count;

  auto pairs = harness::universe(spec, g.data_dir);
  std::size_t controls = 0;
  for (const auto& p : pairs) controls += p.is_control;
  write_pairs_jsonl(o.out, pairs, o.domain);

  std::printf("%zu pairs (%zu controls)\n", pairs.size(), controls);
  std::printf("domain: %s  distinct: %zu  controls: %zu  seed: %llu\n",
              o.domain.c_str(), pairs.size() - controls, controls,
              static_cast<unsigned long long>(o.seed));
  std::printf("out: %s\n", o.out.c_str());
}

// ---- collect -----------------------------------------------------------------

struct CollectOpts {
  std::string pairs;
  std::string experiment = "auto";
  std::string task_prompt_file;
  std::uint32_t k = 10;
  std::string out;
  std::uint64_t seed = 0;
  std::string model = "simulator";
  double temperature = 1.0;
  std::uint32_t max_tokens = 256;
  BackendOpts backend;
  PolicyOpts policy;
};

std::vector<std::string> resolve_task_prompts(const GlobalOpts& g,
                                              const CollectOpts& o,
                                              const std::string& domain) {
  if (!o.task_prompt_file.empty())
    return read_task_prompt_file(o.task_prompt_file);
  std::string exp = o.experiment;
  if (exp == "auto") {
    if (domain == "religious") exp = "religion";
    else if (domain == "conspiratorial") exp = "conspiracy";
    else if (domain == "grok") exp = "grok";
    else
      throw DataError("pairs file has domain '" + domain +
                      "'; pass --experiment or --task-prompts");
  }
  return prompts::load_task_prompts(prompts::experiment_from_string(exp),
                                    g.data_dir);
}

void run_collect(const GlobalOpts& g, const CollectOpts& o) {
  auto [domain, pairs] = read_pairs_jsonl(o.pairs);
  if (pairs.empty()) throw DataError("pairs file holds no pairs");
  std::vector<std::string> tasks = resolve_task_prompts(g, o, domain);

  auto backend = http::make_backend(make_descriptor(o.backend, g.data_dir));
  collect::CollectionPolicy policy = make_policy(o.policy);
  collect::RequestShape shape;
  shape.model_id = o.model;
  shape.temperature = o.temperature;
  shape.max_tokens = o.max_tokens;

  fs::path out_dir(o.out);
  fs::create_directories(out_dir / "batches");
  write_pairs_jsonl(out_dir / "pairs.jsonl", pairs, domain);

  collect::CollectStats totals;
  std::size_t incomplete_batches = 0, missing_cells = 0;
  for (const auto& pair : pairs) {
    for (char side : {'a', 'b'}) {
      std::string batch_id = pair.id + "." + side;
      const std::string& prompt = side == 'a' ? pair.prompt_a : pair.prompt_b;
      std::uint64_t key = rng::mix(
          o.seed, hash::fnv1a64(pair.id + "/" + std::string(1, side)));
      collect::CollectStats stats;
      try {
        collect::collect_batch(out_dir / "batches", batch_id, prompt, tasks,
                               o.k, *backend, policy, key, shape, &stats);
      } catch (const BatchIncompleteError& e) {
        ++incomplete_batches;
        missing_cells += e.missing().size();
        std::fprintf(stderr, "batch %s: %zu cells missing\n", batch_id.c_str(),
                     e.missing().size());
      }
      totals.requests_made += stats.requests_made;
      totals.cells_fetched += stats.cells_fetched;
      totals.cells_resumed += stats.cells_resumed;
      totals.retries += stats.retries;
    }
  }

  std::printf("%zu new requests\n", totals.requests_made);
  std::fprintf(stderr,
               "collected %zu cells (%zu resumed, %zu retries) across %zu "
               "batches\n",
               totals.cells_fetched, totals.cells_resumed, totals.retries,
               pairs.size() * 2);
  if (incomplete_batches > 0)
    throw driftwatch::Error("collection incomplete: " +
                            std::to_string(missing_cells) +
                            " cells missing across " +
                            std::to_string(incomplete_batches) + " batches");
}

// ---- test --------------------------------------------------------------------

struct TestOpts {
  std::string batches;
  std::uint32_t n_perm = 1000;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  std::string out;
  std::uint32_t dimension = 256;
  std::string run_id;
  unsigned workers = 1;
  std::string format = "table";
};

void print_outcomes_jsonl(const std::vector<metrics::PairOutcome>& outcomes) {
  for (const auto& o : outcomes)
    std::printf("%s\n", store::outcome_record(o).dump().c_str());
}

void run_test(const GlobalOpts&, const TestOpts& o) {
  fs::path in_dir(o.batches);
  fs::path out_dir = o.out.empty() ? in_dir : fs::path(o.out);
  fs::create_directories(out_dir);
  auto [domain, pairs] = read_pairs_jsonl(in_dir / "pairs.jsonl");
  if (pairs.empty()) throw DataError("pairs file holds no pairs");

  embed::EmbedderSpec espec;
  espec.dimension = o.dimension;
  embed::LocalHashEmbedder inner(espec);
  embed::CachedEmbedder embedder(inner, out_dir / "cache");

  std::string run_id =
      o.run_id.empty()
          ? "run-" + hash::hex64(rng::mix(o.seed, hash::fnv1a64("cli-test")))
          : o.run_id;
  store::OutcomeLog log(out_dir, run_id);

  std::vector<harness::ErroredPair> errored;
  std::uint32_t k_seen = 0;
  for (const auto& pair : pairs) {
    if (log.has(pair.id)) continue;
    try {
      auto a = store::load_batch(in_dir / "batches", pair.id + ".a");
      auto b = store::load_batch(in_dir / "batches", pair.id + ".b");
      if (k_seen == 0) k_seen = a.k;
      stats::EmbeddingGroup g1 = harness::group_from_batch(a, embedder);
      stats::EmbeddingGroup g2 = harness::group_from_batch(b, embedder);
      stats::TestConfig cfg;
      cfg.n_perm = o.n_perm;
      cfg.alpha = o.alpha;
      cfg.seed = rng::mix(o.seed, hash::fnv1a64(pair.id));
      auto result = stats::permutation_test(g1, g2, cfg, o.workers);
      metrics::PairOutcome outcome;
      outcome.pair_id = pair.id;
      outcome.p_value = result.p_value;
      outcome.decision = result.decision;
      outcome.ground_truth_distinct = pair.ground_truth_distinct;
      outcome.s_obs = result.s_obs;
      log.append(outcome);
    } catch (const driftwatch::Error& e) {
      errored.push_back({pair.id, e.what()});
      std::fprintf(stderr, "pair %s: %s\n", pair.id.c_str(), e.what());
    }
  }

  harness::ReportInputs inputs{run_id, domain,   o.alpha,
                               k_seen, o.n_perm, o.seed};
  harness::ExperimentReport report = harness::aggregate(
      inputs, log.outcomes(), errored, in_dir / "batches");
  harness::write_report_files(out_dir, report);

  if (o.format == "json-lines") {
    std::vector<metrics::PairOutcome> sorted = log.outcomes();
    std::sort(sorted.begin(), sorted.end(), [](const auto& x, const auto& y) {
      return x.pair_id < y.pair_id;
    });
    print_outcomes_jsonl(sorted);
  } else {
    std::fputs(harness::render_report_text(report).c_str(), stdout);
  }
  if (report.completed == 0)
    throw driftwatch::Error("no pair produced an outcome");
}

// ---- report ------------------------------------------------------------------

struct ReportOpts {
  std::string run;
  std::optional<double> alpha;
  std::string format = "table";
};

void run_report(const GlobalOpts&, const ReportOpts& o) {
  fs::path run_dir(o.run);
  auto [run_id, outcomes] = store::OutcomeLog::load(run_dir);

  harness::ReportInputs inputs;
  inputs.run_id = run_id;
  inputs.domain = "unknown";
  if (fs::exists(run_dir / "report.json")) {
    json base = store::read_json(run_dir / "report.json");
    inputs.domain = base.value("domain", "unknown");
    inputs.alpha = base.value("alpha", 0.05);
    inputs.k = base.value("k", 0);
    inputs.n_perm = base.value("n_perm", 0);
    inputs.master_seed = base.value("master_seed", 0ULL);
  }
  if (o.alpha) {
    inputs.alpha = *o.alpha;
    // stored p-values are alpha-free; only the decision rule moves
    for (auto& out : outcomes)
      out.decision = out.p_value < *o.alpha
                         ? stats::Decision::distinct
                         : stats::Decision::insufficient_evidence;
  }

  harness::ExperimentReport report = harness::aggregate(
      inputs, std::move(outcomes), {}, run_dir / "batches");
  if (o.format == "json-lines") {
    std::printf("%s\n", harness::report_to_json(report).dump().c_str());
  } else {
    std::fputs(harness::render_report_text(report).c_str(), stdout);
  }
}

// ---- monitor -----------------------------------------------------------------

struct MonitorOpts {
  std::string baseline;
  std::string baseline_id = "baseline";
  std::string out;
  bool init = false;
  std::string system_prompt;
  std::string experiment = "grok";
  std::string task_prompt_file;
  std::uint32_t k = 10;
  double interval = 0.0;
  std::size_t checkpoints = 0;  // 0: one for single-shot, unbounded otherwise
  std::string correction = "bh";
  std::string alert_cmd;
  double alpha = 0.05;
  std::uint32_t n_perm = 500;
  std::uint64_t seed = 0;
  std::uint32_t dimension = 256;
  std::string format = "table";
  std::string model = "simulator";
  BackendOpts backend;
  PolicyOpts policy;
};

std::vector<harness::CheckpointResult> load_monitor_state(
    const fs::path& path, const std::string& baseline_id) {
  std::vector<harness::CheckpointResult> prior;
  if (!fs::exists(path)) return prior;
  std::ifstream in(path, std::ios::binary);
  std::string line;
  if (!std::getline(in, line))
    throw CorruptRecordError("monitor state: missing header", 1);
  json header = json::parse(line);
  if (header.value("schema", "") != kMonitorSchema)
    throw DataError("monitor state has unexpected schema");
  if (header.value("baseline", "") != baseline_id)
    throw DataError("monitor state belongs to baseline '" +
                    header.value("baseline", "") + "'");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      throw CorruptRecordError("monitor state record " +
                                   std::to_string(lineno) + " is malformed",
                               lineno);
    }
    harness::CheckpointResult r;
    r.index = j.at("index").get<std::size_t>();
    r.p_value = j.at("p_value").get<double>();
    r.s_obs = j.at("s_obs").get<double>();
    prior.push_back(r);
  }
  return prior;
}

void run_monitor(const GlobalOpts& g, const MonitorOpts& o) {
  fs::path base_dir(o.baseline);
  fs::path state_dir = o.out.empty() ? base_dir : fs::path(o.out);
  fs::create_directories(state_dir / "batches");

  if (o.init) {
    if (o.system_prompt.empty())
      throw DataError("--init requires --system-prompt");
    std::vector<std::string> tasks =
        o.task_prompt_file.empty()
            ? prompts::load_task_prompts(
                  prompts::experiment_from_string(o.experiment), g.data_dir)
            : read_task_prompt_file(o.task_prompt_file);
    auto backend = http::make_backend(make_descriptor(o.backend, g.data_dir));
    store::ResponseBatch batch = collect::collect_batch(
        base_dir / "batches", o.baseline_id, o.system_prompt, tasks, o.k,
        *backend, make_policy(o.policy),
        rng::mix(o.seed, hash::fnv1a64("baseline")));
    std::printf("baseline %s: %zu responses (%zu prompts x k=%u)\n",
                o.baseline_id.c_str(), batch.cells.size(),
                batch.task_prompts.size(), batch.k);
    return;
  }

  store::ResponseBatch baseline =
      store::load_batch(base_dir / "batches", o.baseline_id);

  embed::EmbedderSpec espec;
  espec.dimension = o.dimension;
  embed::LocalHashEmbedder inner(espec);
  embed::CachedEmbedder embedder(inner, state_dir / "cache");

  harness::MonitorConfig cfg;
  cfg.n_perm = o.n_perm;
  cfg.alpha = o.alpha;
  cfg.correction = harness::correction_from_string(o.correction);
  cfg.master_seed = o.seed;
  harness::Monitor monitor(baseline, cfg, embedder);

  fs::path state_path = state_dir / "monitor.jsonl";
  auto prior = load_monitor_state(state_path, o.baseline_id);
  monitor.restore(prior);
  if (prior.empty())
    store::detail::write_file_atomic(
        state_path, json{{"schema", kMonitorSchema},
                         {"baseline", o.baseline_id}}
                            .dump() +
                        "\n");

  auto backend = http::make_backend(make_descriptor(o.backend, g.data_dir));
  collect::CollectionPolicy policy = make_policy(o.policy);
  collect::RequestShape shape;
  shape.model_id = o.model;

  std::size_t budget = o.checkpoints;
  if (budget == 0)
    budget = o.interval == 0.0 ? 1 : std::numeric_limits<std::size_t>::max();

  std::ofstream state_out(state_path, std::ios::app | std::ios::binary);
  for (std::size_t step = 0; step < budget; ++step) {
    std::size_t idx = monitor.results().size();
    std::string batch_id = "checkpoint-" + std::to_string(idx);
    std::uint64_t key =
        rng::mix(o.seed, rng::mix(hash::fnv1a64("checkpoint"), idx));
    store::ResponseBatch batch = collect::collect_batch(
        state_dir / "batches", batch_id, baseline.system_prompt,
        baseline.task_prompts, baseline.k, *backend, policy, key, shape);

    std::vector<std::size_t> flagged = monitor.observe(batch);
    const harness::CheckpointResult& r = monitor.results().back();
    state_out << json{{"index", r.index},
                      {"p_value", r.p_value},
                      {"s_obs", r.s_obs}}
                     .dump()
              << "\n";
    state_out.flush();

    bool this_flagged =
        std::binary_search(flagged.begin(), flagged.end(), idx);
    std::fprintf(stderr, "checkpoint %zu: p=%.6f s_obs=%.6f%s\n", idx,
                 r.p_value, r.s_obs, this_flagged ? "  FLAGGED" : "");
    if (this_flagged && !o.alert_cmd.empty()) {
      std::string cmd = o.alert_cmd + " " + std::to_string(idx);
      int rc = std::system(cmd.c_str());
      if (rc != 0)
        std::fprintf(stderr,
                     "alert command failed (status %d); continuing\n", rc);
    }
    if (step + 1 < budget && o.interval > 0.0)
      std::this_thread::sleep_for(std::chrono::duration<double>(o.interval));
  }

  if (o.format == "json-lines") {
    for (const auto& r : monitor.results())
      std::printf("%s\n", json{{"index", r.index},
                               {"p_value", r.p_value},
                               {"s_obs", r.s_obs},
                               {"flagged", r.flagged}}
                              .dump()
                              .c_str());
  } else {
    std::printf("  idx  p-value   s_obs     flagged\n");
    for (const auto& r : monitor.results())
      std::printf("%5zu  %-8s  %-8s  %s\n", r.index,
                  metrics::format3(r.p_value).c_str(),
                  metrics::format3(r.s_obs).c_str(),
                  r.flagged ? "yes" : "no");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"audit a black-box chat service for hidden system-prompt "
               "steering"};
  app.set_config("--config", "",
                 "flat key=value file; command-line flags take precedence");
  app.require_subcommand(1);

  GlobalOpts global;
  app.add_option("--data-dir", global.data_dir,
                 "directory with the bundled prompt tables")
      ->capture_default_str();

  GeneratePairsOpts gp;
  CLI::App* gp_cmd = app.add_subcommand(
      "generate-pairs", "write a manipulation-pair universe as records");
  gp_cmd->add_option("--domain", gp.domain, "religious | conspiratorial | grok")
      ->required()
      ->check(CLI::IsMember({"religious", "conspiratorial", "grok"}));
  gp_cmd->add_option("--control-fraction", gp.control_fraction,
                     "fraction of pairs kept as controls")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  gp_cmd->add_option("--control-style", gp.control_style,
                     "both_neutral | both_biased | mixed")
      ->check(CLI::IsMember({"both_neutral", "both_biased", "mixed"}))
      ->capture_default_str();
  gp_cmd->add_option("--seed", gp.seed, "master seed")->capture_default_str();
  gp_cmd->add_option("--repeat-count", gp.repeat_count,
                     "instances of the fixture pair (grok domain only)")
      ->capture_default_str();
  gp_cmd->add_option("--out", gp.out, "output pairs file")->required();
  gp_cmd->callback([&]() { run_generate_pairs(global, gp); });

  CollectOpts co;
  CLI::App* co_cmd = app.add_subcommand(
      "collect", "sample k responses per task prompt for both pair sides");
  co_cmd->add_option("--pairs", co.pairs, "pairs file from generate-pairs")
      ->required();
  co_cmd->add_option("--experiment", co.experiment,
                     "task prompt set: religion | conspiracy | grok | auto")
      ->check(CLI::IsMember({"religion", "conspiracy", "grok", "auto"}))
      ->capture_default_str();
  co_cmd->add_option("--task-prompts", co.task_prompt_file,
                     "file with one task prompt per line (overrides "
                     "--experiment)");
  co_cmd->add_option("--k", co.k, "replicates per task prompt")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  co_cmd->add_option("--out", co.out, "collection directory")->required();
  co_cmd->add_option("--seed", co.seed, "master seed")->capture_default_str();
  co_cmd->add_option("--model", co.model, "model id sent to the backend")
      ->capture_default_str();
  co_cmd->add_option("--temperature", co.temperature, "sampling temperature")
      ->capture_default_str();
  co_cmd->add_option("--max-tokens", co.max_tokens, "completion budget")
      ->capture_default_str();
  add_backend_flags(co_cmd, co.backend);
  add_policy_flags(co_cmd, co.policy);
  co_cmd->callback([&]() { run_collect(global, co); });

  TestOpts to;
  CLI::App* to_cmd = app.add_subcommand(
      "test", "run the permutation test over collected batches");
  to_cmd->add_option("--batches", to.batches, "collection directory")
      ->required();
  to_cmd->add_option("--n-perm", to.n_perm, "permutation rounds")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  to_cmd->add_option("--alpha", to.alpha, "significance level")
      ->check(CLI::Range(std::nextafter(0.0, 1.0), 1.0))
      ->capture_default_str();
  to_cmd->add_option("--seed", to.seed, "master seed")->capture_default_str();
  to_cmd->add_option("--out", to.out,
                     "run directory (default: the collection directory)");
  to_cmd->add_option("--dimension", to.dimension, "embedding dimension")
      ->capture_default_str();
  to_cmd->add_option("--run-id", to.run_id,
                     "outcome log identity (default: derived from the seed)");
  to_cmd->add_option("--workers", to.workers, "permutation worker threads")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  to_cmd->add_option("--format", to.format, "table | json-lines")
      ->check(CLI::IsMember({"table", "json-lines"}))
      ->capture_default_str();
  to_cmd->callback([&]() { run_test(global, to); });

  ReportOpts ro;
  CLI::App* ro_cmd = app.add_subcommand(
      "report", "render the metrics table from a run's outcomes");
  ro_cmd->add_option("--run", ro.run, "run directory with outcomes.jsonl")
      ->required();
  ro_cmd->add_option("--alpha", ro.alpha,
                     "recompute decisions at this significance level");
  ro_cmd->add_option("--format", ro.format, "table | json-lines")
      ->check(CLI::IsMember({"table", "json-lines"}))
      ->capture_default_str();
  ro_cmd->callback([&]() { run_report(global, ro); });

  MonitorOpts mo;
  CLI::App* mo_cmd = app.add_subcommand(
      "monitor", "watch a service for drift against a baseline batch");
  mo_cmd->add_option("--baseline", mo.baseline,
                     "collection directory holding the baseline batch")
      ->required();
  mo_cmd->add_option("--baseline-id", mo.baseline_id, "baseline batch id")
      ->capture_default_str();
  mo_cmd->add_flag("--init", mo.init,
                   "collect the baseline batch instead of checkpointing");
  mo_cmd->add_option("--system-prompt", mo.system_prompt,
                     "system prompt to monitor (with --init)");
  mo_cmd->add_option("--experiment", mo.experiment,
                     "task prompt set for --init: religion | conspiracy | "
                     "grok")
      ->check(CLI::IsMember({"religion", "conspiracy", "grok"}))
      ->capture_default_str();
  mo_cmd->add_option("--task-prompts", mo.task_prompt_file,
                     "file with one task prompt per line (with --init)");
  mo_cmd->add_option("--k", mo.k, "replicates per task prompt (with --init)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  mo_cmd->add_option("--out", mo.out,
                     "state directory (default: the baseline directory)");
  mo_cmd->add_option("--interval", mo.interval,
                     "seconds between checkpoints; 0 = single-shot")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  mo_cmd->add_option("--checkpoints", mo.checkpoints,
                     "checkpoints to run this invocation (0 = auto)")
      ->capture_default_str();
  mo_cmd->add_option("--correction", mo.correction,
                     "none | bh | bonferroni")
      ->check(CLI::IsMember({"none", "bh", "bonferroni"}))
      ->capture_default_str();
  mo_cmd->add_option("--alert-cmd", mo.alert_cmd,
                     "command run as `cmd <index>` when a checkpoint flags");
  mo_cmd->add_option("--alpha", mo.alpha, "significance level")
      ->capture_default_str();
  mo_cmd->add_option("--n-perm", mo.n_perm, "permutation rounds")
      ->capture_default_str();
  mo_cmd->add_option("--seed", mo.seed, "master seed")->capture_default_str();
  mo_cmd->add_option("--dimension", mo.dimension, "embedding dimension")
      ->capture_default_str();
  mo_cmd->add_option("--format", mo.format, "table | json-lines")
      ->check(CLI::IsMember({"table", "json-lines"}))
      ->capture_default_str();
  mo_cmd->add_option("--model", mo.model, "model id sent to the backend")
      ->capture_default_str();
  add_backend_flags(mo_cmd, mo.backend);
  add_policy_flags(mo_cmd, mo.policy);
  mo_cmd->callback([&]() { run_monitor(global, mo); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const driftwatch::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
