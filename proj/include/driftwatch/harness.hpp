#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "driftwatch/chat.hpp"
#include "driftwatch/collect.hpp"
#include "driftwatch/embedder.hpp"
#include "driftwatch/error.hpp"
#include "driftwatch/hash.hpp"
#include "driftwatch/metrics.hpp"
#include "driftwatch/prompts.hpp"
#include "driftwatch/rng.hpp"
#include "driftwatch/stats.hpp"
#include "driftwatch/store.hpp"
#include "driftwatch/version.hpp"

namespace driftwatch::harness {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- multiple-testing corrections -------------------------------------------

enum class Correction { none, bh, bonferroni };

inline const char* to_string(Correction c) {
  switch (c) {
    case Correction::none: return "none";
    case Correction::bh: return "bh";
    default: return "bonferroni";
  }
}

inline Correction correction_from_string(std::string_view s) {
  if (s == "none") return Correction::none;
  if (s == "bh") return Correction::bh;
  if (s == "bonferroni") return Correction::bonferroni;
  throw DataError("unknown correction: " + std::string(s));
}

// rejected indices, ascending
inline std::vector<std::size_t> apply_correction(
    const std::vector<double>& pvals, double alpha, Correction c) {
  if (pvals.empty()) return {};
  switch (c) {
    case Correction::none: {
      std::vector<std::size_t> out;
      for (std::size_t i = 0; i < pvals.size(); ++i)
        if (pvals[i] < alpha) out.push_back(i);
      return out;
    }
    case Correction::bh:
      return stats::benjamini_hochberg(pvals, alpha);
    default:
      return stats::bonferroni(pvals, alpha);
  }
}

// ---- experiment definition ----------------------------------------------------

struct BackendDescriptor {
  std::string kind = "simulator";  // simulator | openai_compat | anthropic
  chat::SimulatorParams simulator = chat::default_simulator_params();
  std::string base_url;
  std::string api_key_env;
  std::uint32_t timeout_ms = 30000;
};

struct ExperimentSpec {
  prompts::Domain domain = prompts::Domain::religious;
  std::vector<prompts::PromptPair> explicit_pairs;  // empty unless custom
  std::vector<std::string> task_prompts;            // empty = bundled set
  std::optional<std::size_t> sample_size = 100;     // nullopt = whole universe
  std::uint32_t k = 10;
  std::uint32_t n_perm = 1000;
  double alpha = 0.05;
  double control_fraction = 0.25;
  prompts::ControlStyle control_style = prompts::ControlStyle::mixed;
  std::uint32_t repeat_count = 1;
  embed::EmbedderSpec embedder;
  BackendDescriptor backend;
  collect::CollectionPolicy policy;
  collect::RequestShape shape;
  std::uint64_t master_seed = 0;
  std::string run_id;  // empty = derived from seed and domain
};

inline void validate(const ExperimentSpec& spec) {
  if (!(spec.alpha > 0.0 && spec.alpha < 1.0))
    throw DataError("alpha must lie in (0, 1)");
  if (spec.k == 0) throw DataError("k must be positive");
  if (spec.n_perm == 0) throw DataError("n_perm must be positive");
  if (spec.repeat_count == 0) throw DataError("repeat_count must be positive");
  if (!(spec.control_fraction >= 0.0 && spec.control_fraction < 1.0))
    throw DataError("control_fraction must lie in [0, 1)");
  embed::validate(spec.embedder);
  collect::validate(spec.policy);
  if (spec.backend.kind == "simulator") chat::validate(spec.backend.simulator);
  if (spec.domain == prompts::Domain::custom && spec.explicit_pairs.empty())
    throw DataError("custom domain requires explicit pairs");
}

inline std::string default_run_id(const ExperimentSpec& spec) {
  return "run-" + hash::hex64(rng::mix(
                      spec.master_seed,
                      hash::fnv1a64(prompts::to_string(spec.domain))));
}

// ---- json round trips (manifest echo must replay byte-identically) ----------

inline json pair_to_json(const prompts::PromptPair& p) {
  return json{{"id", p.id},
              {"prompt_a", p.prompt_a},
              {"prompt_b", p.prompt_b},
              {"is_control", p.is_control},
              {"ground_truth_distinct", p.ground_truth_distinct},
              {"provenance",
               {p.provenance.neutral, p.provenance.spec, p.provenance.tmpl}}};
}

inline prompts::PromptPair pair_from_json(const json& j) {
  prompts::PromptPair p;
  p.id = j.at("id").get<std::string>();
  p.prompt_a = j.at("prompt_a").get<std::string>();
  p.prompt_b = j.at("prompt_b").get<std::string>();
  p.is_control = j.at("is_control").get<bool>();
  p.ground_truth_distinct = j.at("ground_truth_distinct").get<bool>();
  auto prov = j.at("provenance");
  p.provenance = {prov.at(0).get<std::size_t>(), prov.at(1).get<std::size_t>(),
                  prov.at(2).get<std::size_t>()};
  return p;
}

inline json spec_to_json(const ExperimentSpec& s) {
  json pairs = json::array();
  for (const auto& p : s.explicit_pairs) pairs.push_back(pair_to_json(p));
  return json{
      {"domain", prompts::to_string(s.domain)},
      {"explicit_pairs", pairs},
      {"task_prompts", s.task_prompts},
      {"sample_size",
       s.sample_size ? json(*s.sample_size) : json(nullptr)},
      {"k", s.k},
      {"n_perm", s.n_perm},
      {"alpha", s.alpha},
      {"control_fraction", s.control_fraction},
      {"control_style", prompts::to_string(s.control_style)},
      {"repeat_count", s.repeat_count},
      {"embedder",
       {{"kind", embed::to_string(s.embedder.kind)},
        {"dimension", s.embedder.dimension},
        {"model_id", s.embedder.model_id},
        {"normalize", s.embedder.normalize}}},
      {"backend",
       {{"kind", s.backend.kind},
        {"simulator",
         {{"bias_strength", s.backend.simulator.bias_strength},
          {"marker_lexicon", s.backend.simulator.marker_lexicon},
          {"base_lexicon", s.backend.simulator.base_lexicon},
          {"reply_length", s.backend.simulator.reply_length},
          {"seed_salt", s.backend.simulator.seed_salt},
          {"bias_triggers", s.backend.simulator.bias_triggers}}},
        {"base_url", s.backend.base_url},
        {"api_key_env", s.backend.api_key_env},
        {"timeout_ms", s.backend.timeout_ms}}},
      {"policy",
       {{"max_in_flight", s.policy.max_in_flight},
        {"retry_limit", s.policy.retry_limit},
        {"backoff_base_ms", s.policy.backoff_base_ms},
        {"per_minute_cap",
         s.policy.per_minute_cap ? json(*s.policy.per_minute_cap)
                                 : json(nullptr)},
        {"rate_window_ms", s.policy.rate_window_ms}}},
      {"shape",
       {{"model_id", s.shape.model_id},
        {"temperature", s.shape.temperature},
        {"max_tokens", s.shape.max_tokens}}},
      {"master_seed", s.master_seed},
      {"run_id", s.run_id}};
}

inline ExperimentSpec spec_from_json(const json& j) {
  ExperimentSpec s;
  s.domain = prompts::domain_from_string(j.at("domain").get<std::string>());
  for (const auto& p : j.value("explicit_pairs", json::array()))
    s.explicit_pairs.push_back(pair_from_json(p));
  s.task_prompts =
      j.value("task_prompts", std::vector<std::string>{});
  if (j.contains("sample_size") && !j.at("sample_size").is_null())
    s.sample_size = j.at("sample_size").get<std::size_t>();
  else
    s.sample_size = std::nullopt;
  s.k = j.at("k").get<std::uint32_t>();
  s.n_perm = j.at("n_perm").get<std::uint32_t>();
  s.alpha = j.at("alpha").get<double>();
  s.control_fraction = j.at("control_fraction").get<double>();
  s.control_style = prompts::control_style_from_string(
      j.at("control_style").get<std::string>());
  s.repeat_count = j.at("repeat_count").get<std::uint32_t>();

  const json& e = j.at("embedder");
  s.embedder.kind = e.at("kind").get<std::string>() == "remote"
                        ? embed::EmbedderKind::remote
                        : embed::EmbedderKind::local_hash;
  s.embedder.dimension = e.at("dimension").get<std::uint32_t>();
  s.embedder.model_id = e.at("model_id").get<std::string>();
  s.embedder.normalize = e.at("normalize").get<bool>();

  const json& b = j.at("backend");
  s.backend.kind = b.at("kind").get<std::string>();
  const json& sim = b.at("simulator");
  s.backend.simulator.bias_strength = sim.at("bias_strength").get<double>();
  s.backend.simulator.marker_lexicon =
      sim.at("marker_lexicon").get<std::vector<std::string>>();
  s.backend.simulator.base_lexicon =
      sim.at("base_lexicon").get<std::vector<std::string>>();
  s.backend.simulator.reply_length =
      sim.at("reply_length").get<std::uint32_t>();
  s.backend.simulator.seed_salt = sim.at("seed_salt").get<std::uint64_t>();
  s.backend.simulator.bias_triggers =
      sim.at("bias_triggers").get<std::vector<std::string>>();
  s.backend.base_url = b.at("base_url").get<std::string>();
  s.backend.api_key_env = b.at("api_key_env").get<std::string>();
  s.backend.timeout_ms = b.at("timeout_ms").get<std::uint32_t>();

  const json& pol = j.at("policy");
  s.policy.max_in_flight = pol.at("max_in_flight").get<std::uint32_t>();
  s.policy.retry_limit = pol.at("retry_limit").get<std::uint32_t>();
  s.policy.backoff_base_ms = pol.at("backoff_base_ms").get<std::uint32_t>();
  if (!pol.at("per_minute_cap").is_null())
    s.policy.per_minute_cap = pol.at("per_minute_cap").get<std::uint32_t>();
  s.policy.rate_window_ms = pol.at("rate_window_ms").get<std::uint32_t>();

  const json& sh = j.at("shape");
  s.shape.model_id = sh.at("model_id").get<std::string>();
  s.shape.temperature = sh.at("temperature").get<double>();
  s.shape.max_tokens = sh.at("max_tokens").get<std::uint32_t>();

  s.master_seed = j.at("master_seed").get<std::uint64_t>();
  s.run_id = j.value("run_id", "");
  return s;
}

// ---- universe construction ---------------------------------------------------

// Registered trigger substrings for the simulator: every belief and
// controversy label (biased prompts always quote their label) plus the
// deployment fixture's steering phrase.
inline std::vector<std::string> simulator_triggers(const fs::path& data_dir) {
  prompts::PromptTables tables = prompts::load_tables(data_dir);
  std::vector<std::string> triggers;
  for (const auto& b : tables.beliefs) triggers.push_back(b.label);
  for (const auto& c : tables.controversies) triggers.push_back(c.label);
  triggers.push_back("Judeo-Christian ethics");
  return triggers;
}

// The deployment domain reruns one fixed prompt pair as repeat_count
// independent instances; the control fraction designates instances whose two
// sides carry the same prompt.
inline std::vector<prompts::PromptPair> grok_universe(
    const ExperimentSpec& spec, const fs::path& data_dir) {
  std::string neutral =
      prompts::load_grok_fixture(prompts::GrokVariant::neutral, data_dir);
  std::string biased =
      prompts::load_grok_fixture(prompts::GrokVariant::biased, data_dir);
  const std::size_t total = spec.repeat_count;
  const auto m = static_cast<std::size_t>(std::llround(
      spec.control_fraction * static_cast<double>(total)));
  auto pick_gen = rng::substream(spec.master_seed, hash::fnv1a64("controls"));
  auto control_idx = rng::sample_without_replacement(total, m, pick_gen);
  std::vector<std::uint8_t> is_control(total, 0);
  for (auto i : control_idx) is_control[i] = 1;
  auto style_gen =
      rng::substream(spec.master_seed, hash::fnv1a64("control-style"));

  const std::uint64_t content =
      hash::fnv1a64(biased, hash::fnv1a64("\x1f", hash::fnv1a64(neutral)));
  std::vector<prompts::PromptPair> out;
  out.reserve(total);
  for (std::size_t r = 0; r < total; ++r) {
    prompts::PromptPair p;
    p.id = hash::hex64(rng::mix(content, r));
    if (is_control[r]) {
      bool use_biased =
          spec.control_style == prompts::ControlStyle::both_biased ||
          (spec.control_style == prompts::ControlStyle::mixed &&
           style_gen.bounded(2) == 1);
      const std::string& text = use_biased ? biased : neutral;
      p.prompt_a = text;
      p.prompt_b = text;
      p.is_control = true;
      p.ground_truth_distinct = false;
    } else {
      p.prompt_a = neutral;
      p.prompt_b = biased;
      p.is_control = false;
      p.ground_truth_distinct = true;
    }
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<prompts::PromptPair> universe(const ExperimentSpec& spec,
                                                 const fs::path& data_dir) {
  switch (spec.domain) {
    case prompts::Domain::custom: {
      if (spec.explicit_pairs.empty())
        throw DataError("custom domain requires explicit pairs");
      return spec.explicit_pairs;
    }
    case prompts::Domain::grok:
      return grok_universe(spec, data_dir);
    default: {
      prompts::GenerationConfig cfg;
      cfg.domain = spec.domain;
      cfg.control_fraction = spec.control_fraction;
      cfg.seed = spec.master_seed;
      cfg.control_style = spec.control_style;
      return prompts::generate_pairs(data_dir, cfg);
    }
  }
}

inline std::vector<std::string> task_prompts_for(const ExperimentSpec& spec,
                                                 const fs::path& data_dir) {
  if (!spec.task_prompts.empty()) return spec.task_prompts;
  switch (spec.domain) {
    case prompts::Domain::religious:
      return prompts::load_task_prompts(prompts::Experiment::religion,
                                        data_dir);
    case prompts::Domain::conspiratorial:
      return prompts::load_task_prompts(prompts::Experiment::conspiracy,
                                        data_dir);
    case prompts::Domain::grok:
      return prompts::load_task_prompts(prompts::Experiment::grok, data_dir);
    default:
      throw DataError("custom domain requires task_prompts");
  }
}

// seeded subsample; nullopt keeps the whole universe in generation order
inline std::vector<prompts::PromptPair> subsample(
    std::vector<prompts::PromptPair> universe, const ExperimentSpec& spec) {
  if (!spec.sample_size || *spec.sample_size == universe.size())
    return universe;
  if (*spec.sample_size > universe.size())
    throw DataError("sample_size " + std::to_string(*spec.sample_size) +
                    " exceeds universe size " +
                    std::to_string(universe.size()));
  auto gen = rng::substream(spec.master_seed, hash::fnv1a64("subsample"));
  auto keep =
      rng::sample_without_replacement(universe.size(), *spec.sample_size, gen);
  std::vector<prompts::PromptPair> out;
  out.reserve(keep.size());
  for (auto idx : keep) out.push_back(std::move(universe[idx]));
  return out;
}

inline std::unique_ptr<chat::Backend> make_simulator_backend(
    const ExperimentSpec& spec) {
  if (spec.backend.kind != "simulator")
    throw DataError("backend kind '" + spec.backend.kind +
                    "' needs an explicit handle (remote backends are "
                    "constructed by the caller)");
  return std::make_unique<chat::SimulatorBackend>(spec.backend.simulator);
}

// ---- per-pair protocol -------------------------------------------------------

// embeds a complete batch into the n×k group, rows in (task, replicate) order
inline stats::EmbeddingGroup group_from_batch(const store::ResponseBatch& batch,
                                              embed::Embedder& embedder) {
  if (batch.status != store::BatchStatus::complete)
    throw DataError("batch " + batch.batch_id + " is not complete");
  std::vector<std::string> texts;
  texts.reserve(batch.cells.size());
  for (const auto& [cell, resp] : batch.cells) texts.push_back(resp.text);
  auto vectors = embedder.embed(texts);
  return stats::EmbeddingGroup::from_rows(batch.task_prompts.size(), batch.k,
                                          vectors);
}

// Collects both sides (resumably), embeds, and runs the within-prompt
// permutation test. Batch ids and replicate keys derive from the pair id, so
// the two sides sample independent replicate streams even when their prompts
// are byte-identical.
inline metrics::PairOutcome run_pair(const prompts::PromptPair& pair,
                                     const std::vector<std::string>& task_prompts,
                                     const ExperimentSpec& spec,
                                     chat::Backend& backend,
                                     embed::Embedder& embedder,
                                     const fs::path& run_dir) {
  const fs::path batches = run_dir / "batches";
  auto batch_a = collect::collect_batch(
      batches, pair.id + ".a", pair.prompt_a, task_prompts, spec.k, backend,
      spec.policy, hash::fnv1a64(pair.id + "/a"), spec.shape);
  auto batch_b = collect::collect_batch(
      batches, pair.id + ".b", pair.prompt_b, task_prompts, spec.k, backend,
      spec.policy, hash::fnv1a64(pair.id + "/b"), spec.shape);

  stats::EmbeddingGroup g1 = group_from_batch(batch_a, embedder);
  stats::EmbeddingGroup g2 = group_from_batch(batch_b, embedder);

  stats::TestConfig cfg;
  cfg.n_perm = spec.n_perm;
  cfg.alpha = spec.alpha;
  cfg.seed = rng::mix(spec.master_seed, hash::fnv1a64(pair.id));
  stats::PermutationTestResult result = stats::permutation_test(g1, g2, cfg);

  metrics::PairOutcome outcome;
  outcome.pair_id = pair.id;
  outcome.p_value = result.p_value;
  outcome.decision = result.decision;
  outcome.ground_truth_distinct = pair.ground_truth_distinct;
  outcome.s_obs = result.s_obs;
  return outcome;
}

// ---- reports -----------------------------------------------------------------

struct ErroredPair {
  std::string pair_id;
  std::string reason;
  bool operator==(const ErroredPair&) const = default;
};

struct ExperimentReport {
  std::string run_id;
  std::string domain;
  double alpha = 0.05;
  std::uint32_t k = 10;
  std::uint32_t n_perm = 1000;
  std::uint64_t master_seed = 0;
  metrics::ConfusionMatrix confusion;
  std::optional<double> accuracy;
  std::optional<double> f1;
  std::optional<double> avg_p_tp;
  std::optional<double> avg_p_tn;
  std::size_t completed = 0;
  std::vector<ErroredPair> errored;
  std::vector<std::string> degenerate;  // pair ids whose responses never vary
};

inline json report_to_json(const ExperimentReport& r) {
  json errored = json::array();
  for (const auto& e : r.errored)
    errored.push_back(json{{"pair_id", e.pair_id}, {"reason", e.reason}});
  auto opt = [](const std::optional<double>& v) {
    return v ? json(*v) : json(nullptr);
  };
  return json{{"schema", kReportSchema},
              {"run_id", r.run_id},
              {"domain", r.domain},
              {"alpha", r.alpha},
              {"k", r.k},
              {"n_perm", r.n_perm},
              {"master_seed", r.master_seed},
              {"confusion",
               {{"tp", r.confusion.tp},
                {"fp", r.confusion.fp},
                {"tn", r.confusion.tn},
                {"fn", r.confusion.fn}}},
              {"metrics",
               {{"accuracy", opt(r.accuracy)},
                {"f1", opt(r.f1)},
                {"avg_p_tp", opt(r.avg_p_tp)},
                {"avg_p_tn", opt(r.avg_p_tn)}}},
              {"completed", r.completed},
              {"errored", errored},
              {"degenerate", r.degenerate}};
}

inline std::string render_report_text(const ExperimentReport& r) {
  char line[256];
  std::string out;
  out += "distribution shift report\n";
  out += "run:     " + r.run_id + "\n";
  out += "domain:  " + r.domain + "\n";
  std::snprintf(line, sizeof line,
                "config:  alpha=%s  k=%u  n_perm=%u  seed=%llu\n",
                metrics::format3(r.alpha).c_str(), r.k, r.n_perm,
                static_cast<unsigned long long>(r.master_seed));
  out += line;
  std::snprintf(line, sizeof line, "pairs:   %zu completed, %zu errored\n\n",
                r.completed, r.errored.size());
  out += line;

  out += "  TP  FP  TN  FN  Acc    F1     Avg p(TP)  Avg p(TN)\n";
  std::snprintf(line, sizeof line, "%4zu%4zu%4zu%4zu  %-5s  %-5s  %-9s  %-9s\n",
                r.confusion.tp, r.confusion.fp, r.confusion.tn, r.confusion.fn,
                metrics::format3(r.accuracy).c_str(),
                metrics::format3(r.f1).c_str(),
                metrics::format3(r.avg_p_tp).c_str(),
                metrics::format3(r.avg_p_tn).c_str());
  out += line;

  if (!r.degenerate.empty()) {
    out += "\ndegenerate pairs (responses never varied):\n";
    for (const auto& id : r.degenerate) out += "  " + id + "\n";
  }
  if (!r.errored.empty()) {
    out += "\nerrored pairs (excluded from metrics):\n";
    for (const auto& e : r.errored)
      out += "  " + e.pair_id + ": " + e.reason + "\n";
  }
  return out;
}

// ---- experiment runner -------------------------------------------------------

namespace detail {

inline std::string iso_utc_now() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline json data_digests(const fs::path& data_dir) {
  json out = json::object();
  for (const char* name :
       {"neutral_prompts.json", "beliefs.json", "controversies.json",
        "templates_religious.json", "templates_conspiratorial.json",
        "task_prompts.json", "grok_fixtures.json"}) {
    fs::path p = data_dir / name;
    if (fs::exists(p)) out[name] = store::file_digest(p);
  }
  return out;
}

inline void write_pairs_file(const fs::path& run_dir,
                             const std::vector<prompts::PromptPair>& pairs,
                             const ExperimentSpec& spec) {
  std::string out = json{{"schema", kPairsSchema},
                         {"domain", prompts::to_string(spec.domain)},
                         {"count", pairs.size()}}
                        .dump() +
                    "\n";
  for (const auto& p : pairs) out += pair_to_json(p).dump() + "\n";
  store::detail::write_file_atomic(run_dir / "pairs.jsonl", out);
}

// degenerate = every response across both sides is the same byte string
inline bool pair_is_degenerate(const fs::path& batches_dir,
                               const std::string& pair_id) {
  store::ResponseBatch a = store::load_batch(batches_dir, pair_id + ".a");
  store::ResponseBatch b = store::load_batch(batches_dir, pair_id + ".b");
  const std::string* first = nullptr;
  for (const auto* batch : {&a, &b})
    for (const auto& [cell, resp] : batch->cells) {
      if (!first)
        first = &resp.text;
      else if (resp.text != *first)
        return false;
    }
  return true;
}

}  // namespace detail

struct ReportInputs {
  std::string run_id;
  std::string domain;
  double alpha = 0.05;
  std::uint32_t k = 10;
  std::uint32_t n_perm = 1000;
  std::uint64_t master_seed = 0;
};

// deterministic fold: outcomes and errors aggregate in pair_id order
// regardless of the order they were produced in
inline ExperimentReport aggregate(const ReportInputs& in,
                                  std::vector<metrics::PairOutcome> outcomes,
                                  std::vector<ErroredPair> errored,
                                  const fs::path& batches_dir) {
  std::sort(outcomes.begin(), outcomes.end(),
            [](const auto& x, const auto& y) { return x.pair_id < y.pair_id; });
  std::sort(errored.begin(), errored.end(),
            [](const auto& x, const auto& y) { return x.pair_id < y.pair_id; });

  ExperimentReport report;
  report.run_id = in.run_id;
  report.domain = in.domain;
  report.alpha = in.alpha;
  report.k = in.k;
  report.n_perm = in.n_perm;
  report.master_seed = in.master_seed;
  report.confusion = metrics::confusion(outcomes);
  report.accuracy = metrics::accuracy(report.confusion);
  report.f1 = metrics::f1(report.confusion);
  report.avg_p_tp = metrics::mean_p(outcomes, metrics::Classification::tp);
  report.avg_p_tn = metrics::mean_p(outcomes, metrics::Classification::tn);
  report.completed = outcomes.size();
  report.errored = std::move(errored);
  if (!batches_dir.empty() && fs::exists(batches_dir))
    for (const auto& o : outcomes)
      if (detail::pair_is_degenerate(batches_dir, o.pair_id))
        report.degenerate.push_back(o.pair_id);
  return report;
}

inline void write_report_files(const fs::path& dir,
                               const ExperimentReport& report) {
  store::write_json_atomic(dir / "report.json", report_to_json(report));
  store::detail::write_file_atomic(dir / "report.txt",
                                   render_report_text(report));
}

// Runs the full protocol: build universe, subsample, test every pair,
// aggregate, persist everything under run_dir. Resumable: pairs whose
// outcomes are already logged are skipped, errored pairs are retried.
inline ExperimentReport run_experiment(const ExperimentSpec& spec_in,
                                       chat::Backend& backend,
                                       embed::Embedder& embedder,
                                       const fs::path& run_dir,
                                       const fs::path& data_dir) {
  ExperimentSpec spec = spec_in;
  validate(spec);
  if (spec.run_id.empty()) spec.run_id = default_run_id(spec);

  std::vector<prompts::PromptPair> pairs =
      subsample(universe(spec, data_dir), spec);
  std::vector<std::string> task_prompts = task_prompts_for(spec, data_dir);

  fs::create_directories(run_dir / "batches");

  // a run directory is married to one spec; refuse to mix
  json spec_echo = spec_to_json(spec);
  fs::path manifest_path = run_dir / "manifest.json";
  if (fs::exists(manifest_path)) {
    json existing = store::read_json(manifest_path);
    if (existing.value("spec", json()) != spec_echo)
      throw DataError("run directory " + run_dir.string() +
                      " belongs to a different experiment spec");
  } else {
    store::write_json_atomic(
        manifest_path,
        json{{"schema", kManifestSchema},
             {"run_id", spec.run_id},
             {"created_at", detail::iso_utc_now()},
             {"code_version", kVersion},
             {"algorithms",
              {{"rng", kRngAlgorithm},
               {"token_hash", kTokenHashAlgorithm},
               {"embed_key", kEmbedKeyAlgorithm}}},
             {"spec", spec_echo},
             {"data_digests", detail::data_digests(data_dir)},
             {"pair_count", pairs.size()}});
  }
  detail::write_pairs_file(run_dir, pairs, spec);

  store::OutcomeLog log(run_dir, spec.run_id);
  std::vector<ErroredPair> errored;
  for (const auto& pair : pairs) {
    if (log.has(pair.id)) continue;
    try {
      log.append(run_pair(pair, task_prompts, spec, backend, embedder,
                          run_dir));
    } catch (const AuthError&) {
      throw;  // every remaining pair would fail identically
    } catch (const Error& e) {
      errored.push_back({pair.id, e.what()});
    }
  }

  ReportInputs inputs{spec.run_id,  prompts::to_string(spec.domain),
                      spec.alpha,   spec.k,
                      spec.n_perm,  spec.master_seed};
  ExperimentReport report = aggregate(inputs, log.outcomes(), std::move(errored),
                                      run_dir / "batches");
  write_report_files(run_dir, report);
  return report;
}

// offline runner: simulator backend and a cached local embedder, both built
// from the ExperimentSpec, so a manifest alone reproduces the run
inline ExperimentReport run_experiment(const ExperimentSpec& spec,
                                       const fs::path& run_dir,
                                       const fs::path& data_dir) {
  auto backend = make_simulator_backend(spec);
  embed::LocalHashEmbedder local(spec.embedder);
  embed::CachedEmbedder cached(local, run_dir / "cache");
  return run_experiment(spec, *backend, cached, run_dir, data_dir);
}

inline ExperimentReport replay_manifest(const fs::path& manifest_path,
                                        const fs::path& run_dir,
                                        const fs::path& data_dir) {
  json manifest = store::read_json(manifest_path);
  ExperimentSpec spec = spec_from_json(manifest.at("spec"));
  return run_experiment(spec, run_dir, data_dir);
}

// ---- monitoring --------------------------------------------------------------

struct MonitorConfig {
  std::uint32_t n_perm = 1000;
  double alpha = 0.05;
  Correction correction = Correction::bh;
  std::uint64_t master_seed = 0;
};

struct CheckpointResult {
  std::size_t index = 0;
  double p_value = 1.0;
  double s_obs = 1.0;
  bool flagged = false;
};

// Streaming drift watch: each checkpoint batch is tested against the fixed
// baseline, then the chosen correction is reapplied across every checkpoint
// seen so far, so earlier flags can appear or retract as evidence accumulates.
class Monitor {
 public:
  Monitor(store::ResponseBatch baseline, MonitorConfig cfg,
          embed::Embedder& embedder)
      : cfg_(cfg), embedder_(embedder), baseline_(std::move(baseline)),
        base_group_(group_from_batch(baseline_, embedder_)) {
    if (!(cfg_.alpha > 0.0 && cfg_.alpha < 1.0))
      throw DataError("alpha must lie in (0, 1)");
    if (cfg_.n_perm == 0) throw DataError("n_perm must be positive");
  }

  // reload previously observed checkpoints so a restarted process keeps the
  // correction history; indices must already be 0..m-1 in order
  void restore(const std::vector<CheckpointResult>& prior) {
    if (!results_.empty())
      throw DataError("restore requires a freshly constructed monitor");
    for (std::size_t i = 0; i < prior.size(); ++i)
      if (prior[i].index != i)
        throw DataError("restored checkpoints must be contiguous from 0");
    results_ = prior;
    for (const auto& r : prior) pvals_.push_back(r.p_value);
  }

  // returns currently flagged checkpoint indices, ascending
  std::vector<std::size_t> observe(const store::ResponseBatch& checkpoint) {
    if (checkpoint.task_prompts != baseline_.task_prompts ||
        checkpoint.k != baseline_.k)
      throw ShapeError("checkpoint shape differs from baseline (task prompts "
                       "or k)");
    stats::EmbeddingGroup group = group_from_batch(checkpoint, embedder_);

    stats::TestConfig cfg;
    cfg.n_perm = cfg_.n_perm;
    cfg.alpha = cfg_.alpha;
    cfg.seed = rng::mix(cfg_.master_seed,
                        rng::mix(hash::fnv1a64("monitor"), results_.size()));
    stats::PermutationTestResult r =
        stats::permutation_test(base_group_, group, cfg);

    CheckpointResult cp;
    cp.index = results_.size();
    cp.p_value = r.p_value;
    cp.s_obs = r.s_obs;
    results_.push_back(cp);
    pvals_.push_back(r.p_value);

    std::vector<std::size_t> flagged =
        apply_correction(pvals_, cfg_.alpha, cfg_.correction);
    for (auto& cr : results_) cr.flagged = false;
    for (auto idx : flagged) results_[idx].flagged = true;
    return flagged;
  }

  const std::vector<CheckpointResult>& results() const { return results_; }
  const store::ResponseBatch& baseline() const { return baseline_; }

 private:
  MonitorConfig cfg_;
  embed::Embedder& embedder_;
  store::ResponseBatch baseline_;
  stats::EmbeddingGroup base_group_;
  std::vector<CheckpointResult> results_;
  std::vector<double> pvals_;
};

// batch variant: feed all checkpoints, return final corrected results
inline std::vector<CheckpointResult> monitor(
    const store::ResponseBatch& baseline,
    const std::vector<store::ResponseBatch>& checkpoints, MonitorConfig cfg,
    embed::Embedder& embedder) {
  Monitor m(baseline, cfg, embedder);
  for (const auto& cp : checkpoints) m.observe(cp);
  return m.results();
}

}  // namespace driftwatch::harness
