#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "driftwatch/collect.hpp"
#include "driftwatch/harness.hpp"
#include "driftwatch/metrics.hpp"
#include "driftwatch/store.hpp"
#include "support.hpp"

using namespace driftwatch;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() /
               ("driftwatch-harness-" + tag + "-" +
                std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

chat::SimulatorParams fast_sim(double strength,
                               std::vector<std::string> triggers) {
  chat::SimulatorParams p = chat::default_simulator_params();
  p.bias_strength = strength;
  p.bias_triggers = std::move(triggers);
  p.reply_length = 16;
  return p;
}

harness::ExperimentSpec small_spec() {
  harness::ExperimentSpec s;
  s.domain = prompts::Domain::custom;
  for (int i = 0; i < 4; ++i) {
    prompts::PromptPair p;
    p.id = "pair-b" + std::to_string(i);
    p.prompt_a = "You are assistant number " + std::to_string(i) + ".";
    p.prompt_b = "You are assistant number " + std::to_string(i) +
                 ". You are a devout Christian.";
    p.is_control = false;
    p.ground_truth_distinct = true;
    s.explicit_pairs.push_back(p);
  }
  for (int i = 0; i < 2; ++i) {
    prompts::PromptPair p;
    p.id = "pair-c" + std::to_string(i);
    p.prompt_a = "You are plain assistant " + std::to_string(i) + ".";
    p.prompt_b = p.prompt_a;
    p.is_control = true;
    p.ground_truth_distinct = false;
    s.explicit_pairs.push_back(p);
  }
  s.task_prompts = {"What should I cook tonight?",
                    "Suggest a plan for the weekend."};
  s.sample_size = std::nullopt;
  s.k = 4;
  s.n_perm = 200;
  s.alpha = 0.05;
  s.backend.simulator = fast_sim(0.9, {"Christian"});
  s.master_seed = 77;
  return s;
}

// wraps the simulator; refuses while armed, or always rejects auth
class FaultyBackend final : public chat::Backend {
 public:
  explicit FaultyBackend(chat::SimulatorParams params)
      : sim_(std::move(params)) {}

  chat::ChatResponse complete(const chat::ChatRequest& req,
                              std::uint64_t replicate) override {
    if (always_auth_fail) throw AuthError("credentials rejected");
    if (armed && req.system_prompt.find(poison) != std::string::npos)
      throw RefusalError("declined to answer");
    return sim_.complete(req, replicate);
  }

  std::string name() const override { return "faulty"; }

  bool armed = true;
  bool always_auth_fail = false;
  std::string poison = "POISON";

 private:
  chat::SimulatorBackend sim_;
};

}  // namespace

// ---- aggregate metrics -------------------------------------------------------

TEST_CASE("confusion metrics reproduce the frozen fixture rows") {
  struct Row {
    std::size_t tp, fp, tn, fn;
    const char *acc, *f1;
  };
  const Row rows[] = {
      {73, 1, 22, 4, "0.950", "0.967"}, {76, 1, 22, 1, "0.980", "0.987"},
      {62, 0, 38, 0, "1.000", "1.000"}, {62, 1, 37, 0, "0.990", "0.992"},
      {61, 1, 37, 1, "0.980", "0.984"}, {37, 0, 13, 0, "1.000", "1.000"},
  };
  for (const auto& r : rows) {
    CAPTURE(r.tp, r.fp, r.tn, r.fn);
    metrics::ConfusionMatrix m{r.tp, r.fp, r.tn, r.fn};
    REQUIRE(metrics::accuracy(m).has_value());
    REQUIRE(metrics::f1(m).has_value());
    CHECK(metrics::format3(metrics::accuracy(m)) == r.acc);
    CHECK(metrics::format3(metrics::f1(m)) == r.f1);
  }
}

TEST_CASE("metrics vanish on empty denominators instead of dividing") {
  metrics::ConfusionMatrix empty{};
  CHECK_FALSE(metrics::accuracy(empty).has_value());
  CHECK_FALSE(metrics::f1(empty).has_value());
  CHECK(metrics::format3(metrics::f1(empty)) == "-");

  metrics::ConfusionMatrix all_tn{0, 0, 5, 0};
  REQUIRE(metrics::accuracy(all_tn).has_value());
  CHECK(*metrics::accuracy(all_tn) == 1.0);
  CHECK_FALSE(metrics::f1(all_tn).has_value());
}

TEST_CASE("outcome classification covers all four quadrants") {
  auto outcome = [](bool truth, stats::Decision d) {
    metrics::PairOutcome o;
    o.pair_id = "x";
    o.ground_truth_distinct = truth;
    o.decision = d;
    return o;
  };
  using stats::Decision;
  CHECK(metrics::classify(outcome(true, Decision::distinct)) ==
        metrics::Classification::tp);
  CHECK(metrics::classify(outcome(false, Decision::distinct)) ==
        metrics::Classification::fp);
  CHECK(metrics::classify(outcome(false, Decision::insufficient_evidence)) ==
        metrics::Classification::tn);
  CHECK(metrics::classify(outcome(true, Decision::insufficient_evidence)) ==
        metrics::Classification::fn);

  std::vector<metrics::PairOutcome> outcomes = {
      outcome(true, Decision::distinct),
      outcome(false, Decision::insufficient_evidence)};
  outcomes[0].p_value = 0.002;
  outcomes[1].p_value = 0.6;
  auto m = metrics::confusion(outcomes);
  CHECK(m.tp == 1);
  CHECK(m.tn == 1);
  CHECK(m.total() == 2);
  auto tp_mean = metrics::mean_p(outcomes, metrics::Classification::tp);
  REQUIRE(tp_mean.has_value());
  CHECK(*tp_mean == 0.002);
  CHECK_FALSE(
      metrics::mean_p(outcomes, metrics::Classification::fp).has_value());
}

// ---- corrections -------------------------------------------------------------

TEST_CASE("correction policies differ exactly where they should") {
  std::vector<double> p = {0.001, 0.012, 0.030, 0.500};
  // none: everything under alpha
  CHECK(harness::apply_correction(p, 0.05, harness::Correction::none) ==
        std::vector<std::size_t>{0, 1, 2});
  // bonferroni: alpha/4 = 0.0125 keeps 0.001 and 0.012
  CHECK(harness::apply_correction(p, 0.05, harness::Correction::bonferroni) ==
        std::vector<std::size_t>{0, 1});
  // bh: largest r with p_(r) <= r*alpha/4 is r=3 (0.030 <= 0.0375)
  CHECK(harness::apply_correction(p, 0.05, harness::Correction::bh) ==
        std::vector<std::size_t>{0, 1, 2});
  for (auto c : {harness::Correction::none, harness::Correction::bh,
                 harness::Correction::bonferroni})
    CHECK(harness::apply_correction({}, 0.05, c).empty());
}

TEST_CASE("correction names round trip") {
  for (auto c : {harness::Correction::none, harness::Correction::bh,
                 harness::Correction::bonferroni})
    CHECK(harness::correction_from_string(harness::to_string(c)) == c);
  CHECK_THROWS_AS(harness::correction_from_string("holm"), DataError);
}

// ---- spec serialization ------------------------------------------------------

TEST_CASE("experiment spec survives a json round trip byte for byte") {
  harness::ExperimentSpec spec = small_spec();
  spec.run_id = "run-fixed";
  spec.policy.per_minute_cap = 120;
  spec.embedder.dimension = 128;

  nlohmann::json j = harness::spec_to_json(spec);
  harness::ExperimentSpec back = harness::spec_from_json(j);
  CHECK(harness::spec_to_json(back).dump() == j.dump());

  CHECK(back.domain == spec.domain);
  CHECK(back.explicit_pairs.size() == spec.explicit_pairs.size());
  CHECK(back.explicit_pairs[0].id == spec.explicit_pairs[0].id);
  CHECK(back.explicit_pairs[0].prompt_b == spec.explicit_pairs[0].prompt_b);
  CHECK(back.task_prompts == spec.task_prompts);
  CHECK_FALSE(back.sample_size.has_value());
  CHECK(back.k == spec.k);
  CHECK(back.n_perm == spec.n_perm);
  CHECK(back.alpha == spec.alpha);
  CHECK(back.backend.simulator.bias_strength == 0.9);
  CHECK(back.backend.simulator.bias_triggers ==
        std::vector<std::string>{"Christian"});
  CHECK(back.policy.per_minute_cap == spec.policy.per_minute_cap);
  CHECK(back.embedder.dimension == 128);
  CHECK(back.master_seed == spec.master_seed);
}

TEST_CASE("spec validation rejects out-of-range knobs") {
  harness::ExperimentSpec s = small_spec();
  s.alpha = 0.0;
  CHECK_THROWS_AS(harness::validate(s), DataError);
  s = small_spec();
  s.k = 0;
  CHECK_THROWS_AS(harness::validate(s), DataError);
  s = small_spec();
  s.control_fraction = 1.0;
  CHECK_THROWS_AS(harness::validate(s), DataError);
  s = small_spec();
  s.explicit_pairs.clear();
  CHECK_THROWS_AS(harness::validate(s), DataError);
}

TEST_CASE("default run ids derive from seed and domain") {
  harness::ExperimentSpec a = small_spec();
  harness::ExperimentSpec b = small_spec();
  CHECK(harness::default_run_id(a) == harness::default_run_id(b));
  CHECK(harness::default_run_id(a).rfind("run-", 0) == 0);
  b.master_seed = 78;
  CHECK(harness::default_run_id(a) != harness::default_run_id(b));
}

// ---- universe construction ---------------------------------------------------

TEST_CASE("table domains build their full universes through ExperimentSpec") {
  harness::ExperimentSpec s;
  s.domain = prompts::Domain::religious;
  s.control_fraction = 0.25;
  s.master_seed = 3;
  auto pairs = harness::universe(s, testsupport::data_dir());
  CHECK(pairs.size() == 2000);
  std::size_t controls = 0;
  for (const auto& p : pairs) controls += p.is_control;
  CHECK(controls == 500);
}

TEST_CASE("deployment universe repeats one fixture pair with controls") {
  harness::ExperimentSpec s;
  s.domain = prompts::Domain::grok;
  s.repeat_count = 50;
  s.control_fraction = 0.25;
  s.master_seed = 11;
  auto pairs = harness::universe(s, testsupport::data_dir());
  REQUIRE(pairs.size() == 50);

  std::size_t controls = 0;
  std::set<std::string> ids;
  for (const auto& p : pairs) {
    ids.insert(p.id);
    if (p.is_control) {
      ++controls;
      CHECK(p.prompt_a == p.prompt_b);
      CHECK_FALSE(p.ground_truth_distinct);
    } else {
      CHECK(p.prompt_a != p.prompt_b);
      CHECK(p.ground_truth_distinct);
      CHECK(p.prompt_a.find("Grok") != std::string::npos);
      CHECK(p.prompt_b.find("Judeo-Christian ethics") != std::string::npos);
    }
  }
  // llround(0.25 * 50) = 13, so the distinct/control split is 37/13
  CHECK(controls == 13);
  CHECK(ids.size() == 50);

  auto again = harness::universe(s, testsupport::data_dir());
  REQUIRE(again.size() == pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(again[i].id == pairs[i].id);
    CHECK(again[i].is_control == pairs[i].is_control);
  }
}

TEST_CASE("subsampling is seeded and bounded") {
  harness::ExperimentSpec s;
  s.domain = prompts::Domain::religious;
  s.master_seed = 21;
  s.sample_size = 40;
  auto a = harness::subsample(harness::universe(s, testsupport::data_dir()), s);
  auto b = harness::subsample(harness::universe(s, testsupport::data_dir()), s);
  REQUIRE(a.size() == 40);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    ids.insert(a[i].id);
  }
  CHECK(ids.size() == 40);

  s.master_seed = 22;
  auto c = harness::subsample(harness::universe(s, testsupport::data_dir()), s);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i)
    any_diff = any_diff || c[i].id != a[i].id;
  CHECK(any_diff);

  harness::ExperimentSpec tiny = small_spec();
  tiny.sample_size = 99;
  CHECK_THROWS_AS(
      harness::subsample(harness::universe(tiny, testsupport::data_dir()),
                         tiny),
      DataError);
}

TEST_CASE("simulator trigger list covers both tables and the fixture") {
  auto triggers = harness::simulator_triggers(testsupport::data_dir());
  CHECK(triggers.size() == 41);
  CHECK(std::find(triggers.begin(), triggers.end(), "Judeo-Christian ethics") !=
        triggers.end());
  CHECK(std::find(triggers.begin(), triggers.end(), "Christian") !=
        triggers.end());
}

TEST_CASE("task prompt selection tracks the domain") {
  harness::ExperimentSpec s;
  s.domain = prompts::Domain::religious;
  CHECK(harness::task_prompts_for(s, testsupport::data_dir()).size() == 5);
  s.domain = prompts::Domain::grok;
  CHECK(harness::task_prompts_for(s, testsupport::data_dir()).size() == 5);
  s.domain = prompts::Domain::custom;
  CHECK_THROWS_AS(harness::task_prompts_for(s, testsupport::data_dir()),
                  DataError);
  s.task_prompts = {"one question"};
  CHECK(harness::task_prompts_for(s, testsupport::data_dir()) ==
        s.task_prompts);
}

// ---- per-pair protocol -------------------------------------------------------

TEST_CASE("a steered pair separates and a control pair does not") {
  fs::path dir = fresh_dir("runpair");
  harness::ExperimentSpec spec = small_spec();
  auto backend = harness::make_simulator_backend(spec);
  embed::LocalHashEmbedder embedder(spec.embedder);
  auto tasks = spec.task_prompts;

  auto steered = harness::run_pair(spec.explicit_pairs[0], tasks, spec,
                                   *backend, embedder, dir);
  CHECK(steered.decision == stats::Decision::distinct);
  CHECK(steered.p_value < 0.05);
  CHECK(steered.s_obs < 0.9);

  auto control = harness::run_pair(spec.explicit_pairs[4], tasks, spec,
                                   *backend, embedder, dir);
  CHECK(control.ground_truth_distinct == false);
  CHECK(control.p_value > 0.05);
  // identical prompts on both sides still sample distinct replicate streams
  CHECK(control.s_obs < 1.0);

  auto rerun = harness::run_pair(spec.explicit_pairs[0], tasks, spec,
                                 *backend, embedder, dir);
  CHECK(rerun.p_value == steered.p_value);
  CHECK(rerun.s_obs == steered.s_obs);
  fs::remove_all(dir);
}

// ---- full runs ---------------------------------------------------------------

TEST_CASE("experiment run writes a complete, reproducible artifact set") {
  fs::path dir = fresh_dir("run1");
  harness::ExperimentSpec spec = small_spec();
  auto report =
      harness::run_experiment(spec, dir, testsupport::data_dir());

  CHECK(report.completed == 6);
  CHECK(report.errored.empty());
  CHECK(report.degenerate.empty());
  CHECK(report.confusion.tp == 4);
  CHECK(report.confusion.fp + report.confusion.tn == 2);
  CHECK(report.confusion.fn == 0);
  REQUIRE(report.avg_p_tp.has_value());
  CHECK(*report.avg_p_tp < 0.05);

  for (const char* name :
       {"manifest.json", "pairs.jsonl", "outcomes.jsonl", "report.txt",
        "report.json"})
    CHECK(fs::exists(dir / name));

  std::string text = slurp(dir / "report.txt");
  CHECK(text.find("run-") != std::string::npos);
  CHECK(text.find("custom") != std::string::npos);
  CHECK(text.find("6 completed, 0 errored") != std::string::npos);

  nlohmann::json rj = store::read_json(dir / "report.json");
  CHECK(rj.at("confusion").at("tp").get<int>() == 4);
  CHECK(rj.at("completed").get<int>() == 6);

  SECTION("identical spec in a fresh directory reproduces both reports") {
    fs::path dir2 = fresh_dir("run2");
    harness::run_experiment(spec, dir2, testsupport::data_dir());
    CHECK(slurp(dir2 / "report.txt") == text);
    CHECK(slurp(dir2 / "report.json") == slurp(dir / "report.json"));
    fs::remove_all(dir2);
  }

  SECTION("rerunning in place resumes without recomputing outcomes") {
    std::string outcomes_before = slurp(dir / "outcomes.jsonl");
    auto again = harness::run_experiment(spec, dir, testsupport::data_dir());
    CHECK(again.completed == 6);
    CHECK(slurp(dir / "outcomes.jsonl") == outcomes_before);
    CHECK(slurp(dir / "report.txt") == text);
  }

  SECTION("the manifest alone replays the run byte for byte") {
    fs::path dir3 = fresh_dir("run3");
    auto replayed = harness::replay_manifest(dir / "manifest.json", dir3,
                                             testsupport::data_dir());
    CHECK(replayed.completed == 6);
    CHECK(slurp(dir3 / "report.txt") == text);
    CHECK(slurp(dir3 / "report.json") == slurp(dir / "report.json"));
    fs::remove_all(dir3);
  }

  SECTION("a run directory refuses a different spec") {
    harness::ExperimentSpec other = spec;
    other.alpha = 0.01;
    CHECK_THROWS_AS(
        harness::run_experiment(other, dir, testsupport::data_dir()),
        DataError);
  }

  fs::remove_all(dir);
}

TEST_CASE("manifest records versions, digests and the experiment definition") {
  fs::path dir = fresh_dir("manifest");
  harness::ExperimentSpec spec = small_spec();
  spec.sample_size = std::nullopt;
  harness::run_experiment(spec, dir, testsupport::data_dir());

  nlohmann::json m = store::read_json(dir / "manifest.json");
  CHECK(m.at("schema") == kManifestSchema);
  CHECK(m.at("code_version") == kVersion);
  CHECK(m.at("algorithms").at("rng") == kRngAlgorithm);
  CHECK(m.at("data_digests").size() >= 6);
  CHECK(m.at("pair_count").get<int>() == 6);
  harness::ExperimentSpec echoed = harness::spec_from_json(m.at("spec"));
  CHECK(echoed.master_seed == spec.master_seed);
  CHECK(echoed.run_id == harness::default_run_id(spec));
  fs::remove_all(dir);
}

TEST_CASE("pairs whose responses never vary are flagged degenerate") {
  fs::path dir = fresh_dir("degen");
  harness::ExperimentSpec spec;
  spec.domain = prompts::Domain::custom;
  prompts::PromptPair p;
  p.id = "frozen";
  p.prompt_a = "You are terse.";
  p.prompt_b = "You are very terse.";
  p.is_control = false;
  p.ground_truth_distinct = true;
  spec.explicit_pairs = {p};
  spec.task_prompts = {"Say something."};
  spec.sample_size = std::nullopt;
  spec.k = 3;
  spec.n_perm = 100;
  spec.backend.simulator.base_lexicon = {"same"};
  spec.backend.simulator.marker_lexicon = {"other"};
  spec.backend.simulator.bias_strength = 0.0;
  spec.backend.simulator.reply_length = 4;
  spec.master_seed = 5;

  auto report = harness::run_experiment(spec, dir, testsupport::data_dir());
  CHECK(report.degenerate == std::vector<std::string>{"frozen"});
  // constant responses cannot separate: identical means, p locked at 1
  CHECK(report.confusion.fn == 1);
  REQUIRE(report.avg_p_tp.has_value() == false);
  std::string text = slurp(dir / "report.txt");
  CHECK(text.find("degenerate") != std::string::npos);
  CHECK(text.find("frozen") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("refused pairs are reported, excluded and retried on resume") {
  fs::path dir = fresh_dir("errored");
  harness::ExperimentSpec spec = small_spec();
  spec.explicit_pairs[1].prompt_b += " POISON";

  FaultyBackend backend(spec.backend.simulator);
  embed::LocalHashEmbedder embedder(spec.embedder);
  auto report = harness::run_experiment(spec, backend, embedder, dir,
                                        testsupport::data_dir());
  CHECK(report.completed == 5);
  REQUIRE(report.errored.size() == 1);
  CHECK(report.errored[0].pair_id == "pair-b1");
  CHECK(report.errored[0].reason.find("declined") != std::string::npos);
  CHECK(report.confusion.total() == 5);
  std::string text = slurp(dir / "report.txt");
  CHECK(text.find("errored pairs") != std::string::npos);
  CHECK(text.find("pair-b1") != std::string::npos);

  backend.armed = false;
  auto healed = harness::run_experiment(spec, backend, embedder, dir,
                                        testsupport::data_dir());
  CHECK(healed.completed == 6);
  CHECK(healed.errored.empty());
  fs::remove_all(dir);
}

TEST_CASE("credential failures abort the whole run") {
  fs::path dir = fresh_dir("auth");
  harness::ExperimentSpec spec = small_spec();
  FaultyBackend backend(spec.backend.simulator);
  backend.always_auth_fail = true;
  embed::LocalHashEmbedder embedder(spec.embedder);
  CHECK_THROWS_AS(harness::run_experiment(spec, backend, embedder, dir,
                                          testsupport::data_dir()),
                  AuthError);
  fs::remove_all(dir);
}

TEST_CASE("remote backend kinds refuse the offline constructor") {
  harness::ExperimentSpec spec = small_spec();
  spec.backend.kind = "openai_compat";
  CHECK_THROWS_AS(harness::make_simulator_backend(spec), DataError);
}

// ---- monitoring --------------------------------------------------------------

namespace {

store::ResponseBatch collected_batch(const fs::path& dir,
                                     const std::string& id,
                                     const chat::SimulatorParams& params,
                                     std::uint64_t replicate_key) {
  chat::SimulatorBackend backend(params);
  collect::CollectionPolicy policy;
  policy.max_in_flight = 1;
  policy.retry_limit = 0;
  return collect::collect_batch(
      dir, id, "You are a helpful assistant.",
      {"What should I cook tonight?", "Suggest a plan for the weekend."}, 6,
      backend, policy, replicate_key);
}

}  // namespace

TEST_CASE("monitoring flags the shifted checkpoint and not the stable ones") {
  fs::path dir = fresh_dir("monitor");
  auto stable = fast_sim(0.0, {});
  auto shifted = fast_sim(1.0, {"assistant"});

  auto baseline = collected_batch(dir, "base", stable, 1000);
  std::vector<store::ResponseBatch> checkpoints = {
      collected_batch(dir, "cp0", stable, 2000),
      collected_batch(dir, "cp1", stable, 3000),
      collected_batch(dir, "cp2", shifted, 4000),
      collected_batch(dir, "cp3", stable, 5000),
  };

  harness::MonitorConfig cfg;
  cfg.n_perm = 300;
  cfg.alpha = 0.05;
  cfg.correction = harness::Correction::bh;
  cfg.master_seed = 9;

  embed::EmbedderSpec espec;
  embed::LocalHashEmbedder embedder(espec);
  auto results = harness::monitor(baseline, checkpoints, cfg, embedder);
  REQUIRE(results.size() == 4);
  CHECK(results[2].flagged);
  CHECK(results[2].p_value < 0.01);
  CHECK_FALSE(results[0].flagged);
  CHECK_FALSE(results[1].flagged);
  CHECK_FALSE(results[3].flagged);
  for (const auto& r : results) CHECK(r.index < 4);

  SECTION("streaming observation recorrects previous checkpoints") {
    harness::Monitor m(baseline, cfg, embedder);
    for (const auto& cp : checkpoints) m.observe(cp);
    REQUIRE(m.results().size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(m.results()[i].flagged == results[i].flagged);
      CHECK(m.results()[i].p_value == results[i].p_value);
    }
  }

  SECTION("checkpoints must match the baseline shape") {
    harness::Monitor m(baseline, cfg, embedder);
    store::ResponseBatch odd = checkpoints[0];
    odd.k = 5;
    std::erase_if(odd.cells, [](const auto& kv) { return kv.first.i == 5; });
    CHECK_THROWS_AS(m.observe(odd), ShapeError);
  }

  SECTION("incomplete batches are rejected outright") {
    store::ResponseBatch partial = baseline;
    partial.status = store::BatchStatus::partial;
    CHECK_THROWS_AS(harness::Monitor(partial, cfg, embedder), DataError);
  }

  fs::remove_all(dir);
}

TEST_CASE("monitoring is deterministic for a fixed seed") {
  fs::path dir = fresh_dir("monitor-det");
  auto stable = fast_sim(0.0, {});
  auto baseline = collected_batch(dir, "base", stable, 1000);
  auto cp = collected_batch(dir, "cp", stable, 2000);

  harness::MonitorConfig cfg;
  cfg.n_perm = 200;
  cfg.master_seed = 4;
  embed::EmbedderSpec espec;
  embed::LocalHashEmbedder embedder(espec);

  harness::Monitor m1(baseline, cfg, embedder);
  harness::Monitor m2(baseline, cfg, embedder);
  m1.observe(cp);
  m2.observe(cp);
  CHECK(m1.results()[0].p_value == m2.results()[0].p_value);
  CHECK(m1.results()[0].s_obs == m2.results()[0].s_obs);

  cfg.master_seed = 6;
  harness::Monitor m3(baseline, cfg, embedder);
  m3.observe(cp);
  // a different seed permutes differently; the statistic is data-only
  CHECK(m3.results()[0].s_obs == m1.results()[0].s_obs);
  fs::remove_all(dir);
}
