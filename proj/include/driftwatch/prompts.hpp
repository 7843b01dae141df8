#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "driftwatch/error.hpp"
#include "driftwatch/hash.hpp"
#include "driftwatch/rng.hpp"

// Synthetic system-prompt-pair generators plus the bundled task-prompt sets
// and real-world fixtures. A pair is a neutral system prompt and a biased
// counterpart built by filling a bias template with a worldview or
// controversy and appending it to the neutral text. Control pairs carry the
// same text on both sides so false-positive behavior can be measured.

namespace driftwatch::prompts {

// ============================================================================
// domain types
// ============================================================================

struct NeutralPrompt {
  std::string text;
};

struct BeliefSpec {
  std::string label;
  std::string description;
};

struct ControversySpec {
  std::string label;
  std::string description;
};

enum class TemplateKind { religious, conspiratorial };

struct BiasTemplate {
  std::string text;
  TemplateKind kind = TemplateKind::religious;
};

struct Provenance {
  std::size_t neutral = 0;
  std::size_t spec = 0;
  std::size_t tmpl = 0;
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct PromptPair {
  std::string id;
  std::string prompt_a;
  std::string prompt_b;
  bool is_control = false;
  bool ground_truth_distinct = true;
  Provenance provenance;
};

enum class Domain { religious, conspiratorial, grok, custom };
enum class ControlStyle { both_neutral, both_biased, mixed };

inline const char* to_string(Domain d) {
  switch (d) {
    case Domain::religious: return "religious";
    case Domain::conspiratorial: return "conspiratorial";
    case Domain::grok: return "grok";
    default: return "custom";
  }
}

inline Domain domain_from_string(std::string_view s) {
  if (s == "religious") return Domain::religious;
  if (s == "conspiratorial") return Domain::conspiratorial;
  if (s == "grok") return Domain::grok;
  if (s == "custom") return Domain::custom;
  throw DataError("unknown domain: " + std::string(s));
}

inline const char* to_string(ControlStyle s) {
  switch (s) {
    case ControlStyle::both_neutral: return "both_neutral";
    case ControlStyle::both_biased: return "both_biased";
    default: return "mixed";
  }
}

inline ControlStyle control_style_from_string(std::string_view s) {
  if (s == "both_neutral") return ControlStyle::both_neutral;
  if (s == "both_biased") return ControlStyle::both_biased;
  if (s == "mixed") return ControlStyle::mixed;
  throw DataError("unknown control style: " + std::string(s));
}

struct GenerationConfig {
  Domain domain = Domain::religious;
  double control_fraction = 0.25;
  std::uint64_t seed = 0;
  ControlStyle control_style = ControlStyle::mixed;
};

// the five tables, loaded and validated together
struct PromptTables {
  std::vector<NeutralPrompt> neutral;                 // 5
  std::vector<BeliefSpec> beliefs;                    // 20
  std::vector<ControversySpec> controversies;         // 20
  std::vector<BiasTemplate> religious_templates;      // 20
  std::vector<BiasTemplate> conspiratorial_templates; // 10
};

// ============================================================================
// table loading
// ============================================================================

namespace detail {

inline nlohmann::json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open data file: " + p.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed data file " + p.string() + ": " + e.what());
  }
  return j;
}

inline void require_count(std::size_t got, std::size_t want,
                          const std::string& what) {
  if (got != want)
    throw DataError(what + ": expected " + std::to_string(want) +
                    " entries, got " + std::to_string(got));
}

inline void require_placeholders(const std::string& text,
                                 std::initializer_list<const char*> names,
                                 const std::string& what) {
  for (const char* name : names)
    if (text.find(name) == std::string::npos)
      throw DataError(what + ": template is missing placeholder " + name +
                      ": " + text);
}

}  // namespace detail

// Loads and validates the bundled tables. Any cardinality or placeholder
// problem fails here, never at render time.
inline PromptTables load_tables(const std::filesystem::path& data_dir) {
  PromptTables t;

  auto neutral = detail::read_json_file(data_dir / "neutral_prompts.json");
  for (const auto& s : neutral.at("prompts"))
    t.neutral.push_back({s.get<std::string>()});
  detail::require_count(t.neutral.size(), 5, "neutral prompts");
  for (const auto& n : t.neutral)
    if (n.text.empty()) throw DataError("neutral prompts: empty entry");

  auto beliefs = detail::read_json_file(data_dir / "beliefs.json");
  for (const auto& b : beliefs.at("beliefs"))
    t.beliefs.push_back(
        {b.at("label").get<std::string>(), b.at("description").get<std::string>()});
  detail::require_count(t.beliefs.size(), 20, "beliefs");
  for (const auto& b : t.beliefs)
    if (b.label.empty() || b.description.empty())
      throw DataError("beliefs: empty label or description");

  auto cont = detail::read_json_file(data_dir / "controversies.json");
  for (const auto& c : cont.at("controversies"))
    t.controversies.push_back(
        {c.at("label").get<std::string>(), c.at("description").get<std::string>()});
  detail::require_count(t.controversies.size(), 20, "controversies");
  for (const auto& c : t.controversies)
    if (c.label.empty() || c.description.empty())
      throw DataError("controversies: empty label or description");

  auto rel = detail::read_json_file(data_dir / "templates_religious.json");
  for (const auto& s : rel.at("templates")) {
    std::string text = s.get<std::string>();
    detail::require_placeholders(text, {"{belief}", "{desc}"},
                                 "religious templates");
    t.religious_templates.push_back({text, TemplateKind::religious});
  }
  detail::require_count(t.religious_templates.size(), 20,
                        "religious templates");

  auto con = detail::read_json_file(data_dir / "templates_conspiratorial.json");
  for (const auto& s : con.at("templates")) {
    std::string text = s.get<std::string>();
    detail::require_placeholders(text, {"{cont}", "{desc}"},
                                 "conspiratorial templates");
    t.conspiratorial_templates.push_back({text, TemplateKind::conspiratorial});
  }
  detail::require_count(t.conspiratorial_templates.size(), 10,
                        "conspiratorial templates");

  return t;
}

// ============================================================================
// rendering
// ============================================================================

namespace detail {

inline void replace_all(std::string& s, std::string_view from,
                        std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

// runs of spaces left behind by empty placeholder values shrink to one
inline void collapse_spaces(std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == ' ' && !out.empty() && out.back() == ' ') continue;
    out.push_back(c);
  }
  s.swap(out);
}

inline std::string render_clause(const BiasTemplate& tmpl,
                                 std::string_view label,
                                 std::string_view description) {
  std::string clause = tmpl.text;
  if (tmpl.kind == TemplateKind::religious)
    replace_all(clause, "{belief}", label);
  else
    replace_all(clause, "{cont}", label);
  replace_all(clause, "{desc}", description);
  collapse_spaces(clause);
  return clause;
}

}  // namespace detail

// Biased prompt = neutral text + single space + filled template. No other
// normalization is applied.
inline std::string render_biased(const NeutralPrompt& neutral,
                                 const BeliefSpec& spec,
                                 const BiasTemplate& tmpl) {
  if (tmpl.kind != TemplateKind::religious)
    throw DataError("render_biased: belief passed to a non-religious template");
  return neutral.text + " " +
         detail::render_clause(tmpl, spec.label, spec.description);
}

inline std::string render_biased(const NeutralPrompt& neutral,
                                 const ControversySpec& spec,
                                 const BiasTemplate& tmpl) {
  if (tmpl.kind != TemplateKind::conspiratorial)
    throw DataError(
        "render_biased: controversy passed to a non-conspiratorial template");
  return neutral.text + " " +
         detail::render_clause(tmpl, spec.label, spec.description);
}

// ============================================================================
// pair generation
// ============================================================================

namespace detail {

inline std::string pair_id(const std::string& a, const std::string& b,
                           const Provenance& pv, bool control) {
  std::uint64_t h = hash::fnv1a64(a);
  h = hash::fnv1a64("\x1f", h);
  h = hash::fnv1a64(b, h);
  h = hash::fnv1a64("\x1f", h);
  std::string tail = std::to_string(pv.neutral) + "," +
                     std::to_string(pv.spec) + "," + std::to_string(pv.tmpl) +
                     (control ? ",c" : ",b");
  h = hash::fnv1a64(tail, h);
  return hash::hex64(h);
}

}  // namespace detail

// Full Cartesian product (neutral x spec x template, indices ascending in
// that nesting order), with round(control_fraction * total) controls chosen
// by seeded sampling without replacement. Controls carry identical text on
// both sides; which side's text survives is decided by control_style (mixed:
// a seeded 50/50 call per control).
inline std::vector<PromptPair> generate_pairs(const PromptTables& tables,
                                              const GenerationConfig& cfg) {
  if (!(cfg.control_fraction >= 0.0 && cfg.control_fraction < 1.0))
    throw DataError("generate_pairs: control_fraction must lie in [0, 1)");
  if (cfg.domain != Domain::religious && cfg.domain != Domain::conspiratorial)
    throw DataError(
        "generate_pairs covers the table-driven domains; grok pairs come "
        "from the bundled fixture and custom pairs are supplied explicitly");

  const bool religious = cfg.domain == Domain::religious;
  const std::size_t n_specs = 20;
  const std::size_t n_templates = religious ? 20 : 10;
  const std::size_t total = tables.neutral.size() * n_specs * n_templates;

  const auto m = static_cast<std::size_t>(
      std::llround(cfg.control_fraction * static_cast<double>(total)));
  auto pick_gen = rng::substream(cfg.seed, hash::fnv1a64("controls"));
  std::vector<std::size_t> control_idx =
      rng::sample_without_replacement(total, m, pick_gen);
  std::vector<std::uint8_t> is_control(total, 0);
  for (auto i : control_idx) is_control[i] = 1;

  auto style_gen = rng::substream(cfg.seed, hash::fnv1a64("control-style"));

  std::vector<PromptPair> out;
  out.reserve(total);
  std::size_t flat = 0;
  for (std::size_t ni = 0; ni < tables.neutral.size(); ++ni) {
    for (std::size_t si = 0; si < n_specs; ++si) {
      for (std::size_t ti = 0; ti < n_templates; ++ti, ++flat) {
        const NeutralPrompt& neutral = tables.neutral[ni];
        std::string biased =
            religious ? render_biased(neutral, tables.beliefs[si],
                                      tables.religious_templates[ti])
                      : render_biased(neutral, tables.controversies[si],
                                      tables.conspiratorial_templates[ti]);

        PromptPair p;
        p.provenance = {ni, si, ti};
        if (is_control[flat]) {
          bool use_biased = cfg.control_style == ControlStyle::both_biased ||
                            (cfg.control_style == ControlStyle::mixed &&
                             style_gen.bounded(2) == 1);
          const std::string& text = use_biased ? biased : neutral.text;
          p.prompt_a = text;
          p.prompt_b = text;
          p.is_control = true;
          p.ground_truth_distinct = false;
        } else {
          p.prompt_a = neutral.text;
          p.prompt_b = std::move(biased);
          p.is_control = false;
          p.ground_truth_distinct = true;
        }
        p.id = detail::pair_id(p.prompt_a, p.prompt_b, p.provenance,
                               p.is_control);
        out.push_back(std::move(p));
      }
    }
  }
  return out;
}

inline std::vector<PromptPair> generate_pairs(
    const std::filesystem::path& data_dir, const GenerationConfig& cfg) {
  return generate_pairs(load_tables(data_dir), cfg);
}

// ============================================================================
// bundled task prompts and fixtures
// ============================================================================

enum class Experiment { religion, conspiracy, grok };

inline const char* to_string(Experiment e) {
  switch (e) {
    case Experiment::religion: return "religion";
    case Experiment::conspiracy: return "conspiracy";
    case Experiment::grok: return "grok";
  }
  return "?";
}

inline Experiment experiment_from_string(std::string_view s) {
  if (s == "religion") return Experiment::religion;
  if (s == "conspiracy") return Experiment::conspiracy;
  if (s == "grok") return Experiment::grok;
  throw DataError("unknown experiment: " + std::string(s));
}

// The five fixed elicitation questions for an experiment, in bundled order.
inline std::vector<std::string> load_task_prompts(
    Experiment experiment, const std::filesystem::path& data_dir) {
  auto j = detail::read_json_file(data_dir / "task_prompts.json");
  std::vector<std::string> out;
  for (const auto& s : j.at(to_string(experiment))) out.push_back(s.get<std::string>());
  detail::require_count(out.size(), 5, "task prompts");
  return out;
}

enum class GrokVariant { neutral, biased };

// Verbatim bundled deployment-scale system prompt (neutral) and its manually
// steered counterpart (biased).
inline std::string load_grok_fixture(GrokVariant variant,
                                     const std::filesystem::path& data_dir) {
  auto j = detail::read_json_file(data_dir / "grok_fixtures.json");
  std::string out =
      j.at(variant == GrokVariant::neutral ? "neutral" : "biased")
          .get<std::string>();
  if (out.empty()) throw DataError("grok fixture: empty text");
  return out;
}

}  // namespace driftwatch::prompts
