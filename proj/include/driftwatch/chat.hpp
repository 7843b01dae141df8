#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "driftwatch/error.hpp"
#include "driftwatch/hash.hpp"
#include "driftwatch/rng.hpp"

namespace driftwatch::chat {

// One sampled completion request. Replicate indices distinguish the k draws
// made under the same prompts; deterministic backends fold the index into
// their stream seed, real providers ignore it.
struct ChatRequest {
  std::string system_prompt;
  std::string user_prompt;
  std::string model_id = "simulator";
  double temperature = 1.0;
  std::uint32_t max_tokens = 256;
};

struct ChatResponse {
  std::string text;
  std::string provider;
  std::uint64_t latency_ms = 0;
  std::string request_fingerprint;
};

inline void validate(const ChatRequest& req) {
  if (req.system_prompt.empty()) throw DataError("empty system prompt");
  if (req.user_prompt.empty()) throw DataError("empty user prompt");
  if (!(req.temperature >= 0.0))
    throw DataError("temperature must be >= 0");
  if (req.max_tokens == 0) throw DataError("max_tokens must be positive");
}

// Offline stand-in for a steerable model. Replies are streams of base_lexicon
// tokens; when the system prompt contains any registered trigger substring,
// each token is independently replaced by a marker_lexicon token with
// probability bias_strength.
struct SimulatorParams {
  double bias_strength = 0.0;
  std::vector<std::string> marker_lexicon;
  std::vector<std::string> base_lexicon;
  std::uint32_t reply_length = 32;
  std::uint64_t seed_salt = 0;
  std::vector<std::string> bias_triggers;
};

inline void validate(const SimulatorParams& params) {
  if (!(params.bias_strength >= 0.0 && params.bias_strength <= 1.0))
    throw DataError("bias_strength must lie in [0, 1]");
  if (params.marker_lexicon.empty()) throw DataError("empty marker lexicon");
  if (params.base_lexicon.empty()) throw DataError("empty base lexicon");
  if (params.reply_length == 0)
    throw DataError("reply_length must be positive");
  std::unordered_set<std::string_view> base(params.base_lexicon.begin(),
                                            params.base_lexicon.end());
  for (const auto& m : params.marker_lexicon)
    if (base.count(m))
      throw DataError("lexicons must be disjoint, both contain \"" + m + "\"");
}

inline bool bias_indicator(std::string_view system_prompt,
                           const SimulatorParams& params) {
  for (const auto& trigger : params.bias_triggers)
    if (!trigger.empty() &&
        system_prompt.find(trigger) != std::string_view::npos)
      return true;
  return false;
}

namespace detail {
inline std::uint64_t stream_seed(const ChatRequest& req,
                                 const SimulatorParams& params,
                                 std::uint64_t replicate) {
  return rng::mix(rng::mix(hash::fnv1a64(req.system_prompt),
                           hash::fnv1a64(req.user_prompt)),
                  rng::mix(replicate, params.seed_salt));
}
}  // namespace detail

inline ChatResponse simulate(const ChatRequest& req,
                             const SimulatorParams& params,
                             std::uint64_t replicate) {
  validate(req);
  validate(params);
  const std::uint64_t seed = detail::stream_seed(req, params, replicate);
  rng::Xoshiro256pp gen(seed);
  const double substitution_rate =
      bias_indicator(req.system_prompt, params) ? params.bias_strength : 0.0;

  std::string text;
  for (std::uint32_t t = 0; t < params.reply_length; ++t) {
    std::string_view token =
        params.base_lexicon[gen.bounded(params.base_lexicon.size())];
    // uniform() < rate is never true at rate 0 and always true at rate 1,
    // since uniform() lies in [0, 1)
    if (gen.uniform() < substitution_rate)
      token = params.marker_lexicon[gen.bounded(params.marker_lexicon.size())];
    if (t) text.push_back(' ');
    text.append(token);
  }

  ChatResponse resp;
  resp.text = std::move(text);
  resp.provider = "simulator";
  resp.latency_ms = 0;
  resp.request_fingerprint = hash::hex64(seed);
  return resp;
}

// Chat backends must be safely shareable across collection workers.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual ChatResponse complete(const ChatRequest& req,
                                std::uint64_t replicate) = 0;
  virtual std::string name() const = 0;
};

class SimulatorBackend final : public Backend {
 public:
  explicit SimulatorBackend(SimulatorParams params)
      : params_(std::move(params)) {
    validate(params_);
  }

  ChatResponse complete(const ChatRequest& req,
                        std::uint64_t replicate) override {
    return simulate(req, params_, replicate);
  }

  std::string name() const override { return "simulator"; }

  const SimulatorParams& params() const { return params_; }

 private:
  const SimulatorParams params_;
};

inline ChatResponse complete(const ChatRequest& req, Backend& backend,
                             std::uint64_t replicate = 0) {
  validate(req);
  return backend.complete(req, replicate);
}

// Lexicons for smoke tests and offline experiment runs. Base tokens are
// everyday conversational filler; marker tokens are a disjoint themed set so
// substitution shifts the bag-of-words embedding measurably.
inline SimulatorParams default_simulator_params() {
  SimulatorParams p;
  p.base_lexicon = {
      "the",     "a",        "is",      "are",     "was",     "be",
      "to",      "of",       "and",     "in",      "that",    "it",
      "for",     "on",       "with",    "as",      "this",    "question",
      "answer",  "people",   "often",   "think",   "about",   "many",
      "some",    "view",     "matter",  "depends", "context", "others",
      "believe", "evidence", "suggests", "overall", "balance", "consider",
      "opinion", "topic",    "general", "common",  "point",   "time",
      "way",     "world",    "idea",    "sense",   "fair",    "clear"};
  p.marker_lexicon = {
      "faith",     "scripture", "divine",    "sacred",   "doctrine",
      "prophecy",  "blessed",   "covenant",  "eternal",  "righteous",
      "gospel",    "salvation", "creed",     "pilgrim",  "testament",
      "reverence", "almighty",  "spiritual", "devotion", "providence",
      "hallowed",  "miracle",   "ordained",  "anointed"};
  p.reply_length = 32;
  return p;
}

}  // namespace driftwatch::chat
