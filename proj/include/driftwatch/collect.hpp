#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "driftwatch/chat.hpp"
#include "driftwatch/error.hpp"
#include "driftwatch/rng.hpp"
#include "driftwatch/store.hpp"

namespace driftwatch::collect {

struct CollectionPolicy {
  std::uint32_t max_in_flight = 4;
  std::uint32_t retry_limit = 2;
  std::uint32_t backoff_base_ms = 100;
  std::optional<std::uint32_t> per_minute_cap;
  // cap window; shrinkable so rate-limit behavior stays testable
  std::uint32_t rate_window_ms = 60000;
};

inline void validate(const CollectionPolicy& p) {
  if (p.max_in_flight == 0) throw DataError("max_in_flight must be positive");
  if (p.backoff_base_ms == 0)
    throw DataError("backoff_base_ms must be positive");
  if (p.per_minute_cap && *p.per_minute_cap == 0)
    throw DataError("per_minute_cap must be positive when set");
  if (p.rate_window_ms == 0) throw DataError("rate_window_ms must be positive");
}

// request fields that are constant across a batch
struct RequestShape {
  std::string model_id = "simulator";
  double temperature = 1.0;
  std::uint32_t max_tokens = 256;
};

struct CollectStats {
  std::size_t requests_made = 0;
  std::size_t cells_fetched = 0;
  std::size_t cells_resumed = 0;
  std::size_t retries = 0;
};

namespace detail {

// sliding-window limiter shared by all workers of one collection
class RateLimiter {
 public:
  RateLimiter(std::optional<std::uint32_t> cap, std::uint32_t window_ms)
      : cap_(cap), window_(std::chrono::milliseconds(window_ms)) {}

  void acquire() {
    if (!cap_) return;
    for (;;) {
      std::chrono::steady_clock::duration wait{};
      {
        std::lock_guard<std::mutex> hold(mu_);
        auto now = std::chrono::steady_clock::now();
        while (!stamps_.empty() && now - stamps_.front() >= window_)
          stamps_.pop_front();
        if (stamps_.size() < *cap_) {
          stamps_.push_back(now);
          return;
        }
        wait = window_ - (now - stamps_.front());
      }
      std::this_thread::sleep_for(wait);
    }
  }

 private:
  std::optional<std::uint32_t> cap_;
  std::chrono::steady_clock::duration window_;
  std::mutex mu_;
  std::deque<std::chrono::steady_clock::time_point> stamps_;
};

}  // namespace detail

// Fills the n×k response grid under system_prompt, persisting each cell as it
// lands so an interrupted run resumes without re-querying. Cell (j, i) draws
// replicate mix(replicate_key, i): callers give each batch its own key, which
// keeps replicate streams independent even when two batches share their
// prompts verbatim (control pairs, monitoring checkpoints).
inline store::ResponseBatch collect_batch(
    const std::filesystem::path& dir, const std::string& batch_id,
    const std::string& system_prompt,
    const std::vector<std::string>& task_prompts, std::uint32_t k,
    chat::Backend& backend, const CollectionPolicy& policy,
    std::uint64_t replicate_key, const RequestShape& shape = {},
    CollectStats* stats_out = nullptr) {
  if (k == 0) throw DataError("k must be positive");
  if (task_prompts.empty()) throw DataError("task_prompts must be non-empty");
  validate(policy);

  store::BatchWriter writer(dir, batch_id, system_prompt, task_prompts, k);
  CollectStats stats;
  stats.cells_resumed = writer.present().size();

  std::vector<Cell> todo = writer.missing();
  if (!todo.empty()) {
    detail::RateLimiter limiter(policy.per_minute_cap, policy.rate_window_ms);
    std::atomic<std::size_t> next{0};
    std::atomic<bool> fatal{false};
    std::mutex mu;
    std::exception_ptr fatal_error;

    auto worker = [&] {
      for (;;) {
        if (fatal.load()) return;
        std::size_t slot = next.fetch_add(1);
        if (slot >= todo.size()) return;
        const Cell cell = todo[slot];
        chat::ChatRequest req;
        req.system_prompt = system_prompt;
        req.user_prompt = task_prompts[cell.j];
        req.model_id = shape.model_id;
        req.temperature = shape.temperature;
        req.max_tokens = shape.max_tokens;
        const std::uint64_t replicate = rng::mix(replicate_key, cell.i);

        for (std::uint32_t attempt = 0;; ++attempt) {
          try {
            limiter.acquire();
            {
              std::lock_guard<std::mutex> hold(mu);
              ++stats.requests_made;
              if (attempt > 0) ++stats.retries;
            }
            chat::ChatResponse resp = backend.complete(req, replicate);
            std::lock_guard<std::mutex> hold(mu);
            writer.append(cell, resp);
            ++stats.cells_fetched;
            break;
          } catch (const Error& e) {
            if (!retryable(e)) {
              std::lock_guard<std::mutex> hold(mu);
              if (!fatal_error) fatal_error = std::current_exception();
              fatal.store(true);
              return;
            }
            if (attempt >= policy.retry_limit) break;
            std::this_thread::sleep_for(std::chrono::milliseconds(
                static_cast<std::uint64_t>(policy.backoff_base_ms) << attempt));
          }
        }
      }
    };

    std::size_t n_workers = std::min<std::size_t>(policy.max_in_flight,
                                                  todo.size());
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (fatal_error) {
      writer.close();
      std::rethrow_exception(fatal_error);
    }
  }

  if (!writer.complete()) {
    std::vector<Cell> missing = writer.missing();
    writer.close();
    std::string msg = "batch " + batch_id + " incomplete, missing " +
                      std::to_string(missing.size()) + " cell(s):";
    std::size_t shown = 0;
    for (const Cell& c : missing) {
      if (shown++ == 8) {
        msg += " ...";
        break;
      }
      msg += " (" + std::to_string(c.j) + "," + std::to_string(c.i) + ")";
    }
    throw BatchIncompleteError(std::move(msg), std::move(missing));
  }
  writer.close();
  if (stats_out) *stats_out = stats;
  return store::load_batch(dir, batch_id);
}

}  // namespace driftwatch::collect
