#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "driftwatch/error.hpp"
#include "driftwatch/hash.hpp"
#include "driftwatch/stats.hpp"
#include "driftwatch/store.hpp"
#include "driftwatch/version.hpp"

namespace driftwatch::embed {

namespace fs = std::filesystem;

enum class EmbedderKind { remote, local_hash };

inline const char* to_string(EmbedderKind k) {
  return k == EmbedderKind::remote ? "remote" : "local_hash";
}

struct EmbedderSpec {
  EmbedderKind kind = EmbedderKind::local_hash;
  std::uint32_t dimension = 256;
  std::string model_id;
  bool normalize = true;

  bool operator==(const EmbedderSpec&) const = default;
};

inline void validate(const EmbedderSpec& spec) {
  if (spec.dimension == 0) throw DataError("dimension must be positive");
  if (spec.kind == EmbedderKind::local_hash && spec.dimension < 8)
    throw DataError("local_hash requires dimension >= 8");
  if (spec.kind == EmbedderKind::remote && spec.model_id.empty())
    throw DataError("remote embedder requires a model_id");
}

// lowercased alphanumeric runs; bytes >= 0x80 count as word characters so
// multibyte sequences stay inside one token
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    bool word = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c >= 0x80;
    if (c >= 'A' && c <= 'Z') {
      c = static_cast<unsigned char>(c - 'A' + 'a');
      word = true;
    }
    if (word) {
      current.push_back(static_cast<char>(c));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

// token-count histogram over hashed buckets, optionally L2-normalized
inline stats::EmbeddingVector local_hash_embed(std::string_view text,
                                               const EmbedderSpec& spec) {
  validate(spec);
  auto tokens = tokenize(text);
  if (tokens.empty())
    throw DegenerateEmbeddingError("unembeddable text: no tokens in \"" +
                                   std::string(text.substr(0, 40)) + "\"");
  stats::EmbeddingVector v(spec.dimension, 0.0);
  for (const auto& tok : tokens)
    v[hash::fnv1a64(tok) % spec.dimension] += 1.0;
  if (spec.normalize) {
    double ss = 0.0;
    for (double x : v) ss += x * x;
    double norm = std::sqrt(ss);
    for (double& x : v) x /= norm;
  }
  return v;
}

// stable content address over everything that can change the vector
inline std::string cache_key(std::string_view text, const EmbedderSpec& spec) {
  std::string payload;
  payload += kEmbedKeyAlgorithm;
  payload += '\x1f';
  payload += to_string(spec.kind);
  payload += '\x1f';
  payload += std::to_string(spec.dimension);
  payload += '\x1f';
  payload += spec.model_id;
  payload += '\x1f';
  payload += spec.normalize ? '1' : '0';
  payload += '\x1f';
  payload += text;
  std::uint64_t h1 = hash::fnv1a64(payload);
  std::uint64_t h2 = hash::fnv1a64(payload, h1 ^ 0x9e3779b97f4a7c15ULL);
  return hash::hex64(h1) + hash::hex64(h2);
}

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<stats::EmbeddingVector> embed(
      const std::vector<std::string>& texts) = 0;
  virtual EmbedderSpec spec() const = 0;
};

class LocalHashEmbedder final : public Embedder {
 public:
  explicit LocalHashEmbedder(EmbedderSpec spec) : spec_(spec) {
    if (spec_.kind != EmbedderKind::local_hash)
      throw DataError("LocalHashEmbedder requires kind local_hash");
    validate(spec_);
  }

  std::vector<stats::EmbeddingVector> embed(
      const std::vector<std::string>& texts) override {
    std::vector<stats::EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(local_hash_embed(t, spec_));
    return out;
  }

  EmbedderSpec spec() const override { return spec_; }

 private:
  EmbedderSpec spec_;
};

namespace detail {

// first-write-wins publication: link() refuses to replace an existing entry
inline void publish_first_wins(const fs::path& path, std::string_view bytes) {
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  store::detail::write_file_atomic(tmp, bytes);
  if (::link(tmp.c_str(), path.c_str()) != 0 && errno != EEXIST) {
    ::unlink(tmp.c_str());
    throw DataError("cannot publish cache entry: " + path.string());
  }
  ::unlink(tmp.c_str());
}

}  // namespace detail

// Wraps any embedder with a content-addressed disk cache. Deterministic
// (local_hash) values may be overwritten freely; remote values publish
// first-write-wins so concurrent fills cannot disagree afterwards.
class CachedEmbedder final : public Embedder {
 public:
  CachedEmbedder(Embedder& inner, fs::path cache_dir)
      : inner_(inner), dir_(std::move(cache_dir)) {
    fs::create_directories(dir_);
  }

  std::vector<stats::EmbeddingVector> embed(
      const std::vector<std::string>& texts) override {
    const EmbedderSpec spec = inner_.spec();
    std::vector<stats::EmbeddingVector> out(texts.size());
    std::vector<std::size_t> misses;
    std::vector<std::string> miss_texts;
    for (std::size_t idx = 0; idx < texts.size(); ++idx) {
      auto cached = lookup(texts[idx], spec);
      if (cached) {
        out[idx] = std::move(*cached);
      } else {
        misses.push_back(idx);
        miss_texts.push_back(texts[idx]);
      }
    }
    if (!misses.empty()) {
      auto fresh = inner_.embed(miss_texts);
      for (std::size_t m = 0; m < misses.size(); ++m) {
        write_entry(miss_texts[m], spec, fresh[m]);
        out[misses[m]] = std::move(fresh[m]);
      }
    }
    return out;
  }

  EmbedderSpec spec() const override { return inner_.spec(); }

  // a defective entry counts as a miss and is recomputed
  std::optional<stats::EmbeddingVector> lookup(std::string_view text,
                                               const EmbedderSpec& spec) const {
    fs::path path = entry_path(text, spec);
    if (!fs::exists(path)) return std::nullopt;
    try {
      nlohmann::json doc = store::read_json(path);
      auto values = doc.at("values").get<stats::EmbeddingVector>();
      if (values.size() != spec.dimension) return std::nullopt;
      return values;
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }

  fs::path entry_path(std::string_view text, const EmbedderSpec& spec) const {
    return dir_ / (cache_key(text, spec) + ".json");
  }

 private:
  void write_entry(std::string_view text, const EmbedderSpec& spec,
                   const stats::EmbeddingVector& values) {
    nlohmann::json doc{{"algorithm", kEmbedKeyAlgorithm},
                       {"kind", to_string(spec.kind)},
                       {"dimension", spec.dimension},
                       {"normalize", spec.normalize},
                       {"values", values}};
    fs::path path = entry_path(text, spec);
    std::string bytes = doc.dump() + "\n";
    if (spec.kind == EmbedderKind::local_hash)
      store::detail::write_file_atomic(path, bytes);
    else
      detail::publish_first_wins(path, bytes);
  }

  Embedder& inner_;
  fs::path dir_;
};

// convenience entry point for the offline embedder
inline std::vector<stats::EmbeddingVector> embed(
    const std::vector<std::string>& texts, const EmbedderSpec& spec) {
  if (spec.kind != EmbedderKind::local_hash)
    throw DataError("remote embedding requires a backend handle");
  LocalHashEmbedder local(spec);
  return local.embed(texts);
}

}  // namespace driftwatch::embed
