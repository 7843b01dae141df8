#pragma once

// Version tags recorded in manifests, cache keys, and persisted files.
// Bumping any of these is a compatibility break for artifacts on disk.

namespace driftwatch {

inline constexpr const char* kVersion = "0.1.0";

inline constexpr const char* kRngAlgorithm = "splitmix64+xoshiro256pp.v1";
inline constexpr const char* kTokenHashAlgorithm = "fnv1a64.v1";
inline constexpr const char* kEmbedKeyAlgorithm = "embedkey.v1";

inline constexpr const char* kBatchSchema = "driftwatch.batch.v1";
inline constexpr const char* kPairsSchema = "driftwatch.pairs.v1";
inline constexpr const char* kOutcomesSchema = "driftwatch.outcomes.v1";
inline constexpr const char* kManifestSchema = "driftwatch.manifest.v1";
inline constexpr const char* kReportSchema = "driftwatch.report.v1";
inline constexpr const char* kMonitorSchema = "driftwatch.monitor.v1";

}  // namespace driftwatch
