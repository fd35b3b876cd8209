#pragma once

// Append-only observation log. Each record is a 4-byte little-endian length
// followed by one JSON observation. A torn final record (crash mid-write) is
// truncated on open. Replaying the log rebuilds the completion index; an ok
// record is never replaced, a failed one is replaced by any later record.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "entbias/scoring.hpp"

namespace entbias {

struct ReplayStats {
  std::size_t records = 0;
  std::size_t torn_bytes = 0;  // truncated from the tail
};

class ObservationStore {
 public:
  /// Opens (creating if needed) and replays the log at `path`.
  explicit ObservationStore(std::filesystem::path path);
  ObservationStore(const ObservationStore&) = delete;
  ObservationStore& operator=(const ObservationStore&) = delete;

  /// Persists `o` unless its key already has an ok record. Flushes before
  /// returning. Returns whether a record was written.
  bool append(const Observation& o);

  bool completed(const std::string& key) const;
  bool has_record(const std::string& key) const;

  /// Latest record per key, sorted by key.
  std::vector<Observation> observations() const;
  std::size_t size() const;
  std::size_t ok_count() const;

  const ReplayStats& replay_stats() const { return replay_; }
  const std::filesystem::path& path() const { return path_; }

  /// Rewrites the log as one record per key in key order.
  void compact();

  /// Sorted TSV view: one line per key, no timestamps or retry counts.
  void write_snapshot(std::ostream& out) const;

  /// Read-only replay of a log, without truncating it.
  static std::vector<Observation> read(const std::filesystem::path& path);

 private:
  void apply(Observation o);
  void write_record(std::ofstream& out, const Observation& o);

  std::filesystem::path path_;
  std::ofstream out_;
  std::map<std::string, Observation> index_;
  ReplayStats replay_;
  mutable std::mutex mu_;
};

/// Snapshot of an in-memory observation list, same format as the store's.
void write_observation_snapshot(std::ostream& out, const std::vector<Observation>& sorted);

}  // namespace entbias
