// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "revive/block_table.hpp"
#include "revive/error.hpp"
#include "revive/types.hpp"

namespace revive {

enum class SeqPhase : std::uint8_t { WaitingPrefill, Decoding, MigratedPendingPrefill, Finished };

constexpr std::string_view to_string(SeqPhase p) {
  switch (p) {
    case SeqPhase::WaitingPrefill: return "WaitingPrefill";
    case SeqPhase::Decoding: return "Decoding";
    case SeqPhase::MigratedPendingPrefill: return "MigratedPendingPrefill";
    case SeqPhase::Finished: return "Finished";
  }
  return "?";
}

struct Sequence {
  SeqId id = 0;
  std::vector<TokenId> prompt_tokens;
  std::vector<TokenId> decoded_tokens;
  SeqPhase phase = SeqPhase::WaitingPrefill;
  ExecutorId home = 0;
  std::uint32_t decode_target = 1;

  bool finished() const noexcept { return phase == SeqPhase::Finished; }
  std::size_t position() const noexcept { return prompt_tokens.size() + decoded_tokens.size(); }

  friend bool operator==(const Sequence&, const Sequence&) = default;
};

// Prompt for re-prefill on a new executor: prompt ++ decoded.
inline std::vector<TokenId> build_recovery_prompt(const Sequence& seq) {
  if (seq.finished()) throw StateError("sequence " + std::to_string(seq.id) + " already finished");
  std::vector<TokenId> out;
  out.reserve(seq.position());
  out.insert(out.end(), seq.prompt_tokens.begin(), seq.prompt_tokens.end());
  out.insert(out.end(), seq.decoded_tokens.begin(), seq.decoded_tokens.end());
  return out;
}

struct MigrationAssignment {
  std::vector<std::pair<SeqId, ExecutorId>> moves;  // in planning order
  std::map<ExecutorId, std::size_t> per_target;      // sequences received

  ExecutorId target_of(SeqId seq) const {
    for (const auto& [s, t] : moves)
      if (s == seq) return t;
    throw LookupError("sequence " + std::to_string(seq) + " not in assignment");
  }
};

// Greedy least-loaded placement, ties to the lowest executor id.
inline MigrationAssignment plan_migration(ExecutorId failed, const std::vector<SeqId>& seqs,
                                          std::map<ExecutorId, std::size_t> survivor_loads) {
  survivor_loads.erase(failed);
  if (survivor_loads.empty())
    throw UnrecoverableError("no surviving attention executor to migrate sequences from executor " +
                             std::to_string(failed));
  MigrationAssignment plan;
  for (SeqId s : seqs) {
    auto best = std::min_element(survivor_loads.begin(), survivor_loads.end(),
                                 [](const auto& a, const auto& b) { return a.second < b.second; });
    plan.moves.emplace_back(s, best->first);
    ++plan.per_target[best->first];
    ++best->second;
  }
  return plan;
}

// Stable pseudo-random token for (seed, seq, position). Recomputing a reverted
// step regenerates the same ids.
inline TokenId synth_token(std::uint64_t seed, SeqId seq, std::size_t position, std::uint32_t vocab = 129280) {
  std::uint64_t z = seed ^ (seq * 0x9E3779B97F4A7C15ULL) ^ (static_cast<std::uint64_t>(position) << 32);
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return static_cast<TokenId>(z % vocab);
}

// Request state and KV block table of one DPExecutor.
class AttentionExecutor {
 public:
  AttentionExecutor(ExecutorId id, std::uint32_t num_blocks, std::uint32_t block_size, std::uint64_t token_seed)
      : id_(id), table_(num_blocks, block_size), token_seed_(token_seed) {}

  ExecutorId id() const noexcept { return id_; }
  const BlockTable& block_table() const noexcept { return table_; }
  const std::map<SeqId, Sequence>& sequences() const noexcept { return seqs_; }
  bool step_in_flight() const noexcept { return in_flight_; }

  const Sequence& sequence(SeqId id) const {
    auto it = seqs_.find(id);
    if (it == seqs_.end()) throw LookupError("executor " + std::to_string(id_) + " has no sequence " + std::to_string(id));
    return it->second;
  }

  std::size_t active_count() const {
    return static_cast<std::size_t>(
        std::count_if(seqs_.begin(), seqs_.end(), [](const auto& kv) { return !kv.second.finished(); }));
  }

  std::vector<SeqId> active_ids() const {
    std::vector<SeqId> out;
    for (const auto& [id, s] : seqs_)
      if (!s.finished()) out.push_back(id);
    return out;
  }

  // Between steps only. Migrated sequences join at the tail of the queue.
  void enqueue(Sequence seq) {
    if (in_flight_) throw StateError("cannot enqueue during an in-flight step");
    seq.home = id_;
    order_.push_back(seq.id);
    seqs_.insert_or_assign(seq.id, std::move(seq));
  }

  void begin_step() {
    if (in_flight_) throw StateError("step already in flight on executor " + std::to_string(id_));
    table_.begin_step();
    snapshot_.clear();
    for (const auto& [id, s] : seqs_) snapshot_.emplace(id, Mark{s.phase, s.decoded_tokens.size()});
    in_flight_ = true;
  }

  // Sequences the step would process, in scheduling order.
  std::vector<SeqId> runnable() const {
    std::vector<SeqId> out;
    for (SeqId id : order_)
      if (!seqs_.at(id).finished()) out.push_back(id);
    return out;
  }

  // Run one sequence's share of the step. Returns false when the pool cannot
  // hold it this step (it waits).
  bool process(SeqId id) {
    if (!in_flight_) throw StateError("process() outside a step");
    Sequence& s = seqs_.at(id);
    if (s.finished()) return true;
    std::size_t writes = s.phase == SeqPhase::Decoding ? 1 : s.position();
    if (blocks_needed(id, writes) > table_.free_count()) return false;
    for (std::size_t i = 0; i < writes; ++i) table_.append_token(id);
    s.decoded_tokens.push_back(synth_token(token_seed_, id, s.position()));
    s.phase = SeqPhase::Decoding;
    if (s.decoded_tokens.size() >= s.decode_target) {
      s.phase = SeqPhase::Finished;
      table_.free_sequence(id);
    }
    return true;
  }

  void end_step() {
    if (!in_flight_) throw StateError("no step in flight");
    in_flight_ = false;
  }

  // Back to the start of the interrupted step: block ops undone, tokens
  // sampled in the step discarded. No-op when no step is in flight.
  void revert_in_flight_step() {
    if (!in_flight_) return;
    table_.undo_step_log();
    for (auto& [id, s] : seqs_) {
      auto it = snapshot_.find(id);
      if (it == snapshot_.end()) throw IntegrityViolation("sequence admitted mid-step");
      s.phase = it->second.phase;
      s.decoded_tokens.resize(it->second.decoded);
    }
    in_flight_ = false;
  }

  // Hand over every unfinished sequence for migration, ready for re-prefill.
  // The local KV state is discarded with the executor.
  std::vector<Sequence> release_for_migration() {
    if (in_flight_) throw StateError("revert the in-flight step before migrating");
    std::vector<Sequence> out;
    for (SeqId id : order_) {
      Sequence& s = seqs_.at(id);
      if (s.finished()) continue;
      s.phase = SeqPhase::MigratedPendingPrefill;
      out.push_back(std::move(s));
    }
    std::erase_if(order_, [&](SeqId id) { return !seqs_.at(id).finished(); });
    std::erase_if(seqs_, [](const auto& kv) { return !kv.second.finished(); });
    table_ = BlockTable(static_cast<std::uint32_t>(table_.num_blocks()), table_.block_size());
    return out;
  }

 private:
  struct Mark {
    SeqPhase phase;
    std::size_t decoded;
  };

  std::size_t blocks_needed(SeqId id, std::size_t writes) const {
    const std::uint32_t bs = table_.block_size();
    auto blocks = table_.blocks_of(id);
    std::size_t room = blocks.empty() ? 0 : bs - table_.block(blocks.back()).slots_used;
    if (writes <= room) return 0;
    return (writes - room + bs - 1) / bs;
  }

  ExecutorId id_;
  BlockTable table_;
  std::uint64_t token_seed_;
  std::map<SeqId, Sequence> seqs_;
  std::vector<SeqId> order_;
  std::map<SeqId, Mark> snapshot_;
  bool in_flight_ = false;
};

}  // namespace revive
