// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "revive/error.hpp"
#include "revive/types.hpp"

namespace revive {

struct Block {
  std::uint32_t ref_count = 0;
  std::uint32_t slots_used = 0;

  friend bool operator==(const Block&, const Block&) = default;
};

enum class OpKind : std::uint8_t { Allocate, IncRef, DecRef, AppendSlot, Free };

constexpr std::string_view to_string(OpKind k) {
  switch (k) {
    case OpKind::Allocate: return "Allocate";
    case OpKind::IncRef: return "IncRef";
    case OpKind::DecRef: return "DecRef";
    case OpKind::AppendSlot: return "AppendSlot";
    case OpKind::Free: return "Free";
  }
  return "?";
}

// One undoable block operation. `position` is the index the block held in the
// sequence's list (DecRef/Free); `prior_slots` is the freed block's fill.
struct OpEntry {
  OpKind kind = OpKind::Allocate;
  BlockId block = 0;
  SeqId seq = 0;
  std::uint32_t position = 0;
  std::uint32_t prior_slots = 0;

  friend bool operator==(const OpEntry&, const OpEntry&) = default;
};

using OpLog = std::vector<OpEntry>;

// Paged KV-block table of one attention executor. Every mutation between two
// begin_step() calls is logged so that a failed step can be rolled back.
class BlockTable {
 public:
  static constexpr std::uint32_t kDefaultBlockSize = 128;

  explicit BlockTable(std::uint32_t num_blocks = 0, std::uint32_t block_size = kDefaultBlockSize)
      : block_size_(block_size), blocks_(num_blocks) {
    if (block_size == 0) throw ConfigError("block_size must be > 0");
    for (BlockId b = 0; b < num_blocks; ++b) free_.insert(free_.end(), b);
  }

  std::uint32_t block_size() const noexcept { return block_size_; }
  std::size_t num_blocks() const noexcept { return blocks_.size(); }
  std::size_t free_count() const noexcept { return free_.size(); }
  const std::set<BlockId>& free_pool() const noexcept { return free_; }
  const OpLog& log() const noexcept { return log_; }
  const std::map<SeqId, std::vector<BlockId>>& tables() const noexcept { return tables_; }

  const Block& block(BlockId b) const {
    if (b >= blocks_.size()) throw LookupError("unknown block " + std::to_string(b));
    return blocks_[b];
  }

  std::span<const BlockId> blocks_of(SeqId seq) const {
    auto it = tables_.find(seq);
    if (it == tables_.end()) return {};
    return it->second;
  }

  // Tokens stored for `seq` (sum of slots over its blocks).
  std::size_t slots_of(SeqId seq) const {
    std::size_t n = 0;
    for (BlockId b : blocks_of(seq)) n += blocks_[b].slots_used;
    return n;
  }

  // The previous step is complete; start a fresh log.
  void begin_step() { log_.clear(); }

  BlockId allocate_block(SeqId seq) {
    if (free_.empty()) throw OutOfBlocks("block pool exhausted (" + std::to_string(blocks_.size()) + " blocks)");
    BlockId b = *free_.begin();
    free_.erase(free_.begin());
    blocks_[b] = Block{1, 0};
    tables_[seq].push_back(b);
    log_.push_back({OpKind::Allocate, b, seq, 0, 0});
    return b;
  }

  // `seq` starts referencing an already-live block (prefix sharing, fork).
  void share_block(SeqId seq, BlockId b) {
    if (block(b).ref_count == 0) throw StateError("cannot share free block " + std::to_string(b));
    ++blocks_[b].ref_count;
    tables_[seq].push_back(b);
    log_.push_back({OpKind::IncRef, b, seq, 0, 0});
  }

  // Fill one slot in the last block of `seq`.
  BlockId append_slot(SeqId seq) {
    auto it = tables_.find(seq);
    if (it == tables_.end()) throw StateError("sequence " + std::to_string(seq) + " owns no blocks");
    BlockId b = it->second.back();
    if (blocks_[b].slots_used >= block_size_) throw StateError("block " + std::to_string(b) + " is full");
    ++blocks_[b].slots_used;
    log_.push_back({OpKind::AppendSlot, b, seq, 0, 0});
    return b;
  }

  // Append one token, allocating a new block first when the last one is full.
  BlockId append_token(SeqId seq) {
    auto it = tables_.find(seq);
    if (it == tables_.end() || blocks_[it->second.back()].slots_used >= block_size_) allocate_block(seq);
    return append_slot(seq);
  }

  // Drop the block at `position` from `seq`; frees it when unreferenced.
  void release_block(SeqId seq, std::uint32_t position) {
    auto it = tables_.find(seq);
    if (it == tables_.end() || position >= it->second.size())
      throw LookupError("sequence " + std::to_string(seq) + " has no block at position " + std::to_string(position));
    auto& list = it->second;
    BlockId b = list[position];
    list.erase(list.begin() + position);
    Block& blk = blocks_[b];
    if (blk.ref_count > 1) {
      --blk.ref_count;
      log_.push_back({OpKind::DecRef, b, seq, position, 0});
    } else {
      log_.push_back({OpKind::Free, b, seq, position, blk.slots_used});
      blk = Block{};
      free_.insert(b);
    }
    if (list.empty()) tables_.erase(it);
  }

  void free_sequence(SeqId seq) {
    auto it = tables_.find(seq);
    if (it == tables_.end()) return;
    for (auto pos = static_cast<std::uint32_t>(it->second.size()); pos-- > 0;) release_block(seq, pos);
  }

  // Roll the table back to the last begin_step().
  void undo_step_log() {
    OpLog entries;
    entries.swap(log_);
    replay_undo(entries);
  }

  // Undo `entries` newest-first against the current state. Entries that do
  // not match the state raise IntegrityViolation.
  void replay_undo(std::span<const OpEntry> entries) {
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) undo_one(*it);
  }

  // Structural checks: free pool disjoint from live lists, ref counts equal
  // to occurrences, free <=> unreferenced.
  void check_invariants() const {
    std::vector<std::uint32_t> seen(blocks_.size(), 0);
    for (const auto& [seq, list] : tables_) {
      if (list.empty()) violation("sequence " + std::to_string(seq) + " stored with empty list");
      for (BlockId b : list) {
        if (b >= blocks_.size()) violation("sequence references unknown block");
        if (free_.count(b)) violation("block " + std::to_string(b) + " both free and in use");
        ++seen[b];
      }
    }
    for (BlockId b = 0; b < blocks_.size(); ++b) {
      if (blocks_[b].ref_count != seen[b]) violation("ref count mismatch on block " + std::to_string(b));
      if ((blocks_[b].ref_count == 0) != (free_.count(b) == 1))
        violation("free pool membership mismatch on block " + std::to_string(b));
      if (blocks_[b].slots_used > block_size_) violation("block overfilled");
    }
  }

  // Structural equality; the step log is bookkeeping and not compared.
  friend bool operator==(const BlockTable& a, const BlockTable& b) {
    return a.block_size_ == b.block_size_ && a.blocks_ == b.blocks_ && a.free_ == b.free_ && a.tables_ == b.tables_;
  }

 private:
  [[noreturn]] static void violation(const std::string& what) {
    throw IntegrityViolation("block table: " + what);
  }

  Block& live(BlockId b) {
    if (b >= blocks_.size()) violation("undo references unknown block " + std::to_string(b));
    if (blocks_[b].ref_count == 0) violation("undo expects live block " + std::to_string(b));
    return blocks_[b];
  }

  std::vector<BlockId>& list_ending_in(SeqId seq, BlockId b) {
    auto it = tables_.find(seq);
    if (it == tables_.end() || it->second.back() != b)
      violation("undo expects block " + std::to_string(b) + " at the tail of sequence " + std::to_string(seq));
    return it->second;
  }

  void drop_tail(SeqId seq) {
    auto it = tables_.find(seq);
    it->second.pop_back();
    if (it->second.empty()) tables_.erase(it);
  }

  void insert_at(SeqId seq, std::uint32_t position, BlockId b) {
    auto& list = tables_[seq];
    if (position > list.size()) violation("undo position out of range");
    list.insert(list.begin() + position, b);
  }

  void undo_one(const OpEntry& e) {
    switch (e.kind) {
      case OpKind::Allocate:
      case OpKind::IncRef: {
        Block& blk = live(e.block);
        list_ending_in(e.seq, e.block);
        drop_tail(e.seq);
        if (--blk.ref_count == 0) {
          if (e.kind == OpKind::IncRef) violation("IncRef undo left block unreferenced");
          blk.slots_used = 0;
          free_.insert(e.block);
        }
        break;
      }
      case OpKind::DecRef:
        ++live(e.block).ref_count;
        insert_at(e.seq, e.position, e.block);
        break;
      case OpKind::AppendSlot: {
        Block& blk = live(e.block);
        if (blk.slots_used == 0) violation("AppendSlot undo on empty block");
        --blk.slots_used;
        break;
      }
      case OpKind::Free: {
        if (e.block >= blocks_.size() || !free_.count(e.block))
          violation("Free undo expects block " + std::to_string(e.block) + " in the free pool");
        free_.erase(e.block);
        blocks_[e.block] = Block{1, e.prior_slots};
        insert_at(e.seq, e.position, e.block);
        break;
      }
    }
  }

  std::uint32_t block_size_;
  std::vector<Block> blocks_;
  std::set<BlockId> free_;
  std::map<SeqId, std::vector<BlockId>> tables_;
  OpLog log_;
};

}  // namespace revive
