// Part of the next4 project, under the Apache License v2.0.
// See https://www.apache.org/licenses/LICENSE-2.0 for license information.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "next4/blockdev.hpp"
#include "next4/extents.hpp"

namespace next4 {

struct WriteRequest {
    std::string name;
    uint64_t offset_blocks = 0;
    std::vector<uint8_t> payload;       // padded to a whole number of blocks internally
    std::optional<uint64_t> data_hint;  // allocation hint for new data blocks
    std::optional<uint64_t> meta_hint;  // allocation hint for COW copy blocks
};

struct SnapshotInfo {
    uint64_t id = 0;
    uint64_t inode_block = 0;
    uint64_t mapped = 0;           // blocks the snapshot file maps
    uint64_t identity = 0;         // L == P mappings (MOW, delete protection)
    uint64_t copies = 0;           // L != P mappings (COW)
    uint64_t overhead_blocks = 0;  // inode block + COW bitmap run + index run
};

struct DeviceStats {
    uint64_t total_blocks = 0;
    uint64_t allocated = 0;
    uint64_t free = 0;
    uint64_t excluded = 0;
    std::vector<SnapshotInfo> snapshots;
};

/// Snapshot-capable block store with a flat name → inode namespace. Every
/// metadata write funnels through the COW gate and every data-block release
/// through the MOW gate; the newest snapshot is the sole preservation target.
class Filesystem {
public:
    static Filesystem format(const std::string& path, const DeviceGeometry& geometry);
    static Filesystem open(const std::string& path);

    // --- file layer ---
    uint64_t create_file(const std::string& name, std::optional<uint64_t> meta_hint = {});
    void write_file(const WriteRequest& req);
    std::vector<uint8_t> read_file(const std::string& name);
    std::vector<uint8_t> read_file_range(const std::string& name, uint64_t offset_blocks,
                                         uint64_t length_blocks);
    void truncate_file(const std::string& name, uint64_t from_logical,
                       std::optional<uint64_t> meta_hint = {});
    void remove_file(const std::string& name, std::optional<uint64_t> meta_hint = {});
    const std::map<std::string, uint64_t>& list_files() const { return names_; }
    Inode inode_of(const std::string& name);

    // --- snapshot core ---
    /// Creates a new all-holes snapshot file and makes it active.
    uint64_t snapshot_take(std::optional<uint64_t> hint = {});
    /// First non-hole mapping from `snapshot_id` toward newer snapshots, or
    /// `addr` itself (the live version). Pure.
    uint64_t resolve(uint64_t snapshot_id, uint64_t addr);
    /// Block content as of snapshot time; zeros for blocks that were free then.
    std::vector<uint8_t> snapshot_read_block(uint64_t snapshot_id, uint64_t addr);

    // --- snapshot management ---
    std::vector<SnapshotInfo> snapshot_list();
    std::vector<uint8_t> read_file_at(uint64_t snapshot_id, const std::string& name);
    std::map<std::string, uint64_t> list_files_at(uint64_t snapshot_id);
    /// Deletes a snapshot, merging still-needed mappings into the next-older
    /// one. Returns the number of blocks returned to the free pool.
    uint64_t snapshot_delete(uint64_t snapshot_id);
    DeviceStats stats();

    /// Recomputes every module invariant; returns human-readable violations.
    std::vector<std::string> verify();

    void flush();
    BlockDevice& device() { return dev_; }
    const BlockDevice& device() const { return dev_; }

    // Test access.
    const Bitmap& cow_bitmap(uint64_t snapshot_id) const;
    const Inode& snapshot_inode(uint64_t snapshot_id) const;

    // Gate instrumentation: preservations per (epoch, block).
    uint64_t preservations(uint64_t epoch, uint64_t block) const;
    uint64_t max_preservations() const;

private:
    explicit Filesystem(BlockDevice dev);
    void load_state();

    uint64_t slots_per_block() const;
    uint64_t inode_capacity() const;
    std::pair<uint64_t, uint64_t> slot_location(uint64_t inode_no) const;  // block, byte offset

    Inode load_inode(uint64_t inode_no);
    void store_inode(const Inode& inode, std::optional<uint64_t> meta_hint);
    void store_snapshot_inode(std::size_t idx);

    std::size_t snap_index(uint64_t snapshot_id) const;
    std::optional<std::size_t> active_index() const;

    /// COW gate: preserve the old content of a metadata block about to be
    /// overwritten in place, then write the new content.
    void cow_gate(uint64_t addr, std::span<const uint8_t> new_content,
                  std::optional<uint64_t> meta_hint);

    /// MOW gate for one physical block leaving the live file: true when the
    /// block was transferred to the active snapshot (identity mapping), false
    /// when the caller may free it.
    bool mow_gate(uint64_t phys);

    /// Gate predicate without the side effects: would mow_gate keep `phys`?
    bool mow_wanted(uint64_t phys) const;

    void record_preservation(uint64_t block);

    std::map<std::string, uint64_t> parse_namespace(
        const std::vector<std::vector<uint8_t>>& blocks) const;
    std::vector<std::vector<uint8_t>> encode_namespace() const;
    void store_namespace(std::optional<uint64_t> meta_hint);

    void require_free(uint64_t blocks, const char* what) const;
    uint64_t cow_bitmap_blocks() const;
    uint64_t index_run_blocks(const Inode& inode) const;
    void persist_cow_bitmaps();

    BlockDevice dev_;
    std::map<std::string, uint64_t> names_;
    std::vector<Bitmap> cow_bitmaps_;   // parallel to dev_.snapshots()
    std::vector<Inode> snap_inodes_;    // parallel to dev_.snapshots()
    uint64_t next_epoch_ = 1;
    std::set<std::size_t> dirty_snaps_;  // cached snapshot inodes awaiting store
    std::map<std::pair<uint64_t, uint64_t>, uint64_t> preserve_counts_;
};

}  // namespace next4
