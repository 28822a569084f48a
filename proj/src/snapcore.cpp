// Part of the next4 project, under the Apache License v2.0.
// See https://www.apache.org/licenses/LICENSE-2.0 for license information.
// SPDX-License-Identifier: Apache-2.0
//
// Snapshot core: snapshot files, the COW and MOW gates, COW-bitmap lifecycle
// and chain-resolved snapshot reads.
//
// Gate trigger, for both COW and MOW: an active snapshot exists, its COW bit
// for the block is set, and its snapshot file still has a hole at that
// logical address. Preservation installs the mapping and clears the bit in
// one step, so for any snapshot a set bit and a mapping at the same address
// are mutually exclusive.

#include <algorithm>
#include <cstring>

#include "next4/filesystem.hpp"

namespace next4 {

std::optional<std::size_t> Filesystem::active_index() const {
    if (dev_.snapshots().empty())
        return std::nullopt;
    return dev_.snapshots().size() - 1;
}

std::size_t Filesystem::snap_index(uint64_t snapshot_id) const {
    const auto& snaps = dev_.snapshots();
    for (std::size_t i = 0; i < snaps.size(); ++i)
        if (snaps[i].epoch == snapshot_id)
            return i;
    throw domain_error("unknown snapshot " + std::to_string(snapshot_id));
}

void Filesystem::record_preservation(uint64_t block) {
    uint64_t epoch = dev_.snapshots()[*active_index()].epoch;
    ++preserve_counts_[{epoch, block}];
}

uint64_t Filesystem::preservations(uint64_t epoch, uint64_t block) const {
    auto it = preserve_counts_.find({epoch, block});
    return it == preserve_counts_.end() ? 0 : it->second;
}

uint64_t Filesystem::max_preservations() const {
    uint64_t m = 0;
    for (const auto& [key, n] : preserve_counts_)
        m = std::max(m, n);
    return m;
}

void Filesystem::cow_gate(uint64_t addr, std::span<const uint8_t> new_content,
                          std::optional<uint64_t> meta_hint) {
    auto old = dev_.read_block(addr);
    if (std::equal(old.begin(), old.end(), new_content.begin(), new_content.end()))
        return;

    if (auto a = active_index()) {
        if (!dev_.is_excluded(addr) && cow_bitmaps_[*a].test(addr) &&
            !extent_lookup(snap_inodes_[*a].extents, addr)) {
            uint64_t copy =
                dev_.alloc_blocks(1, meta_hint.value_or(dev_.geometry().data_start()))[0];
            dev_.write_block(copy, old);
            dev_.set_exclude(copy);
            extent_insert(snap_inodes_[*a].extents, Extent{uint32_t(addr), copy, 1});
            cow_bitmaps_[*a].clear(addr);
            dirty_snaps_.insert(*a);
            record_preservation(addr);
        }
    }
    dev_.write_block(addr, new_content);
}

bool Filesystem::mow_wanted(uint64_t phys) const {
    if (dev_.is_excluded(phys))
        throw integrity_error("MOW gate reached a snapshot-owned block " + std::to_string(phys));
    auto a = active_index();
    if (!a)
        return false;
    return cow_bitmaps_[*a].test(phys) &&
           !extent_lookup(snap_inodes_[*a].extents, phys).has_value();
}

bool Filesystem::mow_gate(uint64_t phys) {
    if (!mow_wanted(phys))
        return false;
    std::size_t a = *active_index();
    extent_insert(snap_inodes_[a].extents, Extent{uint32_t(phys), phys, 1});
    dev_.set_exclude(phys);
    cow_bitmaps_[a].clear(phys);
    dirty_snaps_.insert(a);
    record_preservation(phys);
    return true;
}

uint64_t Filesystem::snapshot_take(std::optional<uint64_t> hint) {
    const DeviceGeometry& g = dev_.geometry();
    if (dev_.snapshots().size() >= dev_.snapshot_capacity())
        throw domain_error("out of space: superblock snapshot list is full");

    uint64_t meta = 1 + cow_bitmap_blocks();
    auto run = dev_.alloc_contiguous(meta, hint.value_or(g.data_start()));
    std::vector<uint8_t> zeros(g.block_size, 0);
    for (uint64_t b : run) {
        dev_.write_block(b, zeros);  // scrub whatever a prior owner left behind
        dev_.set_exclude(b);
    }

    // Frozen view of "in use, not snapshot-owned" — the snapshot's own
    // metadata was excluded just above and stays out.
    cow_bitmaps_.push_back(dev_.block_bitmap().and_not(dev_.exclude_bitmap()));

    SnapshotEntry entry;
    entry.inode_block = run[0];
    entry.epoch = next_epoch_++;
    entry.cow_bitmap_block = run[1];
    dev_.snapshots().push_back(entry);

    Inode si;
    si.inode_no = entry.inode_block;
    si.flags = kInodeSnapshot;
    si.size_blocks = uint32_t(g.total_blocks);
    snap_inodes_.push_back(std::move(si));

    store_snapshot_inode(snap_inodes_.size() - 1);
    flush();
    return entry.epoch;
}

void Filesystem::store_snapshot_inode(std::size_t idx) {
    const DeviceGeometry& g = dev_.geometry();
    const SnapshotEntry& entry = dev_.snapshots()[idx];
    Inode& inode = snap_inodes_[idx];

    DecodedSlot old = decode_inode_slot(dev_.read_block(entry.inode_block));
    uint64_t cur_run = index_blocks_needed(old.extent_count, g.block_size);
    uint64_t new_run = index_run_blocks(inode);

    if (new_run != cur_run) {
        uint64_t old_start = old.inode.index_block;
        if (new_run > 0) {
            uint64_t hint = old_start ? old_start : entry.cow_bitmap_block + cow_bitmap_blocks();
            auto run = dev_.alloc_contiguous(new_run, hint);
            for (uint64_t b : run)
                dev_.set_exclude(b);
            inode.index_block = run.front();
        } else {
            inode.index_block = 0;
        }
        for (uint64_t b = 0; b < cur_run; ++b)
            dev_.release_owned(old_start + b);
    } else if (new_run > 0) {
        inode.index_block = old.inode.index_block;
    }

    if (new_run > 0) {
        auto bytes = encode_index_run(inode.extents, g.block_size);
        for (uint64_t b = 0; b < new_run; ++b)
            dev_.write_block(inode.index_block + b,
                             std::span<const uint8_t>(bytes).subspan(b * g.block_size,
                                                                     g.block_size));
    }

    std::vector<uint8_t> block(g.block_size, 0);
    auto slot = encode_inode_slot(inode);
    std::copy(slot.begin(), slot.end(), block.begin());
    dev_.write_block(entry.inode_block, block);
}

uint64_t Filesystem::resolve(uint64_t snapshot_id, uint64_t addr) {
    if (addr >= dev_.geometry().total_blocks)
        throw domain_error("block address out of range");
    std::size_t idx = snap_index(snapshot_id);
    for (std::size_t i = idx; i < snap_inodes_.size(); ++i)
        if (auto m = extent_lookup(snap_inodes_[i].extents, addr))
            return *m;
    return addr;  // all holes: the live version
}

std::vector<uint8_t> Filesystem::snapshot_read_block(uint64_t snapshot_id, uint64_t addr) {
    if (addr >= dev_.geometry().total_blocks)
        throw domain_error("block address out of range");
    std::size_t idx = snap_index(snapshot_id);
    if (auto m = extent_lookup(snap_inodes_[idx].extents, addr))
        return dev_.read_block(*m);
    if (!cow_bitmaps_[idx].test(addr))
        return std::vector<uint8_t>(dev_.geometry().block_size, 0);  // free at snapshot time
    for (std::size_t i = idx + 1; i < snap_inodes_.size(); ++i)
        if (auto m = extent_lookup(snap_inodes_[i].extents, addr))
            return dev_.read_block(*m);
    return dev_.read_block(addr);
}

const Bitmap& Filesystem::cow_bitmap(uint64_t snapshot_id) const {
    return cow_bitmaps_[snap_index(snapshot_id)];
}

const Inode& Filesystem::snapshot_inode(uint64_t snapshot_id) const {
    return snap_inodes_[snap_index(snapshot_id)];
}

}  // namespace next4
