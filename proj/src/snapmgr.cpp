// Part of the next4 project, under the Apache License v2.0.
// See https://www.apache.org/licenses/LICENSE-2.0 for license information.
// SPDX-License-Identifier: Apache-2.0
//
// Snapshot lifecycle: listing and stats, whole-file reads at a snapshot, and
// deletion with mapping merge into the next-older snapshot.

#include "next4/filesystem.hpp"

namespace next4 {

namespace {

SnapshotInfo info_for(const SnapshotEntry& entry, const Inode& inode, uint64_t cbm_blocks,
                      uint64_t index_blocks) {
    SnapshotInfo info;
    info.id = entry.epoch;
    info.inode_block = entry.inode_block;
    for (const Extent& x : inode.extents) {
        info.mapped += x.length;
        if (x.logical == x.physical)
            info.identity += x.length;
    }
    info.copies = info.mapped - info.identity;
    info.overhead_blocks = 1 + cbm_blocks + index_blocks;
    return info;
}

}  // namespace

std::vector<SnapshotInfo> Filesystem::snapshot_list() {
    std::vector<SnapshotInfo> out;
    for (std::size_t i = 0; i < dev_.snapshots().size(); ++i)
        out.push_back(info_for(dev_.snapshots()[i], snap_inodes_[i], cow_bitmap_blocks(),
                               index_run_blocks(snap_inodes_[i])));
    return out;
}

DeviceStats Filesystem::stats() {
    DeviceStats s;
    s.total_blocks = dev_.geometry().total_blocks;
    s.allocated = dev_.block_bitmap().popcount();
    s.free = dev_.free_count();
    s.excluded = dev_.exclude_bitmap().popcount();
    s.snapshots = snapshot_list();
    return s;
}

std::map<std::string, uint64_t> Filesystem::list_files_at(uint64_t snapshot_id) {
    const Region& ns = dev_.geometry().region(RegionId::name_table);
    std::vector<std::vector<uint8_t>> blocks;
    for (uint64_t b = ns.start; b < ns.end(); ++b)
        blocks.push_back(snapshot_read_block(snapshot_id, b));
    return parse_namespace(blocks);
}

std::vector<uint8_t> Filesystem::read_file_at(uint64_t snapshot_id, const std::string& name) {
    const DeviceGeometry& g = dev_.geometry();
    auto names = list_files_at(snapshot_id);
    auto it = names.find(name);
    if (it == names.end())
        throw domain_error("file '" + name + "' did not exist at snapshot " +
                           std::to_string(snapshot_id));

    auto [blk, off] = slot_location(it->second);
    auto block = snapshot_read_block(snapshot_id, blk);
    DecodedSlot slot = decode_inode_slot(
        std::span<const uint8_t>(block).subspan(off, kInodeSlotSize));
    if (slot.inode.flags != kInodeRegular)
        throw integrity_error("snapshot namespace points at a non-regular inode");

    Inode inode = std::move(slot.inode);
    if (slot.extent_count > kInlineExtents) {
        uint64_t run_blocks = index_blocks_needed(slot.extent_count, g.block_size);
        std::vector<uint8_t> run;
        for (uint64_t b = 0; b < run_blocks; ++b) {
            auto raw = snapshot_read_block(snapshot_id, inode.index_block + b);
            run.insert(run.end(), raw.begin(), raw.end());
        }
        decode_index_run(inode, run, slot.extent_count - kInlineExtents);
    }

    std::vector<uint8_t> out;
    out.reserve(uint64_t(inode.size_blocks) * g.block_size);
    for (uint64_t l = 0; l < inode.size_blocks; ++l) {
        if (auto phys = extent_lookup(inode.extents, l)) {
            auto raw = snapshot_read_block(snapshot_id, *phys);
            out.insert(out.end(), raw.begin(), raw.end());
        } else {
            out.insert(out.end(), g.block_size, 0);
        }
    }
    return out;
}

uint64_t Filesystem::snapshot_delete(uint64_t snapshot_id) {
    std::size_t idx = snap_index(snapshot_id);
    SnapshotEntry entry = dev_.snapshots()[idx];
    Inode inode = std::move(snap_inodes_[idx]);
    bool has_prev = idx > 0;
    uint64_t freed = 0;

    // Merge: a previous snapshot still needs this version iff it has a hole at
    // the logical address and its frozen COW bitmap shows the block in use at
    // its own creation time.
    for (const Extent& x : inode.extents) {
        for (uint64_t j = 0; j < x.length; ++j) {
            uint64_t logical = x.logical + j;
            uint64_t phys = x.physical + j;
            if (has_prev && !extent_lookup(snap_inodes_[idx - 1].extents, logical) &&
                cow_bitmaps_[idx - 1].test(logical)) {
                extent_insert(snap_inodes_[idx - 1].extents,
                              Extent{uint32_t(logical), phys, 1});
                cow_bitmaps_[idx - 1].clear(logical);
            } else {
                dev_.release_owned(phys);
                ++freed;
            }
        }
    }
    if (has_prev)
        store_snapshot_inode(idx - 1);

    uint64_t own_index = index_run_blocks(inode);
    for (uint64_t b = 0; b < own_index; ++b) {
        dev_.release_owned(inode.index_block + b);
        ++freed;
    }
    dev_.release_owned(entry.inode_block);
    ++freed;
    for (uint64_t b = 0; b < cow_bitmap_blocks(); ++b) {
        dev_.release_owned(entry.cow_bitmap_block + b);
        ++freed;
    }

    dev_.snapshots().erase(dev_.snapshots().begin() + std::ptrdiff_t(idx));
    cow_bitmaps_.erase(cow_bitmaps_.begin() + std::ptrdiff_t(idx));
    snap_inodes_.erase(snap_inodes_.begin() + std::ptrdiff_t(idx));

    flush();
    return freed;
}

}  // namespace next4
