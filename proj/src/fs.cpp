// Part of the next4 project, under the Apache License v2.0.
// See https://www.apache.org/licenses/LICENSE-2.0 for license information.
// SPDX-License-Identifier: Apache-2.0
//
// File layer: namespace, inode storage, block-granular file I/O. All metadata
// mutation goes through the COW gate, all data-block release through the MOW
// gate (see snapcore.cpp).

#include <algorithm>
#include <cstring>
#include <set>

#include "next4/filesystem.hpp"
#include "next4/wire.hpp"

namespace next4 {

namespace {
constexpr std::size_t kMaxNameBytes = 64;
}

Filesystem::Filesystem(BlockDevice dev) : dev_(std::move(dev)) {}

Filesystem Filesystem::format(const std::string& path, const DeviceGeometry& geometry) {
    if (geometry.block_size < 2 * kInodeSlotSize)
        throw io_error("filesystem needs a block size of at least 192 bytes");
    Filesystem fs(BlockDevice::format(path, geometry));
    return fs;
}

Filesystem Filesystem::open(const std::string& path) {
    Filesystem fs(BlockDevice::open(path));
    fs.load_state();
    return fs;
}

void Filesystem::load_state() {
    const DeviceGeometry& g = dev_.geometry();

    std::vector<std::vector<uint8_t>> ns_blocks;
    const Region& ns = g.region(RegionId::name_table);
    for (uint64_t b = ns.start; b < ns.end(); ++b)
        ns_blocks.push_back(dev_.read_block(b));
    names_ = parse_namespace(ns_blocks);

    for (const SnapshotEntry& e : dev_.snapshots()) {
        std::vector<uint8_t> raw;
        for (uint64_t b = 0; b < cow_bitmap_blocks(); ++b) {
            auto blk = dev_.read_block(e.cow_bitmap_block + b);
            raw.insert(raw.end(), blk.begin(), blk.end());
        }
        cow_bitmaps_.push_back(Bitmap::from_bytes(g.total_blocks, raw));

        DecodedSlot slot = decode_inode_slot(dev_.read_block(e.inode_block));
        Inode inode = std::move(slot.inode);
        inode.inode_no = e.inode_block;
        if (inode.flags != kInodeSnapshot)
            throw io_error("snapshot entry points at a non-snapshot inode");
        if (slot.extent_count > kInlineExtents) {
            std::vector<uint8_t> run;
            uint64_t blocks = index_blocks_needed(slot.extent_count, g.block_size);
            for (uint64_t b = 0; b < blocks; ++b) {
                auto blk = dev_.read_block(inode.index_block + b);
                run.insert(run.end(), blk.begin(), blk.end());
            }
            decode_index_run(inode, run, slot.extent_count - kInlineExtents);
        }
        snap_inodes_.push_back(std::move(inode));
        next_epoch_ = std::max(next_epoch_, e.epoch + 1);
    }
}

uint64_t Filesystem::slots_per_block() const {
    return dev_.geometry().block_size / kInodeSlotSize;
}

uint64_t Filesystem::inode_capacity() const {
    return dev_.geometry().region(RegionId::inode_table).len * slots_per_block();
}

std::pair<uint64_t, uint64_t> Filesystem::slot_location(uint64_t inode_no) const {
    if (inode_no == 0 || inode_no > inode_capacity())
        throw domain_error("inode number " + std::to_string(inode_no) + " out of range");
    uint64_t slot = inode_no - 1;
    const Region& itab = dev_.geometry().region(RegionId::inode_table);
    return {itab.start + slot / slots_per_block(),
            (slot % slots_per_block()) * kInodeSlotSize};
}

uint64_t Filesystem::cow_bitmap_blocks() const {
    const DeviceGeometry& g = dev_.geometry();
    return (g.bitmap_bytes() + g.block_size - 1) / g.block_size;
}

uint64_t Filesystem::index_run_blocks(const Inode& inode) const {
    return index_blocks_needed(inode.extents.size(), dev_.geometry().block_size);
}

void Filesystem::require_free(uint64_t blocks, const char* what) const {
    if (dev_.free_count() < blocks)
        throw domain_error(std::string("out of space: ") + what + " needs up to " +
                           std::to_string(blocks) + " blocks, " +
                           std::to_string(dev_.free_count()) + " free");
}

Inode Filesystem::load_inode(uint64_t inode_no) {
    auto [blk, off] = slot_location(inode_no);
    auto block = dev_.read_block(blk);
    DecodedSlot slot = decode_inode_slot(
        std::span<const uint8_t>(block).subspan(off, kInodeSlotSize));
    Inode inode = std::move(slot.inode);
    inode.inode_no = inode_no;
    if (slot.extent_count > kInlineExtents) {
        uint64_t blocks = index_blocks_needed(slot.extent_count, dev_.geometry().block_size);
        std::vector<uint8_t> run;
        for (uint64_t b = 0; b < blocks; ++b) {
            auto raw = dev_.read_block(inode.index_block + b);
            run.insert(run.end(), raw.begin(), raw.end());
        }
        decode_index_run(inode, run, slot.extent_count - kInlineExtents);
    }
    return inode;
}

void Filesystem::store_inode(const Inode& inode, std::optional<uint64_t> meta_hint) {
    const DeviceGeometry& g = dev_.geometry();
    auto [blk, off] = slot_location(inode.inode_no);
    auto block = dev_.read_block(blk);
    DecodedSlot old = decode_inode_slot(
        std::span<const uint8_t>(block).subspan(off, kInodeSlotSize));
    uint64_t cur_run = index_blocks_needed(old.extent_count, g.block_size);
    uint64_t new_run = index_run_blocks(inode);

    Inode to_store = inode;
    to_store.index_block = 0;

    if (new_run == cur_run && new_run > 0) {
        // Same footprint: rewrite index blocks in place under the COW gate.
        to_store.index_block = old.inode.index_block;
        auto bytes = encode_index_run(inode.extents, g.block_size);
        for (uint64_t b = 0; b < new_run; ++b)
            cow_gate(to_store.index_block + b,
                     std::span<const uint8_t>(bytes).subspan(b * g.block_size, g.block_size),
                     meta_hint);
    } else if (new_run != cur_run) {
        if (new_run > 0) {
            auto run = dev_.alloc_contiguous(new_run,
                                             meta_hint.value_or(g.data_start()));
            to_store.index_block = run.front();
            auto bytes = encode_index_run(inode.extents, g.block_size);
            for (uint64_t b = 0; b < new_run; ++b)
                dev_.write_block(run[b], std::span<const uint8_t>(bytes).subspan(
                                             b * g.block_size, g.block_size));
        }
        if (cur_run > 0) {
            // The old run leaves the live file; preserve or free each block.
            std::vector<uint64_t> freeable;
            for (uint64_t b = 0; b < cur_run; ++b)
                if (!mow_gate(old.inode.index_block + b))
                    freeable.push_back(old.inode.index_block + b);
            if (!freeable.empty())
                dev_.free_blocks(freeable);
        }
    }

    auto slot_bytes = encode_inode_slot(to_store);
    std::copy(slot_bytes.begin(), slot_bytes.end(), block.begin() + std::ptrdiff_t(off));
    cow_gate(blk, block, meta_hint);
}

std::map<std::string, uint64_t> Filesystem::parse_namespace(
    const std::vector<std::vector<uint8_t>>& blocks) const {
    std::map<std::string, uint64_t> out;
    for (const auto& block : blocks) {
        std::span<const uint8_t> b(block);
        uint16_t count = wire::get<uint16_t>(b, 0);
        std::size_t at = 2;
        for (uint16_t i = 0; i < count; ++i) {
            uint8_t len = wire::get<uint8_t>(b, at);
            if (len == 0 || len > kMaxNameBytes || at + 1 + len + 8 > b.size())
                throw io_error("corrupt namespace record");
            std::string name(reinterpret_cast<const char*>(b.data() + at + 1), len);
            uint64_t ino = wire::get<uint64_t>(b, at + 1 + len);
            if (!out.emplace(name, ino).second)
                throw io_error("duplicate namespace record '" + name + "'");
            at += 1 + len + 8;
        }
    }
    return out;
}

std::vector<std::vector<uint8_t>> Filesystem::encode_namespace() const {
    const DeviceGeometry& g = dev_.geometry();
    const Region& ns = g.region(RegionId::name_table);
    std::vector<std::vector<uint8_t>> blocks(ns.len, std::vector<uint8_t>(g.block_size, 0));

    std::size_t blk = 0;
    std::size_t at = 2;
    uint16_t count = 0;
    auto finish_block = [&] {
        wire::put(blocks[blk], 0, count);
        count = 0;
        at = 2;
    };
    for (const auto& [name, ino] : names_) {
        std::size_t rec = 1 + name.size() + 8;
        if (at + rec > g.block_size) {
            finish_block();
            if (++blk >= blocks.size())
                throw domain_error("namespace region full");
        }
        auto& b = blocks[blk];
        b[at] = uint8_t(name.size());
        std::memcpy(b.data() + at + 1, name.data(), name.size());
        wire::put(b, at + 1 + name.size(), ino);
        at += rec;
        ++count;
    }
    finish_block();
    return blocks;
}

void Filesystem::store_namespace(std::optional<uint64_t> meta_hint) {
    const Region& ns = dev_.geometry().region(RegionId::name_table);
    auto blocks = encode_namespace();
    for (uint64_t b = 0; b < ns.len; ++b)
        cow_gate(ns.start + b, blocks[b], meta_hint);  // gate skips unchanged blocks
}

uint64_t Filesystem::create_file(const std::string& name, std::optional<uint64_t> meta_hint) {
    if (name.empty() || name.size() > kMaxNameBytes)
        throw domain_error("file name must be 1..64 bytes");
    if (names_.count(name))
        throw domain_error("duplicate file name '" + name + "'");
    if (active_index())
        require_free(dev_.geometry().region(RegionId::name_table).len + 2, "create_file");

    uint64_t inode_no = 0;
    std::set<uint64_t> in_use;
    for (const auto& [n, ino] : names_)
        in_use.insert(ino);
    for (uint64_t ino = 1; ino <= inode_capacity(); ++ino) {
        if (!in_use.count(ino)) {
            inode_no = ino;
            break;
        }
    }
    if (inode_no == 0)
        throw domain_error("inode table full");

    names_.emplace(name, inode_no);
    store_namespace(meta_hint);
    Inode inode;
    inode.inode_no = inode_no;
    inode.flags = kInodeRegular;
    store_inode(inode, meta_hint);
    flush();
    return inode_no;
}

void Filesystem::write_file(const WriteRequest& req) {
    const DeviceGeometry& g = dev_.geometry();
    if (req.payload.empty())
        throw domain_error("write payload must not be empty");
    auto it = names_.find(req.name);
    if (it == names_.end())
        throw domain_error("unknown file '" + req.name + "'");

    uint64_t n = (req.payload.size() + g.block_size - 1) / g.block_size;
    uint64_t end = req.offset_blocks + n;
    if (end > UINT32_MAX)
        throw domain_error("write beyond the maximum file size");

    Inode inode = load_inode(it->second);
    // Conservative worst case: fresh/replacement data + index churn + COW copies.
    require_free(n +
                     2 * index_blocks_needed(inode.extents.size() + 2 * n + 1, g.block_size) +
                     (active_index() ? 5 : 0),
                 "write_file");

    std::vector<uint8_t> payload = req.payload;
    payload.resize(n * g.block_size, 0);
    uint64_t data_hint = req.data_hint.value_or(g.data_start());

    auto payload_block = [&](uint64_t logical) {
        return std::span<const uint8_t>(payload).subspan(
            (logical - req.offset_blocks) * g.block_size, g.block_size);
    };

    uint64_t l = req.offset_blocks;
    while (l < end) {
        auto phys = extent_lookup(inode.extents, l);
        if (!phys) {
            // Hole: fresh allocation, nothing to preserve.
            uint64_t len = 1;
            while (l + len < end && !extent_lookup(inode.extents, l + len))
                ++len;
            auto blocks = dev_.alloc_blocks(len, data_hint);
            for (uint64_t i = 0; i < len; ++i) {
                dev_.write_block(blocks[i], payload_block(l + i));
                extent_insert(inode.extents, Extent{uint32_t(l + i), blocks[i], 1});
            }
            l += len;
            continue;
        }

        bool preserve = mow_wanted(*phys);
        uint64_t len = 1;
        while (l + len < end) {
            auto p = extent_lookup(inode.extents, l + len);
            if (!p || *p != *phys + len || mow_wanted(*p) != preserve)
                break;
            ++len;
        }
        if (!preserve) {
            for (uint64_t i = 0; i < len; ++i)
                dev_.write_block(*phys + i, payload_block(l + i));
        } else {
            // MOW: old blocks move under the active snapshot, new data lands
            // at a fresh location.
            extent_remove(inode.extents, l, l + len);
            for (uint64_t i = 0; i < len; ++i) {
                bool kept = mow_gate(*phys + i);
                if (!kept)
                    throw integrity_error("MOW gate refused a block it promised to keep");
            }
            auto blocks = dev_.alloc_blocks(len, data_hint);
            for (uint64_t i = 0; i < len; ++i) {
                dev_.write_block(blocks[i], payload_block(l + i));
                extent_insert(inode.extents, Extent{uint32_t(l + i), blocks[i], 1});
            }
        }
        l += len;
    }

    inode.size_blocks = std::max<uint32_t>(inode.size_blocks, uint32_t(end));
    store_inode(inode, req.meta_hint);
    flush();
}

std::vector<uint8_t> Filesystem::read_file(const std::string& name) {
    auto it = names_.find(name);
    if (it == names_.end())
        throw domain_error("unknown file '" + name + "'");
    Inode inode = load_inode(it->second);
    return read_file_range(name, 0, inode.size_blocks);
}

std::vector<uint8_t> Filesystem::read_file_range(const std::string& name, uint64_t offset_blocks,
                                                 uint64_t length_blocks) {
    const DeviceGeometry& g = dev_.geometry();
    auto it = names_.find(name);
    if (it == names_.end())
        throw domain_error("unknown file '" + name + "'");
    Inode inode = load_inode(it->second);
    std::vector<uint8_t> out;
    out.reserve(length_blocks * g.block_size);
    for (uint64_t l = offset_blocks; l < offset_blocks + length_blocks; ++l) {
        if (auto phys = extent_lookup(inode.extents, l)) {
            auto blk = dev_.read_block(*phys);
            out.insert(out.end(), blk.begin(), blk.end());
        } else {
            out.insert(out.end(), g.block_size, 0);
        }
    }
    return out;
}

void Filesystem::truncate_file(const std::string& name, uint64_t from_logical,
                               std::optional<uint64_t> meta_hint) {
    auto it = names_.find(name);
    if (it == names_.end())
        throw domain_error("unknown file '" + name + "'");
    Inode inode = load_inode(it->second);
    if (active_index())
        require_free(4, "truncate_file");

    auto released = extent_remove(inode.extents, from_logical, inode.size_blocks);
    std::vector<uint64_t> freeable;
    for (const Extent& run : released)
        for (uint64_t i = 0; i < run.length; ++i)
            if (!mow_gate(run.physical + i))
                freeable.push_back(run.physical + i);
    if (!freeable.empty())
        dev_.free_blocks(freeable);

    inode.size_blocks = uint32_t(std::min<uint64_t>(inode.size_blocks, from_logical));
    store_inode(inode, meta_hint);
    flush();
}

void Filesystem::remove_file(const std::string& name, std::optional<uint64_t> meta_hint) {
    auto it = names_.find(name);
    if (it == names_.end())
        throw domain_error("unknown file '" + name + "'");
    if (active_index())
        require_free(dev_.geometry().region(RegionId::name_table).len + 4, "remove_file");
    uint64_t inode_no = it->second;
    Inode inode = load_inode(inode_no);

    auto released = extent_remove(inode.extents, 0, inode.size_blocks);
    std::vector<uint64_t> freeable;
    for (const Extent& run : released)
        for (uint64_t i = 0; i < run.length; ++i)
            if (!mow_gate(run.physical + i))
                freeable.push_back(run.physical + i);
    if (!freeable.empty())
        dev_.free_blocks(freeable);

    Inode cleared;
    cleared.inode_no = inode_no;
    cleared.flags = kInodeFree;
    store_inode(cleared, meta_hint);

    names_.erase(it);
    store_namespace(meta_hint);
    flush();
}

Inode Filesystem::inode_of(const std::string& name) {
    auto it = names_.find(name);
    if (it == names_.end())
        throw domain_error("unknown file '" + name + "'");
    return load_inode(it->second);
}

void Filesystem::flush() {
    for (std::size_t idx : dirty_snaps_)
        store_snapshot_inode(idx);
    dirty_snaps_.clear();
    persist_cow_bitmaps();
    dev_.flush();
}

void Filesystem::persist_cow_bitmaps() {
    const DeviceGeometry& g = dev_.geometry();
    for (std::size_t i = 0; i < dev_.snapshots().size(); ++i) {
        const auto& bytes = cow_bitmaps_[i].bytes();
        uint64_t start = dev_.snapshots()[i].cow_bitmap_block;
        for (uint64_t b = 0; b < cow_bitmap_blocks(); ++b) {
            std::vector<uint8_t> blk(g.block_size, 0);
            std::size_t off = b * g.block_size;
            if (off < bytes.size())
                std::memcpy(blk.data(), bytes.data() + off,
                            std::min<std::size_t>(g.block_size, bytes.size() - off));
            dev_.write_block(start + b, blk);
        }
    }
}

std::vector<std::string> Filesystem::verify() {
    const DeviceGeometry& g = dev_.geometry();
    std::vector<std::string> out;
    auto fail = [&](const std::string& s) { out.push_back(s); };

    if (dev_.free_count() + dev_.block_bitmap().popcount() != g.total_blocks)
        fail("conservation: free counter + allocated bits != total blocks");

    for (uint64_t b = 0; b < g.total_blocks; ++b) {
        if (g.is_metadata_block(b) && !dev_.is_allocated(b))
            fail("metadata block " + std::to_string(b) + " not allocated");
        if (dev_.is_excluded(b) && !dev_.is_allocated(b))
            fail("excluded block " + std::to_string(b) + " not allocated");
    }

    // Exclude closure and ownership uniqueness.
    Bitmap expected(g.total_blocks);
    auto own = [&](uint64_t b, uint64_t snap) {
        if (expected.test(b))
            fail("block " + std::to_string(b) + " owned by two snapshots (at snapshot " +
                 std::to_string(snap) + ")");
        expected.set(b);
    };
    for (std::size_t i = 0; i < dev_.snapshots().size(); ++i) {
        const SnapshotEntry& e = dev_.snapshots()[i];
        const Inode& si = snap_inodes_[i];
        own(e.inode_block, e.epoch);
        for (uint64_t b = 0; b < cow_bitmap_blocks(); ++b)
            own(e.cow_bitmap_block + b, e.epoch);
        for (uint64_t b = 0; b < index_run_blocks(si); ++b)
            own(si.index_block + b, e.epoch);
        try {
            extent_check(si.extents);
        } catch (const error& err) {
            fail("snapshot " + std::to_string(e.epoch) + ": " + err.what());
            continue;
        }
        for (const Extent& x : si.extents) {
            if (x.physical_end() > g.total_blocks)
                fail("snapshot " + std::to_string(e.epoch) + " maps past the device end");
            for (uint64_t b = 0; b < x.length; ++b) {
                own(x.physical + b, e.epoch);
                if (cow_bitmaps_[i].test(x.logical + b))
                    fail("snapshot " + std::to_string(e.epoch) + ": COW bit still set for mapped block " +
                         std::to_string(x.logical + b));
            }
        }
    }
    if (!(expected == dev_.exclude_bitmap()))
        fail("exclude closure: exclude bitmap != union of snapshot-owned blocks");

    for (const auto& [name, ino] : names_) {
        if (name.size() > kMaxNameBytes)
            fail("name '" + name + "' too long");
        try {
            Inode inode = load_inode(ino);
            if (inode.flags != kInodeRegular) {
                fail("name '" + name + "' points at a non-regular inode");
                continue;
            }
            extent_check(inode.extents);
            for (const Extent& x : inode.extents) {
                if (x.physical_end() > g.total_blocks)
                    fail("file '" + name + "' maps past the device end");
                for (uint64_t b = 0; b < x.length; ++b) {
                    if (!dev_.is_allocated(x.physical + b))
                        fail("file '" + name + "' maps unallocated block " +
                             std::to_string(x.physical + b));
                    if (dev_.is_excluded(x.physical + b))
                        fail("file '" + name + "' maps snapshot-owned block " +
                             std::to_string(x.physical + b));
                }
            }
        } catch (const error& err) {
            fail("file '" + name + "': " + err.what());
        }
    }
    return out;
}

}  // namespace next4
