// Part of the next4 project, under the Apache License v2.0.
// See https://www.apache.org/licenses/LICENSE-2.0 for license information.
// SPDX-License-Identifier: Apache-2.0

#include "next4/extents.hpp"

#include <algorithm>

#include "next4/wire.hpp"

namespace next4 {

void extent_check(const std::vector<Extent>& extents) {
    for (std::size_t i = 0; i < extents.size(); ++i) {
        if (extents[i].length == 0)
            throw integrity_error("zero-length extent");
        if (i > 0 && extents[i].logical < extents[i - 1].logical_end())
            throw integrity_error("extent list unsorted or logically overlapping");
    }
}

std::optional<uint64_t> extent_lookup(const std::vector<Extent>& extents, uint64_t logical) {
    extent_check(extents);
    auto it = std::upper_bound(extents.begin(), extents.end(), logical,
                               [](uint64_t l, const Extent& e) { return l < e.logical; });
    if (it == extents.begin())
        return std::nullopt;
    --it;
    if (logical < it->logical_end())
        return it->physical + (logical - it->logical);
    return std::nullopt;
}

void extent_insert(std::vector<Extent>& extents, const Extent& e) {
    if (e.length == 0)
        throw domain_error("cannot insert a zero-length extent");
    auto it = std::lower_bound(extents.begin(), extents.end(), e,
                               [](const Extent& a, const Extent& b) { return a.logical < b.logical; });
    if (it != extents.end() && it->logical < e.logical_end())
        throw domain_error("extent insert overlaps an existing mapping");
    if (it != extents.begin()) {
        auto prev = std::prev(it);
        if (prev->logical_end() > e.logical)
            throw domain_error("extent insert overlaps an existing mapping");
    }
    it = extents.insert(it, e);

    // Coalesce with neighbors that continue both logically and physically.
    if (it != extents.begin()) {
        auto prev = std::prev(it);
        if (prev->logical_end() == it->logical && prev->physical_end() == it->physical) {
            prev->length += it->length;
            it = extents.erase(it);
            it = std::prev(it);
        }
    }
    auto next = std::next(it);
    if (next != extents.end() && it->logical_end() == next->logical &&
        it->physical_end() == next->physical) {
        it->length += next->length;
        extents.erase(next);
    }
}

namespace {

// Split the extent covering `at` (if any) so that `at` becomes an extent
// boundary.
void split_at(std::vector<Extent>& extents, uint64_t at) {
    for (std::size_t i = 0; i < extents.size(); ++i) {
        Extent& e = extents[i];
        if (e.logical < at && at < e.logical_end()) {
            uint32_t head = uint32_t(at - e.logical);
            Extent tail{uint32_t(at), e.physical + head, e.length - head};
            e.length = head;
            extents.insert(extents.begin() + std::ptrdiff_t(i) + 1, tail);
            return;
        }
    }
}

}  // namespace

void extent_split(std::vector<Extent>& extents, uint64_t lo, uint64_t hi) {
    extent_check(extents);
    if (lo >= hi)
        throw domain_error("empty split range");
    for (uint64_t l = lo; l < hi; ++l)
        if (!extent_lookup(extents, l))
            throw domain_error("split range touches a hole at logical " + std::to_string(l));
    split_at(extents, lo);
    split_at(extents, hi);
}

std::vector<Extent> extent_remove(std::vector<Extent>& extents, uint64_t lo, uint64_t hi) {
    extent_check(extents);
    std::vector<Extent> released;
    if (lo >= hi)
        return released;
    split_at(extents, lo);
    split_at(extents, hi);
    for (auto it = extents.begin(); it != extents.end();) {
        if (it->logical >= lo && it->logical_end() <= hi) {
            released.push_back(*it);
            it = extents.erase(it);
        } else {
            ++it;
        }
    }
    return released;
}

std::vector<uint8_t> encode_inode_slot(const Inode& inode) {
    extent_check(inode.extents);
    std::vector<uint8_t> slot(kInodeSlotSize, 0);
    wire::put(slot, 0, inode.flags);
    wire::put(slot, 4, inode.size_blocks);
    wire::put(slot, 8, uint16_t(inode.extents.size()));
    wire::put(slot, 10, inode.index_block);
    std::size_t inline_n = std::min(inode.extents.size(), kInlineExtents);
    for (std::size_t i = 0; i < inline_n; ++i) {
        std::size_t at = 18 + i * kExtentRecordSize;
        wire::put(slot, at, inode.extents[i].logical);
        wire::put(slot, at + 4, inode.extents[i].physical);
        wire::put(slot, at + 12, inode.extents[i].length);
    }
    return slot;
}

DecodedSlot decode_inode_slot(std::span<const uint8_t> slot) {
    if (slot.size() < kInodeSlotSize)
        throw io_error("inode slot truncated");
    DecodedSlot out;
    out.inode.flags = wire::get<uint16_t>(slot, 0);
    out.inode.size_blocks = wire::get<uint32_t>(slot, 4);
    out.extent_count = wire::get<uint16_t>(slot, 8);
    out.inode.index_block = wire::get<uint64_t>(slot, 10);
    std::size_t inline_n = std::min(out.extent_count, kInlineExtents);
    for (std::size_t i = 0; i < inline_n; ++i) {
        std::size_t at = 18 + i * kExtentRecordSize;
        Extent e;
        e.logical = wire::get<uint32_t>(slot, at);
        e.physical = wire::get<uint64_t>(slot, at + 4);
        e.length = wire::get<uint32_t>(slot, at + 12);
        out.inode.extents.push_back(e);
    }
    extent_check(out.inode.extents);
    return out;
}

uint64_t index_blocks_needed(std::size_t extent_count, uint32_t block_size) {
    if (extent_count <= kInlineExtents)
        return 0;
    uint64_t bytes = 2 + uint64_t(extent_count - kInlineExtents) * kExtentRecordSize;
    return (bytes + block_size - 1) / block_size;
}

std::vector<uint8_t> encode_index_run(const std::vector<Extent>& extents, uint32_t block_size) {
    uint64_t blocks = index_blocks_needed(extents.size(), block_size);
    std::vector<uint8_t> run(blocks * block_size, 0);
    if (blocks == 0)
        return run;
    std::size_t spilled = extents.size() - kInlineExtents;
    wire::put(run, 0, uint16_t(spilled));
    for (std::size_t i = 0; i < spilled; ++i) {
        std::size_t at = 2 + i * kExtentRecordSize;
        const Extent& e = extents[kInlineExtents + i];
        wire::put(run, at, e.logical);
        wire::put(run, at + 4, e.physical);
        wire::put(run, at + 12, e.length);
    }
    return run;
}

void decode_index_run(Inode& inode, std::span<const uint8_t> run, std::size_t spilled_count) {
    std::size_t stored = wire::get<uint16_t>(run, 0);
    if (stored != spilled_count)
        throw integrity_error("index run extent count disagrees with the inode slot");
    for (std::size_t i = 0; i < spilled_count; ++i) {
        std::size_t at = 2 + i * kExtentRecordSize;
        Extent e;
        e.logical = wire::get<uint32_t>(run, at);
        e.physical = wire::get<uint64_t>(run, at + 4);
        e.length = wire::get<uint32_t>(run, at + 12);
        inode.extents.push_back(e);
    }
    extent_check(inode.extents);
}

}  // namespace next4
