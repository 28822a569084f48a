// Part of the next4 project, under the Apache License v2.0.
// See https://www.apache.org/licenses/LICENSE-2.0 for license information.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "next4/errors.hpp"

namespace next4 {

/// Contiguous mapping of file-logical blocks onto physical blocks.
struct Extent {
    uint32_t logical = 0;
    uint64_t physical = 0;
    uint32_t length = 0;

    uint64_t logical_end() const { return uint64_t(logical) + length; }
    uint64_t physical_end() const { return physical + length; }
    bool operator==(const Extent&) const = default;
};

inline constexpr uint16_t kInodeFree = 0;
inline constexpr uint16_t kInodeRegular = 1;
inline constexpr uint16_t kInodeSnapshot = 2;

inline constexpr std::size_t kInodeSlotSize = 96;
inline constexpr std::size_t kInlineExtents = 4;
inline constexpr std::size_t kExtentRecordSize = 16;

/// In-memory inode: the full extent list, inline + index together.
/// `index_block` is the persisted location of the spilled extents (start of a
/// contiguous run whose length follows from the extent count); it is managed
/// by the storage layer, not by the list operations below.
struct Inode {
    uint64_t inode_no = 0;
    uint16_t flags = kInodeFree;
    uint32_t size_blocks = 0;
    uint64_t index_block = 0;  // 0 = none
    std::vector<Extent> extents;

    bool is_snapshot() const { return flags == kInodeSnapshot; }
};

// Extent-list operations. Lists are kept sorted by logical start and
// logically disjoint; every routine preserves (and checks) that invariant.

/// Physical address covering `logical`, or nullopt for a hole.
std::optional<uint64_t> extent_lookup(const std::vector<Extent>& extents, uint64_t logical);

/// Insert a logically disjoint extent, coalescing neighbors that are
/// contiguous both logically and physically.
void extent_insert(std::vector<Extent>& extents, const Extent& e);

/// Break extents at the boundaries of [lo, hi) so the range is covered by
/// whole extents. The logical→physical mapping is unchanged. The range must
/// be fully mapped.
void extent_split(std::vector<Extent>& extents, uint64_t lo, uint64_t hi);

/// Unmap [lo, hi); unmapped parts of the range are ignored. Returns the
/// released (logical, physical, length) runs in logical order.
std::vector<Extent> extent_remove(std::vector<Extent>& extents, uint64_t lo, uint64_t hi);

/// Throws integrity_error if the list is unsorted or logically overlapping.
void extent_check(const std::vector<Extent>& extents);

// Serialization. The inode slot holds up to 4 inline extents; the rest go to
// the index run, `count u16` followed by packed 16-byte extent records.

std::vector<uint8_t> encode_inode_slot(const Inode& inode);

/// Decoded slot: the inode with its inline extents, plus the total extent
/// count recorded in the slot (spilled extents still live in the index run).
struct DecodedSlot {
    Inode inode;
    std::size_t extent_count = 0;
};
DecodedSlot decode_inode_slot(std::span<const uint8_t> slot);

/// Blocks needed for the index run of an inode with `extent_count` extents.
uint64_t index_blocks_needed(std::size_t extent_count, uint32_t block_size);

/// Spilled extents (those beyond the inline 4), as index-run bytes padded to
/// whole blocks.
std::vector<uint8_t> encode_index_run(const std::vector<Extent>& extents, uint32_t block_size);

/// Inverse of encode_index_run; appends the spilled extents to inode.extents.
void decode_index_run(Inode& inode, std::span<const uint8_t> run, std::size_t spilled_count);

}  // namespace next4
