// Part of the next4 project, under the Apache License v2.0.
// See https://www.apache.org/licenses/LICENSE-2.0 for license information.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "next4/errors.hpp"

namespace next4 {

inline constexpr std::array<char, 4> kSuperblockMagic{'N', 'X', 'S', '4'};
inline constexpr uint16_t kFormatVersion = 1;

/// One contiguous block range [start, start + len).
struct Region {
    uint64_t start = 0;
    uint64_t len = 0;

    uint64_t end() const { return start + len; }
    bool contains(uint64_t block) const { return block >= start && block < end(); }
};

// Fixed order of the superblock region table.
enum class RegionId : std::size_t {
    superblock = 0,
    block_bitmap,
    exclude_bitmap,
    inode_table,
    name_table,
    data,
};

inline constexpr std::size_t kRegionCount = 6;

struct DeviceGeometry {
    uint32_t block_size = 0;
    uint64_t total_blocks = 0;
    std::array<Region, kRegionCount> regions{};

    const Region& region(RegionId id) const { return regions[static_cast<std::size_t>(id)]; }
    Region& region(RegionId id) { return regions[static_cast<std::size_t>(id)]; }

    uint64_t data_start() const { return region(RegionId::data).start; }
    bool is_metadata_block(uint64_t block) const;
    uint64_t metadata_blocks() const { return total_blocks - region(RegionId::data).len; }
    uint64_t bitmap_bytes() const { return (total_blocks + 7) / 8; }

    /// Throws io_error unless regions are disjoint, cover [0, total_blocks)
    /// exactly once, and each metadata region is large enough for its payload.
    void validate() const;

    /// Default layout: superblock, bitmaps, inode table, namespace, data.
    static DeviceGeometry standard(uint32_t block_size, uint64_t total_blocks);

    /// Layout with explicit namespace / inode-table region sizes, regions in
    /// device order superblock, bitmaps, namespace, inode table, data.
    static DeviceGeometry with_layout(uint32_t block_size, uint64_t total_blocks,
                                      uint64_t name_blocks, uint64_t inode_blocks);
};

/// Bit i of byte i/8, LSB-first.
class Bitmap {
public:
    Bitmap() = default;
    explicit Bitmap(uint64_t bits) : bits_(bits), bytes_((bits + 7) / 8, 0) {}

    static Bitmap from_bytes(uint64_t bits, std::span<const uint8_t> bytes);

    bool test(uint64_t i) const { return (bytes_[i / 8] >> (i % 8)) & 1; }
    void set(uint64_t i) { bytes_[i / 8] |= uint8_t(1u << (i % 8)); }
    void clear(uint64_t i) { bytes_[i / 8] &= uint8_t(~(1u << (i % 8))); }

    uint64_t size() const { return bits_; }
    uint64_t popcount() const;
    const std::vector<uint8_t>& bytes() const { return bytes_; }

    /// this AND NOT other, bitwise.
    Bitmap and_not(const Bitmap& other) const;

    bool operator==(const Bitmap&) const = default;

private:
    uint64_t bits_ = 0;
    std::vector<uint8_t> bytes_;
};

struct SnapshotEntry {
    uint64_t inode_block = 0;      // block holding the snapshot file's inode
    uint64_t epoch = 0;            // snapshot id, strictly increasing
    uint64_t cow_bitmap_block = 0; // start of the contiguous persisted COW bitmap run
};

/// Fixed-block virtual disk over one image file. Blocks are cached in memory;
/// flush() persists the whole image plus serialized superblock and bitmaps.
/// One exclusive owner per image, enforced with an advisory flock.
class BlockDevice {
public:
    static BlockDevice format(const std::string& path, const DeviceGeometry& geometry);
    static BlockDevice open(const std::string& path);

    BlockDevice(BlockDevice&&) noexcept;
    BlockDevice& operator=(BlockDevice&&) noexcept;
    BlockDevice(const BlockDevice&) = delete;
    BlockDevice& operator=(const BlockDevice&) = delete;
    ~BlockDevice();

    const DeviceGeometry& geometry() const { return geo_; }
    const std::string& path() const { return path_; }

    std::vector<uint8_t> read_block(uint64_t addr) const;
    void write_block(uint64_t addr, std::span<const uint8_t> bytes);

    /// Deterministic first-fit from hint (wrapping): first free run that holds
    /// all `count` blocks wins; otherwise free blocks are gathered in scan
    /// order. Returned blocks are marked allocated.
    std::vector<uint64_t> alloc_blocks(uint64_t count, uint64_t hint);

    /// Like alloc_blocks but requires a single contiguous run.
    std::vector<uint64_t> alloc_contiguous(uint64_t count, uint64_t hint);

    /// Frees ordinary allocated blocks. Rejects double frees, excluded blocks
    /// and metadata-region blocks.
    void free_blocks(const std::vector<uint64_t>& blocks);

    /// Teardown of a snapshot-owned block: clears both the exclude bit and the
    /// allocation bit.
    void release_owned(uint64_t addr);

    const Bitmap& block_bitmap() const { return bitmap_; }
    const Bitmap& exclude_bitmap() const { return exclude_; }
    bool is_allocated(uint64_t addr) const { return bitmap_.test(addr); }
    bool is_excluded(uint64_t addr) const { return exclude_.test(addr); }
    void set_exclude(uint64_t addr);
    void clear_exclude(uint64_t addr) { exclude_.clear(addr); }
    uint64_t free_count() const { return free_; }

    std::vector<SnapshotEntry>& snapshots() { return snaps_; }
    const std::vector<SnapshotEntry>& snapshots() const { return snaps_; }

    /// Serialized superblock region content (what flush() persists).
    std::vector<uint8_t> superblock_bytes() const;

    /// Largest snapshot count the superblock region can record.
    uint64_t snapshot_capacity() const;

    void flush();

private:
    BlockDevice() = default;
    void check_addr(uint64_t addr) const;
    std::optional<uint64_t> find_run(uint64_t count, uint64_t hint) const;
    void load_image();

    DeviceGeometry geo_;
    uint64_t free_ = 0;
    Bitmap bitmap_;
    Bitmap exclude_;
    std::vector<SnapshotEntry> snaps_;
    std::vector<uint8_t> image_;
    std::string path_;
    int fd_ = -1;
};

}  // namespace next4
