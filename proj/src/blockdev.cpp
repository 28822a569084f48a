// Part of the next4 project, under the Apache License v2.0.
// See https://www.apache.org/licenses/LICENSE-2.0 for license information.
// SPDX-License-Identifier: Apache-2.0

#include "next4/blockdev.hpp"

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cstring>
#include <set>
#include <utility>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include "next4/wire.hpp"

namespace next4 {

namespace {

// Superblock field offsets.
constexpr std::size_t kOffMagic = 0;
constexpr std::size_t kOffVersion = 4;
constexpr std::size_t kOffBlockSize = 6;
constexpr std::size_t kOffTotalBlocks = 10;
constexpr std::size_t kOffFreeBlocks = 18;
constexpr std::size_t kOffRegions = 26;
constexpr std::size_t kOffSnapCount = 122;
constexpr std::size_t kOffSnapList = 124;
constexpr std::size_t kSnapEntrySize = 24;

}  // namespace

bool DeviceGeometry::is_metadata_block(uint64_t block) const {
    return !region(RegionId::data).contains(block);
}

void DeviceGeometry::validate() const {
    if (block_size < 64 || block_size > 4096 || !std::has_single_bit(block_size))
        throw io_error("geometry: block size must be a power of two in [64, 4096]");
    if (total_blocks == 0)
        throw io_error("geometry: zero blocks");

    std::array<Region, kRegionCount> sorted = regions;
    std::sort(sorted.begin(), sorted.end(),
              [](const Region& a, const Region& b) { return a.start < b.start; });
    uint64_t next = 0;
    for (const Region& r : sorted) {
        if (r.len == 0)
            throw io_error("geometry: empty region");
        if (r.start != next)
            throw io_error("geometry: regions must tile [0, total_blocks) exactly");
        next = r.end();
    }
    if (next != total_blocks)
        throw io_error("geometry: regions do not cover the device");

    if (region(RegionId::superblock).start != 0)
        throw io_error("geometry: superblock must start at block 0");
    if (region(RegionId::superblock).len * block_size < kOffSnapList)
        throw io_error("geometry: superblock region too small");
    uint64_t bb = bitmap_bytes();
    if (region(RegionId::block_bitmap).len * block_size < bb ||
        region(RegionId::exclude_bitmap).len * block_size < bb)
        throw io_error("geometry: bitmap region too small");
}

DeviceGeometry DeviceGeometry::standard(uint32_t block_size, uint64_t total_blocks) {
    DeviceGeometry g;
    g.block_size = block_size;
    g.total_blocks = total_blocks;
    if (block_size < 64 || total_blocks == 0)
        g.validate();  // reject with the usual diagnostics

    auto blocks_for = [&](uint64_t bytes) { return (bytes + block_size - 1) / block_size; };
    // Room for the fixed header plus at least eight snapshot entries.
    uint64_t sb = blocks_for(kOffSnapList + 8 * kSnapEntrySize);
    uint64_t bm = blocks_for((total_blocks + 7) / 8);
    uint64_t itab = std::clamp<uint64_t>(total_blocks / 32, 1, 64);
    uint64_t ns = std::clamp<uint64_t>(total_blocks / 64, 1, 16);

    uint64_t cursor = 0;
    auto place = [&](RegionId id, uint64_t len) {
        g.region(id) = Region{cursor, len};
        cursor += len;
    };
    place(RegionId::superblock, sb);
    place(RegionId::block_bitmap, bm);
    place(RegionId::exclude_bitmap, bm);
    place(RegionId::inode_table, itab);
    place(RegionId::name_table, ns);
    if (cursor >= total_blocks)
        throw io_error("geometry: device too small for metadata regions");
    place(RegionId::data, total_blocks - cursor);
    g.validate();
    return g;
}

DeviceGeometry DeviceGeometry::with_layout(uint32_t block_size, uint64_t total_blocks,
                                           uint64_t name_blocks, uint64_t inode_blocks) {
    DeviceGeometry g;
    g.block_size = block_size;
    g.total_blocks = total_blocks;
    uint64_t sb = std::max<uint64_t>(1, (kOffSnapList + block_size - 1) / block_size);
    uint64_t bm = ((total_blocks + 7) / 8 + block_size - 1) / block_size;

    uint64_t cursor = 0;
    auto place = [&](RegionId id, uint64_t len) {
        g.region(id) = Region{cursor, len};
        cursor += len;
    };
    place(RegionId::superblock, sb);
    place(RegionId::block_bitmap, bm);
    place(RegionId::exclude_bitmap, bm);
    place(RegionId::name_table, name_blocks);
    place(RegionId::inode_table, inode_blocks);
    if (cursor >= total_blocks)
        throw io_error("geometry: device too small for metadata regions");
    place(RegionId::data, total_blocks - cursor);
    g.validate();
    return g;
}

Bitmap Bitmap::from_bytes(uint64_t bits, std::span<const uint8_t> bytes) {
    Bitmap b(bits);
    if (bytes.size() < b.bytes_.size())
        throw io_error("bitmap: truncated serialization");
    std::copy_n(bytes.begin(), b.bytes_.size(), b.bytes_.begin());
    // Padding bits beyond `bits` must be zero.
    for (uint64_t i = bits; i < b.bytes_.size() * 8; ++i)
        if ((b.bytes_[i / 8] >> (i % 8)) & 1)
            throw io_error("bitmap: nonzero padding bits");
    return b;
}

uint64_t Bitmap::popcount() const {
    uint64_t n = 0;
    for (uint8_t b : bytes_)
        n += std::popcount(b);
    return n;
}

Bitmap Bitmap::and_not(const Bitmap& other) const {
    Bitmap out(bits_);
    for (std::size_t i = 0; i < bytes_.size(); ++i)
        out.bytes_[i] = bytes_[i] & uint8_t(~other.bytes_[i]);
    return out;
}

BlockDevice::BlockDevice(BlockDevice&& other) noexcept { *this = std::move(other); }

BlockDevice& BlockDevice::operator=(BlockDevice&& other) noexcept {
    if (this != &other) {
        if (fd_ >= 0)
            ::close(fd_);
        geo_ = other.geo_;
        free_ = other.free_;
        bitmap_ = std::move(other.bitmap_);
        exclude_ = std::move(other.exclude_);
        snaps_ = std::move(other.snaps_);
        image_ = std::move(other.image_);
        path_ = std::move(other.path_);
        fd_ = std::exchange(other.fd_, -1);
    }
    return *this;
}

BlockDevice::~BlockDevice() {
    if (fd_ >= 0)
        ::close(fd_);
}

namespace {

int open_locked(const std::string& path, bool create) {
    int flags = O_RDWR | (create ? O_CREAT : 0);
    int fd = ::open(path.c_str(), flags, 0644);
    if (fd < 0)
        throw io_error("cannot open image '" + path + "': " + std::strerror(errno));
    if (::flock(fd, LOCK_EX | LOCK_NB) != 0) {
        int err = errno;
        ::close(fd);
        if (err == EWOULDBLOCK)
            throw io_error("image '" + path + "' is locked by another process");
        throw io_error("cannot lock image '" + path + "': " + std::strerror(err));
    }
    return fd;
}

}  // namespace

BlockDevice BlockDevice::format(const std::string& path, const DeviceGeometry& geometry) {
    geometry.validate();
    BlockDevice dev;
    dev.geo_ = geometry;
    dev.path_ = path;
    dev.fd_ = open_locked(path, /*create=*/true);
    dev.image_.assign(geometry.total_blocks * geometry.block_size, 0);
    dev.bitmap_ = Bitmap(geometry.total_blocks);
    dev.exclude_ = Bitmap(geometry.total_blocks);
    for (uint64_t b = 0; b < geometry.total_blocks; ++b)
        if (geometry.is_metadata_block(b))
            dev.bitmap_.set(b);
    dev.free_ = geometry.region(RegionId::data).len;
    if (::ftruncate(dev.fd_, off_t(dev.image_.size())) != 0)
        throw io_error("cannot size image: " + std::string(std::strerror(errno)));
    dev.flush();
    return dev;
}

BlockDevice BlockDevice::open(const std::string& path) {
    BlockDevice dev;
    dev.path_ = path;
    dev.fd_ = open_locked(path, /*create=*/false);
    dev.load_image();
    return dev;
}

void BlockDevice::load_image() {
    off_t size = ::lseek(fd_, 0, SEEK_END);
    if (size < 0)
        throw io_error("cannot stat image");
    image_.resize(std::size_t(size));
    ssize_t got = ::pread(fd_, image_.data(), image_.size(), 0);
    if (got < 0 || std::size_t(got) != image_.size())
        throw io_error("short read loading image");

    std::span<const uint8_t> sb(image_);
    if (sb.size() < kOffSnapList)
        throw io_error("image too small for a superblock");
    if (std::memcmp(sb.data(), kSuperblockMagic.data(), 4) != 0)
        throw io_error("bad superblock magic");
    if (wire::get<uint16_t>(sb, kOffVersion) != kFormatVersion)
        throw io_error("unsupported format version");

    geo_.block_size = wire::get<uint32_t>(sb, kOffBlockSize);
    geo_.total_blocks = wire::get<uint64_t>(sb, kOffTotalBlocks);
    for (std::size_t i = 0; i < kRegionCount; ++i) {
        geo_.regions[i].start = wire::get<uint64_t>(sb, kOffRegions + 16 * i);
        geo_.regions[i].len = wire::get<uint64_t>(sb, kOffRegions + 16 * i + 8);
    }
    geo_.validate();
    if (image_.size() != geo_.total_blocks * geo_.block_size)
        throw io_error("image payload size does not match geometry");

    free_ = wire::get<uint64_t>(sb, kOffFreeBlocks);
    uint16_t count = wire::get<uint16_t>(sb, kOffSnapCount);
    if (kOffSnapList + uint64_t(count) * kSnapEntrySize >
        geo_.region(RegionId::superblock).len * geo_.block_size)
        throw io_error("snapshot list overflows superblock region");
    snaps_.clear();
    for (uint16_t i = 0; i < count; ++i) {
        std::size_t at = kOffSnapList + std::size_t(i) * kSnapEntrySize;
        SnapshotEntry e;
        e.inode_block = wire::get<uint64_t>(sb, at);
        e.epoch = wire::get<uint64_t>(sb, at + 8);
        e.cow_bitmap_block = wire::get<uint64_t>(sb, at + 16);
        snaps_.push_back(e);
    }

    auto bitmap_at = [&](RegionId id) {
        const Region& r = geo_.region(id);
        std::span<const uint8_t> raw(image_.data() + r.start * geo_.block_size,
                                     r.len * geo_.block_size);
        return Bitmap::from_bytes(geo_.total_blocks, raw);
    };
    bitmap_ = bitmap_at(RegionId::block_bitmap);
    exclude_ = bitmap_at(RegionId::exclude_bitmap);

    if (free_ + bitmap_.popcount() != geo_.total_blocks)
        throw io_error("superblock free counter disagrees with the block bitmap");
}

void BlockDevice::check_addr(uint64_t addr) const {
    if (addr >= geo_.total_blocks)
        throw domain_error("block address " + std::to_string(addr) + " out of range");
}

std::vector<uint8_t> BlockDevice::read_block(uint64_t addr) const {
    check_addr(addr);
    auto begin = image_.begin() + std::ptrdiff_t(addr * geo_.block_size);
    return std::vector<uint8_t>(begin, begin + geo_.block_size);
}

void BlockDevice::write_block(uint64_t addr, std::span<const uint8_t> bytes) {
    check_addr(addr);
    if (bytes.size() != geo_.block_size)
        throw domain_error("write_block payload must be exactly one block");
    std::copy(bytes.begin(), bytes.end(), image_.begin() + std::ptrdiff_t(addr * geo_.block_size));
}

std::optional<uint64_t> BlockDevice::find_run(uint64_t count, uint64_t hint) const {
    uint64_t total = geo_.total_blocks;
    for (uint64_t off = 0; off < total; ++off) {
        uint64_t start = (hint + off) % total;
        if (start + count > total)
            continue;
        bool ok = true;
        for (uint64_t b = start; b < start + count; ++b)
            if (bitmap_.test(b)) {
                ok = false;
                break;
            }
        if (ok)
            return start;
    }
    return std::nullopt;
}

std::vector<uint64_t> BlockDevice::alloc_blocks(uint64_t count, uint64_t hint) {
    if (count == 0)
        throw domain_error("zero-length allocation");
    if (free_ < count)
        throw domain_error("out of space: need " + std::to_string(count) + " blocks, " +
                           std::to_string(free_) + " free");
    hint %= geo_.total_blocks;

    std::vector<uint64_t> out;
    out.reserve(count);
    if (auto start = find_run(count, hint)) {
        for (uint64_t b = *start; b < *start + count; ++b)
            out.push_back(b);
    } else {
        for (uint64_t off = 0; off < geo_.total_blocks && out.size() < count; ++off) {
            uint64_t b = (hint + off) % geo_.total_blocks;
            if (!bitmap_.test(b))
                out.push_back(b);
        }
    }
    for (uint64_t b : out)
        bitmap_.set(b);
    free_ -= count;
    return out;
}

std::vector<uint64_t> BlockDevice::alloc_contiguous(uint64_t count, uint64_t hint) {
    if (count == 0)
        throw domain_error("zero-length allocation");
    if (free_ < count)
        throw domain_error("out of space: need " + std::to_string(count) + " contiguous blocks");
    hint %= geo_.total_blocks;
    auto start = find_run(count, hint);
    if (!start)
        throw domain_error("out of space: no contiguous run of " + std::to_string(count) +
                           " blocks");
    std::vector<uint64_t> out;
    for (uint64_t b = *start; b < *start + count; ++b) {
        bitmap_.set(b);
        out.push_back(b);
    }
    free_ -= count;
    return out;
}

void BlockDevice::free_blocks(const std::vector<uint64_t>& blocks) {
    std::set<uint64_t> seen;
    for (uint64_t b : blocks) {
        check_addr(b);
        if (!seen.insert(b).second || !bitmap_.test(b))
            throw integrity_error("double free of block " + std::to_string(b));
        if (exclude_.test(b))
            throw integrity_error("freeing snapshot-owned block " + std::to_string(b));
        if (geo_.is_metadata_block(b))
            throw integrity_error("freeing metadata-region block " + std::to_string(b));
    }
    for (uint64_t b : blocks)
        bitmap_.clear(b);
    free_ += blocks.size();
}

void BlockDevice::release_owned(uint64_t addr) {
    check_addr(addr);
    if (!exclude_.test(addr) || !bitmap_.test(addr))
        throw integrity_error("release_owned on a block not owned by a snapshot");
    exclude_.clear(addr);
    bitmap_.clear(addr);
    free_ += 1;
}

void BlockDevice::set_exclude(uint64_t addr) {
    check_addr(addr);
    if (!bitmap_.test(addr))
        throw integrity_error("exclude bit on unallocated block " + std::to_string(addr));
    exclude_.set(addr);
}

uint64_t BlockDevice::snapshot_capacity() const {
    uint64_t bytes = geo_.region(RegionId::superblock).len * geo_.block_size;
    return (bytes - kOffSnapList) / kSnapEntrySize;
}

std::vector<uint8_t> BlockDevice::superblock_bytes() const {
    std::vector<uint8_t> sb(geo_.region(RegionId::superblock).len * geo_.block_size, 0);
    std::memcpy(sb.data(), kSuperblockMagic.data(), 4);
    wire::put(sb, kOffVersion, kFormatVersion);
    wire::put(sb, kOffBlockSize, geo_.block_size);
    wire::put(sb, kOffTotalBlocks, geo_.total_blocks);
    wire::put(sb, kOffFreeBlocks, free_);
    for (std::size_t i = 0; i < kRegionCount; ++i) {
        wire::put(sb, kOffRegions + 16 * i, geo_.regions[i].start);
        wire::put(sb, kOffRegions + 16 * i + 8, geo_.regions[i].len);
    }
    if (snaps_.size() > snapshot_capacity())
        throw domain_error("snapshot list exceeds superblock capacity");
    wire::put(sb, kOffSnapCount, uint16_t(snaps_.size()));
    for (std::size_t i = 0; i < snaps_.size(); ++i) {
        std::size_t at = kOffSnapList + i * kSnapEntrySize;
        wire::put(sb, at, snaps_[i].inode_block);
        wire::put(sb, at + 8, snaps_[i].epoch);
        wire::put(sb, at + 16, snaps_[i].cow_bitmap_block);
    }
    return sb;
}

void BlockDevice::flush() {
    std::vector<uint8_t> sb = superblock_bytes();
    std::copy(sb.begin(), sb.end(), image_.begin());

    auto put_bitmap = [&](RegionId id, const Bitmap& bm) {
        const Region& r = geo_.region(id);
        auto dst = image_.begin() + std::ptrdiff_t(r.start * geo_.block_size);
        std::fill(dst, dst + std::ptrdiff_t(r.len * geo_.block_size), uint8_t(0));
        std::copy(bm.bytes().begin(), bm.bytes().end(), dst);
    };
    put_bitmap(RegionId::block_bitmap, bitmap_);
    put_bitmap(RegionId::exclude_bitmap, exclude_);

    ssize_t wrote = ::pwrite(fd_, image_.data(), image_.size(), 0);
    if (wrote < 0 || std::size_t(wrote) != image_.size())
        throw io_error("short write flushing image");
}

}  // namespace next4
