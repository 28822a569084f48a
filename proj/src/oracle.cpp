// Part of the next4 project, under the Apache License v2.0.
// See https://www.apache.org/licenses/LICENSE-2.0 for license information.
// SPDX-License-Identifier: Apache-2.0

#include "next4/oracle.hpp"

namespace next4::oracle {

OracleImage capture(Filesystem& fs) {
    OracleImage img;
    for (const auto& [name, ino] : fs.list_files())
        img.files[name] = fs.read_file(name);

    const BlockDevice& dev = fs.device();
    const DeviceGeometry& g = dev.geometry();
    // Superblock and bitmap regions are not snapshot-protected; snapshot-owned
    // (excluded) blocks are never preserved again. Everything else in use is
    // covered by the snapshot guarantee.
    auto protected_region = [&](uint64_t b) {
        return g.region(RegionId::inode_table).contains(b) ||
               g.region(RegionId::name_table).contains(b) ||
               g.region(RegionId::data).contains(b);
    };
    for (uint64_t b = 0; b < g.total_blocks; ++b)
        if (protected_region(b) && dev.is_allocated(b) && !dev.is_excluded(b))
            img.raw_blocks[b] = fs.device().read_block(b);
    return img;
}

std::vector<std::string> assert_matches(Filesystem& fs, uint64_t snapshot_id,
                                        const OracleImage& oracle) {
    std::vector<std::string> mismatches;

    auto snap_names = fs.list_files_at(snapshot_id);
    for (const auto& [name, content] : oracle.files) {
        if (!snap_names.count(name)) {
            mismatches.push_back("file '" + name + "' missing at snapshot " +
                                 std::to_string(snapshot_id));
            continue;
        }
        if (fs.read_file_at(snapshot_id, name) != content)
            mismatches.push_back("file '" + name + "' content differs at snapshot " +
                                 std::to_string(snapshot_id));
    }
    for (const auto& [name, ino] : snap_names)
        if (!oracle.files.count(name))
            mismatches.push_back("unexpected file '" + name + "' at snapshot " +
                                 std::to_string(snapshot_id));

    for (const auto& [addr, content] : oracle.raw_blocks)
        if (fs.snapshot_read_block(snapshot_id, addr) != content)
            mismatches.push_back("block " + std::to_string(addr) + " differs at snapshot " +
                                 std::to_string(snapshot_id));
    return mismatches;
}

}  // namespace next4::oracle
