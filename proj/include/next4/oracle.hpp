// Part of the next4 project, under the Apache License v2.0.
// See https://www.apache.org/licenses/LICENSE-2.0 for license information.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "next4/filesystem.hpp"

namespace next4::oracle {

/// Verification-only full copy of the logical state at one point in time:
/// the namespace, every file's content, and every in-use, non-snapshot-owned
/// raw block of the protected regions. Deliberately built from plain live
/// reads, sharing nothing with the snapshot resolve path it later checks.
struct OracleImage {
    std::map<std::string, std::vector<uint8_t>> files;
    std::map<uint64_t, std::vector<uint8_t>> raw_blocks;
};

/// Deep copy of the live state. Does not mutate the filesystem.
OracleImage capture(Filesystem& fs);

/// Compares the snapshot's view against an oracle captured at its creation:
/// read_file_at for every oracle file, snapshot_read_block for every oracle
/// raw block. Returns one entry per mismatch; empty means bitwise identical.
std::vector<std::string> assert_matches(Filesystem& fs, uint64_t snapshot_id,
                                        const OracleImage& oracle);

}  // namespace next4::oracle
