// Part of the next4 project, under the Apache License v2.0.
// See https://www.apache.org/licenses/LICENSE-2.0 for license information.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "next4/filesystem.hpp"

namespace testutil {

/// Scripted replay of the worked example: one file "HEADSHOT", two snapshots,
/// rewrites, delete protection, snapshot delete with merge. Runs on the
/// pinned trace geometry with per-operation allocation hints so the block
/// numbers (20, 30, 60-63, 70-71, 80, 90) come out exactly. Returns one
/// message per failed assertion; empty means the trace reproduced.
inline std::vector<std::string> run_golden_trace(const std::string& image_path) {
    using namespace next4;
    std::vector<std::string> failures;
    auto expect = [&](bool ok, const std::string& what) {
        if (!ok)
            failures.push_back(what);
    };
    auto expect_eq = [&](auto got, auto want, const std::string& what) {
        if (!(got == want)) {
            std::ostringstream os;
            os << what << ": got " << got << ", want " << want;
            failures.push_back(os.str());
        }
    };

    Filesystem fs = Filesystem::format(image_path, trace_geometry());

    // Step 1: file "f" = HEAD(40-43) + SHOT(50-53), inode in block 10.
    fs.create_file("f");
    write_tokens(fs, "f", "HEAD", 0, /*data_hint=*/40);
    write_tokens(fs, "f", "SHOT", 4, /*data_hint=*/50);
    expect_eq(read_tokens(fs, "f"), std::string("HEADSHOT"), "step 1 live content");
    {
        auto inode = fs.inode_of("f");
        expect(inode.extents == std::vector<Extent>{{0, 40, 4}, {4, 50, 4}},
               "step 1 file extents are 40-43 and 50-53");
        auto [blk, off] = std::pair<uint64_t, uint64_t>{10, 0};
        (void)off;
        expect_eq(blk, uint64_t(10), "step 1 inode block");
    }

    // Step 2: snapshot S1, inode block 90, all holes.
    uint64_t s1 = fs.snapshot_take(/*hint=*/90);
    expect_eq(fs.snapshot_inode(s1).inode_no, uint64_t(90), "S1 inode block is 90");
    expect(fs.snapshot_inode(s1).extents.empty(), "S1 starts as all holes");
    expect(fs.cow_bitmap(s1).test(10) && fs.cow_bitmap(s1).test(40) &&
               fs.cow_bitmap(s1).test(53),
           "S1 COW bits cover the in-use blocks");
    expect(!fs.cow_bitmap(s1).test(90) && !fs.cow_bitmap(s1).test(91),
           "S1's own metadata is masked out of its COW bitmap");

    // Step 3: rewrite HEAD -> SNAP. MOW to 60-63, inode COW copy to 20.
    write_tokens(fs, "f", "SNAP", 0, /*data_hint=*/60, /*meta_hint=*/20);
    expect_eq(read_tokens(fs, "f"), std::string("SNAPSHOT"), "step 3 live content");
    expect_eq(read_tokens_at(fs, s1, "f"), std::string("HEADSHOT"), "step 3 S1 view");
    expect(fs.inode_of("f").extents == std::vector<Extent>{{0, 60, 4}, {4, 50, 4}},
           "step 3 file extents are SNAP(60-63), SHOT(50-53)");
    expect(fs.snapshot_inode(s1).extents == std::vector<Extent>{{10, 20, 1}, {40, 40, 4}},
           "step 3 S1 maps 10->20 (COW) and 40-43 identity (MOW)");
    expect_eq(fs.resolve(s1, 10), uint64_t(20), "resolve(S1, 10)");
    expect_eq(fs.resolve(s1, 41), uint64_t(41), "resolve(S1, 41)");

    // Step 4: snapshot S2, inode block 80, all holes.
    uint64_t s2 = fs.snapshot_take(/*hint=*/80);
    expect_eq(fs.snapshot_inode(s2).inode_no, uint64_t(80), "S2 inode block is 80");
    expect(fs.snapshot_inode(s2).extents.empty(), "S2 starts as all holes");
    expect(!fs.cow_bitmap(s2).test(20) && !fs.cow_bitmap(s2).test(40),
           "S2's COW bitmap excludes blocks S1 owns");

    // Step 5: rewrite SH -> FS at logical 4-5. Extent break; MOW to 70-71,
    // inode COW copy to 30.
    write_tokens(fs, "f", "FS", 4, /*data_hint=*/70, /*meta_hint=*/30);
    expect_eq(read_tokens(fs, "f"), std::string("SNAPFSOT"), "step 5 live content");
    expect_eq(read_tokens_at(fs, s2, "f"), std::string("SNAPSHOT"), "step 5 S2 view");
    expect_eq(read_tokens_at(fs, s1, "f"), std::string("HEADSHOT"), "step 5 S1 view");
    expect(fs.inode_of("f").extents ==
               std::vector<Extent>{{0, 60, 4}, {4, 70, 2}, {6, 52, 2}},
           "step 5 file extents are SNAP(60-63), FS(70-71), OT(52-53)");
    expect(fs.snapshot_inode(s2).extents == std::vector<Extent>{{10, 30, 1}, {50, 50, 2}},
           "step 5 S2 maps 10->30 (COW) and 50-51 identity (MOW)");

    // Step 6: delete OT. Blocks 52-53 are MOW-protected under S2, not freed.
    fs.truncate_file("f", 6);
    expect_eq(read_tokens(fs, "f"), std::string("SNAPFS"), "step 6 live content");
    expect(fs.inode_of("f").extents == std::vector<Extent>{{0, 60, 4}, {4, 70, 2}},
           "step 6 file keeps SNAP(60-63) and FS(70-71)");
    expect(fs.snapshot_inode(s2).extents == std::vector<Extent>{{10, 30, 1}, {50, 50, 4}},
           "step 6 S2 gains 52-53 identity (coalesced onto 50-51)");
    expect(fs.device().is_allocated(52) && fs.device().is_excluded(52),
           "step 6 block 52 stays allocated under S2");
    expect_eq(read_tokens_at(fs, s2, "f"), std::string("SNAPSHOT"), "step 6 S2 view");

    // Step 7: delete S2. 50-53 merge into S1; copy 30 and S2's metadata
    // (80, 81) return to the free pool.
    uint64_t freed = fs.snapshot_delete(s2);
    expect_eq(freed, uint64_t(3), "step 7 frees copy 30 + S2 metadata 80, 81");
    expect(!fs.device().is_allocated(30) && !fs.device().is_allocated(80) &&
               !fs.device().is_allocated(81),
           "step 7 blocks 30, 80, 81 are free again");
    expect(fs.snapshot_inode(s1).extents ==
               std::vector<Extent>{{10, 20, 1}, {40, 40, 4}, {50, 50, 4}},
           "step 7 S1 inherits the 50-53 identity mappings");
    expect_eq(read_tokens_at(fs, s1, "f"), std::string("HEADSHOT"), "step 7 S1 view");
    expect_eq(read_tokens(fs, "f"), std::string("SNAPFS"), "step 7 live content");
    expect_eq(fs.max_preservations(), uint64_t(1), "COW-once across the whole trace");

    auto violations = fs.verify();
    for (const auto& v : violations)
        failures.push_back("verify: " + v);
    return failures;
}

}  // namespace testutil
