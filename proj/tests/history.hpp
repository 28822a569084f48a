// Part of the next4 project, under the Apache License v2.0.
// See https://www.apache.org/licenses/LICENSE-2.0 for license information.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "next4/filesystem.hpp"
#include "next4/oracle.hpp"

namespace testutil {

/// Randomized operation history cross-checked against two oracles:
///  - a plain in-memory model of every live file's byte content, and
///  - a full shadow copy of the device's logical state taken at each
///    snapshot, compared later through the snapshot read path only.
/// Every few operations (and after every structural one) all surviving
/// shadow copies are re-checked bitwise and the on-device invariants are
/// re-verified. Returns one message per divergence; empty means the
/// history passed.
/// One live (non-snapshot) operation, replayable onto a fresh image.
struct LiveOp {
    enum Kind { create, write, truncate, remove } kind;
    std::string name;
    uint64_t arg = 0;  // offset for write, boundary for truncate
    std::vector<uint8_t> payload;
};

struct HistoryResult {
    uint64_t ops_run = 0;
    std::vector<std::string> failures;
    std::vector<LiveOp> live_ops;  // the successful live ops, in order
    next4::Bitmap final_bitmap;    // block bitmap after deleting every snapshot
    std::map<std::string, std::vector<uint8_t>> final_files;
};

inline HistoryResult run_history(const std::string& image_path, uint64_t seed,
                                 uint64_t num_ops, const next4::DeviceGeometry& geometry,
                                 uint64_t check_every = 25) {
    using namespace next4;
    HistoryResult result;
    std::mt19937_64 rng(seed);
    const uint32_t bs = geometry.block_size;

    auto fs = std::make_unique<Filesystem>(Filesystem::format(image_path, geometry));
    std::map<std::string, std::vector<uint8_t>> model;  // live file contents
    std::map<uint64_t, oracle::OracleImage> shadows;    // snapshot id -> shadow copy

    auto fail = [&](const std::string& what) {
        std::ostringstream os;
        os << "seed " << seed << " op " << result.ops_run << ": " << what;
        result.failures.push_back(os.str());
    };

    auto check_all = [&] {
        for (const auto& [id, shadow] : shadows)
            for (const auto& m : oracle::assert_matches(*fs, id, shadow))
                fail("snapshot " + std::to_string(id) + ": " + m);
        for (const auto& v : fs->verify())
            fail("verify: " + v);
        if (fs->max_preservations() > 1)
            fail("a block was preserved more than once in one snapshot epoch");
    };

    auto random_name = [&] { return "f" + std::to_string(rng() % 5); };
    auto random_payload = [&](uint64_t blocks) {
        std::vector<uint8_t> p(blocks * bs);
        for (auto& b : p)
            b = uint8_t(rng());
        return p;
    };

    for (uint64_t op = 0; op < num_ops && result.failures.empty(); ++op) {
        result.ops_run = op;
        uint64_t kind = rng() % 100;
        try {
            if (kind < 10) {  // create
                std::string name = random_name();
                if (!model.count(name)) {
                    fs->create_file(name);
                    model[name] = {};
                    result.live_ops.push_back({LiveOp::create, name, 0, {}});
                }
            } else if (kind < 55) {  // write
                std::string name = random_name();
                if (!model.count(name)) {
                    fs->create_file(name);
                    model[name] = {};
                    result.live_ops.push_back({LiveOp::create, name, 0, {}});
                }
                WriteRequest req;
                req.name = name;
                req.offset_blocks = rng() % 20;
                req.payload = random_payload(1 + rng() % 6);
                fs->write_file(req);
                result.live_ops.push_back({LiveOp::write, name, req.offset_blocks, req.payload});

                auto& content = model[name];
                std::size_t end = req.offset_blocks * bs + req.payload.size();
                if (content.size() < end)
                    content.resize(end, 0);
                std::copy(req.payload.begin(), req.payload.end(),
                          content.begin() + std::ptrdiff_t(req.offset_blocks * bs));
            } else if (kind < 65) {  // truncate
                if (!model.empty()) {
                    auto it = std::next(model.begin(), std::ptrdiff_t(rng() % model.size()));
                    uint64_t from = rng() % 20;
                    fs->truncate_file(it->first, from);
                    result.live_ops.push_back({LiveOp::truncate, it->first, from, {}});
                    if (it->second.size() > from * bs)
                        it->second.resize(from * bs);
                }
            } else if (kind < 72) {  // remove
                if (!model.empty()) {
                    auto it = std::next(model.begin(), std::ptrdiff_t(rng() % model.size()));
                    fs->remove_file(it->first);
                    result.live_ops.push_back({LiveOp::remove, it->first, 0, {}});
                    model.erase(it);
                }
            } else if (kind < 84) {  // snapshot take
                if (fs->device().snapshots().size() <
                    std::min<uint64_t>(fs->device().snapshot_capacity(), 8)) {
                    auto shadow = oracle::capture(*fs);
                    uint64_t id = fs->snapshot_take();
                    shadows.emplace(id, std::move(shadow));
                    check_all();
                }
            } else if (kind < 92) {  // snapshot delete
                if (!shadows.empty()) {
                    auto it = std::next(shadows.begin(), std::ptrdiff_t(rng() % shadows.size()));
                    fs->snapshot_delete(it->first);
                    shadows.erase(it);
                    check_all();
                }
            } else {  // close + reopen
                fs->flush();
                fs.reset();
                fs = std::make_unique<Filesystem>(Filesystem::open(image_path));
                check_all();
            }
        } catch (const domain_error&) {
            // Out of space or capacity: the operation must have been a no-op;
            // the periodic checks below will catch it if it was not.
        }

        // Spot-check one live file against the model every operation.
        if (!model.empty()) {
            auto it = std::next(model.begin(), std::ptrdiff_t(rng() % model.size()));
            auto got = fs->read_file(it->first);
            if (got != it->second)
                fail("live content of '" + it->first + "' diverged from the model");
        }
        if ((op + 1) % check_every == 0)
            check_all();
    }

    // Final full check, then delete every snapshot and confirm the device
    // footprint shrinks back to exactly the live state.
    check_all();
    while (!fs->device().snapshots().empty()) {
        uint64_t id = fs->device().snapshots().front().epoch;
        fs->snapshot_delete(id);
        shadows.erase(id);
        check_all();
    }
    if (fs->device().exclude_bitmap().popcount() != 0)
        fail("exclude bitmap not empty after deleting every snapshot");

    uint64_t live_data = 0;
    for (const auto& entry : fs->list_files()) {
        Inode inode = fs->inode_of(entry.first);
        for (const Extent& e : inode.extents)
            live_data += e.length;
        live_data += index_blocks_needed(inode.extents.size(), bs);
    }
    uint64_t expect = geometry.metadata_blocks() + live_data;
    if (fs->device().block_bitmap().popcount() != expect)
        fail("footprint after deleting all snapshots: got " +
             std::to_string(fs->device().block_bitmap().popcount()) + ", want " +
             std::to_string(expect));

    result.final_bitmap = fs->device().block_bitmap();
    result.final_files = std::move(model);
    result.ops_run = num_ops;
    return result;
}

/// Replays the live operations of a history onto a fresh, snapshot-free
/// image and hands the filesystem back for comparison.
inline next4::Filesystem replay_live(const std::string& image_path,
                                     const next4::DeviceGeometry& geometry,
                                     const std::vector<LiveOp>& ops) {
    using namespace next4;
    auto fs = Filesystem::format(image_path, geometry);
    for (const LiveOp& op : ops) {
        switch (op.kind) {
        case LiveOp::create:
            fs.create_file(op.name);
            break;
        case LiveOp::write: {
            WriteRequest req;
            req.name = op.name;
            req.offset_blocks = op.arg;
            req.payload = op.payload;
            fs.write_file(req);
            break;
        }
        case LiveOp::truncate:
            fs.truncate_file(op.name, op.arg);
            break;
        case LiveOp::remove:
            fs.remove_file(op.name);
            break;
        }
    }
    return fs;
}

}  // namespace testutil
