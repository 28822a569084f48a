// Part of the next4 project, under the Apache License v2.0.
// See https://www.apache.org/licenses/LICENSE-2.0 for license information.
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end over one image file.
//
// Exit codes: 0 success, 1 usage, 2 I/O or format error, 3 domain error,
// 4 integrity violation.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "next4/filesystem.hpp"
#include "next4/oracle.hpp"

using next4::Filesystem;
using nlohmann::json;

namespace {

std::string printable(const std::vector<uint8_t>& data, uint32_t block_size) {
    // One block per token: print each block's bytes up to the first NUL.
    std::string out;
    for (std::size_t at = 0; at < data.size(); at += block_size) {
        for (std::size_t i = at; i < std::min<std::size_t>(at + block_size, data.size()); ++i) {
            if (data[i] == 0)
                break;
            out.push_back(char(data[i]));
        }
    }
    return out;
}

std::vector<uint8_t> spread_tokens(const std::string& data, uint32_t block_size) {
    // Inverse of printable for single-character tokens: byte i goes to block i.
    std::vector<uint8_t> payload(data.size() * block_size, 0);
    for (std::size_t i = 0; i < data.size(); ++i)
        payload[i * block_size] = uint8_t(data[i]);
    return payload;
}

void print_extents(const next4::Inode& inode) {
    for (const next4::Extent& x : inode.extents) {
        std::cout << "  " << x.logical;
        if (x.length > 1)
            std::cout << "-" << (x.logical_end() - 1);
        std::cout << " -> " << x.physical;
        if (x.length > 1)
            std::cout << "-" << (x.physical_end() - 1);
        std::cout << "\n";
    }
}

json snapshot_json(const next4::SnapshotInfo& s, uint64_t free_blocks) {
    return json{{"id", s.id},
                {"mapped", s.mapped},
                {"identity", s.identity},
                {"copies", s.copies},
                {"overhead_blocks", s.overhead_blocks},
                {"free_blocks", free_blocks}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"next4 - snapshot-capable block store"};
    app.require_subcommand(1);

    std::string image, name, data;
    uint64_t blocks = 128, block_size = 256;
    std::optional<uint64_t> name_blocks, inode_blocks;
    uint64_t offset = 0, length = 0, snap_id = 0, from = 0;
    std::optional<uint64_t> hint, meta_hint;
    bool use_json = false, raw = false;

    auto* mkfs = app.add_subcommand("mkfs", "format a new image");
    mkfs->add_option("image", image)->required();
    mkfs->add_option("--blocks", blocks, "total blocks")->capture_default_str();
    mkfs->add_option("--block-size", block_size, "bytes per block")->capture_default_str();
    mkfs->add_option("--name-blocks", name_blocks, "namespace region size");
    mkfs->add_option("--inode-blocks", inode_blocks, "inode table region size");

    auto* write = app.add_subcommand("write", "write file data (creates the file)");
    write->add_option("image", image)->required();
    write->add_option("name", name)->required();
    write->add_option("--data", data, "token string, one byte per block");
    write->add_option("--offset", offset, "logical block offset");
    write->add_option("--hint", hint, "allocation hint for data blocks");
    write->add_option("--meta-hint", meta_hint, "allocation hint for COW copies");
    write->add_flag("--raw", raw, "read raw payload from stdin instead of --data");

    auto* readv = app.add_subcommand("read", "read file content");
    readv->add_option("image", image)->required();
    readv->add_option("name", name)->required();
    readv->add_option("--offset", offset);
    readv->add_option("--length", length, "blocks (default: to end of file)");
    readv->add_flag("--raw", raw, "emit raw blocks");

    auto* rm = app.add_subcommand("rm", "delete a file, or truncate its tail");
    rm->add_option("image", image)->required();
    rm->add_option("name", name)->required();
    auto* from_opt = rm->add_option("--from", from, "truncate from this logical block");
    rm->add_option("--meta-hint", meta_hint);

    auto* screate = app.add_subcommand("snap-create", "take a snapshot");
    screate->add_option("image", image)->required();
    screate->add_option("--hint", hint, "allocation hint for snapshot metadata");

    auto* slist = app.add_subcommand("snap-list", "list snapshots");
    slist->add_option("image", image)->required();
    slist->add_flag("--json", use_json);

    auto* sdelete = app.add_subcommand("snap-delete", "delete a snapshot (merge into older)");
    sdelete->add_option("image", image)->required();
    sdelete->add_option("--snap", snap_id)->required();

    auto* sread = app.add_subcommand("snap-read", "read a file as of a snapshot");
    sread->add_option("image", image)->required();
    sread->add_option("name", name)->required();
    sread->add_option("--snap", snap_id)->required();
    sread->add_flag("--raw", raw);

    auto* statsv = app.add_subcommand("stats", "device and snapshot statistics");
    statsv->add_option("image", image)->required();
    statsv->add_flag("--json", use_json);

    auto* verifyv = app.add_subcommand("verify", "recompute and check all invariants");
    verifyv->add_option("image", image)->required();

    auto* dumpv = app.add_subcommand("dump", "print extents, bitmaps and snapshot mappings");
    dumpv->add_option("image", image)->required();
    dumpv->add_flag("--json", use_json);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (mkfs->parsed()) {
            next4::DeviceGeometry g =
                (name_blocks || inode_blocks)
                    ? next4::DeviceGeometry::with_layout(uint32_t(block_size), blocks,
                                                         name_blocks.value_or(4),
                                                         inode_blocks.value_or(8))
                    : next4::DeviceGeometry::standard(uint32_t(block_size), blocks);
            Filesystem::format(image, g);
            std::cout << "formatted " << image << ": " << blocks << " blocks x " << block_size
                      << " B\n";
            return 0;
        }

        Filesystem fs = Filesystem::open(image);

        if (write->parsed()) {
            if (!fs.list_files().count(name))
                fs.create_file(name, meta_hint);
            next4::WriteRequest req;
            req.name = name;
            req.offset_blocks = offset;
            req.data_hint = hint;
            req.meta_hint = meta_hint;
            if (raw) {
                req.payload.assign(std::istreambuf_iterator<char>(std::cin), {});
            } else {
                req.payload = spread_tokens(data, fs.device().geometry().block_size);
            }
            fs.write_file(req);
        } else if (readv->parsed()) {
            uint64_t len = length ? length : fs.inode_of(name).size_blocks - offset;
            auto bytes = fs.read_file_range(name, offset, len);
            if (raw)
                std::cout.write(reinterpret_cast<const char*>(bytes.data()),
                                std::streamsize(bytes.size()));
            else
                std::cout << printable(bytes, fs.device().geometry().block_size) << "\n";
        } else if (rm->parsed()) {
            if (from_opt->count())
                fs.truncate_file(name, from, meta_hint);
            else
                fs.remove_file(name, meta_hint);
        } else if (screate->parsed()) {
            std::cout << fs.snapshot_take(hint) << "\n";
        } else if (slist->parsed()) {
            auto list = fs.snapshot_list();
            if (use_json) {
                json out = json::array();
                for (const auto& s : list)
                    out.push_back(snapshot_json(s, fs.device().free_count()));
                std::cout << out.dump() << "\n";
            } else {
                for (const auto& s : list)
                    std::cout << "snapshot " << s.id << ": inode_block " << s.inode_block
                              << " mapped " << s.mapped << " identity " << s.identity
                              << " copies " << s.copies << " overhead " << s.overhead_blocks
                              << "\n";
            }
        } else if (sdelete->parsed()) {
            std::cout << "freed " << fs.snapshot_delete(snap_id) << " blocks\n";
        } else if (sread->parsed()) {
            auto bytes = fs.read_file_at(snap_id, name);
            if (raw)
                std::cout.write(reinterpret_cast<const char*>(bytes.data()),
                                std::streamsize(bytes.size()));
            else
                std::cout << printable(bytes, fs.device().geometry().block_size) << "\n";
        } else if (statsv->parsed()) {
            auto s = fs.stats();
            if (use_json) {
                json out{{"total_blocks", s.total_blocks}, {"allocated", s.allocated},
                         {"free_blocks", s.free},          {"excluded", s.excluded},
                         {"snapshots", json::array()}};
                for (const auto& snap : s.snapshots)
                    out["snapshots"].push_back(snapshot_json(snap, s.free));
                std::cout << out.dump() << "\n";
            } else {
                std::cout << "total " << s.total_blocks << " allocated " << s.allocated
                          << " free " << s.free << " excluded " << s.excluded << "\n";
                for (const auto& snap : s.snapshots)
                    std::cout << "snapshot " << snap.id << ": mapped " << snap.mapped
                              << " identity " << snap.identity << " copies " << snap.copies
                              << " overhead " << snap.overhead_blocks << "\n";
            }
        } else if (verifyv->parsed()) {
            auto violations = fs.verify();
            std::cout << violations.size() << " violations\n";
            for (const auto& v : violations)
                std::cout << "  " << v << "\n";
            return violations.empty() ? 0 : 4;
        } else if (dumpv->parsed()) {
            const auto& g = fs.device().geometry();
            if (use_json) {
                json out{{"block_size", g.block_size},
                         {"total_blocks", g.total_blocks},
                         {"free_blocks", fs.device().free_count()},
                         {"files", json::array()},
                         {"snapshots", json::array()}};
                for (const auto& [fname, ino] : fs.list_files()) {
                    json extents = json::array();
                    for (const auto& x : fs.inode_of(fname).extents)
                        extents.push_back({{"logical", x.logical},
                                           {"physical", x.physical},
                                           {"length", x.length}});
                    out["files"].push_back(
                        {{"name", fname}, {"inode", ino}, {"extents", extents}});
                }
                for (const auto& s : fs.snapshot_list()) {
                    json extents = json::array();
                    for (const auto& x : fs.snapshot_inode(s.id).extents)
                        extents.push_back({{"logical", x.logical},
                                           {"physical", x.physical},
                                           {"length", x.length}});
                    json j = snapshot_json(s, fs.device().free_count());
                    j["mappings"] = extents;
                    out["snapshots"].push_back(j);
                }
                std::cout << out.dump() << "\n";
            } else {
                std::cout << "geometry: " << g.total_blocks << " blocks x " << g.block_size
                          << " B, data at " << g.data_start() << ", free "
                          << fs.device().free_count() << "\n";
                for (const auto& [fname, ino] : fs.list_files()) {
                    auto inode = fs.inode_of(fname);
                    std::cout << "file " << fname << " inode " << ino << " size "
                              << inode.size_blocks << "\n";
                    print_extents(inode);
                }
                for (const auto& s : fs.snapshot_list()) {
                    std::cout << "snapshot " << s.id << " inode_block " << s.inode_block
                              << "\n";
                    print_extents(fs.snapshot_inode(s.id));
                }
            }
        }
        return 0;
    } catch (const next4::error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return int(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
