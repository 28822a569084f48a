// Part of the next4 project, under the Apache License v2.0.
// See https://www.apache.org/licenses/LICENSE-2.0 for license information.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "next4/filesystem.hpp"

namespace testutil {

/// Unique image path under the system temp dir, removed on destruction.
class TempImage {
public:
    explicit TempImage(const std::string& tag = "img") {
        static std::atomic<uint64_t> counter{0};
        path_ = (std::filesystem::temp_directory_path() /
                 ("next4_" + tag + "_" + std::to_string(::getpid()) + "_" +
                  std::to_string(counter++) + ".img"))
                    .string();
    }
    ~TempImage() { std::remove(path_.c_str()); }
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

/// The pinned trace layout: 128 blocks x 256 B, namespace [3,10),
/// inode table [10,20), data [20,128). First file inode lands in block 10.
inline next4::DeviceGeometry trace_geometry() {
    return next4::DeviceGeometry::with_layout(256, 128, 7, 10);
}

/// One token byte per block, matching the CLI's --data convention.
inline std::vector<uint8_t> tokens_payload(const std::string& tokens, uint32_t block_size) {
    std::vector<uint8_t> payload(tokens.size() * block_size, 0);
    for (std::size_t i = 0; i < tokens.size(); ++i)
        payload[i * block_size] = uint8_t(tokens[i]);
    return payload;
}

inline std::string tokens_of(const std::vector<uint8_t>& data, uint32_t block_size) {
    std::string out;
    for (std::size_t at = 0; at < data.size(); at += block_size)
        out.push_back(data[at] ? char(data[at]) : '.');
    return out;
}

inline void write_tokens(next4::Filesystem& fs, const std::string& name,
                         const std::string& tokens, uint64_t offset = 0,
                         std::optional<uint64_t> data_hint = {},
                         std::optional<uint64_t> meta_hint = {}) {
    next4::WriteRequest req;
    req.name = name;
    req.offset_blocks = offset;
    req.payload = tokens_payload(tokens, fs.device().geometry().block_size);
    req.data_hint = data_hint;
    req.meta_hint = meta_hint;
    fs.write_file(req);
}

inline std::string read_tokens(next4::Filesystem& fs, const std::string& name) {
    return tokens_of(fs.read_file(name), fs.device().geometry().block_size);
}

inline std::string read_tokens_at(next4::Filesystem& fs, uint64_t snap,
                                  const std::string& name) {
    return tokens_of(fs.read_file_at(snap, name), fs.device().geometry().block_size);
}

}  // namespace testutil
