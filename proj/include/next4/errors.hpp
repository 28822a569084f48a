// Part of the next4 project, under the Apache License v2.0.
// See https://www.apache.org/licenses/LICENSE-2.0 for license information.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace next4 {

// Error categories map 1:1 onto CLI exit codes.
enum class errc {
    io = 2,         // I/O failure, bad image format, lock contention
    domain = 3,     // unknown file/snapshot, duplicate name, out of space
    integrity = 4,  // invariant breach detected at runtime
};

class error : public std::runtime_error {
public:
    error(errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    errc code() const noexcept { return code_; }

private:
    errc code_;
};

struct io_error : error {
    explicit io_error(const std::string& what) : error(errc::io, what) {}
};

struct domain_error : error {
    explicit domain_error(const std::string& what) : error(errc::domain, what) {}
};

struct integrity_error : error {
    explicit integrity_error(const std::string& what) : error(errc::integrity, what) {}
};

}  // namespace next4
