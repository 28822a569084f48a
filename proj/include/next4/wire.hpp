// Part of the next4 project, under the Apache License v2.0.
// See https://www.apache.org/licenses/LICENSE-2.0 for license information.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

#include "next4/errors.hpp"

namespace next4::wire {

// Little-endian field access, independent of host byte order.

template <typename T>
inline void put(std::vector<uint8_t>& out, std::size_t at, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
        out[at + i] = uint8_t((uint64_t(value) >> (8 * i)) & 0xff);
}

template <typename T>
inline void append(std::vector<uint8_t>& out, T value) {
    std::size_t at = out.size();
    out.resize(at + sizeof(T));
    put(out, at, value);
}

template <typename T>
inline T get(std::span<const uint8_t> in, std::size_t at) {
    if (at + sizeof(T) > in.size())
        throw io_error("wire: truncated record");
    uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= uint64_t(in[at + i]) << (8 * i);
    return T(v);
}

}  // namespace next4::wire
