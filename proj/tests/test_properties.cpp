// Part of the next4 project, under the Apache License v2.0.
// See https://www.apache.org/licenses/LICENSE-2.0 for license information.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "history.hpp"

using namespace next4;
using namespace testutil;

TEST_CASE("randomized histories agree with both oracles") {
    for (uint64_t seed = 1; seed <= 25; ++seed) {
        TempImage img("hist");
        auto result = run_history(img.path(), seed, 120,
                                  DeviceGeometry::standard(256, 1024));
        for (const auto& f : result.failures)
            FAIL_CHECK(f);
        CHECK(result.ops_run == 120);
    }
}

TEST_CASE("randomized histories hold on a larger block size") {
    for (uint64_t seed = 100; seed < 110; ++seed) {
        TempImage img("hist512");
        auto result = run_history(img.path(), seed, 120,
                                  DeviceGeometry::standard(512, 768));
        for (const auto& f : result.failures)
            FAIL_CHECK(f);
    }
}

TEST_CASE("randomized histories hold on a tight device") {
    // Small enough that out-of-space paths trigger regularly.
    for (uint64_t seed = 200; seed < 215; ++seed) {
        TempImage img("tight");
        auto result = run_history(img.path(), seed, 120,
                                  DeviceGeometry::standard(256, 320));
        for (const auto& f : result.failures)
            FAIL_CHECK(f);
    }
}
