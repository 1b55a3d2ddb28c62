// SPDX-License-Identifier: Apache-2.0
//
// Regenerates tests/golden from the scalar reference writer:
//   lem_make_golden <dir>

#include <cstdio>

#include "reference.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: lem_make_golden <dir>\n");
    return 1;
  }
  const auto f = lem::testing::golden_fixture();
  const auto r =
      lem::testing::reference_evaluate(f.alloc, f.prices, f.volumes, f.windows, f.horizon);
  lem::testing::reference_write_reports(r, argv[1]);
  return 0;
}
