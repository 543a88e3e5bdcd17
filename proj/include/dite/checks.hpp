#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dite {

// The finite-difference verification suite over the dynamic operators and a
// tiny end-to-end model, run in double precision. Shared by the CLI
// `gradcheck` subcommand and the acceptance tests.

struct GradCheckCase {
    std::string name;
    double worst_rel_err = 0;
    double tol = 0;
    bool finite = true;
    bool pass = false;
};

struct GradCheckSuite {
    std::vector<GradCheckCase> cases;
    bool all_pass = true;

    std::string to_json() const;
};

GradCheckSuite run_gradcheck_suite(std::uint64_t seed, double tol_ops = 1e-4,
                                   double tol_end_to_end = 1e-3);

}  // namespace dite
