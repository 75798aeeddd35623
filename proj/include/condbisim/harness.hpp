#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "condbisim/bounds.hpp"
#include "condbisim/cmdp.hpp"
#include "condbisim/report.hpp"

namespace condbisim {

// Worker cap: CONDBISIM_THREADS when set (>= 1), else hardware concurrency.
int worker_count();

// Runs fn(0..n-1) across workers; callers index into pre-sized result slots,
// so output order never depends on scheduling. The first exception thrown by
// any worker is rethrown after all workers finish.
void parallel_for(int n, const std::function<void(int)>& fn);

// Randomized verification suites. A non-null env pins the environment for
// every trial; otherwise each trial draws a fresh one from its own seed, so
// adding trials never perturbs earlier ones.
std::vector<BoundReport> aggregation_suite(int trials, std::uint64_t seed,
                                           const ContextualMDP* env);
std::vector<BoundReport> generalization_suite(int trials, std::uint64_t seed,
                                              const ContextualMDP* env);
std::vector<BoundReport> fidelity_suite(int trials, std::uint64_t seed, const ContextualMDP* env,
                                        const PerturbationSpec* spec = nullptr);
std::vector<BoundReport> complete_fidelity_suite(int trials, std::uint64_t seed,
                                                 const ContextualMDP* env);

// theorem in {"2","3","4","5"}; dispatches to the suite above.
std::vector<BoundReport> run_bound_suite(const std::string& theorem, int trials,
                                         std::uint64_t seed, const ContextualMDP* env);

// CLI entry point. args excludes the program name. Returns the process exit
// code: 0 success, 1 failed bound check, 2 configuration or runtime error.
int run(const std::vector<std::string>& args);

}  // namespace condbisim
