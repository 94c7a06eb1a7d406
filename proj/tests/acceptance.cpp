// Runs every acceptance criterion at its stated tolerance and prints one
// PASS/FAIL line each. Exit status is non-zero if any criterion fails.

#include "support/checks.hpp"

#include <cstdio>
#include <functional>
#include <string>
#include <vector>

int main()
{
    struct Criterion {
        const char* name;
        std::function<checks::Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {"dag-frontier-oracle", [] { return checks::dag_oracle(1000, 12, 10.0); }},
        {"fixture-recipe-dags", [] { return checks::fixture_recipe_dags(); }},
        {"skill-parser", [] { return checks::skill_parser(10000, 1000); }},
        {"node-validation-sweep", [] { return checks::node_validation_sweep(50); }},
        {"persona-suites", [] { return checks::persona_suites(3); }},
        {"runtime-state-machine", [] { return checks::runtime_state_machine(200); }},
        {"determinism-and-recovery", [] { return checks::determinism_and_recovery(20); }},
        {"fault-attribution", [] { return checks::fault_attribution(500); }},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        checks::Outcome o;
        auto t0 = std::chrono::steady_clock::now();
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("%s %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), checks::seconds_since(t0));
        std::fflush(stdout);
        if (!o.pass) ++failed;
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
