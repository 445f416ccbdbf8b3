#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "sbacore/harness.hpp"

using namespace sbacore;

namespace {

// SBACORE_CLOCK=virtual|wall and SBACORE_LOG=full|quiet|debug adjust the loaded scenario.
void apply_env(Scenario& s) {
    if (const char* clock = std::getenv("SBACORE_CLOCK"); clock && *clock) {
        s.core.clock = clock_mode_from_string(clock);
    }
    if (const char* level = std::getenv("SBACORE_LOG"); level && *level) {
        std::string v(level);
        if (v == "quiet") {
            s.core.logs.routing = false;
            s.core.logs.events = false;
        } else if (v == "debug") {
            s.core.logs = LogFlags{true, true, true, true};
        } else if (v == "full") {
            s.core.logs = LogFlags{};
        } else {
            throw ConfigError("SBACORE_LOG must be quiet, full or debug");
        }
    }
}

int print_checks(const std::vector<CheckResult>& results) {
    int failed = 0;
    for (const auto& r : results) {
        std::cout << fmt::format("{} {} examined={} violations={}\n", r.ok() ? "PASS" : "FAIL", r.name, r.examined,
                                 r.violations);
        for (const auto& l : r.excerpt) std::cout << "  " << l << "\n";
        failed += r.ok() ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Desk-scale service-based mobile core: run scenarios and inspect result bundles"};
    app.require_subcommand(1);

    std::string scenario_path, out_dir = "bundle", clock;
    std::optional<std::uint64_t> seed;
    std::optional<double> duration_s;
    bool no_check = false;
    auto* run = app.add_subcommand("run", "Run a scenario and write its result bundle");
    run->add_option("--scenario", scenario_path, "Scenario file (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("--seed", seed, "Override the scenario seed");
    run->add_option("--out", out_dir, "Bundle directory");
    run->add_option("--clock", clock, "Override the clock mode")->check(CLI::IsMember({"virtual", "wall"}));
    run->add_option("--duration-s", duration_s, "Override the scenario duration in seconds");
    run->add_flag("--no-check", no_check, "Skip the post-run invariant checks");

    std::string bundle_dir;
    double from = 0.0;
    auto* summarize_cmd = app.add_subcommand("summarize", "Print the summary table of a bundle as CSV");
    summarize_cmd->add_option("--bundle", bundle_dir, "Bundle directory")->required();
    summarize_cmd->add_option("--from", from, "Only episodes starting after this fraction of the run")
        ->check(CLI::Range(0.0, 1.0));

    std::vector<std::string> bundle_dirs;
    std::string metric = "p50";
    auto* compare_cmd = app.add_subcommand("compare", "Ratios of a metric against the first bundle");
    compare_cmd->add_option("--bundles", bundle_dirs, "Bundle directories")->required()->expected(2, -1);
    compare_cmd->add_option("--metric", metric, "p50, p95, p99, mean, store_ops, warm_store_ops or aborts");
    compare_cmd->add_option("--from", from, "Only episodes starting after this fraction of the run")
        ->check(CLI::Range(0.0, 1.0));

    auto* check_cmd = app.add_subcommand("check", "Run the invariant checks over a bundle");
    check_cmd->add_option("--bundle", bundle_dir, "Bundle directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            auto s = Scenario::load(scenario_path);
            apply_env(s);
            if (seed) {
                s.seed = *seed;
                s.core.seed = *seed;
                s.workload.seed = *seed;
            }
            if (!clock.empty()) s.core.clock = clock_mode_from_string(clock);
            if (duration_s) s.duration = Micros(static_cast<std::int64_t>(*duration_s * 1e6));
            auto bundle = run_scenario(s);
            bundle.write(out_dir);
            std::cerr << fmt::format("wrote {} ({} latency records, end {:.3f}s)\n", out_dir, bundle.latency.size(),
                                     static_cast<double>(bundle.stats.end.count()) / 1e6);
            if (no_check) return 0;
            return print_checks(check_bundle(bundle));
        }
        if (*summarize_cmd) {
            std::cout << summarize(Bundle::load(bundle_dir), from).to_csv();
            return 0;
        }
        if (*compare_cmd) {
            std::vector<Bundle> bundles;
            for (const auto& d : bundle_dirs) bundles.push_back(Bundle::load(d));
            std::vector<const Bundle*> ptrs;
            for (const auto& b : bundles) ptrs.push_back(&b);
            std::cout << ratio_csv(compare(ptrs, metric, from), metric);
            return 0;
        }
        if (*check_cmd) return print_checks(check_bundle(Bundle::load(bundle_dir)));
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
