#include "entropy/core/error.hpp"
#include "entropy/sim/replay.hpp"
#include "entropy/sim/scenario.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

using namespace entropy;

namespace {

constexpr int kOk = 0;
constexpr int kPartial = 1;
constexpr int kInvalid = 2;

int run_generate(const std::string& spec_path, const std::string& out_dir) {
    std::ifstream in(spec_path);
    if (!in) {
        std::cerr << "cannot read spec " << spec_path << "\n";
        return kInvalid;
    }
    json spec_json;
    try {
        spec_json = json::parse(in);
    } catch (const json::exception& e) {
        std::cerr << "spec is not JSON: " << e.what() << "\n";
        return kInvalid;
    }
    const auto bundle = sim::generate(sim::scenario_from_json(spec_json));
    sim::write_bundle(bundle, out_dir);
    std::cout << json{{"out", out_dir},
                      {"samples", bundle.truth.samples},
                      {"outliers", bundle.truth.outliers.size()},
                      {"crossings", bundle.truth.crossings.size()},
                      {"firings", bundle.truth.firings.size()}}
                     .dump()
              << "\n";
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic sensor fleet: generate scenario bundles and replay them against the platform"};
    app.require_subcommand(1);

    std::string spec_path, out_dir;
    auto* gen = app.add_subcommand("generate", "write a deterministic scenario bundle");
    gen->add_option("--spec", spec_path, "scenario spec (JSON)")->required();
    gen->add_option("--out", out_dir, "bundle directory")->required();

    std::string bundle_dir, url, token, speed = "max";
    std::size_t batch = 500;
    int retries = 5;
    bool feedback = false;
    auto* rep = app.add_subcommand("replay", "post a bundle to a running platform");
    rep->add_option("--bundle", bundle_dir, "bundle directory")->required();
    rep->add_option("--url", url, "platform base url, e.g. http://127.0.0.1:8080")->required();
    rep->add_option("--speed", speed, "simulated seconds per wall second, or max")->capture_default_str();
    rep->add_option("--token", token, "bearer token")->envname("ENTROPY_TOKEN");
    rep->add_option("--batch", batch, "measurements per request")->capture_default_str();
    rep->add_option("--retries", retries, "retries per request before giving up")->capture_default_str();
    rep->add_flag("--feedback", feedback, "answer delivered recommendations after the trace");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kInvalid;
    }

    try {
        if (*gen) return run_generate(spec_path, out_dir);

        const auto bundle = sim::read_bundle(bundle_dir);
        sim::ReplayOptions opts;
        opts.url = url;
        opts.token = token;
        opts.batch_size = batch;
        opts.max_retries = retries;
        if (speed != "max") {
            try {
                opts.speed = std::stod(speed);
            } catch (const std::logic_error&) {
                std::cerr << "speed must be a number or max\n";
                return kInvalid;
            }
        }
        const auto report = sim::replay(bundle, opts);
        json out = sim::to_json(report);
        out["bundle_samples"] = bundle.trace.size();
        if (feedback && !report.failure) out["feedback"] = sim::to_json(sim::respond(bundle, opts));
        std::cout << out.dump() << "\n";
        return report.complete(bundle) ? kOk : kPartial;
    } catch (const Error& e) {
        std::cerr << to_string(e.code()) << ": " << e.what() << "\n";
        return e.code() == ErrorCode::InvalidSpec ? kInvalid : kPartial;
    }
}
