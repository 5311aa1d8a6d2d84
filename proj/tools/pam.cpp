// Command-line front end. Every experiment subcommand reads a config file,
// applies flag overrides, validates, and runs into the output directory.
//
// Exit codes: 0 success, 1 invalid input, 2 runtime failure, 3 run aborted
// (output directory left with its INCOMPLETE marker).

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pam/orchestrator.hpp"

namespace {

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> workers;
    std::optional<std::string> out;
    std::vector<std::string> overrides;
    bool quiet = false;
};

void add_flags(CLI::App* sub, Flags& f, bool config_required) {
    auto* c = sub->add_option("-c,--config", f.config, "Experiment config (key = value sections or JSON)");
    if (config_required) c->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "Master seed (overrides run.master_seed)");
    sub->add_option("--workers", f.workers, "Worker threads (overrides run.workers and PAM_WORKERS)")
        ->check(CLI::PositiveNumber);
    sub->add_option("--out", f.out, "Output directory (overrides run.out)");
    sub->add_option("--set", f.overrides, "Override a config value: section.key=value")->take_all();
    sub->add_flag("-q,--quiet", f.quiet, "Print nothing on success");
}

pam::json build_doc(const Flags& f, const std::string& kind) {
    pam::json doc = f.config.empty() ? pam::json::object() : pam::config::load(f.config);
    if (pam::config::has(doc, "run.kind")) {
        const std::string k = pam::config::get_string(doc, "run.kind");
        if (!kind.empty() && k != kind)
            throw pam::ValidationError("run.kind: config is for '" + k + "', subcommand is '" + kind + "'");
    } else if (!kind.empty()) {
        pam::config::ensure(doc, "run.kind") = kind;
    }
    for (const auto& o : f.overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos || eq == 0) throw pam::ValidationError("--set: expected section.key=value, got '" + o + "'");
        pam::config::ensure(doc, o.substr(0, eq)) = pam::config::detail::value(o.substr(eq + 1));
    }
    if (f.seed) pam::config::ensure(doc, "run.master_seed") = *f.seed;
    if (f.workers) pam::config::ensure(doc, "run.workers") = *f.workers;
    if (f.out) pam::config::ensure(doc, "run.out") = *f.out;
    return doc;
}

void print_diagnostics(const pam::Diagnostics& d) {
    for (const auto& e : d.errors) std::cerr << "error: " << e.key << ": " << e.rule << "\n";
    for (const auto& w : d.warnings) std::cerr << "warning: " << w.key << ": " << w.rule << "\n";
}

int run_experiment(const Flags& f, const std::string& kind) {
    const pam::json doc = build_doc(f, kind);
    const auto diag = pam::validate_config(doc);
    print_diagnostics(diag);
    if (!diag.ok()) return 1;
    const auto cfg = pam::make_config(doc);
    const auto rep = pam::run(cfg);
    if (!f.quiet) {
        const auto& runs = rep.manifest["runs"];
        std::cout << cfg.kind << ": wrote " << rep.out.string() << " (config " << cfg.hash() << ", "
                  << runs["ok"].get<std::uint64_t>() << " ok, " << runs["diverged"].get<std::uint64_t>()
                  << " diverged)\n";
        std::ifstream s(rep.out / "summary.json");
        if (s) std::cout << s.rdbuf();
    }
    return 0;
}

int validate_only(const Flags& f) {
    const pam::json doc = build_doc(f, "");
    const auto diag = pam::validate_config(doc);
    print_diagnostics(diag);
    if (!diag.ok()) return 1;
    if (!f.quiet) std::cout << "ok (config " << pam::make_config(doc).hash() << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Parabolic Anderson model experiments"};
    app.set_version_flag("--version", pam::kToolVersion);
    app.require_subcommand(1);

    std::vector<std::pair<CLI::App*, std::string>> subs;
    Flags flags;
    const std::vector<std::pair<std::string, std::string>> kinds{
        {"simulate", "Solve the equation and write trajectory checkpoints"},
        {"valleys", "Extract valley sets from a trajectory"},
        {"stretch", "Apply the exponential time stretch to a set file"},
        {"dim", "Estimate the macroscopic Hausdorff dimension of a set"},
        {"tails", "Estimate tail probabilities of a solution functional"},
        {"moments", "Estimate moment Lyapunov exponents"},
        {"convtest", "Compare a solution with its two-step convolution in law"},
        {"fkg", "Check positive association of two interval events"},
        {"proxy", "Compare full and window-truncated solutions"},
        {"xi-gen", "Write a synthetic reference set"}};
    for (const auto& [name, help] : kinds) {
        auto* s = app.add_subcommand(name, help);
        add_flags(s, flags, true);
        subs.emplace_back(s, name);
    }
    auto* val = app.add_subcommand("validate", "Check a config and list every violated rule");
    add_flags(val, flags, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (val->parsed()) return validate_only(flags);
        for (const auto& [s, name] : subs)
            if (s->parsed()) return run_experiment(flags, name);
        return 1;
    } catch (const pam::RunAborted& e) {
        std::cerr << "aborted: " << e.what() << "\n";
        return 3;
    } catch (const pam::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const pam::FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "failed: " << e.what() << "\n";
        return 2;
    }
}
