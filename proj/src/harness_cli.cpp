#include <CLI11.hpp>

#include <ostream>

#include "funnelguard/error.hpp"
#include "funnelguard/harness.hpp"

namespace funnelguard::harness {

namespace {

struct Source {
    std::string preset;
    std::string config;
    std::vector<std::string> overrides;
};

void add_source_options(CLI::App* cmd, Source& src) {
    cmd->add_option("--preset", src.preset, "built-in configuration");
    cmd->add_option("--config", src.config, "configuration file");
    cmd->add_option("--set", src.overrides, "override, section.key=value (repeatable)");
}

ExperimentConfig load(const Source& src) {
    ExperimentConfig c = src.preset.empty() ? ExperimentConfig{} : preset(src.preset);
    if (!src.config.empty()) c = load_config(src.config, c);
    for (const auto& o : src.overrides) apply_override(c, o);
    return c;
}

void print_summary(std::ostream& out, const ExperimentResult& r) {
    out.precision(17);
    const auto& s = r.summary;
    out << "beta=" << r.resolved.beta << '\n';
    out << "tau=" << r.resolved.tau << '\n';
    out << "tau_bound=" << r.resolved.tau_bound << '\n';
    if (r.resolved.override_tau) out << "override_tau=true\n";
    for (std::size_t k = 0; k < s.sup_e.size(); ++k) {
        out << "sup_e" << k + 1 << '=' << s.sup_e[k] << '\n';
    }
    out << "sup_u=" << s.sup_u << '\n';
    out << "funnel_violated=" << (s.violated ? "true" : "false") << '\n';
    out << "zoh_activations=" << s.zoh_activations << '\n';
    if (s.pe_time) out << "pe_time=" << *s.pe_time << '\n';
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err,
             const SelftestFn& selftest) {
    CLI::App app{"Sampled-data funnel control with learning-based delegates"};
    app.require_subcommand(1);

    Source cert_src;
    auto* certify = app.add_subcommand("certify", "print the feasibility certificate");
    add_source_options(certify, cert_src);

    Source sim_src;
    std::string out_path;
    bool override_tau = false;
    auto* simulate = app.add_subcommand("simulate", "run a closed-loop experiment");
    add_source_options(simulate, sim_src);
    simulate->add_option("--out", out_path, "CSV output path (default: sim.output)");
    simulate->add_flag("--override-tau", override_tau,
                       "run even if tau exceeds the certified bound");

    std::string show;
    auto* presets_cmd = app.add_subcommand("presets", "list built-in configurations");
    presets_cmd->add_option("--show", show, "print one preset as a config file");

    auto* selftest_cmd = app.add_subcommand("selftest", "run the acceptance checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (certify->parsed()) {
            const ExperimentConfig c = load(cert_src);
            const Setup setup = build_setup(c);
            // certify reports the bound even when the configured tau violates it
            ExperimentConfig relaxed = c;
            relaxed.certified = false;
            out << certificate_text(resolve(relaxed, setup));
            return kExitOk;
        }
        if (simulate->parsed()) {
            ExperimentConfig c = load(sim_src);
            if (!out_path.empty()) c.output = out_path;
            const ExperimentResult r = run_experiment(c, RunOptions{override_tau});
            if (r.resolved.override_tau) {
                err << "warning: tau " << r.resolved.tau << " exceeds the certified bound "
                    << r.resolved.tau_bound << " (--override-tau)\n";
            }
            if (!c.output.empty()) write_outputs(r, resolve_output_path(c.output));
            print_summary(out, r);
            return r.summary.violated ? kExitViolation : kExitOk;
        }
        if (presets_cmd->parsed()) {
            if (!show.empty()) {
                out << to_text(preset(show));
                return kExitOk;
            }
            for (const auto& name : preset_names()) {
                out << name << "  " << preset_description(name) << '\n';
            }
            return kExitOk;
        }
        if (selftest_cmd->parsed()) {
            if (!selftest) {
                err << "selftest is not available in this build\n";
                return kExitConfig;
            }
            return selftest(out) == 0 ? kExitOk : kExitViolation;
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    }
    return kExitConfig;
}

}  // namespace funnelguard::harness
