#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <fstream>
#include <sstream>

#include "funnelguard/error.hpp"
#include "funnelguard/harness.hpp"

namespace funnelguard::harness {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string opt(const std::optional<double>& v) { return v ? fmt(*v) : "none"; }

void ensure_parent(const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(parent, ec);
    }
}

}  // namespace

std::vector<std::string> csv_header(const Trajectory& traj) {
    const int m = traj.output_dim;
    const int r = traj.relative_degree;
    std::vector<std::string> h{"t"};
    auto indexed = [&](const std::string& base) {
        if (m == 1) {
            h.push_back(base);
        } else {
            for (int i = 1; i <= m; ++i) h.push_back(base + "_" + std::to_string(i));
        }
    };
    indexed("y");
    indexed("y_ref");
    indexed("e");
    h.push_back("width");
    for (int k = 1; k < r; ++k) {
        if (m == 1) {
            h.push_back("e" + std::to_string(k));
        } else {
            h.push_back("e" + std::to_string(k) + "_norm");
        }
    }
    h.push_back("e" + std::to_string(r) + "_norm");
    if (traj.input_dim == 1) {
        h.push_back("u");
    } else {
        for (int i = 1; i <= traj.input_dim; ++i) h.push_back("u_" + std::to_string(i));
    }
    h.push_back("mode");
    return h;
}

void write_csv(const Trajectory& traj, const std::string& path) {
    ensure_parent(path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
    const auto header = csv_header(traj);
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << '\n';
    const int m = traj.output_dim;
    const int r = traj.relative_degree;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const auto& d : traj.dense) {
        std::string row = fmt(d.t);
        auto add = [&row](double v) { row += "," + fmt(v); };
        const Vector& y = d.chi.front();
        for (int i = 0; i < m; ++i) add(y[i]);
        for (int i = 0; i < m; ++i) add(d.y_ref[i]);
        for (int i = 0; i < m; ++i) add(y[i] - d.y_ref[i]);
        add(d.width);
        for (int k = 0; k + 1 < r; ++k) {
            const auto ku = static_cast<std::size_t>(k);
            if (m == 1) {
                add(ku < d.e.size() ? d.e[ku][0] : nan);
            } else {
                add(d.e_norms[ku]);
            }
        }
        add(d.e_norms.back());
        for (Eigen::Index i = 0; i < d.u.size(); ++i) add(d.u[i]);
        row += ",";
        row += to_string(d.mode);
        out << row << '\n';
    }
    if (!out) throw Error(ErrorCode::Io, "failed writing '" + path + "'");
}

CsvTable read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot read '" + path + "'");
    CsvTable table;
    std::string line;
    if (!std::getline(in, line)) return table;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) table.header.push_back(cell);
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != table.header.size()) {
            throw Error(ErrorCode::Io, "row with " + std::to_string(cells.size()) +
                                           " cells, header has " +
                                           std::to_string(table.header.size()));
        }
        std::vector<double> values;
        for (std::size_t i = 0; i + 1 < cells.size(); ++i) {
            errno = 0;
            char* end = nullptr;
            const double v = std::strtod(cells[i].c_str(), &end);
            if (end != cells[i].c_str() + cells[i].size()) {
                throw Error(ErrorCode::Io, "malformed number '" + cells[i] + "'");
            }
            values.push_back(v);
        }
        table.values.push_back(std::move(values));
        table.modes.push_back(cells.back());
    }
    return table;
}

std::string certificate_text(const Resolved& r) {
    const auto& c = r.certificate;
    std::string s;
    auto kv = [&s](const std::string& k, const std::string& v) { s += k + "=" + v + "\n"; };
    for (std::size_t k = 0; k < c.eps.size(); ++k) {
        const std::string i = std::to_string(k + 1);
        kv("eps_" + i, fmt(c.eps[k]));
        kv("mu_" + i, fmt(c.mu[k]));
        kv("gamma_bar_" + i, fmt(c.gamma_bar[k]));
    }
    kv("kappa0", fmt(c.kappa0));
    kv("beta", fmt(c.beta));
    kv("beta_infimum", fmt(beta_infimum(c)));
    kv("kappa1", fmt(c.kappa1));
    kv("tau_max", fmt(c.tau_max));
    kv("lambda", fmt(c.lambda));
    kv("u_sup_bound", fmt(c.u_sup_bound));
    kv("u_max", fmt(c.u_max));
    kv("kappa0_combined", fmt(c.kappa0_combined));
    kv("beta_combined", fmt(c.beta_combined));
    kv("kappa1_combined", fmt(c.kappa1_combined));
    kv("tau_max_combined", fmt(c.tau_max_combined));
    kv("tau_max_combined_fixed_gain", fmt(c.tau_max_combined_fixed_gain));
    kv("phi_inf", fmt(c.phi_inf));
    kv("phi_sup", fmt(c.phi_sup));
    kv("g_min", fmt(c.g_min));
    kv("g_max", fmt(c.g_max));
    kv("configured_beta", fmt(r.beta));
    kv("configured_tau", fmt(r.tau));
    kv("tau_bound", fmt(r.tau_bound));
    kv("gate_ok", r.gate_ok ? "true" : "false");
    return s;
}

std::string metadata_text(const ExperimentResult& result) {
    std::string s;
    auto kv = [&s](const std::string& k, const std::string& v) { s += k + "=" + v + "\n"; };
    {
        std::stringstream ss(to_text(result.config));
        std::string line;
        std::string section;
        while (std::getline(ss, line)) {
            if (line.empty()) continue;
            if (line.front() == '[') {
                section = line.substr(1, line.size() - 2);
                continue;
            }
            const auto eq = line.find(" = ");
            kv("config." + section + "." + line.substr(0, eq), line.substr(eq + 3));
        }
    }
    const auto& r = result.resolved;
    kv("resolved.beta", fmt(r.beta));
    kv("resolved.beta_auto", r.beta_auto ? "true" : "false");
    kv("resolved.tau", fmt(r.tau));
    kv("resolved.tau_auto", r.tau_auto ? "true" : "false");
    kv("resolved.tau_bound", fmt(r.tau_bound));
    kv("resolved.gate_ok", r.gate_ok ? "true" : "false");
    kv("resolved.override_tau", r.override_tau ? "true" : "false");
    {
        std::stringstream ss(certificate_text(r));
        std::string line;
        while (std::getline(ss, line)) {
            if (!line.empty()) s += "certificate." + line + "\n";
        }
    }
    const auto& sm = result.summary;
    for (std::size_t k = 0; k < sm.sup_e.size(); ++k) {
        kv("summary.sup_e" + std::to_string(k + 1), fmt(sm.sup_e[k]));
    }
    kv("summary.sup_u", fmt(sm.sup_u));
    kv("summary.funnel_violated", sm.violated ? "true" : "false");
    kv("summary.first_violation_time", opt(sm.first_violation_time));
    kv("summary.truncated", sm.truncated ? "true" : "false");
    kv("summary.intervals", std::to_string(sm.intervals));
    for (std::size_t i = 0; i < sm.mode_fraction.size(); ++i) {
        kv("summary.fraction_" + std::string(to_string(static_cast<ControlMode>(i))),
           fmt(sm.mode_fraction[i]));
    }
    kv("summary.zoh_activations", std::to_string(sm.zoh_activations));
    kv("summary.last_zoh_time", opt(sm.last_zoh_time));
    kv("summary.pe_time", opt(sm.pe_time));
    kv("summary.deepc_solves", std::to_string(sm.deepc_solves));
    kv("summary.deepc_fallbacks", std::to_string(sm.deepc_fallbacks));
    for (std::size_t i = 0; i < sm.reward_per_second.size(); ++i) {
        kv("summary.reward_second_" + std::to_string(i), fmt(sm.reward_per_second[i]));
    }
    kv("summary.observed_f_max", opt(sm.observed_f_max));
    kv("summary.observed_g_min", opt(sm.observed_g_min));
    kv("summary.observed_g_max", opt(sm.observed_g_max));
    return s;
}

std::string resolve_output_path(const std::string& path) {
    const std::filesystem::path p(path);
    if (p.is_absolute()) return path;
    const char* dir = std::getenv(kOutputDirEnv);
    if (dir == nullptr || *dir == '\0') return path;
    return (std::filesystem::path(dir) / p).string();
}

void write_outputs(const ExperimentResult& result, const std::string& path) {
    write_csv(result.trajectory, path);
    {
        std::ofstream meta(path + ".meta", std::ios::binary);
        if (!meta) throw Error(ErrorCode::Io, "cannot write '" + path + ".meta'");
        meta << metadata_text(result);
    }
    if (result.qtable) result.qtable->write_csv(path + ".qtable.csv");
}

}  // namespace funnelguard::harness
