#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

#include "funnelguard/error.hpp"
#include "funnelguard/harness.hpp"

namespace funnelguard::harness {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_double(const std::string& field, const std::string& v) {
    errno = 0;
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE || !std::isfinite(d)) {
        throw ConfigError(field, "expected a finite number, got '" + v + "'");
    }
    return d;
}

long long parse_int(const std::string& field, const std::string& v) {
    errno = 0;
    char* end = nullptr;
    const long long i = std::strtoll(v.c_str(), &end, 10);
    if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE) {
        throw ConfigError(field, "expected an integer, got '" + v + "'");
    }
    return i;
}

int parse_small_int(const std::string& field, const std::string& v) {
    const long long i = parse_int(field, v);
    if (i < -1000000000LL || i > 1000000000LL) throw ConfigError(field, "integer out of range");
    return static_cast<int>(i);
}

bool parse_bool(const std::string& field, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(field, "expected true or false, got '" + v + "'");
}

std::optional<double> parse_auto(const std::string& field, const std::string& v) {
    if (v == "auto") return std::nullopt;
    return parse_double(field, v);
}

std::string fmt_auto(const std::optional<double>& v) { return v ? fmt(*v) : "auto"; }
std::string fmt_bool(bool b) { return b ? "true" : "false"; }

Mode parse_mode(const std::string& field, const std::string& v) {
    if (v == "zoh") return Mode::Zoh;
    if (v == "combined_deepc") return Mode::CombinedDeepc;
    if (v == "combined_qlearn") return Mode::CombinedQlearn;
    if (v == "combined_sampled_funnel") return Mode::CombinedSampledFunnel;
    if (v == "combined_adversarial") return Mode::CombinedAdversarial;
    throw ConfigError(field, "unknown mode '" + v + "'");
}

struct Field {
    std::string name;  // "section.key"
    std::function<void(ExperimentConfig&, const std::string& field, const std::string& value)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

#define FG_DOUBLE(name, member)                                                                   \
    Field {                                                                                       \
        name, [](ExperimentConfig& c, const std::string& f,                                       \
                 const std::string& v) { c.member = parse_double(f, v); },                        \
            [](const ExperimentConfig& c) { return fmt(c.member); }                               \
    }
#define FG_INT(name, member)                                                                      \
    Field {                                                                                       \
        name, [](ExperimentConfig& c, const std::string& f,                                       \
                 const std::string& v) { c.member = parse_small_int(f, v); },                     \
            [](const ExperimentConfig& c) { return std::to_string(c.member); }                    \
    }
#define FG_BOOL(name, member)                                                                     \
    Field {                                                                                       \
        name, [](ExperimentConfig& c, const std::string& f,                                       \
                 const std::string& v) { c.member = parse_bool(f, v); },                          \
            [](const ExperimentConfig& c) { return fmt_bool(c.member); }                          \
    }
#define FG_AUTO(name, member)                                                                     \
    Field {                                                                                       \
        name, [](ExperimentConfig& c, const std::string& f,                                       \
                 const std::string& v) { c.member = parse_auto(f, v); },                          \
            [](const ExperimentConfig& c) { return fmt_auto(c.member); }                          \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        {"plant.model",
         [](ExperimentConfig& c, const std::string& f, const std::string& v) {
             if (v != "mass_on_car" && v != "integrator") {
                 throw ConfigError(f, "unknown plant model '" + v + "'");
             }
             c.plant_model = v;
         },
         [](const ExperimentConfig& c) { return c.plant_model; }},
        FG_DOUBLE("plant.m1", mass_on_car.m1),
        FG_DOUBLE("plant.m2", mass_on_car.m2),
        FG_DOUBLE("plant.theta", mass_on_car.theta),
        FG_DOUBLE("plant.k", mass_on_car.k),
        FG_DOUBLE("plant.damping", mass_on_car.damping),
        FG_INT("plant.dim", integrator_dim),
        FG_DOUBLE("plant.y0", y0),
        FG_AUTO("plant.ydot0", ydot0),
        FG_DOUBLE("plant.disturbance_amplitude", disturbance_amplitude),
        FG_DOUBLE("plant.disturbance_omega", disturbance_omega),

        FG_DOUBLE("bounds.f_max", bounds.f_max),
        FG_DOUBLE("bounds.g_max", bounds.g_max),
        FG_DOUBLE("bounds.g_min", bounds.g_min),
        FG_DOUBLE("bounds.disturbance", bounds.disturbance),

        {"funnel.family",
         [](ExperimentConfig& c, const std::string& f, const std::string& v) {
             if (v == "constant") {
                 c.funnel_family = FunnelSpec::Family::Constant;
             } else if (v == "exp_shrink") {
                 c.funnel_family = FunnelSpec::Family::ExpShrink;
             } else {
                 throw ConfigError(f, "unknown funnel family '" + v + "'");
             }
         },
         [](const ExperimentConfig& c) {
             return std::string(c.funnel_family == FunnelSpec::Family::Constant ? "constant"
                                                                                : "exp_shrink");
         }},
        FG_DOUBLE("funnel.width", width0),
        FG_DOUBLE("funnel.width_inf", width_inf),
        FG_DOUBLE("funnel.decay", decay),

        FG_DOUBLE("reference.amplitude", ref_amplitude),
        FG_DOUBLE("reference.omega", ref_omega),
        FG_DOUBLE("reference.horizon", horizon),

        {"controller.mode",
         [](ExperimentConfig& c, const std::string& f, const std::string& v) {
             c.mode = parse_mode(f, v);
         },
         [](const ExperimentConfig& c) { return to_string(c.mode); }},
        FG_DOUBLE("controller.lambda", lambda),
        FG_AUTO("controller.beta", beta),
        FG_AUTO("controller.tau", tau),
        FG_DOUBLE("controller.u_max", u_max),
        FG_DOUBLE("controller.beta_margin", beta_margin),
        FG_BOOL("controller.certified", certified),
        {"controller.adversary",
         [](ExperimentConfig& c, const std::string& f, const std::string& v) {
             if (v == "constant") {
                 c.adversary = Adversary::Constant;
             } else if (v == "random") {
                 c.adversary = Adversary::Random;
             } else {
                 throw ConfigError(f, "unknown adversary '" + v + "'");
             }
         },
         [](const ExperimentConfig& c) { return to_string(c.adversary); }},
        FG_INT("controller.move_blocking", move_blocking),

        FG_INT("deepc.horizon", deepc.horizon),
        FG_INT("deepc.past", deepc.past),
        {"deepc.pe_order",
         [](ExperimentConfig& c, const std::string& f, const std::string& v) {
             if (v == "L+n") {
                 c.deepc.pe_order = deepc::PeOrder::LPlusN;
             } else if (v == "L+2n") {
                 c.deepc.pe_order = deepc::PeOrder::LPlus2N;
             } else {
                 throw ConfigError(f, "expected L+n or L+2n, got '" + v + "'");
             }
         },
         [](const ExperimentConfig& c) {
             return std::string(c.deepc.pe_order == deepc::PeOrder::LPlusN ? "L+n" : "L+2n");
         }},
        FG_DOUBLE("deepc.q", deepc.q_weight),
        FG_DOUBLE("deepc.r", deepc.r_weight),
        FG_DOUBLE("deepc.lambda_nu", deepc.lambda_nu),
        {"deepc.lambda_sigma",
         [](ExperimentConfig& c, const std::string& f, const std::string& v) {
             if (v == "off") {
                 c.deepc.lambda_sigma.reset();
             } else if (v == "default") {
                 c.deepc.lambda_sigma = deepc::kDefaultLambdaSigma;
             } else {
                 c.deepc.lambda_sigma = parse_double(f, v);
             }
         },
         [](const ExperimentConfig& c) {
             return c.deepc.lambda_sigma ? fmt(*c.deepc.lambda_sigma) : std::string("off");
         }},
        FG_BOOL("deepc.derivative", deepc.derivative_cost),
        {"deepc.mu",
         [](ExperimentConfig& c, const std::string& f, const std::string& v) {
             c.deepc.mu.clear();
             if (v == "auto") return;
             std::stringstream ss(v);
             std::string item;
             while (std::getline(ss, item, ',')) c.deepc.mu.push_back(parse_double(f, trim(item)));
         },
         [](const ExperimentConfig& c) {
             if (c.deepc.mu.empty()) return std::string("auto");
             std::string s;
             for (std::size_t i = 0; i < c.deepc.mu.size(); ++i) {
                 s += (i ? "," : "") + fmt(c.deepc.mu[i]);
             }
             return s;
         }},
        FG_BOOL("deepc.adaptive_horizon", deepc.adaptive_horizon),
        FG_INT("deepc.min_horizon", deepc.min_horizon),
        FG_INT("deepc.growth_interval", deepc.growth_interval),
        FG_BOOL("deepc.rebuild", deepc.rebuild),
        FG_DOUBLE("deepc.rank_tol", deepc.rank_tol),
        {"deepc.dump_dir",
         [](ExperimentConfig& c, const std::string&, const std::string& v) {
             c.deepc.dump_dir = v;
         },
         [](const ExperimentConfig& c) { return c.deepc.dump_dir; }},
        FG_INT("deepc.qp_max_iter", deepc.qp.max_iter),
        FG_DOUBLE("deepc.qp_eps", deepc.qp.eps_abs),

        FG_INT("qlearn.state_bins", qlearn.state_bins),
        FG_INT("qlearn.action_bins", qlearn.action_bins),
        {"qlearn.alpha",
         [](ExperimentConfig& c, const std::string& f, const std::string& v) {
             c.qlearn.rate = v == "inverse_visits"
                                 ? qlearn::LearningRate::inverse_visits()
                                 : qlearn::LearningRate::constant(parse_double(f, v));
         },
         [](const ExperimentConfig& c) {
             return c.qlearn.rate.kind == qlearn::LearningRate::Kind::InverseVisits
                        ? std::string("inverse_visits")
                        : fmt(c.qlearn.rate.value);
         }},
        FG_DOUBLE("qlearn.gamma", qlearn.gamma),
        FG_DOUBLE("qlearn.eps0", qlearn.epsilon.eps0),
        FG_DOUBLE("qlearn.eps_window", qlearn.epsilon.initial_window),
        FG_DOUBLE("qlearn.eps_decay", qlearn.epsilon.decay),
        FG_DOUBLE("qlearn.eps_period", qlearn.epsilon.period),
        FG_DOUBLE("qlearn.eps_min", qlearn.epsilon.eps_min),
        {"qlearn.alpha_u",
         [](ExperimentConfig& c, const std::string& f, const std::string& v) {
             c.qlearn.alpha_u = v == "auto" ? -1.0 : parse_double(f, v);
             if (c.qlearn.alpha_u < 0.0 && v != "auto") {
                 throw ConfigError(f, "alpha_u must be non-negative");
             }
         },
         [](const ExperimentConfig& c) {
             return c.qlearn.alpha_u < 0.0 ? std::string("auto") : fmt(c.qlearn.alpha_u);
         }},

        FG_INT("sim.substeps", substeps),
        {"sim.seed",
         [](ExperimentConfig& c, const std::string& f, const std::string& v) {
             const long long s = parse_int(f, v);
             if (s < 0) throw ConfigError(f, "seed must be non-negative");
             c.seed = static_cast<std::uint64_t>(s);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
        {"sim.output",
         [](ExperimentConfig& c, const std::string&, const std::string& v) { c.output = v; },
         [](const ExperimentConfig& c) { return c.output; }},
    };
    return table;
}

#undef FG_DOUBLE
#undef FG_INT
#undef FG_BOOL
#undef FG_AUTO

const Field& find_field(const std::string& name) {
    for (const Field& f : fields()) {
        if (f.name == name) return f;
    }
    throw ConfigError(name, "unknown key");
}

}  // namespace

std::string to_string(Mode mode) {
    switch (mode) {
        case Mode::Zoh: return "zoh";
        case Mode::CombinedDeepc: return "combined_deepc";
        case Mode::CombinedQlearn: return "combined_qlearn";
        case Mode::CombinedSampledFunnel: return "combined_sampled_funnel";
        case Mode::CombinedAdversarial: return "combined_adversarial";
    }
    return "unknown";
}

std::string to_string(Adversary adversary) {
    return adversary == Adversary::Constant ? "constant" : "random";
}

ExperimentConfig parse_config(const std::string& text, const ExperimentConfig& base) {
    ExperimentConfig config = base;
    std::stringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError("line " + std::to_string(lineno), "malformed section header");
            }
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno), "expected key = value");
        }
        if (section.empty()) {
            throw ConfigError("line " + std::to_string(lineno), "key outside of a section");
        }
        const std::string name = section + "." + trim(line.substr(0, eq));
        const Field& f = find_field(name);
        f.set(config, name, trim(line.substr(eq + 1)));
    }
    return config;
}

ExperimentConfig load_config(const std::string& path, const ExperimentConfig& base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot read '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), base);
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError(assignment, "override must be section.key=value");
    }
    const std::string name = trim(assignment.substr(0, eq));
    find_field(name).set(config, name, trim(assignment.substr(eq + 1)));
}

std::string to_text(const ExperimentConfig& config) {
    std::string out;
    std::string section;
    for (const Field& f : fields()) {
        const auto dot = f.name.find('.');
        const std::string sec = f.name.substr(0, dot);
        if (sec != section) {
            out += (section.empty() ? "[" : "\n[") + sec + "]\n";
            section = sec;
        }
        out += f.name.substr(dot + 1) + " = " + f.get(config) + "\n";
    }
    return out;
}

namespace {

struct PresetEntry {
    std::string name;
    std::string description;
    std::function<ExperimentConfig()> make;
};

const std::vector<PresetEntry>& presets() {
    static const std::vector<PresetEntry> table = {
        {"zoh-sec4", "mass-on-car, ZoH law, tau = 4.8e-3, beta = 27.55, 1 s",
         [] {
             ExperimentConfig c;
             c.tau = 4.8e-3;
             c.beta = 27.55;
             return c;
         }},
        {"zoh-sec4-relaxed", "mass-on-car, ZoH law beyond the certificate: tau = 2e-2, beta = 4",
         [] {
             ExperimentConfig c;
             c.tau = 2e-2;
             c.beta = 4.0;
             c.certified = false;
             return c;
         }},
        {"deepc-sec51", "combined law with DeePC (L = 20, sigma waived), u_max = 10, 1 s",
         [] {
             ExperimentConfig c;
             c.mode = Mode::CombinedDeepc;
             return c;
         }},
        {"deepc-sec51-derivative",
         "combined law with derivative-weighted DeePC cost and a growing horizon",
         [] {
             ExperimentConfig c;
             c.mode = Mode::CombinedDeepc;
             c.deepc.derivative_cost = true;
             c.deepc.adaptive_horizon = true;
             // one horizon step per 8 samples; growing as fast as the data allows lets the
             // full horizon act while the initial error is still large
             c.deepc.growth_interval = 8;
             return c;
         }},
        {"rl-sec52", "combined law with tabular Q-learning, y_ref = 0.4 sin(pi t / 4), 20 s",
         [] {
             ExperimentConfig c;
             c.mode = Mode::CombinedQlearn;
             c.ref_omega = std::numbers::pi / 4.0;
             c.horizon = 20.0;
             // below the certified bound; finer sampling lets the coarse e_r grid resolve the
             // corrective actions near the threshold
             c.tau = 1e-3;
             return c;
         }},
        {"sampled-funnel", "combined law with the sample-and-hold funnel delegate",
         [] {
             ExperimentConfig c;
             c.mode = Mode::CombinedSampledFunnel;
             c.u_max = sampled_funnel_u_max(c.lambda);
             return c;
         }},
        {"adversarial-constant", "combined law with a delegate that always outputs +u_max",
         [] {
             ExperimentConfig c;
             c.mode = Mode::CombinedAdversarial;
             c.adversary = Adversary::Constant;
             return c;
         }},
        {"adversarial-random", "combined law with a delegate drawing +-u_max at random",
         [] {
             ExperimentConfig c;
             c.mode = Mode::CombinedAdversarial;
             c.adversary = Adversary::Random;
             return c;
         }},
    };
    return table;
}

}  // namespace

std::vector<std::string> preset_names() {
    std::vector<std::string> names;
    for (const auto& p : presets()) names.push_back(p.name);
    return names;
}

ExperimentConfig preset(const std::string& name) {
    for (const auto& p : presets()) {
        if (p.name == name) return p.make();
    }
    throw ConfigError("preset", "unknown preset '" + name + "'");
}

std::string preset_description(const std::string& name) {
    for (const auto& p : presets()) {
        if (p.name == name) return p.description;
    }
    throw ConfigError("preset", "unknown preset '" + name + "'");
}

}  // namespace funnelguard::harness
