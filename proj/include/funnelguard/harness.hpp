#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "funnelguard/controller.hpp"
#include "funnelguard/deepc.hpp"
#include "funnelguard/funnel.hpp"
#include "funnelguard/plant.hpp"
#include "funnelguard/qlearn.hpp"

namespace funnelguard::harness {

enum class Mode { Zoh, CombinedDeepc, CombinedQlearn, CombinedSampledFunnel, CombinedAdversarial };
enum class Adversary { Constant, Random };

[[nodiscard]] std::string to_string(Mode mode);
[[nodiscard]] std::string to_string(Adversary adversary);

struct ExperimentConfig {
    // [plant]
    std::string plant_model = "mass_on_car";
    MassOnCarParams mass_on_car;
    int integrator_dim = 1;
    double y0 = -0.0925;
    /// nullopt: y'(0) = y_ref'(0)
    std::optional<double> ydot0;
    /// Additive force d(t) = amplitude sin(omega t); D = |amplitude|.
    double disturbance_amplitude = 0.0;
    double disturbance_omega = 0.0;

    // [bounds]
    // f_max = 1.37 satisfies f_max <= 1.4 and keeps beta = 27.55 above the gain infimum
    DynamicsBounds bounds{1.37, 0.25, 0.25, 0.0};

    // [funnel]
    FunnelSpec::Family funnel_family = FunnelSpec::Family::Constant;
    double width0 = 0.15;
    double width_inf = 0.15;
    double decay = 0.0;

    // [reference]
    double ref_amplitude = 0.4;
    double ref_omega = 1.5707963267948966;
    double horizon = 1.0;

    // [controller]
    Mode mode = Mode::Zoh;
    double lambda = 0.75;
    std::optional<double> beta;
    std::optional<double> tau;
    double u_max = 10.0;
    double beta_margin = 0.0;
    /// Whether the run must satisfy the sampling/gain certificate.
    bool certified = true;
    Adversary adversary = Adversary::Random;
    int move_blocking = 1;

    deepc::DeepcConfig deepc;
    qlearn::QLearnConfig qlearn;

    // [sim]
    int substeps = 16;
    std::uint64_t seed = 0;
    std::string output;
};

/// Parses the sectioned key = value format; keys absent from the text keep the values of `base`.
/// Errors are ConfigError with the offending "section.key".
[[nodiscard]] ExperimentConfig parse_config(const std::string& text,
                                            const ExperimentConfig& base = {});
[[nodiscard]] ExperimentConfig load_config(const std::string& path,
                                           const ExperimentConfig& base = {});
/// Applies a single "section.key=value" override.
void apply_override(ExperimentConfig& config, const std::string& assignment);
/// Text form accepted by parse_config.
[[nodiscard]] std::string to_text(const ExperimentConfig& config);

[[nodiscard]] std::vector<std::string> preset_names();
[[nodiscard]] ExperimentConfig preset(const std::string& name);
[[nodiscard]] std::string preset_description(const std::string& name);

/// Objects built from a config.
struct Setup {
    PlantModel plant;
    FunnelSpec funnel;
    ReferenceSpec reference;
    Vector x0;
    std::vector<double> e0_norms;  ///< ||e_k(0)||, k = 1 ... r
};

[[nodiscard]] Setup build_setup(const ExperimentConfig& config);

/// Gain, sampling time and the certificate they were checked against.
struct Resolved {
    FeasibilityCertificate certificate;
    double beta = 0.0;
    double tau = 0.0;
    double u_max = 0.0;
    bool beta_auto = false;
    bool tau_auto = false;
    /// Largest admissible tau for the resolved beta and mode.
    double tau_bound = 0.0;
    bool gate_ok = false;
    std::string gate_message;
    bool override_tau = false;
};

[[nodiscard]] Resolved resolve(const ExperimentConfig& config, const Setup& setup,
                               bool override_tau = false);

struct Summary {
    std::vector<double> sup_e;          ///< sup ||e_k|| over dense samples, k = 1 ... r
    double sup_u = 0.0;
    bool violated = false;
    std::optional<double> first_violation_time;
    bool truncated = false;
    std::size_t intervals = 0;
    std::array<double, 4> mode_fraction{};  ///< indexed by ControlMode
    std::size_t zoh_activations = 0;
    std::optional<double> last_zoh_time;
    std::optional<double> pe_time;
    int deepc_solves = 0;
    int deepc_fallbacks = 0;
    std::vector<double> reward_per_second;
    /// max |f| and range of g sampled along the run (mass-on-car only).
    std::optional<double> observed_f_max;
    std::optional<double> observed_g_min;
    std::optional<double> observed_g_max;
};

struct ExperimentResult {
    ExperimentConfig config;
    Resolved resolved;
    Trajectory trajectory;
    Summary summary;
    std::optional<qlearn::QTable> qtable;
};

struct RunOptions {
    bool override_tau = false;
};

/// Resolves auto parameters, applies the certificate gate and runs the closed loop.
[[nodiscard]] ExperimentResult run_experiment(const ExperimentConfig& config,
                                              const RunOptions& options = {});

[[nodiscard]] Summary summarize(const Trajectory& traj, const PlantModel* plant = nullptr);

// CSV persistence.
[[nodiscard]] std::vector<std::string> csv_header(const Trajectory& traj);
void write_csv(const Trajectory& traj, const std::string& path);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> values;  ///< all columns except `mode`
    std::vector<std::string> modes;
};

[[nodiscard]] CsvTable read_csv(const std::string& path);

/// key=value lines describing the resolved run and its summary.
[[nodiscard]] std::string metadata_text(const ExperimentResult& result);

/// Environment variable naming the directory for relative output paths.
inline constexpr const char* kOutputDirEnv = "FUNNELGUARD_OUTPUT_DIR";
[[nodiscard]] std::string resolve_output_path(const std::string& path);

/// Writes the CSV, the `.meta` sidecar and (Q-learning) the `.qtable.csv` table.
void write_outputs(const ExperimentResult& result, const std::string& path);

/// key=value lines of a certificate.
[[nodiscard]] std::string certificate_text(const Resolved& resolved);

inline constexpr int kExitOk = 0;
inline constexpr int kExitViolation = 1;
inline constexpr int kExitConfig = 2;

using SelftestFn = std::function<int(std::ostream&)>;

/// Command-line entry point: certify, simulate, presets, selftest.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err,
             const SelftestFn& selftest = {});

}  // namespace funnelguard::harness
