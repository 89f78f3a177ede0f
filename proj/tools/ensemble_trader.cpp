#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ensemble_trader/commands.hpp"
#include "ensemble_trader/synthetic.hpp"

namespace et = ensemble_trader;

namespace {

constexpr int kExitUserError = 2;
constexpr int kExitInternalError = 3;

et::RunConfig resolve_config(const std::string& path, const std::optional<std::uint64_t>& seed,
                             const std::string& out) {
    et::RunConfig config = et::load_run_config(path);
    if (seed) config.seed = *seed;
    if (!out.empty()) config.out_dir = out;
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Walk-forward ensemble of PPO, A2C and DDPG stock trading agents"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;

    auto* ingest = app.add_subcommand("ingest", "Validate and align the bar data, write panel.csv");
    auto* backtest = app.add_subcommand("backtest", "Run the ensemble, single-agent strategies and baselines");
    for (auto* cmd : {ingest, backtest}) {
        cmd->add_option("--config", config_path, "Run configuration (INI)")->required();
        cmd->add_option("--seed", seed, "Override run.seed");
        cmd->add_option("--out", out_dir, "Override run.out");
    }

    auto* report = app.add_subcommand("report", "Print the comparison table and write cumulative_returns.csv");
    std::string run_dir;
    report->add_option("run_dir", run_dir, "Directory written by backtest")->required();

    auto* synth = app.add_subcommand("synth", "Write a seeded synthetic bar file");
    et::SyntheticMarketConfig synth_cfg;
    std::string synth_out;
    synth->add_option("--out", synth_out, "Output CSV")->required();
    synth->add_option("--assets", synth_cfg.assets, "Number of assets")->capture_default_str();
    synth->add_option("--days", synth_cfg.days, "Number of trading days")->capture_default_str();
    synth->add_option("--seed", synth_cfg.seed, "Generator seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUserError;
    }

    try {
        if (*ingest) {
            et::cmd_ingest(resolve_config(config_path, seed, out_dir), std::cout);
        } else if (*backtest) {
            const auto config = resolve_config(config_path, seed, out_dir);
            et::cmd_backtest(config, std::cerr);
            std::cout << "wrote " << config.out_dir.string() << "\n";
            et::cmd_report(config.out_dir, std::cout);
        } else if (*report) {
            et::cmd_report(run_dir, std::cout);
        } else if (*synth) {
            std::ofstream out(synth_out);
            if (!out) throw et::Error(et::ErrorKind::IoError, "cannot write " + synth_out);
            et::write_bars_csv(out, et::make_synthetic_panel(synth_cfg));
        }
    } catch (const et::Error& e) {
        std::cerr << "error (" << et::to_string(e.kind()) << "): " << e.what() << "\n";
        return e.is_user_error() ? kExitUserError : kExitInternalError;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternalError;
    }
    return 0;
}
