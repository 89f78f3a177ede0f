#pragma once

// ingest, backtest and report: the work behind the command-line tool.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ensemble_trader/config.hpp"
#include "ensemble_trader/ensemble.hpp"
#include "ensemble_trader/evaluation.hpp"
#include "ensemble_trader/market_data.hpp"
#include "ensemble_trader/synthetic.hpp"

namespace ensemble_trader {

namespace fs = std::filesystem;

inline const std::vector<std::string> kComparisonColumns = {"cumulative_return", "annual_return", "annual_volatility",
                                                            "sharpe", "max_drawdown"};

namespace detail {

inline std::ofstream open_output(const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
    return out;
}

inline std::string fmt_real(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

inline std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

inline std::vector<std::string> split(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, delim)) out.push_back(trim(field));
    if (!line.empty() && line.back() == delim) out.emplace_back();
    return out;
}

}  // namespace detail

inline LoadResult load_panel_file(const fs::path& path, const BarSchema& schema, const LoadOptions& options) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open data file " + path.string());
    return load_bars(in, schema, options);
}

inline void write_rejections(const fs::path& path, const LoadResult& loaded) {
    auto out = detail::open_output(path);
    out << "line,reason\n";
    for (const auto& r : loaded.rejected) out << r.line << ",\"" << r.reason << "\"\n";
}

/// date,value CSV (header optional).
inline std::map<std::chrono::sys_days, double> load_index_series(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open index file " + path.string());
    std::map<std::chrono::sys_days, double> series;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto fields = detail::split(detail::trim(line), ',');
        if (fields.size() < 2) continue;
        const auto date = parse_iso_date(fields[0]);
        if (!date) {
            if (line_no == 1) continue;
            throw Error(ErrorKind::InputInvalid, path.string() + ":" + std::to_string(line_no) + ": bad date");
        }
        series[std::chrono::sys_days{*date}] = detail::parse_value<double>("index value", fields[1]);
    }
    return series;
}

inline void write_equity_curve(const fs::path& path, const EquityCurve& curve) {
    auto out = detail::open_output(path);
    out << "date,value\n";
    char buf[64];
    for (std::size_t i = 0; i < curve.size(); ++i) {
        std::snprintf(buf, sizeof buf, ",%.10f\n", curve.values[i]);
        out << format_iso_date(curve.dates[i]) << buf;
    }
}

inline void write_trades(const fs::path& path, const std::vector<TradeRecord>& trades) {
    auto out = detail::open_output(path);
    out << "date,asset,side,shares,price,cost\n";
    for (const auto& t : trades) {
        out << format_iso_date(t.date) << ',' << t.asset << ',' << (t.side == 'B' ? "buy" : "sell") << ',' << t.shares
            << ',' << detail::fmt_real(t.price) << ',' << detail::fmt_real(t.cost) << '\n';
    }
}

inline void write_trace(const fs::path& path, const std::vector<QuarterDecision>& decisions, const WindowPlan& plan) {
    auto out = detail::open_output(path);
    out << "window,train_start,train_end,validation_start,validation_end,trade_start,trade_end,"
           "sharpe_ppo,sharpe_a2c,sharpe_ddpg,picked,turbulence_threshold\n";
    for (const auto& d : decisions) {
        out << d.window_id;
        for (const Interval iv : {d.window.train, d.window.validation, d.window.trade}) {
            out << ',' << format_iso_date(plan.date(iv.first)) << ',' << format_iso_date(plan.date(iv.last));
        }
        for (auto kind : kAllAgentKinds) {
            const auto& s = d.validation_sharpe.at(kind);
            out << ',' << (s ? detail::fmt_real(*s) : std::string("undefined"));
        }
        out << ',' << to_string(d.picked) << ','
            << (std::isfinite(d.turbulence_threshold) ? detail::fmt_real(d.turbulence_threshold) : std::string("inf"))
            << '\n';
    }
}

using ComparisonRow = std::pair<std::string, MetricsReport>;

inline void write_comparison(const fs::path& path, const std::vector<ComparisonRow>& rows) {
    auto out = detail::open_output(path);
    out << "strategy";
    for (const auto& c : kComparisonColumns) out << ',' << c;
    out << '\n';
    for (const auto& [name, m] : rows) {
        out << name << ',' << detail::fmt_real(m.cumulative_return) << ',' << detail::fmt_real(m.annual_return) << ','
            << detail::fmt_real(m.annual_volatility) << ','
            << (m.sharpe ? detail::fmt_real(*m.sharpe) : std::string("undefined")) << ','
            << detail::fmt_real(m.max_drawdown) << '\n';
    }
}

/// Fixed-width table of strategy rows against the five metrics.
inline std::string render_table(const std::vector<std::string>& strategies,
                                const std::vector<std::vector<std::string>>& cells) {
    std::ostringstream out;
    out << std::left << std::setw(20) << "metric";
    for (const auto& s : strategies) out << std::right << std::setw(14) << s;
    out << '\n';
    for (std::size_t m = 0; m < kComparisonColumns.size(); ++m) {
        out << std::left << std::setw(20) << kComparisonColumns[m];
        for (const auto& row : cells) out << std::right << std::setw(14) << row.at(m);
        out << '\n';
    }
    return out.str();
}

inline std::string percent_cell(const std::string& text, bool percent) {
    if (text == "undefined") return "n/a";
    char buf[32];
    const double v = std::stod(text);
    if (percent) {
        std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
    } else {
        std::snprintf(buf, sizeof buf, "%.3f", v);
    }
    return buf;
}

/// Validates the data file and writes the aligned panel plus rejected rows.
inline void cmd_ingest(const RunConfig& config, std::ostream& log) {
    const LoadResult loaded = load_panel_file(config.data_path, config.schema, config.load);
    fs::create_directories(config.out_dir);
    {
        auto out = detail::open_output(config.out_dir / "panel.csv");
        write_bars_csv(out, loaded.panel);
    }
    write_rejections(config.out_dir / "rejected_rows.csv", loaded);
    log << "read " << loaded.rows_read << " rows, rejected " << loaded.rejected.size() << ", "
        << loaded.panel.num_assets() << " assets x " << loaded.panel.num_dates() << " dates";
    if (!loaded.dropped_dates.empty()) log << ", " << loaded.dropped_dates.size() << " dates dropped by alignment";
    log << "\nwrote " << (config.out_dir / "panel.csv").string() << "\n";
}

struct BacktestOutputs {
    std::vector<ComparisonRow> comparison;
    std::vector<QuarterDecision> decisions;
    std::optional<std::string> failure;
};

/// Ensemble, the three single-agent strategies and both baselines over the
/// out-of-sample period. Outputs are written even when a window fails.
inline BacktestOutputs cmd_backtest(const RunConfig& config, std::ostream& log) {
    const LoadResult loaded = load_panel_file(config.data_path, config.schema, config.load);
    const fs::path out_dir = config.out_dir;
    fs::create_directories(out_dir / "checkpoints");
    {
        auto snap = detail::open_output(out_dir / "run_config.ini");
        write_run_config(snap, config);
    }
    write_rejections(out_dir / "rejected_rows.csv", loaded);
    auto run_log = detail::open_output(out_dir / "run.log");
    auto say = [&](const std::string& msg) {
        log << msg << '\n';
        run_log << msg << '\n';
    };
    say("data: " + std::to_string(loaded.panel.num_assets()) + " assets, " + std::to_string(loaded.panel.num_dates()) +
        " dates, " + std::to_string(loaded.rejected.size()) + " rejected rows");

    auto panel = std::make_shared<const PricePanel>(loaded.panel);
    const MarketContext market = make_market_context(panel, config.indicators, config.turbulence);
    const WindowPlan plan =
        build_window_plan(*panel, config.in_sample_end_date(), config.validation_months, config.trade_months);
    say("plan: " + std::to_string(plan.windows.size()) + " quarters");

    WalkForwardConfig wf;
    wf.env = config.env;
    wf.agents = config.agents;
    wf.turbulence = config.turbulence;
    wf.seed = config.seed;
    wf.rf_annual = config.rf_annual;
    wf.parallel_training = config.parallel_training;
    wf.warm_start = config.warm_start;

    auto train_log = detail::open_output(out_dir / "train_log.csv");
    train_log << "window,agent,steps,actor_objective,critic_loss,episode_reward\n";
    auto on_trained = [&](const WindowTriple& win, const std::map<AgentKind, TrainedAgent>& agents) {
        for (const auto& [kind, agent] : agents) {
            const std::string name = detail::lower(std::string(to_string(kind)));
            auto ckpt = detail::open_output(out_dir / "checkpoints" / ("w" + std::to_string(win.id) + "_" + name + ".ckpt"));
            save_agent(ckpt, agent);
            for (const auto& e : agent.log) {
                train_log << win.id << ',' << name << ',' << e.step << ',' << detail::fmt_real(e.actor_objective) << ','
                          << detail::fmt_real(e.critic_loss) << ','
                          << (std::isnan(e.episode_return) ? std::string() : detail::fmt_real(e.episode_return)) << '\n';
            }
        }
    };
    WalkForwardResult result = run_walk_forward(market, plan, wf, default_trainer(), on_trained, say);

    BacktestOutputs outputs;
    outputs.failure = result.failure;
    outputs.decisions = result.trace.decisions;
    write_trace(out_dir / "trace.csv", result.trace.decisions, plan);

    std::vector<std::pair<std::string, const StrategyRun*>> runs{{"ensemble", &result.trace.ensemble}};
    for (auto& [kind, run] : result.single_agents) runs.emplace_back(detail::lower(std::string(to_string(kind))), &run);
    for (const auto& [name, run] : runs) {
        write_equity_curve(out_dir / ("equity_" + name + ".csv"), run->curve);
        write_trades(out_dir / ("trades_" + name + ".csv"), run->trades);
        if (run->curve.size() > 0) outputs.comparison.emplace_back(name, compute_metrics(run->curve.values, config.rf_annual));
    }

    const Interval span = plan.out_of_sample();
    const BaselineResult minvar = run_min_variance_baseline(*panel, span, config.baseline.lookback,
                                                            config.env.initial_balance, config.env.fee_rate,
                                                            config.baseline.ridge);
    write_equity_curve(out_dir / "equity_min_variance.csv", minvar.curve);
    outputs.comparison.emplace_back("min_variance", compute_metrics(minvar.curve.values, config.rf_annual));
    const EquityCurve index = config.baseline.index_path.empty()
                                  ? run_index_baseline(*panel, span, config.env.initial_balance)
                                  : run_index_baseline(load_index_series(config.baseline.index_path), *panel, span,
                                                       config.env.initial_balance);
    write_equity_curve(out_dir / "equity_index.csv", index);
    outputs.comparison.emplace_back("index", compute_metrics(index.values, config.rf_annual));

    write_comparison(out_dir / "comparison.csv", outputs.comparison);
    {
        auto kv = detail::open_output(out_dir / "metrics.txt");
        for (const auto& [name, m] : outputs.comparison) {
            kv << name << ".cumulative_return = " << detail::fmt_real(m.cumulative_return) << '\n'
               << name << ".annual_return = " << detail::fmt_real(m.annual_return) << '\n'
               << name << ".annual_volatility = " << detail::fmt_real(m.annual_volatility) << '\n'
               << name << ".sharpe = " << (m.sharpe ? detail::fmt_real(*m.sharpe) : std::string("undefined")) << '\n'
               << name << ".max_drawdown = " << detail::fmt_real(m.max_drawdown) << '\n';
        }
    }
    if (result.failure) throw Error(ErrorKind::InputInvalid, "backtest stopped early: " + *result.failure);
    return outputs;
}

struct ReportTable {
    std::vector<std::string> strategies;
    std::vector<std::vector<std::string>> cells;  // per strategy, five raw metric strings
};

inline ReportTable read_comparison(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "missing " + path.string());
    ReportTable table;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = detail::split(line, ',');
        if (fields.size() != 1 + kComparisonColumns.size()) {
            throw Error(ErrorKind::InputInvalid, path.string() + ": malformed row '" + line + "'");
        }
        table.strategies.push_back(fields[0]);
        table.cells.emplace_back(fields.begin() + 1, fields.end());
    }
    return table;
}

/// Prints the comparison table and writes cumulative_returns.csv from the
/// run's equity curves.
inline void cmd_report(const fs::path& run_dir, std::ostream& out) {
    std::vector<std::string> missing;
    if (!fs::exists(run_dir / "comparison.csv")) missing.push_back("comparison.csv");
    const ReportTable table = missing.empty() ? read_comparison(run_dir / "comparison.csv") : ReportTable{};
    for (const auto& s : table.strategies) {
        if (!fs::exists(run_dir / ("equity_" + s + ".csv"))) missing.push_back("equity_" + s + ".csv");
    }
    if (!missing.empty()) {
        std::string names;
        for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
        throw Error(ErrorKind::IoError, "run directory " + run_dir.string() + " is missing " + names);
    }

    std::vector<std::vector<std::string>> shown;
    for (const auto& row : table.cells) {
        shown.push_back({percent_cell(row[0], true), percent_cell(row[1], true), percent_cell(row[2], true),
                         percent_cell(row[3], false), percent_cell(row[4], true)});
    }
    out << render_table(table.strategies, shown);

    std::vector<std::string> dates;
    std::map<std::string, std::map<std::string, double>> cumulative;  // date -> strategy -> return
    for (const auto& s : table.strategies) {
        std::ifstream in(run_dir / ("equity_" + s + ".csv"));
        std::string line;
        std::getline(in, line);
        std::optional<double> first;
        while (std::getline(in, line)) {
            const auto fields = detail::split(line, ',');
            if (fields.size() != 2) continue;
            const double v = std::stod(fields[1]);
            if (!first) first = v;
            if (!cumulative.count(fields[0])) dates.push_back(fields[0]);
            cumulative[fields[0]][s] = v / *first - 1.0;
        }
    }
    std::sort(dates.begin(), dates.end());
    auto csv = detail::open_output(run_dir / "cumulative_returns.csv");
    csv << "date";
    for (const auto& s : table.strategies) csv << ',' << s;
    csv << '\n';
    for (const auto& d : dates) {
        csv << d;
        for (const auto& s : table.strategies) {
            const auto& row = cumulative[d];
            const auto it = row.find(s);
            csv << ',' << (it == row.end() ? std::string() : detail::fmt_real(it->second));
        }
        csv << '\n';
    }
}

}  // namespace ensemble_trader
