#pragma once

// Run configuration: one INI file, every key defaulted except data.path.

#include <cctype>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "ensemble_trader/agents/common.hpp"
#include "ensemble_trader/date.hpp"
#include "ensemble_trader/error.hpp"
#include "ensemble_trader/indicators.hpp"
#include "ensemble_trader/market_data.hpp"
#include "ensemble_trader/trading_env.hpp"
#include "ensemble_trader/turbulence.hpp"

namespace ensemble_trader {

struct BaselineConfig {
    std::size_t lookback = 252;
    double ridge = 1e-8;
    std::filesystem::path index_path;  // date,value CSV; empty = price-weighted proxy
};

struct RunConfig {
    std::filesystem::path data_path;
    BarSchema schema;
    LoadOptions load;
    std::string in_sample_end = "2015-12";  // YYYY-MM or YYYY-MM-DD, resolved to its month
    int validation_months = 3;
    int trade_months = 3;
    EnvConfig env;
    IndicatorConfig indicators;
    TurbulenceConfig turbulence;
    std::map<AgentKind, AgentConfig> agents{
        {AgentKind::PPO, AgentConfig{}}, {AgentKind::A2C, AgentConfig{}}, {AgentKind::DDPG, AgentConfig{}}};
    std::uint64_t seed = 2020;
    std::filesystem::path out_dir = "out";
    bool parallel_training = true;
    bool warm_start = true;
    double rf_annual = 0.0;
    BaselineConfig baseline;

    /// Last day of the in-sample month.
    [[nodiscard]] Date in_sample_end_date() const {
        std::string s = in_sample_end;
        if (s.size() == 7) s += "-01";
        const auto d = parse_iso_date(s);
        if (!d) throw Error(ErrorKind::ConfigError, "plan.in_sample_end is not YYYY-MM or YYYY-MM-DD: " + in_sample_end);
        return last_day_of(month_of(*d));
    }
};

namespace detail {

inline std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <class T>
T parse_value(const std::string& key, const std::string& text);

template <>
inline std::string parse_value<std::string>(const std::string&, const std::string& text) {
    return text;
}

template <>
inline double parse_value<double>(const std::string& key, const std::string& text) {
    std::size_t used = 0;
    try {
        const double v = std::stod(text, &used);
        if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorKind::ConfigError, key + ": expected a number, got '" + text + "'");
}

template <>
inline std::uint64_t parse_value<std::uint64_t>(const std::string& key, const std::string& text) {
    std::size_t used = 0;
    try {
        if (!text.empty() && text[0] != '-') {
            const auto v = std::stoull(text, &used);
            if (used == text.size()) return v;
        }
    } catch (const std::exception&) {
    }
    throw Error(ErrorKind::ConfigError, key + ": expected a non-negative integer, got '" + text + "'");
}

template <>
inline std::int64_t parse_value<std::int64_t>(const std::string& key, const std::string& text) {
    std::size_t used = 0;
    try {
        const auto v = std::stoll(text, &used);
        if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorKind::ConfigError, key + ": expected an integer, got '" + text + "'");
}

template <>
inline int parse_value<int>(const std::string& key, const std::string& text) {
    return static_cast<int>(parse_value<std::int64_t>(key, text));
}

template <>
inline bool parse_value<bool>(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw Error(ErrorKind::ConfigError, key + ": expected true or false, got '" + text + "'");
}

template <>
inline std::vector<std::size_t> parse_value<std::vector<std::size_t>>(const std::string& key, const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_value<std::uint64_t>(key, trim(item)));
    if (out.empty()) throw Error(ErrorKind::ConfigError, key + ": expected a comma-separated list");
    return out;
}

/// Key table for one section: name -> setter.
using Setters = std::map<std::string, std::function<void(const std::string& key, const std::string& value)>>;

template <class T>
auto set(T& field) {
    return [&field](const std::string& key, const std::string& value) { field = parse_value<T>(key, value); };
}

inline Setters agent_setters(AgentConfig& a) {
    return {
        {"gamma", set(a.gamma)},
        {"total_steps", set(a.total_steps)},
        {"rollout_length", set(a.rollout_length)},
        {"batch_size", set(a.batch_size)},
        {"epochs", set(a.epochs)},
        {"clip_epsilon", set(a.clip_epsilon)},
        {"normalize_advantages", set(a.normalize_advantages)},
        {"max_clip_fraction", set(a.max_clip_fraction)},
        {"tau", set(a.tau)},
        {"exploration_noise", set(a.exploration_noise)},
        {"replay_capacity", set(a.replay_capacity)},
        {"learning_starts", set(a.learning_starts)},
        {"actor_lr", set(a.actor_lr)},
        {"critic_lr", set(a.critic_lr)},
        {"initial_std", set(a.initial_std)},
        {"hidden", set(a.hidden)},
    };
}

inline void apply_section(const boost::property_tree::ptree& section, const std::string& name, const Setters& setters) {
    for (const auto& [key, node] : section) {
        const auto it = setters.find(key);
        if (it == setters.end()) throw Error(ErrorKind::ConfigError, "unknown key [" + name + "] " + key);
        it->second(name + "." + key, trim(node.data()));
    }
}

inline std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

/// Shortest text that parses back to the same double.
inline std::string num(double x) {
    char buf[32];
    const auto end = std::to_chars(buf, buf + sizeof buf, x).ptr;
    return std::string(buf, end);
}

}  // namespace detail

/// Parses INI text. Relative paths are resolved against `base_dir`.
inline RunConfig parse_run_config(std::istream& in, const std::filesystem::path& base_dir = {}) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw Error(ErrorKind::ConfigError, std::string("config: ") + e.what());
    }
    RunConfig c;
    std::string data_path, out_dir, index_path;
    std::string delimiter(1, c.schema.delimiter);
    using detail::set;

    std::map<std::string, detail::Setters> sections;
    sections["data"] = {
        {"path", set(data_path)},
        {"delimiter", set(delimiter)},
        {"max_reject_rate", set(c.load.max_reject_rate)},
        {"column.date", set(c.schema.date)},
        {"column.ticker", set(c.schema.ticker)},
        {"column.open", set(c.schema.open)},
        {"column.high", set(c.schema.high)},
        {"column.low", set(c.schema.low)},
        {"column.close", set(c.schema.close)},
        {"column.adj_close", set(c.schema.adj_close)},
        {"column.volume", set(c.schema.volume)},
    };
    sections["plan"] = {
        {"in_sample_end", set(c.in_sample_end)},
        {"validation_months", set(c.validation_months)},
        {"trade_months", set(c.trade_months)},
    };
    sections["env"] = {
        {"initial_balance", set(c.env.initial_balance)},
        {"h_max", set(c.env.h_max)},
        {"fee_rate", set(c.env.fee_rate)},
        {"reward_scale", set(c.env.reward_scale)},
        {"obs_scaling.price", set(c.env.obs_scaling.price)},
        {"obs_scaling.macd", set(c.env.obs_scaling.macd)},
        {"obs_scaling.rsi", set(c.env.obs_scaling.rsi)},
        {"obs_scaling.cci", set(c.env.obs_scaling.cci)},
        {"obs_scaling.adx", set(c.env.obs_scaling.adx)},
    };
    sections["indicators"] = {
        {"macd_fast", set(c.indicators.macd_fast)},
        {"macd_slow", set(c.indicators.macd_slow)},
        {"macd_signal", set(c.indicators.macd_signal)},
        {"rsi_period", set(c.indicators.rsi_period)},
        {"cci_period", set(c.indicators.cci_period)},
        {"adx_period", set(c.indicators.adx_period)},
    };
    sections["turbulence"] = {
        {"lookback", set(c.turbulence.lookback)},
        {"quantile", set(c.turbulence.quantile)},
        {"ridge", set(c.turbulence.ridge)},
    };
    sections["run"] = {
        {"seed", set(c.seed)},
        {"out", set(out_dir)},
        {"parallel_training", set(c.parallel_training)},
        {"warm_start", set(c.warm_start)},
        {"rf_annual", set(c.rf_annual)},
    };
    sections["baseline"] = {
        {"lookback", set(c.baseline.lookback)},
        {"ridge", set(c.baseline.ridge)},
        {"index_path", set(index_path)},
    };

    for (const auto& [name, section] : tree) {
        if (name == "agents" || parse_agent_kind(name)) continue;
        const auto it = sections.find(name);
        if (it == sections.end()) throw Error(ErrorKind::ConfigError, "unknown section [" + name + "]");
        detail::apply_section(section, name, it->second);
    }
    // Shared agent keys first, then per-kind overrides.
    if (const auto shared = tree.get_child_optional("agents")) {
        for (auto& [kind, agent] : c.agents) detail::apply_section(*shared, "agents", detail::agent_setters(agent));
    }
    for (const auto& [name, section] : tree) {
        if (const auto kind = parse_agent_kind(name)) {
            detail::apply_section(section, name, detail::agent_setters(c.agents.at(*kind)));
        }
    }

    if (delimiter.size() != 1) throw Error(ErrorKind::ConfigError, "data.delimiter must be a single character");
    c.schema.delimiter = delimiter[0];
    auto resolve = [&](const std::string& p) -> std::filesystem::path {
        if (p.empty()) return {};
        const std::filesystem::path path(p);
        return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };
    c.data_path = resolve(data_path);
    c.baseline.index_path = resolve(index_path);
    if (!out_dir.empty()) c.out_dir = resolve(out_dir);

    if (c.validation_months < 1 || c.trade_months < 1) {
        throw Error(ErrorKind::ConfigError, "plan.validation_months and plan.trade_months must be >= 1");
    }
    if (c.env.h_max < 1) throw Error(ErrorKind::ConfigError, "env.h_max must be >= 1");
    if (!(c.env.fee_rate >= 0.0 && c.env.fee_rate < 1.0)) throw Error(ErrorKind::ConfigError, "env.fee_rate must lie in [0, 1)");
    if (!(c.env.initial_balance > 0.0)) throw Error(ErrorKind::ConfigError, "env.initial_balance must be > 0");
    if (!(c.turbulence.quantile > 0.0 && c.turbulence.quantile <= 1.0)) {
        throw Error(ErrorKind::ConfigError, "turbulence.quantile must lie in (0, 1]");
    }
    (void)c.in_sample_end_date();
    for (const auto& [kind, agent] : c.agents) {
        try {
            agent.validate();
        } catch (const Error& e) {
            throw Error(ErrorKind::ConfigError, std::string(to_string(kind)) + ": " + e.what());
        }
    }
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open config file " + path.string());
    RunConfig c = parse_run_config(in, path.parent_path());
    if (c.data_path.empty()) throw Error(ErrorKind::ConfigError, "data.path is required");
    return c;
}

/// Effective configuration, every key written, re-readable by parse_run_config.
inline void write_run_config(std::ostream& out, const RunConfig& c) {
    using detail::num;
    out << "[data]\n"
        << "path = " << c.data_path.string() << "\n"
        << "delimiter = " << c.schema.delimiter << "\n"
        << "max_reject_rate = " << num(c.load.max_reject_rate) << "\n"
        << "column.date = " << c.schema.date << "\n"
        << "column.ticker = " << c.schema.ticker << "\n"
        << "column.open = " << c.schema.open << "\n"
        << "column.high = " << c.schema.high << "\n"
        << "column.low = " << c.schema.low << "\n"
        << "column.close = " << c.schema.close << "\n"
        << "column.adj_close = " << c.schema.adj_close << "\n"
        << "column.volume = " << c.schema.volume << "\n\n"
        << "[plan]\n"
        << "in_sample_end = " << c.in_sample_end << "\n"
        << "validation_months = " << c.validation_months << "\n"
        << "trade_months = " << c.trade_months << "\n\n"
        << "[env]\n"
        << "initial_balance = " << num(c.env.initial_balance) << "\n"
        << "h_max = " << c.env.h_max << "\n"
        << "fee_rate = " << num(c.env.fee_rate) << "\n"
        << "reward_scale = " << num(c.env.reward_scale) << "\n"
        << "obs_scaling.price = " << num(c.env.obs_scaling.price) << "\n"
        << "obs_scaling.macd = " << num(c.env.obs_scaling.macd) << "\n"
        << "obs_scaling.rsi = " << num(c.env.obs_scaling.rsi) << "\n"
        << "obs_scaling.cci = " << num(c.env.obs_scaling.cci) << "\n"
        << "obs_scaling.adx = " << num(c.env.obs_scaling.adx) << "\n\n"
        << "[indicators]\n"
        << "macd_fast = " << c.indicators.macd_fast << "\n"
        << "macd_slow = " << c.indicators.macd_slow << "\n"
        << "macd_signal = " << c.indicators.macd_signal << "\n"
        << "rsi_period = " << c.indicators.rsi_period << "\n"
        << "cci_period = " << c.indicators.cci_period << "\n"
        << "adx_period = " << c.indicators.adx_period << "\n\n"
        << "[turbulence]\n"
        << "lookback = " << c.turbulence.lookback << "\n"
        << "quantile = " << num(c.turbulence.quantile) << "\n"
        << "ridge = " << num(c.turbulence.ridge) << "\n\n";
    for (const auto kind : kAllAgentKinds) {
        const AgentConfig& a = c.agents.at(kind);
        std::string name(to_string(kind));
        for (auto& ch : name) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        out << "[" << name << "]\n"
            << "gamma = " << num(a.gamma) << "\n"
            << "total_steps = " << a.total_steps << "\n"
            << "rollout_length = " << a.rollout_length << "\n"
            << "batch_size = " << a.batch_size << "\n"
            << "epochs = " << a.epochs << "\n"
            << "clip_epsilon = " << num(a.clip_epsilon) << "\n"
            << "normalize_advantages = " << (a.normalize_advantages ? "true" : "false") << "\n"
            << "max_clip_fraction = " << num(a.max_clip_fraction) << "\n"
            << "tau = " << num(a.tau) << "\n"
            << "exploration_noise = " << num(a.exploration_noise) << "\n"
            << "replay_capacity = " << a.replay_capacity << "\n"
            << "learning_starts = " << a.learning_starts << "\n"
            << "actor_lr = " << num(a.actor_lr) << "\n"
            << "critic_lr = " << num(a.critic_lr) << "\n"
            << "initial_std = " << num(a.initial_std) << "\n"
            << "hidden = " << detail::join(a.hidden) << "\n\n";
    }
    out << "[run]\n"
        << "seed = " << c.seed << "\n"
        << "out = " << c.out_dir.string() << "\n"
        << "parallel_training = " << (c.parallel_training ? "true" : "false") << "\n"
        << "warm_start = " << (c.warm_start ? "true" : "false") << "\n"
        << "rf_annual = " << num(c.rf_annual) << "\n\n"
        << "[baseline]\n"
        << "lookback = " << c.baseline.lookback << "\n"
        << "ridge = " << num(c.baseline.ridge) << "\n"
        << "index_path = " << c.baseline.index_path.string() << "\n";
}

}  // namespace ensemble_trader
