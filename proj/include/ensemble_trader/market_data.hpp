#pragma once

// Raw bar ingestion, calendar alignment, on-demand per-date frames and the
// walk-forward window plan.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ensemble_trader/date.hpp"
#include "ensemble_trader/error.hpp"

namespace ensemble_trader {

struct Bar {
    Date date;
    double open = 0.0;
    double high = 0.0;
    double low = 0.0;
    double close = 0.0;
    double adj_close = 0.0;
    double volume = 0.0;
};

/// Empty string when the bar is valid, otherwise the violated rule.
inline std::string bar_violation(const Bar& bar) {
    const double prices[] = {bar.open, bar.high, bar.low, bar.close, bar.adj_close};
    for (double p : prices) {
        if (!std::isfinite(p) || p <= 0.0) {
            return "prices must be finite and strictly positive";
        }
    }
    if (!std::isfinite(bar.volume) || bar.volume < 0.0) {
        return "volume must be finite and non-negative";
    }
    if (bar.high < bar.low) {
        return "high < low";
    }
    if (std::min(bar.open, bar.close) < bar.low) {
        return "low above open/close";
    }
    if (std::max(bar.open, bar.close) > bar.high) {
        return "high below open/close";
    }
    return {};
}

/// Aligned T x D table of bars over a common, strictly increasing calendar.
/// Immutable once built.
class PricePanel {
public:
    PricePanel() = default;

    /// `bars` is row-major: bars[t * D + d].
    PricePanel(std::vector<std::string> assets, std::vector<Date> calendar, std::vector<Bar> bars)
        : assets_(std::move(assets)), calendar_(std::move(calendar)), bars_(std::move(bars)) {
        if (assets_.empty() || calendar_.empty()) {
            throw Error(ErrorKind::InputEmpty, "panel needs at least one asset and one date");
        }
        if (bars_.size() != assets_.size() * calendar_.size()) {
            throw Error(ErrorKind::InputInvalid, "bar table does not match T x D");
        }
        for (std::size_t t = 1; t < calendar_.size(); ++t) {
            if (!(calendar_[t - 1] < calendar_[t])) {
                throw Error(ErrorKind::InputInvalid, "calendar must be strictly increasing");
            }
        }
        for (std::size_t t = 0; t < calendar_.size(); ++t) {
            for (std::size_t d = 0; d < assets_.size(); ++d) {
                const Bar& b = bar(t, d);
                if (b.date != calendar_[t]) {
                    throw Error(ErrorKind::InputInvalid, "bar date does not match calendar");
                }
                if (auto why = bar_violation(b); !why.empty()) {
                    throw Error(ErrorKind::InputInvalid,
                                assets_[d] + " " + format_iso_date(b.date) + ": " + why);
                }
            }
        }
    }

    [[nodiscard]] std::size_t num_assets() const noexcept { return assets_.size(); }
    [[nodiscard]] std::size_t num_dates() const noexcept { return calendar_.size(); }
    [[nodiscard]] const std::vector<std::string>& assets() const noexcept { return assets_; }
    [[nodiscard]] const std::vector<Date>& calendar() const noexcept { return calendar_; }
    [[nodiscard]] const Bar& bar(std::size_t t, std::size_t d) const {
        return bars_[t * assets_.size() + d];
    }
    [[nodiscard]] double price(std::size_t t, std::size_t d) const { return bar(t, d).adj_close; }

    /// Column of one bar field for asset d.
    template <class Field>
    [[nodiscard]] std::vector<double> column(std::size_t d, Field field) const {
        std::vector<double> out(calendar_.size());
        for (std::size_t t = 0; t < calendar_.size(); ++t) {
            out[t] = bar(t, d).*field;
        }
        return out;
    }

    /// Sub-panel restricted to the given assets (by index, in order).
    [[nodiscard]] PricePanel select_assets(const std::vector<std::size_t>& which) const {
        std::vector<std::string> names;
        std::vector<Bar> bars;
        bars.reserve(which.size() * calendar_.size());
        for (std::size_t d : which) {
            names.push_back(assets_.at(d));
        }
        for (std::size_t t = 0; t < calendar_.size(); ++t) {
            for (std::size_t d : which) {
                bars.push_back(bar(t, d));
            }
        }
        return PricePanel(std::move(names), calendar_, std::move(bars));
    }

    /// First index with calendar date >= date, or num_dates().
    [[nodiscard]] std::size_t lower_bound(const Date& date) const {
        return static_cast<std::size_t>(
            std::lower_bound(calendar_.begin(), calendar_.end(), date) - calendar_.begin());
    }

private:
    std::vector<std::string> assets_;
    std::vector<Date> calendar_;
    std::vector<Bar> bars_;
};

// --------------------------------------------------------------------------
// Loading

struct BarSchema {
    std::string date = "date";
    std::string ticker = "tic";
    std::string open = "open";
    std::string high = "high";
    std::string low = "low";
    std::string close = "close";
    std::string adj_close = "adjcp";
    std::string volume = "volume";
    char delimiter = ',';
};

struct RowError {
    std::size_t line = 0;  // 1-based, header is line 1
    std::string reason;
};

struct LoadOptions {
    double max_reject_rate = 0.01;
};

struct LoadResult {
    PricePanel panel;
    std::vector<RowError> rejected;
    std::size_t rows_read = 0;
    std::vector<std::string> dropped_dates;  // dates lost to intersection, ISO format
};

namespace detail {

inline std::vector<std::string> split_line(std::string_view line, char delim) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(delim, start);
        std::string_view field = line.substr(start, pos == std::string_view::npos ? line.npos : pos - start);
        while (!field.empty() && (field.front() == ' ' || field.front() == '"')) field.remove_prefix(1);
        while (!field.empty() && (field.back() == ' ' || field.back() == '"' || field.back() == '\r')) {
            field.remove_suffix(1);
        }
        out.emplace_back(field);
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::optional<double> parse_number(const std::string& text) {
    if (text.empty()) return std::nullopt;
    std::size_t used = 0;
    try {
        const double v = std::stod(text, &used);
        if (used != text.size()) return std::nullopt;
        return v;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

}  // namespace detail

/// Reads long-format delimited bars (one row per date and ticker) and aligns
/// them onto the intersection of all assets' dates. Bad rows are reported,
/// not silently dropped; too many of them abort the load.
inline LoadResult load_bars(std::istream& source, const BarSchema& schema,
                            const LoadOptions& options = {}) {
    std::string header;
    if (!std::getline(source, header) || header.find_first_not_of(" \t\r") == std::string::npos) {
        throw Error(ErrorKind::InputEmpty, "source has no header row");
    }
    const auto columns = detail::split_line(header, schema.delimiter);
    auto column_index = [&](const std::string& name) {
        const auto it = std::find(columns.begin(), columns.end(), name);
        if (it == columns.end()) {
            throw Error(ErrorKind::InputInvalid, "line 1: missing column '" + name + "'");
        }
        return static_cast<std::size_t>(it - columns.begin());
    };
    const std::size_t c_date = column_index(schema.date);
    const std::size_t c_tic = column_index(schema.ticker);
    const std::size_t c_open = column_index(schema.open);
    const std::size_t c_high = column_index(schema.high);
    const std::size_t c_low = column_index(schema.low);
    const std::size_t c_close = column_index(schema.close);
    const std::size_t c_adj = column_index(schema.adj_close);
    const std::size_t c_vol = column_index(schema.volume);

    LoadResult result;
    std::map<std::string, std::map<std::chrono::sys_days, Bar>> by_asset;
    std::set<std::string> seen_tickers;

    std::string line;
    std::size_t line_no = 1;
    while (std::getline(source, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ++result.rows_read;
        const auto fields = detail::split_line(line, schema.delimiter);
        auto reject = [&](std::string reason) { result.rejected.push_back({line_no, std::move(reason)}); };
        if (fields.size() != columns.size()) {
            reject("expected " + std::to_string(columns.size()) + " fields, got " +
                   std::to_string(fields.size()));
            continue;
        }
        const std::string& ticker = fields[c_tic];
        if (ticker.empty()) {
            reject("empty ticker");
            continue;
        }
        seen_tickers.insert(ticker);
        const auto date = parse_iso_date(fields[c_date]);
        if (!date) {
            reject("unparseable date '" + fields[c_date] + "'");
            continue;
        }
        Bar bar{*date};
        const std::pair<std::size_t, double Bar::*> numeric[] = {
            {c_open, &Bar::open},   {c_high, &Bar::high},     {c_low, &Bar::low},
            {c_close, &Bar::close}, {c_adj, &Bar::adj_close}, {c_vol, &Bar::volume}};
        bool ok = true;
        for (const auto& [col, field] : numeric) {
            const auto v = detail::parse_number(fields[col]);
            if (!v) {
                reject("unparseable number in column '" + columns[col] + "'");
                ok = false;
                break;
            }
            bar.*field = *v;
        }
        if (!ok) continue;
        if (auto why = bar_violation(bar); !why.empty()) {
            reject(why);
            continue;
        }
        auto& series = by_asset[ticker];
        if (!series.emplace(std::chrono::sys_days{*date}, bar).second) {
            reject("duplicate row for " + ticker + " " + fields[c_date]);
        }
    }

    if (result.rows_read == 0) {
        throw Error(ErrorKind::InputEmpty, "source has no data rows");
    }
    const double rate = static_cast<double>(result.rejected.size()) / static_cast<double>(result.rows_read);
    if (rate > options.max_reject_rate) {
        std::ostringstream msg;
        msg << result.rejected.size() << " of " << result.rows_read << " rows rejected, above ceiling "
            << options.max_reject_rate;
        if (!result.rejected.empty()) {
            msg << " (first: line " << result.rejected.front().line << ": " << result.rejected.front().reason << ")";
        }
        throw Error(ErrorKind::RejectionCeiling, msg.str());
    }
    for (const auto& ticker : seen_tickers) {
        if (by_asset.find(ticker) == by_asset.end()) {
            throw Error(ErrorKind::AssetEmpty, ticker);
        }
    }

    // std::map keeps tickers sorted lexicographically.
    std::vector<std::string> assets;
    std::set<std::chrono::sys_days> all_dates;
    for (const auto& [ticker, series] : by_asset) {
        assets.push_back(ticker);
        for (const auto& [day, bar] : series) all_dates.insert(day);
    }
    std::vector<Date> calendar;
    for (const auto day : all_dates) {
        const bool everywhere = std::all_of(by_asset.begin(), by_asset.end(),
                                            [&](const auto& kv) { return kv.second.count(day) > 0; });
        if (everywhere) {
            calendar.emplace_back(day);
        } else {
            result.dropped_dates.push_back(format_iso_date(Date{day}));
        }
    }
    if (calendar.empty()) {
        throw Error(ErrorKind::InsufficientData, "assets share no common dates");
    }
    std::vector<Bar> bars;
    bars.reserve(calendar.size() * assets.size());
    for (const auto& date : calendar) {
        for (const auto& ticker : assets) {
            bars.push_back(by_asset[ticker].at(std::chrono::sys_days{date}));
        }
    }
    result.panel = PricePanel(std::move(assets), std::move(calendar), std::move(bars));
    return result;
}

// --------------------------------------------------------------------------
// Frames

struct MarketFrame {
    std::size_t t = 0;
    Date date;
    std::vector<double> prices;  // adj_close, the trading price
    std::vector<double> open;
    std::vector<double> high;
    std::vector<double> low;
    std::vector<double> close;
    std::vector<double> volume;

    bool operator==(const MarketFrame&) const = default;
};

inline MarketFrame frame_at(const PricePanel& panel, std::size_t t) {
    if (t >= panel.num_dates()) {
        throw Error(ErrorKind::OutOfRange,
                    "frame index " + std::to_string(t) + " >= " + std::to_string(panel.num_dates()));
    }
    const std::size_t n = panel.num_assets();
    MarketFrame f;
    f.t = t;
    f.date = panel.calendar()[t];
    f.prices.resize(n);
    f.open.resize(n);
    f.high.resize(n);
    f.low.resize(n);
    f.close.resize(n);
    f.volume.resize(n);
    for (std::size_t d = 0; d < n; ++d) {
        const Bar& b = panel.bar(t, d);
        f.prices[d] = b.adj_close;
        f.open[d] = b.open;
        f.high[d] = b.high;
        f.low[d] = b.low;
        f.close[d] = b.close;
        f.volume[d] = b.volume;
    }
    return f;
}

/// Builds frames only when requested and memoizes each one, so a trace of K
/// distinct indices costs at most K constructions. Tracks the highest index
/// ever requested for look-ahead auditing. One instance per reader.
class FrameSource {
public:
    explicit FrameSource(std::shared_ptr<const PricePanel> panel)
        : panel_(std::move(panel)), cache_(panel_->num_dates()) {}

    const MarketFrame& frame_at(std::size_t t) {
        if (t >= cache_.size()) {
            throw Error(ErrorKind::OutOfRange,
                        "frame index " + std::to_string(t) + " >= " + std::to_string(cache_.size()));
        }
        if (!max_accessed_ || t > *max_accessed_) max_accessed_ = t;
        if (!cache_[t]) {
            cache_[t] = std::make_unique<MarketFrame>(ensemble_trader::frame_at(*panel_, t));
            ++constructions_;
        }
        return *cache_[t];
    }

    [[nodiscard]] std::size_t constructions() const noexcept { return constructions_; }
    [[nodiscard]] std::optional<std::size_t> max_accessed() const noexcept { return max_accessed_; }
    void reset_access_log() noexcept { max_accessed_.reset(); }
    [[nodiscard]] const PricePanel& panel() const noexcept { return *panel_; }
    [[nodiscard]] const std::shared_ptr<const PricePanel>& shared_panel() const noexcept { return panel_; }

private:
    std::shared_ptr<const PricePanel> panel_;
    std::vector<std::unique_ptr<MarketFrame>> cache_;
    std::size_t constructions_ = 0;
    std::optional<std::size_t> max_accessed_;
};

// --------------------------------------------------------------------------
// Window plan

/// Inclusive index interval on the panel calendar.
struct Interval {
    std::size_t first = 0;
    std::size_t last = 0;

    [[nodiscard]] std::size_t size() const noexcept { return last - first + 1; }
    [[nodiscard]] bool contains(std::size_t t) const noexcept { return t >= first && t <= last; }
    bool operator==(const Interval&) const = default;
};

struct WindowTriple {
    std::size_t id = 0;
    Interval train;
    Interval validation;
    Interval trade;
};

struct WindowPlan {
    std::vector<WindowTriple> windows;
    std::vector<Date> calendar;

    [[nodiscard]] Date date(std::size_t t) const { return calendar.at(t); }
    /// Out-of-sample span: first trade date to last trade date.
    [[nodiscard]] Interval out_of_sample() const {
        return {windows.front().trade.first, windows.back().trade.last};
    }
};

/// Growing-window walk-forward plan. The month of `in_sample_end` is the last
/// validation month of the first triple; each later triple validates on the
/// previous triple's trade period and trains on everything before it.
inline WindowPlan build_window_plan(const PricePanel& panel, const Date& in_sample_end,
                                    int validation_months, int trade_months) {
    if (validation_months < 1 || trade_months < 1) {
        throw Error(ErrorKind::InputInvalid, "window lengths must be at least one month");
    }
    using std::chrono::months;
    const auto& cal = panel.calendar();
    const auto end_month = month_of(in_sample_end);

    // Index range of trading dates within [from_month, to_month].
    auto resolve = [&](std::chrono::year_month from, std::chrono::year_month to) -> std::optional<Interval> {
        const std::size_t first = panel.lower_bound(first_day_of(from));
        const std::size_t past = panel.lower_bound(Date{std::chrono::sys_days{last_day_of(to)} + std::chrono::days{1}});
        if (first >= past) return std::nullopt;
        return Interval{first, past - 1};
    };

    WindowPlan plan;
    plan.calendar = cal;
    for (std::size_t i = 0;; ++i) {
        const auto trade_from = end_month + months{1 + static_cast<int>(i) * trade_months};
        const auto trade_to = trade_from + months{trade_months - 1};
        const auto val_from = trade_from - months{validation_months};
        const auto val_to = trade_from - months{1};

        const auto validation = resolve(val_from, val_to);
        const auto trade = resolve(trade_from, trade_to);
        const std::size_t train_past = panel.lower_bound(first_day_of(val_from));
        if (!trade) {
            if (i == 0) {
                const std::size_t available = cal.size() - std::min(cal.size(), panel.lower_bound(first_day_of(trade_from)));
                throw Error(ErrorKind::InsufficientData,
                            "needed >= 1 trading date from " + format_iso_date(first_day_of(trade_from)) +
                                ", available " + std::to_string(available));
            }
            break;
        }
        if (!validation || train_past == 0) {
            throw Error(ErrorKind::InsufficientData,
                        "window " + std::to_string(i) + ": needed non-empty train and validation before " +
                            format_iso_date(first_day_of(trade_from)) + ", available " +
                            std::to_string(train_past) + " train dates");
        }
        plan.windows.push_back({i, Interval{0, train_past - 1}, *validation, *trade});
        if (trade->last + 1 >= cal.size()) break;
    }
    return plan;
}

}  // namespace ensemble_trader
