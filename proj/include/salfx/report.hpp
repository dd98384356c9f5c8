#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "salfx/metrics.hpp"

namespace salfx {

inline constexpr const char* kCsvHeader = "image_id,auc_judd,auc_borji,sauc,nss,cc,kl,sim";

/// Shortest decimal form that round-trips a double.
inline std::string format_double(double v)
{
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

/// Per-image metric rows plus dataset means; means are taken over the finite
/// values of each metric.
struct MetricReport {
    std::vector<metrics::MetricRow> rows;
    nlohmann::json config = nlohmann::json::object();

    [[nodiscard]] std::array<double, 7> means() const
    {
        std::array<double, 7> m{};
        for (std::size_t k = 0; k < m.size(); ++k) {
            double acc = 0.0;
            std::size_t n = 0;
            for (const auto& r : rows)
                if (std::isfinite(r.values[k])) {
                    acc += r.values[k];
                    ++n;
                }
            m[k] = n ? acc / static_cast<double>(n) : std::nan("");
        }
        return m;
    }

    [[nodiscard]] std::array<std::size_t, 7> finite_counts() const
    {
        std::array<std::size_t, 7> c{};
        for (const auto& r : rows)
            for (std::size_t k = 0; k < c.size(); ++k)
                if (std::isfinite(r.values[k])) ++c[k];
        return c;
    }

    [[nodiscard]] nlohmann::json to_json() const
    {
        using nlohmann::json;
        auto num = [](double v) -> json { return std::isfinite(v) ? json(v) : json(nullptr); };
        json j;
        j["config"] = config;
        j["count"] = rows.size();
        json means_j = json::object(), counts_j = json::object();
        const auto mv = means();
        const auto fc = finite_counts();
        for (std::size_t k = 0; k < metrics::kNames.size(); ++k) {
            means_j[std::string(metrics::kNames[k])] = num(mv[k]);
            counts_j[std::string(metrics::kNames[k])] = fc[k];
        }
        j["means"] = means_j;
        j["finite_counts"] = counts_j;
        json rows_j = json::array();
        for (const auto& r : rows) {
            json rj;
            rj["image_id"] = r.image_id;
            json flags = json::array();
            for (std::size_t k = 0; k < metrics::kNames.size(); ++k) {
                rj[std::string(metrics::kNames[k])] = num(r.values[k]);
                if (r.degenerate[k]) flags.push_back(metrics::kNames[k]);
            }
            rj["degenerate"] = flags;
            rows_j.push_back(std::move(rj));
        }
        j["rows"] = std::move(rows_j);
        return j;
    }

    [[nodiscard]] std::string to_csv() const
    {
        std::ostringstream os;
        os << kCsvHeader << '\n';
        for (const auto& r : rows) {
            os << r.image_id;
            for (double v : r.values) os << ',' << format_double(v);
            os << '\n';
        }
        return os.str();
    }
};

} // namespace salfx
