#pragma once

#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "errors.hpp"

namespace catsyn {

inline constexpr int kSchemaVersion = 1;

using ParamValue = std::variant<double, std::string>;

/// Named series and scalar summaries from one experiment run.
struct ExperimentResult {
    std::string id;
    std::map<std::string, ParamValue> params;
    std::string grid_axis = "t";  ///< name of the sampled variable (time unless the run is a sweep)
    std::vector<double> time_grid;
    std::map<std::string, std::vector<double>> series;
    std::map<std::string, std::vector<std::complex<double>>> complex_series;
    std::map<std::string, double> summary;
    std::vector<std::string> warnings;
    double rtol = 1e-8;
    double atol = 1e-10;

    void param(const std::string& k, double v) { params[k] = v; }
    void param(const std::string& k, const std::string& v) { params[k] = v; }
    void param(const std::string& k, const char* v) { params[k] = std::string(v); }

    double param_number(const std::string& k) const {
        auto it = params.find(k);
        if (it == params.end() || !std::holds_alternative<double>(it->second))
            throw ConfigError("missing numeric param " + k);
        return std::get<double>(it->second);
    }
};

inline std::string build_identifier() {
#ifdef CATSYN_BUILD_ID
    return CATSYN_BUILD_ID;
#else
    return std::string("catsyn-") + __DATE__;
#endif
}

namespace detail {
/// JSON has no inf/nan; those are written as the strings "inf", "-inf", "nan".
inline nlohmann::ordered_json scalar_json(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}
inline double scalar_from_json(const nlohmann::ordered_json& j) {
    if (j.is_number()) return j.get<double>();
    const std::string s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw ConfigError("summary value is not a number: " + s);
}
}  // namespace detail

inline nlohmann::ordered_json to_json(const ExperimentResult& r) {
    nlohmann::ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["id"] = r.id;
    nlohmann::ordered_json p = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.params) {
        if (std::holds_alternative<double>(v))
            p[k] = std::get<double>(v);
        else
            p[k] = std::get<std::string>(v);
    }
    j["params"] = p;
    j["grid_axis"] = r.grid_axis;
    j["time_grid"] = r.time_grid;
    nlohmann::ordered_json obs = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.series) obs[k] = v;
    for (const auto& [k, v] : r.complex_series) {
        std::vector<double> re, im;
        for (const auto& z : v) {
            re.push_back(z.real());
            im.push_back(z.imag());
        }
        obs[k] = {{"re", re}, {"im", im}};
    }
    j["observables"] = obs;
    nlohmann::ordered_json s = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.summary) s[k] = detail::scalar_json(v);
    j["summary"] = s;
    j["warnings"] = r.warnings;
    j["provenance"] = {{"build", build_identifier()}, {"rtol", r.rtol}, {"atol", r.atol}};
    return j;
}

inline ExperimentResult from_json(const nlohmann::ordered_json& j) {
    if (j.at("schema_version").get<int>() != kSchemaVersion) throw ConfigError("unsupported schema_version");
    ExperimentResult r;
    r.id = j.at("id").get<std::string>();
    for (const auto& [k, v] : j.at("params").items()) {
        if (v.is_number())
            r.params[k] = v.get<double>();
        else
            r.params[k] = v.get<std::string>();
    }
    r.grid_axis = j.at("grid_axis").get<std::string>();
    r.time_grid = j.at("time_grid").get<std::vector<double>>();
    for (const auto& [k, v] : j.at("observables").items()) {
        if (v.is_object()) {
            auto re = v.at("re").get<std::vector<double>>();
            auto im = v.at("im").get<std::vector<double>>();
            std::vector<std::complex<double>> z;
            for (std::size_t i = 0; i < re.size(); ++i) z.emplace_back(re[i], im[i]);
            r.complex_series[k] = z;
        } else {
            r.series[k] = v.get<std::vector<double>>();
        }
    }
    for (const auto& [k, v] : j.at("summary").items()) r.summary[k] = detail::scalar_from_json(v);
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    r.rtol = j.at("provenance").at("rtol").get<double>();
    r.atol = j.at("provenance").at("atol").get<double>();
    return r;
}

/// One row per time-grid point; complex series split into _re/_im columns.
/// Series whose length differs from the time grid are omitted.
inline std::string to_csv(const ExperimentResult& r) {
    std::ostringstream os;
    os.precision(17);
    os << r.grid_axis;
    const std::size_t n = r.time_grid.size();
    std::vector<std::string> real_keys, cplx_keys;
    for (const auto& [k, v] : r.series)
        if (v.size() == n) real_keys.push_back(k);
    for (const auto& [k, v] : r.complex_series)
        if (v.size() == n) cplx_keys.push_back(k);
    for (const auto& k : real_keys) os << "," << k;
    for (const auto& k : cplx_keys) os << "," << k << "_re," << k << "_im";
    os << "\n";
    for (std::size_t i = 0; i < n; ++i) {
        os << r.time_grid[i];
        for (const auto& k : real_keys) os << "," << r.series.at(k)[i];
        for (const auto& k : cplx_keys) os << "," << r.complex_series.at(k)[i].real() << ","
                                           << r.complex_series.at(k)[i].imag();
        os << "\n";
    }
    return os.str();
}

}  // namespace catsyn
