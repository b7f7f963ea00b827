#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "analysis.hpp"
#include "synthesis.hpp"
#include "tomography.hpp"

namespace sbtomo::io {

using nlohmann::json;

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

inline json parse_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": invalid json: " + e.what());
  }
}

inline double num(const json& j, const std::filesystem::path& path, const char* key) {
  if (!j.contains(key) || !j[key].is_number())
    throw ConfigError(path.string() + ": missing numeric field '" + key + "'");
  return j[key].get<double>();
}

inline std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// ---- cavity ----

inline CavityParams load_cavity(const std::filesystem::path& path) {
  const json j = parse_json(path);
  CavityParams c;
  c.fsr_hz = num(j, path, "fsr_hz");
  c.bandwidth_hz = num(j, path, "bandwidth_hz");
  c.finesse = num(j, path, "finesse");
  c.dip = num(j, path, "dip");
  c.mode_matching = num(j, path, "mode_matching");
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return c;
}

inline void save_cavity(const std::filesystem::path& path, const CavityParams& c) {
  json j;
  j["fsr_hz"] = c.fsr_hz;
  j["bandwidth_hz"] = c.bandwidth_hz;
  j["finesse"] = c.finesse;
  j["dip"] = c.dip;
  j["mode_matching"] = c.mode_matching;
  write_text(path, j.dump(2) + "\n");
}

// ---- state ----

struct StateFile {
  CovarianceParams params;
  std::optional<CovarianceParams> std_devs;
};

inline CovarianceParams params_from_json(const json& j, const std::filesystem::path& path) {
  CovarianceParams p;
  for (int k = 0; k < CovarianceParams::count; ++k)
    p[k] = num(j, path, CovarianceParams::names()[k]);
  return p;
}

inline json params_to_json(const CovarianceParams& p) {
  json j;
  for (int k = 0; k < CovarianceParams::count; ++k) j[CovarianceParams::names()[k]] = p[k];
  return j;
}

inline StateFile load_state(const std::filesystem::path& path) {
  const json j = parse_json(path);
  if (j.value("schema", "") != "sbt-state-v1")
    throw ConfigError(path.string() + ": expected schema sbt-state-v1");
  StateFile s;
  s.params = params_from_json(j.at("params"), path);
  if (j.contains("std_devs")) s.std_devs = params_from_json(j["std_devs"], path);
  return s;
}

inline void save_state(const std::filesystem::path& path, const CovarianceParams& p,
                       const CovarianceParams* std_devs = nullptr) {
  json j;
  j["schema"] = "sbt-state-v1";
  j["params"] = params_to_json(p);
  if (std_devs) j["std_devs"] = params_to_json(*std_devs);
  write_text(path, j.dump(2) + "\n");
}

// ---- traces ----

inline std::vector<std::vector<double>> read_csv(const std::filesystem::path& path,
                                                 const std::string& expect_header) {
  const std::string text = read_text(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != expect_header)
    throw ConfigError(path.string() + ": unexpected header '" + line + "'");
  const auto ncol = static_cast<std::size_t>(std::count(expect_header.begin(),
                                                        expect_header.end(), ',')) + 1;
  std::vector<std::vector<double>> cols(ncol);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::size_t k = 0;
    while (std::getline(ls, cell, ',')) {
      if (k >= ncol) break;
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str())
        throw ConfigError(path.string() + ": bad number on line " + std::to_string(lineno));
      cols[k++].push_back(v);
    }
    if (k != ncol)
      throw ConfigError(path.string() + ": wrong column count on line " + std::to_string(lineno));
  }
  if (cols[0].empty()) throw ConfigError(path.string() + ": no data rows");
  return cols;
}

inline constexpr const char* kModelHeader = "detuning,s_signal,s_idler,corr_re,corr_im";
inline constexpr const char* kMeasuredHeader =
    "detuning,v_sum_s,v_diff_s,v_sum_i,v_diff_i,corr_re_raw,corr_im_raw,e_s,e_i";

inline void save_model_trace(const std::filesystem::path& path, const ModelTrace& t) {
  std::ostringstream os;
  os << kModelHeader << "\n";
  for (std::size_t i = 0; i < t.detuning.size(); ++i)
    os << fmt(t.detuning[i]) << ',' << fmt(t.s_signal[i]) << ',' << fmt(t.s_idler[i]) << ','
       << fmt(t.corr_re[i]) << ',' << fmt(t.corr_im[i]) << "\n";
  write_text(path, os.str());
}

inline ModelTrace load_model_trace(const std::filesystem::path& path) {
  const auto cols = read_csv(path, kModelHeader);
  ModelTrace t;
  t.detuning = cols[0];
  t.s_signal = cols[1];
  t.s_idler = cols[2];
  t.corr_re = cols[3];
  t.corr_im = cols[4];
  return t;
}

inline std::filesystem::path meta_path(const std::filesystem::path& csv_path) {
  auto p = csv_path;
  p += ".meta.json";
  return p;
}

inline void save_measured_trace(const std::filesystem::path& path, const MeasuredTrace& t) {
  std::ostringstream os;
  os << kMeasuredHeader << "\n";
  for (std::size_t i = 0; i < t.detuning.size(); ++i)
    os << fmt(t.detuning[i]) << ',' << fmt(t.v_sum_s[i]) << ',' << fmt(t.v_diff_s[i]) << ','
       << fmt(t.v_sum_i[i]) << ',' << fmt(t.v_diff_i[i]) << ',' << fmt(t.corr_re_raw[i]) << ','
       << fmt(t.corr_im_raw[i]) << ',' << fmt(t.e_s[i]) << ',' << fmt(t.e_i[i]) << "\n";
  write_text(path, os.str());
  json meta;
  meta["schema"] = "sbt-measured-v1";
  meta["mode"] = to_string(t.mode);
  meta["parking"] = to_string(t.parking);
  meta["omega_hz"] = t.omega_hz;
  meta["seed"] = t.seed;
  meta["samples_per_point"] = t.samples_per_point;
  write_text(meta_path(path), meta.dump(2) + "\n");
}

inline MeasuredTrace load_measured_trace(const std::filesystem::path& path) {
  const auto cols = read_csv(path, kMeasuredHeader);
  MeasuredTrace t;
  t.detuning = cols[0];
  t.v_sum_s = cols[1];
  t.v_diff_s = cols[2];
  t.v_sum_i = cols[3];
  t.v_diff_i = cols[4];
  t.corr_re_raw = cols[5];
  t.corr_im_raw = cols[6];
  t.e_s = cols[7];
  t.e_i = cols[8];
  const auto mp = meta_path(path);
  if (!std::filesystem::exists(mp))
    throw ConfigError(path.string() + ": missing sidecar " + mp.string());
  const json meta = parse_json(mp);
  if (meta.value("schema", "") != "sbt-measured-v1")
    throw ConfigError(mp.string() + ": expected schema sbt-measured-v1");
  t.mode = sweep_mode_from_string(meta.value("mode", ""));
  t.parking = parking_from_string(meta.value("parking", std::string("far_detuned")));
  t.omega_hz = num(meta, mp, "omega_hz");
  t.seed = meta.value("seed", std::uint64_t{0});
  t.samples_per_point = meta.value("samples_per_point", std::uint64_t{0});
  return t;
}

// ---- fit results ----

inline void save_fit(const std::filesystem::path& path, const DatasetFit& f) {
  json j;
  j["schema"] = "sbt-fit-v1";
  j["params"] = params_to_json(f.params);
  json sd;
  for (int k = 0; k < CovarianceParams::count; ++k) {
    const double s = f.std_devs[k];
    sd[CovarianceParams::names()[k]] = std::isfinite(s) ? json(s) : json(nullptr);
  }
  j["std_devs"] = sd;
  j["residual_norm"] = f.residual_norm;
  j["iterations"] = f.iterations;
  j["converged"] = f.converged;
  j["warnings"] = f.warnings;
  write_text(path, j.dump(2) + "\n");
}

inline DatasetFit load_fit(const std::filesystem::path& path) {
  const json j = parse_json(path);
  if (j.value("schema", "") != "sbt-fit-v1")
    throw ConfigError(path.string() + ": expected schema sbt-fit-v1");
  DatasetFit f;
  f.params = params_from_json(j.at("params"), path);
  if (j.contains("std_devs")) {
    for (int k = 0; k < CovarianceParams::count; ++k) {
      const auto& v = j["std_devs"][CovarianceParams::names()[k]];
      f.std_devs[k] = v.is_number() ? v.get<double>() : std::numeric_limits<double>::infinity();
    }
  }
  f.residual_norm = j.value("residual_norm", 0.0);
  f.iterations = j.value("iterations", 0);
  f.converged = j.value("converged", true);
  if (j.contains("warnings"))
    for (const auto& w : j["warnings"]) f.warnings.push_back(w.get<std::string>());
  return f;
}

// ---- analysis report ----

inline json report_to_json(const AnalysisReport& r) {
  json j;
  j["schema"] = "sbt-report-v1";
  j["symplectic_eigenvalues"] = r.nu;
  j["physical"] = r.physical;
  j["margin"] = r.margin;
  j["purity"] = r.purity_value;
  json ppt = json::array();
  for (const auto& p : r.ppt) {
    json e;
    e["partition"] = p.label;
    e["min_nu"] = p.min_nu;
    e["entangled"] = p.entangled;
    if (p.sigma > 0.0) {
      e["sigma"] = p.sigma;
      e["significant"] = p.significant;
    }
    ppt.push_back(e);
  }
  j["ppt"] = ppt;
  j["duan"] = {{"var_p_minus", r.duan.var_p_minus},
               {"var_q_plus", r.duan.var_q_plus},
               {"total", r.duan.total},
               {"witness_violated", r.duan.witness_violated}};
  j["rotation"] = {{"theta_s", r.rotated.theta_s},
                   {"theta_i", r.rotated.theta_i},
                   {"params", params_to_json(r.rotated.params)},
                   {"purity", r.rotated_purity},
                   {"duan_total", r.duan_rotated.total},
                   {"duan_var_p_minus", r.duan_rotated.var_p_minus},
                   {"duan_var_q_plus", r.duan_rotated.var_q_plus}};
  j["symmetric_sector"] = {{"nu", r.symmetric_sector.nu},
                           {"purity", r.symmetric_sector.purity_value},
                           {"ppt_min", r.symmetric_sector.ppt_min},
                           {"duan_total", r.symmetric_sector.duan.total}};
  if (r.efficiency) {
    j["efficiency"] = *r.efficiency;
    const auto& c = *r.corrected;
    j["corrected"] = {{"params", params_to_json(c.params)},
                      {"nu", c.nu},
                      {"physical", c.physical},
                      {"purity", c.purity_value},
                      {"duan_total", c.duan.total},
                      {"duan_var_p_minus", c.duan.var_p_minus},
                      {"duan_var_q_plus", c.duan.var_q_plus}};
  }
  return j;
}

inline void save_report(const std::filesystem::path& path, const AnalysisReport& r) {
  write_text(path, report_to_json(r).dump(2) + "\n");
}

inline std::string report_text(const AnalysisReport& r) {
  std::ostringstream os;
  os << "symplectic eigenvalues:";
  for (double n : r.nu) os << ' ' << n;
  os << "\nphysical: " << (r.physical ? "yes" : "no") << " (margin " << r.margin << ")\n";
  os << "purity: " << r.purity_value << "\n";
  os << "duan: var(p-) = " << r.duan.var_p_minus << ", var(q+) = " << r.duan.var_q_plus
     << ", total = " << r.duan.total << (r.duan.witness_violated ? "  [entangled]" : "") << "\n";
  os << "ppt minima:\n";
  for (const auto& p : r.ppt) {
    os << "  " << p.label << ": " << p.min_nu << (p.entangled ? "  [entangled]" : "");
    if (p.sigma > 0.0) os << "  (sigma " << p.sigma << (p.significant ? ", >3 sigma" : "") << ")";
    os << "\n";
  }
  os << "rotated frame: theta_s = " << r.rotated.theta_s << ", theta_i = " << r.rotated.theta_i
     << ", duan total = " << r.duan_rotated.total << "\n";
  if (r.corrected) {
    os << "loss corrected (eta = " << *r.efficiency << "): purity = " << r.corrected->purity_value
       << ", duan total = " << r.corrected->duan.total
       << (r.corrected->physical ? "" : "  [unphysical]") << "\n";
  }
  return os.str();
}

}  // namespace sbtomo::io
