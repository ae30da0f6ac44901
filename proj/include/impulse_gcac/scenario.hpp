#pragma once

// Scenario files, task dispatch and report/trajectory emission. Needs
// nlohmann/json on the include path (vendored as json.hpp).

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "impulse_gcac/errors.hpp"
#include "impulse_gcac/linalg.hpp"
#include "impulse_gcac/observability.hpp"
#include "impulse_gcac/schedule.hpp"
#include "impulse_gcac/spectral.hpp"
#include "impulse_gcac/synthesis.hpp"
#include "impulse_gcac/witness.hpp"

namespace impulse_gcac {

using json = nlohmann::json;

enum class Task { check, observability, synthesize_gcac, synthesize_null, synthesize_local, witness, simulate };

inline std::string_view to_string(Task t) {
  switch (t) {
    case Task::check: return "check";
    case Task::observability: return "observability";
    case Task::synthesize_gcac: return "synthesize-gcac";
    case Task::synthesize_null: return "synthesize-null";
    case Task::synthesize_local: return "synthesize-local";
    case Task::witness: return "witness";
    case Task::simulate: return "simulate";
  }
  return "unknown";
}

inline std::optional<Task> parse_task(std::string_view s) {
  for (Task t : {Task::check, Task::observability, Task::synthesize_gcac, Task::synthesize_null,
                 Task::synthesize_local, Task::witness, Task::simulate}) {
    if (to_string(t) == s) return t;
  }
  return std::nullopt;
}

struct Scenario {
  std::string name = "scenario";
  SpectralDomain domain;
  Matrix p;
  std::vector<Controller> controllers;
  bool auto_schedule = false;
  std::vector<double> base_times;  // resolved, also when "auto"
  std::optional<Task> task;
  /// Raw "parameters" object, kept verbatim so reports round-trip.
  json parameters = json::object();
  std::optional<std::uint64_t> seed;

  CoupledSystem system() const { return CoupledSystem(p, controllers, domain); }
  ImpulseSchedule schedule() const { return ImpulseSchedule(base_times); }
};

namespace detail {

// Maps JSON pointers to the 1-based source line where each value starts.
inline std::map<std::string, int> locate_lines(std::string_view text) {
  struct Frame {
    bool object;
    std::string prefix;
    std::string key;
    int index = 0;
    bool expect_key = true;
  };
  std::map<std::string, int> lines;
  std::vector<Frame> stack;
  int line = 1;
  auto escape = [](const std::string& k) {
    std::string out;
    for (char c : k) {
      if (c == '~') out += "~0";
      else if (c == '/') out += "~1";
      else out += c;
    }
    return out;
  };
  auto here = [&]() -> std::string {
    if (stack.empty()) return "";
    const Frame& f = stack.back();
    return f.prefix + "/" + (f.object ? escape(f.key) : std::to_string(f.index));
  };
  auto read_string = [&](std::size_t& i) {
    std::string s;
    for (++i; i < text.size() && text[i] != '"'; ++i) {
      if (text[i] == '\\' && i + 1 < text.size()) {
        s += text[++i];
      } else {
        if (text[i] == '\n') ++line;
        s += text[i];
      }
    }
    return s;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') {
      ++line;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c)) || c == ':') continue;
    if (c == ',') {
      if (!stack.empty()) {
        if (stack.back().object) stack.back().expect_key = true;
        else ++stack.back().index;
      }
      continue;
    }
    if (c == '}' || c == ']') {
      if (!stack.empty()) stack.pop_back();
      continue;
    }
    if (c == '"' && !stack.empty() && stack.back().object && stack.back().expect_key) {
      stack.back().key = read_string(i);
      stack.back().expect_key = false;
      continue;
    }
    const std::string ptr = here();
    lines.emplace(ptr, line);
    if (c == '{' || c == '[') {
      stack.push_back({c == '{', ptr, "", 0, true});
    } else if (c == '"') {
      read_string(i);
    } else {
      while (i + 1 < text.size() && std::string_view(",}] \t\r\n").find(text[i + 1]) == std::string_view::npos) ++i;
    }
  }
  return lines;
}

class ScenarioReader {
 public:
  ScenarioReader(std::string source, std::string text)
      : source_(std::move(source)), lines_(locate_lines(text)) {}

  [[noreturn]] void fail(ErrorCode code, const std::string& ptr, const std::string& msg) const {
    std::string p = ptr;
    int line = 0;
    while (true) {
      const auto it = lines_.find(p);
      if (it != lines_.end()) {
        line = it->second;
        break;
      }
      const auto cut = p.rfind('/');
      if (cut == std::string::npos) break;
      p = p.substr(0, cut);
    }
    std::string where = source_;
    if (line > 0) where += ":" + std::to_string(line);
    throw Error(code, where + ": " + (ptr.empty() ? "/" : ptr) + ": " + msg);
  }

  const json& require(const json& obj, const std::string& ptr, const char* key,
                      ErrorCode missing = ErrorCode::parse_error) const {
    if (!obj.is_object()) fail(ErrorCode::parse_error, ptr, "expected an object");
    const auto it = obj.find(key);
    if (it == obj.end()) fail(missing, ptr, std::string("missing field \"") + key + "\"");
    return *it;
  }

  /// A number, or an expression over numbers, "pi" and "lambda1" joined by * and /.
  double number(const json& v, const std::string& ptr, double lambda1 = kInf) const {
    if (v.is_number()) {
      const double d = v.get<double>();
      if (!std::isfinite(d)) fail(ErrorCode::parse_error, ptr, "non-finite number");
      return d;
    }
    if (!v.is_string()) fail(ErrorCode::parse_error, ptr, "expected a number");
    const std::string s = v.get<std::string>();
    std::size_t i = 0;
    auto skip = [&] {
      while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    };
    auto term = [&]() -> double {
      skip();
      double sign = 1.0;
      if (i < s.size() && s[i] == '-') {
        sign = -1.0;
        ++i;
        skip();
      }
      if (s.compare(i, 2, "pi") == 0) {
        i += 2;
        return sign * kPi;
      }
      if (s.compare(i, 7, "lambda1") == 0) {
        i += 7;
        if (!std::isfinite(lambda1)) fail(ErrorCode::parse_error, ptr, "lambda1 is not available here");
        return sign * lambda1;
      }
      std::size_t used = 0;
      double d = 0.0;
      try {
        d = std::stod(s.substr(i), &used);
      } catch (const std::exception&) {
        fail(ErrorCode::parse_error, ptr, "cannot parse \"" + s + "\"");
      }
      i += used;
      return sign * d;
    };
    double value = term();
    skip();
    while (i < s.size()) {
      const char op = s[i++];
      const double rhs = term();
      if (op == '*') value *= rhs;
      else if (op == '/') value /= rhs;
      else fail(ErrorCode::parse_error, ptr, "unexpected '" + std::string(1, op) + "' in \"" + s + "\"");
      skip();
    }
    if (!std::isfinite(value)) fail(ErrorCode::parse_error, ptr, "non-finite value \"" + s + "\"");
    return value;
  }

  int integer(const json& v, const std::string& ptr) const {
    if (!v.is_number_integer()) fail(ErrorCode::parse_error, ptr, "expected an integer");
    return v.get<int>();
  }

  /// Row-major nested array.
  Matrix matrix(const json& v, const std::string& ptr, double lambda1) const {
    if (!v.is_array() || v.empty()) fail(ErrorCode::dimension_mismatch, ptr, "expected a non-empty array of rows");
    const std::size_t cols = v.front().is_array() ? v.front().size() : 0;
    if (cols == 0) fail(ErrorCode::dimension_mismatch, ptr, "rows must be non-empty arrays");
    Matrix m(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < v.size(); ++r) {
      const std::string rp = ptr + "/" + std::to_string(r);
      if (!v[r].is_array() || v[r].size() != cols) {
        fail(ErrorCode::dimension_mismatch, rp, "row has " + std::to_string(v[r].is_array() ? v[r].size() : 0) +
                                                    " entries, expected " + std::to_string(cols));
      }
      for (std::size_t c = 0; c < cols; ++c) {
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
            number(v[r][c], rp + "/" + std::to_string(c), lambda1);
      }
    }
    return m;
  }

  /// List of per-mode coefficient vectors (each of length `rows`) -> rows x modes.
  Matrix mode_list(const json& v, const std::string& ptr, int rows, int modes, double lambda1) const {
    if (!v.is_array()) fail(ErrorCode::parse_error, ptr, "expected a list of per-mode vectors");
    if (static_cast<int>(v.size()) > modes) {
      fail(ErrorCode::dimension_mismatch, ptr,
           std::to_string(v.size()) + " modes given but the truncation keeps " + std::to_string(modes));
    }
    Matrix out = Matrix::Zero(rows, modes);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::string ip = ptr + "/" + std::to_string(i);
      if (!v[i].is_array() || static_cast<int>(v[i].size()) != rows) {
        fail(ErrorCode::dimension_mismatch, ip, "expected a vector of length " + std::to_string(rows));
      }
      for (int r = 0; r < rows; ++r) {
        out(r, static_cast<Eigen::Index>(i)) = number(v[i][static_cast<std::size_t>(r)], ip + "/" + std::to_string(r), lambda1);
      }
    }
    return out;
  }

 private:
  std::string source_;
  std::map<std::string, int> lines_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::invalid_argument, path + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

/// Parses and validates a scenario document. A report emitted by `run` is
/// accepted too; its embedded "scenario" object is used.
inline Scenario parse_scenario(const std::string& text, const std::string& source = "<scenario>") {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    int line = 1;
    for (std::size_t i = 0; i < std::min<std::size_t>(e.byte, text.size()); ++i) line += text[i] == '\n';
    throw Error(ErrorCode::parse_error, source + ":" + std::to_string(line) + ": invalid JSON (" + e.what() + ")");
  }
  std::string root;
  if (doc.is_object() && doc.contains("scenario") && doc.contains("tool")) {
    doc = doc["scenario"];
    root = "/scenario";
  }
  const detail::ScenarioReader rd(source, text);
  if (!doc.is_object()) rd.fail(ErrorCode::parse_error, root, "expected a JSON object");

  Scenario sc;
  if (doc.contains("name")) {
    if (!doc["name"].is_string()) rd.fail(ErrorCode::parse_error, root + "/name", "expected a string");
    sc.name = doc["name"].get<std::string>();
  }

  if (doc.contains("domain")) {
    const json& d = doc["domain"];
    const std::string dp = root + "/domain";
    if (!d.is_object()) rd.fail(ErrorCode::parse_error, dp, "expected an object");
    if (d.contains("length")) sc.domain.length = rd.number(d["length"], dp + "/length");
    if (d.contains("modes")) sc.domain.modes = rd.integer(d["modes"], dp + "/modes");
    try {
      sc.domain.validate();
    } catch (const Error& e) {
      rd.fail(e.code(), dp, e.what());
    }
  }
  const double l1 = sc.domain.eigenvalue(1);

  const std::string sp = root + "/system";
  const json& sys = rd.require(doc, root, "system");
  sc.p = rd.matrix(rd.require(sys, sp, "P", ErrorCode::dimension_mismatch), sp + "/P", l1);
  if (sc.p.rows() != sc.p.cols()) {
    rd.fail(ErrorCode::dimension_mismatch, sp + "/P",
            "P is " + std::to_string(sc.p.rows()) + "x" + std::to_string(sc.p.cols()) + ", expected square");
  }
  const json& ctrls = rd.require(sys, sp, "controllers", ErrorCode::dimension_mismatch);
  if (!ctrls.is_array() || ctrls.empty()) {
    rd.fail(ErrorCode::dimension_mismatch, sp + "/controllers", "expected a non-empty list of controllers");
  }
  for (std::size_t k = 0; k < ctrls.size(); ++k) {
    const std::string cp = sp + "/controllers/" + std::to_string(k);
    Controller c;
    c.q = rd.matrix(rd.require(ctrls[k], cp, "Q", ErrorCode::dimension_mismatch), cp + "/Q", l1);
    if (c.q.rows() != sc.p.rows()) {
      rd.fail(ErrorCode::dimension_mismatch, cp + "/Q",
              "Q has " + std::to_string(c.q.rows()) + " rows, P is " + std::to_string(sc.p.rows()) + "x" +
                  std::to_string(sc.p.rows()));
    }
    if (k > 0 && c.q.cols() != sc.controllers.front().q.cols()) {
      rd.fail(ErrorCode::dimension_mismatch, cp + "/Q",
              "Q has " + std::to_string(c.q.cols()) + " columns, Q of controller 1 has " +
                  std::to_string(sc.controllers.front().q.cols()));
    }
    if (c.q.isZero(0.0)) rd.fail(ErrorCode::invariant_violation, cp + "/Q", "Q must be nonzero");
    c.support = {0.0, sc.domain.length};
    if (ctrls[k].contains("support")) {
      const json& s = ctrls[k]["support"];
      if (!s.is_array() || s.size() != 2) rd.fail(ErrorCode::parse_error, cp + "/support", "expected [a, b]");
      c.support.lo = rd.number(s[0], cp + "/support/0", l1);
      c.support.hi = rd.number(s[1], cp + "/support/1", l1);
      if (!(c.support.lo >= 0.0 && c.support.lo < c.support.hi &&
            c.support.hi <= sc.domain.length * (1.0 + 1e-12))) {
        rd.fail(ErrorCode::invariant_violation, cp + "/support", "need 0 <= a < b <= L");
      }
    }
    sc.controllers.push_back(std::move(c));
  }
  {
    double lo = 0.0;
    double hi = sc.domain.length;
    for (const auto& c : sc.controllers) {
      lo = std::max(lo, c.support.lo);
      hi = std::min(hi, c.support.hi);
    }
    if (!(lo < hi)) rd.fail(ErrorCode::invariant_violation, sp + "/controllers", "supports have empty intersection");
  }

  const std::string schp = root + "/schedule";
  const json& sched = rd.require(doc, root, "schedule");
  if (sched.is_string()) {
    if (sched.get<std::string>() != "auto") rd.fail(ErrorCode::parse_error, schp, "expected \"auto\" or an object");
    sc.auto_schedule = true;
  } else {
    const json& bt = rd.require(sched, schp, "base_times");
    if (!bt.is_array() || bt.empty()) rd.fail(ErrorCode::parse_error, schp + "/base_times", "expected a list");
    for (std::size_t i = 0; i < bt.size(); ++i) {
      sc.base_times.push_back(rd.number(bt[i], schp + "/base_times/" + std::to_string(i), l1));
    }
    if (static_cast<int>(sc.base_times.size()) != static_cast<int>(sc.controllers.size())) {
      rd.fail(ErrorCode::dimension_mismatch, schp + "/base_times",
              std::to_string(sc.base_times.size()) + " base times for " + std::to_string(sc.controllers.size()) +
                  " controllers");
    }
    for (std::size_t i = 0; i < sc.base_times.size(); ++i) {
      if (!(sc.base_times[i] > (i == 0 ? 0.0 : sc.base_times[i - 1]))) {
        rd.fail(ErrorCode::invariant_violation, schp + "/base_times/" + std::to_string(i),
                "base times must satisfy 0 < t_1 < ... < t_hbar");
      }
    }
  }
  if (sc.auto_schedule) {
    std::vector<Matrix> qs;
    for (const auto& c : sc.controllers) qs.push_back(c.q);
    sc.base_times = pick_schedule(sc.p, qs).base_times();
  }

  if (doc.contains("task")) {
    if (!doc["task"].is_string()) rd.fail(ErrorCode::parse_error, root + "/task", "expected a string");
    sc.task = parse_task(doc["task"].get<std::string>());
    if (!sc.task) rd.fail(ErrorCode::parse_error, root + "/task", "unknown task \"" + doc["task"].get<std::string>() + "\"");
  }
  if (doc.contains("parameters")) {
    if (!doc["parameters"].is_object()) rd.fail(ErrorCode::parse_error, root + "/parameters", "expected an object");
    sc.parameters = doc["parameters"];
    if (sc.parameters.contains("seed")) {
      if (!sc.parameters["seed"].is_number_unsigned()) {
        rd.fail(ErrorCode::parse_error, root + "/parameters/seed", "expected a non-negative integer");
      }
      sc.seed = sc.parameters["seed"].get<std::uint64_t>();
    }
    // Validate the parameter types eagerly.
    for (const char* key : {"eps", "epsilon0", "ell", "delta"}) {
      if (sc.parameters.contains(key)) {
        const double v = rd.number(sc.parameters[key], root + "/parameters/" + key, l1);
        if (!(v > 0.0)) rd.fail(ErrorCode::invalid_argument, root + "/parameters/" + key, "must be > 0");
      }
    }
    for (const char* key : {"k_max", "k", "k_star", "gamma", "compose_k", "samples", "obs_modes"}) {
      if (sc.parameters.contains(key) && rd.integer(sc.parameters[key], root + "/parameters/" + key) < 1) {
        rd.fail(ErrorCode::invalid_argument, root + "/parameters/" + key, "must be >= 1");
      }
    }
    if (sc.parameters.contains("x0")) {
      const json& x = sc.parameters["x0"];
      const std::string xp = root + "/parameters/x0";
      if (!x.is_object()) rd.fail(ErrorCode::parse_error, xp, "expected an object");
      if (x.contains("mode_coefficients")) {
        rd.mode_list(x["mode_coefficients"], xp + "/mode_coefficients", static_cast<int>(sc.p.rows()),
                     sc.domain.modes, l1);
      } else if (x.contains("random_norm")) {
        rd.number(x["random_norm"], xp + "/random_norm", l1);
        if (x.contains("modes") && rd.integer(x["modes"], xp + "/modes") > sc.domain.modes) {
          rd.fail(ErrorCode::dimension_mismatch, xp + "/modes", "more modes than the truncation keeps");
        }
      } else {
        rd.fail(ErrorCode::parse_error, xp, "expected \"mode_coefficients\" or \"random_norm\"");
      }
    }
    if (sc.parameters.contains("controls")) {
      const json& cs = sc.parameters["controls"];
      if (!cs.is_array()) rd.fail(ErrorCode::parse_error, root + "/parameters/controls", "expected a list");
      for (std::size_t j = 0; j < cs.size(); ++j) {
        rd.mode_list(cs[j], root + "/parameters/controls/" + std::to_string(j),
                     static_cast<int>(sc.controllers.front().q.cols()), sc.domain.modes, l1);
      }
    }
  }
  try {
    (void)sc.system();
  } catch (const Error& e) {
    rd.fail(e.code(), sp, e.what());
  }
  return sc;
}

inline Scenario load_scenario(const std::string& path) {
  return parse_scenario(detail::read_file(path), path);
}

/// Resolved scenario as JSON: explicit base times, overrides applied.
inline json to_json(const Scenario& sc) {
  auto mat = [](const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      rows.push_back(row);
    }
    return rows;
  };
  json j;
  j["name"] = sc.name;
  j["domain"] = {{"length", sc.domain.length}, {"modes", sc.domain.modes}};
  json ctrls = json::array();
  for (const auto& c : sc.controllers) {
    ctrls.push_back({{"Q", mat(c.q)}, {"support", {c.support.lo, c.support.hi}}});
  }
  j["system"] = {{"P", mat(sc.p)}, {"controllers", ctrls}};
  j["schedule"] = {{"base_times", sc.base_times}};
  if (sc.task) j["task"] = std::string(to_string(*sc.task));
  json params = sc.parameters;
  if (sc.seed) params["seed"] = *sc.seed;
  j["parameters"] = params;
  return j;
}

struct RunOutcome {
  int exit_code = 0;
  json report;
  std::optional<std::string> csv;
};

namespace detail {

inline json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  return v;
}

inline json vec_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double param_number(const Scenario& sc, const char* key, double fallback) {
  if (!sc.parameters.contains(key)) return fallback;
  const json& v = sc.parameters[key];
  if (v.is_number()) return v.get<double>();
  const ScenarioReader rd("<parameters>", "");
  return rd.number(v, std::string("/parameters/") + key, sc.domain.eigenvalue(1));
}

inline int param_int(const Scenario& sc, const char* key, int fallback) {
  return sc.parameters.contains(key) ? sc.parameters[key].get<int>() : fallback;
}

inline std::uint64_t require_seed(const Scenario& sc, const char* what) {
  if (!sc.seed) {
    throw Error(ErrorCode::invalid_argument, std::string(what) + " is sampled; a seed is required (--seed or parameters.seed)");
  }
  return *sc.seed;
}

inline ModalState initial_state(const Scenario& sc, const CoupledSystem& sys) {
  const ScenarioReader rd("<parameters>", "");
  if (!sc.parameters.contains("x0")) {
    throw Error(ErrorCode::invalid_argument, "task needs parameters.x0");
  }
  const json& x = sc.parameters["x0"];
  if (x.contains("mode_coefficients")) {
    return {rd.mode_list(x["mode_coefficients"], "/parameters/x0/mode_coefficients", sys.n(), sys.modes(),
                         sys.lambda1())};
  }
  const double norm = rd.number(x["random_norm"], "/parameters/x0/random_norm", sys.lambda1());
  const int modes = x.contains("modes") ? x["modes"].get<int>() : sys.modes();
  std::mt19937_64 rng(require_seed(sc, "random x0"));
  std::normal_distribution<double> normal(0.0, 1.0);
  ModalState s = ModalState::zero(sys);
  for (int i = 0; i < modes; ++i) {
    for (int r = 0; r < sys.n(); ++r) s.coeffs(r, i) = normal(rng);
  }
  s.coeffs *= norm / s.coeffs.norm();
  return s;
}

inline std::string trajectory_csv(const CoupledSystem& sys, const ImpulseSchedule& sched, const ModalState& x0,
                                  const ControlSequence& controls, int k) {
  std::string out = "j,t_j";
  for (int i = 1; i <= sys.modes(); ++i) out += ",mode_" + std::to_string(i);
  out += ",norm_x,norm_u\n";
  const auto traj = simulate_trajectory(sys, sched, x0, controls, k);
  for (int j = 1; j <= k; ++j) {
    const ModalState& x = traj[static_cast<std::size_t>(j - 1)];
    out += std::to_string(j) + "," + fmt(sched.time_at(j));
    for (int i = 0; i < sys.modes(); ++i) out += "," + fmt(x.coeffs.col(i).norm());
    const double un = j <= controls.size() ? controls.impulses[static_cast<std::size_t>(j - 1)].norm() : 0.0;
    out += "," + fmt(l2_norm(x)) + "," + fmt(un) + "\n";
  }
  return out;
}

inline json constant_json(const std::string& name, double value, std::string_view method, bool certified) {
  return {{"name", name}, {"value", number_or_inf(value)}, {"method", std::string(method)}, {"certified", certified}};
}

inline json steering_json(const SteeringResult& r) {
  json j;
  j["certificate"] = std::string(to_string(r.certificate));
  j["horizon_k"] = r.horizon_k;
  j["residual"] = r.residual;
  j["max_control_norm"] = r.controls.max_norm();
  j["control_l2_norm"] = r.controls.l2_norm();
  j["budget"] = r.controls.budget;
  json hist = json::array();
  for (const auto& h : r.history) hist.push_back({{"k", h.k}, {"residual", h.residual}, {"sup_norm", h.sup_norm}});
  j["history"] = hist;
  if (r.iterations_per_horizon > 0) j["iterations_per_horizon"] = r.iterations_per_horizon;
  if (r.control_l2_bound) j["control_l2_bound"] = *r.control_l2_bound;
  if (r.phases) {
    const auto& p = *r.phases;
    j["phases"] = {{"k_star", p.k_star},
                   {"epsilon", p.epsilon},
                   {"semigroup_bound", p.semigroup_bound},
                   {"approach_skipped", p.approach_skipped},
                   {"approach_horizon", p.approach_horizon},
                   {"padded_horizon", p.padded_horizon},
                   {"handoff_norm", p.handoff_norm},
                   {"exact_control_l2", p.exact_control_l2}};
  }
  return j;
}

inline int exit_for(ErrorCode code) {
  return code == ErrorCode::horizon_exhausted ? 2 : 1;
}

}  // namespace detail

/// Runs the scenario's task. Never throws for task-level failures: those are
/// reported with a machine-readable code and exit 1 (input) or 2 (synthesis).
inline RunOutcome run(const Scenario& sc) {
  RunOutcome out;
  json& rep = out.report;
  rep["tool"] = "impulse-gcac";
  rep["scenario"] = to_json(sc);
  rep["task"] = sc.task ? json(std::string(to_string(*sc.task))) : json(nullptr);
  rep["schedule"] = {{"base_times", sc.base_times},
                     {"hbar", sc.base_times.size()},
                     {"period", sc.base_times.empty() ? 0.0 : sc.base_times.back()},
                     {"source", sc.auto_schedule ? "auto" : "explicit"}};
  rep["truncation"] = sc.domain.modes;
  rep["seed"] = sc.seed ? json(*sc.seed) : json(nullptr);
  rep["constants"] = json::array();
  auto add_constant = [&](const std::string& name, double v, std::string_view method, bool certified) {
    rep["constants"].push_back(detail::constant_json(name, v, method, certified));
  };
  try {
    if (!sc.task) throw Error(ErrorCode::invalid_argument, "no task given");
    const CoupledSystem sys = sc.system();
    const ImpulseSchedule sched = sc.schedule();
    const int k_max = detail::param_int(sc, "k_max", 256);
    json result;
    switch (*sc.task) {
      case Task::check: {
        const HypothesisVerdict v = hypothesis_verdict(sys, sched, k_max);
        result = {{"rank_ok", v.rank_ok},
                  {"k_star", v.k_star ? json(*v.k_star) : json(nullptr)},
                  {"kalman_ok", v.kalman_ok},
                  {"spectral", std::string(to_string(v.spectral))},
                  {"dissipative", v.dissipative},
                  {"omega_full", v.omega_full},
                  {"k_max", k_max}};
        break;
      }
      case Task::observability: {
        const auto rc = rank_condition(sys.p(), sys.qs(), sched, k_max);
        const int k = detail::param_int(sc, "k", rc.k_star.value_or(k_max));
        const ObservabilityReport fin = finite_obs_constant(sys, sched, k);
        add_constant("C(k)", fin.constant, to_string(fin.method), true);
        result["k"] = k;
        result["rank_ok"] = rc.holds;
        result["finite_constant"] = detail::number_or_inf(fin.constant);
        const std::uint64_t seed = detail::require_seed(sc, "observability");
        SamplingOptions opts(seed);
        opts.samples = detail::param_int(sc, "samples", opts.samples);
        opts.modes = detail::param_int(sc, "obs_modes", opts.modes);
        try {
          const ObservabilityReport ip = interpolation_estimate(sys, sched, k, opts);
          add_constant("interpolation C(k)", ip.constant, to_string(ip.method), false);
          result["interpolation"] = {{"constant", detail::number_or_inf(ip.constant)},
                                     {"theta", ip.theta ? json(*ip.theta) : json(nullptr)},
                                     {"samples", ip.samples},
                                     {"modes", ip.modes}};
        } catch (const RankDeficientError& e) {
          result["interpolation"] = {{"error", std::string(to_string(e.code()))},
                                     {"message", e.what()},
                                     {"witness", detail::vec_json(e.witness())}};
        }
        const double delta = detail::param_number(sc, "delta", 0.1);
        const int gamma = detail::param_int(sc, "gamma", 1);
        const int compose_k = detail::param_int(sc, "compose_k", 2);
        const ObservabilityReport dr = delta_obs_constant(sys, sched, gamma * sys.hbar(), delta, opts);
        add_constant("D(gamma*hbar, delta)", dr.constant, to_string(dr.method), false);
        const ComposedObservability comp = compose_obs(dr.constant, delta, gamma, compose_k, sys, sched);
        add_constant("delta_k", comp.delta_k, to_string(ObservabilityMethod::composed), false);
        add_constant("D_k", comp.d_k, to_string(ObservabilityMethod::composed), false);
        result["delta_observability"] = {{"k", gamma * sys.hbar()},
                                         {"delta", delta},
                                         {"constant", detail::number_or_inf(dr.constant)},
                                         {"samples", dr.samples},
                                         {"modes", dr.modes}};
        result["composed"] = {{"gamma", gamma},
                              {"k", compose_k},
                              {"delta_k", detail::number_or_inf(comp.delta_k)},
                              {"D_k", detail::number_or_inf(comp.d_k)}};
        break;
      }
      case Task::synthesize_gcac:
      case Task::synthesize_null:
      case Task::synthesize_local: {
        const ModalState x0 = detail::initial_state(sc, sys);
        const double eps = detail::param_number(sc, "eps", 1e-2);
        SteeringResult r;
        if (*sc.task == Task::synthesize_gcac) {
          r = gcac_synthesize(sys, sched, x0, eps, k_max);
        } else if (*sc.task == Task::synthesize_null) {
          r = constrained_null_synthesize(sys, sched, x0, k_max);
          if (r.phases) {
            add_constant("C(k*)", r.phases->obs_constant, to_string(ObservabilityMethod::exact_gramian), true);
            add_constant("M", r.phases->semigroup_bound, "exact-semigroup-norm", true);
          }
        } else {
          GradientOptions opt;
          opt.iterations = detail::param_int(sc, "iterations", opt.iterations);
          r = local_gcac_synthesize(sys, sched, x0, eps, k_max, opt);
        }
        result = detail::steering_json(r);
        result["x0_norm"] = l2_norm(x0);
        if (*sc.task != Task::synthesize_null) result["eps"] = eps;
        out.csv = detail::trajectory_csv(sys, sched, x0, r.controls, r.horizon_k);
        if (r.certificate == Certificate::failed_horizon_exhausted) {
          out.exit_code = 2;
          rep["status"] = "failed";
        }
        break;
      }
      case Task::witness: {
        std::optional<NegativeCertificate> cert;
        try {
          cert = negative_bound(sys, sched, detail::param_number(sc, "epsilon0", 1.0));
        } catch (const Error& e) {
          if (e.code() != ErrorCode::inapplicable || !sc.parameters.contains("x0")) throw;
          result["negative_bound"] = {{"applicable", false}, {"message", e.what()}};
        }
        ModalState x0 = ModalState::zero(sys);
        if (cert) {
          result["negative_bound"] = {{"applicable", true},
                                      {"case", std::string(to_string(cert->kind))},
                                      {"rho", {cert->rho.real(), cert->rho.imag()}},
                                      {"direction", detail::vec_json(cert->direction())},
                                      {"threshold_ell", cert->threshold_ell},
                                      {"epsilon0", cert->epsilon0}};
          add_constant("threshold_ell", cert->threshold_ell, "closed-form", true);
        }
        if (sc.parameters.contains("x0")) {
          x0 = detail::initial_state(sc, sys);
        } else {
          const double ell = detail::param_number(sc, "ell", 2.0 * cert->threshold_ell);
          x0.coeffs.col(0) = ell * cert->direction();
          result["ell"] = ell;
        }
        GapOptions gopt(detail::require_seed(sc, "witness"));
        std::vector<int> horizons = {1, 5, 20};
        if (sc.parameters.contains("horizons")) horizons = sc.parameters["horizons"].get<std::vector<int>>();
        json gaps = json::array();
        for (int k : horizons) {
          const ReachabilityGap g = reachability_gap(sys, sched, x0, k, gopt);
          gaps.push_back({{"k", k}, {"lower_bound", g.lower_bound}, {"achieved", g.achieved}});
        }
        result["x0_norm"] = l2_norm(x0);
        result["gaps"] = gaps;
        break;
      }
      case Task::simulate: {
        const ModalState x0 = detail::initial_state(sc, sys);
        ControlSequence controls;
        controls.constrained = false;
        if (sc.parameters.contains("controls")) {
          const detail::ScenarioReader rd("<parameters>", "");
          const json& cs = sc.parameters["controls"];
          for (std::size_t j = 0; j < cs.size(); ++j) {
            controls.impulses.push_back(rd.mode_list(cs[j], "/parameters/controls/" + std::to_string(j), sys.m(),
                                                     sys.modes(), sys.lambda1()));
          }
        }
        const int k = detail::param_int(sc, "k", std::max(1, controls.size()));
        const ModalState xf = simulate(sys, sched, x0, controls, k);
        result = {{"k", k}, {"final_norm", l2_norm(xf)}, {"x0_norm", l2_norm(x0)}};
        out.csv = detail::trajectory_csv(sys, sched, x0, controls, k);
        break;
      }
    }
    rep["result"] = result;
    if (!rep.contains("status")) rep["status"] = "ok";
  } catch (const HorizonExhaustedError& e) {
    out.exit_code = 2;
    rep["status"] = "failed";
    rep["error"] = {{"code", std::string(to_string(e.code()))},
                    {"message", e.what()},
                    {"best_sup_norm", detail::number_or_inf(e.best_sup_norm())}};
  } catch (const Error& e) {
    out.exit_code = detail::exit_for(e.code());
    rep["status"] = out.exit_code == 2 ? "failed" : "error";
    rep["error"] = {{"code", std::string(to_string(e.code()))}, {"message", e.what()}};
  }
  rep["exit_code"] = out.exit_code;
  return out;
}

}  // namespace impulse_gcac
