#include "mfglab/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mfglab/errors.hpp"

namespace mfg {

TimeGrid RunConfig::grid() const { return make_time_grid(T, K); }

LQCoefficients RunConfig::lq() const {
  LQCoefficients m;
  m.n = m.l = m.d = 1;
  m.A = MatrixSchedule::scalar(A);
  m.B = MatrixSchedule::scalar(B);
  m.C = MatrixSchedule::scalar(C);
  m.C0 = MatrixSchedule::scalar(C0);
  m.D = MatrixSchedule::scalar(D);
  m.D0 = MatrixSchedule::scalar(D0);
  m.Q = MatrixSchedule::scalar(Q);
  m.Qbar = MatrixSchedule::scalar(Qbar);
  m.S = MatrixSchedule::scalar(S);
  m.P = MatrixSchedule::scalar(P);
  m.Pbar = MatrixSchedule::scalar(Pbar);
  m.QT = Eigen::MatrixXd::Constant(1, 1, QT);
  m.QbarT = Eigen::MatrixXd::Constant(1, 1, QbarT);
  m.ST = Eigen::MatrixXd::Constant(1, 1, ST);
  m.c1 = c1;
  m.c2 = c2;
  return m;
}

InitialLaw RunConfig::initial_law() const {
  Eigen::VectorXd mean = Eigen::VectorXd::Constant(1, x0);
  if (x0_std == 0.0) return InitialLaw::point_mass(mean);
  return InitialLaw::gaussian(mean, Eigen::MatrixXd::Constant(1, 1, x0_std * x0_std));
}

MkvConfig RunConfig::mkv(std::size_t worlds_override, Eigen::Index particles_override) const {
  MkvConfig cfg;
  cfg.worlds = worlds_override ? worlds_override : worlds;
  cfg.particles = particles_override ? particles_override : particles;
  cfg.damping = damping;
  cfg.picard_tol = picard_tol;
  cfg.max_picard = max_picard;
  cfg.basis = basis == "quadratic" ? RegressionBasis::Quadratic : RegressionBasis::Affine;
  cfg.continuation.enabled = continuation;
  cfg.continuation.initial_step = continuation_step;
  cfg.continuation.min_step = continuation_min_step;
  return cfg;
}

NeConfig RunConfig::ne(Eigen::Index players) const {
  NeConfig cfg;
  cfg.players = players;
  cfg.repetitions = repetitions;
  cfg.damping = damping;
  cfg.tol = picard_tol;
  cfg.max_iters = max_picard;
  return cfg;
}

std::uint64_t config_hash(const std::string& raw_text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : raw_text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

struct Parser {
  RunConfig cfg;
  std::vector<std::string> violations;
  bool saw_model = false;

  void fail(const std::string& msg) { violations.push_back(msg); }

  bool to_double(const std::string& key, const std::string& v, double& out) {
    try {
      std::size_t pos = 0;
      out = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return true;
    } catch (const std::exception&) {
      fail(key + ": not a number: '" + v + "'");
      return false;
    }
  }

  bool to_count(const std::string& key, const std::string& v, std::uint64_t& out) {
    try {
      std::size_t pos = 0;
      if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
      out = std::stoull(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return true;
    } catch (const std::exception&) {
      fail(key + ": not a nonnegative integer: '" + v + "'");
      return false;
    }
  }

  bool to_bool(const std::string& key, const std::string& v, bool& out) {
    if (v == "true" || v == "1" || v == "yes") return out = true, true;
    if (v == "false" || v == "0" || v == "no") return out = false, true;
    fail(key + ": not a boolean: '" + v + "'");
    return false;
  }

  void set(const std::string& section, const std::string& key, const std::string& value) {
    const std::string full = "[" + section + "] " + key;
    std::uint64_t u = 0;
    if (section == "model") {
      static const std::map<std::string, double RunConfig::*> scalars = {
          {"A", &RunConfig::A},       {"B", &RunConfig::B},
          {"C", &RunConfig::C},       {"C0", &RunConfig::C0},
          {"D", &RunConfig::D},       {"D0", &RunConfig::D0},
          {"Q", &RunConfig::Q},       {"Qbar", &RunConfig::Qbar},
          {"S", &RunConfig::S},       {"P", &RunConfig::P},
          {"Pbar", &RunConfig::Pbar}, {"QT", &RunConfig::QT},
          {"QbarT", &RunConfig::QbarT}, {"ST", &RunConfig::ST},
          {"c1", &RunConfig::c1},     {"c2", &RunConfig::c2},
          {"x0", &RunConfig::x0},     {"x0_std", &RunConfig::x0_std}};
      auto it = scalars.find(key);
      if (it == scalars.end()) return fail(full + ": unknown key");
      double d = 0;
      if (to_double(full, value, d)) cfg.*(it->second) = d;
    } else if (section == "grid") {
      if (key == "T") {
        double d = 0;
        if (to_double(full, value, d)) cfg.T = d;
      } else if (key == "K") {
        if (to_count(full, value, u)) cfg.K = u;
      } else
        fail(full + ": unknown key");
    } else if (section == "montecarlo") {
      if (key == "worlds") {
        if (to_count(full, value, u)) cfg.worlds = u;
      } else if (key == "particles") {
        if (to_count(full, value, u)) cfg.particles = static_cast<Eigen::Index>(u);
      } else if (key == "repetitions") {
        if (to_count(full, value, u)) cfg.repetitions = u;
      } else if (key == "M_aux") {
        if (to_count(full, value, u)) cfg.m_aux = static_cast<Eigen::Index>(u);
      } else
        fail(full + ": unknown key");
    } else if (section == "solver") {
      if (key == "damping") {
        double d = 0;
        if (to_double(full, value, d)) cfg.damping = d;
      } else if (key == "picard_tol") {
        double d = 0;
        if (to_double(full, value, d)) cfg.picard_tol = d;
      } else if (key == "max_picard") {
        if (to_count(full, value, u)) cfg.max_picard = u;
      } else if (key == "continuation") {
        to_bool(full, value, cfg.continuation);
      } else if (key == "continuation_step") {
        double d = 0;
        if (to_double(full, value, d)) cfg.continuation_step = d;
      } else if (key == "continuation_min_step") {
        double d = 0;
        if (to_double(full, value, d)) cfg.continuation_min_step = d;
      } else if (key == "basis") {
        if (value == "affine" || value == "quadratic")
          cfg.basis = value;
        else
          fail(full + ": must be 'affine' or 'quadratic', got '" + value + "'");
      } else
        fail(full + ": unknown key");
    } else if (section == "experiment") {
      if (key == "N_list") {
        std::vector<Eigen::Index> list;
        std::stringstream ss(value);
        std::string item;
        bool ok = true;
        while (std::getline(ss, item, ',')) {
          item = trim(item);
          std::uint64_t n = 0;
          if (!to_count(full, item, n)) {
            ok = false;
            break;
          }
          list.push_back(static_cast<Eigen::Index>(n));
        }
        if (ok && list.empty()) fail(full + ": empty list");
        if (ok && !list.empty()) cfg.N_list = list;
      } else if (key == "seed") {
        if (to_count(full, value, u)) cfg.seed = u;
      } else if (key == "trials") {
        if (to_count(full, value, u)) cfg.trials = u;
      } else if (key == "cloud_atoms") {
        if (to_count(full, value, u)) cfg.cloud_atoms = static_cast<Eigen::Index>(u);
      } else
        fail(full + ": unknown key");
    } else if (section == "output") {
      if (key == "directory")
        cfg.directory = value;
      else
        fail(full + ": unknown key");
    } else {
      fail("[" + section + "]: unknown section");
    }
  }

  void range_checks() {
    if (!saw_model) fail("missing [model] section");
    if (cfg.K < 1) violations.push_back("grid.K must be >= 1");
    if (!(cfg.T > 0.0)) violations.push_back("grid.T must be > 0");
    if (cfg.worlds < 1) violations.push_back("montecarlo.worlds must be >= 1");
    if (cfg.particles < 1) violations.push_back("montecarlo.particles must be >= 1");
    if (cfg.repetitions < 1 || cfg.repetitions > 512)
      violations.push_back("montecarlo.repetitions must be in [1, 512]");
    if (cfg.m_aux < 1) violations.push_back("montecarlo.M_aux must be >= 1");
    if (!(cfg.damping > 0.0 && cfg.damping <= 1.0))
      violations.push_back("solver.damping must be in (0, 1]");
    if (!(cfg.picard_tol > 0.0)) violations.push_back("solver.picard_tol must be > 0");
    if (cfg.max_picard < 1) violations.push_back("solver.max_picard must be >= 1");
    if (!(cfg.continuation_step > 0.0 && cfg.continuation_step <= 1.0))
      violations.push_back("solver.continuation_step must be in (0, 1]");
    if (!(cfg.continuation_min_step > 0.0))
      violations.push_back("solver.continuation_min_step must be > 0");
    for (Eigen::Index n : cfg.N_list)
      if (n < 1 || n > 32) violations.push_back("experiment.N_list entries must be in [1, 32]");
    if (cfg.trials < 1) violations.push_back("experiment.trials must be >= 1");
    if (cfg.cloud_atoms < 2) violations.push_back("experiment.cloud_atoms must be >= 2");
    if (cfg.x0_std < 0.0) violations.push_back("model.x0_std must be >= 0");
    if (static_cast<Eigen::Index>(cfg.m_aux) <
        *std::max_element(cfg.N_list.begin(), cfg.N_list.end()))
      violations.push_back("montecarlo.M_aux must cover the largest experiment.N_list entry");
  }
};

}  // namespace

RunConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();

  Parser p;
  p.cfg.raw_text = buffer.str();

  std::string section;
  std::string line;
  std::istringstream stream(p.cfg.raw_text);
  std::size_t lineno = 0;
  while (std::getline(stream, line)) {
    ++lineno;
    const std::size_t cut = line.find_first_of("#;");
    if (cut != std::string::npos) line = line.substr(0, cut);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        p.fail("line " + std::to_string(lineno) + ": malformed section header");
        continue;
      }
      section = trim(line.substr(1, line.size() - 2));
      if (section == "model") p.saw_model = true;
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      p.fail("line " + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    if (section.empty()) {
      p.fail("line " + std::to_string(lineno) + ": key outside any section");
      continue;
    }
    p.set(section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }

  p.range_checks();
  if (!p.violations.empty()) {
    std::string msg = "invalid configuration (" + path + "):";
    for (const std::string& v : p.violations) msg += "\n  " + v;
    throw ConfigError(msg);
  }
  return p.cfg;
}

}  // namespace mfg
