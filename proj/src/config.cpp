#include "moco/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace moco {

namespace {

struct KeyDefault {
  const char* section;
  const char* key;
  const char* value;
};

// The full schema; parsing rejects anything not listed here.
const KeyDefault kSchema[] = {
    {"phantom", "side", "128"},
    {"phantom", "n_frames", "40"},
    {"phantom", "n_pd", "2"},
    {"phantom", "dt", "1.0"},
    {"phantom", "bolus_amplitude", "1.0"},
    {"phantom", "bolus_onset", "4.0"},
    {"phantom", "bolus_alpha", "3.0"},
    {"phantom", "bolus_beta", "0.5"},
    {"phantom", "sector_mbf", "2.5, 2.5, 2.5, 2.5, 2.5, 2.5"},
    {"phantom", "tissue_width", "4.0"},
    {"phantom", "tissue_decay", "1.5"},
    {"phantom", "tissue_delay", "2.0"},
    {"phantom", "motion_translation", "8.0"},
    {"phantom", "motion_rotation", "0.1"},
    {"phantom", "motion_period", "20"},
    {"phantom", "motion_phase", "0.0"},
    {"phantom", "motion_direction", "0.6"},
    {"phantom", "noise_sd", "0.0"},
    {"decompose", "lambda_scale", "1.0"},
    {"decompose", "tol", "1e-7"},
    {"decompose", "max_iter", "200"},
    {"iterative", "levels", "3"},
    {"iterative", "step", "0.05"},
    {"iterative", "max_iters", "100"},
    {"iterative", "tol", "1e-6"},
    {"iterative", "lncc_kernel", "19"},
    {"iterative", "bending_weight", "10.0"},
    {"train", "learning_rate", "1e-5"},
    {"train", "batch_size", "16"},
    {"train", "steps", "100"},
    {"train", "rpca_as_input", "0"},
    {"net", "initial_channels", "16"},
    {"net", "input_side", "128"},
    {"net", "nonrigid_side", "96"},
    {"quantify", "dt", "1.0"},
    {"quantify", "slice_level", "MID"},
};

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

bool known_section(const std::string& section) {
  for (const KeyDefault& d : kSchema)
    if (section == d.section) return true;
  return false;
}

bool known_key(const std::string& section, const std::string& key) {
  for (const KeyDefault& d : kSchema)
    if (section == d.section && key == d.key) return true;
  return false;
}

}  // namespace

const std::string& RunConfig::get(const std::string& section,
                                  const std::string& key) const {
  const auto s = sections.find(section);
  if (s != sections.end()) {
    const auto k = s->second.find(key);
    if (k != s->second.end()) return k->second;
  }
  throw std::invalid_argument("config: missing key " + section + "." + key);
}

double RunConfig::get_real(const std::string& section, const std::string& key) const {
  const std::string& v = get(section, key);
  size_t pos = 0;
  const double x = std::stod(v, &pos);
  if (trim(v.substr(pos)) != "")
    throw std::invalid_argument("config: " + section + "." + key +
                                " is not a number: " + v);
  return x;
}

int RunConfig::get_int(const std::string& section, const std::string& key) const {
  const double x = get_real(section, key);
  const int i = static_cast<int>(x);
  if (x != i)
    throw std::invalid_argument("config: " + section + "." + key +
                                " is not an integer");
  return i;
}

bool RunConfig::get_flag(const std::string& section, const std::string& key) const {
  const std::string& v = get(section, key);
  if (v == "0" || v == "false") return false;
  if (v == "1" || v == "true") return true;
  throw std::invalid_argument("config: " + section + "." + key +
                              " must be 0/1/true/false");
}

std::vector<double> RunConfig::get_list(const std::string& section,
                                        const std::string& key) const {
  const std::string& v = get(section, key);
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty())
      throw std::invalid_argument("config: empty entry in " + section + "." + key);
    size_t pos = 0;
    out.push_back(std::stod(item, &pos));
    if (trim(item.substr(pos)) != "")
      throw std::invalid_argument("config: bad entry in " + section + "." + key +
                                  ": " + item);
  }
  if (out.empty())
    throw std::invalid_argument("config: empty list " + section + "." + key);
  return out;
}

void RunConfig::set(const std::string& section, const std::string& key,
                    const std::string& value) {
  if (!known_key(section, key))
    throw std::invalid_argument("config: unknown key " + section + "." + key);
  sections[section][key] = value;
}

RunConfig default_config() {
  RunConfig cfg;
  for (const KeyDefault& d : kSchema) cfg.sections[d.section][d.key] = d.value;
  return cfg;
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg = default_config();
  std::istringstream in(text);
  std::string line, section;
  bool saw_version = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::invalid_argument("config: malformed section header at line " +
                                    std::to_string(lineno));
      section = trim(line.substr(1, line.size() - 2));
      if (!known_section(section))
        throw std::invalid_argument("config: unknown section [" + section + "]");
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected key = value at line " +
                                  std::to_string(lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) {
      if (key != "schema_version")
        throw std::invalid_argument("config: unknown top-level key " + key);
      cfg.schema_version = std::stoi(value);
      saw_version = true;
      continue;
    }
    if (!known_key(section, key))
      throw std::invalid_argument("config: unknown key " + section + "." + key);
    cfg.sections[section][key] = value;
  }
  if (!saw_version) throw std::invalid_argument("config: missing schema_version");
  if (cfg.schema_version != 1)
    throw std::invalid_argument("config: unsupported schema_version " +
                                std::to_string(cfg.schema_version));
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_text(const RunConfig& config) {
  std::ostringstream out;
  out << "schema_version = " << config.schema_version << "\n";
  for (const auto& [section, keys] : config.sections) {
    out << "\n[" << section << "]\n";
    for (const auto& [key, value] : keys) out << key << " = " << value << "\n";
  }
  return out.str();
}

void save_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("config: cannot write " + path.string());
  out << config_text(config);
}

PhantomConfig phantom_config_from(const RunConfig& config) {
  PhantomConfig p;
  p.side = config.get_int("phantom", "side");
  p.n_frames = config.get_int("phantom", "n_frames");
  p.n_pd = config.get_int("phantom", "n_pd");
  p.dt = config.get_real("phantom", "dt");
  p.bolus_amplitude = config.get_real("phantom", "bolus_amplitude");
  p.bolus_onset = config.get_real("phantom", "bolus_onset");
  p.bolus_alpha = config.get_real("phantom", "bolus_alpha");
  p.bolus_beta = config.get_real("phantom", "bolus_beta");
  p.sector_mbf = config.get_list("phantom", "sector_mbf");
  p.tissue_width = config.get_real("phantom", "tissue_width");
  p.tissue_decay = config.get_real("phantom", "tissue_decay");
  p.tissue_delay = config.get_real("phantom", "tissue_delay");
  p.motion_translation = config.get_real("phantom", "motion_translation");
  p.motion_rotation = config.get_real("phantom", "motion_rotation");
  p.motion_period = config.get_int("phantom", "motion_period");
  p.motion_phase = config.get_real("phantom", "motion_phase");
  p.motion_direction = config.get_real("phantom", "motion_direction");
  p.noise_sd = config.get_real("phantom", "noise_sd");
  return p;
}

IterativeConfig iterative_config_from(const RunConfig& config) {
  IterativeConfig c;
  c.levels = config.get_int("iterative", "levels");
  c.step = config.get_real("iterative", "step");
  c.max_iters = config.get_int("iterative", "max_iters");
  c.tol = config.get_real("iterative", "tol");
  c.lncc_kernel = config.get_int("iterative", "lncc_kernel");
  c.bending_weight = config.get_real("iterative", "bending_weight");
  return c;
}

TrainConfig train_config_from(const RunConfig& config) {
  TrainConfig t;
  t.learning_rate = config.get_real("train", "learning_rate");
  t.batch_size = config.get_int("train", "batch_size");
  t.steps = config.get_int("train", "steps");
  t.rpca_as_input = config.get_flag("train", "rpca_as_input");
  return t;
}

ConvNetSpec net_spec_from(const RunConfig& config, int stage) {
  const int channels = config.get_int("net", "initial_channels");
  ConvNetSpec spec;
  switch (stage) {
    case 1: spec = affine_global_spec(channels); break;
    case 2: spec = affine_local_spec(channels); break;
    case 3: spec = nonrigid_spec(channels); break;
    default: throw std::invalid_argument("config: stage must be 1, 2 or 3");
  }
  spec.input_side = stage == 3 ? config.get_int("net", "nonrigid_side")
                               : config.get_int("net", "input_side");
  spec.validate();
  return spec;
}

}  // namespace moco
