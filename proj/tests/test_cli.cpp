#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <vector>

#include "moco/config.hpp"
#include "moco/plots.hpp"

using namespace moco;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "moco-cli-test";
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Quartile oracle: explicit rank arithmetic on the sorted values, written
// independently of the plotting code.
double quartile_oracle(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const int n = static_cast<int>(v.size());
  const double rank = p * (n - 1);
  const int below = static_cast<int>(rank);
  const double frac = rank - below;
  if (below + 1 >= n) return v[n - 1];
  return (1.0 - frac) * v[below] + frac * v[below + 1];
}

}  // namespace

TEST_CASE("defaults parse back to themselves") {
  const RunConfig def = default_config();
  const RunConfig round = parse_config(config_text(def));
  CHECK(round.sections == def.sections);
  CHECK(round.schema_version == 1);
}

TEST_CASE("config rejects unknown keys and sections") {
  CHECK_THROWS_AS(parse_config("schema_version = 1\n[phantom]\nsides = 3\n"),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_config("schema_version = 1\n[phantasm]\nside = 3\n"),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_config("schema_version = 1\nside = 3\n"),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_config("[phantom]\nside = 3\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config("schema_version = 2\n"), std::invalid_argument);
}

TEST_CASE("config overrides defaults and converts types") {
  const RunConfig cfg = parse_config(
      "schema_version = 1\n"
      "# comment\n"
      "[phantom]\n"
      "side = 48   ; trailing comment\n"
      "sector_mbf = 1.0, 2.0\n"
      "[train]\n"
      "learning_rate = 1e-3\n"
      "rpca_as_input = true\n");
  CHECK(cfg.get_int("phantom", "side") == 48);
  CHECK(cfg.get_int("phantom", "n_frames") == 40);  // untouched default
  CHECK(cfg.get_list("phantom", "sector_mbf") == std::vector<double>{1.0, 2.0});
  CHECK(cfg.get_real("train", "learning_rate") == 1e-3);
  CHECK(cfg.get_flag("train", "rpca_as_input"));

  const PhantomConfig pc = phantom_config_from(cfg);
  CHECK(pc.side == 48);
  CHECK(pc.sector_mbf.size() == 2);
  const TrainConfig tc = train_config_from(cfg);
  CHECK(tc.learning_rate == 1e-3);
  CHECK(tc.rpca_as_input);
  CHECK(cfg.get_int("phantom", "dt") == 1);  // integral-valued real is fine
  CHECK_THROWS_AS(cfg.get_int("iterative", "step"), std::invalid_argument);
  CHECK_THROWS_AS(cfg.get("phantom", "missing"), std::invalid_argument);
}

TEST_CASE("net specs follow the stage topology with config overrides") {
  RunConfig cfg = default_config();
  cfg.set("net", "initial_channels", "8");
  cfg.set("net", "input_side", "64");
  cfg.set("net", "nonrigid_side", "48");
  const ConvNetSpec s1 = net_spec_from(cfg, 1);
  CHECK(s1.kind == NetKind::AFFINE_GLOBAL);
  CHECK(s1.n_blocks == 7);
  CHECK(s1.initial_channels == 8);
  CHECK(s1.input_side == 64);
  CHECK(net_spec_from(cfg, 2).n_blocks == 5);
  const ConvNetSpec s3 = net_spec_from(cfg, 3);
  CHECK(s3.kind == NetKind::NONRIGID);
  CHECK(s3.input_side == 48);
  CHECK_THROWS_AS(net_spec_from(cfg, 4), std::invalid_argument);
}

TEST_CASE("saved config echo reloads identically") {
  RunConfig cfg = default_config();
  cfg.set("phantom", "noise_sd", "0.02");
  const fs::path path = temp_dir() / "echo.ini";
  save_config(cfg, path);
  const RunConfig back = load_config(path);
  CHECK(back.sections == cfg.sections);
}

TEST_CASE("box statistics match the rank-arithmetic oracle") {
  std::vector<double> v;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-3.0, 5.0);
  for (int i = 0; i < 101; ++i) v.push_back(u(rng));
  const BoxStats b = box_stats(v);
  CHECK(b.q1 == doctest::Approx(quartile_oracle(v, 0.25)).epsilon(1e-12));
  CHECK(b.median == doctest::Approx(quartile_oracle(v, 0.5)).epsilon(1e-12));
  CHECK(b.q3 == doctest::Approx(quartile_oracle(v, 0.75)).epsilon(1e-12));
  CHECK(b.n == 101);
  CHECK(b.whisker_lo >= b.q1 - 1.5 * (b.q3 - b.q1) - 1e-12);
  CHECK(b.whisker_hi <= b.q3 + 1.5 * (b.q3 - b.q1) + 1e-12);
  CHECK_THROWS_AS(box_stats({}), std::invalid_argument);
}

TEST_CASE("boxplot svg carries one box per condition and exact metadata") {
  const fs::path dir = temp_dir();
  const fs::path csv = dir / "metrics.csv";
  {
    std::ofstream out(csv);
    out << "case,condition,metric,value\n";
    out.precision(17);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int c = 0; c < 20; ++c)
      for (int k = 0; k < 3; ++k)
        out << "case" << c << ",cond" << k << ",tic," << gauss(rng) + k << "\n";
  }
  const std::vector<fs::path> written = emit_plots(csv, dir / "plots");
  REQUIRE(written.size() == 1);
  const std::string svg = slurp(written[0]);

  int boxes = 0;
  for (size_t pos = 0; (pos = svg.find("class=\"box\"", pos)) != std::string::npos;
       ++pos)
    ++boxes;
  CHECK(boxes == 3);

  // Metadata quartiles against the oracle.
  const size_t meta_a = svg.find("<metadata id=\"box-stats\">");
  REQUIRE(meta_a != std::string::npos);
  const size_t json_a = svg.find('>', meta_a) + 1;
  const size_t json_b = svg.find("</metadata>");
  const std::string meta = svg.substr(json_a, json_b - json_a);
  for (int k = 0; k < 3; ++k) {
    std::vector<double> vals;
    std::mt19937_64 rng(3);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int c = 0; c < 20; ++c)
      for (int j = 0; j < 3; ++j) {
        const double v = gauss(rng) + j;
        if (j == k) vals.push_back(v);
      }
    char needle[64];
    std::snprintf(needle, sizeof needle, "\"group\":\"cond%d\"", k);
    CHECK(meta.find(needle) != std::string::npos);
    char q[64];
    std::snprintf(q, sizeof q, "%.17g", quartile_oracle(vals, 0.5));
    CHECK(meta.find(std::string("\"median\":") + q) != std::string::npos);
  }
}

TEST_CASE("plot emission rejects empty or malformed input") {
  const fs::path dir = temp_dir();
  const fs::path empty_csv = dir / "empty.csv";
  std::ofstream(empty_csv) << "case,condition,metric,value\n";
  CHECK_THROWS_AS(emit_plots(empty_csv, dir / "p"), std::invalid_argument);

  const fs::path bad_csv = dir / "bad.csv";
  std::ofstream(bad_csv) << "who,knows\n";
  CHECK_THROWS_AS(emit_plots(bad_csv, dir / "p"), std::invalid_argument);
  CHECK_THROWS_AS(emit_plots(dir / "missing.csv", dir / "p"), std::runtime_error);
  CHECK_THROWS_AS(write_boxplot_svg(dir / "x.svg", {}, "t"), std::invalid_argument);
}

TEST_CASE("line plot writes one polyline per curve") {
  const fs::path path = temp_dir() / "line.svg";
  write_lineplot_svg(path, {{"a", {0.0, 1.0, 0.5}}, {"b", {2.0, 1.5}}}, "curves");
  const std::string svg = slurp(path);
  int polylines = 0;
  for (size_t pos = 0; (pos = svg.find("<polyline", pos)) != std::string::npos; ++pos)
    ++polylines;
  CHECK(polylines == 2);
  CHECK_THROWS_AS(write_lineplot_svg(path, {{"a", {}}}, "t"), std::invalid_argument);
}
