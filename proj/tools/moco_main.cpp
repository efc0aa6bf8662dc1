#include <CLI11.hpp>
#include <json.hpp>

#include <malloc.h>

#include <Eigen/Core>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "moco/config.hpp"
#include "moco/decompose.hpp"
#include "moco/evaluate.hpp"
#include "moco/phantom.hpp"
#include "moco/pipeline.hpp"
#include "moco/plots.hpp"
#include "moco/quantify.hpp"
#include "moco/series_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json affine_json(const moco::AffineParams& p) {
  return {{"a11", p.a11}, {"a12", p.a12}, {"a21", p.a21},
          {"a22", p.a22}, {"tx", p.tx},   {"ty", p.ty}};
}

moco::RunConfig load_or_default(const std::string& config_path) {
  return config_path.empty() ? moco::default_config() : moco::load_config(config_path);
}

std::string zero_pad(int v, int width) {
  std::ostringstream ss;
  ss.width(width);
  ss.fill('0');
  ss << v;
  return ss.str();
}

moco::PipelineWeights load_pipeline_weights(const fs::path& dir) {
  moco::PipelineWeights w;
  w.stage1 = moco::load_weights(dir / "stage1");
  w.stage2 = moco::load_weights(dir / "stage2");
  w.stage3 = moco::load_weights(dir / "stage3");
  return w;
}

int cmd_phantom(const std::string& config_path, std::uint64_t seed,
                const fs::path& out) {
  moco::RunConfig cfg = load_or_default(config_path);
  moco::PhantomConfig pc = moco::phantom_config_from(cfg);
  pc.seed = seed;
  const moco::PhantomOutput ph = moco::make_phantom(pc);

  fs::create_directories(out / "masks");
  moco::save_series(ph.series, out / "series");
  moco::save_series(ph.aif_series, out / "aif");
  for (int i = 0; i < ph.series.n_frames(); ++i) {
    moco::save_mask(ph.truth.myo_masks[i], out / "masks" / ("myo_" + zero_pad(i, 3)));
    moco::save_mask(ph.truth.blood_masks[i],
                    out / "masks" / ("blood_" + zero_pad(i, 3)));
  }

  json truth;
  truth["rv_insertion_angle"] = ph.truth.rv_insertion_angle;
  truth["peak_aif_frame"] = ph.truth.peak_aif_frame;
  truth["aif"] = std::vector<double>(ph.truth.aif.data(),
                                     ph.truth.aif.data() + ph.truth.aif.size());
  truth["transforms"] = json::array();
  for (const moco::AffineParams& p : ph.truth.transforms)
    truth["transforms"].push_back(affine_json(p));
  write_json(truth, out / "truth.json");

  moco::save_image(ph.truth.mbf, out / "mbf");

  cfg.set("phantom", "side", std::to_string(pc.side));  // echo resolved values
  moco::save_config(cfg, out / "config.ini");
  return 0;
}

int cmd_decompose(const fs::path& input, const std::string& config_path,
                  const fs::path& out) {
  const moco::RunConfig cfg = load_or_default(config_path);
  const moco::DynamicSeries series = moco::load_series(input);
  const std::vector<int> perf = series.indices_with_role(moco::FrameRole::PERF);
  if (perf.empty()) throw std::invalid_argument("decompose: no PERF frames");

  Eigen::MatrixXd m(perf.size(), series.width * series.height);
  for (size_t i = 0; i < perf.size(); ++i) {
    const moco::Image& f = series.frames[perf[i]];
    for (int r = 0; r < series.height; ++r)
      for (int c = 0; c < series.width; ++c) m(i, r * series.width + c) = f(r, c);
  }
  const double lambda =
      cfg.get_real("decompose", "lambda_scale") * moco::rpca_default_lambda(m);
  const moco::Decomposition d =
      moco::rpca(m, lambda, cfg.get_real("decompose", "tol"),
                 cfg.get_int("decompose", "max_iter"));

  // Saved as individual images: sparse components are signed, so the
  // non-negative series format does not apply.
  fs::create_directories(out / "lowrank");
  fs::create_directories(out / "sparse");
  for (size_t i = 0; i < perf.size(); ++i) {
    const std::string name = "frame_" + zero_pad(perf[i], 3);
    moco::save_image(moco::DynamicSeries::frame_from_row(d.low_rank.row(i),
                                                         series.height, series.width),
                     out / "lowrank" / name);
    moco::save_image(moco::DynamicSeries::frame_from_row(d.sparse.row(i),
                                                         series.height, series.width),
                     out / "sparse" / name);
  }
  write_json({{"lambda", lambda},
              {"rank_estimate", d.rank_estimate},
              {"iterations", d.iterations},
              {"residual", d.residual},
              {"converged", d.converged}},
             out / "report.json");
  moco::save_config(cfg, out / "config.ini");
  return 0;
}

int cmd_train(const std::vector<std::string>& series_paths, int stage,
              std::uint64_t seed, const std::string& config_path,
              const std::string& weights_dir, const fs::path& out) {
  moco::RunConfig cfg = load_or_default(config_path);
  std::vector<moco::DynamicSeries> collection;
  for (const std::string& p : series_paths) collection.push_back(moco::load_series(p));

  // Only the stages upstream of the one being trained are needed.
  std::optional<moco::PipelineWeights> weights;
  if (!weights_dir.empty() && stage > 1) {
    weights.emplace();
    weights->stage1 = moco::load_weights(fs::path(weights_dir) / "stage1");
    if (stage > 2)
      weights->stage2 = moco::load_weights(fs::path(weights_dir) / "stage2");
  }
  const moco::TrainingSets sets =
      moco::build_training_sets(collection, weights ? &*weights : nullptr,
                                moco::iterative_config_from(cfg), stage);
  const std::vector<moco::TrainSample>& dataset =
      stage == 1 ? sets.stage1 : stage == 2 ? sets.stage2 : sets.stage3;

  moco::TrainConfig tc = moco::train_config_from(cfg);
  tc.seed = seed;
  const moco::ConvNetSpec spec = moco::net_spec_from(cfg, stage);
  const moco::TrainResult result = moco::train_stage(
      stage, dataset, spec, tc, moco::AugmentConfig::for_stage(stage));

  fs::create_directories(out);
  moco::save_weights(result.weights, out / ("stage" + std::to_string(stage)),
                     "seed-" + std::to_string(seed));
  write_json({{"stage", stage},
              {"seed", seed},
              {"samples", dataset.size()},
              {"loss", result.loss_log}},
             out / ("train_log_stage" + std::to_string(stage) + ".json"));
  moco::save_config(cfg, out / "config.ini");
  return 0;
}

void write_transforms(const std::vector<moco::StageTransforms>& transforms,
                      const std::vector<int>& frame_indices, const fs::path& dir) {
  fs::create_directories(dir);
  for (size_t i = 0; i < transforms.size(); ++i) {
    const std::string stem = "frame_" + zero_pad(frame_indices[i], 3);
    moco::save_affine(transforms[i].affine1, dir / (stem + ".affine1.json"));
    moco::save_affine(transforms[i].affine2, dir / (stem + ".affine2.json"));
    moco::save_field(transforms[i].dense, dir / (stem + ".dense"));
  }
}

int cmd_register(const fs::path& input, const std::string& backend_name,
                 const std::string& weights_dir, std::uint64_t seed,
                 const std::string& config_path, const fs::path& out) {
  (void)seed;  // correction is deterministic; the seed is part of the contract
  const moco::RunConfig cfg = load_or_default(config_path);
  const moco::DynamicSeries series = moco::load_series(input);
  const moco::Backend backend = backend_name == "iterative"
                                    ? moco::Backend::ITERATIVE
                                    : moco::Backend::LEARNED;
  std::optional<moco::PipelineWeights> weights;
  if (backend == moco::Backend::LEARNED) {
    if (weights_dir.empty())
      throw std::invalid_argument("register: learned backend requires --weights");
    weights = load_pipeline_weights(weights_dir);
  }

  const auto t0 = std::chrono::steady_clock::now();
  moco::PipelineResult result =
      moco::run_pipeline(series, backend, weights ? &*weights : nullptr,
                         moco::iterative_config_from(cfg));

  // PD frames ride along when the learned backend is active.
  const std::vector<int> pd = series.indices_with_role(moco::FrameRole::PD);
  if (backend == moco::Backend::LEARNED && !pd.empty()) {
    const moco::DynamicSeries norm = moco::normalize_01(series);
    std::vector<moco::Image> pd_frames;
    for (int i : pd) pd_frames.push_back(series.frames[i]);
    const moco::AuxiliaryResult aux = moco::correct_auxiliary(
        pd_frames, norm.frames[result.reference_index], {}, backend, &*weights);
    for (size_t i = 0; i < pd.size(); ++i)
      result.corrected.frames[pd[i]] = aux.pd_corrected[i];
  }
  const double total_s = seconds_since(t0);

  fs::create_directories(out);
  moco::save_series(result.corrected, out / "corrected");
  write_transforms(result.stage_transforms, result.perf_indices, out / "transforms");
  write_json({{"backend", backend_name},
              {"reference_index", result.reference_index},
              {"stage1_s", result.timings.stage1_s},
              {"stage2_s", result.timings.stage2_s},
              {"stage3_s", result.timings.stage3_s},
              {"total_s", total_s}},
             out / "timings.json");
  moco::save_config(cfg, out / "config.ini");
  return 0;
}

Eigen::VectorXd load_curve(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<double> v;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    v.push_back(std::stod(line));
  }
  if (v.empty()) throw std::invalid_argument("empty curve file " + path.string());
  return Eigen::Map<Eigen::VectorXd>(v.data(), v.size());
}

int cmd_quantify(const fs::path& input, const fs::path& aif_path,
                 const fs::path& myo_path, double rv_angle,
                 const std::string& config_path, const fs::path& out) {
  const moco::RunConfig cfg = load_or_default(config_path);
  const moco::DynamicSeries corrected = moco::load_series(input);
  const Eigen::VectorXd aif = load_curve(aif_path);
  moco::Mask myo = moco::load_mask(myo_path);

  if (myo.n_labels() <= 1) {
    // Binary mask: label it with AHA segments around the mask centroid.
    double sr = 0.0, sc = 0.0;
    long n = 0;
    for (int r = 0; r < myo.labels.rows(); ++r)
      for (int c = 0; c < myo.labels.cols(); ++c)
        if (myo.labels(r, c) > 0) {
          sr += r;
          sc += c;
          ++n;
        }
    if (n == 0) throw std::invalid_argument("quantify: empty myocardium mask");
    const std::string level_name = cfg.get("quantify", "slice_level");
    const moco::SliceLevel level = level_name == "BASAL" ? moco::SliceLevel::BASAL
                                   : level_name == "MID" ? moco::SliceLevel::MID
                                   : level_name == "APICAL"
                                       ? moco::SliceLevel::APICAL
                                       : throw std::invalid_argument(
                                             "quantify: bad slice_level " + level_name);
    myo.labels = moco::aha_segments(myo, sr / n, sc / n, rv_angle, level);
  }

  const moco::PerfusionMap map =
      moco::perfusion_map(corrected, aif, myo, cfg.get_real("quantify", "dt"));

  fs::create_directories(out);
  moco::save_image(map.mbf, out / "mbf");

  // Saved as an image: AHA numbering is global (mid-slice segments are 7-12),
  // so the contiguous-label mask format does not fit.
  moco::save_image(map.segment_labels.cast<double>(), out / "labels");

  std::ofstream csv(out / "segments.csv");
  csv << "segment,mean,sd,n\n";
  csv.precision(17);
  for (const moco::SegmentStat& s : map.per_segment)
    csv << s.label << "," << s.mean << "," << s.sd << "," << s.n << "\n";
  moco::save_config(cfg, out / "config.ini");
  return 0;
}

int cmd_evaluate(const fs::path& cases_path, const fs::path& out) {
  std::ifstream in(cases_path);
  if (!in) throw std::runtime_error("cannot open " + cases_path.string());
  std::string line;
  if (!std::getline(in, line) || line != "case,corrected,uncorrected,myo_mask")
    throw std::invalid_argument(
        "evaluate: expected header case,corrected,uncorrected,myo_mask");

  fs::create_directories(out);
  std::ofstream csv(out / "metrics.csv");
  csv << "case,condition,metric,value\n";
  csv.precision(17);

  std::vector<double> corrected_tic, uncorrected_tic;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string case_id, corrected_path, uncorrected_path, myo_path;
    if (!std::getline(ss, case_id, ',') || !std::getline(ss, corrected_path, ',') ||
        !std::getline(ss, uncorrected_path, ',') || !std::getline(ss, myo_path))
      throw std::invalid_argument("evaluate: malformed row at line " +
                                  std::to_string(lineno));
    const moco::Mask myo = moco::load_mask(myo_path);
    const moco::RoiCircle roi = moco::build_roi(myo);
    const struct {
      const char* condition;
      std::string path;
    } conditions[] = {{"corrected", corrected_path}, {"uncorrected", uncorrected_path}};
    for (const auto& cond : conditions) {
      const moco::DynamicSeries series =
          moco::normalize_01(moco::load_series(cond.path));
      const double tic = moco::tic_smoothness(series, roi);
      csv << case_id << "," << cond.condition << ",tic_smoothness," << tic << "\n";
      (std::string(cond.condition) == "corrected" ? corrected_tic : uncorrected_tic)
          .push_back(tic);
      const std::vector<int> pd = series.indices_with_role(moco::FrameRole::PD);
      if (!pd.empty())
        csv << case_id << "," << cond.condition << ",pd_alignment_sd,"
            << moco::pd_alignment_sd(series.frames[pd[0]], myo) << "\n";
    }
  }
  csv.close();
  if (corrected_tic.empty()) throw std::invalid_argument("evaluate: no cases");

  json wilcoxon;
  if (corrected_tic.size() >= 5) {
    const auto to_vec = [](const std::vector<double>& v) {
      return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()).eval();
    };
    const moco::WilcoxonResult w =
        moco::wilcoxon_signed_rank(to_vec(corrected_tic), to_vec(uncorrected_tic));
    wilcoxon["tic_smoothness"] = {{"n", w.n}, {"statistic", w.statistic}, {"p", w.p}};
  } else {
    wilcoxon["note"] = "fewer than 5 cases; no test run";
  }
  write_json(wilcoxon, out / "wilcoxon.json");
  moco::emit_plots(out / "metrics.csv", out / "plots");
  return 0;
}

int cmd_plots(const fs::path& metrics_csv, const fs::path& out) {
  moco::emit_plots(metrics_csv, out);
  return 0;
}

int cmd_benchmark(const std::string& weights_dir, std::uint64_t seed, int side,
                  int frames, const fs::path& out) {
  if (weights_dir.empty())
    throw std::invalid_argument("benchmark: learned backend requires --weights");
  const moco::PipelineWeights weights = load_pipeline_weights(weights_dir);

  // 3 perfusion slices + the low-resolution AIF analog of the first slice.
  std::vector<moco::DynamicSeries> slices;
  moco::PhantomConfig pc;
  pc.side = side;
  pc.n_frames = frames;
  pc.n_pd = 0;
  pc.noise_sd = 0.01;
  for (int s = 0; s < 3; ++s) {
    pc.seed = seed + s;
    moco::PhantomOutput ph = moco::make_phantom(pc);
    if (s == 0) {
      moco::DynamicSeries aif = ph.aif_series;
      for (moco::FrameRole& r : aif.roles) r = moco::FrameRole::PERF;
      slices.push_back(aif);
    }
    slices.push_back(ph.series);
  }

  auto t0 = std::chrono::steady_clock::now();
  for (const moco::DynamicSeries& s : slices)
    moco::run_pipeline(s, moco::Backend::ITERATIVE);
  const double iterative_s = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  for (const moco::DynamicSeries& s : slices)
    moco::run_pipeline(s, moco::Backend::LEARNED, &weights);
  const double learned_s = seconds_since(t0);

  // Ablation: stage-1 inference with RPCA low-rank frames as network input
  // pays for the decomposition at run time; the proposed stage 1 does not.
  const int net_side = weights.stage1.spec.input_side;
  double ablation_stage1_s = 0.0, learned_stage1_s = 0.0;
  for (const moco::DynamicSeries& series : slices) {
    const moco::DynamicSeries norm = moco::normalize_01(series);
    const std::vector<int> perf = norm.indices_with_role(moco::FrameRole::PERF);
    const int ref = moco::select_reference(norm);

    t0 = std::chrono::steady_clock::now();
    const moco::Image fixed = moco::model_input(norm.frames[ref], net_side);
    for (int i : perf)
      if (i != ref)
        moco::net_forward(weights.stage1, fixed,
                          moco::model_input(norm.frames[i], net_side));
    learned_stage1_s += seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    Eigen::MatrixXd m(perf.size(), norm.width * norm.height);
    for (size_t i = 0; i < perf.size(); ++i)
      for (int r = 0; r < norm.height; ++r)
        for (int c = 0; c < norm.width; ++c)
          m(i, r * norm.width + c) = norm.frames[perf[i]](r, c);
    const moco::Decomposition d = moco::rpca(m, 3.0 * moco::rpca_default_lambda(m));
    const moco::Image low_ref = moco::model_input(
        moco::DynamicSeries::frame_from_row(d.low_rank.row(ref), norm.height,
                                            norm.width),
        net_side);
    for (size_t i = 0; i < perf.size(); ++i)
      if (static_cast<int>(i) != ref)
        moco::net_forward(weights.stage1, low_ref,
                          moco::model_input(
                              moco::DynamicSeries::frame_from_row(
                                  d.low_rank.row(i), norm.height, norm.width),
                              net_side));
    ablation_stage1_s += seconds_since(t0);
  }

  fs::create_directories(out);
  write_json({{"slices", slices.size()},
              {"frames", frames},
              {"side", side},
              {"iterative_s", iterative_s},
              {"learned_s", learned_s},
              {"speedup", iterative_s / learned_s},
              {"learned_stage1_s", learned_stage1_s},
              {"ablation_stage1_s", ablation_stage1_s},
              {"ablation_ratio", ablation_stage1_s / learned_stage1_s}},
             out / "timing.json");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // Large per-step temporaries thrash mmap otherwise.
  mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);

  CLI::App app{"Motion correction and quantification for dynamic contrast series"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker thread cap");

  std::string config_path, out_dir, input, weights_dir, backend{"iterative"};
  std::uint64_t seed = 0;

  CLI::App* phantom = app.add_subcommand("phantom", "generate a synthetic case");
  phantom->add_option("--config", config_path);
  phantom->add_option("--seed", seed)->required();
  phantom->add_option("--out", out_dir)->required();

  CLI::App* decompose = app.add_subcommand("decompose", "robust PCA of a series");
  decompose->add_option("--input", input)->required();
  decompose->add_option("--config", config_path);
  decompose->add_option("--out", out_dir)->required();

  std::vector<std::string> series_paths;
  int stage = 1;
  CLI::App* train = app.add_subcommand("train", "train one registration stage");
  train->add_option("--series", series_paths)->required();
  train->add_option("--stage", stage)->check(CLI::Range(1, 3))->required();
  train->add_option("--seed", seed)->required();
  train->add_option("--config", config_path);
  train->add_option("--weights", weights_dir);
  train->add_option("--out", out_dir)->required();

  CLI::App* reg = app.add_subcommand("register", "run the correction pipeline");
  reg->add_option("--input", input)->required();
  reg->add_option("--backend", backend)
      ->check(CLI::IsMember({"iterative", "learned"}));
  reg->add_option("--weights", weights_dir);
  reg->add_option("--seed", seed)->required();
  reg->add_option("--config", config_path);
  reg->add_option("--out", out_dir)->required();

  std::string aif_path, myo_path;
  double rv_angle = 0.0;
  CLI::App* quantify = app.add_subcommand("quantify", "pixel-wise blood flow");
  quantify->add_option("--input", input)->required();
  quantify->add_option("--aif", aif_path)->required();
  quantify->add_option("--myo", myo_path)->required();
  quantify->add_option("--rv-angle", rv_angle);
  quantify->add_option("--config", config_path);
  quantify->add_option("--out", out_dir)->required();

  std::string cases_path;
  CLI::App* evaluate = app.add_subcommand("evaluate", "registration quality metrics");
  evaluate->add_option("--cases", cases_path)->required();
  evaluate->add_option("--out", out_dir)->required();

  std::string metrics_path;
  CLI::App* plots = app.add_subcommand("plots", "boxplots from a metrics CSV");
  plots->add_option("--metrics", metrics_path)->required();
  plots->add_option("--out", out_dir)->required();

  int bench_side = 64, bench_frames = 71;
  CLI::App* benchmark = app.add_subcommand("benchmark", "backend timing comparison");
  benchmark->add_option("--weights", weights_dir);
  benchmark->add_option("--seed", seed);
  benchmark->add_option("--side", bench_side);
  benchmark->add_option("--frames", bench_frames);
  benchmark->add_option("--out", out_dir)->required();

  CLI11_PARSE(app, argc, argv);
  Eigen::setNbThreads(threads);

  try {
    if (*phantom) return cmd_phantom(config_path, seed, out_dir);
    if (*decompose) return cmd_decompose(input, config_path, out_dir);
    if (*train)
      return cmd_train(series_paths, stage, seed, config_path, weights_dir, out_dir);
    if (*reg)
      return cmd_register(input, backend, weights_dir, seed, config_path, out_dir);
    if (*quantify)
      return cmd_quantify(input, aif_path, myo_path, rv_angle, config_path, out_dir);
    if (*evaluate) return cmd_evaluate(cases_path, out_dir);
    if (*plots) return cmd_plots(metrics_path, out_dir);
    if (*benchmark)
      return cmd_benchmark(weights_dir, seed, bench_side, bench_frames, out_dir);
  } catch (const std::exception& e) {
    json err;
    err["error"] = e.what();
    err["command"] = app.get_subcommands().empty()
                         ? ""
                         : app.get_subcommands().front()->get_name();
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
