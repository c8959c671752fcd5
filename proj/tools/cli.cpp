#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "config_json.hpp"
#include "xhved/checkpoint.hpp"
#include "xhved/dataset.hpp"
#include "xhved/errors.hpp"
#include "xhved/eval_grid.hpp"
#include "xhved/gradcheck_suites.hpp"
#include "xhved/nifti.hpp"
#include "xhved/phantom.hpp"
#include "xhved/trainer.hpp"

#ifndef XHVED_VERSION
#define XHVED_VERSION "0.0.0"
#endif

namespace xhved::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCheckpointFile = "checkpoint.xhvd";
constexpr const char* kManifestFile = "manifest.json";

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

json manifest(const std::string& command, const std::string& config_path, const TrainConfig& cfg,
              std::uint64_t seed, const json& artifacts) {
  return json{{"tool", "xhved"},
              {"version", XHVED_VERSION},
              {"command", command},
              {"config_path", config_path},
              {"config", to_json(cfg)},
              {"seed", seed},
              {"artifacts", artifacts}};
}

void write_manifest(const fs::path& dir, const json& m) { write_text(dir / kManifestFile, m.dump(2) + "\n"); }

XhvedModel<float> load_model(const fs::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  XhvedModel<float> model(ckpt.model);
  apply_parameters(ckpt, model);
  return model;
}

TrainConfig config_of(const ModelConfig& m) {
  TrainConfig c;
  c.seed = m.seed;
  c.save_attention = m.save_attention;
  c.vila = m.vila;
  c.sfeca = m.sfeca;
  return c;
}

// Modality images from --in: one file per present modality (in FLAIR, T1,
// T1c, T2 order) or all four. Absent modalities are zeroed.
Volume read_inputs(const std::vector<std::string>& files, ModalitySubset subset) {
  const auto present = subset.modalities();
  require(files.size() == present.size() || files.size() == kNumModalities,
          "--in: expected " + std::to_string(present.size()) + " or 4 files, got " +
              std::to_string(files.size()));
  std::vector<std::pair<Modality, Volume>> loaded;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const Modality m = files.size() == kNumModalities ? kAllModalities[i] : present[i];
    loaded.emplace_back(m, nifti::read_nifti1(files[i]));
  }
  const auto& first = loaded.front().second;
  const std::size_t D = first.data.dim(2), H = first.data.dim(3), W = first.data.dim(4);
  const std::size_t n = D * H * W;
  Volume v{Tensor<float>(Shape{1, kNumModalities, D, H, W}), first.spacing, {}};
  for (Modality m : kAllModalities) v.roles.push_back(modality_role(m));
  for (const auto& [m, vol] : loaded) {
    require(vol.data.numel() == n, "--in: input volumes differ in extent");
    if (!subset.has(m)) continue;
    std::copy_n(vol.data.data().data(), n, v.data.data().data() + static_cast<std::size_t>(m) * n);
  }
  return normalize_intensities(v, subset);
}

ModelOutput<float> infer(const XhvedModel<float>& model, const Volume& input, ModalitySubset subset) {
  const auto& e = model.config().extent;
  require(input.data.dim(2) == e[0] && input.data.dim(3) == e[1] && input.data.dim(4) == e[2],
          "input extent " + shape_str(input.data.shape()) + " does not match the checkpoint grid");
  NoGradGuard guard;
  return model.forward(input.data, subset, LatentMode::mean, nullptr);
}

struct Options {
  // generate-phantoms
  std::size_t count = 0;
  std::size_t extent = 64;
  std::uint64_t seed = 0;
  // train
  std::string config, data, out, phase = "both", resume;
  std::optional<std::uint64_t> seed_override;
  bool no_save_attention = false, no_vila = false, no_sfeca = false;
  // eval / segment / reconstruct
  std::string checkpoint, predictor = "model", subset;
  std::vector<std::string> inputs;
  // gradcheck
  std::string module;
  std::size_t seeds = 20;
};

int cmd_generate(const Options& o, std::ostream& out) {
  require(o.count >= 1, "--count must be >= 1");
  require(o.extent >= 8 && o.extent % 8 == 0, "--extent must be a positive multiple of 8");
  const fs::path dir = o.out;
  ensure_dir(dir);
  const auto vols = generate_phantom_set(o.count, {o.extent, o.extent, o.extent}, o.seed);
  json cases = json::array();
  for (std::size_t i = 0; i < vols.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "case_%04zu", i);
    write_case_dir(vols[i], dir / name);
    cases.push_back(name);
  }
  TrainConfig cfg;
  cfg.seed = o.seed;
  json m = manifest("generate-phantoms", "", cfg, o.seed, {{"cases", cases}});
  m["count"] = o.count;
  m["extent"] = {o.extent, o.extent, o.extent};
  write_manifest(dir, m);
  out << "wrote " << vols.size() << " phantoms to " << dir.string() << "\n";
  return 0;
}

int cmd_train(const Options& o, std::ostream& out) {
  TrainConfig cfg = o.config.empty() ? TrainConfig{} : load_train_config(o.config);
  if (o.seed_override) cfg.seed = *o.seed_override;
  if (o.no_save_attention) cfg.save_attention = false;
  if (o.no_vila) cfg.vila = false;
  if (o.no_sfeca) cfg.sfeca = false;
  cfg.validate();
  const Phase only = o.phase == "both" ? Phase::joint : parse_phase(o.phase);
  auto cases = load_dataset(o.data);
  require(!cases.empty(), "no cases found under " + o.data);

  const fs::path dir = o.out;
  ensure_dir(dir);
  std::optional<Trainer> trainer;
  if (o.resume.empty()) trainer.emplace(cfg, std::move(cases));
  else trainer.emplace(cfg, std::move(cases), load_checkpoint(o.resume));

  std::ofstream log(dir / "train_log.csv", std::ios::trunc);
  if (!log) throw IoError("cannot write " + (dir / "train_log.csv").string());
  log << kTrainLogHeader << '\n';
  if (o.phase == "both" || only == Phase::pretrain) trainer->run(Phase::pretrain, cfg.pretrain_steps, &log);
  if (o.phase == "both" || only == Phase::joint) trainer->run(Phase::joint, cfg.train_steps, &log);
  log.close();

  save_checkpoint(trainer->checkpoint(), dir / kCheckpointFile);
  json m = manifest("train", o.config, cfg, cfg.seed,
                    {{"checkpoint", (dir / kCheckpointFile).string()},
                     {"log", (dir / "train_log.csv").string()}});
  m["data"] = o.data;
  m["phase"] = o.phase;
  m["resume"] = o.resume;
  m["steps_done"] = trainer->steps_done();
  write_manifest(dir, m);
  out << "trained " << trainer->steps_done() << " steps; checkpoint " << (dir / kCheckpointFile).string() << "\n";
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const auto cases = load_dataset(o.data);
  require(!cases.empty(), "no cases found under " + o.data);
  std::optional<XhvedModel<float>> model;
  std::unique_ptr<Predictor> predictor;
  TrainConfig cfg;
  if (o.predictor == "model") {
    require(!o.checkpoint.empty(), "eval: --checkpoint is required for the model predictor");
    model.emplace(load_model(o.checkpoint));
    cfg = config_of(model->config());
    predictor = std::make_unique<ModelPredictor>(*model);
  } else if (o.predictor == "oracle") {
    predictor = std::make_unique<OraclePredictor>();
  } else {
    predictor = std::make_unique<ZeroPredictor>();
  }
  const auto grid = subset_eval_grid(*predictor, cases);
  const fs::path csv = o.out;
  if (csv.has_parent_path()) ensure_dir(csv.parent_path());
  write_text(csv, grid.to_csv());
  const fs::path dir = csv.has_parent_path() ? csv.parent_path() : fs::path(".");
  json m = manifest("eval", "", cfg, cfg.seed, {{"grid", csv.string()}});
  m["checkpoint"] = o.checkpoint;
  m["data"] = o.data;
  m["predictor"] = o.predictor;
  m["missing_modality_psnr"] = missing_modality_psnr(grid);
  write_text(dir / (csv.stem().string() + ".manifest.json"), m.dump(2) + "\n");
  out << grid.to_csv();
  return 0;
}

int cmd_segment(const Options& o, std::ostream& out) {
  const auto subset = ModalitySubset::parse(o.subset);
  const auto model = load_model(o.checkpoint);
  const Volume input = read_inputs(o.inputs, subset);
  const auto result = infer(model, input, subset);
  const auto e = model.config().extent;
  const std::size_t n = e[0] * e[1] * e[2];
  const auto masks = enforce_nesting(result.seg.data(), e);
  // nested label map: 1 = WT only, 2 = TC without ET, 3 = ET
  Volume seg{Tensor<float>(Shape{1, 1, e[0], e[1], e[2]}), input.spacing, {ChannelRole::generic}};
  for (std::size_t i = 0; i < n; ++i)
    seg.data.data()[i] = static_cast<float>(masks.regions[0].voxels[i] + masks.regions[1].voxels[i] +
                                            masks.regions[2].voxels[i]);
  const fs::path path = o.out;
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  nifti::write_nifti1(seg, path);
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  json m = manifest("segment", "", config_of(model.config()), model.config().seed, {{"segmentation", path.string()}});
  m["checkpoint"] = o.checkpoint;
  m["inputs"] = o.inputs;
  m["subset"] = subset.mask_string();
  write_text(dir / (path.stem().string() + ".manifest.json"), m.dump(2) + "\n");
  out << "WT " << masks.regions[0].count() << " TC " << masks.regions[1].count() << " ET "
      << masks.regions[2].count() << " voxels\n";
  return 0;
}

int cmd_reconstruct(const Options& o, std::ostream& out) {
  const auto subset = ModalitySubset::parse(o.subset);
  const auto model = load_model(o.checkpoint);
  const Volume input = read_inputs(o.inputs, subset);
  const auto result = infer(model, input, subset);
  const auto e = model.config().extent;
  const std::size_t n = e[0] * e[1] * e[2];
  const fs::path dir = o.out;
  ensure_dir(dir);
  json files = json::array();
  for (Modality m : kAllModalities) {
    Volume v{Tensor<float>(Shape{1, 1, e[0], e[1], e[2]}), input.spacing, {ChannelRole::generic}};
    std::copy_n(result.recon.data().data() + static_cast<std::size_t>(m) * n, n, v.data.data().data());
    const fs::path p = dir / channel_file_name(modality_role(m));
    nifti::write_nifti1(v, p);
    files.push_back(p.string());
  }
  json m = manifest("reconstruct", "", config_of(model.config()), model.config().seed, {{"reconstructions", files}});
  m["checkpoint"] = o.checkpoint;
  m["inputs"] = o.inputs;
  m["subset"] = subset.mask_string();
  write_manifest(dir, m);
  out << "wrote 4 reconstructed modalities to " << dir.string() << "\n";
  return 0;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  GradcheckOptions g;
  g.seeds = o.seeds;
  const auto results = run_gradcheck(o.module, g);
  bool ok = true;
  for (const auto& r : results) {
    out << format_suite(r) << "\n";
    ok = ok && r.pass();
  }
  out << (ok ? "all gradient checks passed" : "gradient check FAILED") << "\n";
  return ok ? 0 : 1;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"xhved: hetero-modal brain tumor segmentation with missing modalities", "xhved"};
  app.set_version_flag("--version", XHVED_VERSION);
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("generate-phantoms", "Write synthetic phantom cases");
  gen->add_option("--count", o.count, "Number of phantoms")->required();
  gen->add_option("--out", o.out, "Output directory")->required();
  gen->add_option("--seed", o.seed, "Seed");
  gen->add_option("--extent", o.extent, "Voxels per axis (multiple of 8)");

  auto* train = app.add_subcommand("train", "Train a model on a case directory");
  train->add_option("--config", o.config, "TrainConfig JSON file");
  train->add_option("--data", o.data, "Dataset directory")->required();
  train->add_option("--out", o.out, "Output directory")->required();
  train->add_option("--phase", o.phase, "pretrain, joint or both")
      ->check(CLI::IsMember({"pretrain", "joint", "both"}));
  train->add_option("--resume", o.resume, "Checkpoint to resume from");
  train->add_option("--seed", o.seed_override, "Override the config seed");
  train->add_flag("--no-save-attention", o.no_save_attention, "Disable spatial attention in the encoder");
  train->add_flag("--no-vila", o.no_vila, "Disable the bottleneck ViLA module");
  train->add_flag("--no-sfeca", o.no_sfeca, "Disable the decoder exchange blocks");

  auto* eval = app.add_subcommand("eval", "Score every modality subset");
  eval->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
  eval->add_option("--data", o.data, "Dataset directory")->required();
  eval->add_option("--out", o.out, "Output CSV")->required();
  eval->add_option("--predictor", o.predictor, "model, oracle or zero")
      ->check(CLI::IsMember({"model", "oracle", "zero"}));

  auto* segment = app.add_subcommand("segment", "Segment one subject");
  segment->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  segment->add_option("--in", o.inputs, "Modality NIfTI files")->required();
  segment->add_option("--subset", o.subset, "Available modalities, e.g. 1011 or fl,t1c,t2")->required();
  segment->add_option("--out", o.out, "Output label NIfTI")->required();

  auto* recon = app.add_subcommand("reconstruct", "Reconstruct all modalities of one subject");
  recon->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  recon->add_option("--in", o.inputs, "Modality NIfTI files")->required();
  recon->add_option("--subset", o.subset, "Available modalities, e.g. 1011 or fl,t1c,t2")->required();
  recon->add_option("--out", o.out, "Output directory")->required();

  auto* grad = app.add_subcommand("gradcheck", "Run the finite-difference gradient suites");
  grad->add_option("--module", o.module, "Module or block name");
  grad->add_option("--seeds", o.seeds, "Seeds per block");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << XHVED_VERSION << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*gen) return cmd_generate(o, out);
    if (*train) return cmd_train(o, out);
    if (*eval) return cmd_eval(o, out);
    if (*segment) return cmd_segment(o, out);
    if (*recon) return cmd_reconstruct(o, out);
    if (*grad) return cmd_gradcheck(o, out);
  } catch (const ContractViolation& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    err << "error: invalid " << e.field() << ": " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}

}  // namespace xhved::cli
