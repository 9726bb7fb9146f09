#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "colanet/checkpoint.hpp"
#include "colanet/config.hpp"
#include "colanet/degradation.hpp"
#include "colanet/image_io.hpp"
#include "colanet/inference.hpp"
#include "colanet/metrics.hpp"
#include "colanet/training.hpp"

// Command-line front end: train, denoise, eval, attnmap, census.
namespace colanet {
inline namespace COLANET_PRECISION_NS {
namespace cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kIoFormat = 3, kNumeric = 4 };

/// Fixed four-decimal rendering used in every CSV; non-finite values print
/// as inf, -inf or nan.
inline std::string fixed4(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

inline bool is_image_path(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  return ext == ".pgm" || ext == ".ppm" || ext == ".pnm";
}

/// Netpbm files in a directory, sorted by file name.
inline std::vector<std::filesystem::path> list_images(const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: '" + dir + "'");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (entry.is_regular_file() && is_image_path(entry.path())) files.push_back(entry.path());
  }
  if (ec) throw IoError("cannot list '" + dir + "': " + ec.message());
  std::sort(files.begin(), files.end());
  return files;
}

/// A single file, or every image in a directory.
inline std::vector<std::filesystem::path> resolve_inputs(const std::string& path) {
  std::error_code ec;
  if (std::filesystem::is_directory(path, ec)) return list_images(path);
  return {path};
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << text;
  if (!f) throw IoError("write failed for '" + path + "'");
}

inline void ensure_directory(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

inline std::string loss_csv(const std::vector<LossRecord>& curve) {
  std::string s = "step,lr,loss\n";
  for (const auto& r : curve) s += std::to_string(r.step) + "," + fixed4(r.lr) + "," + fixed4(r.loss) + "\n";
  return s;
}

inline std::string eval_csv(const MetricReport& report) {
  std::string s = "file,psnr_db,ssim\n";
  for (const auto& img : report.images) s += img.name + "," + fixed4(img.psnr_db) + "," + fixed4(img.ssim) + "\n";
  s += "mean," + fixed4(report.mean_psnr()) + "," + fixed4(report.mean_ssim()) + "\n";
  return s;
}

inline std::string distance_csv(const Tensor& m) {
  std::string s;
  for (std::size_t i = 0; i < m.dim(0); ++i) {
    for (std::size_t j = 0; j < m.dim(1); ++j) {
      if (j) s += ",";
      s += fixed4(m[i * m.dim(1) + j]);
    }
    s += "\n";
  }
  return s;
}

inline std::string census_table(const CensusReport& r) {
  std::ostringstream s;
  for (const auto& [group, n] : r.groups) s << std::left << std::setw(24) << group << ' ' << n << '\n';
  char millions[32];
  std::snprintf(millions, sizeof millions, "%.2fM", static_cast<double>(r.total) / 1e6);
  s << std::left << std::setw(24) << "total" << ' ' << r.total << " (" << millions << ")\n";
  return s.str();
}

// ---------------------------------------------------------------------------
// Commands

struct TrainArgs {
  std::string config;
  std::string resume;
  std::optional<std::uint64_t> seed;
  std::optional<double> sigma;
  std::optional<std::size_t> steps;
  std::optional<std::string> ckpt, in, loss;
};

inline int train_command(const TrainArgs& a, std::ostream& out) {
  RunConfig rc;
  TrainState state;
  std::optional<ColaNet> model;
  if (!a.resume.empty()) {
    const Checkpoint ck = load_checkpoint(a.resume);
    rc = ck.config;
    model.emplace(restore_model(ck, &state));
  } else {
    if (a.config.empty()) throw ConfigError("train: --config or --resume is required");
    rc = load_run_config(a.config);
  }
  if (a.seed) rc.train.seed = *a.seed;
  if (a.sigma) rc.degradation.sigma = *a.sigma;
  if (a.steps) rc.train.max_steps = *a.steps;
  if (a.ckpt) rc.paths.checkpoint = *a.ckpt;
  if (a.in) rc.paths.train_dir = *a.in;
  if (a.loss) rc.paths.loss_csv = *a.loss;
  rc.validate();
  if (!model) model.emplace(rc.model, rc.train.seed);

  if (rc.paths.train_dir.empty()) throw ConfigError("train: paths.train_dir is not set");
  std::vector<Tensor> dataset;
  for (const auto& p : list_images(rc.paths.train_dir)) dataset.push_back(load_image(p.string()));

  const std::size_t period = rc.train.checkpoint_every;
  const auto curve = train(*model, dataset, rc.degradation, rc.train, state, 0,
                           [&](const LossRecord& r, const TrainState& s) {
                             if (period != 0 && r.step % period == 0) {
                               save_checkpoint(make_checkpoint(*model, rc, &s), rc.paths.checkpoint);
                             }
                             if (r.step % rc.train.steps_per_epoch == 0) {
                               out << "step " << r.step << "  lr " << fixed4(r.lr) << "  loss " << r.loss << '\n';
                             }
                           });
  save_checkpoint(make_checkpoint(*model, rc, &state), rc.paths.checkpoint);
  write_text(rc.paths.loss_csv, loss_csv(curve));
  out << "trained " << curve.size() << " steps on " << dataset.size() << " images; checkpoint "
      << rc.paths.checkpoint << ", loss curve " << rc.paths.loss_csv << '\n';
  return kOk;
}

struct DenoiseArgs {
  std::string ckpt, in, out;
  std::optional<std::size_t> tile;
  std::optional<double> sigma;
  std::optional<std::uint64_t> seed;
  std::string noisy_out;
};

inline int denoise_command(const DenoiseArgs& a, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  ColaNet model = restore_model(ck);
  const std::size_t tile = a.tile.value_or(ck.config.inference.tile);
  const std::size_t overlap = tile == 0 ? 0 : std::min(ck.config.inference.overlap, tile - 1);
  const auto inputs = resolve_inputs(a.in);
  const bool many = std::filesystem::is_directory(a.in);
  if (many) ensure_directory(a.out);
  if (many && !a.noisy_out.empty()) ensure_directory(a.noisy_out);
  const std::uint64_t seed = a.seed.value_or(ck.config.degradation.seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor image = load_image(inputs[k].string());
    if (a.sigma) {
      Rng rng(seed, k);
      // Synthetic inputs are quantized to 8 bits, like the noisy file written.
      image = decode_netpbm(encode_netpbm(add_awgn(image, *a.sigma, rng, ck.config.degradation.clip)));
      if (!a.noisy_out.empty()) {
        save_image(image, many ? (std::filesystem::path(a.noisy_out) / inputs[k].filename()).string() : a.noisy_out);
      }
    }
    const RestoreResult r = restore(model, image, tile, overlap);
    const std::string dest = many ? (std::filesystem::path(a.out) / inputs[k].filename()).string() : a.out;
    save_image(r.image, dest);
    out << inputs[k].string() << " -> " << dest << '\n';
  }
  return kOk;
}

struct EvalArgs {
  std::string ref, test, out;
};

inline int eval_command(const EvalArgs& a, std::ostream& out) {
  namespace fs = std::filesystem;
  const auto refs = resolve_inputs(a.ref);
  const bool dirs = fs::is_directory(a.ref);
  if (dirs != fs::is_directory(a.test)) throw ConfigError("eval: --ref and --test must both be files or directories");
  MetricReport report;
  for (const auto& ref_path : refs) {
    const fs::path test_path = dirs ? fs::path(a.test) / ref_path.filename() : fs::path(a.test);
    const Tensor ref = load_image(ref_path.string());
    const Tensor test = load_image(test_path.string());
    report.images.push_back(
        ImageScore{dirs ? ref_path.filename().string() : test_path.string(), psnr(ref, test), ssim(ref, test)});
  }
  const std::string csv = eval_csv(report);
  if (a.out.empty()) {
    out << csv;
  } else {
    write_text(a.out, csv);
    out << "mean psnr " << fixed4(report.mean_psnr()) << " dB, mean ssim " << fixed4(report.mean_ssim()) << '\n';
  }
  return kOk;
}

struct AttnArgs {
  std::string ckpt, in, out;
  std::optional<std::size_t> cab, tile;
};

inline int attnmap_command(const AttnArgs& a, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  ColaNet model = restore_model(ck);
  if (a.cab && *a.cab >= model.config().num_cab) {
    throw ConfigError("attnmap: --cab " + std::to_string(*a.cab) + " out of range, model has " +
                      std::to_string(model.config().num_cab) + " CABs");
  }
  const std::size_t tile = a.tile.value_or(ck.config.inference.tile);
  const std::size_t overlap = tile == 0 ? 0 : std::min(ck.config.inference.overlap, tile - 1);
  const Tensor image = load_image(a.in);
  const RestoreResult r = restore(model, image, tile, overlap);
  ensure_directory(a.out);
  const std::filesystem::path dir(a.out);

  std::string table = "cab,tile,y,x,heat\n";
  for (std::size_t c = 0; c < r.heat.size(); ++c) {
    for (std::size_t t = 0; t < r.tiles.size(); ++t) {
      table += std::to_string(c) + "," + std::to_string(t) + "," + std::to_string(r.tiles[t].y) + "," +
               std::to_string(r.tiles[t].x) + "," + fixed4(r.heat[c][t]) + "\n";
    }
    const std::string name = "heat_cab" + std::to_string(c) + ".pgm";
    save_image(render_heat(r.tiles, r.heat[c], image.dim(2), image.dim(3)), (dir / name).string());
  }
  write_text((dir / "heat.csv").string(), table);
  if (a.cab) {
    const std::string name = "distance_cab" + std::to_string(*a.cab) + ".csv";
    write_text((dir / name).string(), distance_csv(r.first_tile_distance[*a.cab]));
  }
  out << "wrote heat maps for " << r.heat.size() << " CABs over " << r.tiles.size() << " tiles to " << a.out << '\n';
  return kOk;
}

struct CensusArgs {
  std::string config, ckpt;
};

inline int census_command(const CensusArgs& a, std::ostream& out) {
  ModelConfig mc;
  if (!a.ckpt.empty()) {
    mc = load_checkpoint(a.ckpt).config.model;
  } else if (!a.config.empty()) {
    mc = load_run_config(a.config).model;
  }
  mc.validate();
  const ColaNet model(mc);
  out << census_table(param_census(model.weights()));
  return kOk;
}

// ---------------------------------------------------------------------------

template <typename F>
int guarded(F&& body, std::ostream& err) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIoFormat;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kIoFormat;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << '\n';
    return kIoFormat;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kFailure;
  }
}

/// Parses `args` (without the program name) and runs one command.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"COLA-Net image restoration"};
  app.name("colanet");
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a model; writes a checkpoint and a loss CSV");
  train_cmd->add_option("--config", ta.config, "run configuration file");
  train_cmd->add_option("--resume", ta.resume, "continue from a checkpoint");
  train_cmd->add_option("--seed", ta.seed, "training seed");
  train_cmd->add_option("--sigma", ta.sigma, "AWGN sigma on the 0-255 scale");
  train_cmd->add_option("--steps", ta.steps, "total optimizer steps (overrides the epoch budget)");
  train_cmd->add_option("--ckpt", ta.ckpt, "checkpoint output path");
  train_cmd->add_option("--in", ta.in, "directory of clean training images");
  train_cmd->add_option("--loss-csv", ta.loss, "loss curve output path");

  DenoiseArgs da;
  auto* denoise_cmd = app.add_subcommand("denoise", "restore an image or a directory of images");
  denoise_cmd->add_option("--ckpt", da.ckpt, "checkpoint")->required();
  denoise_cmd->add_option("--in", da.in, "input image or directory")->required();
  denoise_cmd->add_option("--out", da.out, "output image or directory")->required();
  denoise_cmd->add_option("--tile", da.tile, "tile edge, 0 for the whole image");
  denoise_cmd->add_option("--sigma", da.sigma, "add AWGN of this sigma before restoring");
  denoise_cmd->add_option("--seed", da.seed, "noise seed for --sigma");
  denoise_cmd->add_option("--noisy-out", da.noisy_out, "where to save the synthesized noisy input");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM of test images against references");
  eval_cmd->add_option("--ref", ea.ref, "reference image or directory")->required();
  eval_cmd->add_option("--test", ea.test, "test image or directory")->required();
  eval_cmd->add_option("--out", ea.out, "CSV output path (default: stdout)");

  AttnArgs aa;
  auto* attn_cmd = app.add_subcommand("attnmap", "per-CAB heat maps and distance matrices");
  attn_cmd->add_option("--ckpt", aa.ckpt, "checkpoint")->required();
  attn_cmd->add_option("--in", aa.in, "input image")->required();
  attn_cmd->add_option("--out", aa.out, "output directory")->required();
  attn_cmd->add_option("--cab", aa.cab, "also export this CAB's distance matrix");
  attn_cmd->add_option("--tile", aa.tile, "tile edge, 0 for the whole image");

  CensusArgs ca;
  auto* census_cmd = app.add_subcommand("census", "parameter breakdown of a model");
  census_cmd->add_option("--config", ca.config, "run configuration file");
  census_cmd->add_option("--ckpt", ca.ckpt, "checkpoint");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    err << "run 'colanet --help' for usage\n";
    return kUsage;
  }

  return guarded(
      [&]() -> int {
        if (*train_cmd) return train_command(ta, out);
        if (*denoise_cmd) return denoise_command(da, out);
        if (*eval_cmd) return eval_command(ea, out);
        if (*attn_cmd) return attnmap_command(aa, out);
        return census_command(ca, out);
      },
      err);
}

}  // namespace cli
}  // namespace COLANET_PRECISION_NS
}  // namespace colanet
