#pragma once

// The `allnet` command-line tool: split, stats, train, eval, gradcheck and
// predict. Each cmd_* takes a resolved RunConfig and writes its report to
// `out`; run() does argument parsing and maps errors to exit codes
// (0 ok, 1 usage, 2 data, 3 numeric, 4 I/O).

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "backbones.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "datapipe.hpp"
#include "gradcheck.hpp"
#include "io.hpp"
#include "metrics.hpp"
#include "trainer.hpp"

namespace allnet::cli {

namespace fs = std::filesystem;

inline void echo_config(const RunConfig& rc, std::ostream& out) { out << "# effective config\n" << rc.text(); }

/// data.root if set; otherwise the directory of data.manifest, or of
/// `manifest` when there is no data.manifest.
inline fs::path image_root(const RunConfig& rc, const fs::path& manifest) {
  if (rc.has("data.root")) return rc.str("data.root");
  const fs::path base = rc.has("data.manifest") ? fs::path(rc.str("data.manifest")) : manifest;
  return base.parent_path().empty() ? fs::path(".") : base.parent_path();
}

inline fs::path require_path(const RunConfig& rc, const std::string& key) {
  if (!rc.has(key)) throw UsageError(key + " is required");
  return rc.str(key);
}

inline std::size_t input_size(const AllNetConfig& g) { return g.height; }

inline Graph build_graph(const RunConfig& rc) {
  const AllNetConfig g = graph_config(rc);
  return build_allnet(g, rc.u64("seed") + seed_offset::init);
}

inline int cmd_split(const RunConfig& rc, std::ostream& out) {
  const fs::path manifest_path = require_path(rc, "data.manifest");
  const Manifest m = load_manifest(manifest_path);
  SplitSpec spec;
  const std::vector<double> ratios = rc.reals("data.ratios");
  if (ratios.size() != 3) throw UsageError("data.ratios: expected three comma-separated values");
  std::copy(ratios.begin(), ratios.end(), spec.ratios.begin());
  spec.seed = rc.u64("seed") + seed_offset::split;
  const SplitResult s = split(m, spec);
  const fs::path dir = rc.str("split.out_dir");
  fs::create_directories(dir);
  save_manifest(dir / "train.csv", s.train);
  save_manifest(dir / "val.csv", s.val);
  save_manifest(dir / "test.csv", s.test);
  out << s.train.size() << ' ' << s.val.size() << ' ' << s.test.size() << '\n';
  return 0;
}

inline StandardizationStats training_stats(const RunConfig& rc, const Manifest& train, const ImageSource& source,
                                           std::size_t side) {
  if (rc.has("data.stats")) return parse_stats(io::read_text(rc.str("data.stats")), rc.str("data.stats"));
  return compute_stats(train, source, side, side);
}

inline int cmd_stats(const RunConfig& rc, std::ostream& out) {
  const fs::path train_path = require_path(rc, "data.train");
  const Manifest train = load_manifest(train_path);
  const DirectoryImageSource source(image_root(rc, train_path));
  const std::size_t side = input_size(graph_config(rc));
  const std::string text = format_stats(compute_stats(train, source, side, side));
  const fs::path dest = rc.str("stats.out");
  if (dest.has_parent_path()) fs::create_directories(dest.parent_path());
  io::write_file(dest, text);
  out << text;
  return 0;
}

inline int cmd_train(const RunConfig& rc, std::ostream& out) {
  const TrainConfig tc = train_config(rc);
  Graph graph = build_graph(rc);
  const std::size_t side = input_size(graph_config(rc));

  const fs::path train_path = require_path(rc, "data.train");
  const DirectoryImageSource train_source(image_root(rc, train_path));
  Dataset train_data{load_manifest(train_path), &train_source, {}, side, side, rc.flag("data.prefetch")};
  train_data.stats = training_stats(rc, train_data.manifest, train_source, side);

  std::optional<DirectoryImageSource> val_source;
  Dataset val_data = train_data;
  val_data.manifest = Manifest{};
  if (rc.has("data.val")) {
    const fs::path val_path = rc.str("data.val");
    val_source.emplace(image_root(rc, val_path));
    val_data.manifest = load_manifest(val_path);
    val_data.source = &*val_source;
  }

  const fs::path dir = rc.str("train.out_dir");
  fs::create_directories(dir);
  // Stats live next to the checkpoint, so the saved config leaves data.stats
  // empty and eval/predict pick them up from there.
  RunConfig saved = rc;
  saved.set("data.stats", "");
  io::write_file(dir / "config.txt", saved.text());
  io::write_file(dir / "stats.txt", format_stats(train_data.stats));

  const TrainResult result = train(graph, train_data, val_data, tc, [&](const EpochRecord& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %zu train_loss=%.6f train_acc=%.4f val_loss=%.6f val_acc=%.4f\n", r.epoch,
                  r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy);
    out << buf << std::flush;
    return true;
  });
  save_checkpoint(dir / "checkpoint.bin", result.checkpoint);
  io::write_file(dir / "history.csv", result.history.csv());
  out << "wrote " << (dir / "checkpoint.bin").string() << '\n';
  return 0;
}

/// Graph rebuilt from the config and loaded with the checkpoint's weights.
inline Graph load_trained(const RunConfig& rc, const fs::path& checkpoint) {
  Graph graph = build_graph(rc);
  restore(graph, load_checkpoint(checkpoint));
  return graph;
}

inline StandardizationStats checkpoint_stats(const RunConfig& rc, const fs::path& checkpoint) {
  const fs::path file = rc.has("data.stats") ? fs::path(rc.str("data.stats")) : checkpoint.parent_path() / "stats.txt";
  return parse_stats(io::read_text(file), file.string());
}

inline int cmd_eval(const RunConfig& rc, const fs::path& checkpoint, const fs::path& manifest, std::ostream& out) {
  const Graph graph = load_trained(rc, checkpoint);
  const std::size_t side = input_size(graph_config(rc));
  const DirectoryImageSource source(image_root(rc, manifest));
  const Dataset data{load_manifest(manifest), &source, checkpoint_stats(rc, checkpoint), side, side,
                     rc.flag("data.prefetch")};
  const EvalResult r = evaluate(graph, data, rc.size("train.batch_size"));
  out << format_report(report(r.scores, r.labels, rc.real("eval.threshold")));
  return 0;
}

inline int cmd_gradcheck(const RunConfig& rc, std::ostream& out) {
  const Graph graph = build_graph(rc);
  const Shape spec = graph.input_spec();
  Rng rng(rc.u64("seed") + seed_offset::gradcheck);
  Tensor x(spec);
  for (float& v : x.data()) v = static_cast<float>(rng.uniform(-1, 1));
  GradCheckOptions opt;
  opt.samples = rc.size("gradcheck.samples");
  opt.tolerance = rc.real("gradcheck.tolerance");
  opt.seed = rc.u64("seed") + seed_offset::gradcheck;
  const GradCheckReport report = grad_check(graph, x, opt);
  out << report.str() << '\n';
  return report.passed ? 0 : 3;
}

inline int cmd_predict(const RunConfig& rc, const fs::path& checkpoint, const fs::path& image, std::ostream& out) {
  const Graph graph = load_trained(rc, checkpoint);
  const std::size_t side = input_size(graph_config(rc));
  const Tensor pixels = decode_ppm(io::read_file(image), image.string());
  const Tensor x = standardize(resize(pixels, side, side), checkpoint_stats(rc, checkpoint));
  const double score = predict(graph, x)[0];
  char buf[64];
  std::snprintf(buf, sizeof buf, "score=%.6f label=%s\n", score,
                score >= rc.real("eval.threshold") ? "ALL" : "healthy");
  out << buf;
  return 0;
}

/// Parses argv, resolves the config (defaults < config.txt beside a given
/// checkpoint < --config file < --key=value), echoes it, and runs the
/// command. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"ALL blood-cell classifier: data splitting, training, evaluation", "allnet"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  struct Sub {
    CLI::App* app = nullptr;
    std::string config_file;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
    std::string checkpoint;
    std::string target;
  };
  std::map<std::string, Sub> subs;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"split", "Split data.manifest into train/val/test manifests under split.out_dir"},
      {"stats", "Compute standardization stats from data.train into stats.out"},
      {"train", "Train on data.train (validating on data.val) into train.out_dir"},
      {"eval", "Score a manifest with a checkpoint and print the metrics report"},
      {"gradcheck", "Finite-difference check of the configured graph's gradients"},
      {"predict", "Score one PPM image with a checkpoint"},
  };
  for (const auto& [name, description] : commands) {
    Sub& s = subs[name];
    s.app = app.add_subcommand(name, description);
    s.app->add_option("--config", s.config_file, "key=value config file");
    if (name == "eval" || name == "predict") {
      s.app->add_option("checkpoint", s.checkpoint, "checkpoint.bin written by train")->required();
      s.app->add_option("target", s.target, name == "eval" ? "manifest to score" : "PPM image")->required();
    }
    for (const auto& k : config_keys()) {
      s.options[k.name] = s.app->add_option("--" + k.name, s.values[k.name], k.help)->default_str(k.fallback);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    for (auto& [name, s] : subs) {
      if (!s.app->parsed()) continue;
      RunConfig rc;
      if (!s.checkpoint.empty()) {
        const fs::path beside = fs::path(s.checkpoint).parent_path() / "config.txt";
        if (fs::exists(beside)) rc.merge_file(beside);
      }
      if (!s.config_file.empty()) rc.merge_file(s.config_file);
      for (const auto& [key, opt] : s.options) {
        if (opt->count() > 0) rc.set(key, s.values[key]);
      }
      echo_config(rc, out);
      if (name == "split") return cmd_split(rc, out);
      if (name == "stats") return cmd_stats(rc, out);
      if (name == "train") return cmd_train(rc, out);
      if (name == "eval") return cmd_eval(rc, s.checkpoint, s.target, out);
      if (name == "gradcheck") return cmd_gradcheck(rc, out);
      if (name == "predict") return cmd_predict(rc, s.checkpoint, s.target, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

} // namespace allnet::cli
