#include "agnet/cli.hpp"

#include "agnet/pipeline.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

namespace agnet::cli {

namespace {

namespace fs = std::filesystem;

struct SplitFlags {
  std::string kind = "cross-subject";
  std::vector<int> train_subjects, test_subjects, train_cameras, test_cameras;
  std::string split_file;

  void add(CLI::App* cmd) {
    cmd->add_option("--split", kind, "Evaluation protocol")
        ->check(CLI::IsMember({"cross-subject", "cross-view", "file"}));
    cmd->add_option("--train-subjects", train_subjects, "Training subject ids (cross-subject)")
        ->delimiter(',');
    cmd->add_option("--test-subjects", test_subjects, "Test subject ids (cross-subject)")
        ->delimiter(',');
    cmd->add_option("--train-cameras", train_cameras, "Training camera ids (cross-view)")
        ->delimiter(',');
    cmd->add_option("--test-cameras", test_cameras, "Test camera ids (cross-view)")
        ->delimiter(',');
    cmd->add_option("--split-file", split_file, "TSV of video/split rows (--split file)");
  }

  Split resolve(const Manifest& m) const {
    if (kind == "file") {
      if (split_file.empty()) throw std::invalid_argument("--split file requires --split-file");
      return read_split_file(split_file, m);
    }
    if (kind == "cross-view") {
      if (train_cameras.empty() && test_cameras.empty()) return default_cross_view(m);
      return split_cross_view(m, {train_cameras.begin(), train_cameras.end()},
                              {test_cameras.begin(), test_cameras.end()});
    }
    if (train_subjects.empty() && test_subjects.empty()) return default_cross_subject(m);
    return split_cross_subject(m, {train_subjects.begin(), train_subjects.end()},
                               {test_subjects.begin(), test_subjects.end()});
  }
};

// Only the active subcommand's options; empty lists are left out so the file
// parses back unchanged through --config.
void write_resolved_config(const CLI::App& app, const CLI::App* sub, const fs::path& out_dir) {
  std::istringstream all(app.config_to_str(true, false));
  const std::string prefix = sub->get_name() + ".";
  std::string text, line;
  while (std::getline(all, line)) {
    if (!line.starts_with(prefix) || line.ends_with("=\"{}\"")) continue;
    // Lists print as "[a,b]" from defaults but [a, b] once parsed; keep one form
    // so a re-run writes an identical file.
    const auto eq = line.find('=');
    std::string value = line.substr(eq + 1);
    if (value.starts_with("\"[") && value.ends_with("]\"")) value = value.substr(1, value.size() - 2);
    if (value.starts_with('[')) {
      for (auto pos = value.find(", "); pos != std::string::npos; pos = value.find(", ", pos))
        value.erase(pos + 1, 1);
    }
    text += line.substr(0, eq + 1) + value + '\n';
  }
  io::write_file_atomic(out_dir / "run_config.ini", text);
}

void write_stats(const Dataset& ds, std::ostream& os) {
  os << format_stats(dataset_stats(ds.annotations, ds.manifest, ds.classes.size()), ds.classes);
}

void check_compatible(const ModelState& model, const Dataset& ds) {
  if (model.config.n_classes != ds.classes.size())
    throw std::invalid_argument("class-count mismatch: checkpoint predicts " +
                                std::to_string(model.config.n_classes) + " classes, dataset has " +
                                std::to_string(ds.classes.size()));
  if (model.config.use_attention() && !ds.has_attention())
    throw std::invalid_argument(
        "model 'agnet' needs the attention stream, but the dataset has no attention/ features");
}

std::vector<std::string> resolve_videos(const Dataset& ds, const std::vector<std::string>& wanted) {
  if (!wanted.empty()) {
    for (const auto& v : wanted) (void)ds.index_of(v);
    return wanted;
  }
  std::vector<std::string> all;
  for (const auto& e : ds.manifest) all.push_back(e.video_id);
  return all;
}

/// The synchronized recording of `id` from `camera`.
std::string synchronized_video(const Dataset& ds, const std::string& id, int camera) {
  const auto& entry = ds.manifest[ds.index_of(id)];
  if (entry.scene < 0)
    throw std::invalid_argument("manifest has no scene column; cannot synchronize views");
  for (const auto& e : ds.manifest)
    if (e.scene == entry.scene && e.camera == camera) return e.video_id;
  throw std::invalid_argument("video " + id + " has no synchronized recording from camera " +
                              std::to_string(camera));
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Attention-guided temporal activity detection toolkit"};
  app.name(args.empty() ? "agnet" : fs::path(args[0]).filename().string());
  app.set_config("--config", "", "Re-run from a resolved run_config.ini");
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  // generate
  bool tsu_scale = std::find(args.begin(), args.end(), "--tsu-scale") != args.end();
  SyntheticConfig gen = tsu_scale ? SyntheticConfig::tsu_scale() : SyntheticConfig{};
  std::string gen_out;
  auto* cmd_gen = app.add_subcommand("generate", "Write a synthetic multi-label dataset");
  cmd_gen->add_option("--out", gen_out, "Output dataset directory")->required();
  cmd_gen->add_flag("--tsu-scale", tsu_scale, "Start from the TSU-scale preset");
  cmd_gen->add_option("--seed", gen.seed);
  cmd_gen->add_option("--n-videos", gen.n_videos, "Recorded scenes");
  cmd_gen->add_option("--views", gen.views_per_scene, "Cameras recording each scene");
  cmd_gen->add_option("--frames", gen.frames_per_video, "Frames per video");
  cmd_gen->add_option("--segment-len", gen.segment_len);
  cmd_gen->add_option("--classes", gen.n_classes);
  cmd_gen->add_option("--composites", gen.n_composite, "Composite classes (highest ids)");
  cmd_gen->add_option("--constituents", gen.constituents_per_composite);
  cmd_gen->add_option("--zipf", gen.zipf_exponent, "Class-frequency exponent");
  cmd_gen->add_option("--instances", gen.instances_per_video, "Mean instances per video");
  cmd_gen->add_option("--min-duration", gen.min_median_duration, "Shortest class median (segments)");
  cmd_gen->add_option("--max-duration", gen.max_median_duration, "Longest class median (segments)");
  cmd_gen->add_option("--composite-duration", gen.composite_median_duration);
  cmd_gen->add_option("--duration-sigma", gen.duration_log_sigma);
  cmd_gen->add_option("--channels", gen.channels, "Main-stream feature width");
  cmd_gen->add_option("--att-channels", gen.attention_channels, "Attention-stream feature width");
  cmd_gen->add_option("--snr", gen.snr);
  cmd_gen->add_option("--att-snr", gen.attention_snr);
  cmd_gen->add_option("--subject-offset", gen.subject_offset);
  cmd_gen->add_option("--subjects", gen.n_subjects);
  cmd_gen->add_option("--cameras", gen.n_cameras);

  // train
  AGNetConfig model_cfg;
  model_cfg.n_blocks = 5;
  std::string dataset_dir, train_out, model_name = "agnet", monitor = "train";
  int epochs = 300, batch = 2, patience = 10;
  double lr = 0.001, factor = 0.3, min_lr = 1e-7;
  std::uint64_t seed = 0;
  SplitFlags train_split;
  auto* cmd_train = app.add_subcommand("train", "Train a model on a dataset split");
  cmd_train->add_option("--dataset", dataset_dir)->required();
  cmd_train->add_option("--out", train_out, "Output directory")->required();
  cmd_train->add_option("--model", model_name)
      ->check(CLI::IsMember({"agnet", "sdtcn", "bottleneck"}));
  train_split.add(cmd_train);
  cmd_train->add_option("--epochs", epochs);
  cmd_train->add_option("--lr", lr, "Initial Adam learning rate");
  cmd_train->add_option("--batch", batch, "Videos per mini-batch");
  cmd_train->add_option("--seed", seed);
  cmd_train->add_option("--blocks", model_cfg.n_blocks);
  cmd_train->add_option("--kernel", model_cfg.kernel_size);
  cmd_train->add_option("--hidden", model_cfg.hidden_channels, "Main-stream width C2");
  cmd_train->add_option("--beta", model_cfg.beta, "Attention width ratio");
  cmd_train->add_option("--dropout", model_cfg.dropout_p, "Bottleneck dropout probability");
  cmd_train->add_option("--factor", factor, "Plateau lr factor");
  cmd_train->add_option("--patience", patience, "Plateau patience (epochs)");
  cmd_train->add_option("--min-lr", min_lr);
  cmd_train->add_option("--monitor", monitor, "Loss watched by the scheduler")
      ->check(CLI::IsMember({"train", "heldout"}));

  // eval
  std::string checkpoint, eval_out, fuse_with;
  double tau = 0.5;
  std::vector<double> iou{0.3, 0.5, 0.7};
  int fuse_camera = -1;
  bool ground_truth = false;
  SplitFlags eval_split;
  auto* cmd_eval = app.add_subcommand("eval", "Frame and event mAP of a checkpoint");
  cmd_eval->add_option("--checkpoint", checkpoint);
  cmd_eval->add_option("--dataset", dataset_dir)->required();
  cmd_eval->add_option("--out", eval_out, "Output directory")->required();
  eval_split.add(cmd_eval);
  cmd_eval->add_option("--tau", tau, "Event extraction threshold");
  cmd_eval->add_option("--iou", iou, "Event IoU thresholds")->delimiter(',');
  cmd_eval->add_option("--fuse-with", fuse_with, "Second-view checkpoint for late fusion");
  cmd_eval->add_option("--fuse-camera", fuse_camera,
                       "Camera whose synchronized recordings feed the second checkpoint");
  cmd_eval->add_flag("--ground-truth", ground_truth, "Score ground-truth labels as predictions");

  // inspect
  std::string inspect_out;
  auto* cmd_inspect = app.add_subcommand("inspect", "Dataset statistics");
  cmd_inspect->add_option("--dataset", dataset_dir)->required();
  cmd_inspect->add_option("--out", inspect_out, "Output directory (stdout if omitted)");

  // export-attention
  std::string export_out;
  std::vector<std::string> videos;
  auto* cmd_export = app.add_subcommand("export-attention", "Per-block channel-mean attention");
  cmd_export->add_option("--checkpoint", checkpoint)->required();
  cmd_export->add_option("--dataset", dataset_dir)->required();
  cmd_export->add_option("--out", export_out, "Output directory")->required();
  cmd_export->add_option("--video", videos, "Videos to export (default: all)")->delimiter(',');

  std::vector<std::string> argv_rev(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
  std::reverse(argv_rev.begin(), argv_rev.end());
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*cmd_gen) {
      if (gen.n_videos < 1) throw std::invalid_argument("--n-videos must be >= 1");
      fs::create_directories(gen_out);
      const Dataset ds = generate_synthetic(gen);
      save_dataset(gen_out, ds);
      io::write_file_atomic(fs::path(gen_out) / "generator_config.txt", gen.to_text());
      write_resolved_config(app, cmd_gen, gen_out);
      write_stats(ds, std::cout);
      return 0;
    }

    if (*cmd_inspect) {
      const Dataset ds = load_dataset(dataset_dir);
      if (inspect_out.empty()) {
        write_stats(ds, std::cout);
      } else {
        fs::create_directories(inspect_out);
        std::ostringstream ss;
        write_stats(ds, ss);
        io::write_file_atomic(fs::path(inspect_out) / "stats.tsv", ss.str());
        write_resolved_config(app, cmd_inspect, inspect_out);
      }
      return 0;
    }

    if (*cmd_train) {
      const Dataset ds = load_dataset(dataset_dir);
      model_cfg.kind = parse_model_kind(model_name);
      if (model_cfg.use_attention() && !ds.has_attention())
        throw std::invalid_argument("model 'agnet' needs the attention stream, but " + dataset_dir +
                                    "/attention is missing");
      model_cfg.input_channels = static_cast<int>(ds.main.front().features.cols());
      model_cfg.attention_input_channels =
          ds.has_attention() ? static_cast<int>(ds.attention.front().features.cols()) : 1;
      model_cfg.n_classes = ds.classes.size();
      model_cfg.validate();
      const Split split = train_split.resolve(ds.manifest);
      const auto train = make_samples(ds, split.train);
      const auto heldout = make_samples(ds, split.test);
      for (const auto& s : train) check_sample(s, model_cfg);
      for (const auto& s : heldout) check_sample(s, model_cfg);

      fs::create_directories(train_out);
      write_resolved_config(app, cmd_train, train_out);
      std::ofstream log(fs::path(train_out) / "train_log.tsv", std::ios::trunc);
      log << "epoch\tlr\ttrain_loss\theldout_loss\n";

      TrainConfig tc;
      tc.epochs = epochs;
      tc.batch_size = batch;
      tc.seed = seed;
      tc.monitor = monitor == "heldout" ? Monitor::heldout_loss : Monitor::train_loss;
      ModelState model = init_model(model_cfg, seed);
      AdamOptions ao;
      ao.lr = lr;
      AdamState adam(static_cast<const ModelState&>(model).parameters(), ao);
      auto result = fit(std::move(model), train, heldout.empty() ? nullptr : &heldout, tc,
                        std::move(adam), PlateauSchedule(lr, factor, patience, min_lr), {}, &log);
      log.close();
      if (!log) throw std::runtime_error("failed writing train_log.tsv");
      save_checkpoint(fs::path(train_out) / "model.agn", result.model);
      std::cout << "trained " << to_string(model_cfg.kind) << " for " << result.log.size()
                << " epochs, final train loss " << result.log.back().train_loss << '\n';
      return 0;
    }

    if (*cmd_eval) {
      const Dataset ds = load_dataset(dataset_dir);
      const Split split = eval_split.resolve(ds.manifest);
      std::vector<Matrix> probs;
      std::optional<ModelState> model;
      if (ground_truth) {
        probs = ground_truth_predictions(ds, split.test);
      } else {
        if (checkpoint.empty()) throw std::invalid_argument("--checkpoint is required");
        model = load_checkpoint(checkpoint);
        check_compatible(*model, ds);
        probs = predict_videos(*model, ds, split.test);
      }
      fs::create_directories(eval_out);
      auto report = [&](const std::string& name, const std::vector<Matrix>& p) {
        const auto ev = evaluate(ds, split.test, p, tau, iou);
        write_results(fs::path(eval_out) / name, ds.classes.names, ev.instance_counts, ev.frame,
                      ev.thresholds, ev.events);
        std::cout << name << ": frame mAP " << ev.frame.map;
        for (std::size_t i = 0; i < iou.size(); ++i)
          std::cout << ", event mAP@" << iou[i] << ' ' << ev.events[i].map;
        std::cout << '\n';
      };
      report("results.tsv", probs);
      if (!fuse_with.empty()) {
        const ModelState second = load_checkpoint(fuse_with);
        check_compatible(second, ds);
        std::vector<std::string> second_ids;
        for (const auto& id : split.test)
          second_ids.push_back(fuse_camera < 0 ? id : synchronized_video(ds, id, fuse_camera));
        const auto probs2 = predict_videos(second, ds, second_ids);
        std::vector<Matrix> fused;
        for (std::size_t i = 0; i < probs.size(); ++i)
          fused.push_back(fuse_predictions(probs[i], probs2[i]));
        report("results_second.tsv", probs2);
        report("results_fused.tsv", fused);
      }
      write_resolved_config(app, cmd_eval, eval_out);
      return 0;
    }

    if (*cmd_export) {
      const Dataset ds = load_dataset(dataset_dir);
      const ModelState model = load_checkpoint(checkpoint);
      if (!model.config.use_attention())
        throw std::invalid_argument("checkpoint is a " + to_string(model.config.kind) +
                                    " model; only agnet produces attention maps");
      check_compatible(model, ds);
      fs::create_directories(export_out);
      for (const auto& id : resolve_videos(ds, videos)) {
        const std::size_t i = ds.index_of(id);
        const Matrix rows =
            export_attention(forward_agnet(model, ds.main[i].features, ds.attention[i].features));
        std::string text;
        for (Index b = 0; b < rows.rows(); ++b) {
          for (Index t = 0; t < rows.cols(); ++t) {
            if (t) text += '\t';
            text += io::format_double(rows(b, t));
          }
          text += '\n';
        }
        io::write_file_atomic(fs::path(export_out) / ("attention_" + id + ".tsv"), text);
      }
      write_resolved_config(app, cmd_export, export_out);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << app.get_name() << ": error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace agnet::cli
