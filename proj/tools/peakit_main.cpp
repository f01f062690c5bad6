#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "peakit/commands.hpp"

using namespace peakit;
namespace fs = std::filesystem;

namespace {

std::vector<PeaType> parse_types(const std::vector<std::string>& raw) {
  std::vector<PeaType> out;
  for (const auto& item : raw) {
    std::stringstream ss(item);
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty() && tok != "all") out.push_back(parse_pea_type(tok));
  }
  return out;
}

NegativeRatio parse_ratio(const std::string& s) {
  const auto colon = s.find(':');
  try {
    if (colon == std::string::npos) throw std::invalid_argument(s);
    return {std::stoi(s.substr(0, colon)), std::stoi(s.substr(colon + 1))};
  } catch (const std::logic_error&) {
    fail(ErrorCode::ConfigInvalid, "--ratio must look like 1:2, got '" + s + "'");
  }
}

/// Values from --config win over the same options given as flags, which in
/// turn win over built-in defaults. CLI11 applies the opposite order, so the
/// file is read again after parsing and its values are written back.
void apply_config_over_flags(CLI::App& app) {
  const auto* config = app.get_config_ptr();
  if (!config || config->count() == 0) return;
  for (const auto& item : app.get_config_formatter()->from_file(config->as<std::string>())) {
    CLI::App* scope = &app;
    for (const auto& parent : item.parents)
      if (scope) scope = scope->get_subcommand_no_throw(parent);
    if (!scope) continue;
    CLI::Option* opt = scope->get_option_no_throw("--" + item.name);
    if (!opt) continue;
    opt->clear();
    opt->add_result(item.inputs);
    opt->run_callback();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"peakit: perceivable encoding artifact toolkit"};
  app.set_version_flag("--version", std::string(cli::kVersion));
  app.set_config("--config", "", "TOML/INI file with [subcommand] sections; its values override command-line flags");
  app.require_subcommand(1);
  const fs::path root = cli::data_root();

  // label
  cli::LabelOptions label;
  label.annotations = root / "annotations.jsonl";
  label.sequences = root / "sequences";
  label.out_store = root / "patches.pea";
  std::vector<std::string> label_types;
  std::string ratio = "1:2";
  auto* lc = app.add_subcommand("label", "rasterize annotations into a labeled patch store");
  lc->add_option("--annotations", label.annotations, "annotation session (JSONL)")->capture_default_str();
  lc->add_option("--sequences", label.sequences, "directory of .yuv sequences with .json sidecars")->capture_default_str();
  lc->add_option("--out", label.out_store, "output store; the manifest is written next to it")->capture_default_str();
  lc->add_option("--type", label_types, "PEA types to label (comma separated, default all)");
  lc->add_option("--stride", label.stride, "window stride in pixels (0 = window size)")->capture_default_str();
  lc->add_option("--ratio", ratio, "uncircled : reference negatives")->capture_default_str();
  lc->add_flag("--all-frames", label.all_frames, "label every frame, not only frames somebody annotated");
  lc->add_option("--min-subjects", label.min_subjects, "subjects that must agree on a pixel (1 = union)")->capture_default_str();
  lc->add_flag("--append", label.append, "append to an existing store instead of replacing it");
  lc->add_option("--seed", label.seed)->capture_default_str();

  // train
  cli::TrainOptions train;
  train.store = root / "patches.pea";
  train.out_dir = root / "models";
  std::vector<std::string> train_types;
  std::string train_arch = "resnext";
  std::optional<int> epochs, batch;
  std::optional<double> lr;
  bool augment = false, no_augment = false;
  auto* tc = app.add_subcommand("train", "train one classifier per PEA type");
  tc->add_option("--store", train.store)->capture_default_str();
  tc->add_option("--out", train.out_dir, "directory for <type>_<arch>.peam checkpoints and logs")->capture_default_str();
  tc->add_option("--type", train_types, "PEA types to train (default: every type with both labels)");
  tc->add_option("--arch", train_arch)->check(CLI::IsMember({"lenet5", "lenet", "resnext"}))->capture_default_str();
  tc->add_option("--epochs", epochs);
  tc->add_option("--lr", lr, "initial learning rate");
  tc->add_option("--lr-drops", train.lr_drops, "epochs at which the rate drops tenfold (three values)");
  tc->add_option("--batch-size", batch);
  tc->add_flag("--augment", augment);
  tc->add_flag("--no-augment", no_augment);
  tc->add_option("--seed", train.seed)->capture_default_str();

  // eval
  cli::EvalOptions eval;
  eval.store = root / "patches.pea";
  std::string eval_split = "test";
  auto* ec = app.add_subcommand("eval", "accuracy and confusion counts of checkpoints on a store");
  ec->add_option("--store", eval.store)->capture_default_str();
  ec->add_option("--model", eval.models, "checkpoint(s)")->required();
  ec->add_option("--split", eval_split)->check(CLI::IsMember({"train", "test", "all"}))->capture_default_str();
  ec->add_option("--seed", eval.seed)->capture_default_str();

  // analyze
  cli::AnalyzeOptions analyze;
  analyze.models_dir = root / "models";
  analyze.sequences = root / "sequences";
  analyze.out_dir = root / "reports";
  std::string analyze_arch = "resnext";
  auto* ac = app.add_subcommand("analyze", "PEA intensity per sequence and per qp");
  ac->add_option("--models", analyze.models_dir, "directory holding all six <type>_<arch>.peam")->capture_default_str();
  ac->add_option("--arch", analyze_arch)->check(CLI::IsMember({"lenet5", "lenet", "resnext"}))->capture_default_str();
  ac->add_option("--sequences", analyze.sequences)->capture_default_str();
  ac->add_option("--sequence", analyze.names, "only these sequences (default: every compressed one)");
  ac->add_flag("--include-reference", analyze.include_reference);
  ac->add_option("--grid", analyze.grid, "grid cell size in pixels")->capture_default_str();
  ac->add_option("--out", analyze.out_dir)->capture_default_str();
  ac->add_flag("--maps", analyze.maps, "write per-type and combined PNG maps for the first frame of every span");

  // extract
  cli::ExtractOptions extract;
  extract.sequences = root / "sequences";
  extract.out_dir = root / "frames";
  auto* xc = app.add_subcommand("extract", "write frames of a sequence as PNG (or luma PGM)");
  xc->add_option("--sequences", extract.sequences)->capture_default_str();
  xc->add_option("--sequence", extract.sequence)->required();
  xc->add_option("--first", extract.first)->capture_default_str();
  xc->add_option("--count", extract.count)->capture_default_str();
  xc->add_option("--out", extract.out_dir)->capture_default_str();
  xc->add_flag("--pgm", extract.pgm);

  // serve
  cli::ServeCommandOptions serve;
  serve.sequences = root / "sequences";
  serve.annotations = root / "annotations.jsonl";
  std::string ui_dir;
  auto* sc = app.add_subcommand("serve", "HTTP API for the annotation UI");
  sc->add_option("--sequences", serve.sequences)->capture_default_str();
  sc->add_option("--annotations", serve.annotations, "session file that receives new annotations")->capture_default_str();
  sc->add_option("--host", serve.serve.host)->capture_default_str();
  sc->add_option("--port", serve.serve.port)->capture_default_str();
  sc->add_option("--ui", ui_dir, "directory with the built UI, served at /");

  // synth
  fs::path synth_dir = root / "sequences";
  fs::path synth_annotations = root / "annotations.jsonl";
  synth::FixtureOptions synth;
  auto* yc = app.add_subcommand("synth", "write a synthetic reference clip, compressed-looking versions and annotations");
  yc->add_option("--out", synth_dir)->capture_default_str();
  yc->add_option("--annotations", synth_annotations, "where the annotation session is written")->capture_default_str();
  yc->add_option("--width", synth.width)->capture_default_str();
  yc->add_option("--height", synth.height)->capture_default_str();
  yc->add_option("--frames", synth.frames)->capture_default_str();
  yc->add_option("--qp", synth.qps, "one compressed clip per qp")->capture_default_str();
  yc->add_option("--name", synth.name)->capture_default_str();
  yc->add_option("--seed", synth.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
    apply_config_over_flags(app);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? cli::kExitOk : cli::kExitUsage;
  }

  try {
    if (*lc) {
      label.types = parse_types(label_types);
      label.ratio = parse_ratio(ratio);
      cli::cmd_label(label, std::cout, std::cerr);
    } else if (*tc) {
      train.types = parse_types(train_types);
      train.arch = parse_architecture(train_arch);
      train.epochs = epochs;
      train.lr = lr;
      train.batch_size = batch;
      if (augment && no_augment) fail(ErrorCode::ConfigInvalid, "--augment and --no-augment are exclusive");
      if (augment) train.augment = true;
      if (no_augment) train.augment = false;
      cli::cmd_train(train, std::cout, std::cerr);
    } else if (*ec) {
      eval.split = cli::parse_split_selection(eval_split);
      cli::cmd_eval(eval, std::cout);
    } else if (*ac) {
      analyze.arch = parse_architecture(analyze_arch);
      cli::cmd_analyze(analyze, std::cout, std::cerr);
    } else if (*xc) {
      cli::cmd_extract(extract, std::cout);
    } else if (*sc) {
      if (!ui_dir.empty()) serve.serve.static_dir = ui_dir;
      cli::cmd_serve(serve, std::cout);
    } else if (*yc) {
      cli::cmd_synth(synth_dir, synth, std::cout, synth_annotations);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return cli::kExitInternal;
  }
  return cli::kExitOk;
}
