// Command-line entry point: dataset synthesis, preprocessing, training,
// evaluation, FLOPs analysis, and the four-variant comparison, all driven by
// a key=value configuration with reproducible seeded runs.

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "adat/data.hpp"
#include "adat/flops.hpp"
#include "adat/model.hpp"
#include "adat/run_config.hpp"
#include "adat/tensor_io.hpp"
#include "adat/train.hpp"

namespace fs = std::filesystem;
using namespace adat;

namespace {

// Exit codes: 0 success, 2 configuration or usage error, 3 I/O or parse
// error, 4 numeric failure (divergence).
constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::string preset;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
};

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.preset.empty()) cfg.apply_preset(args.preset);
  if (!args.config_path.empty()) cfg.merge_file(args.config_path);
  for (const std::string& kv : args.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (args.seed) cfg.seed = *args.seed;
  return cfg;
}

std::string default_out_dir(const std::string& command, std::uint64_t seed) {
  const std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", std::localtime(&now));
  return command + "-" + stamp + "-s" + std::to_string(seed);
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

fs::path prepare_out_dir(const CommonArgs& args, const std::string& command,
                         const RunConfig& cfg) {
  fs::path dir = args.out_dir.empty() ? default_out_dir(command, cfg.seed) : args.out_dir;
  fs::create_directories(dir);
  return dir;
}

std::vector<std::size_t> train_fold_indices(const SplitResult& split, int val_fold) {
  std::vector<std::size_t> idx;
  for (std::size_t f = 0; f < split.folds.size(); ++f) {
    if (static_cast<int>(f) == val_fold) continue;
    idx.insert(idx.end(), split.folds[f].begin(), split.folds[f].end());
  }
  return idx;
}

std::vector<std::size_t> eval_indices(const RunConfig& cfg, const Dataset& ds) {
  if (cfg.eval_split == "all") {
    std::vector<std::size_t> idx(ds.records.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
  }
  const SplitResult split =
      split_dataset(ds, cfg.test_fraction, static_cast<std::size_t>(cfg.folds), cfg.seed);
  if (cfg.eval_split == "test") return split.test;
  if (cfg.eval_split == "val") return split.folds.at(static_cast<std::size_t>(cfg.val_fold));
  return train_fold_indices(split, cfg.val_fold);  // "train"
}

// The dataset is the authority for vocabularies, frame geometry and padded
// lengths; the echoed config reflects the values actually used.
void adopt_dataset_dims(RunConfig& cfg, const Dataset& ds) {
  cfg.model.gloss_vocab = ds.gloss_vocab.size();
  cfg.model.text_vocab = ds.text_vocab.size();
  cfg.model.frame_channels = static_cast<int>(ds.channels);
  cfg.model.frame_height = static_cast<int>(ds.height);
  cfg.model.frame_width = static_cast<int>(ds.width);
  cfg.model.max_video_len = static_cast<int>(ds.max_video_len);
  cfg.model.max_gloss_len = static_cast<int>(ds.max_gloss_len);
  cfg.model.max_text_len = static_cast<int>(ds.max_text_len);
}

int cmd_synth(RunConfig& cfg, const fs::path& out) {
  Dataset ds = synth_generate(cfg.synth, cfg.seed);
  save_dataset(ds, (out / "dataset.adsl").string());
  write_file(out / "config.txt", cfg.echo());
  std::cout << "wrote " << (out / "dataset.adsl").string() << ": " << ds.records.size()
            << " records, gloss vocab " << ds.gloss_vocab.size() << ", text vocab "
            << ds.text_vocab.size() << ", max video length " << ds.max_video_len << "\n";
  return kExitOk;
}

std::vector<std::vector<std::string>> read_token_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::vector<std::vector<std::string>> corpus;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::vector<std::string> toks;
    std::string tok;
    while (ls >> tok) toks.push_back(tok);
    if (!toks.empty()) corpus.push_back(std::move(toks));
  }
  return corpus;
}

std::string vocab_report_csv(const Vocab& vocab,
                             const std::vector<std::vector<std::string>>& corpus) {
  std::map<std::string, std::size_t> freq;
  for (const auto& seq : corpus)
    for (const auto& tok : seq) ++freq[tok];
  std::ostringstream os;
  os << "token,id,frequency\n";
  for (int id = Vocab::kReserved; id < vocab.size(); ++id) {
    const std::string& tok = vocab.token_of(id);
    os << tok << ',' << id << ',' << freq[tok] << '\n';
  }
  return os.str();
}

int cmd_preprocess(RunConfig& cfg, const fs::path& out) {
  if (cfg.gloss_file.empty() || cfg.text_file.empty())
    throw ConfigError("preprocess requires gloss_file and text_file");
  const auto gloss_corpus = read_token_file(cfg.gloss_file);
  const auto text_corpus = read_token_file(cfg.text_file);
  const Vocab gloss_vocab = build_vocab(gloss_corpus);
  const Vocab text_vocab = build_vocab(text_corpus);
  write_file(out / "vocab_gloss.csv", vocab_report_csv(gloss_vocab, gloss_corpus));
  write_file(out / "vocab_text.csv", vocab_report_csv(text_vocab, text_corpus));
  std::size_t max_gloss = 0, max_text = 0;
  for (const auto& seq : gloss_corpus) max_gloss = std::max(max_gloss, seq.size());
  for (const auto& seq : text_corpus) max_text = std::max(max_text, seq.size());
  std::ostringstream stats;
  stats << "metric,value\n"
        << "gloss_sequences," << gloss_corpus.size() << '\n'
        << "text_sequences," << text_corpus.size() << '\n'
        << "gloss_vocab_size," << gloss_vocab.size() << '\n'
        << "text_vocab_size," << text_vocab.size() << '\n'
        << "max_gloss_length," << max_gloss << '\n'
        << "max_text_length," << max_text << '\n';
  write_file(out / "stats.csv", stats.str());
  write_file(out / "config.txt", cfg.echo());
  std::cout << "gloss vocab " << gloss_vocab.size() << ", text vocab " << text_vocab.size()
            << "\n";
  return kExitOk;
}

int cmd_train(RunConfig& cfg, const fs::path& out) {
  if (cfg.data_path.empty()) throw ConfigError("train requires data=<dataset path>");
  Dataset ds = load_dataset(cfg.data_path);
  adopt_dataset_dims(cfg, ds);
  const SplitResult split =
      split_dataset(ds, cfg.test_fraction, static_cast<std::size_t>(cfg.folds), cfg.seed);
  const std::vector<std::size_t> train_idx = train_fold_indices(split, cfg.val_fold);
  const std::vector<std::size_t>& val_idx = split.folds.at(static_cast<std::size_t>(cfg.val_fold));

  Model model(cfg.model, cfg.seed);
  TrainHistory history = train(model, ds, train_idx, val_idx, cfg.schedule());

  write_file(out / "config.txt", cfg.echo());
  write_file(out / "history.csv", history.to_csv());
  write_file(out / "timing.csv", history.timing_csv());
  save_model((out / "checkpoint.adat").string(), model);
  std::ostringstream summary;
  summary << "stop_reason=" << history.stop_reason << '\n'
          << "best_epoch=" << history.best_epoch << '\n'
          << "epochs=" << history.epochs.size() << '\n'
          << "parameters=" << model.parameter_count() << '\n';
  write_file(out / "summary.txt", summary.str());
  std::cout << "trained " << to_string(cfg.model.variant) << " (" << to_string(cfg.model.mode)
            << ") for " << history.epochs.size() << " epochs, stop: " << history.stop_reason
            << "\n";
  return history.stop_reason == "diverged" ? kExitNumeric : kExitOk;
}

int cmd_eval(RunConfig& cfg, const fs::path& out) {
  if (cfg.data_path.empty() || cfg.checkpoint_path.empty())
    throw ConfigError("eval requires data=<dataset path> and checkpoint=<checkpoint path>");
  Dataset ds = load_dataset(cfg.data_path);
  Model model = load_model(cfg.checkpoint_path);
  const std::vector<std::size_t> indices = eval_indices(cfg, ds);
  EvalResult result = evaluate(model, ds, indices);
  write_file(out / "config.txt", cfg.echo());
  write_file(out / "bleu.csv", result.report.to_csv());
  std::string translations;
  for (const std::string& line : result.translations) translations += line + '\n';
  write_file(out / "translations.tsv", translations);
  std::cout << "evaluated " << indices.size() << " samples (" << cfg.eval_split
            << " split): bleu1=" << result.report.bleu[0] << " bleu4=" << result.report.bleu[3]
            << "\n";
  return kExitOk;
}

int cmd_flops(RunConfig& cfg, const fs::path& out) {
  if (cfg.model.text_vocab < Vocab::kReserved)
    throw ConfigError("flops requires text_vocab (try --preset table5)");
  ModelConfig base = cfg.model;
  if (base.gloss_vocab < Vocab::kReserved) base.gloss_vocab = Vocab::kReserved;
  ComparisonReport report =
      comparison_report(base, cfg.flops_enc_len, cfg.flops_mem_len, cfg.flops_tgt_len);

  std::ostringstream components;
  components << "model,task,section,component,flops\n";
  for (const FlopsReport* r : {&report.canonical_s2g2t, &report.adat_s2g2t,
                               &report.canonical_s2t, &report.adat_s2t}) {
    for (const auto& [name, v] : r->encoder_components)
      components << r->variant << ',' << r->task << ",encoder," << name << ',' << v << '\n';
    for (const auto& [name, v] : r->decoder_components)
      components << r->variant << ',' << r->task << ",decoder," << name << ',' << v << '\n';
  }

  std::vector<long long> lengths;
  for (long long l = 64; l <= 4096; l *= 2) lengths.push_back(l);
  const ScalingFit canonical_fit = scaling_probe(Variant::encoder_decoder, lengths);
  const ScalingFit sparse_fit = scaling_probe(Variant::adat, lengths);
  std::ostringstream scaling;
  scaling << "variant,length,pairs\n";
  for (std::size_t i = 0; i < lengths.size(); ++i)
    scaling << "canonical," << lengths[i] << ',' << canonical_fit.counts[i] << '\n';
  for (std::size_t i = 0; i < lengths.size(); ++i)
    scaling << "adat," << lengths[i] << ',' << sparse_fit.counts[i] << '\n';
  scaling << "canonical_alpha," << canonical_fit.alpha << ",\n";
  scaling << "adat_alpha," << sparse_fit.alpha << ",\n";

  write_file(out / "config.txt", cfg.echo());
  write_file(out / "flops.csv", report.to_csv());
  write_file(out / "flops_components.csv", components.str());
  write_file(out / "flops.txt", report.to_text());
  write_file(out / "scaling.csv", scaling.str());
  std::cout << report.to_text();
  return kExitOk;
}

int cmd_compare(RunConfig& cfg, const fs::path& out) {
  if (cfg.data_path.empty()) throw ConfigError("compare requires data=<dataset path>");
  Dataset ds = load_dataset(cfg.data_path);
  adopt_dataset_dims(cfg, ds);
  const SplitResult split =
      split_dataset(ds, cfg.test_fraction, static_cast<std::size_t>(cfg.folds), cfg.seed);
  const std::vector<std::size_t> train_idx = train_fold_indices(split, cfg.val_fold);
  const std::vector<std::size_t>& val_idx = split.folds.at(static_cast<std::size_t>(cfg.val_fold));

  std::vector<Variant> variants;
  if (cfg.model.mode == Mode::s2t)
    variants = {Variant::encoder_decoder, Variant::encoder_only, Variant::decoder_only,
                Variant::adat};
  else
    variants = {Variant::encoder_decoder, Variant::adat};

  std::ostringstream table, timing;
  table << "variant,bleu1,bleu2,bleu3,bleu4,brevity_penalty\n";
  timing << "variant,train_seconds,epochs\n";
  bool diverged = false;
  for (Variant variant : variants) {
    ModelConfig mc = cfg.model;
    mc.variant = variant;
    Model model(mc, cfg.seed);
    TrainHistory history = train(model, ds, train_idx, val_idx, cfg.schedule());
    diverged = diverged || history.stop_reason == "diverged";
    double seconds = 0.0;
    for (const EpochStat& e : history.epochs) seconds += e.seconds;
    EvalResult result = evaluate(model, ds, split.test);
    table << to_string(variant);
    for (double b : result.report.bleu) table << ',' << b;
    table << ',' << result.report.brevity_penalty << '\n';
    timing << to_string(variant) << ',' << seconds << ',' << history.epochs.size() << '\n';
    std::cout << to_string(variant) << ": bleu4=" << result.report.bleu[3] << " ("
              << history.epochs.size() << " epochs)\n";
  }
  write_file(out / "config.txt", cfg.echo());
  write_file(out / "compare.csv", table.str());
  write_file(out / "compare_timing.csv", timing.str());
  return diverged ? kExitNumeric : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ADAT: adaptive sparse-attention sign language translation toolkit"};
  app.require_subcommand(1);

  std::map<std::string, CommonArgs> args;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", "generate a seeded synthetic dataset"},
      {"preprocess", "build vocabularies and statistics from token files"},
      {"train", "train a model on a dataset split"},
      {"eval", "evaluate a checkpoint and report BLEU"},
      {"flops", "emit the analytical FLOPs comparison"},
      {"compare", "train and evaluate every model variant on one dataset"},
  };
  for (const auto& [name, desc] : commands) {
    CLI::App* sub = app.add_subcommand(name, desc);
    CommonArgs& a = args[name];
    sub->add_option("--config", a.config_path, "key=value configuration file");
    sub->add_option("--set", a.sets, "override a single key (key=value), repeatable");
    sub->add_option("--out", a.out_dir, "output directory (default: <command>-<stamp>-s<seed>)");
    sub->add_option("--seed", a.seed, "run seed");
    sub->add_option("--preset", a.preset,
                    "configuration preset: table3-s2g2t, table3-s2t, table5, desk-small");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    RunConfig cfg = resolve_config(args[command]);
    cfg.validate();
    set_precision(cfg.precision);
    const fs::path out = prepare_out_dir(args[command], command, cfg);
    if (command == "synth") return cmd_synth(cfg, out);
    if (command == "preprocess") return cmd_preprocess(cfg, out);
    if (command == "train") return cmd_train(cfg, out);
    if (command == "eval") return cmd_eval(cfg, out);
    if (command == "flops") return cmd_flops(cfg, out);
    if (command == "compare") return cmd_compare(cfg, out);
    std::cerr << "unknown command " << command << "\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
}
