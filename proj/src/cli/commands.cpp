// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>
#include <algorithm>
#include <map>
#include <ostream>
#include <random>

#include "permstr/cli/cli.hpp"
#include "permstr/errors.hpp"
#include "permstr/model/model.hpp"
#include "permstr/numerics/tape.hpp"
#include "permstr/permute/permute.hpp"
#include "permstr/pipeline/dataset.hpp"
#include "permstr/pipeline/decode.hpp"
#include "permstr/pipeline/eval.hpp"
#include "permstr/pipeline/image.hpp"
#include "permstr/pipeline/latency.hpp"
#include "permstr/pipeline/synth.hpp"
#include "permstr/pipeline/train.hpp"
#include "permstr/textcodec/textcodec.hpp"

namespace permstr::cli {

namespace {

using pipeline::DecodeConfig;

const std::map<std::string, std::string>& command_summaries() {
  static const std::map<std::string, std::string> summaries{
      {"synth", "render a synthetic text-image corpus with a manifest"},
      {"train", "train a model on a manifest and write a checkpoint"},
      {"eval", "evaluate a checkpoint on a manifest"},
      {"predict", "recognize the text in one image"},
      {"dump-masks", "print attention masks as 0/1 grids"},
      {"bench", "measure inference latency against forced output length"},
  };
  return summaries;
}

std::vector<KeySpec> decode_keys() {
  return {{"scheme", "ar", "decoding scheme: ar or nar"},
          {"refine", "", "refinement iterations (empty: 1 for ar, 2 for nar)"},
          {"charset", "0", "evaluation charset size 36, 62 or 94 (0: the model's)"}};
}

DecodeConfig decode_config(const CliConfig& cfg, int model_charset) {
  DecodeConfig d;
  try {
    d.scheme = pipeline::parse_scheme(cfg.get("scheme"));
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  if (!cfg.get("refine").empty()) d.refine_iters = cfg.get_int("refine");
  const int active = cfg.get_int("charset");
  if (active != 0) {
    if (active != 36 && active != 62 && active != 94) {
      throw UsageError("--charset must be 36, 62 or 94");
    }
    if (active > model_charset) {
      throw UsageError("--charset " + std::to_string(active) + " exceeds the model's " +
                       std::to_string(model_charset) + " characters");
    }
  }
  d.active_charset = active == model_charset ? 0 : active;
  try {
    d.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  return d;
}

text::Charset model_charset(const model::ModelConfig& cfg) {
  return text::Charset(text::Charset::canonical94().substr(0, static_cast<std::size_t>(cfg.charset_size)));
}

perm::MaskRole parse_role(const std::string& name) {
  for (auto role : {perm::MaskRole::interior, perm::MaskRole::ltr_pair_first, perm::MaskRole::rtl_pair_second}) {
    if (perm::to_string(role) == name) return role;
  }
  throw UsageError("unknown --role '" + name + "' (expected interior, ltr_pair_first or rtl_pair_second)");
}

num::Tensor single_image(const pipeline::Image& image, const model::ModelConfig& cfg) {
  const auto px = pipeline::to_model_input(image, cfg.image_w, cfg.image_h, cfg.channels);
  return num::Tensor::from_values(
      {1, static_cast<std::size_t>(cfg.image_h), static_cast<std::size_t>(cfg.image_w),
       static_cast<std::size_t>(cfg.channels)},
      std::vector<double>(px.begin(), px.end()), num::DType::f32);
}

int run_synth(const CliConfig& cfg, std::ostream& out) {
  const int charset = cfg.get_int("charset");
  if (charset != 36 && charset != 62 && charset != 94) throw UsageError("--charset must be 36, 62 or 94");
  pipeline::LabelSource source;
  source.min_len = cfg.get_int("min_len");
  source.max_len = cfg.get_int("max_len");
  source.lexicon_size = cfg.get_int("lexicon");
  if (source.min_len < 1 || source.max_len < source.min_len) throw UsageError("need 1 <= min_len <= max_len");
  if (source.lexicon_size < 0) throw UsageError("--lexicon must be >= 0");
  const int count = cfg.get_int("count");
  if (count < 1) throw UsageError("--count must be positive");
  std::mt19937_64 rng(cfg.get_u64("seed"));
  const auto labels = pipeline::synth_labels(static_cast<std::size_t>(count), text::charset_slice(charset), source, rng);
  const std::filesystem::path dir = cfg.get("out");
  const auto rows = pipeline::render_synthetic(labels, rng, dir, cfg.get_int("width"), cfg.get_int("height"));
  out << "wrote " << rows.size() << " samples to " << (dir / "manifest.tsv").string() << '\n';
  return 0;
}

pipeline::Dataset load_for_training(const std::string& manifest, const model::ModelConfig& mcfg,
                                    const text::TokenCodec& codec, std::ostream& err) {
  const auto rows = pipeline::read_manifest(manifest);
  pipeline::Dataset data = pipeline::load_dataset(rows, mcfg, codec);
  if (data.rejected() > 0) {
    err << manifest << ": skipped " << data.rejected_empty << " empty and " << data.rejected_too_long
        << " over-length labels\n";
  }
  return data;
}

int run_train(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
  pipeline::TrainConfig t;
  t.preset = cfg.get("preset");
  t.charset_size = cfg.get_int("charset");
  t.k = cfg.get_int("k");
  t.batch_size = cfg.get_int("batch_size");
  t.total_steps = cfg.get_int("steps");
  t.max_lr = cfg.get_double("max_lr");
  t.warmup_frac = cfg.get_double("warmup_frac");
  t.swa_start_frac = cfg.get_double("swa_start_frac");
  t.swa_every = cfg.get_int("swa_every");
  t.swa_lr_frac = cfg.get_double("swa_lr_frac");
  t.seed = cfg.get_u64("seed");
  t.val_every = cfg.get_int("val_every");
  t.val_samples = cfg.get_int("val_samples");
  model::ModelConfig mcfg;
  try {
    t.validate();
    mcfg = model::ModelConfig::from_preset(t.preset, t.charset_size);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const text::TokenCodec codec(text::charset_slice(t.charset_size), mcfg.max_len);
  const pipeline::Dataset train = load_for_training(cfg.get("manifest"), mcfg, codec, err);
  std::optional<pipeline::Dataset> val;
  if (!cfg.get("val_manifest").empty()) val = load_for_training(cfg.get("val_manifest"), mcfg, codec, err);

  out << "# step lr loss val_word_acc\n";
  const pipeline::TrainResult result = pipeline::train_loop(t, train, val ? &*val : nullptr, &out);
  std::map<std::string, std::string> meta;
  for (const auto& k : cfg.keys()) {
    if (k.name != "out") meta["train." + k.name] = cfg.get(k.name);
  }
  meta["train.samples"] = std::to_string(train.size());
  meta["train.swa_snapshots"] = std::to_string(result.swa_snapshots);
  model::save_checkpoint(cfg.get("out"), result.params, meta);
  out << "wrote checkpoint " << cfg.get("out") << '\n';
  return 0;
}

int run_eval(const CliConfig& cfg, std::ostream& out) {
  const model::Checkpoint ckpt = model::load_checkpoint(cfg.get("checkpoint"));
  const model::ModelConfig& mcfg = ckpt.params.config;
  const DecodeConfig dcfg = decode_config(cfg, mcfg.charset_size);
  const int limit = cfg.get_int("limit");
  const int batch = cfg.get_int("batch");
  if (limit < 0 || batch < 1) throw UsageError("need limit >= 0 and batch >= 1");

  // Labels are normalized for the evaluation charset, then encoded with the
  // model's ids so [E] matches the output head.
  const text::TokenCodec model_codec(model_charset(mcfg), mcfg.max_len);
  const text::TokenCodec eval_codec(
      dcfg.active_charset > 0 ? text::charset_slice(dcfg.active_charset) : model_charset(mcfg), mcfg.max_len);
  pipeline::Dataset data = pipeline::load_dataset(pipeline::read_manifest(cfg.get("manifest")), mcfg, eval_codec);
  for (auto& s : data.samples) s.encoded = text::encode_label(s.label, model_codec);

  pipeline::TransformerModel model(ckpt.params);
  const bool cloze = cfg.get_bool("cloze");
  pipeline::EvalReport report =
      cloze ? pipeline::evaluate_cloze(model, data, static_cast<std::size_t>(limit), static_cast<std::size_t>(batch))
            : pipeline::evaluate(model, data, dcfg, static_cast<std::size_t>(limit), static_cast<std::size_t>(batch));
  if (!cfg.get_bool("records")) report.records.clear();
  pipeline::write_report(out, report);
  return 0;
}

int run_predict(const CliConfig& cfg, std::ostream& out) {
  const model::Checkpoint ckpt = model::load_checkpoint(cfg.get("checkpoint"));
  const model::ModelConfig& mcfg = ckpt.params.config;
  const DecodeConfig dcfg = decode_config(cfg, mcfg.charset_size);
  const pipeline::Image image = pipeline::read_pnm(cfg.get("image"));
  pipeline::TransformerModel model(ckpt.params);
  num::NoGradScope no_grad;
  const pipeline::Encoded enc = model.encode(single_image(image, mcfg));
  const pipeline::Prediction p = pipeline::decode(model, enc, dcfg).front();
  const text::TokenCodec codec(model_charset(mcfg), mcfg.max_len);
  out << pipeline::to_text(p, codec) << '\t' << p.confidence() << '\n';
  return 0;
}

int run_dump_masks(const CliConfig& cfg, std::ostream& out) {
  const int t = cfg.get_int("t");
  if (t < 1) throw UsageError("--t must be positive");
  const auto order = cfg.get_int_list("perm");
  if (!order.empty()) {
    if (static_cast<int>(order.size()) != t) {
      throw UsageError("--perm lists " + std::to_string(order.size()) + " positions but --t is " + std::to_string(t));
    }
    try {
      perm::validate_permutation(order);
    } catch (const ContractError& e) {
      throw UsageError(e.what());
    }
    out << perm::mask_from_permutation(order, parse_role(cfg.get("role"))).render();
    return 0;
  }
  out << "# left-to-right\n" << perm::lookahead_mask(t).render();
  out << "# cloze\n" << perm::cloze_mask(t).render();
  return 0;
}

int run_bench(const CliConfig& cfg, std::ostream& out) {
  model::ModelParams params;
  if (!cfg.get("checkpoint").empty()) {
    params = model::load_checkpoint(cfg.get("checkpoint")).params;
  } else {
    num::Rng rng(cfg.get_u64("seed"));
    try {
      params = model::init_params(model::ModelConfig::from_preset(cfg.get("preset"), cfg.get_int("charset")), rng);
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
  }
  const int reps = cfg.get_int("reps");
  if (reps < 1) throw UsageError("--reps must be positive");
  const auto lengths = cfg.get_int_list("lengths");
  if (lengths.size() < 2) throw UsageError("--lengths needs at least two values");
  for (int l : lengths) {
    if (l < 0 || l > params.config.max_len) {
      throw UsageError("length " + std::to_string(l) + " outside [0, " + std::to_string(params.config.max_len) + "]");
    }
  }
  const model::ModelConfig& mcfg = params.config;
  pipeline::TransformerModel model(std::move(params));
  const pipeline::Image blank{mcfg.image_w, mcfg.image_h, 1,
                              std::vector<std::uint8_t>(static_cast<std::size_t>(mcfg.image_w * mcfg.image_h), 128)};
  const auto rows = pipeline::latency_bench(model, single_image(blank, mcfg), lengths, reps);
  pipeline::write_latency(out, rows);
  for (pipeline::Scheme scheme : {pipeline::Scheme::ar, pipeline::Scheme::nar}) {
    std::vector<double> x, y;
    for (const auto& r : rows) {
      if (r.scheme != scheme) continue;
      x.push_back(r.length);
      y.push_back(r.median_ms);
    }
    const auto fit = pipeline::fit_line(x, y);
    const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
    out << "fit " << pipeline::to_string(scheme) << " slope_ms_per_char " << fit.slope << " r2 " << fit.r2
        << " max_over_min " << (*lo > 0 ? *hi / *lo : 0.0) << '\n';
  }
  return 0;
}

int dispatch(const std::string& command, const CliConfig& cfg, std::ostream& out, std::ostream& err) {
  if (command == "synth") return run_synth(cfg, out);
  if (command == "train") return run_train(cfg, out, err);
  if (command == "eval") return run_eval(cfg, out);
  if (command == "predict") return run_predict(cfg, out);
  if (command == "dump-masks") return run_dump_masks(cfg, out);
  return run_bench(cfg, out);
}

std::string top_usage() {
  std::string s = "usage: permstr <command> [--config FILE] [--key value ...]\n\ncommands:\n";
  for (const auto& name : command_names()) {
    std::string padded = name;
    padded.resize(12, ' ');
    s += "  " + padded + command_summaries().at(name) + "\n";
  }
  s += "\nRun 'permstr <command> --help' for its flags.\n";
  return s;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"synth", "train", "eval", "predict", "dump-masks", "bench"};
  return names;
}

std::vector<KeySpec> command_keys(const std::string& command) {
  if (command == "synth") {
    return {{"out", "", "output directory (receives manifest.tsv and images/)", true},
            {"count", "512", "number of samples"},
            {"seed", "0", "random seed"},
            {"charset", "36", "charset size the labels are drawn from: 36, 62 or 94"},
            {"lexicon", "0", "draw labels from this many fixed pseudo-words (0: random strings)"},
            {"min_len", "2", "shortest label"},
            {"max_len", "8", "longest label"},
            {"width", "64", "image width in pixels"},
            {"height", "16", "image height in pixels"}};
  }
  if (command == "train") {
    return {{"manifest", "", "training manifest (TSV: image path, label)", true},
            {"val_manifest", "", "validation manifest (optional)"},
            {"out", "", "checkpoint path to write", true},
            {"preset", "tiny64", "model preset: tiny64 or parseq-ti"},
            {"charset", "36", "training charset size: 36, 62 or 94"},
            {"k", "6", "permutations per batch (1 or even)"},
            {"batch_size", "32", "samples per step"},
            {"steps", "3000", "optimizer steps"},
            {"max_lr", "0.001", "peak learning rate"},
            {"warmup_frac", "0.3", "fraction of steps spent warming up"},
            {"swa_start_frac", "0.75", "fraction of steps after which weights are averaged"},
            {"swa_every", "25", "steps between averaged snapshots"},
            {"swa_lr_frac", "0.05", "constant learning rate during averaging, as a fraction of max_lr"},
            {"seed", "0", "random seed"},
            {"val_every", "200", "steps between log lines"},
            {"val_samples", "128", "validation samples decoded per log line (0: all)"}};
  }
  if (command == "eval") {
    std::vector<KeySpec> keys{{"checkpoint", "", "checkpoint to evaluate", true},
                              {"manifest", "", "evaluation manifest", true}};
    for (auto& k : decode_keys()) keys.push_back(k);
    keys.push_back({"cloze", "false", "refine once from ground-truth context instead of decoding"});
    keys.push_back({"limit", "0", "evaluate at most this many samples (0: all)"});
    keys.push_back({"batch", "64", "images per forward pass"});
    keys.push_back({"records", "true", "print one record line per sample"});
    return keys;
  }
  if (command == "predict") {
    std::vector<KeySpec> keys{{"checkpoint", "", "checkpoint to use", true},
                              {"image", "", "PGM or PPM image", true}};
    for (auto& k : decode_keys()) keys.push_back(k);
    return keys;
  }
  if (command == "dump-masks") {
    return {{"t", "3", "label length"},
            {"perm", "", "factorization order, e.g. 2,3,1 (empty: left-to-right and cloze masks)"},
            {"role", "interior", "[E] row handling: interior, ltr_pair_first or rtl_pair_second"}};
  }
  if (command == "bench") {
    return {{"checkpoint", "", "checkpoint to time (empty: freshly initialized preset)"},
            {"preset", "parseq-ti", "model preset when no checkpoint is given"},
            {"charset", "94", "charset size when no checkpoint is given"},
            {"seed", "0", "initialization seed when no checkpoint is given"},
            {"lengths", "1,5,9,13,17,21,25", "forced output lengths"},
            {"reps", "21", "timed repetitions per length and scheme"}};
  }
  throw UsageError("unknown command '" + command + "'");
}

int run_command(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  if (args.empty()) {
    err << top_usage();
    return 1;
  }
  const std::string& command = args.front();
  if (command == "--help" || command == "-h" || command == "help") {
    out << top_usage();
    return 0;
  }
  if (std::find(command_names().begin(), command_names().end(), command) == command_names().end()) {
    err << "error: unknown command '" << command << "'\n\n" << top_usage();
    return 1;
  }

  CliConfig cfg(command_keys(command));
  CLI::App app(command_summaries().at(command), "permstr " + command);
  std::string config_path;
  app.add_option("--config", config_path, "flat key=value file; flags override it");
  std::vector<std::string> flag_values(cfg.keys().size());
  std::vector<CLI::Option*> flags;
  for (std::size_t i = 0; i < cfg.keys().size(); ++i) {
    const KeySpec& k = cfg.keys()[i];
    std::string help = k.help + (k.required ? " (required)" : "");
    CLI::Option* opt = app.add_option("--" + k.name, flag_values[i], help);
    if (!k.default_value.empty()) opt->default_str(k.default_value);
    flags.push_back(opt);
  }

  try {
    std::vector<std::string> rest(args.begin() + 1, args.end());
    std::reverse(rest.begin(), rest.end());
    app.parse(rest);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (!config_path.empty()) cfg.load_file(config_path);
    for (std::size_t i = 0; i < flags.size(); ++i) {
      if (flags[i]->count() > 0) cfg.set(cfg.keys()[i].name, flag_values[i]);
    }
    cfg.check_required();
    err << "# effective config: permstr " << command << '\n' << cfg.echo() << std::flush;
    return dispatch(command, cfg, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace permstr::cli
