// Command-line entry points: pretrain / prune / learn / transfer / eval /
// pack / unpack / bench. Every run with an --out directory writes a
// manifest (version, command, seed, effective settings) so experiments can
// be reproduced verbatim.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>

#include "nmsparse/kernels.hpp"
#include "nmsparse/mask_core.hpp"
#include "nmsparse/models.hpp"
#include "nmsparse/pruners.hpp"
#include "nmsparse/serialize.hpp"
#include "nmsparse/sparse24.hpp"
#include "nmsparse/trainer.hpp"

namespace fs = std::filesystem;
using namespace nmsparse;

namespace {

constexpr const char* kVersion = "0.1.0";

struct CommonOpts {
  std::string out;
  std::uint64_t seed = 0;
  std::string pattern = "2:4";
};

std::pair<int, int> parse_pattern(const std::string& s) {
  const std::size_t colon = s.find(':');
  if (colon == std::string::npos)
    throw ValidationError("pattern must look like n:m, got '" + s + "'");
  const int n = std::stoi(s.substr(0, colon));
  const int m = std::stoi(s.substr(colon + 1));
  enumerate_candidates(n, m);  // validates
  return {n, m};
}

void ensure_out(const std::string& out) {
  if (out.empty()) throw ValidationError("--out directory is required");
  fs::create_directories(out);
}

void write_manifest(const std::string& out, const std::string& command,
                    const std::map<std::string, std::string>& settings) {
  std::ostringstream os;
  os << "version=" << kVersion << "\n";
  os << "command=" << command << "\n";
  for (const auto& [k, v] : settings) os << k << "=" << v << "\n";
  write_text_file(out + "/manifest.txt", os.str());
}

std::map<std::string, std::string> config_settings(const TrainConfig& config) {
  std::map<std::string, std::string> kv = parse_kv_text(config.to_kv());
  return kv;
}

TrainConfig load_config(const std::string& config_path, CLI::App* cmd, CommonOpts& common,
                        int steps, double lambda, double alpha, double lr, int batch,
                        const std::string& skip_layers) {
  TrainConfig config;
  if (!config_path.empty()) config = TrainConfig::from_kv(read_text_file(config_path));
  // Explicit flags override the config file.
  if (cmd->count("--steps")) config.steps = steps;
  if (cmd->count("--lambda")) config.lambda_reg = lambda;
  if (cmd->count("--alpha")) config.prior_strength = alpha;
  if (cmd->count("--lr")) config.learning_rate = lr;
  if (cmd->count("--batch")) config.batch_size = batch;
  if (cmd->count("--seed")) config.seed = common.seed;
  if (cmd->count("--skip-layers")) {
    config.layers_to_skip.clear();
    std::stringstream ss(skip_layers);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) config.layers_to_skip.push_back(item);
  }
  if (cmd->count("--pattern") || config_path.empty()) {
    auto [n, m] = parse_pattern(common.pattern);
    config.pattern_n = n;
    config.pattern_m = m;
  }
  config.validate();
  return config;
}

std::vector<LayerMask> resolve_prior(const std::string& prior, const Model& model,
                                     const TrainConfig& config, const std::string& data_path,
                                     int calib_samples, bool* have_prior) {
  *have_prior = true;
  if (prior == "none" || prior.empty()) {
    *have_prior = false;
    return {};
  }
  if (prior == "magnitude") return prune_model_magnitude(model, config.pattern_n, config.pattern_m);
  if (prior == "wanda") {
    if (data_path.empty()) throw ValidationError("wanda prior needs --data for calibration");
    Corpus corpus = Corpus::from_file(data_path);
    BatchIterator it(corpus, config.batch_size, model.spec.context_length,
                     derive_seed(config.seed, "calib"));
    CalibrationStats stats = calibrate(model, it, static_cast<std::size_t>(calib_samples));
    return prune_model_wanda(model, stats, config.pattern_n, config.pattern_m);
  }
  // Otherwise a mask archive path.
  return import_external_masks(read_file(prior), model, config.pattern_n, config.pattern_m);
}

void write_learn_outputs(const std::string& out, const TrainResult& result,
                         const TrainConfig& config) {
  write_file(out + "/masks.nmmk", encode_masks(result.masks, config.pattern_n, config.pattern_m));
  write_text_file(out + "/metrics.txt", result.metrics.to_text());
  write_file(out + "/checkpoint.bin", result.checkpoint.serialize());
}

int cmd_pretrain(const CommonOpts& common, const std::string& data_path, const std::string& kind,
                 int embed, int layers, int heads, int ctx, int steps, double lr, int batch) {
  ensure_out(common.out);
  ToyModelSpec spec;
  spec.kind = kind_from_name(kind);
  spec.embed_dim = embed;
  spec.num_layers = layers;
  spec.num_heads = heads;
  spec.context_length = ctx;
  Model model = Model::build(spec, derive_seed(common.seed, "model"));
  Corpus corpus = Corpus::from_file(data_path);
  const double val = pretrain_dense(model, corpus, steps, lr, batch, common.seed);
  model.save(common.out + "/model.bin");
  std::ostringstream report;
  report.precision(17);
  report << "val_loss=" << val << "\n";
  report << "val_ppl=" << std::exp(val) << "\n";
  write_text_file(common.out + "/report.txt", report.str());
  write_manifest(common.out, "pretrain",
                 {{"data", data_path},
                  {"kind", kind},
                  {"embed", std::to_string(embed)},
                  {"layers", std::to_string(layers)},
                  {"heads", std::to_string(heads)},
                  {"ctx", std::to_string(ctx)},
                  {"steps", std::to_string(steps)},
                  {"lr", std::to_string(lr)},
                  {"batch", std::to_string(batch)},
                  {"seed", std::to_string(common.seed)}});
  std::cout << "pretrained " << kind << " model: val_loss=" << val << "\n";
  return 0;
}

int cmd_prune(const CommonOpts& common, const std::string& model_path, const std::string& method,
              const std::string& data_path, int calib_samples, int batch) {
  ensure_out(common.out);
  auto [n, m] = parse_pattern(common.pattern);
  Model model = Model::load(model_path);
  std::vector<LayerMask> masks;
  if (method == "magnitude") {
    masks = prune_model_magnitude(model, n, m);
  } else if (method == "wanda") {
    if (data_path.empty()) throw ValidationError("wanda pruning needs --data for calibration");
    Corpus corpus = Corpus::from_file(data_path);
    BatchIterator it(corpus, batch, model.spec.context_length, derive_seed(common.seed, "calib"));
    CalibrationStats stats = calibrate(model, it, static_cast<std::size_t>(calib_samples));
    masks = prune_model_wanda(model, stats, n, m);
  } else {
    throw ValidationError("unknown pruning method '" + method + "' (magnitude|wanda)");
  }
  write_file(common.out + "/masks.nmmk", encode_masks(masks, n, m));
  std::ostringstream report;
  report.precision(17);
  if (model.spec.kind == ModelKind::TransformerLm && !data_path.empty()) {
    Corpus corpus = Corpus::from_file(data_path);
    report << "dense_ppl=" << evaluate_perplexity(model, nullptr, corpus, batch) << "\n";
    report << "masked_ppl=" << evaluate_perplexity(model, &masks, corpus, batch) << "\n";
  }
  write_text_file(common.out + "/report.txt", report.str());
  write_manifest(common.out, "prune",
                 {{"model", model_path},
                  {"method", method},
                  {"data", data_path},
                  {"calib_samples", std::to_string(calib_samples)},
                  {"pattern", common.pattern},
                  {"seed", std::to_string(common.seed)}});
  std::cout << "wrote " << masks.size() << " one-shot masks (" << method << ")\n";
  return 0;
}

int cmd_learn(const CommonOpts& common, const std::string& model_path,
              const std::string& data_path, const TrainConfig& config, const std::string& prior,
              int calib_samples) {
  ensure_out(common.out);
  Model model = Model::load(model_path);
  Corpus corpus = Corpus::from_file(data_path);
  bool have_prior = false;
  std::vector<LayerMask> priors =
      resolve_prior(prior, model, config, data_path, calib_samples, &have_prior);
  CorpusSource data(corpus, model, config);
  TrainResult result = train_masks(model, data, config, have_prior ? &priors : nullptr);
  write_learn_outputs(common.out, result, config);
  std::ostringstream report;
  report.precision(17);
  report << "masked_ppl=" << evaluate_perplexity(model, &result.masks, corpus, config.batch_size)
         << "\n";
  report << "dense_ppl=" << evaluate_perplexity(model, nullptr, corpus, config.batch_size) << "\n";
  write_text_file(common.out + "/report.txt", report.str());
  auto settings = config_settings(config);
  settings["model"] = model_path;
  settings["data"] = data_path;
  settings["prior"] = prior.empty() ? "none" : prior;
  write_manifest(common.out, "learn", settings);
  std::cout << "learned masks for " << result.masks.size() << " tensors over " << config.steps
            << " steps\n";
  return 0;
}

int cmd_transfer(const CommonOpts& common, const std::string& model_path,
                 const std::string& data_path, const std::string& base_path,
                 const TrainConfig& config) {
  ensure_out(common.out);
  Model model = Model::load(model_path);
  Corpus corpus = Corpus::from_file(data_path);
  std::vector<LayerMask> base =
      import_external_masks(read_file(base_path), model, config.pattern_n, config.pattern_m);
  CorpusSource data(corpus, model, config);
  TrainResult result = transfer_masks(model, base, data, config);
  write_learn_outputs(common.out, result, config);
  std::ostringstream report;
  report.precision(17);
  report << "masked_ppl=" << evaluate_perplexity(model, &result.masks, corpus, config.batch_size)
         << "\n";
  write_text_file(common.out + "/report.txt", report.str());
  auto settings = config_settings(config);
  settings["model"] = model_path;
  settings["data"] = data_path;
  settings["base"] = base_path;
  write_manifest(common.out, "transfer", settings);
  std::cout << "transferred masks for " << result.masks.size() << " tensors\n";
  return 0;
}

int cmd_eval(const CommonOpts& common, const std::string& model_path, const std::string& data_path,
             const std::string& masks_path, const std::string& skip_layers, int batch) {
  Model model = Model::load(model_path);
  Corpus corpus = Corpus::from_file(data_path);
  std::ostringstream report;
  report.precision(17);
  if (masks_path.empty()) {
    report << "dense_ppl=" << evaluate_perplexity(model, nullptr, corpus, batch) << "\n";
  } else {
    auto [n, m] = parse_pattern(common.pattern);
    std::vector<LayerMask> masks = import_external_masks(read_file(masks_path), model, n, m);
    if (skip_layers.empty()) {
      report << "dense_ppl=" << evaluate_perplexity(model, nullptr, corpus, batch) << "\n";
      report << "masked_ppl=" << evaluate_perplexity(model, &masks, corpus, batch) << "\n";
    } else {
      SensitivityReport sens = layer_sensitivity(model, masks, corpus, skip_layers, batch);
      report << sens.to_text();
    }
  }
  std::cout << report.str();
  if (!common.out.empty()) {
    ensure_out(common.out);
    write_text_file(common.out + "/report.txt", report.str());
    write_manifest(common.out, "eval",
                   {{"model", model_path},
                    {"data", data_path},
                    {"masks", masks_path},
                    {"skip_layers", skip_layers},
                    {"pattern", common.pattern},
                    {"seed", std::to_string(common.seed)}});
  }
  return 0;
}

int cmd_pack(const CommonOpts& common, const std::string& input) {
  ensure_out(common.out);
  MaskArchive archive = decode_masks(read_file(input));
  const std::vector<std::uint8_t> bytes = encode_masks(archive.masks, archive.n, archive.m);
  write_file(common.out + "/masks.nmmk", bytes);
  std::ostringstream report;
  report.precision(17);
  std::size_t params = 0;
  for (const LayerMask& m : archive.masks) params += m.param_count();
  report << "tensors=" << archive.masks.size() << "\n";
  report << "params=" << params << "\n";
  report << "bits_per_param=" << archive_bits_per_param(bytes) << "\n";
  write_text_file(common.out + "/report.txt", report.str());
  write_manifest(common.out, "pack", {{"input", input}, {"seed", std::to_string(common.seed)}});
  std::cout << report.str();
  return 0;
}

int cmd_unpack(const CommonOpts& common, const std::string& input) {
  ensure_out(common.out);
  MaskArchive archive = decode_masks(read_file(input));
  write_file(common.out + "/masks.raw", encode_masks_raw(archive.masks, archive.n, archive.m));
  std::ostringstream report;
  report.precision(17);
  report << "tensors=" << archive.masks.size() << "\n";
  report << "bits_per_param=" << archive_bits_per_param(read_file(input)) << "\n";
  write_text_file(common.out + "/report.txt", report.str());
  write_manifest(common.out, "unpack", {{"input", input}, {"seed", std::to_string(common.seed)}});
  std::cout << "unpacked " << archive.masks.size() << " masks\n";
  return 0;
}

int cmd_bench(const CommonOpts& common, const std::string& sizes_csv, int repeats) {
  std::vector<std::size_t> sizes;
  std::stringstream ss(sizes_csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) sizes.push_back(std::stoull(item));
  if (sizes.empty()) throw ValidationError("--sizes must name at least one matrix size");
  BenchReport report = run_benchmark(sizes, repeats, common.seed);
  std::cout << report.to_text();
  if (!common.out.empty()) {
    ensure_out(common.out);
    write_text_file(common.out + "/bench.txt", report.to_text());
    write_manifest(common.out, "bench",
                   {{"sizes", sizes_csv},
                    {"repeats", std::to_string(repeats)},
                    {"seed", std::to_string(common.seed)}});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  kernels::apply_thread_env();
  CLI::App app{"Learnable N:M sparsity toolkit"};
  app.require_subcommand(1);

  CommonOpts common;
  std::string data_path, model_path, masks_path, config_path, prior = "none", base_path;
  std::string kind = "transformer", method = "magnitude", skip_layers, sizes_csv = "256,512,1024";
  std::string input_path;
  int embed = 64, layers = 2, heads = 4, ctx = 128;
  int steps = 2000, batch = 8, calib_samples = 256, repeats = 5;
  double lr = 1e-3, lambda = 1e-5, alpha = 3.0;

  auto add_common = [&](CLI::App* cmd, bool out_required) {
    auto* out_opt = cmd->add_option("--out", common.out, "output directory");
    if (out_required) out_opt->required();
    cmd->add_option("--seed", common.seed, "run seed; every random stream derives from it");
    cmd->add_option("--pattern", common.pattern, "sparsity pattern n:m (default 2:4)");
  };

  CLI::App* pretrain = app.add_subcommand("pretrain", "train the dense toy model");
  add_common(pretrain, true);
  pretrain->add_option("--data", data_path, "corpus file")->required();
  pretrain->add_option("--kind", kind, "linear|mlp|transformer");
  pretrain->add_option("--embed", embed);
  pretrain->add_option("--layers", layers);
  pretrain->add_option("--heads", heads);
  pretrain->add_option("--ctx", ctx);
  pretrain->add_option("--steps", steps);
  pretrain->add_option("--lr", lr);
  pretrain->add_option("--batch", batch);

  CLI::App* prune = app.add_subcommand("prune", "one-shot magnitude/wanda masks");
  add_common(prune, true);
  prune->add_option("--model", model_path)->required();
  prune->add_option("--method", method, "magnitude|wanda");
  prune->add_option("--data", data_path, "corpus for calibration / ppl report");
  prune->add_option("--calib-samples", calib_samples);
  prune->add_option("--batch", batch);

  CLI::App* learn = app.add_subcommand("learn", "learn masks end to end");
  add_common(learn, true);
  learn->add_option("--model", model_path)->required();
  learn->add_option("--data", data_path)->required();
  learn->add_option("--config", config_path, "key=value config file");
  learn->add_option("--steps", steps);
  learn->add_option("--lambda", lambda);
  learn->add_option("--alpha", alpha);
  learn->add_option("--lr", lr);
  learn->add_option("--batch", batch);
  learn->add_option("--prior", prior, "none|magnitude|wanda|<archive path>");
  learn->add_option("--skip-layers", skip_layers, "comma list of layers kept dense");
  learn->add_option("--calib-samples", calib_samples);

  CLI::App* transfer = app.add_subcommand("transfer", "transfer masks to a new corpus");
  add_common(transfer, true);
  transfer->add_option("--model", model_path)->required();
  transfer->add_option("--data", data_path)->required();
  transfer->add_option("--base", base_path, "base mask archive")->required();
  transfer->add_option("--config", config_path);
  transfer->add_option("--steps", steps);
  transfer->add_option("--lambda", lambda);
  transfer->add_option("--alpha", alpha);
  transfer->add_option("--lr", lr);
  transfer->add_option("--batch", batch);
  transfer->add_option("--skip-layers", skip_layers);

  CLI::App* evalc = app.add_subcommand("eval", "perplexity of dense vs masked model");
  add_common(evalc, false);
  evalc->add_option("--model", model_path)->required();
  evalc->add_option("--data", data_path)->required();
  evalc->add_option("--masks", masks_path);
  evalc->add_option("--skip-layers", skip_layers,
                    "sensitivity strategy: all|none|first:K|last:K|sweep|names");
  evalc->add_option("--batch", batch);

  CLI::App* pack = app.add_subcommand("pack", "re-encode masks + bits/param report");
  add_common(pack, true);
  pack->add_option("--input", input_path, "mask archive (coded or raw)")->required();

  CLI::App* unpack = app.add_subcommand("unpack", "decode archive to raw bitmask file");
  add_common(unpack, true);
  unpack->add_option("--input", input_path)->required();

  CLI::App* bench = app.add_subcommand("bench", "dense vs 2:4 kernel benchmark");
  add_common(bench, false);
  bench->add_option("--sizes", sizes_csv, "comma list of square sizes");
  bench->add_option("--repeats", repeats);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (pretrain->parsed())
      return cmd_pretrain(common, data_path, kind, embed, layers, heads, ctx, steps, lr, batch);
    if (prune->parsed())
      return cmd_prune(common, model_path, method, data_path, calib_samples, batch);
    if (learn->parsed()) {
      TrainConfig config =
          load_config(config_path, learn, common, steps, lambda, alpha, lr, batch, skip_layers);
      return cmd_learn(common, model_path, data_path, config, prior, calib_samples);
    }
    if (transfer->parsed()) {
      TrainConfig config =
          load_config(config_path, transfer, common, steps, lambda, alpha, lr, batch, skip_layers);
      return cmd_transfer(common, model_path, data_path, base_path, config);
    }
    if (evalc->parsed())
      return cmd_eval(common, model_path, data_path, masks_path, skip_layers, batch);
    if (pack->parsed()) return cmd_pack(common, input_path);
    if (unpack->parsed()) return cmd_unpack(common, input_path);
    if (bench->parsed()) return cmd_bench(common, sizes_csv, repeats);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (!common.out.empty()) {
      ensure_out(common.out);
      write_file(common.out + "/diverged_checkpoint.bin", e.checkpoint.serialize());
      std::cerr << "checkpoint written to " << common.out << "/diverged_checkpoint.bin\n";
    }
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
