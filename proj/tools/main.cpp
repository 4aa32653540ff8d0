// g2anon: dataset generation, training, anonymize/recover over image
// folders, evaluation reports, and comparison grids.
//
// Exit codes: 0 success, 2 usage error, 3 runtime failure.
// G2_SEED overrides the config/flag seed when set.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "g2/eval.hpp"
#include "g2/io.hpp"
#include "g2/train.hpp"

namespace fs = std::filesystem;
using namespace g2;

namespace {

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("G2_SEED");
  if (!s || !*s) return std::nullopt;
  return std::strtoull(s, nullptr, 10);
}

std::vector<std::string> list_pngs(const std::string& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  if (names.empty()) throw std::runtime_error("no .png files in " + dir);
  return names;
}

dpim::SystemState system_from_checkpoint(const std::string& path) {
  auto ck = train::load_checkpoint(path);
  auto cfg = train::TrainConfig::parse(ck.config_text);
  dpim::SystemState sys;
  Rng rng(cfg.seed);
  Rng init_rng = rng.fork();
  sys.init(init_rng, cfg.net(), cfg.model_seed, cfg.model_vertices);
  train::load_system(sys, ck);
  return sys;
}

int cmd_make_data(int n, std::uint64_t seed, int pool, int resolution,
                  const std::string& out, int pairs, bool force) {
  if (fs::exists(fs::path(out) / "manifest.json") && !force) {
    std::cout << "dataset already exists at " << out << " (use --force to rebuild)\n";
    return 0;
  }
  if (auto s = env_seed()) seed = *s;
  train::TrainConfig defaults;
  auto model = geometry::build_toy_3dmm(defaults.model_seed, defaults.model_vertices,
                                        defaults.d_s, defaults.d_e);
  auto ds = synth::make_dataset(n, seed, pool, resolution, model, pairs);
  synth::write_dataset(ds, model, out);
  std::cout << "wrote " << n << " samples, manifest digest "
            << synth::manifest_digest(out) << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& resume,
              const std::string& out) {
  auto cfg = config_path.empty() ? train::TrainConfig{}
                               : train::TrainConfig::load(config_path);
  if (!out.empty()) cfg.out_dir = out;
  if (auto s = env_seed()) cfg.seed = *s;
  auto ck = train::train(cfg, &std::cout, resume);
  std::cout << "final checkpoint: " << (fs::path(cfg.out_dir) / "ck_final.g2ck").string()
            << " (step " << ck.step << ")\n";
  return 0;
}

int cmd_anonymize(const std::string& ck_path, const std::string& in,
                  const std::string& out, std::uint64_t seed) {
  if (auto s = env_seed()) seed = *s;
  auto sys = system_from_checkpoint(ck_path);
  fs::create_directories(out);
  auto names = list_pngs(in);
  Rng rng(seed);
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& name : names) {
    auto x = io::load_png((fs::path(in) / name).string());
    auto z = identity::NoiseVector::sample(rng, sys.cfg.d_z);
    auto r = dpim::anonymize(x, z, sys);
    io::save_png((fs::path(out) / name).string(), r.y);
    auto hex = password::bits_to_hex(r.bits_embedded);
    std::ofstream audit(fs::path(out) / (name + ".bits.hex"));
    audit << hex << "\n";
    manifest.push_back({{"file", name}, {"bits_hex_file", name + ".bits.hex"}});
  }
  std::ofstream mf(fs::path(out) / "anonymize_manifest.json");
  mf << manifest.dump(1) << "\n";
  std::cout << "anonymized " << names.size() << " images -> " << out << "\n";
  return 0;
}

int cmd_recover(const std::string& ck_path, const std::string& in,
                const std::string& out) {
  auto sys = system_from_checkpoint(ck_path);
  fs::create_directories(out);
  auto names = list_pngs(in);
  int warnings = 0;
  for (const auto& name : names) {
    auto y = io::load_png((fs::path(in) / name).string());
    auto r = dpim::recover(y, sys);
    if (r.corruption_warning) {
      ++warnings;
      std::cerr << "warning: " << name << ": " << r.corrupted_floats
                << " corrupted floats in extracted password (zeroed)\n";
    }
    io::save_png((fs::path(out) / name).string(), r.x_hat);
  }
  std::cout << "recovered " << names.size() << " images -> " << out;
  if (warnings) std::cout << " (" << warnings << " with corruption warnings)";
  std::cout << "\n";
  return 0;
}

int cmd_eval(const std::string& ck_path, const std::string& manifest_dir,
             const std::string& inputs, const std::string& recovered,
             const std::string& out_prefix, std::uint64_t seed, int max_images) {
  if (auto s = env_seed()) seed = *s;
  auto sys = system_from_checkpoint(ck_path);
  eval::EvalReport rep;
  if (!manifest_dir.empty()) {
    auto ds = synth::load_dataset(manifest_dir);
    eval::EvalOptions opts;
    opts.seed = seed;
    opts.max_images = max_images;
    rep = eval::evaluate(sys, ds, opts);
  } else {
    if (inputs.empty() || recovered.empty())
      throw CLI::ValidationError("eval", "need --manifest or both --inputs and --recovered");
    std::vector<ImageTensor> a, b;
    for (const auto& n : list_pngs(inputs))
      a.push_back(io::load_png((fs::path(inputs) / n).string()));
    for (const auto& n : list_pngs(recovered))
      b.push_back(io::load_png((fs::path(recovered) / n).string()));
    rep = eval::evaluate_folders(sys, a, b);
  }
  std::ofstream js(out_prefix + ".json");
  js << rep.to_json() << "\n";
  std::ofstream cs(out_prefix + ".csv");
  cs << rep.to_csv();
  std::cout << rep.to_json() << "\n";
  return 0;
}

int cmd_grid(const std::string& inputs, const std::string& anonymized,
             const std::string& recovered, const std::string& out) {
  auto names = list_pngs(inputs);
  std::vector<std::vector<std::optional<ImageTensor>>> rows(3);
  int res = 0;
  for (const auto& name : names) {
    auto x = io::load_png((fs::path(inputs) / name).string());
    res = x.res;
    rows[0].push_back(std::move(x));
    auto ap = fs::path(anonymized) / name;
    rows[1].push_back(fs::exists(ap) ? std::optional(io::load_png(ap.string()))
                                     : std::nullopt);
    if (!recovered.empty()) {
      auto rp = fs::path(recovered) / name;
      rows[2].push_back(fs::exists(rp) ? std::optional(io::load_png(rp.string()))
                                       : std::nullopt);
    } else {
      rows[2].push_back(std::nullopt);
    }
  }
  io::save_png(out, eval::grid_image(rows, res));
  std::cout << "wrote grid " << out << " (" << names.size() << " columns)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reversible face anonymization toolkit"};
  app.require_subcommand(1);

  // make-data
  auto* mk = app.add_subcommand("make-data", "generate a synthetic dataset");
  int n = 0, pool = 50, resolution = 64, pairs = 200;
  std::uint64_t seed = 1;
  std::string out_dir, config_path, resume, ck_path, in_dir, manifest_dir;
  std::string inputs, anonymized, recovered, out_prefix = "eval";
  bool force = false;
  int max_images = 0;
  mk->add_option("--n", n, "number of samples")->required()->check(CLI::PositiveNumber);
  mk->add_option("--seed", seed, "dataset seed");
  mk->add_option("--pool", pool, "identity pool size");
  mk->add_option("--resolution", resolution, "image resolution");
  mk->add_option("--pairs", pairs, "positive/negative pair count");
  mk->add_option("--out", out_dir, "output directory")->required();
  mk->add_flag("--force", force, "rebuild even if the dataset exists");

  auto* tr = app.add_subcommand("train", "run the two-stage training pipeline");
  tr->add_option("--config", config_path, "key=value config file");
  tr->add_option("--resume", resume, "checkpoint to resume from");
  tr->add_option("--out", out_dir, "output directory (overrides config)");

  auto* an = app.add_subcommand("anonymize", "anonymize a folder of images");
  an->add_option("--checkpoint", ck_path, "trained checkpoint")->required();
  an->add_option("--in", in_dir, "input folder")->required();
  an->add_option("--out", out_dir, "output folder")->required();
  an->add_option("--seed", seed, "dummy-identity seed");

  auto* re = app.add_subcommand("recover", "recover a folder of anonymized images");
  re->add_option("--checkpoint", ck_path, "trained checkpoint")->required();
  re->add_option("--in", in_dir, "input folder")->required();
  re->add_option("--out", out_dir, "output folder")->required();

  auto* ev = app.add_subcommand("eval", "compute the evaluation report");
  ev->add_option("--checkpoint", ck_path, "trained checkpoint")->required();
  ev->add_option("--manifest", manifest_dir, "dataset directory (pipeline mode)");
  ev->add_option("--inputs", inputs, "input folder (comparison mode)");
  ev->add_option("--recovered", recovered, "recovered folder (comparison mode)");
  ev->add_option("--out", out_prefix, "output prefix for .json/.csv");
  ev->add_option("--seed", seed, "evaluation seed");
  ev->add_option("--max-images", max_images, "cap on evaluated images");

  auto* gr = app.add_subcommand("grid", "emit an input/anonymized/recovered grid");
  gr->add_option("--inputs", inputs, "input folder")->required();
  gr->add_option("--anonymized", anonymized, "anonymized folder")->required();
  gr->add_option("--recovered", recovered, "recovered folder");
  gr->add_option("--out", out_prefix, "output PNG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (mk->parsed()) return cmd_make_data(n, seed, pool, resolution, out_dir, pairs, force);
    if (tr->parsed()) return cmd_train(config_path, resume, out_dir);
    if (an->parsed()) return cmd_anonymize(ck_path, in_dir, out_dir, seed);
    if (re->parsed()) return cmd_recover(ck_path, in_dir, out_dir);
    if (ev->parsed())
      return cmd_eval(ck_path, manifest_dir, inputs, recovered, out_prefix, seed,
                      max_images);
    if (gr->parsed()) return cmd_grid(inputs, anonymized, recovered, out_prefix);
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.get_name() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
