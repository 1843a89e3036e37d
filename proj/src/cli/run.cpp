#include "pf/cli/run.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pf/analysis/heatmap.hpp"
#include "pf/cli/checks.hpp"
#include "pf/cli/config.hpp"
#include "pf/diffcore/parallel.hpp"
#include "pf/forensics/checkpoint.hpp"
#include "pf/forensics/metrics.hpp"
#include "pf/pipeline/resample.hpp"

#ifndef PF_VERSION
#define PF_VERSION "0.0.0"
#endif

namespace pf::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int threads = 0;
  std::vector<std::string> sets;
  std::string manifest, model, generator, split;
};

double round4(double v) { return std::round(v * 1e4) / 1e4; }

void write_json(const json& j, const fs::path& path) {
  std::ofstream o(path, std::ios::binary);
  o << j.dump(2) << "\n";
  if (!o) throw IoError("cannot write " + path.string());
}

ImageBuffer montage(const std::vector<ImageBuffer>& tiles, std::size_t cols) {
  if (tiles.empty()) return {};
  const std::size_t w = tiles[0].width, h = tiles[0].height, rows = (tiles.size() + cols - 1) / cols;
  ImageBuffer m(w * cols, h * rows, tiles[0].channels);
  for (std::size_t t = 0; t < tiles.size(); ++t)
    for (std::size_t c = 0; c < m.channels; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) m.at(c, (t / cols) * h + y, (t % cols) * w + x) = tiles[t].at(c, y, x);
  return m;
}

// Everything one subcommand needs: the resolved config and its run directory.
struct Context {
  ExperimentConfig cfg;
  fs::path dir;
  std::ostream& out;

  std::uint64_t seed(SeedStream s) const { return mix_seed(cfg.seed, s); }

  DatasetManifest dataset() const {
    if (!cfg.inputs.manifest.empty()) return load_manifest(cfg.inputs.manifest);
    SynthConfig sc = cfg.dataset;
    sc.seed = seed(kSeedSynth);
    out << "synthesizing " << to_string(sc.mode) << " dataset into " << (dir / "data").string() << "\n";
    return synth_dataset(sc, dir / "data");
  }

  Classifier classifier() const {
    if (cfg.inputs.model.empty()) throw ConfigError("inputs.model is required (--model)");
    return load_classifier(cfg.inputs.model);
  }

  AdversaryBundle adversary() const {
    if (cfg.inputs.generator.empty()) throw ConfigError("inputs.generator is required (--generator)");
    return load_adversary(cfg.inputs.generator);
  }
};

json metrics_json(const EvalResult& r, const std::string& split) {
  const bool both = std::count(r.labels.begin(), r.labels.end(), kFake) > 0 &&
                    std::count(r.labels.begin(), r.labels.end(), kReal) > 0;
  json j;
  j["schema"] = kMetricsSchema;
  j["split"] = split;
  j["images"] = r.labels.size();
  j["ap"] = both ? json(round4(r.ap)) : json(nullptr);
  j["patch_acc"] = round4(r.patch_acc);
  j["image_acc"] = round4(r.image_acc);
  return j;
}

LoadedSplit split_of(const DatasetManifest& m, Split s, std::size_t native) {
  auto l = load_split(m.filter(s), native);
  if (l.images.size() == 0) throw DataError("split '" + to_string(s) + "' is empty");
  return l;
}

ImageSet reals_of(const LoadedSplit& s) {
  ImageSet r;
  r.native = s.images.native;
  for (std::size_t i = 0; i < s.images.size(); ++i)
    if (s.images.labels[i] == kReal) {
      r.images.push_back(s.images.images[i]);
      r.labels.push_back(kReal);
    }
  if (r.size() == 0) throw DataError("no real images in the split");
  return r;
}

ImageSet concat(ImageSet a, const ImageSet& b) {
  a.images.insert(a.images.end(), b.images.begin(), b.images.end());
  a.labels.insert(a.labels.end(), b.labels.begin(), b.labels.end());
  return a;
}

// ---- subcommands ----

int do_synth(Context& c) {
  const auto m = c.dataset();
  c.out << "wrote " << m.records.size() << " records\n";
  return kExitOk;
}

int do_train(Context& c) {
  const auto m = c.dataset();
  const auto tr = split_of(m, Split::train, c.cfg.native), va = split_of(m, Split::val, c.cfg.native);
  auto model = make_classifier(c.cfg.backbone, c.seed(kSeedModel), c.cfg.native);
  TrainConfig tc = c.cfg.training;
  tc.seed = c.seed(kSeedTrain);
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = train(model, tr, va, tc, [&](const EpochRecord& e) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c.out << "epoch " << e.epoch << "  loss " << e.train_loss << "  val patch acc " << e.val_patch_acc << "  ("
          << std::lround(s) << " s)\n";
  });
  write_history(r.history, c.dir / "history.jsonl");
  save_classifier(model, c.dir / "model.ckpt", {{"seed", c.cfg.seed}, {"best_epoch", r.best_epoch}});
  write_json({{"best_epoch", r.best_epoch},
              {"best_val_patch_acc", round4(r.best_val_patch_acc)},
              {"epochs", r.history.size()},
              {"stopped_early", r.stopped_early},
              {"clamp_events", r.clamp_events}},
             c.dir / "training.json");
  const auto te = split_of(m, Split::test, c.cfg.native);
  const auto j = metrics_json(evaluate(model, te.images), "test");
  write_json(j, c.dir / "metrics.json");
  c.out << j.dump() << "\n";
  return kExitOk;
}

int do_eval(Context& c) {
  auto model = c.classifier();
  const auto split = split_of(c.dataset(), c.cfg.analysis.split, model.native);
  const auto j = metrics_json(evaluate(model, split.images), to_string(c.cfg.analysis.split));
  write_json(j, c.dir / "metrics.json");
  c.out << j.dump() << "\n";
  return kExitOk;
}

int do_heatmap(Context& c) {
  auto model = c.classifier();
  const auto split = split_of(c.dataset(), c.cfg.analysis.split, model.native);
  fs::create_directories(c.dir / "heatmaps");
  const PatchGeometry geo{model.geometry(), model.native, model.native};
  const std::size_t n = std::min(c.cfg.analysis.heatmap_images, split.images.size());
  ImageSet head;
  head.native = split.images.native;
  head.images.assign(split.images.images.begin(), split.images.images.begin() + long(n));
  head.labels.assign(split.images.labels.begin(), split.images.labels.begin() + long(n));
  const auto grids = predict(model, head);
  json records = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.png", i);
    export_heatmap(heatmap_from_grid(grids[i], geo), c.dir / "heatmaps" / name);
    const auto top = top_patch(grids[i], geo);
    const auto agg = aggregate(grids[i]);
    records.push_back({{"image", split.manifest.records[i].path},
                       {"label", head.labels[i]},
                       {"heatmap", std::string("heatmaps/") + name},
                       {"fake_score", agg.fake_score},
                       {"top_patch", {top.box.y0, top.box.y1, top.box.x0, top.box.x1}}});
  }
  json summary{{"images", records}, {"k", c.cfg.analysis.k}};
  for (int label : {kFake, kReal}) {
    const std::string tag = label == kFake ? "fake" : "real";
    try {
      const auto avg = average_heatmap(model, split.images, c.cfg.analysis.k, label);
      export_heatmap(avg.map, c.dir / ("average_" + tag + ".png"));
      summary["average_" + tag] = {{"selected", avg.selected.size()}, {"shortfall", avg.shortfall}};
    } catch (const DataError& e) {
      summary["average_" + tag] = {{"error", e.what()}};
    }
  }
  try {
    const auto loc = localization(model, split);
    summary["localization"] = {{"images", loc.images},
                               {"mean_mask_contrast", round4(loc.mean_contrast)},
                               {"top_patch_in_mask", round4(loc.top_in_mask)}};
  } catch (const DataError&) {
  }
  write_json(summary, c.dir / "heatmap.json");
  c.out << "wrote " << n << " heatmaps\n";
  return kExitOk;
}

int do_clusters(Context& c) {
  auto model = c.classifier();
  const auto split = split_of(c.dataset(), c.cfg.analysis.split, model.native);
  const auto h = cluster_histogram(model, split, c.cfg.analysis.cluster_mode, c.seed(kSeedClusters));
  save_histogram_json(h, c.dir / "clusters.json");
  save_histogram_png(h, c.dir / "clusters.png");
  c.out << "clustered " << h.total << " patches into " << h.counts.size() << " classes\n";
  return kExitOk;
}

int do_exaggerate(Context& c) {
  auto model = c.classifier();
  auto bundle = c.adversary();
  ExaggerateConfig ec = c.cfg.analysis.exaggerate;
  ec.seed = c.seed(kSeedExaggerate);
  const auto shift = exaggerate(generator_shift_objective(bundle.generator, model, ec.lambda), bundle.latent_dim, ec);

  const std::size_t n = c.cfg.analysis.samples;
  Rng rng(c.seed(kSeedSamples));
  const Tensor<float> zt = sample_latents(n, bundle.latent_dim, rng);
  const std::vector<double> z(zt.values().begin(), zt.values().end());
  // Columns: exaggerated (z - w), unshifted, attenuated (z + w).
  std::vector<ImageBuffer> tiles(3 * n);
  json scores;
  const char* names[] = {"exaggerated", "original", "attenuated"};
  bundle.generator.set_training(false);
  for (int col = 0; col < 3; ++col) {
    const Tensor<float> x = shifted_samples(bundle.generator, z, n, shift.w, double(1 - col));
    ImageSet s;
    s.native = bundle.image_size;
    for (std::size_t i = 0; i < n; ++i) {
      tiles[i * 3 + std::size_t(col)] = image_from_tensor(x, i);
      s.images.push_back(tiles[i * 3 + std::size_t(col)]);
      s.labels.push_back(kFake);
    }
    double mean = 0;
    for (const auto& g : predict(model, s)) mean += aggregate(g).fake_score;
    scores[names[col]] = round4(mean / double(n));
  }
  write_png(montage(tiles, 3), c.dir / "exaggerated.png");
  write_json({{"lambda", shift.lambda}, {"w", shift.w}, {"trace", shift.trace}, {"mean_fake_score", scores}},
             c.dir / "shift.json");
  double norm = 0;
  for (double v : shift.w) norm += v * v;
  c.out << "|w| = " << std::sqrt(norm) << " after " << shift.trace.size() - 1 << " accepted steps; mean fake score "
        << scores.dump() << "\n";
  return kExitOk;
}

void write_trace(const GanTrace& t, const fs::path& path) {
  std::ofstream o(path, std::ios::binary);
  for (std::size_t i = 0; i < t.d_loss.size(); ++i) {
    json j{{"step", i + 1}, {"d_loss", t.d_loss[i]}, {"g_loss", t.g_loss[i]}};
    if (i < t.real_loss.size()) j["real_loss"] = t.real_loss[i];
    o << j.dump() << "\n";
  }
}

int do_gan(Context& c) {
  const auto m = c.dataset();
  const auto real = reals_of(split_of(m, Split::train, c.cfg.gan.image_size));
  GanConfig gc = c.cfg.gan;
  gc.seed = c.seed(kSeedGan);
  auto r = gan_train(real, gc);
  save_adversary(r.bundle, c.dir / "generator");
  write_trace(r.trace, c.dir / "trace.jsonl");
  write_png(montage(generated_image_set(r.bundle, 16, c.seed(kSeedSamples)).images, 4), c.dir / "samples.png");
  const auto val = reals_of(split_of(m, Split::val, c.cfg.gan.image_size));
  json j{{"steps", r.trace.d_loss.size()},
         {"discriminator_accuracy", round4(discriminator_accuracy(r.bundle, val, c.seed(kSeedSamples)))},
         {"sample_variance", sample_variance(r.bundle, 64, c.seed(kSeedSamples))},
         {"events", r.trace.events}};
  if (!r.trace.d_loss.empty()) j["final"] = {{"d_loss", r.trace.d_loss.back()}, {"g_loss", r.trace.g_loss.back()}};
  write_json(j, c.dir / "gan.json");
  for (const auto& e : r.trace.events) c.out << "warning: " << e << "\n";
  c.out << j.dump() << "\n";
  return kExitOk;
}

int do_evade(Context& c) {
  auto model = c.classifier();
  auto bundle = c.adversary();
  const auto m = c.dataset();
  const auto real = reals_of(split_of(m, Split::train, bundle.image_size));
  const auto test_real = reals_of(split_of(m, Split::test, model.native));
  const auto score = [&] {
    auto fakes = generated_image_set(bundle, c.cfg.evade_eval_samples, c.seed(kSeedSamples));
    if (bundle.image_size != model.native)
      for (auto& img : fakes.images) img = lanczos_resize(img, model.native, model.native);
    fakes.native = model.native;
    return metrics_json(evaluate(model, concat(test_real, fakes)), "test+generated");
  };
  const json before = score();
  EvasionConfig ec = c.cfg.evasion;
  ec.seed = c.seed(kSeedEvade);
  const auto trace = evasion_finetune(bundle, real, model, ec);
  const json after = score();
  save_adversary(bundle, c.dir / "generator");
  write_trace(trace, c.dir / "trace.jsonl");
  write_png(montage(generated_image_set(bundle, 16, c.seed(kSeedSamples)).images, 4), c.dir / "samples.png");
  const json j{{"before", before}, {"after", after}, {"events", trace.events}};
  write_json(j, c.dir / "evade.json");
  c.out << "classifier image accuracy " << before["image_acc"] << " -> " << after["image_acc"] << "\n";
  return kExitOk;
}

int do_reproject(Context& c) {
  auto bundle = c.adversary();
  ReprojectConfig rc = c.cfg.reproject;
  rc.seed = c.seed(kSeedReproject);
  const auto m = build_reprojection_manifest(bundle, c.dataset(), rc, c.dir / "data");
  c.out << "wrote " << m.records.size() << " records to " << (c.dir / "data" / "manifest.jsonl").string() << "\n";
  return kExitOk;
}

int do_selftest(Context& c) {
  bool ok = true;
  json results = json::array();
  for (const auto& v : checks::selftest_suite(c.seed(kSeedSelftest))) {
    c.out << (v.passed ? "PASS " : "FAIL ") << v.name << ": " << v.detail << "\n";
    results.push_back({{"name", v.name}, {"passed", v.passed}, {"detail", v.detail}});
    ok = ok && v.passed;
  }
  write_json({{"passed", ok}, {"checks", results}}, c.dir / "selftest.json");
  c.out << (ok ? "selftest passed\n" : "selftest FAILED\n");
  return ok ? kExitOk : kExitFailure;
}

std::string error_kind(const std::exception& e) {
  if (const auto* pe = dynamic_cast<const Error*>(&e)) return pe->category();
  return "internal";
}

void report_error(std::ostream& err, const fs::path& dir, const std::string& subcommand, const std::string& kind,
                  const std::string& message, int code) {
  const json rec{{"schema", kErrorSchema}, {"subcommand", subcommand}, {"kind", kind}, {"message", message},
                 {"exit_code", code}};
  err << rec.dump() << "\n";
  if (!dir.empty() && fs::is_directory(dir)) {
    std::ofstream o(dir / "error.json", std::ios::binary);
    o << rec.dump(2) << "\n";
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Patch-level fake image forensics: datasets, classifiers, heatmaps and adversaries.", "pf"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.set_version_flag("--version", PF_VERSION);
  Options o;
  app.add_option("--config", o.config, "Experiment config file (INI)")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Global seed (overrides run.seed)");
  app.add_option("--out", o.out, std::string("Run directory (overrides run.out; default $") + kOutputRootEnv +
                                     "/<subcommand>, or runs/<subcommand>)");
  app.add_option("--threads", o.threads, "Worker cap; results do not depend on it")->check(CLI::NonNegativeNumber);
  app.add_option("--set", o.sets, "Config override section.key=value (repeatable)");

  struct Sub {
    const char* name;
    const char* help;
    int (*fn)(Context&);
    bool manifest, model, generator, split;
  };
  const Sub subs[] = {
      {"synth", "Render a toy dataset and its manifest", do_synth, false, false, false, false},
      {"train", "Train a truncated classifier; writes model, history and test metrics", do_train, true, false, false, false},
      {"eval", "Evaluate a classifier checkpoint on a manifest split", do_eval, true, true, false, true},
      {"heatmap", "Per-image and class-average heatmaps, with mask localization", do_heatmap, true, true, false, true},
      {"clusters", "Semantic cluster histogram of the most predictive patches", do_clusters, true, true, false, true},
      {"exaggerate", "Latent shift that exaggerates or attenuates detectable artifacts", do_exaggerate, false, true, true, false},
      {"gan", "Train the toy GAN on the real training images", do_gan, true, false, false, false},
      {"evade", "Finetune a generator against a frozen classifier", do_evade, true, true, true, false},
      {"reproject", "Reproject real images through a generator into a paired manifest", do_reproject, true, false, true, false},
      {"selftest", "Gradient checks, receptive-field table and AP oracle", do_selftest, false, false, false, false},
  };
  std::vector<CLI::App*> apps;
  for (const auto& s : subs) {
    auto* a = app.add_subcommand(s.name, s.help);
    if (s.manifest) a->add_option("--manifest", o.manifest, "Dataset manifest (overrides inputs.manifest)");
    if (s.model) a->add_option("--model", o.model, "Classifier checkpoint (overrides inputs.model)");
    if (s.generator) a->add_option("--generator", o.generator, "Adversary directory (overrides inputs.generator)");
    if (s.split) a->add_option("--split", o.split, "Split to read (overrides analysis.split)");
    apps.push_back(a);
  }

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::string sub = "";
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    report_error(err, {}, sub, "usage", e.what(), kExitUsage);
    return kExitUsage;
  }
  std::size_t which = 0;
  for (; which < apps.size(); ++which)
    if (apps[which]->parsed()) break;
  sub = subs[which].name;

  fs::path dir;
  try {
    ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
    for (const auto& s : o.sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
      set_value(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    if (o.seed) cfg.seed = *o.seed;
    if (!o.manifest.empty()) cfg.inputs.manifest = o.manifest;
    if (!o.model.empty()) cfg.inputs.model = o.model;
    if (!o.generator.empty()) cfg.inputs.generator = o.generator;
    if (!o.split.empty()) cfg.analysis.split = split_from_string(o.split);
    if (!o.out.empty()) cfg.out = o.out;
    if (cfg.out.empty()) {
      const char* root = std::getenv(kOutputRootEnv);
      cfg.out = (fs::path(root && *root ? root : "runs") / sub).string();
    }
    dir = cfg.out;
    cfg.validate();

    fs::create_directories(dir);
    fs::remove(dir / "error.json");
    save_config(cfg, dir / "config.ini");
    write_json({{"tool", "pf"}, {"version", PF_VERSION}, {"subcommand", sub}, {"seed", cfg.seed},
                {"threads", o.threads}, {"metrics_schema", kMetricsSchema}},
               dir / "run.json");
    if (o.threads > 0) set_num_threads(o.threads);

    Context ctx{std::move(cfg), dir, out};
    const int code = subs[which].fn(ctx);
    if (code != kExitOk) report_error(err, dir, sub, "check", "one or more checks failed", code);
    return code;
  } catch (const ConfigError& e) {
    report_error(err, dir, sub, "config", e.what(), kExitValidation);
    return kExitValidation;
  } catch (const std::exception& e) {
    report_error(err, dir, sub, error_kind(e), e.what(), kExitFailure);
    return kExitFailure;
  }
}

}  // namespace pf::cli
