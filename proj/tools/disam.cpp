// disam: domain-invariant feature learning with similarity activation maps.
// Subcommands: synth, train, build-db, retrieve, evaluate, gradcheck,
// plot-sam. Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "disam/checkpoint.hpp"
#include "disam/config.hpp"
#include "disam/evaluation.hpp"
#include "disam/image_io.hpp"
#include "disam/retrieval.hpp"
#include "disam/samcore.hpp"
#include "disam/synthgen.hpp"
#include "disam/trainer.hpp"

namespace fs = std::filesystem;
using namespace disam;

namespace {

std::string manifest_dir(const std::string& manifest_path) {
  return fs::path(manifest_path).parent_path().string();
}

std::ostream& open_or_stdout(std::ofstream& file, const std::string& path) {
  if (path.empty()) return std::cout;
  file.open(path, std::ios::trunc);
  if (!file) throw IoError("cannot open output file: " + path);
  return file;
}

// Optional Table-I-style correspondence: maps a query record's domain index
// to the model domain whose encoder should be used.
std::map<int, int> load_domain_map(const std::string& path) {
  std::map<int, int> out;
  if (path.empty()) return out;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open domain map: " + path);
  int from = 0, to = 0;
  while (in >> from >> to) out[from] = to;
  return out;
}

struct RetrieveArgs {
  std::string mode = "coarse";
  std::string db_path;
  std::string fine_db_path;
  std::string checkpoint;
  std::string fine_checkpoint;
  std::string manifest_path;
  std::string domain_map_path;
  std::string out_path;
  int top_n = 3;
  bool strict_fingerprint = false;
};

int run_retrieve(const RetrieveArgs& a) {
  const Manifest manifest = load_manifest(a.manifest_path);
  const std::string dir = manifest_dir(a.manifest_path);
  const auto domain_map = load_domain_map(a.domain_map_path);
  const retrieval::FeatureDatabase db = retrieval::load_feature_db(a.db_path);

  const net::ModelBundle bundle = net::load_checkpoint(a.checkpoint);
  std::optional<net::ModelBundle> fine_bundle;
  if (!a.fine_checkpoint.empty()) fine_bundle = net::load_checkpoint(a.fine_checkpoint);
  std::optional<retrieval::FeatureDatabase> fine_db;
  if (!a.fine_db_path.empty()) fine_db = retrieval::load_feature_db(a.fine_db_path);

  if (a.mode == "c2f" && !fine_bundle)
    throw InvalidConfig("c2f mode needs --fine-checkpoint");
  if (db.fingerprint != bundle.fingerprint) {
    const std::string msg = "feature db was built with model " + db.fingerprint +
                            ", queries use " + bundle.fingerprint;
    if (a.strict_fingerprint) throw FingerprintMismatch(msg);
    std::cerr << "warning: " << msg << "\n";
  }

  retrieval::FineFeatureSource fine_source;
  if (a.mode == "c2f") {
    if (fine_db) {
      if (a.strict_fingerprint && fine_db->fingerprint != fine_bundle->fingerprint)
        throw FingerprintMismatch("fine feature db fingerprint does not match --fine-checkpoint");
      fine_source = retrieval::cached_source(*fine_db);
    } else {
      fine_source = retrieval::reencode_source(*fine_bundle, manifest, dir, db, DomainId{0});
    }
  }

  std::ofstream file;
  std::ostream& out = open_or_stdout(file, a.out_path);
  char line[256];
  for (const ManifestRecord* rec : manifest.split_records(Split::query)) {
    const ImageSample img = load_image_sample(manifest, *rec, dir);
    DomainId domain = rec->domain;
    const auto mapped = domain_map.find(domain.index);
    if (mapped != domain_map.end()) domain.index = mapped->second;

    retrieval::RetrievalResult res;
    if (a.mode == "coarse") {
      res = retrieval::coarse_retrieve(db, net::encode(bundle, domain, img), a.top_n, rec->id);
    } else if (a.mode == "fine") {
      res = retrieval::fine_retrieve(db, net::encode(bundle, domain, img), a.top_n, rec->id);
    } else {
      retrieval::CoarseToFineOptions opts;
      opts.top_n = a.top_n;
      opts.strict_fingerprint = a.strict_fingerprint;
      res = retrieval::coarse_to_fine(db, *fine_bundle, bundle, img.pixels, domain, fine_source,
                                      opts, rec->id);
    }
    for (size_t r = 0; r < res.ranked.size(); ++r) {
      std::snprintf(line, sizeof(line), "%s %zu %s %.9g", rec->id.c_str(), r + 1,
                    res.ranked[r].db_id.c_str(), res.ranked[r].score);
      out << line << '\n';
    }
  }
  return 0;
}

struct EvaluateArgs {
  std::string results_path;
  std::string manifest_path;
  std::string thresholds = "0.25,2;0.5,5;5,10";
  std::string out_path;
  int recall_n = 25;
  double radius_m = 0;  // 0: match by place id
};

int run_evaluate(const EvaluateArgs& a) {
  const Manifest manifest = load_manifest(a.manifest_path);

  std::map<std::string, Pose> query_pose, db_pose;
  std::map<std::string, PlaceId> query_place, db_place;
  std::map<std::string, std::string> condition;
  for (const auto& rec : manifest.records) {
    if (rec.split == Split::database) {
      if (rec.pose) db_pose[rec.id] = *rec.pose;
      db_place[rec.id] = rec.place;
    } else if (rec.split == Split::query) {
      if (rec.pose) query_pose[rec.id] = *rec.pose;
      query_place[rec.id] = rec.place;
      condition[rec.id] = manifest.domain_names[static_cast<size_t>(rec.domain.index)];
    }
  }

  // results: `query_id rank db_id score`, ranks ascending per query
  std::ifstream in(a.results_path);
  if (!in) throw IoError("cannot open results: " + a.results_path);
  std::vector<evaluation::RankedList> ranked;
  std::map<std::string, size_t> index_of;
  std::string qid, db_id;
  long rank = 0;
  double score = 0;
  while (in >> qid >> rank >> db_id >> score) {
    auto [it, inserted] = index_of.try_emplace(qid, ranked.size());
    if (inserted) ranked.push_back({qid, {}});
    ranked[it->second].db_ids.push_back(db_id);
  }
  if (ranked.empty()) throw InvalidConfig("results file has no entries");

  std::vector<evaluation::Prediction> predictions;
  for (const auto& r : ranked) {
    const auto it = db_pose.find(r.db_ids.front());
    if (it == db_pose.end())
      throw MissingPose("rank-1 entry '" + r.db_ids.front() + "' has no pose in the manifest");
    predictions.push_back({r.query_id, it->second});
  }

  const auto thresholds = evaluation::parse_thresholds(a.thresholds);
  evaluation::EvalReport report;
  {
    std::map<std::string, Pose> gt;
    for (const auto& p : predictions) {
      const auto it = query_pose.find(p.query_id);
      if (it == query_pose.end())
        throw MissingGroundTruth("query '" + p.query_id + "' has no ground-truth pose");
      gt[p.query_id] = it->second;
    }
    report = evaluation::localize_percentages(predictions, gt, thresholds, &condition);
  }
  report.recall_curve =
      a.radius_m > 0
          ? evaluation::recall_at_n_radius(ranked, query_pose, db_pose, a.radius_m, a.recall_n)
          : evaluation::recall_at_n(ranked, query_place, db_place, a.recall_n);

  // human-readable table
  char buf[256];
  std::cout << "queries: " << report.n_queries << "\n";
  std::cout << "threshold        correct";
  for (const auto& c : report.condition_names) std::cout << "  " << c;
  std::cout << "\n";
  for (const auto& row : report.rows) {
    std::snprintf(buf, sizeof(buf), "%.2fm / %g deg   %6.2f%%", row.threshold.max_position_m,
                  row.threshold.max_angle_deg, row.percent);
    std::cout << buf;
    for (const double pc : row.per_condition) {
      std::snprintf(buf, sizeof(buf), "  %6.2f%%", pc);
      std::cout << buf;
    }
    std::cout << "\n";
  }
  std::snprintf(buf, sizeof(buf), "recall@1=%.4f recall@%d=%.4f",
                report.recall_curve.front(),
                static_cast<int>(report.recall_curve.size()),
                report.recall_curve.back());
  std::cout << buf << "\n";

  // machine-readable report
  std::ofstream file;
  std::ostream& out = open_or_stdout(file, a.out_path);
  for (const auto& row : report.rows) {
    std::snprintf(buf, sizeof(buf), "pct pos_m=%g ang_deg=%g value=%.6f",
                  row.threshold.max_position_m, row.threshold.max_angle_deg, row.percent);
    out << buf << '\n';
    for (size_t c = 0; c < row.per_condition.size(); ++c) {
      std::snprintf(buf, sizeof(buf), "pct_cond cond=%s pos_m=%g ang_deg=%g value=%.6f",
                    report.condition_names[c].c_str(), row.threshold.max_position_m,
                    row.threshold.max_angle_deg, row.per_condition[c]);
      out << buf << '\n';
    }
  }
  for (size_t n = 0; n < report.recall_curve.size(); ++n) {
    std::snprintf(buf, sizeof(buf), "recall n=%zu value=%.6f", n + 1, report.recall_curve[n]);
    out << buf << '\n';
  }
  return 0;
}

int run_gradcheck(uint64_t seed, int trials) {
  Rng rng(seed);
  double max_rel = 0;
  for (int t = 0; t < trials; ++t) {
    TensorD a({8, 5, 5}), b({8, 5, 5});
    for (int64_t i = 0; i < a.numel(); ++i) a[i] = rng.uniform(-1, 1);
    for (int64_t i = 0; i < b.numel(); ++i) b[i] = rng.uniform(-1, 1);
    const TensorD g = samcore::cosine_gradient(a, b);
    const double step = 1e-4;
    for (int64_t i = 0; i < a.numel(); ++i) {
      TensorD ap = a, am = a;
      ap[i] += step;
      am[i] -= step;
      const double fd = (samcore::mean_channel_cosine(ap, b).value -
                         samcore::mean_channel_cosine(am, b).value) /
                        (2 * step);
      if (std::abs(g[i]) > 1e-8) max_rel = std::max(max_rel, std::abs(fd - g[i]) / std::abs(g[i]));
    }
  }

  // reverse-mode activation-map gradients against finite differences
  double max_vjp = 0;
  for (int t = 0; t < std::max(1, trials / 10); ++t) {
    TensorD a({4, 4, 4}), b({4, 4, 4}), w({4, 4});
    for (int64_t i = 0; i < a.numel(); ++i) a[i] = rng.uniform(-1, 1);
    for (int64_t i = 0; i < b.numel(); ++i) b[i] = rng.uniform(-1, 1);
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-1, 1);
    auto loss = [&](const TensorD& x, const TensorD& y) {
      const ActivationMap m = samcore::activation_map(x, y);
      double acc = 0;
      for (int64_t i = 0; i < m.numel(); ++i) acc += w[i] * m[i];
      return acc;
    };
    const auto grads = samcore::activation_map_vjp(a, b, w);
    const double step = 1e-6;
    for (int64_t i = 0; i < a.numel(); ++i) {
      TensorD ap = a, am = a;
      ap[i] += step;
      am[i] -= step;
      max_vjp = std::max(max_vjp,
                         std::abs((loss(ap, b) - loss(am, b)) / (2 * step) - grads.g_first[i]));
      TensorD bp = b, bm = b;
      bp[i] += step;
      bm[i] -= step;
      max_vjp = std::max(max_vjp,
                         std::abs((loss(a, bp) - loss(a, bm)) / (2 * step) - grads.g_second[i]));
    }
  }

  const bool ok = max_rel < 1e-4 && max_vjp < 1e-5;
  std::printf("cosine gradient max relative error: %.3e (threshold 1e-4)\n", max_rel);
  std::printf("activation map reverse-mode max abs error: %.3e (threshold 1e-5)\n", max_vjp);
  std::printf("%s\n", ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}

int run_plot_sam(const std::string& ckpt, const std::string& image_a, const std::string& image_b,
                 int domain_a, int domain_b, const std::string& out_dir) {
  const net::ModelBundle bundle = net::load_checkpoint(ckpt);
  fs::create_directories(out_dir);
  const TensorF a = read_ppm(image_a);
  const TensorF b = read_ppm(image_b);
  const FeatureMap za = net::encode_pixels(bundle, DomainId{domain_a}, a);
  const FeatureMap zb = net::encode_pixels(bundle, DomainId{domain_b}, b);
  const ActivationMap map_a = samcore::activation_map(za, zb);
  const ActivationMap map_b = samcore::activation_map(zb, za);
  write_ppm(evaluation::sam_overlay(a, map_a), (fs::path(out_dir) / "overlay_a.ppm").string());
  write_ppm(evaluation::sam_overlay(b, map_b), (fs::path(out_dir) / "overlay_b.ppm").string());
  std::cout << "wrote " << (fs::path(out_dir) / "overlay_a.ppm").string() << " and overlay_b.ppm\n";
  return 0;
}

int classify_error(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const CorruptCheckpoint*>(&e) ||
      dynamic_cast<const VersionMismatch*>(&e) || dynamic_cast<const NanLoss*>(&e) ||
      dynamic_cast<const FingerprintMismatch*>(&e))
    return 2;
  if (dynamic_cast<const Error*>(&e)) return 1;
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"domain-invariant similarity activation map retrieval"};
  app.require_subcommand(1);

  uint64_t seed = 0;
  std::string config_path;
  bool verbose = false;
  app.add_option("--seed", seed, "global random seed");
  app.add_option("--config", config_path, "key=value configuration file");
  app.add_flag("--verbose", verbose, "chatty logging");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-domain dataset");
  synthgen::SynthConfig syn;
  std::string synth_out;
  synth->add_option("--places", syn.n_places, "number of distinct places");
  synth->add_option("--domains", syn.n_domains, "number of environmental domains");
  synth->add_option("--views", syn.views_per_place, "views per place");
  synth->add_option("--size", syn.image_size, "image size in pixels");
  synth->add_option("--noise", syn.noise_level, "per-domain pixel noise level");
  synth->add_option("--out", synth_out, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train the coarse or fine model");
  std::string stage_str = "coarse", train_manifest, train_out, resume_ckpt, warm_ckpt;
  std::string margin_str = "adaptive", negatives_str = "auto";
  std::vector<std::string> overrides;
  train->add_option("--stage", stage_str, "coarse|fine")
      ->check(CLI::IsMember({"coarse", "fine"}));
  train->add_option("--manifest", train_manifest, "dataset manifest")->required();
  train->add_option("--out", train_out, "output directory")->required();
  auto* opt_resume = train->add_option("--resume", resume_ckpt, "continue from a checkpoint");
  train->add_option("--warm-start", warm_ckpt, "initialize weights from a checkpoint")
      ->excludes(opt_resume);
  train->add_option("--margin", margin_str, "adaptive|constant")
      ->check(CLI::IsMember({"adaptive", "constant"}));
  train->add_option("--negatives", negatives_str, "auto|random|hard")
      ->check(CLI::IsMember({"auto", "random", "hard"}));
  train->add_option("--set", overrides, "config overrides, key=value")->take_all();

  // build-db
  auto* build = app.add_subcommand("build-db", "pre-encode the database split");
  std::string build_ckpt, build_manifest, build_out;
  int build_domain = 0;
  build->add_option("--checkpoint", build_ckpt, "model checkpoint")->required();
  build->add_option("--manifest", build_manifest, "dataset manifest")->required();
  build->add_option("--domain", build_domain, "reference domain index");
  build->add_option("--out", build_out, "output feature db file")->required();

  // retrieve
  auto* retrieve = app.add_subcommand("retrieve", "rank database entries for each query");
  RetrieveArgs ra;
  retrieve->add_option("--mode", ra.mode, "coarse|fine|c2f")
      ->check(CLI::IsMember({"coarse", "fine", "c2f"}));
  retrieve->add_option("--db", ra.db_path, "feature database file")->required();
  retrieve->add_option("--fine-db", ra.fine_db_path, "optional cached fine feature db");
  retrieve->add_option("--checkpoint", ra.checkpoint, "encoder checkpoint for queries")
      ->required();
  retrieve->add_option("--fine-checkpoint", ra.fine_checkpoint, "fine model for c2f");
  retrieve->add_option("--manifest", ra.manifest_path, "dataset manifest")->required();
  retrieve->add_option("--domain-map", ra.domain_map_path,
                       "optional query-domain to model-domain correspondence file");
  retrieve->add_option("--top-n", ra.top_n, "results per query");
  retrieve->add_option("--out", ra.out_path, "results file (default stdout)");
  retrieve->add_flag("--strict-fingerprint", ra.strict_fingerprint,
                     "fail instead of warning on fingerprint mismatch");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "localization percentages and recall@N");
  EvaluateArgs ea;
  evaluate->add_option("--results", ea.results_path, "retrieve output")->required();
  evaluate->add_option("--manifest", ea.manifest_path, "dataset manifest")->required();
  evaluate->add_option("--thresholds", ea.thresholds, "semicolon-separated meters,degrees");
  evaluate->add_option("--recall-n", ea.recall_n, "max N of the recall curve");
  evaluate->add_option("--radius-m", ea.radius_m,
                       "same-place radius in meters (default: match by place id)");
  evaluate->add_option("--out", ea.out_path, "machine-readable report file (default stdout)");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "randomized analytic-gradient verification");
  int gc_trials = 50;
  gradcheck->add_option("--trials", gc_trials, "number of random feature pairs");

  // plot-sam
  auto* plot = app.add_subcommand("plot-sam", "render activation-map overlays");
  std::string ps_ckpt, ps_a, ps_b, ps_out;
  int ps_da = 0, ps_db = 0;
  plot->add_option("--checkpoint", ps_ckpt, "model checkpoint")->required();
  plot->add_option("--image-a", ps_a, "first image (PPM)")->required();
  plot->add_option("--image-b", ps_b, "second image (PPM)")->required();
  plot->add_option("--domain-a", ps_da, "encoder domain for image a");
  plot->add_option("--domain-b", ps_db, "encoder domain for image b");
  plot->add_option("--out", ps_out, "output directory")->required();

  for (CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; }))
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    config::RunConfig rc;
    if (!config_path.empty()) rc = config::load_config_file(config_path, rc);
    if (app.count("--seed")) config::apply_key(rc, "seed", std::to_string(seed));

    if (synth->parsed()) {
      syn.seed = rc.network.seed;
      std::cerr << "# synth places=" << syn.n_places << " domains=" << syn.n_domains
                << " views=" << syn.views_per_place << " size=" << syn.image_size
                << " seed=" << syn.seed << "\n";
      synthgen::generate(syn, synth_out);
      std::cout << "wrote dataset under " << synth_out << "\n";
      return 0;
    }

    if (train->parsed()) {
      for (const std::string& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw InvalidConfig("--set expects key=value, got " + kv);
        config::apply_key(rc, kv.substr(0, eq), kv.substr(eq + 1));
      }
      std::cerr << "# effective configuration\n" << config::dump(rc);
      const Manifest manifest = load_manifest(train_manifest);
      trainer::TrainOptions opts;
      opts.margin =
          margin_str == "constant" ? trainer::MarginMode::constant : trainer::MarginMode::adaptive;
      opts.negatives = negatives_str == "random"  ? trainer::NegativeMode::random_only
                       : negatives_str == "hard" ? trainer::NegativeMode::hard_only
                                                 : trainer::NegativeMode::automatic;
      const Stage stage = stage_str == "fine" ? Stage::fine : Stage::coarse;
      const auto result =
          trainer::run_training(manifest, manifest_dir(train_manifest), rc.network, rc.weights,
                                rc.schedule, stage, train_out, opts, resume_ckpt, warm_ckpt);
      std::cout << "final checkpoint: " << result.last_checkpoint << "\n"
                << "metrics: " << result.metrics_path << "\n";
      return 0;
    }

    if (build->parsed()) {
      const Manifest manifest = load_manifest(build_manifest);
      const net::ModelBundle bundle = net::load_checkpoint(build_ckpt);
      const auto db = retrieval::build_feature_db(bundle, manifest, manifest_dir(build_manifest),
                                                  DomainId{build_domain});
      retrieval::save_feature_db(db, build_out);
      std::cout << "wrote " << db.size() << " entries to " << build_out << " (model "
                << db.fingerprint << ")\n";
      return 0;
    }

    if (retrieve->parsed()) return run_retrieve(ra);
    if (evaluate->parsed()) return run_evaluate(ea);
    if (gradcheck->parsed()) return run_gradcheck(rc.network.seed, gc_trials);
    if (plot->parsed()) return run_plot_sam(ps_ckpt, ps_a, ps_b, ps_da, ps_db, ps_out);

    throw UnknownCommand("no subcommand selected");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return classify_error(e);
  }
}
