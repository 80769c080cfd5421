// Command-line front end for the geostack library: synthetic data
// generation, GeoLayer training, stacking/folding, evaluation, and the
// analysis suites (CIL, permutations, stress test, lambda sweep).

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "geostack/evaluation.hpp"
#include "geostack/store.hpp"
#include "geostack/synthesis.hpp"
#include "geostack/training.hpp"

namespace gs = geostack;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

void print4(const char* name, double value) {
  std::printf("%s %.4f\n", name, value);
}

struct TrainFlags {
  double lr = 1e-4;
  int batch = 32;
  int epochs = 30;
  double lambda = 0.95;
  double tau = 0.07;
  int shots = 16;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--lr", lr, "Learning rate")->capture_default_str();
    cmd->add_option("--batch", batch, "Batch size")->capture_default_str();
    cmd->add_option("--epochs", epochs, "Training epochs")
        ->capture_default_str();
    cmd->add_option("--lambda", lambda, "Orthogonality weight in [0,1]")
        ->capture_default_str();
    cmd->add_option("--tau", tau, "InfoNCE temperature")
        ->capture_default_str();
    cmd->add_option("--shots", shots, "Samples per class for training")
        ->capture_default_str();
    cmd->add_option("--seed", seed, "RNG seed")->capture_default_str();
    cmd->add_option("--weight-decay", weight_decay, "AdamW weight decay")
        ->capture_default_str();
  }

  gs::TrainConfig config() const {
    gs::TrainConfig cfg;
    cfg.learning_rate = lr;
    cfg.batch_size = batch;
    cfg.epochs = epochs;
    cfg.lambda = lambda;
    cfg.tau = tau;
    cfg.shots = shots;
    cfg.seed = seed;
    cfg.weight_decay = weight_decay;
    return cfg;
  }
};

int cmd_gen_data(Eigen::Index dim, std::int32_t classes,
                 Eigen::Index per_class, double kappa, std::uint64_t seed,
                 bool orthonormal, const std::string& domain_id,
                 const std::string& out) {
  gs::SyntheticDomainSpec spec;
  spec.dim = dim;
  spec.classes = classes;
  spec.samples_per_class = per_class;
  spec.kappa = kappa;
  spec.seed = seed;
  spec.anchor_mode =
      orthonormal ? gs::AnchorMode::orthonormal : gs::AnchorMode::random_unit;
  spec.domain_id = domain_id;
  const gs::EmbeddingDataset data = gs::generate_domain(spec);
  gs::save_dataset(data, out);
  std::cerr << "wrote " << out << " (" << data.num_samples() << " samples, "
            << data.num_classes() << " classes, d=" << data.dim() << ")\n";
  print4("zero_shot_accuracy",
         gs::accuracy(data, gs::UpperTriangular::Identity(data.dim())));
  return kExitOk;
}

int cmd_train(const std::string& data_path, const TrainFlags& flags,
              const std::string& out, const std::string& report_path) {
  const gs::EmbeddingDataset data = gs::load_dataset(data_path);
  const gs::TrainConfig cfg = flags.config();
  const gs::EmbeddingDataset shots =
      gs::few_shot_sample(data, cfg.shots, cfg.seed);
  std::cerr << "training on " << shots.num_samples() << " of "
            << data.num_samples() << " samples\n";
  auto [layer, report] = gs::train_geolayer(shots, cfg);
  gs::save_layer(layer, out);
  if (!report_path.empty()) {
    std::string lines;
    for (const auto& rec : report.epochs) {
      nlohmann::json j = {{"align_loss", rec.align_loss},
                          {"ortho_loss", rec.ortho_loss},
                          {"coa_loss", rec.coa_loss},
                          {"raw_oe", rec.raw_oe}};
      lines += j.dump() + "\n";
    }
    std::ofstream rep(report_path, std::ios::trunc);
    rep << lines;
  }
  const double final_align = report.epochs.empty()
                                 ? gs::align_loss(layer.weight, shots, cfg.tau)
                                 : report.epochs.back().align_loss;
  print4("align_loss", final_align);
  print4("ortho_loss", layer.raw_oe);
  print4("normalized_oe", layer.normalized_oe);
  print4("accuracy", gs::accuracy(data, layer.weight));
  return kExitOk;
}

int cmd_stack(const std::vector<std::string>& layer_paths,
              const std::string& out_manifest, const std::string& mode,
              double alpha, const std::string& fold_projection,
              const std::string& out_proj, const std::string& out_layer) {
  std::vector<gs::GeoLayer> layers;
  for (const auto& path : layer_paths) {
    layers.push_back(gs::load_layer(path));
  }
  gs::GeoStack stack(layers);
  gs::UpperTriangular composite = gs::compose(stack);
  if (mode == "task-arithmetic") {
    gs::UpperTriangular sum = gs::UpperTriangular::Zero(stack.dim());
    for (const auto& layer : layers) {
      sum = sum + gs::perturbation(layer.weight);
    }
    composite = gs::add_identity(sum * alpha);
    if (!out_layer.empty()) {
      gs::save_layer(gs::GeoLayer::FromWeight(composite, "task-arithmetic"),
                     out_layer);
    }
  }

  std::vector<std::filesystem::path> paths(layer_paths.begin(),
                                           layer_paths.end());
  gs::StackManifest manifest = gs::make_manifest(stack.dim(), paths);
  if (!fold_projection.empty()) {
    if (out_proj.empty()) {
      throw gs::InvalidInput("--fold-projection requires --out-proj");
    }
    const gs::Projection p = gs::load_projection(fold_projection);
    gs::save_projection(gs::Projection{p.entries * composite.matrix()},
                        out_proj);
    manifest.folded_projection_path = out_proj;
  }
  gs::save_manifest(manifest, out_manifest);

  const gs::OrthogonalityError oe = gs::orthogonality_error(composite);
  print4("composite_raw_oe", oe.raw);
  print4("composite_normalized_oe", oe.normalized);
  print4("quasi_additive_deviation", gs::quasi_additive_approx(stack).second);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (std::size_t j = i + 1; j < layers.size(); ++j) {
      std::printf("commutator_deviation %zu %zu %.4f\n", i, j,
                  gs::commutator_deviation(layers[i], layers[j]));
    }
  }
  return kExitOk;
}

int cmd_eval(const std::string& data_path, const std::string& manifest_path,
             const std::string& layer_path, bool identity, bool per_class,
             const std::string& margins_path) {
  const gs::EmbeddingDataset data = gs::load_dataset(data_path);
  gs::UpperTriangular w = gs::UpperTriangular::Identity(data.dim());
  const int sources = (!manifest_path.empty()) + (!layer_path.empty()) +
                      (identity ? 1 : 0);
  if (sources != 1) {
    throw gs::InvalidInput(
        "eval: give exactly one of --manifest, --layer, --identity");
  }
  if (!manifest_path.empty()) {
    w = gs::compose(gs::load_stack(manifest_path));
  } else if (!layer_path.empty()) {
    w = gs::load_layer(layer_path).weight;
  }

  const auto records = gs::margin_records(data, w);
  Eigen::Index correct = 0;
  for (const auto& rec : records) {
    correct += rec.correct ? 1 : 0;
  }
  print4("accuracy",
         double(correct) / double(records.size()));

  if (per_class) {
    std::map<std::int32_t, std::pair<Eigen::Index, Eigen::Index>> per;
    for (const auto& rec : records) {
      auto& [num, den] = per[data.labels[rec.sample_id]];
      num += rec.correct ? 1 : 0;
      den += 1;
    }
    for (const auto& [cls, counts] : per) {
      std::printf("class %d accuracy %.4f\n", cls,
                  double(counts.first) / double(counts.second));
    }
  }
  if (!margins_path.empty()) {
    gs::ReportTable table;
    table.columns = {"sample_id", "margin", "correct"};
    for (const auto& rec : records) {
      table.rows.push_back({double(rec.sample_id), rec.margin,
                            rec.correct ? 1.0 : 0.0});
    }
    gs::write_report(table, margins_path, gs::ReportFormat::csv);
  }
  return kExitOk;
}

int cmd_cil(const std::string& data_path, int tasks, const TrainFlags& flags,
            const std::string& out, bool shuffle_classes,
            std::uint64_t shuffle_seed) {
  const gs::EmbeddingDataset data = gs::load_dataset(data_path);
  if (static_cast<int>(data.num_classes()) < tasks) {
    throw gs::InvalidInput("cil: fewer classes than tasks");
  }
  gs::CilSchedule schedule = gs::CilSchedule::Contiguous(
      static_cast<std::int32_t>(data.num_classes()), tasks, flags.shots,
      flags.seed);
  if (shuffle_classes) {
    std::vector<std::int32_t> order(
        static_cast<std::size_t>(data.num_classes()));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t next = 0;
    for (auto& task : schedule.task_classes) {
      for (auto& cls : task) {
        cls = order[next++];
      }
    }
  }
  const gs::CilResult result = gs::run_cil(data, schedule, flags.config());
  gs::ReportTable table;
  table.columns = {"task", "classes_seen", "global_accuracy",
                   "task0_retention"};
  std::size_t seen = 0;
  for (std::size_t k = 0; k < result.global_accuracy.size(); ++k) {
    seen += schedule.task_classes[k].size();
    table.rows.push_back({double(k), double(seen), result.global_accuracy[k],
                          result.task0_retention[k]});
    std::printf("task %zu global %.4f retention %.4f\n", k,
                result.global_accuracy[k], result.task0_retention[k]);
  }
  if (!out.empty()) {
    gs::write_report(table, out, gs::ReportFormat::csv);
  }
  return kExitOk;
}

int cmd_permute(const std::vector<std::string>& data_paths,
                const std::vector<std::string>& layer_paths, int k,
                std::uint64_t seed, const std::string& out) {
  if (data_paths.size() != layer_paths.size()) {
    throw gs::InvalidInput("permute: --data and --layer counts differ");
  }
  std::vector<gs::EmbeddingDataset> domains;
  std::vector<gs::GeoLayer> layers;
  for (std::size_t i = 0; i < data_paths.size(); ++i) {
    domains.push_back(gs::load_dataset(data_paths[i]));
    layers.push_back(gs::load_layer(layer_paths[i]));
  }
  const auto stats = gs::permutation_test(domains, layers, k, seed);
  std::string csv = "domain_id,mean,stddev,range\n";
  for (const auto& s : stats) {
    csv += s.domain_id + "," + gs::format_double(s.mean) + "," +
           gs::format_double(s.stddev) + "," + gs::format_double(s.range) +
           "\n";
    std::printf("%s mean %.4f stddev %.4f range %.4f\n", s.domain_id.c_str(),
                s.mean, s.stddev, s.range);
  }
  if (!out.empty()) {
    std::ofstream f(out, std::ios::trunc);
    f << csv;
  }
  return kExitOk;
}

int cmd_stress(const std::string& data_path, std::vector<double> gammas,
               int trials, std::uint64_t seed, const std::string& out) {
  const gs::EmbeddingDataset data = gs::load_dataset(data_path);
  gs::StressGrid grid;
  std::sort(gammas.begin(), gammas.end());
  grid.gamma_targets = std::move(gammas);
  grid.trials_per_target = trials;
  grid.seed = seed;
  const auto points = gs::stress_test(data, grid);
  gs::ReportTable table;
  table.columns = {"gamma", "mean", "std", "n"};
  for (const auto& p : points) {
    table.rows.push_back({p.gamma, p.mean_accuracy, p.stddev, double(trials)});
    std::printf("gamma %.5f mean %.4f std %.4f\n", p.gamma, p.mean_accuracy,
                p.stddev);
  }
  if (!out.empty()) {
    gs::write_report(table, out, gs::ReportFormat::csv);
  }
  return kExitOk;
}

int cmd_lambda_sweep(const std::string& data_path,
                     const std::vector<double>& lambdas,
                     const TrainFlags& flags, const std::string& out) {
  const gs::EmbeddingDataset data = gs::load_dataset(data_path);
  const auto points = gs::lambda_sweep(data, lambdas, flags.config());
  gs::ReportTable table;
  table.columns = {"lambda", "final_normalized_oe", "accuracy"};
  for (const auto& p : points) {
    table.rows.push_back({p.lambda, p.final_normalized_oe, p.accuracy});
    std::printf("lambda %.4f oe %.4f accuracy %.4f\n", p.lambda,
                p.final_normalized_oe, p.accuracy);
  }
  if (!out.empty()) {
    gs::write_report(table, out, gs::ReportFormat::csv);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GeoStack: geometrically constrained bilinear adapters"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic domain");
  Eigen::Index gen_dim = 64, gen_per_class = 20;
  std::int32_t gen_classes = 10;
  double gen_kappa = 4.0;
  std::uint64_t gen_seed = 0;
  bool gen_orthonormal = false;
  std::string gen_domain_id = "synthetic", gen_out;
  gen->add_option("--dim", gen_dim)->capture_default_str();
  gen->add_option("--classes", gen_classes)->capture_default_str();
  gen->add_option("--per-class", gen_per_class)->capture_default_str();
  gen->add_option("--kappa", gen_kappa)->capture_default_str();
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_flag("--orthonormal", gen_orthonormal,
                "Orthonormal anchors (needs classes <= dim)");
  gen->add_option("--domain-id", gen_domain_id)->capture_default_str();
  gen->add_option("--out", gen_out, "Output GSEM file")->required();

  // train
  auto* train = app.add_subcommand("train", "Train a GeoLayer");
  std::string train_data, train_out, train_report;
  TrainFlags train_flags;
  train->add_option("--data", train_data, "GSEM dataset")->required();
  train_flags.add_to(train);
  train->add_option("--out", train_out, "Output GSLY layer")->required();
  train->add_option("--report", train_report,
                    "Per-epoch loss records (JSON lines)");

  // stack
  auto* stk = app.add_subcommand("stack", "Compose layers into a stack");
  std::vector<std::string> stk_layers;
  std::string stk_manifest, stk_mode = "stack", stk_proj, stk_out_proj,
              stk_out_layer;
  double stk_alpha = 1.0;
  stk->add_option("--layers", stk_layers, "Layer files, base first")
      ->required()
      ->expected(-1);
  stk->add_option("--out-manifest", stk_manifest)->required();
  stk->add_option("--mode", stk_mode, "stack | task-arithmetic")
      ->check(CLI::IsMember({"stack", "task-arithmetic"}))
      ->capture_default_str();
  stk->add_option("--alpha", stk_alpha, "Task-arithmetic scale")
      ->capture_default_str();
  stk->add_option("--fold-projection", stk_proj, "Projection file to fold");
  stk->add_option("--out-proj", stk_out_proj, "Folded projection output");
  stk->add_option("--out-layer", stk_out_layer,
                  "Composite layer output (task-arithmetic mode)");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a dataset under a stack");
  std::string eval_data, eval_manifest, eval_layer, eval_margins;
  bool eval_identity = false, eval_per_class = false;
  eval->add_option("--data", eval_data)->required();
  eval->add_option("--manifest", eval_manifest);
  eval->add_option("--layer", eval_layer);
  eval->add_flag("--identity", eval_identity, "Zero-shot evaluation");
  eval->add_flag("--per-class", eval_per_class);
  eval->add_option("--margins", eval_margins, "Per-sample margin CSV");

  // cil
  auto* cil = app.add_subcommand("cil", "Class-incremental learning run");
  std::string cil_data, cil_out;
  int cil_tasks = 4;
  bool cil_shuffle = false;
  std::uint64_t cil_shuffle_seed = 0;
  TrainFlags cil_flags;
  cil->add_option("--data", cil_data)->required();
  cil->add_option("--tasks", cil_tasks)->capture_default_str();
  cil_flags.add_to(cil);
  cil->add_option("--out", cil_out, "Curve CSV output");
  cil->add_flag("--shuffle-classes", cil_shuffle,
                "Randomize the class partition");
  cil->add_option("--shuffle-seed", cil_shuffle_seed)->capture_default_str();

  // permute
  auto* perm = app.add_subcommand("permute", "Stack-order permutation test");
  std::vector<std::string> perm_data, perm_layers;
  int perm_k = 24;
  std::uint64_t perm_seed = 0;
  std::string perm_out;
  perm->add_option("--data-list", perm_data)->required()->expected(-1);
  perm->add_option("--layer-list", perm_layers)->required()->expected(-1);
  perm->add_option("--k", perm_k, "Sampled orderings when > 4 layers")
      ->capture_default_str();
  perm->add_option("--seed", perm_seed)->capture_default_str();
  perm->add_option("--out", perm_out);

  // stress
  auto* stress = app.add_subcommand("stress", "Controlled-OE stress test");
  std::string stress_data, stress_out;
  std::vector<double> stress_gammas = {1e-5, 0.005, 0.015, 0.03,
                                       0.06, 0.1,   0.5,   1.7};
  int stress_trials = 5;
  std::uint64_t stress_seed = 0;
  stress->add_option("--data", stress_data)->required();
  stress->add_option("--gammas", stress_gammas, "Target normalized OE values")
      ->expected(-1)
      ->capture_default_str();
  stress->add_option("--trials", stress_trials)->capture_default_str();
  stress->add_option("--seed", stress_seed)->capture_default_str();
  stress->add_option("--out", stress_out);

  // lambda-sweep
  auto* sweep = app.add_subcommand("lambda-sweep", "Constraint-weight sweep");
  std::string sweep_data, sweep_out;
  std::vector<double> sweep_lambdas = {0.5, 0.7, 0.9, 0.95, 0.99};
  TrainFlags sweep_flags;
  sweep->add_option("--data", sweep_data)->required();
  sweep->add_option("--lambdas", sweep_lambdas)
      ->expected(-1)
      ->capture_default_str();
  sweep_flags.add_to(sweep);
  sweep->add_option("--out", sweep_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      return cmd_gen_data(gen_dim, gen_classes, gen_per_class, gen_kappa,
                          gen_seed, gen_orthonormal, gen_domain_id, gen_out);
    }
    if (train->parsed()) {
      return cmd_train(train_data, train_flags, train_out, train_report);
    }
    if (stk->parsed()) {
      return cmd_stack(stk_layers, stk_manifest, stk_mode, stk_alpha, stk_proj,
                       stk_out_proj, stk_out_layer);
    }
    if (eval->parsed()) {
      return cmd_eval(eval_data, eval_manifest, eval_layer, eval_identity,
                      eval_per_class, eval_margins);
    }
    if (cil->parsed()) {
      return cmd_cil(cil_data, cil_tasks, cil_flags, cil_out, cil_shuffle,
                     cil_shuffle_seed);
    }
    if (perm->parsed()) {
      return cmd_permute(perm_data, perm_layers, perm_k, perm_seed, perm_out);
    }
    if (stress->parsed()) {
      return cmd_stress(stress_data, stress_gammas, stress_trials, stress_seed,
                        stress_out);
    }
    if (sweep->parsed()) {
      return cmd_lambda_sweep(sweep_data, sweep_lambdas, sweep_flags,
                              sweep_out);
    }
  } catch (const gs::ConvergenceError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const gs::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const gs::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
