// lmmvae: simulate datasets, fit and evaluate models, run experiments.

#include "lmmvae/lmmvae.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

using namespace lmmvae;

namespace {

// Simulation flags shared by `simulate` and `run`. Unset flags leave the
// configuration untouched.
struct SimFlags {
  std::string scenario;
  long n = 0;
  long p = 0;
  long d = 0;
  std::vector<int> q;
  std::vector<double> sigma2;
  std::vector<double> cat_sigma2;
  int poly_terms = 0;
  double phi_cov = std::nan("");
  double length_scale_sq = 0.0;
  std::string split;

  void add_to(CLI::App* app) {
    app->add_option("--scenario", scenario, "categorical | longitudinal | spatial | spatial-categorical");
    app->add_option("--n", n, "rows");
    app->add_option("--p", p, "features");
    app->add_option("--d", d, "latent dimension");
    app->add_option("--q", q, "levels: per categorical feature, subjects, or locations")->delimiter(',');
    app->add_option("--sigma2", sigma2, "variance parameters: sigma2_b per feature, Phi diagonal, or spatial sigma2_b")
        ->delimiter(',');
    app->add_option("--cat-sigma2", cat_sigma2, "categorical sigma2_b in the spatial-categorical scenario")->delimiter(',');
    app->add_option("--poly-terms", poly_terms, "longitudinal polynomial terms K");
    app->add_option("--phi-cov", phi_cov, "longitudinal intercept covariance");
    app->add_option("--length-scale-sq", length_scale_sq, "spatial RBF length scale squared");
    app->add_option("--split", split, "random | future | unknown");
  }

  static std::vector<double> broadcast(const std::vector<double>& v, std::size_t size) {
    if (v.size() == 1) return std::vector<double>(size, v[0]);
    if (v.size() != size) throw std::invalid_argument("expected 1 or " + std::to_string(size) + " variance values");
    return v;
  }

  void apply(sim::SimConfig& c) const {
    if (!scenario.empty()) c.scenario = re::scenario_from_string(scenario);
    if (n) c.n = n;
    if (p) c.p = p;
    if (d) c.d = d;
    if (poly_terms) c.poly_terms = poly_terms;
    if (!std::isnan(phi_cov)) c.phi_intercept_cov = phi_cov;
    if (length_scale_sq > 0) c.length_scale_sq = length_scale_sq;
    if (!split.empty()) c.split = sim::split_mode_from_string(split);
    const bool spatial = c.scenario == re::ScenarioKind::Spatial || c.scenario == re::ScenarioKind::SpatialCategorical;
    switch (c.scenario) {
      case re::ScenarioKind::Categorical:
        if (!q.empty()) c.cardinalities = q;
        break;
      case re::ScenarioKind::Longitudinal:
        if (!q.empty()) c.num_subjects = q[0];
        break;
      case re::ScenarioKind::Spatial:
        if (!q.empty()) c.num_locations = q[0];
        break;
      case re::ScenarioKind::SpatialCategorical:
        if (!q.empty()) c.num_locations = q[0];
        if (q.size() > 1) c.cardinalities.assign(q.begin() + 1, q.end());
        break;
    }
    if (c.scenario == re::ScenarioKind::Longitudinal && c.phi_diagonal.size() != static_cast<std::size_t>(c.poly_terms))
      c.phi_diagonal = broadcast({c.phi_diagonal.empty() ? 0.3 : c.phi_diagonal[0]}, static_cast<std::size_t>(c.poly_terms));
    if (!sigma2.empty()) {
      if (spatial)
        c.sigma2_spatial = sigma2[0];
      else if (c.scenario == re::ScenarioKind::Longitudinal)
        c.phi_diagonal = broadcast(sigma2, static_cast<std::size_t>(c.poly_terms));
      else
        c.sigma2_b = broadcast(sigma2, c.cardinalities.size());
    }
    if (!cat_sigma2.empty()) c.sigma2_b = broadcast(cat_sigma2, c.cardinalities.size());
    if (c.sigma2_b.size() != c.cardinalities.size()) c.sigma2_b = broadcast({c.sigma2_b.empty() ? 0.3 : c.sigma2_b[0]}, c.cardinalities.size());
  }
};

// Training flags shared by `fit` and `run`.
struct FitFlags {
  int d = 0;
  std::vector<int> hidden;
  int epochs = -1;
  int batch_size = 0;
  double beta = -1.0;
  double learning_rate = 0.0;

  void add_to(CLI::App* app) {
    app->add_option("--latent-dim", d, "latent dimension of the fitted model");
    app->add_option("--hidden", hidden, "hidden layer widths, e.g. 1000,500")->delimiter(',');
    app->add_option("--epochs", epochs, "training epochs");
    app->add_option("--batch-size", batch_size, "mini-batch size");
    app->add_option("--beta", beta, "KL weight");
    app->add_option("--learning-rate", learning_rate, "optimizer step size");
  }

  void apply(FitSettings& s) const {
    if (d) s.latent_dim = d;
    if (!hidden.empty()) s.hidden = hidden;
    if (epochs >= 0) s.epochs = epochs;
    if (batch_size) s.batch_size = batch_size;
    if (beta >= 0) s.beta = beta;
    if (learning_rate > 0) s.optimizer.learning_rate = learning_rate;
  }
};

nn::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return nn::json::parse(in);
}

void print_rows(const std::vector<eval::MetricRow>& rows) {
  for (const auto& r : rows) {
    std::cout << r.method << " seed=" << r.seed << " recon_mse=" << r.recon_mse << " nll=" << r.nll;
    if (!r.error.empty()) std::cout << " error: " << r.error;
    std::cout << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed-effects variational autoencoders: simulation, fitting and evaluation"};
  app.require_subcommand(1);

  // simulate
  auto* simulate = app.add_subcommand("simulate", "generate a dataset and write train.csv / test.csv");
  SimFlags sim_flags;
  sim_flags.add_to(simulate);
  std::uint64_t sim_seed = 0;
  std::string sim_out = ".";
  std::string sim_config;
  simulate->add_option("--seed", sim_seed, "random seed");
  simulate->add_option("--output-dir,-o", sim_out, "directory for train.csv and test.csv");
  simulate->add_option("--config", sim_config, "JSON simulation settings (flags override)");

  // fit
  auto* fit = app.add_subcommand("fit", "fit one method on a CSV dataset and save a checkpoint");
  std::string fit_train, fit_test, fit_method_name = "lmmvae", fit_scenario = "categorical", fit_out = "model.json", fit_config;
  int fit_num_cat = 1, fit_poly = 3;
  bool fit_no_std = false;
  std::uint64_t fit_seed = 0;
  FitFlags fit_flags;
  fit->add_option("--train", fit_train, "training CSV")->required();
  fit->add_option("--test", fit_test, "optional CSV whose levels and locations join the vocabulary");
  fit->add_option("--method", fit_method_name, "pca-ignore | pca-ohe | vae-ignore | vae-ohe | vae-embed | lmmvae | lmmvae-i");
  fit->add_option("--scenario", fit_scenario, "how to read the reserved columns");
  fit->add_option("--num-categorical", fit_num_cat, "number of __id_k columns (categorical scenarios)");
  fit->add_option("--poly-terms", fit_poly, "longitudinal K");
  fit->add_flag("--no-standardize", fit_no_std, "use features as given");
  fit->add_option("--seed", fit_seed, "random seed");
  fit->add_option("--config", fit_config, "JSON fit settings (flags override)");
  fit->add_option("--out,-o", fit_out, "checkpoint path");
  fit_flags.add_to(fit);

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a CSV and append to a results file");
  std::string ev_ckpt, ev_test, ev_results = "results.csv";
  evaluate->add_option("--checkpoint", ev_ckpt, "checkpoint from `fit`")->required();
  evaluate->add_option("--test", ev_test, "CSV to score")->required();
  evaluate->add_option("--results", ev_results, "results CSV to append to");

  // run
  auto* run = app.add_subcommand("run", "end-to-end experiment: data, every method, replicates, results");
  std::string run_config, run_out, run_methods_csv;
  std::vector<std::string> run_methods;
  std::uint64_t run_seed = 0;
  int run_reps = 0, run_jobs = 0;
  bool run_no_runtime = false;
  SimFlags run_sim;
  FitFlags run_fit;
  run->add_option("--config", run_config, "JSON experiment spec (flags override)");
  run->add_option("--methods", run_methods, "methods to fit")->delimiter(',');
  auto* seed_opt = run->add_option("--seed", run_seed, "base seed; replicate r uses seed + r");
  run->add_option("--replicates", run_reps, "replicate count");
  run->add_option("--jobs", run_jobs, "worker threads");
  run->add_option("--output-dir,-o", run_out, "directory for results.csv and summary.csv");
  run->add_flag("--no-runtime", run_no_runtime, "write runtime_s = 0 so repeated runs are byte-identical");
  run_sim.add_to(run);
  run_fit.add_to(run);

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) {
      sim::SimConfig cfg;
      if (!sim_config.empty()) cfg = sim_config_from_json(read_json(sim_config));
      sim_flags.apply(cfg);
      Rng rng(sim_seed);
      const auto ds = sim::generate(cfg, rng);
      std::filesystem::create_directories(sim_out);
      io::write_csv_dataset(sim_out + "/train.csv", gather_rows(ds.x, ds.train_rows), ds.scenario.subset(ds.train_rows));
      io::write_csv_dataset(sim_out + "/test.csv", gather_rows(ds.x, ds.test_rows), ds.scenario.subset(ds.test_rows));
      std::cout << "wrote " << ds.train_rows.size() << " training and " << ds.test_rows.size() << " test rows to " << sim_out
                << '\n';
      return 0;
    }

    if (fit->parsed()) {
      io::ScenarioDeclaration decl;
      decl.kind = re::scenario_from_string(fit_scenario);
      decl.num_categorical = fit_num_cat;
      decl.poly_terms = fit_poly;
      const auto train_table = io::read_numeric_csv(fit_train);
      std::vector<const io::NumericTable*> tables{&train_table};
      std::optional<io::NumericTable> test_table;
      if (!fit_test.empty()) {
        test_table = io::read_numeric_csv(fit_test);
        tables.push_back(&*test_table);
      }
      const auto vocab = io::build_vocabulary(tables, decl);
      io::LoadOptions opt;
      opt.standardize = !fit_no_std;
      opt.vocabulary = &vocab;
      auto data = io::dataset_from_table(train_table, decl, opt, fit_train);

      io::Checkpoint ckpt;
      if (!fit_config.empty()) ckpt.settings = io::settings_from_json(read_json(fit_config));
      fit_flags.apply(ckpt.settings);
      ckpt.seed = fit_seed;
      Rng rng(fit_seed);
      ckpt.model = fit_method(method_from_string(fit_method_name), data.x, data.scenario, ckpt.settings, rng);
      ckpt.declaration = decl;
      ckpt.vocabulary = data.vocabulary;
      ckpt.standardization = data.standardization;
      ckpt.feature_names = data.feature_names;
      io::save_checkpoint(fit_out, ckpt);
      std::cout << "saved " << fit_method_name << " checkpoint to " << fit_out << '\n';
      return 0;
    }

    if (evaluate->parsed()) {
      const auto ckpt = io::load_checkpoint(ev_ckpt);
      io::LoadOptions opt;
      opt.vocabulary = &ckpt.vocabulary;
      if (!ckpt.standardization.empty()) opt.standardization = &ckpt.standardization;
      else opt.standardize = false;
      const auto data = io::load_csv_dataset(ev_test, ckpt.declaration, opt);
      if (data.feature_names != ckpt.feature_names) throw std::invalid_argument("evaluate: feature columns differ from the checkpoint");
      const auto out = apply_method(ckpt.model, data.x, data.scenario);
      eval::MetricRow row;
      row.method = to_string(ckpt.model.method);
      row.scenario = re::to_string(ckpt.declaration.kind);
      row.d = ckpt.settings.latent_dim;
      row.params = "csv=" + std::filesystem::path(ev_test).filename().string();
      row.seed = ckpt.seed;
      row.recon_mse = eval::recon_mse(data.x, out.x_hat);
      row.nll = out.nll;
      const std::string hash = fnv1a_hex(io::settings_to_json(ckpt.settings).dump() + row.method + std::to_string(ckpt.seed));
      append_results_csv(ev_results, {row}, hash);
      print_rows({row});
      return 0;
    }

    if (run->parsed()) {
      ExperimentSpec spec;
      if (!run_config.empty()) {
        spec = spec_from_json(read_json(run_config));
      } else {
        spec.methods.assign(kAllMethods.begin(), kAllMethods.end());
      }
      const auto d_before = spec.sim.d;
      run_sim.apply(spec.sim);
      if (spec.sim.d != d_before) spec.fit.latent_dim = static_cast<int>(spec.sim.d);
      run_fit.apply(spec.fit);
      if (!run_methods.empty()) {
        spec.methods.clear();
        for (const auto& m : run_methods) spec.methods.push_back(method_from_string(m));
      }
      if (*seed_opt) spec.seed = run_seed;
      if (run_reps) spec.replicates = run_reps;
      if (run_jobs) spec.jobs = run_jobs;
      if (!run_out.empty()) spec.output_dir = run_out;
      if (run_no_runtime) spec.record_runtime = false;
      const auto table = run_experiment(spec);
      print_rows(table.rows);
      std::cout << "results appended to " << spec.output_dir << "/results.csv (spec " << table.spec_hash << ")\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
