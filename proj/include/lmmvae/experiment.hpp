#pragma once

#include "lmmvae/eval/metrics.hpp"
#include "lmmvae/io/checkpoint.hpp"
#include "lmmvae/io/csv.hpp"
#include "lmmvae/methods.hpp"
#include "lmmvae/sim/simgen.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace lmmvae {

using json = nlohmann::json;

/// CSV input for an experiment. Without a test file every replicate draws
/// its own random 80/20 split of `train`.
struct CsvSource {
  std::string train;
  std::string test;
  io::ScenarioDeclaration declaration;
  bool standardize = true;
};

struct ExperimentSpec {
  std::vector<Method> methods;
  sim::SimConfig sim;
  std::optional<CsvSource> csv;
  FitSettings fit;
  int replicates = 5;
  std::uint64_t seed = 0;
  std::string output_dir = "results";
  int jobs = 1;
  bool include_oracle = true;   // simulations only
  bool record_runtime = true;   // false writes runtime_s = 0 for byte-stable output
  bool dump_b_pairs = false;    // (true, predicted) B entries of LMMVAE fits

  re::ScenarioKind scenario() const { return csv ? csv->declaration.kind : sim.scenario; }

  void validate() const {
    if (methods.empty()) throw std::invalid_argument("experiment: at least one method is required");
    if (replicates < 1) throw std::invalid_argument("experiment: replicates must be >= 1");
    if (jobs < 1) throw std::invalid_argument("experiment: jobs must be >= 1");
    if (!csv) sim.validate();
  }
};

namespace detail {

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline json sim_config_to_json(const sim::SimConfig& c) {
  return json{{"scenario", re::to_string(c.scenario)},
              {"n", c.n},
              {"p", c.p},
              {"d", c.d},
              {"cardinalities", c.cardinalities},
              {"sigma2_b", c.sigma2_b},
              {"num_subjects", c.num_subjects},
              {"poly_terms", c.poly_terms},
              {"phi_diagonal", c.phi_diagonal},
              {"phi_intercept_cov", c.phi_intercept_cov},
              {"num_locations", c.num_locations},
              {"length_scale_sq", c.length_scale_sq},
              {"sigma2_spatial", c.sigma2_spatial},
              {"noise_var", c.noise_var},
              {"mean_low", c.mean_low},
              {"mean_high", c.mean_high},
              {"split", sim::to_string(c.split)},
              {"test_fraction", c.test_fraction}};
}

inline sim::SimConfig sim_config_from_json(const json& j, sim::SimConfig c = {}) {
  if (j.contains("scenario")) c.scenario = re::scenario_from_string(j.at("scenario").get<std::string>());
  detail::read_if(j, "n", c.n);
  detail::read_if(j, "p", c.p);
  detail::read_if(j, "d", c.d);
  detail::read_if(j, "cardinalities", c.cardinalities);
  detail::read_if(j, "sigma2_b", c.sigma2_b);
  detail::read_if(j, "num_subjects", c.num_subjects);
  detail::read_if(j, "poly_terms", c.poly_terms);
  detail::read_if(j, "phi_diagonal", c.phi_diagonal);
  detail::read_if(j, "phi_intercept_cov", c.phi_intercept_cov);
  detail::read_if(j, "num_locations", c.num_locations);
  detail::read_if(j, "length_scale_sq", c.length_scale_sq);
  detail::read_if(j, "sigma2_spatial", c.sigma2_spatial);
  detail::read_if(j, "noise_var", c.noise_var);
  detail::read_if(j, "mean_low", c.mean_low);
  detail::read_if(j, "mean_high", c.mean_high);
  if (j.contains("split")) c.split = sim::split_mode_from_string(j.at("split").get<std::string>());
  detail::read_if(j, "test_fraction", c.test_fraction);
  // A single (or defaulted) variance value applies to every feature or term.
  if (!c.sigma2_b.empty() && c.sigma2_b.size() != c.cardinalities.size() && (c.sigma2_b.size() == 1 || !j.contains("sigma2_b")))
    c.sigma2_b.assign(c.cardinalities.size(), c.sigma2_b[0]);
  const auto k = static_cast<std::size_t>(std::max(c.poly_terms, 0));
  if (!c.phi_diagonal.empty() && c.phi_diagonal.size() != k && (c.phi_diagonal.size() == 1 || !j.contains("phi_diagonal")))
    c.phi_diagonal.assign(k, c.phi_diagonal[0]);
  return c;
}

/// Keys: methods, replicates, seed, output_dir, jobs, include_oracle,
/// record_runtime, dump_b_pairs, fit {...}, and either sim {...} or
/// csv {train, test, scenario, num_categorical, poly_terms, standardize}.
inline ExperimentSpec spec_from_json(const json& j) {
  ExperimentSpec s;
  for (const auto& m : j.at("methods")) s.methods.push_back(method_from_string(m.get<std::string>()));
  detail::read_if(j, "replicates", s.replicates);
  detail::read_if(j, "seed", s.seed);
  detail::read_if(j, "output_dir", s.output_dir);
  detail::read_if(j, "jobs", s.jobs);
  detail::read_if(j, "include_oracle", s.include_oracle);
  detail::read_if(j, "record_runtime", s.record_runtime);
  detail::read_if(j, "dump_b_pairs", s.dump_b_pairs);
  if (j.contains("sim")) s.sim = sim_config_from_json(j.at("sim"));
  if (j.contains("csv")) {
    const auto& c = j.at("csv");
    CsvSource src;
    src.train = c.at("train").get<std::string>();
    src.test = c.value("test", std::string{});
    src.declaration.kind = re::scenario_from_string(c.value("scenario", std::string("categorical")));
    src.declaration.num_categorical = c.value("num_categorical", 1);
    src.declaration.poly_terms = c.value("poly_terms", 3);
    src.standardize = c.value("standardize", true);
    s.csv = src;
  }
  s.fit.latent_dim = static_cast<int>(s.sim.d);
  if (j.contains("fit")) s.fit = io::settings_from_json(j.at("fit"), s.fit);
  s.validate();
  return s;
}

inline json spec_to_json(const ExperimentSpec& s) {
  json methods = json::array();
  for (auto m : s.methods) methods.push_back(to_string(m));
  json j{{"methods", methods},
         {"replicates", s.replicates},
         {"seed", s.seed},
         {"output_dir", s.output_dir},
         {"jobs", s.jobs},
         {"include_oracle", s.include_oracle},
         {"record_runtime", s.record_runtime},
         {"dump_b_pairs", s.dump_b_pairs},
         {"fit", io::settings_to_json(s.fit)}};
  if (s.csv) {
    j["csv"] = {{"train", s.csv->train},
                {"test", s.csv->test},
                {"scenario", re::to_string(s.csv->declaration.kind)},
                {"num_categorical", s.csv->declaration.num_categorical},
                {"poly_terms", s.csv->declaration.poly_terms},
                {"standardize", s.csv->standardize}};
  } else {
    j["sim"] = sim_config_to_json(s.sim);
  }
  return j;
}

/// 64-bit FNV-1a as 16 hex digits.
inline std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

/// Hash of the canonical spec JSON.
inline std::string spec_hash(const ExperimentSpec& s) { return fnv1a_hex(spec_to_json(s).dump()); }

/// Short description of the variance parameters, free of commas.
inline std::string params_string(const ExperimentSpec& s) {
  if (s.csv) return "csv=" + std::filesystem::path(s.csv->train).filename().string();
  const auto& c = s.sim;
  auto join = [](const auto& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "/" : "") << v[i];
    return os.str();
  };
  std::ostringstream os;
  switch (c.scenario) {
    case re::ScenarioKind::Categorical: os << "sigma2_b=" << join(c.sigma2_b) << ";q=" << join(c.cardinalities); break;
    case re::ScenarioKind::Longitudinal:
      os << "phi=" << join(c.phi_diagonal) << ";cov=" << c.phi_intercept_cov << ";q=" << c.num_subjects << ";K=" << c.poly_terms;
      break;
    case re::ScenarioKind::Spatial:
      os << "sigma2_b=" << c.sigma2_spatial << ";l2=" << c.length_scale_sq << ";q=" << c.num_locations;
      break;
    case re::ScenarioKind::SpatialCategorical:
      os << "sigma2_b=" << c.sigma2_spatial << ";l2=" << c.length_scale_sq << ";q=" << c.num_locations
         << ";cat_sigma2_b=" << join(c.sigma2_b) << ";cat_q=" << join(c.cardinalities);
      break;
  }
  os << ";split=" << sim::to_string(c.split);
  return os.str();
}

/// Per-replicate train/test data.
struct ReplicateData {
  Matrix x_train, x_test;
  re::REScenario sc_train, sc_test;
  std::optional<sim::SimDataset> truth;  // simulations only
};

inline ReplicateData prepare_replicate(const ExperimentSpec& s, std::uint64_t rep_seed) {
  ReplicateData r;
  Rng rng(rep_seed);
  if (!s.csv) {
    auto ds = sim::generate(s.sim, rng);
    r.x_train = gather_rows(ds.x, ds.train_rows);
    r.x_test = gather_rows(ds.x, ds.test_rows);
    r.sc_train = ds.scenario.subset(ds.train_rows);
    r.sc_test = ds.scenario.subset(ds.test_rows);
    r.truth = std::move(ds);
    return r;
  }
  const auto& src = *s.csv;
  const auto train_table = io::read_numeric_csv(src.train);
  if (!src.test.empty()) {
    const auto test_table = io::read_numeric_csv(src.test);
    const auto vocab = io::build_vocabulary({&train_table, &test_table}, src.declaration);
    io::LoadOptions opt;
    opt.standardize = src.standardize;
    opt.vocabulary = &vocab;
    auto train = io::dataset_from_table(train_table, src.declaration, opt, src.train);
    opt.standardization = &train.standardization;
    auto test = io::dataset_from_table(test_table, src.declaration, opt, src.test);
    r.x_train = std::move(train.x);
    r.x_test = std::move(test.x);
    r.sc_train = std::move(train.scenario);
    r.sc_test = std::move(test.scenario);
    return r;
  }
  io::LoadOptions raw;
  raw.standardize = false;
  auto all = io::dataset_from_table(train_table, src.declaration, raw, src.train);
  const auto n = static_cast<std::size_t>(all.x.rows());
  auto perm = rng.permutation(n);
  const auto n_test = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n)));
  std::vector<std::size_t> test(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  r.x_train = gather_rows(all.x, train);
  r.x_test = gather_rows(all.x, test);
  if (src.standardize) {
    const auto st = io::fit_standardization(r.x_train);
    r.x_train = st.apply(r.x_train);
    r.x_test = st.apply(r.x_test);
  }
  r.sc_train = all.scenario.subset(train);
  r.sc_test = all.scenario.subset(test);
  return r;
}

/// Replicate seeds are spec.seed + r; each method's generator is derived
/// from the replicate seed and the method, independent of method order.
inline std::uint64_t replicate_seed(const ExperimentSpec& s, int r) { return s.seed + static_cast<std::uint64_t>(r); }

inline std::uint64_t method_seed(std::uint64_t rep_seed, Method m) {
  return rep_seed * 1000003ULL + 7919ULL * (static_cast<std::uint64_t>(m) + 1);
}

struct ReplicateResult {
  std::vector<eval::MetricRow> rows;
  std::vector<std::pair<Method, FittedModel>> fits;
};

/// Fit and score every method on one replicate. Training failures are
/// recorded on the row and the loop continues.
inline ReplicateResult run_replicate(const ExperimentSpec& s, const ReplicateData& data, std::uint64_t rep_seed,
                                     bool keep_fits = false) {
  ReplicateResult out;
  const std::string scenario = re::to_string(s.scenario());
  const std::string params = params_string(s);
  auto make_row = [&](const std::string& method) {
    eval::MetricRow row;
    row.method = method;
    row.scenario = scenario;
    row.d = s.fit.latent_dim;
    row.params = params;
    row.seed = rep_seed;
    return row;
  };
  if (data.truth && s.include_oracle) {
    auto row = make_row("oracle");
    row.recon_mse = eval::recon_mse(data.x_test, sim::oracle_reconstruction(*data.truth, data.truth->test_rows));
    row.nll = std::numeric_limits<double>::quiet_NaN();
    out.rows.push_back(row);
  }
  for (auto method : s.methods) {
    auto row = make_row(to_string(method));
    Rng rng(method_seed(rep_seed, method));
    const auto t0 = std::chrono::steady_clock::now();
    try {
      auto fit = fit_method(method, data.x_train, data.sc_train, s.fit, rng);
      const auto res = apply_method(fit, data.x_test, data.sc_test);
      row.recon_mse = eval::recon_mse(data.x_test, res.x_hat);
      row.nll = res.nll;
      if (keep_fits) out.fits.emplace_back(method, std::move(fit));
    } catch (const std::exception& e) {
      row.recon_mse = std::numeric_limits<double>::quiet_NaN();
      row.nll = std::numeric_limits<double>::quiet_NaN();
      row.error = e.what();
    }
    const auto t1 = std::chrono::steady_clock::now();
    row.runtime_s = s.record_runtime ? std::chrono::duration<double>(t1 - t0).count() : 0.0;
    out.rows.push_back(std::move(row));
  }
  return out;
}

struct SummaryRow {
  std::string method;
  std::size_t replicates = 0;
  eval::MeanSe recon_mse;
  eval::MeanSe nll;
  double runtime_mean = 0.0;
  bool non_inferior = false;  // best mean, or not significantly worse than it
  std::size_t failures = 0;
};

struct ResultsTable {
  std::vector<eval::MetricRow> rows;
  std::string spec_hash;

  std::vector<double> recon_by_seed(const std::string& method) const {
    std::vector<double> v;
    for (const auto& r : rows)
      if (r.method == method && r.error.empty()) v.push_back(r.recon_mse);
    return v;
  }

  /// Mean and standard error across replicates, per method. A method is
  /// flagged non-inferior when a one-sided paired t-test of (method - best)
  /// does not reject at 0.05.
  std::vector<SummaryRow> summarize() const {
    std::vector<std::string> order;
    for (const auto& r : rows)
      if (std::find(order.begin(), order.end(), r.method) == order.end()) order.push_back(r.method);
    std::vector<SummaryRow> out;
    for (const auto& m : order) {
      SummaryRow s;
      s.method = m;
      std::vector<double> rec, nll, rt;
      for (const auto& r : rows) {
        if (r.method != m) continue;
        if (!r.error.empty()) {
          ++s.failures;
          continue;
        }
        rec.push_back(r.recon_mse);
        nll.push_back(r.nll);
        rt.push_back(r.runtime_s);
      }
      s.replicates = rec.size();
      if (!rec.empty()) {
        s.recon_mse = eval::mean_se(rec);
        s.nll = eval::mean_se(nll);
        s.runtime_mean = eval::mean_se(rt).mean;
      }
      out.push_back(s);
    }
    const SummaryRow* best = nullptr;
    for (const auto& s : out)
      if (s.method != "oracle" && s.replicates > 0 && (!best || s.recon_mse.mean < best->recon_mse.mean)) best = &s;
    if (best) {
      const auto best_vals = recon_by_seed(best->method);
      const std::string best_name = best->method;
      for (auto& s : out) {
        if (s.method == "oracle" || s.replicates == 0) continue;
        if (s.method == best_name) {
          s.non_inferior = true;
          continue;
        }
        const auto vals = recon_by_seed(s.method);
        if (vals.size() == best_vals.size() && vals.size() >= 2)
          s.non_inferior = eval::paired_t_test(vals, best_vals).p_value >= 0.05;
      }
    }
    return out;
  }
};

namespace detail {

inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

inline std::string csv_field(std::string s) {
  for (auto& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace detail

inline constexpr const char* kResultsHeader = "method,scenario,d,params,seed,recon_mse,nll,runtime_s,spec_hash,status";

/// Append rows to `path`, writing the header only when the file is new.
inline void append_results_csv(const std::string& path, const std::vector<eval::MetricRow>& rows, const std::string& hash) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to '" + path + "'");
  if (fresh) out << kResultsHeader << '\n';
  for (const auto& r : rows) {
    out << r.method << ',' << r.scenario << ',' << r.d << ',' << detail::csv_field(r.params) << ',' << r.seed << ','
        << detail::fmt(r.recon_mse) << ',' << detail::fmt(r.nll) << ',' << detail::fmt(r.runtime_s) << ',' << hash << ','
        << (r.error.empty() ? "ok" : "error: " + detail::csv_field(r.error)) << '\n';
  }
}

inline void write_summary_csv(const std::string& path, const ResultsTable& t) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << "method,replicates,failures,recon_mse_mean,recon_mse_se,nll_mean,nll_se,runtime_mean_s,non_inferior,spec_hash\n";
  for (const auto& s : t.summarize()) {
    out << s.method << ',' << s.replicates << ',' << s.failures << ',' << detail::fmt(s.recon_mse.mean) << ','
        << detail::fmt(s.recon_mse.se) << ',' << detail::fmt(s.nll.mean) << ',' << detail::fmt(s.nll.se) << ','
        << detail::fmt(s.runtime_mean) << ',' << (s.non_inferior ? 1 : 0) << ',' << t.spec_hash << '\n';
  }
}

/// (term, level, feature, true, predicted) rows for a fitted LMMVAE.
inline void write_b_pairs(const std::string& path, const LmmvaeModel& m, const std::vector<Matrix>& b_true) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << std::setprecision(10) << "term,level,feature,true,predicted\n";
  Index off = 0;
  for (std::size_t k = 0; k < m.terms.size() && k < b_true.size(); ++k) {
    for (Index j = 0; j < b_true[k].rows(); ++j)
      for (Index f = 0; f < b_true[k].cols(); ++f)
        out << k << ',' << j << ',' << f << ',' << b_true[k](j, f) << ',' << m.b_hat(off + j, f) << '\n';
    off += m.terms[k].num_levels;
  }
}

/// Runs every replicate (optionally on `jobs` worker threads), appends the
/// rows to <output_dir>/results.csv in replicate order and rewrites
/// <output_dir>/summary.csv.
inline ResultsTable run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  std::filesystem::create_directories(spec.output_dir);
  ResultsTable table;
  table.spec_hash = spec_hash(spec);

  std::vector<std::vector<eval::MetricRow>> per_rep(static_cast<std::size_t>(spec.replicates));
  std::mutex sink;
  std::exception_ptr failure;
  auto work = [&](int r) {
    try {
      const auto seed = replicate_seed(spec, r);
      const auto data = prepare_replicate(spec, seed);
      auto res = run_replicate(spec, data, seed, spec.dump_b_pairs);
      if (spec.dump_b_pairs && data.truth) {
        for (const auto& [method, fit] : res.fits)
          if (fit.lmmvae)
            write_b_pairs(spec.output_dir + "/b_pairs_" + to_string(method) + "_rep" + std::to_string(r) + ".csv", *fit.lmmvae,
                          data.truth->b_true);
      }
      std::lock_guard<std::mutex> lock(sink);
      per_rep[static_cast<std::size_t>(r)] = std::move(res.rows);
    } catch (...) {
      std::lock_guard<std::mutex> lock(sink);
      if (!failure) failure = std::current_exception();
    }
  };
  if (spec.jobs == 1) {
    for (int r = 0; r < spec.replicates; ++r) work(r);
  } else {
    int next = 0;
    std::mutex queue;
    std::vector<std::thread> pool;
    for (int w = 0; w < std::min(spec.jobs, spec.replicates); ++w) {
      pool.emplace_back([&] {
        for (;;) {
          int r;
          {
            std::lock_guard<std::mutex> lock(queue);
            if (next >= spec.replicates) return;
            r = next++;
          }
          work(r);
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  for (auto& rows : per_rep)
    for (auto& row : rows) table.rows.push_back(std::move(row));
  append_results_csv(spec.output_dir + "/results.csv", table.rows, table.spec_hash);
  write_summary_csv(spec.output_dir + "/summary.csv", table);
  return table;
}

}  // namespace lmmvae
