// Command-line front end. Every subcommand is a thin adapter over the
// library: it parses flags (long form only), optionally merges a JSON
// config file (flags win), runs one library operation and prints a JSON
// summary on stdout. Human-readable progress goes to stderr.
//
// Exit codes: 0 success, 1 usage error, 2 data/model error, 3 numerical
// failure. Schemas are documented in docs/cli.md.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dobi/kernels.hpp"
#include "dobi/model_io.hpp"
#include "dobi/pack.hpp"
#include "dobi/rng.hpp"
#include "dobi/svd_grad.hpp"
#include "dobi/train.hpp"
#include "dobi/weight_update.hpp"

namespace {

using nlohmann::ordered_json;

constexpr std::uint64_t kDefaultSeed = 20240901ULL;

std::uint64_t seed_from_env() {
  if (const char* env = std::getenv("DOBI_SEED")) {
    try {
      return std::stoull(env);
    } catch (...) {
      throw dobi::value_error("DOBI_SEED is not an integer");
    }
  }
  return kDefaultSeed;
}

// JSON config file: top-level object, keys are long option names without
// the leading dashes. Loaded as defaults before parsing so command-line
// flags override it.
ordered_json load_config(int argc, char** argv) {
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") {
      std::ifstream in(argv[i + 1]);
      if (!in) throw dobi::io_error(dobi::io_error::kind::open_failed,
                                    std::string("cannot open config ") + argv[i + 1]);
      ordered_json j;
      in >> j;
      if (!j.is_object()) throw dobi::value_error("config file must hold a JSON object");
      return j;
    }
  }
  return ordered_json::object();
}

template <typename T>
void config_default(const ordered_json& cfg, const std::string& key, T& var) {
  if (cfg.contains(key)) var = cfg.at(key).get<T>();
}

struct ModelArg {
  std::string spec;

  dobi::StoredModel resolve() const {
    dobi::StoredModel stored;
    if (spec.rfind("mlp:", 0) == 0) {
      stored.model = dobi::make_teacher_student_mlp(std::stoull(spec.substr(4)));
      return stored;
    }
    if (spec.rfind("charlm:", 0) == 0) {
      stored.model = dobi::make_char_lm(std::stoull(spec.substr(7)));
      return stored;
    }
    return dobi::load_model(spec);
  }
};

struct DataArgs {
  std::string kind = "char_lm";
  std::uint64_t seed = kDefaultSeed;
  dobi::index count = 64;
  dobi::index rows = 0;

  dobi::Dataset make() const {
    return dobi::make_dataset(dobi::dataset_kind_from_name(kind), seed, count, rows);
  }
};

void add_data_options(CLI::App* cmd, DataArgs& d, const ordered_json& cfg) {
  config_default(cfg, "data-kind", d.kind);
  config_default(cfg, "data-seed", d.seed);
  config_default(cfg, "data-count", d.count);
  config_default(cfg, "data-rows", d.rows);
  cmd->add_option("--data-kind", d.kind, "teacher_student_regression | char_lm");
  cmd->add_option("--data-seed", d.seed, "dataset seed");
  cmd->add_option("--data-count", d.count, "number of samples");
  cmd->add_option("--data-rows", d.rows, "rows per sample (0 = kind default)");
}

void emit(const ordered_json& summary) { std::cout << summary.dump(2) << std::endl; }

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw dobi::io_error(dobi::io_error::kind::open_failed, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw dobi::io_error(dobi::io_error::kind::open_failed, "cannot write " + path);
  out << text;
}

dobi::RatioCounting counting_from_name(const std::string& name) {
  if (name == "remapped") return dobi::RatioCounting::remapped;
  if (name == "traditional") return dobi::RatioCounting::traditional;
  throw dobi::value_error("unknown ratio counting: " + name);
}

ordered_json alloc_json(const dobi::IntAllocation& alloc) {
  return ordered_json::parse(dobi::allocation_to_json(alloc));
}

int run(int argc, char** argv) {
  const ordered_json cfg = load_config(argc, argv);
  const std::uint64_t env_seed = seed_from_env();

  CLI::App app{"SVD compression pipeline: differentiable rank search, "
               "IPCA weight update and mixed-precision packing"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file with option defaults");

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "write a deterministic synthetic dataset as JSON");
  DataArgs gen_data;
  gen_data.seed = env_seed;
  std::string gen_out = "dataset.json";
  add_data_options(gen, gen_data, cfg);
  config_default(cfg, "out", gen_out);
  gen->add_option("--out", gen_out, "output path");

  // ---- train-ranks ----
  auto* train = app.add_subcommand("train-ranks", "learn per-layer truncation positions");
  ModelArg train_model{"charlm:" + std::to_string(env_seed)};
  DataArgs train_data;
  train_data.seed = env_seed;
  dobi::CompressionTarget train_target{0.6, 10.0};
  dobi::TrainHyper hyper;
  hyper.seed = env_seed;
  std::string counting_name = "remapped";
  std::string traj_csv, alloc_out = "alloc.json";
  config_default(cfg, "model", train_model.spec);
  config_default(cfg, "target-ratio", train_target.r_target);
  config_default(cfg, "penalty-weight", train_target.ratio_penalty_weight);
  config_default(cfg, "beta", hyper.beta);
  config_default(cfg, "epochs", hyper.epochs);
  config_default(cfg, "batch-size", hyper.batch_size);
  config_default(cfg, "lr", hyper.lr);
  config_default(cfg, "seed", hyper.seed);
  config_default(cfg, "counting", counting_name);
  config_default(cfg, "traj-csv", traj_csv);
  config_default(cfg, "alloc-out", alloc_out);
  train->add_option("--model", train_model.spec, "mlp:<seed> | charlm:<seed> | container path");
  add_data_options(train, train_data, cfg);
  train->add_option("--target-ratio", train_target.r_target, "target compression ratio");
  train->add_option("--penalty-weight", train_target.ratio_penalty_weight, "ratio penalty weight");
  train->add_option("--beta", hyper.beta, "mask smoothness");
  train->add_option("--epochs", hyper.epochs, "training epochs");
  train->add_option("--batch-size", hyper.batch_size, "samples per step");
  train->add_option("--lr", hyper.lr, "Adam base learning rate");
  train->add_option("--seed", hyper.seed, "training seed (shuffling)");
  train->add_option("--counting", counting_name, "remapped | traditional");
  train->add_option("--traj-csv", traj_csv, "trajectory CSV path");
  train->add_option("--alloc-out", alloc_out, "learned allocation JSON path");
  train->add_option("--eps-val", hyper.backward.eps_val, "singular value clamp floor");
  train->add_option("--eps-grad", hyper.backward.eps_grad, "reciprocal cap for clamped pairs");
  train->add_option("--eps-diff", hyper.backward.eps_diff, "gap threshold for the series branch");
  train->add_option("--n-taylor", hyper.backward.n_taylor, "series term count");

  // ---- update-weights ----
  auto* update = app.add_subcommand("update-weights", "round ranks and apply the IPCA update");
  ModelArg up_model{"charlm:" + std::to_string(env_seed)};
  DataArgs up_data;
  up_data.seed = env_seed;
  std::string up_alloc_path;
  double up_target_ratio = 0.6;
  double up_penalty = 10.0;
  std::string up_counting = "remapped";
  std::string up_out = "model_updated.dobi";
  std::string up_objective_csv;
  bool up_centering = false;
  config_default(cfg, "model", up_model.spec);
  config_default(cfg, "alloc", up_alloc_path);
  config_default(cfg, "target-ratio", up_target_ratio);
  config_default(cfg, "out", up_out);
  update->add_option("--model", up_model.spec, "model spec or container path");
  add_data_options(update, up_data, cfg);
  update->add_option("--alloc", up_alloc_path, "continuous allocation JSON (from train-ranks)")
      ->required();
  update->add_option("--target-ratio", up_target_ratio, "ratio target used for rounding");
  update->add_option("--penalty-weight", up_penalty, "penalty weight (rounding metadata)");
  update->add_option("--counting", up_counting, "remapped | traditional");
  update->add_option("--out", up_out, "updated model container path");
  update->add_option("--objective-csv", up_objective_csv, "per-layer IPCA vs oracle objective CSV");
  update->add_flag("--centering", up_centering, "subtract the running mean inside IPCA");

  // ---- pack ----
  auto* pack_cmd = app.add_subcommand("pack", "mixed-precision pack of an updated model");
  std::string pack_in, pack_out = "model_packed.dobi";
  config_default(cfg, "out", pack_out);
  pack_cmd->add_option("--model", pack_in, "updated container (with alloc)")->required();
  pack_cmd->add_option("--out", pack_out, "packed container path");

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "evaluate task loss under an inference mode");
  ModelArg eval_model{"charlm:" + std::to_string(env_seed)};
  DataArgs eval_data;
  eval_data.seed = env_seed;
  std::string eval_mode = "dense";
  std::string eval_alloc_path;
  config_default(cfg, "model", eval_model.spec);
  config_default(cfg, "mode", eval_mode);
  eval_cmd->add_option("--model", eval_model.spec, "model spec or container path");
  add_data_options(eval_cmd, eval_data, cfg);
  eval_cmd->add_option("--mode", eval_mode, "dense | smooth | hard | factored");
  eval_cmd->add_option("--alloc", eval_alloc_path, "allocation JSON for smooth/hard modes");

  // ---- compare-trunc ----
  auto* cmp_cmd = app.add_subcommand("compare-trunc",
                                     "activation truncation vs weight-SVD truncation");
  ModelArg cmp_model{"charlm:" + std::to_string(env_seed)};
  DataArgs cmp_data;
  cmp_data.seed = env_seed;
  double cmp_ratio = 0.6;
  std::string cmp_alloc_path;
  config_default(cfg, "model", cmp_model.spec);
  config_default(cfg, "target-ratio", cmp_ratio);
  cmp_cmd->add_option("--model", cmp_model.spec, "model spec or container path");
  add_data_options(cmp_cmd, cmp_data, cfg);
  cmp_cmd->add_option("--target-ratio", cmp_ratio, "uniform per-layer ratio when no --alloc");
  cmp_cmd->add_option("--alloc", cmp_alloc_path, "integer allocation JSON");

  // ---- gradcheck ----
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference certification of the backward pass");
  dobi::index gc_rows = 5, gc_cols = 4;
  std::uint64_t gc_seed = env_seed;
  double gc_h = 1e-5;
  bool gc_degenerate = false;
  dobi::BackwardConfig gc_cfg;
  config_default(cfg, "rows", gc_rows);
  config_default(cfg, "cols", gc_cols);
  config_default(cfg, "seed", gc_seed);
  gc_cmd->add_option("--rows", gc_rows, "probe matrix rows");
  gc_cmd->add_option("--cols", gc_cols, "probe matrix cols");
  gc_cmd->add_option("--seed", gc_seed, "probe seed");
  gc_cmd->add_option("--h", gc_h, "finite-difference step");
  gc_cmd->add_flag("--degenerate", gc_degenerate, "probe a tied/near-zero spectrum instead");
  gc_cmd->add_option("--eps-val", gc_cfg.eps_val, "singular value clamp floor");
  gc_cmd->add_option("--eps-grad", gc_cfg.eps_grad, "reciprocal cap for clamped pairs");
  gc_cmd->add_option("--eps-diff", gc_cfg.eps_diff, "gap threshold for the series branch");
  gc_cmd->add_option("--n-taylor", gc_cfg.n_taylor, "series term count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  }

  if (gen->parsed()) {
    const dobi::Dataset ds = gen_data.make();
    ordered_json j;
    j["kind"] = dobi::dataset_kind_name(ds.kind);
    j["seed"] = ds.seed;
    j["count"] = ds.samples.size();
    j["rows"] = ds.rows;
    auto samples = ordered_json::array();
    for (const auto& s : ds.samples) {
      ordered_json js;
      auto input = ordered_json::array();
      for (dobi::index r = 0; r < s.input.rows(); ++r) {
        auto row = ordered_json::array();
        for (dobi::index c = 0; c < s.input.cols(); ++c) row.push_back(s.input(r, c));
        input.push_back(std::move(row));
      }
      js["input"] = std::move(input);
      if (!s.classes.empty()) js["classes"] = s.classes;
      if (!s.target.empty()) {
        auto tgt = ordered_json::array();
        for (dobi::index r = 0; r < s.target.rows(); ++r) {
          auto row = ordered_json::array();
          for (dobi::index c = 0; c < s.target.cols(); ++c) row.push_back(s.target(r, c));
          tgt.push_back(std::move(row));
        }
        js["target"] = std::move(tgt);
      }
      samples.push_back(std::move(js));
    }
    j["samples"] = std::move(samples);
    const std::string text = j.dump(2);
    write_file(gen_out, text);

    ordered_json summary;
    summary["command"] = "gen-data";
    summary["path"] = gen_out;
    summary["kind"] = gen_data.kind;
    summary["seed"] = gen_data.seed;
    summary["count"] = gen_data.count;
    summary["rows"] = ds.rows;
    summary["bytes"] = text.size();
    emit(summary);
    return 0;
  }

  if (train->parsed()) {
    hyper.counting = counting_from_name(counting_name);
    hyper.trajectory_csv = traj_csv;
    const dobi::StoredModel stored = train_model.resolve();
    const dobi::Dataset ds = train_data.make();
    std::cerr << "train-ranks: " << stored.model.layers.size() << " layers, "
              << ds.samples.size() << " samples, target " << train_target.r_target << "\n";
    const dobi::TrainResult res = dobi::train_ranks(stored.model, ds, train_target, hyper);
    write_file(alloc_out, dobi::allocation_to_json(res.alloc));

    ordered_json summary;
    summary["command"] = "train-ranks";
    summary["target_ratio"] = train_target.r_target;
    summary["final_ratio"] = res.final_loss.ratio_now;
    summary["final_task_loss"] = res.final_loss.task_loss;
    summary["final_total_loss"] = res.final_loss.total;
    summary["epochs_run"] = res.history.size();
    summary["diverged"] = res.diverged;
    summary["trainable_parameters"] = res.alloc.entries.size();
    summary["alloc_path"] = alloc_out;
    if (!traj_csv.empty()) summary["trajectory_csv"] = traj_csv;
    emit(summary);
    return res.diverged ? 3 : 0;
  }

  if (update->parsed()) {
    const dobi::StoredModel stored = up_model.resolve();
    const dobi::Dataset ds = up_data.make();
    const dobi::RankAllocation cont = dobi::allocation_from_json(read_file(up_alloc_path));
    const dobi::CompressionTarget tgt{up_target_ratio, up_penalty};
    const dobi::IntAllocation rounded =
        dobi::round_ranks(cont, tgt, counting_from_name(up_counting));
    std::cerr << "update-weights: IPCA over " << ds.samples.size() << " samples\n";
    std::vector<dobi::LayerObjectiveRow> rows;
    const dobi::ToyModel updated = dobi::update_all_weights(
        stored.model, ds, rounded, up_centering, up_objective_csv.empty() ? nullptr : &rows);

    if (!up_objective_csv.empty()) {
      std::ostringstream csv;
      csv.precision(17);
      csv << "layer,ipca_objective,oracle_objective\n";
      for (const auto& r : rows)
        csv << r.layer << ',' << r.ipca_objective << ',' << r.oracle_objective << '\n';
      write_file(up_objective_csv, csv.str());
    }

    dobi::StoredModel out;
    out.model = updated;
    out.alloc = rounded;
    dobi::save_model(up_out, out);

    ordered_json summary;
    summary["command"] = "update-weights";
    summary["model_out"] = up_out;
    summary["ratio"] = dobi::model_ratio(rounded, counting_from_name(up_counting));
    summary["alloc"] = alloc_json(rounded);
    if (!up_objective_csv.empty()) summary["objective_csv"] = up_objective_csv;
    emit(summary);
    return 0;
  }

  if (pack_cmd->parsed()) {
    dobi::StoredModel stored = dobi::load_model(pack_in);
    if (!stored.alloc)
      throw dobi::value_error("pack: container carries no allocation; run update-weights first");
    stored.packed.assign(stored.model.layers.size(), std::nullopt);
    std::size_t slot = 0;
    ordered_json layers = ordered_json::array();
    long long total_slots = 0;
    for (std::size_t i = 0; i < stored.model.layers.size(); ++i) {
      const auto& l = stored.model.layers[i];
      if (!l.compressible) continue;
      const dobi::index k = stored.alloc->entries[slot].k;
      ++slot;
      const dobi::PackedWeight p = dobi::pack(dobi::UpdatedWeight{l.weight, k});
      ordered_json jl;
      jl["name"] = l.name;
      jl["k"] = p.k;
      jl["slots"] = p.slots.size();
      jl["ratio"] = dobi::packed_ratio(p);
      layers.push_back(std::move(jl));
      total_slots += static_cast<long long>(p.slots.size());
      stored.packed[i] = std::move(p);
    }
    dobi::save_model(pack_out, stored);

    ordered_json summary;
    summary["command"] = "pack";
    summary["model_out"] = pack_out;
    summary["total_slots"] = total_slots;
    summary["layers"] = std::move(layers);
    emit(summary);
    return 0;
  }

  if (eval_cmd->parsed()) {
    const dobi::StoredModel stored = eval_model.resolve();
    const dobi::Dataset ds = eval_data.make();
    double loss = 0.0;
    if (eval_mode == "dense") {
      loss = dobi::eval_dense(stored.model, ds);
    } else if (eval_mode == "smooth") {
      if (eval_alloc_path.empty()) throw dobi::value_error("eval --mode smooth needs --alloc");
      loss = dobi::eval_smooth(stored.model, ds,
                               dobi::allocation_from_json(read_file(eval_alloc_path)));
    } else if (eval_mode == "hard") {
      if (eval_alloc_path.empty()) throw dobi::value_error("eval --mode hard needs --alloc");
      loss = dobi::eval_hard(stored.model, ds,
                             dobi::int_allocation_from_json(read_file(eval_alloc_path)));
    } else if (eval_mode == "factored") {
      bool any = false;
      for (const auto& p : stored.packed) any = any || p.has_value();
      if (!any) throw dobi::value_error("eval --mode factored needs a packed container");
      loss = dobi::eval_factored(stored.factored(), ds);
    } else {
      throw dobi::value_error("unknown eval mode: " + eval_mode);
    }

    ordered_json summary;
    summary["command"] = "eval";
    summary["mode"] = eval_mode;
    summary["task_loss"] = loss;
    if (ds.kind == dobi::DatasetKind::char_lm)
      summary["perplexity"] = dobi::perplexity_from_loss(loss);
    emit(summary);
    return 0;
  }

  if (cmp_cmd->parsed()) {
    const dobi::StoredModel stored = cmp_model.resolve();
    const dobi::Dataset ds = cmp_data.make();
    const dobi::IntAllocation alloc =
        cmp_alloc_path.empty()
            ? dobi::uniform_allocation(stored.model, cmp_ratio, dobi::RatioCounting::remapped)
            : dobi::int_allocation_from_json(read_file(cmp_alloc_path));
    const dobi::TruncationComparison cmp = dobi::compare_truncation_modes(stored.model, ds, alloc);

    ordered_json summary;
    summary["command"] = "compare-trunc";
    summary["dense_loss"] = cmp.dense_loss;
    summary["activation_loss"] = cmp.activation_loss;
    summary["weight_loss"] = cmp.weight_loss;
    summary["activation_no_worse"] = cmp.activation_no_worse;
    auto sweep = ordered_json::array();
    for (const auto& row : cmp.sweep) {
      ordered_json jr;
      jr["layer"] = row.layer;
      jr["k"] = row.k;
      jr["activation_loss"] = row.activation_loss;
      jr["weight_loss"] = row.weight_loss;
      sweep.push_back(std::move(jr));
    }
    summary["sweep"] = std::move(sweep);
    emit(summary);
    return 0;
  }

  if (gc_cmd->parsed()) {
    dobi::Pcg32 rng(gc_seed);
    dobi::GradCheckReport rep;
    if (gc_degenerate) {
      // Tied spectrum built from seeded rotations; the report must stay
      // finite even though factor values are not unique there.
      const dobi::index q = std::min(gc_rows, gc_cols);
      dobi::DenseMatrix g1(gc_rows, gc_rows), g2(gc_cols, gc_cols);
      for (double& v : g1.data()) v = rng.next_gaussian();
      for (double& v : g2.data()) v = rng.next_gaussian();
      const dobi::SvdFactors f1 = dobi::svd_full(g1);
      const dobi::SvdFactors f2 = dobi::svd_full(g2);
      std::vector<double> spectrum(static_cast<std::size_t>(q), 1.0);
      if (q > 1) spectrum.back() = 1e-13;
      dobi::DenseMatrix us(gc_rows, q);
      for (dobi::index i = 0; i < gc_rows; ++i)
        for (dobi::index j = 0; j < q; ++j) us(i, j) = f1.u(i, j) * spectrum[static_cast<std::size_t>(j)];
      dobi::DenseMatrix vt(q, gc_cols);
      for (dobi::index j = 0; j < q; ++j)
        for (dobi::index i = 0; i < gc_cols; ++i) vt(j, i) = f2.u(i, j);
      const dobi::DenseMatrix a = dobi::matmul(us, vt);

      dobi::LossSpec loss;
      dobi::DenseMatrix cu(gc_rows, q), cv(gc_cols, q);
      for (double& v : cu.data()) v = rng.next_gaussian();
      for (double& v : cv.data()) v = rng.next_gaussian();
      loss.c_u = std::move(cu);
      loss.c_v = std::move(cv);
      rep = dobi::grad_check(a, loss, gc_cfg, gc_h, /*compare_values=*/false);
    } else {
      dobi::DenseMatrix a(gc_rows, gc_cols);
      for (double& v : a.data()) v = rng.next_gaussian();
      const dobi::index q = std::min(gc_rows, gc_cols);
      dobi::LossSpec loss;
      loss.sigma_weights.resize(static_cast<std::size_t>(q));
      for (double& w : loss.sigma_weights) w = rng.next_gaussian();
      dobi::DenseMatrix cu(gc_rows, q), cv(gc_cols, q);
      for (double& v : cu.data()) v = rng.next_gaussian();
      for (double& v : cv.data()) v = rng.next_gaussian();
      loss.c_u = std::move(cu);
      loss.c_v = std::move(cv);
      rep = dobi::grad_check(a, loss, gc_cfg, gc_h);
    }

    ordered_json summary;
    summary["max_abs_error"] = rep.max_abs_error;
    summary["max_rel_error"] = rep.max_rel_error;
    summary["probe_count"] = rep.probe_count;
    summary["all_finite"] = rep.all_finite;
    summary["max_grad_magnitude"] = rep.max_grad_magnitude;
    emit(summary);
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const dobi::numeric_error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const dobi::error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
