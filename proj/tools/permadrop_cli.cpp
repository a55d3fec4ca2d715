// permadrop: train, convert, sample and compare analog / spiking networks.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "permadrop/convert.hpp"
#include "permadrop/data.hpp"
#include "permadrop/mcinfer.hpp"
#include "permadrop/model_io.hpp"
#include "permadrop/parallel.hpp"
#include "permadrop/presets.hpp"
#include "permadrop/snn.hpp"
#include "permadrop/stats.hpp"
#include "permadrop/training.hpp"

namespace pd = permadrop;

namespace {

// Bad flag values found after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SimFlags {
  pd::SimConfig sim;
  void add(CLI::App* cmd) {
    cmd->add_option("--dt", sim.dt, "Seconds per tick")->capture_default_str();
    cmd->add_option("--steps", sim.n_steps, "Ticks per simulation")->capture_default_str();
    cmd->add_option("--burnin", sim.burn_in_steps, "Ticks excluded from the average")->capture_default_str();
    cmd->add_option("--tausyn", sim.tau_syn, "Synaptic time constant in seconds (0 = unfiltered)")
        ->capture_default_str();
    cmd->add_option("--init-seed", sim.init_seed, "Seed for random initial voltages (0 = all zero)")
        ->capture_default_str();
  }
  void check() const {
    try {
      sim.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
};

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  return out;
}

// Loads rows for a model and applies the model's scaler.
std::vector<std::vector<double>> model_inputs(const pd::ModelDocument& doc, const pd::Dataset& ds) {
  if (ds.cols() != doc.spec.input_dim())
    throw std::runtime_error("data has " + std::to_string(ds.cols()) + " feature columns, model expects " +
                             std::to_string(doc.spec.input_dim()));
  std::vector<std::vector<double>> rows;
  rows.reserve(ds.rows());
  for (const auto& r : ds.features) rows.push_back(pd::apply_scaler(doc.scaler, r));
  return rows;
}

// --- synth -------------------------------------------------------------------

struct SynthCmd {
  pd::SynthConfig cfg;
  std::string out;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("synth", "Generate the synthetic two-drug data set");
    c->add_option("--out", out, "Output CSV")->required();
    c->add_option("--n", cfg.n, "Rows")->capture_default_str();
    c->add_option("--cell-dim", cfg.cell_dim, "Cell feature count")->capture_default_str();
    c->add_option("--drug-dim", cfg.drug_dim, "Features per drug")->capture_default_str();
    c->add_option("--noise", cfg.noise_std, "Target noise standard deviation")->capture_default_str();
    c->add_option("--seed", cfg.seed, "Generator seed")->capture_default_str();
    cmd = c;
  }

  int run() const {
    if (cfg.cell_dim < 1 || cfg.drug_dim < 1) throw UsageError("--cell-dim and --drug-dim must be >= 1");
    if (!(cfg.noise_std >= 0.0)) throw UsageError("--noise must be >= 0");
    pd::save_csv(out, pd::synth_combo(cfg));
    std::cerr << "wrote " << cfg.n << " rows to " << out << "\n";
    return 0;
  }

  CLI::App* cmd = nullptr;
};

// --- train -------------------------------------------------------------------

struct TrainCmd {
  std::string spec_path, data_path, out, history, target = "target";
  pd::TrainConfig tc;
  double amplitude = pd::default_amplitude;
  double test_frac = 0.2;
  pd::ComboShape shape;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("train", "Train an analog SoftLIF network with dropout");
    c->add_option("--data", data_path, "Training CSV")->required();
    c->add_option("--out", out, "Model file to write")->required();
    c->add_option("--spec", spec_path, "Network spec JSON (default: built from the data's column groups)");
    c->add_option("--target", target, "Target column")->capture_default_str();
    c->add_option("--epochs", tc.epochs, "Epochs")->capture_default_str();
    c->add_option("--batch", tc.batch_size, "Minibatch size")->capture_default_str();
    c->add_option("--lr", tc.learning_rate, "Adam learning rate")->capture_default_str();
    c->add_option("--seed", tc.seed, "Seed for weights, masks, shuffling and the split")->capture_default_str();
    c->add_option("--history", history, "Loss history CSV (epoch,train_mse,test_mse)");
    c->add_option("--test-frac", test_frac, "Held-out fraction for test MSE")->capture_default_str();
    c->add_option("--amplitude", amplitude, "Output scale of SoftLIF units")->capture_default_str();
    c->add_option("--keep-prob", shape.keep_prob, "Keep probability of hidden layers (default spec)")
        ->capture_default_str();
    c->add_option("--width", shape.encoder_width, "Hidden width (default spec)")->capture_default_str();
    cmd = c;
  }

  int run() {
    if (!(test_frac >= 0.0 && test_frac < 1.0)) throw UsageError("--test-frac must be in [0, 1)");
    if (!(amplitude > 0.0)) throw UsageError("--amplitude must be > 0");
    if (!(shape.keep_prob > 0.0 && shape.keep_prob <= 1.0)) throw UsageError("--keep-prob must be in (0, 1]");
    if (shape.encoder_width < 1) throw UsageError("--width must be >= 1");
    shape.head_width = shape.encoder_width;
    try {
      tc.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }

    const pd::Dataset ds = pd::load_csv(data_path, target);
    if (ds.rows() == 0) throw std::runtime_error("training data is empty");
    pd::NetworkSpec spec = spec_path.empty() ? pd::default_spec_for(ds.slices, shape)
                                             : pd::spec_from_json(pd::read_json_file(spec_path));
    pd::require_valid(spec);
    if (spec.input_dim() != ds.cols())
      throw std::runtime_error("spec expects " + std::to_string(spec.input_dim()) + " inputs, data has " +
                               std::to_string(ds.cols()) + " feature columns");

    auto [train_rows, test_rows] = pd::train_test_split(ds, test_frac, tc.seed);
    const auto st = pd::standardize(train_rows, {test_rows});
    const auto train_set = pd::to_training_data(st.train);
    const auto test_set = pd::to_training_data(st.others.front());

    pd::NeuronParams params;
    params.amplitude = amplitude;
    const auto result = pd::train(spec, train_set, tc, params, test_rows.rows() ? &test_set : nullptr);

    pd::ModelDocument doc{pd::ModelKind::analog, spec, params, result.weights, st.scaler};
    pd::save_model(out, doc);
    if (!history.empty()) {
      auto h = open_out(history);
      pd::write_loss_history(h, result.history);
    }
    const auto& last = result.history.back();
    std::cerr << "epoch " << last.epoch << " train_mse " << last.train_mse << " test_mse " << last.test_mse
              << "\nwrote " << out << "\n";
    return 0;
  }

  CLI::App* cmd = nullptr;
};

// --- convert -----------------------------------------------------------------

struct ConvertCmd {
  std::string model, out;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("convert", "Mark a trained analog model as a spiking model");
    c->add_option("--model", model, "Analog model file")->required();
    c->add_option("--out", out, "Spiking model file to write")->required();
    cmd = c;
  }

  int run() const {
    pd::save_model(out, pd::to_spiking_document(pd::load_model(model)));
    return 0;
  }

  CLI::App* cmd = nullptr;
};

// --- infer -------------------------------------------------------------------

struct InferCmd {
  std::string model, data, out, backend = "analog", target = "target";
  std::size_t draws = 100;
  std::uint64_t seed = 0;
  std::size_t limit = 0;
  std::size_t threads = pd::default_thread_count();
  bool no_dropout = false;
  SimFlags sim;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("infer", "Monte-Carlo dropout predictive draws for every row");
    c->add_option("--model", model, "Model file")->required();
    c->add_option("--data", data, "CSV of observations (target column optional)")->required();
    c->add_option("--out", out, "Samples CSV to write")->required();
    c->add_option("--backend", backend, "analog or spiking")
        ->check(CLI::IsMember({"analog", "spiking"}))
        ->capture_default_str();
    c->add_option("--draws", draws, "Draws per observation")->capture_default_str();
    c->add_option("--seed", seed, "Base mask seed; row i draw k uses seed + i*draws + k")->capture_default_str();
    c->add_option("--limit", limit, "Use only the first N rows (0 = all)")->capture_default_str();
    c->add_option("--threads", threads, "Worker threads (default from PERMADROP_THREADS)")->capture_default_str();
    c->add_option("--target", target, "Target column to drop if present")->capture_default_str();
    c->add_flag("--no-dropout", no_dropout, "Deterministic passes: every keep probability treated as 1");
    sim.add(c);
    cmd = c;
  }

  int run() {
    if (draws < 1) throw UsageError("--draws must be >= 1");
    if (threads < 1) throw UsageError("--threads must be >= 1");
    sim.check();
    const auto doc = pd::load_model(model);
    const auto ds = pd::load_csv(data, target, false);
    auto rows = model_inputs(doc, ds);
    if (limit > 0 && rows.size() > limit) rows.resize(limit);
    const pd::Backend be = pd::backend_from_string(backend);

    std::vector<pd::SampleSet> sets;
    if (no_dropout) {
      sets.resize(rows.size());
      const auto analog = pd::as_analog(doc);
      const auto spiking = pd::as_spiking(doc);
      pd::parallel_for(rows.size(), threads, [&](std::size_t, std::size_t i) {
        double y = 0.0;
        if (be == pd::Backend::analog) {
          y = pd::forward(analog.spec, analog.weights, rows[i], analog.params).output.at(0);
        } else {
          y = pd::summarize_trace(pd::simulate(spiking, rows[i], sim.sim), sim.sim.burn_in_steps);
        }
        sets[i] = {i, std::vector<double>(draws, y), be, seed + i * draws};
      });
    } else if (be == pd::Backend::analog) {
      sets = pd::predictive_distributions(pd::as_analog(doc), rows, draws, seed, threads);
    } else {
      sets = pd::predictive_distributions(pd::as_spiking(doc), rows, draws, seed, sim.sim, threads);
    }

    std::vector<std::string> header = {
        "backend=" + backend, "draws=" + std::to_string(draws), "seed=" + std::to_string(seed),
        "mask seed of row i draw k = seed + i*draws + k", std::string("dropout=") + (no_dropout ? "off" : "on")};
    if (be == pd::Backend::spiking) {
      std::ostringstream s;
      s << "dt=" << sim.sim.dt << " steps=" << sim.sim.n_steps << " burnin=" << sim.sim.burn_in_steps
        << " tausyn=" << sim.sim.tau_syn << " init_seed=" << sim.sim.init_seed;
      header.push_back(s.str());
    }
    auto f = open_out(out);
    pd::write_samples_csv(f, sets, header);
    std::cerr << "wrote " << sets.size() * draws << " draws for " << sets.size() << " observations to " << out
              << "\n";
    return 0;
  }

  CLI::App* cmd = nullptr;
};

// --- trace -------------------------------------------------------------------

struct TraceCmd {
  std::string model, data, out, target = "target";
  std::size_t row = 0;
  std::optional<std::uint64_t> mask_seed;
  SimFlags sim;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("trace", "Dump the output potential of one spiking simulation");
    c->add_option("--model", model, "Model file")->required();
    c->add_option("--data", data, "CSV of observations")->required();
    c->add_option("--out", out, "Trace CSV to write")->required();
    c->add_option("--row", row, "Zero-based observation row")->capture_default_str();
    c->add_option("--mask-seed", mask_seed, "Seed of the drop masks (omit for no dropout)");
    c->add_option("--target", target, "Target column to drop if present")->capture_default_str();
    sim.add(c);
    cmd = c;
  }

  int run() {
    sim.check();
    const auto doc = pd::load_model(model);
    const auto ds = pd::load_csv(data, target, false);
    if (row >= ds.rows())
      throw UsageError("--row " + std::to_string(row) + " out of range: data has " + std::to_string(ds.rows()) +
                       " rows");
    const auto x = pd::apply_scaler(doc.scaler, ds.features[row]);
    if (x.size() != doc.spec.input_dim())
      throw std::runtime_error("data has " + std::to_string(x.size()) + " feature columns, model expects " +
                               std::to_string(doc.spec.input_dim()));
    const auto analog = pd::as_analog(doc);
    const auto spiking = pd::as_spiking(doc);

    pd::OutputTrace trace;
    double dnn = 0.0;
    if (mask_seed) {
      const auto masks = pd::sample_masks(doc.spec, *mask_seed);
      dnn = pd::forward(analog.spec, analog.weights, x, masks, analog.params).output.at(0);
      trace = pd::simulate(spiking, x, masks, sim.sim);
    } else {
      dnn = pd::forward(analog.spec, analog.weights, x, analog.params).output.at(0);
      trace = pd::simulate(spiking, x, sim.sim);
    }
    const double snn = pd::summarize_trace(trace, sim.sim.burn_in_steps);

    auto f = open_out(out);
    f.precision(17);
    f << "# row=" << row << " mask_seed=" << (mask_seed ? std::to_string(*mask_seed) : std::string("none")) << "\n"
      << "# dnn_output=" << dnn << "\n"
      << "# snn_mean_after_burnin=" << snn << " burnin=" << sim.sim.burn_in_steps << "\n";
    pd::write_trace_csv(f, trace);
    std::cerr << "dnn " << dnn << " snn " << snn << "\n";
    return 0;
  }

  CLI::App* cmd = nullptr;
};

// --- compare -----------------------------------------------------------------

struct CompareCmd {
  std::string a, b, out;
  std::size_t bins = 20;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("compare", "Per-observation KS tests between two samples files");
    c->add_option("--a", a, "First samples CSV")->required();
    c->add_option("--b", b, "Second samples CSV")->required();
    c->add_option("--out", out, "JSON report to write")->required();
    c->add_option("--bins", bins, "Histogram bins per observation")->capture_default_str();
    cmd = c;
  }

  static std::vector<pd::SampleSet> read(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    return pd::read_samples_csv(in);
  }

  int run() const {
    if (bins < 1) throw UsageError("--bins must be >= 1");
    const auto sa = read(a);
    const auto sb = read(b);
    if (sa.size() != sb.size()) throw std::runtime_error("samples files hold different observation ids");
    for (std::size_t i = 0; i < sa.size(); ++i)
      if (sa[i].observation_id != sb[i].observation_id)
        throw std::runtime_error("samples files hold different observation ids (" +
                                 std::to_string(sa[i].observation_id) + " vs " +
                                 std::to_string(sb[i].observation_id) + ")");
    if (sa.empty()) throw std::runtime_error("samples files are empty");

    pd::json obs = pd::json::array();
    std::vector<double> pvalues;
    for (std::size_t i = 0; i < sa.size(); ++i) {
      const auto r = pd::ks_two_sample(sa[i].draws, sb[i].draws);
      pvalues.push_back(r.p_value);
      const auto lo = std::min(*std::min_element(sa[i].draws.begin(), sa[i].draws.end()),
                               *std::min_element(sb[i].draws.begin(), sb[i].draws.end()));
      const auto hi = std::max(*std::max_element(sa[i].draws.begin(), sa[i].draws.end()),
                               *std::max_element(sb[i].draws.begin(), sb[i].draws.end()));
      auto hist = [&](const std::vector<double>& v) {
        std::vector<std::size_t> h(bins, 0);
        const double width = hi - lo;
        for (double x : v) {
          std::size_t k = width > 0.0 ? static_cast<std::size_t>((x - lo) / width * static_cast<double>(bins)) : 0;
          ++h[std::min(k, bins - 1)];
        }
        return h;
      };
      std::vector<double> edges(bins + 1);
      for (std::size_t k = 0; k <= bins; ++k)
        edges[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(bins);
      const auto ma = pd::summarize(sa[i]);
      const auto mb = pd::summarize(sb[i]);
      obs.push_back({{"observation_id", sa[i].observation_id},
                     {"D", r.statistic_d},
                     {"p", r.p_value},
                     {"n", r.n},
                     {"m", r.m},
                     {"mean_a", ma.mean},
                     {"mean_b", mb.mean},
                     {"std_a", ma.std},
                     {"std_b", mb.std},
                     {"histogram", {{"edges", edges}, {"a", hist(sa[i].draws)}, {"b", hist(sb[i].draws)}}}});
    }
    const auto u = pd::pvalue_uniformity(pvalues);
    pd::json report = {{"a", a},
                       {"b", b},
                       {"observations", obs},
                       {"uniformity",
                        {{"fraction_below_0.05", u.fraction_below_005},
                         {"ks_vs_uniform_d", u.ks_vs_uniform_d},
                         {"ks_vs_uniform_p", u.ks_vs_uniform_p},
                         {"histogram", u.histogram}}}};
    pd::write_text_file(out, report.dump(1) + "\n");
    std::cerr << sa.size() << " observations, " << u.fraction_below_005 * 100.0
              << "% with p < 0.05, uniformity p " << u.ks_vs_uniform_p << "\n";
    return 0;
  }

  CLI::App* cmd = nullptr;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Permanent-dropout inference on analog and spiking networks"};
  app.require_subcommand(1);
  SynthCmd synth;
  TrainCmd train;
  ConvertCmd conv;
  InferCmd infer;
  TraceCmd trace;
  CompareCmd compare;
  synth.add(app);
  train.add(app);
  conv.add(app);
  infer.add(app);
  trace.add(app);
  compare.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth.cmd->parsed()) return synth.run();
    if (train.cmd->parsed()) return train.run();
    if (conv.cmd->parsed()) return conv.run();
    if (infer.cmd->parsed()) return infer.run();
    if (trace.cmd->parsed()) return trace.run();
    if (compare.cmd->parsed()) return compare.run();
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
