#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "kfe/diagnostics.hpp"
#include "kfe/error.hpp"
#include "kfe/kernels.hpp"
#include "kfe/trainer.hpp"

namespace {

struct CliOptions {
  kfe::TrainConfig config;
  std::string optimizer = "sgd";
  std::string dataset = "synthetic:n=5000,dim=784,latent=16,seed=1";
  std::string arch = "784,200,100,30,100,200,784";
  std::string loss = "mse";
  std::string lr_decay;  // "FACTOR,EVERY"
};

void add_train_options(CLI::App* cmd, CliOptions& opt) {
  cmd->add_option("--optimizer", opt.optimizer,
                  "sgd|sgd-momentum|adam|diagonal|kfac|ekfac|ekfac-ra|exact-fisher")
      ->capture_default_str();
  cmd->add_option("--lr", opt.config.precond.hyper.lr, "learning rate")->capture_default_str();
  cmd->add_option("--damping", opt.config.precond.hyper.damping, "damping epsilon")
      ->capture_default_str();
  cmd->add_option("--batch-size", opt.config.batch_size, "minibatch size")->capture_default_str();
  cmd->add_option("--freq", opt.config.precond.hyper.refresh_every,
                  "recompute eigenbasis every N updates")
      ->capture_default_str();
  cmd->add_option("--epochs", opt.config.epochs, "training epochs")->capture_default_str();
  cmd->add_option("--seed", opt.config.seed, "RNG seed")->capture_default_str();
  cmd->add_option("--dataset", opt.dataset, "mnist:DIR or synthetic:n=..,dim=..,latent=..,seed=..")
      ->capture_default_str();
  cmd->add_option("--arch", opt.arch, "layer sizes, comma separated")->capture_default_str();
  cmd->add_option("--loss", opt.loss, "mse|bce")->capture_default_str();
  cmd->add_option("--out", opt.config.metrics_path, "metrics JSONL path");
  cmd->add_option("--checkpoint", opt.config.checkpoint_path, "final checkpoint path");
  cmd->add_option("--lr-decay", opt.lr_decay, "step decay: FACTOR,EVERY_K_EPOCHS");
  cmd->add_flag("--single-thread", opt.config.single_thread,
                "deterministic mode; timing fields in the stream are zeroed");
  cmd->add_flag("--validate", opt.config.validate, "track validation loss per epoch");
  cmd->add_option("--limit", opt.config.limit_examples, "use only the first N examples");
  cmd->add_option("--running-decay", opt.config.precond.hyper.running_decay,
                  "running-average decay for ekfac-ra / diagonal")
      ->capture_default_str();
  cmd->add_option("--momentum", opt.config.precond.hyper.momentum, "momentum coefficient")
      ->capture_default_str();
  cmd->add_flag("--factored-damping", opt.config.precond.hyper.factored_damping,
                "KFAC: damp factors by sqrt(eps) instead of eigenvalue-space epsilon");
  cmd->add_flag("--ra-per-example", opt.config.precond.hyper.ra_per_example,
                "ekfac-ra: average squared per-example gradients instead of minibatch means");
}

kfe::TrainConfig finalize(CliOptions& opt) {
  opt.config.precond.kind = kfe::precond_kind_from_string(opt.optimizer);
  kfe::parse_dataset_spec(opt.config, opt.dataset);
  opt.config.architecture = kfe::parse_architecture(opt.arch);
  if (opt.loss == "mse") {
    opt.config.loss = kfe::LossKind::mse;
  } else if (opt.loss == "bce") {
    opt.config.loss = kfe::LossKind::bce;
  } else {
    throw kfe::ConfigError("unknown loss: " + opt.loss);
  }
  if (!opt.lr_decay.empty()) {
    const auto comma = opt.lr_decay.find(',');
    if (comma == std::string::npos) {
      throw kfe::ConfigError("--lr-decay expects FACTOR,EVERY_K_EPOCHS");
    }
    opt.config.schedule.factor = std::stod(opt.lr_decay.substr(0, comma));
    opt.config.schedule.every_epochs = std::stol(opt.lr_decay.substr(comma + 1));
  }
  opt.config.check();
  return opt.config;
}

int cmd_train(CliOptions& opt) {
  const kfe::TrainConfig config = finalize(opt);
  const kfe::RunResult result = kfe::run_training(config);
  std::printf("status: %s\n", result.status == kfe::RunStatus::ok ? "ok" : "diverged");
  std::printf("epochs: %ld  iterations: %ld\n", result.epochs_completed, result.iterations);
  std::printf("final train loss: %.6f\n", result.final_loss());
  if (!result.epoch_validation_losses.empty()) {
    std::printf("final validation loss: %.6f\n", result.epoch_validation_losses.back());
  }
  if (!config.single_thread) std::printf("wall clock: %.2fs\n", result.total_seconds);
  return result.status == kfe::RunStatus::ok ? 0 : 2;
}

int cmd_grid(CliOptions& opt, const std::string& grid_path, const std::string& out_dir) {
  kfe::TrainConfig base = finalize(opt);
  kfe::GridSpec grid = kfe::parse_grid_file(grid_path, base);
  base.check();
  const kfe::GridResult result = kfe::run_grid(base, grid, out_dir);
  std::size_t diverged = 0;
  for (const auto& cell : result.cells) {
    if (cell.status == kfe::RunStatus::diverged) ++diverged;
  }
  std::printf("cells: %zu (%zu diverged)\n", result.cells.size(), diverged);
  std::printf("summary: %s\n", result.summary_path.c_str());
  return 0;
}

int cmd_diagnose_spectrum(CliOptions& opt, kfe::SpectrumTraceConfig& trace) {
  const kfe::TrainConfig config = finalize(opt);
  const auto points = kfe::run_spectrum_trace(config, trace);
  std::printf("checkpoints: %zu -> %s\n", points.size(), trace.out_csv.c_str());
  return 0;
}

int cmd_diagnose_correlation(CliOptions& opt, std::size_t layer, std::size_t subset_size,
                             const std::string& out_path) {
  const kfe::TrainConfig config = finalize(opt);
  kfe::RunResult run = kfe::run_training(config);
  if (run.status != kfe::RunStatus::ok) {
    std::fprintf(stderr, "training diverged; correlation not computed\n");
    return 2;
  }
  if (layer + 1 >= config.architecture.size()) {
    throw kfe::ConfigError("--layer out of range for the architecture");
  }
  kfe::Dataset ds = kfe::load_dataset(config);
  const std::size_t n = std::min(config.batch_size, ds.size());
  kfe::DenseMatrix batch(n, ds.dim());
  std::copy(ds.examples.data(), ds.examples.data() + n * ds.dim(), batch.data());
  kfe::ForwardCache cache = kfe::forward(*run.net, batch);
  kfe::BackwardResult back = kfe::backward(*run.net, cache, batch);
  const auto grads = kfe::per_example_gradients(back.records[layer]);
  kfe::KfeState state;
  kfe::refresh_basis(state, kfe::estimate_factors(back.records[layer]), 0);
  const auto subset = kfe::evenly_spaced_subset(grads.front().size(), subset_size);
  const kfe::CorrelationReport report = kfe::correlation_report(grads, state, subset);

  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw kfe::ConfigError("cannot open output: " + out_path);
  out << "basis,offdiag_mean_abs,subset,examples\n";
  out << "parameter," << report.offdiag_mean_param << "," << subset.size() << "," << n << "\n";
  out << "kfe," << report.offdiag_mean_kfe << "," << subset.size() << "," << n << "\n";
  std::printf("offdiag mean |corr|: parameter=%.4f kfe=%.4f -> %s\n", report.offdiag_mean_param,
              report.offdiag_mean_kfe, out_path.c_str());
  return 0;
}

int cmd_diagnose_frobenius(CliOptions& opt, const std::string& out_path) {
  const kfe::TrainConfig config = finalize(opt);
  kfe::RunResult run = kfe::run_training(config);
  if (run.status != kfe::RunStatus::ok) {
    std::fprintf(stderr, "training diverged; errors not computed\n");
    return 2;
  }
  kfe::Dataset ds = kfe::load_dataset(config);
  const std::size_t n = std::min(config.batch_size, ds.size());
  kfe::DenseMatrix batch(n, ds.dim());
  std::copy(ds.examples.data(), ds.examples.data() + n * ds.dim(), batch.data());
  kfe::ForwardCache cache = kfe::forward(*run.net, batch);
  kfe::BackwardResult back = kfe::backward(*run.net, cache, batch);

  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw kfe::ConfigError("cannot open output: " + out_path);
  out << "layer,parameters,err_kfac,err_ekfac\n";
  for (std::size_t l = 0; l < run.net->layer_count(); ++l) {
    const auto grads = kfe::per_example_gradients(back.records[l]);
    const std::size_t p = grads.front().size();
    if (p > kfe::kDefaultExactFisherLimit) continue;  // oracle limit
    kfe::KroneckerFactors factors = kfe::estimate_factors(back.records[l]);
    kfe::KfeState state;
    kfe::refresh_basis(state, factors, 0);
    state.s_star = kfe::compute_s_star_intrabatch(state, grads);
    state.s_star_initialized = true;
    const kfe::FrobeniusErrors err = kfe::frobenius_errors(grads, factors, state);
    out << l << "," << p << "," << err.err_kfac << "," << err.err_ekfac << "\n";
    std::printf("layer %zu (p=%zu): err_kfac=%.6g err_ekfac=%.6g\n", l, p, err.err_kfac,
                err.err_ekfac);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kronecker-factored eigenbasis optimization toolkit"};
  app.require_subcommand(1);

  CliOptions train_opt;
  CLI::App* train = app.add_subcommand("train", "train the auto-encoder with one optimizer");
  add_train_options(train, train_opt);

  CliOptions grid_opt;
  std::string grid_config;
  std::string grid_out = "grid-out";
  CLI::App* grid = app.add_subcommand("grid", "run a hyperparameter grid");
  grid->add_option("--config", grid_config, "grid file (key = v1, v2, ... lines)")->required();
  grid->add_option("--grid-out", grid_out, "output directory")->capture_default_str();
  add_train_options(grid, grid_opt);

  CLI::App* diagnose = app.add_subcommand("diagnose", "quantitative diagnostics");
  diagnose->require_subcommand(1);

  CliOptions spec_opt;
  kfe::SpectrumTraceConfig trace;
  CLI::App* spectrum = diagnose->add_subcommand("spectrum", "track approximation spectra");
  spectrum->add_option("--layer", trace.layer_index, "tracked layer index")
      ->capture_default_str();
  spectrum->add_option("--stride", trace.stride, "checkpoint stride in iterations")
      ->capture_default_str();
  spectrum->add_option("--trace-batch", trace.trace_batch, "batch for the exact block Fisher")
      ->capture_default_str();
  spectrum->add_option("--out", trace.out_csv, "output CSV")->required();
  add_train_options(spectrum, spec_opt);

  CliOptions corr_opt;
  std::size_t corr_layer = 1;
  std::size_t corr_subset = 250;
  std::string corr_out;
  CLI::App* correlation = diagnose->add_subcommand("correlation", "gradient correlation report");
  correlation->add_option("--layer", corr_layer, "layer index")->capture_default_str();
  correlation->add_option("--subset", corr_subset, "coordinate subset size")
      ->capture_default_str();
  correlation->add_option("--out", corr_out, "output CSV")->required();
  add_train_options(correlation, corr_opt);

  CliOptions frob_opt;
  std::string frob_out;
  CLI::App* frobenius = diagnose->add_subcommand("frobenius", "approximation error report");
  frobenius->add_option("--out", frob_out, "output CSV")->required();
  add_train_options(frobenius, frob_opt);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(train_opt);
    if (grid->parsed()) return cmd_grid(grid_opt, grid_config, grid_out);
    if (spectrum->parsed()) return cmd_diagnose_spectrum(spec_opt, trace);
    if (correlation->parsed()) {
      return cmd_diagnose_correlation(corr_opt, corr_layer, corr_subset, corr_out);
    }
    if (frobenius->parsed()) return cmd_diagnose_frobenius(frob_opt, frob_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
