#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kfe/dataset.hpp"
#include "kfe/net.hpp"
#include "kfe/precond.hpp"

namespace kfe {

struct LrSchedule {
  double factor = 1.0;
  long every_epochs = 0;  // 0 = constant learning rate
};

struct TrainConfig {
  PrecondConfig precond;
  std::size_t batch_size = 200;
  long epochs = 1;
  std::uint64_t seed = 1;

  bool use_mnist = false;
  std::string mnist_dir;
  SyntheticSpec synthetic;
  std::size_t limit_examples = 0;  // keep only the first N examples, 0 = all

  std::vector<std::size_t> architecture = {784, 200, 100, 30, 100, 200, 784};
  Activation hidden_activation = Activation::sigmoid;
  LossKind loss = LossKind::mse;
  LrSchedule schedule;

  std::string metrics_path;     // JSON Lines stream, empty = none
  std::string checkpoint_path;  // empty = none
  bool single_thread = false;   // reproducible stream mode: timing fields zeroed
  bool validate = false;
  double divergence_threshold = 1e6;

  void check() const;  // throws ConfigError
};

// Parses "mnist:DIR" / "synthetic:n=...,dim=...,latent=...,seed=..." into the
// config. An empty DIR falls back to the KFE_DATA_DIR environment variable.
void parse_dataset_spec(TrainConfig& config, const std::string& spec);
std::vector<std::size_t> parse_architecture(const std::string& csv);

Dataset load_dataset(const TrainConfig& config);

enum class RunStatus { ok, diverged };

struct RunResult {
  RunStatus status = RunStatus::ok;
  long epochs_completed = 0;
  long iterations = 0;
  std::vector<double> epoch_mean_losses;
  std::vector<double> epoch_validation_losses;  // empty unless validate
  double total_seconds = 0.0;
  std::optional<Network> net;

  double final_loss() const {
    return epoch_mean_losses.empty() ? 0.0 : epoch_mean_losses.back();
  }
};

// Hook invoked synchronously during training; the references are only valid
// for the duration of the call.
class TrainObserver {
 public:
  virtual ~TrainObserver() = default;
  virtual void on_step(long iteration, long epoch, const Network& net, const PrecondState& state,
                       const BackwardResult& back, const StepMetrics& metrics) = 0;
  virtual void on_epoch(long /*epoch*/, double /*mean_loss*/) {}
};

RunResult run_training(const TrainConfig& config, TrainObserver* observer = nullptr);

void save_checkpoint(const Network& net, const std::string& path);
Network load_checkpoint(const std::string& path);

// --- hyperparameter grid ---

struct GridSpec {
  std::vector<PrecondKind> optimizers;
  std::vector<double> lrs;
  std::vector<double> dampings;
  std::vector<std::size_t> batch_sizes;
  std::vector<long> freqs;
  std::vector<std::uint64_t> seeds;
  long random_search = 0;  // extra jittered (lr, damping) pairs per grid pair
  std::uint64_t random_seed = 1;
};

// Declarative grid file: one `key = v1, v2, ...` entry per line, '#'
// comments. Grid keys: optimizer, lr, damping, batch-size, freq, seed,
// random-search. Any other known train key overrides the base config.
GridSpec parse_grid_file(const std::string& path, TrainConfig& base);

struct GridCellResult {
  std::size_t index = 0;
  PrecondKind optimizer = PrecondKind::sgd;
  double lr = 0.0;
  double damping = 0.0;
  std::size_t batch_size = 0;
  long freq = 1;
  std::uint64_t seed = 0;
  RunStatus status = RunStatus::ok;
  std::vector<double> epoch_losses;
  std::string metrics_path;
};

struct GridResult {
  std::vector<GridCellResult> cells;
  std::string summary_path;
};

// Runs every cell (sequentially, each deterministic per its seed), writes
// one metrics stream per cell under out_dir plus summary.csv holding the
// per-epoch best training loss per (optimizer, seed). Diverged cells are
// recorded, not fatal.
GridResult run_grid(const TrainConfig& base, const GridSpec& grid, const std::string& out_dir);

}  // namespace kfe
