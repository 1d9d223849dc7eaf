#include "kfe/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "kfe/error.hpp"
#include "kfe/rng.hpp"

namespace kfe {

namespace {

using Clock = std::chrono::steady_clock;
using nlohmann::json;

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

DenseMatrix gather_rows(const DenseMatrix& data, const std::vector<std::size_t>& idx,
                        std::size_t begin, std::size_t count) {
  DenseMatrix out(count, data.cols());
  for (std::size_t r = 0; r < count; ++r) {
    const double* src = data.data() + idx[begin + r] * data.cols();
    std::copy(src, src + data.cols(), out.data() + r * data.cols());
  }
  return out;
}

DenseMatrix take_rows(const DenseMatrix& data, std::size_t begin, std::size_t count) {
  DenseMatrix out(count, data.cols());
  std::copy(data.data() + begin * data.cols(), data.data() + (begin + count) * data.cols(),
            out.data());
  return out;
}

std::string loss_to_string(LossKind k) { return k == LossKind::mse ? "mse" : "bce"; }

}  // namespace

void TrainConfig::check() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (architecture.size() < 2) throw ConfigError("architecture needs at least two sizes");
  for (std::size_t v : architecture) {
    if (v < 1) throw ConfigError("architecture sizes must be >= 1");
  }
  if (architecture.front() != architecture.back()) {
    throw ConfigError("auto-encoder architecture must start and end with the data dimension");
  }
  if (schedule.every_epochs < 0) throw ConfigError("lr schedule period must be >= 0");
  if (schedule.every_epochs > 0 && schedule.factor <= 0.0) {
    throw ConfigError("lr schedule factor must be > 0");
  }
  try {
    precond.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
}

void parse_dataset_spec(TrainConfig& config, const std::string& spec) {
  const auto colon = spec.find(':');
  const std::string kind = colon == std::string::npos ? spec : spec.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
  if (kind == "mnist") {
    config.use_mnist = true;
    config.mnist_dir = rest;
    if (config.mnist_dir.empty()) {
      if (const char* env = std::getenv("KFE_DATA_DIR")) config.mnist_dir = env;
    }
    if (config.mnist_dir.empty()) {
      throw ConfigError("mnist dataset requires a directory (mnist:DIR or KFE_DATA_DIR)");
    }
  } else if (kind == "synthetic") {
    config.use_mnist = false;
    for (const auto& kv : split(rest, ',')) {
      if (kv.empty()) continue;
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("bad synthetic spec entry: " + kv);
      const std::string key = trim(kv.substr(0, eq));
      const std::string val = trim(kv.substr(eq + 1));
      if (key == "n") {
        config.synthetic.n = std::stoul(val);
      } else if (key == "dim") {
        config.synthetic.dim = std::stoul(val);
      } else if (key == "latent") {
        config.synthetic.latent_dim = std::stoul(val);
      } else if (key == "seed") {
        config.synthetic.seed = std::stoull(val);
      } else {
        throw ConfigError("unknown synthetic spec key: " + key);
      }
    }
  } else {
    throw ConfigError("unknown dataset kind: " + kind + " (expected mnist:DIR or synthetic:SPEC)");
  }
}

std::vector<std::size_t> parse_architecture(const std::string& csv) {
  std::vector<std::size_t> arch;
  for (const auto& tok : split(csv, ',')) {
    if (tok.empty()) continue;
    arch.push_back(std::stoul(tok));
  }
  if (arch.size() < 2) throw ConfigError("architecture needs at least two sizes");
  return arch;
}

Dataset load_dataset(const TrainConfig& config) {
  Dataset ds;
  if (config.use_mnist) {
    const std::filesystem::path dir(config.mnist_dir);
    const auto images = dir / "train-images-idx3-ubyte";
    const auto labels = dir / "train-labels-idx1-ubyte";
    ds = load_mnist_idx(images.string(),
                        std::filesystem::exists(labels) ? labels.string() : "");
  } else {
    ds = generate_synthetic(config.synthetic);
  }
  if (config.limit_examples > 0 && config.limit_examples < ds.size()) {
    ds.examples = take_rows(ds.examples, 0, config.limit_examples);
    if (!ds.labels.empty()) ds.labels.resize(config.limit_examples);
  }
  return ds;
}

namespace {

struct MetricsWriter {
  std::ofstream out;
  bool strip_timings = false;
  bool enabled = false;

  void open(const std::string& path, bool deterministic) {
    if (path.empty()) return;
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    out.open(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot open metrics output: " + path);
    strip_timings = deterministic;
    enabled = true;
  }

  void write_step(long iteration, long epoch, double wall, double loss,
                  const StepMetrics& m) {
    if (!enabled) return;
    json j{{"type", "step"},
           {"iteration", iteration},
           {"epoch", epoch},
           {"wall_clock_seconds", strip_timings ? 0.0 : wall},
           {"train_loss", loss},
           {"basis_refreshed", m.basis_refreshed},
           {"timings",
            {{"forward", strip_timings ? 0.0 : m.t_forward},
             {"backward", strip_timings ? 0.0 : m.t_backward},
             {"refresh", strip_timings ? 0.0 : m.t_refresh},
             {"scaling", strip_timings ? 0.0 : m.t_scaling},
             {"precondition", strip_timings ? 0.0 : m.t_precondition}}}};
    out << j.dump() << "\n";
  }

  void write_epoch(long epoch, long iteration, double wall, double mean_loss,
                   std::optional<double> val_loss, double lr) {
    if (!enabled) return;
    json j{{"type", "epoch"},
           {"epoch", epoch},
           {"iteration", iteration},
           {"wall_clock_seconds", strip_timings ? 0.0 : wall},
           {"train_loss", mean_loss},
           {"lr", lr}};
    j["validation_loss"] = val_loss ? json(*val_loss) : json(nullptr);
    out << j.dump() << "\n";
    out.flush();  // stream contract: flushed per epoch
  }

  void write_final(RunStatus status, long epochs, long iterations, double loss) {
    if (!enabled) return;
    json j{{"type", "final"},
           {"status", status == RunStatus::ok ? "ok" : "diverged"},
           {"epochs", epochs},
           {"iterations", iterations},
           {"train_loss", loss}};
    out << j.dump() << "\n";
    out.flush();
  }
};

}  // namespace

RunResult run_training(const TrainConfig& config, TrainObserver* observer) {
  config.check();
  Dataset ds = load_dataset(config);
  if (ds.dim() != config.architecture.front()) {
    throw ConfigError("dataset dimension " + std::to_string(ds.dim()) +
                      " != architecture input size " +
                      std::to_string(config.architecture.front()));
  }

  // validation split: MNIST keeps the last 10k examples, synthetic the last 10%
  std::size_t val_count = 0;
  if (config.validate) {
    val_count = config.use_mnist ? 10000 : ds.size() / 10;
    if (val_count >= ds.size()) {
      throw ConfigError("dataset too small for the requested validation split");
    }
  }
  const std::size_t train_count = ds.size() - val_count;
  if (train_count < config.batch_size) {
    throw ConfigError("fewer training examples than one batch");
  }
  DenseMatrix val_examples;
  if (val_count > 0) val_examples = take_rows(ds.examples, train_count, val_count);

  std::vector<LayerSpec> specs;
  for (std::size_t l = 0; l + 1 < config.architecture.size(); ++l) {
    const bool last = l + 2 == config.architecture.size();
    specs.push_back(LayerSpec{config.architecture[l], config.architecture[l + 1],
                              last ? Activation::sigmoid : config.hidden_activation});
  }
  Network net = Network::make(specs, config.loss, config.seed);
  PrecondState state = PrecondState::make(config.precond, net);

  MetricsWriter writer;
  writer.open(config.metrics_path, config.single_thread);

  Rng shuffle_rng(config.seed ^ 0xD1B54A32D192ED03ULL);
  std::vector<std::size_t> order(train_count);
  for (std::size_t i = 0; i < train_count; ++i) order[i] = i;

  RunResult result;
  const auto run_start = Clock::now();
  const std::size_t batches_per_epoch = train_count / config.batch_size;  // drop partial batch
  bool diverged = false;

  for (long epoch = 0; epoch < config.epochs && !diverged; ++epoch) {
    if (config.schedule.every_epochs > 0) {
      state.current_lr = config.precond.hyper.lr *
                         std::pow(config.schedule.factor,
                                  static_cast<double>(epoch / config.schedule.every_epochs));
    }
    shuffle(order, shuffle_rng);
    double loss_sum = 0.0;
    long steps_this_epoch = 0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      DenseMatrix batch =
          gather_rows(ds.examples, order, b * config.batch_size, config.batch_size);
      BackwardResult back;
      StepMetrics m = step(net, state, batch, batch, observer ? &back : nullptr);
      const double wall = std::chrono::duration<double>(Clock::now() - run_start).count();
      writer.write_step(m.iteration, epoch, wall, m.loss, m);
      if (observer) observer->on_step(m.iteration, epoch, net, state, back, m);
      ++result.iterations;
      ++steps_this_epoch;
      loss_sum += m.loss;
      if (!std::isfinite(m.loss) || m.loss > config.divergence_threshold) {
        diverged = true;
        break;
      }
    }
    const double mean_loss = steps_this_epoch > 0
                                 ? loss_sum / static_cast<double>(steps_this_epoch)
                                 : std::numeric_limits<double>::quiet_NaN();
    result.epoch_mean_losses.push_back(mean_loss);
    std::optional<double> val_loss;
    if (val_count > 0 && !diverged) {
      val_loss = compute_loss(net, val_examples, val_examples);
      result.epoch_validation_losses.push_back(*val_loss);
    }
    const double wall = std::chrono::duration<double>(Clock::now() - run_start).count();
    writer.write_epoch(epoch, state.iteration - 1, wall, mean_loss, val_loss, state.current_lr);
    if (observer) observer->on_epoch(epoch, mean_loss);
    if (!diverged) ++result.epochs_completed;
  }

  result.status = diverged ? RunStatus::diverged : RunStatus::ok;
  result.total_seconds = std::chrono::duration<double>(Clock::now() - run_start).count();
  if (config.single_thread) result.total_seconds = 0.0;
  writer.write_final(result.status, result.epochs_completed, result.iterations,
                     result.final_loss());
  if (!config.checkpoint_path.empty()) save_checkpoint(net, config.checkpoint_path);
  result.net = std::move(net);
  return result;
}

void save_checkpoint(const Network& net, const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open checkpoint output: " + path);
  json header;
  header["format"] = "kfe-checkpoint-v1";
  header["byte_order"] = "little";
  header["loss"] = loss_to_string(net.loss());
  json layers = json::array();
  std::size_t total = 0;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const auto& s = net.specs()[l];
    layers.push_back({{"d_in", s.d_in},
                      {"d_out", s.d_out},
                      {"activation", s.activation == Activation::sigmoid   ? "sigmoid"
                                     : s.activation == Activation::relu    ? "relu"
                                                                           : "identity"}});
    total += net.params()[l].folded.size();
  }
  header["layers"] = layers;
  header["value_count"] = total;
  out << header.dump() << "\n";
  static_assert(std::endian::native == std::endian::little,
                "checkpoint writer assumes a little-endian host");
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const auto& m = net.params()[l].folded;
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!out) throw ConfigError("failed writing checkpoint: " + path);
}

Network load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path, 0);
  std::string header_line;
  if (!std::getline(in, header_line)) throw FormatError("checkpoint missing header", 0);
  json header = json::parse(header_line, nullptr, false);
  if (header.is_discarded() || header.value("format", "") != "kfe-checkpoint-v1") {
    throw FormatError("bad checkpoint header", 0);
  }
  const std::string loss_s = header.value("loss", "mse");
  const LossKind loss = loss_s == "bce" ? LossKind::bce : LossKind::mse;
  std::vector<LayerSpec> specs;
  std::vector<LayerParams> params;
  for (const auto& jl : header.at("layers")) {
    LayerSpec s;
    s.d_in = jl.at("d_in").get<std::size_t>();
    s.d_out = jl.at("d_out").get<std::size_t>();
    const std::string act = jl.value("activation", "sigmoid");
    s.activation = act == "relu"       ? Activation::relu
                   : act == "identity" ? Activation::identity
                                       : Activation::sigmoid;
    specs.push_back(s);
    DenseMatrix folded(s.d_in + 1, s.d_out);
    in.read(reinterpret_cast<char*>(folded.data()),
            static_cast<std::streamsize>(folded.size() * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(folded.size() * sizeof(double))) {
      throw FormatError("checkpoint payload truncated", header_line.size() + 1);
    }
    params.push_back(LayerParams{std::move(folded)});
  }
  return Network(std::move(specs), std::move(params), loss);
}

namespace {

void append_jittered_pairs(std::vector<std::pair<double, double>>& pairs, long count,
                           std::uint64_t seed) {
  const std::size_t base = pairs.size();
  Rng rng(seed);
  for (std::size_t i = 0; i < base; ++i) {
    for (long k = 0; k < count; ++k) {
      const double lr = pairs[i].first * std::pow(10.0, rng.next_uniform(-0.5, 0.5));
      const double eps = pairs[i].second * std::pow(10.0, rng.next_uniform(-0.5, 0.5));
      pairs.emplace_back(lr, eps);
    }
  }
}

}  // namespace

GridSpec parse_grid_file(const std::string& path, TrainConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open grid config: " + path);
  GridSpec grid;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("grid config line " + std::to_string(lineno) + ": expected key = values");
    }
    const std::string key = trim(line.substr(0, eq));
    const auto values = split(line.substr(eq + 1), ',');
    auto scalar = [&]() -> const std::string& {
      if (values.size() != 1) {
        throw ConfigError("grid config key '" + key + "' expects a single value");
      }
      return values.front();
    };
    if (key == "optimizer") {
      for (const auto& v : values) grid.optimizers.push_back(precond_kind_from_string(v));
    } else if (key == "lr") {
      for (const auto& v : values) grid.lrs.push_back(std::stod(v));
    } else if (key == "damping") {
      for (const auto& v : values) grid.dampings.push_back(std::stod(v));
    } else if (key == "batch-size") {
      for (const auto& v : values) grid.batch_sizes.push_back(std::stoul(v));
    } else if (key == "freq") {
      for (const auto& v : values) grid.freqs.push_back(std::stol(v));
    } else if (key == "seed") {
      for (const auto& v : values) grid.seeds.push_back(std::stoull(v));
    } else if (key == "random-search") {
      grid.random_search = std::stol(scalar());
    } else if (key == "random-seed") {
      grid.random_seed = std::stoull(scalar());
    } else if (key == "epochs") {
      base.epochs = std::stol(scalar());
    } else if (key == "arch") {
      base.architecture = parse_architecture(scalar());
    } else if (key == "dataset") {
      parse_dataset_spec(base, scalar());
    } else if (key == "loss") {
      base.loss = scalar() == "bce" ? LossKind::bce : LossKind::mse;
    } else if (key == "limit-examples") {
      base.limit_examples = std::stoul(scalar());
    } else if (key == "running-decay") {
      base.precond.hyper.running_decay = std::stod(scalar());
    } else if (key == "single-thread") {
      base.single_thread = scalar() == "true" || scalar() == "1";
    } else {
      throw ConfigError("unknown grid config key: " + key);
    }
  }
  return grid;
}

GridResult run_grid(const TrainConfig& base, const GridSpec& grid_in, const std::string& out_dir) {
  GridSpec grid = grid_in;
  if (grid.optimizers.empty()) grid.optimizers = {base.precond.kind};
  if (grid.lrs.empty()) grid.lrs = {base.precond.hyper.lr};
  if (grid.dampings.empty()) grid.dampings = {base.precond.hyper.damping};
  if (grid.batch_sizes.empty()) grid.batch_sizes = {base.batch_size};
  if (grid.freqs.empty()) grid.freqs = {base.precond.hyper.refresh_every};
  if (grid.seeds.empty()) grid.seeds = {base.seed};

  std::vector<std::pair<double, double>> pairs;
  for (double lr : grid.lrs) {
    for (double eps : grid.dampings) pairs.emplace_back(lr, eps);
  }
  if (grid.random_search > 0) append_jittered_pairs(pairs, grid.random_search, grid.random_seed);

  std::filesystem::create_directories(out_dir);
  GridResult result;
  std::size_t index = 0;
  for (PrecondKind opt : grid.optimizers) {
    for (const auto& [lr, eps] : pairs) {
      for (std::size_t batch : grid.batch_sizes) {
        for (long freq : grid.freqs) {
          for (std::uint64_t seed : grid.seeds) {
            TrainConfig cfg = base;
            cfg.precond.kind = opt;
            cfg.precond.hyper.lr = lr;
            cfg.precond.hyper.damping = eps;
            cfg.batch_size = batch;
            cfg.precond.hyper.refresh_every = freq;
            cfg.seed = seed;
            cfg.checkpoint_path.clear();
            cfg.metrics_path =
                (std::filesystem::path(out_dir) /
                 ("cell_" + std::to_string(index) + "_" + to_string(opt) + ".jsonl"))
                    .string();
            GridCellResult cell;
            cell.index = index;
            cell.optimizer = opt;
            cell.lr = lr;
            cell.damping = eps;
            cell.batch_size = batch;
            cell.freq = freq;
            cell.seed = seed;
            cell.metrics_path = cfg.metrics_path;
            try {
              RunResult run = run_training(cfg);
              cell.status = run.status;
              cell.epoch_losses = run.epoch_mean_losses;
            } catch (const NumericError&) {
              cell.status = RunStatus::diverged;
            }
            result.cells.push_back(std::move(cell));
            ++index;
          }
        }
      }
    }
  }

  // summary: per-epoch best training loss per (optimizer, seed)
  const auto summary_path = std::filesystem::path(out_dir) / "summary.csv";
  std::ofstream csv(summary_path);
  if (!csv) throw ConfigError("cannot open grid summary: " + summary_path.string());
  csv.precision(17);
  csv << "optimizer,seed,epoch,best_train_loss,lr,damping,cell\n";
  for (PrecondKind opt : grid.optimizers) {
    for (std::uint64_t seed : grid.seeds) {
      for (long epoch = 0; epoch < base.epochs; ++epoch) {
        const GridCellResult* best = nullptr;
        for (const auto& cell : result.cells) {
          if (cell.optimizer != opt || cell.seed != seed) continue;
          if (epoch >= static_cast<long>(cell.epoch_losses.size())) continue;
          if (!std::isfinite(cell.epoch_losses[epoch])) continue;
          if (!best || cell.epoch_losses[epoch] < best->epoch_losses[epoch]) best = &cell;
        }
        if (best) {
          csv << to_string(opt) << "," << seed << "," << epoch << ","
              << best->epoch_losses[epoch] << "," << best->lr << "," << best->damping << ","
              << best->index << "\n";
        }
      }
    }
  }
  result.summary_path = summary_path.string();
  return result;
}

}  // namespace kfe
