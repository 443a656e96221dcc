#include "lfx/pipeline/train.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "lfx/autodiff/adam.hpp"
#include "lfx/autodiff/checkpoint.hpp"
#include "lfx/pipeline/io.hpp"
#include "lfx/pipeline/metrics.hpp"

namespace lfx::pipeline {

void TrainConfig::validate(std::size_t alpha) const {
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
  if (lr_period == 0 || epochs == 0) throw ConfigError("train: lr_period and epochs must be >= 1");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
    throw ConfigError("train: betas must lie in (0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train: eps must be > 0");
  if (!(stop_loss >= 0.0)) throw ConfigError("train: stop_loss must be >= 0");
  if (patch == 0 || (alpha > 0 && patch % alpha != 0))
    throw ConfigError("train: patch size must be positive and divisible by the scale");
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train: config must be an object");
  TrainConfig c;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      const auto& v = it.value();
      if (k == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (k == "lr") c.lr = v.get<double>();
      else if (k == "lr_period") c.lr_period = v.get<std::size_t>();
      else if (k == "epochs") c.epochs = v.get<std::size_t>();
      else if (k == "beta1") c.beta1 = v.get<double>();
      else if (k == "beta2") c.beta2 = v.get<double>();
      else if (k == "eps") c.eps = v.get<double>();
      else if (k == "patch") c.patch = v.get<std::size_t>();
      else if (k == "steps_per_epoch") c.steps_per_epoch = v.get<std::size_t>();
      else if (k == "max_steps") c.max_steps = v.get<std::size_t>();
      else if (k == "stop_loss") c.stop_loss = v.get<double>();
      else if (k == "augment") c.augment = v.get<bool>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "out_dir") c.out_dir = v.get<std::string>();
      else throw ConfigError("train: unknown key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size}, {"lr", c.lr},
          {"lr_period", c.lr_period},   {"epochs", c.epochs},
          {"beta1", c.beta1},           {"beta2", c.beta2},
          {"eps", c.eps},               {"patch", c.patch},
          {"steps_per_epoch", c.steps_per_epoch}, {"max_steps", c.max_steps},
          {"stop_loss", c.stop_loss},
          {"augment", c.augment},       {"seed", c.seed},
          {"out_dir", c.out_dir.string()}};
}

ad::Tensor<float> stack_batch(const std::vector<const LightField4D<double>*>& items) {
  if (items.empty()) throw ShapeError("stack_batch: empty batch");
  const auto& d = items.front()->dims();
  ad::Buffer<float> buf(static_cast<Eigen::Index>(d.size() * items.size()));
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!(items[i]->dims() == d)) throw ShapeError("stack_batch: items differ in shape");
    buf.segment(Eigen::Index(i * d.size()), Eigen::Index(d.size())) = items[i]->data().cast<float>();
  }
  return ad::Tensor<float>::constant({items.size(), d.c, d.u, d.v, d.y, d.x}, std::move(buf));
}

std::set<std::pair<std::size_t, std::size_t>> input_views(const model::NetworkConfig& cfg) {
  std::set<std::pair<std::size_t, std::size_t>> ex;
  if (cfg.task == model::Task::ASR) {
    const auto pos = sparse_angles(cfg.asr_in, cfg.asr_out);
    for (auto a : pos)
      for (auto b : pos) ex.insert({a, b});
  }
  return ex;
}

double validation_psnr(const model::Network<float>& net, const std::vector<LfPair>& val) {
  if (val.empty()) return std::numeric_limits<double>::quiet_NaN();
  MetricReport report;
  report.excluded = input_views(net.config());
  for (std::size_t i = 0; i < val.size(); ++i) {
    const auto out = net.infer(val[i].input.cast<float>()).cast<double>();
    report.scenes.push_back(score_scene(std::to_string(i), out, val[i].target, report.excluded));
  }
  aggregate(report);
  return report.psnr;
}

TrainResult train(model::Network<float>& net, const std::vector<LfPair>& train_set,
                  const std::vector<LfPair>& val_set, const TrainConfig& cfg,
                  const StepCallback& on_step) {
  cfg.validate(net.config().task == model::Task::SSR ? net.config().scale : 1);
  if (train_set.empty()) throw ConfigError("train: empty training set");
  const bool write = !cfg.out_dir.empty();
  std::ofstream loss_csv, val_csv;
  if (write) {
    std::filesystem::create_directories(cfg.out_dir);
    loss_csv.open(cfg.out_dir / "loss.csv");
    val_csv.open(cfg.out_dir / "val.csv");
    if (!loss_csv || !val_csv) throw IoError("train: cannot write logs in " + cfg.out_dir.string());
    loss_csv << "step,epoch,lr,loss\n" << std::setprecision(9);
    val_csv << "epoch,lr,mean_loss,val_psnr\n" << std::setprecision(9);
  }

  ad::AdamState<float> adam;
  adam.beta1 = static_cast<float>(cfg.beta1);
  adam.beta2 = static_cast<float>(cfg.beta2);
  adam.eps = static_cast<float>(cfg.eps);
  auto params = net.params().tensors();

  std::mt19937_64 rng(cfg.seed);
  const bool square = train_set.front().input.dims().u == train_set.front().input.dims().v &&
                      train_set.front().target.dims().u == train_set.front().target.dims().v;
  const std::size_t n_ops = square ? 4 : 3;
  const std::size_t per_epoch = cfg.steps_per_epoch
                                    ? cfg.steps_per_epoch
                                    : (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;
  std::vector<std::size_t> order(train_set.size());
  std::size_t cursor = order.size();

  TrainResult result;
  std::size_t step = 0;
  bool stopped = false;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg.lr, epoch, cfg.lr_period);
    adam.lr = static_cast<float>(lr);
    double epoch_loss = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t s = 0; s < per_epoch; ++s) {
      if (cfg.max_steps && step >= cfg.max_steps) break;
      std::vector<LfPair> batch;
      for (std::size_t b = 0; b < std::min(cfg.batch_size, train_set.size()); ++b) {
        if (cursor == order.size()) {
          std::iota(order.begin(), order.end(), 0);
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        const auto& item = train_set[order[cursor++]];
        const auto op = cfg.augment ? static_cast<AugmentOp>(rng() % n_ops) : AugmentOp::None;
        batch.push_back(augment(item, op));
      }
      std::vector<const LightField4D<double>*> in, tg;
      for (const auto& p : batch) {
        in.push_back(&p.input);
        tg.push_back(&p.target);
      }
      net.params().zero_grad();
      auto loss = ad::l1_loss(net.forward(stack_batch(in)), stack_batch(tg));
      const double value = loss.item();
      if (!std::isfinite(value))
        throw NumericError("train: non-finite loss at step " + std::to_string(step) + " (epoch " +
                           std::to_string(epoch) + ")");
      ad::backward(loss);
      ad::adam_step(params, adam);
      const StepLog log{step, epoch, lr, value};
      result.steps.push_back(log);
      if (write) loss_csv << step << "," << epoch << "," << lr << "," << value << "\n";
      if (on_step) on_step(log);
      epoch_loss += value;
      ++epoch_steps;
      ++step;
      if (value < cfg.stop_loss) {
        stopped = true;
        break;
      }
    }
    if (epoch_steps == 0) break;
    EpochLog e{epoch, lr, epoch_loss / double(epoch_steps), validation_psnr(net, val_set)};
    result.epochs.push_back(e);
    if (write) {
      val_csv << e.epoch << "," << e.lr << "," << e.mean_loss << "," << e.val_psnr << "\n";
      loss_csv.flush();
      val_csv.flush();
      std::ostringstream name;
      name << "epoch_" << std::setw(3) << std::setfill('0') << epoch << ".lfck";
      save_network(cfg.out_dir / name.str(), net);
    }
    if (stopped) break;
  }
  return result;
}

nlohmann::json checkpoint_model_json(const model::NetworkConfig& cfg) {
  return {{"network", model::to_json(cfg)}};
}

void save_network(const std::filesystem::path& path, const model::Network<float>& net) {
  ad::save_checkpoint(path, net.params(), checkpoint_model_json(net.config()));
}

model::Network<float> load_network(const std::filesystem::path& path) {
  auto ck = ad::load_checkpoint(path);
  if (!ck.model.contains("network")) throw ConfigError("checkpoint has no network config");
  const auto cfg = model::network_config_from_json(ck.model.at("network"));
  return model::Network<float>(cfg, ck.params);
}

}  // namespace lfx::pipeline
