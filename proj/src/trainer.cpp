#include "callseq/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "callseq/errors.hpp"
#include "callseq/metrics.hpp"

namespace callseq {

std::string optimizer_name(OptimizerKind kind) {
  return kind == OptimizerKind::kAdam ? "adam" : "sgd";
}

OptimizerKind optimizer_from_name(const std::string& name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer '" + name + "' (expected adam or sgd)");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  // Zero is allowed so a no-op training run stays expressible.
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must be in [0, 1)");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("adam decay scalars must be in [0, 1)");
  }
  if (adam_eps <= 0.0) throw ConfigError("adam_eps must be > 0");
}

double cross_entropy(std::span<const double> probs, int label, bool* clamped) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size()) {
    throw ConfigError("cross_entropy: label out of range");
  }
  double p = probs[static_cast<std::size_t>(label)];
  const bool tiny = !(p >= 1e-12);  // catches NaN too
  if (clamped) *clamped = tiny;
  if (tiny) p = 1e-12;
  return -std::log(p);
}

double batch_gradients(const std::vector<const Sample*>& batch, const ModelParams& params,
                       RunMode mode, Rng* rng, ModelParams& grads) {
  if (batch.empty()) throw ConfigError("batch_gradients: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Sample* s = batch[i];
    if (s == nullptr || s->label < 0) {
      throw ConfigError("batch_gradients: sample " + std::to_string(i) + " has no label");
    }
    ForwardTrace trace;
    ForwardResult res = forward(*s, params, mode, rng, &trace);
    const double loss = cross_entropy(res.probs, s->label);
    if (!std::isfinite(loss)) {
      throw NumericError("batch_gradients: non-finite loss at sample " + std::to_string(i));
    }
    total += loss;
    backward(*s, params, trace, s->label, grads);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (auto& ref : grads.tensor_refs()) {
    for (std::size_t i = 0; i < ref.size(); ++i) ref.data[i] *= inv;
  }
  return total * inv;
}

AdamState AdamState::zeros(const ModelConfig& config) {
  AdamState state{ModelParams::zeros(config), ModelParams::zeros(config), 0};
  return state;
}

double gradient_norm(ModelParams& grads) {
  double sq = 0.0;
  for (auto& ref : grads.tensor_refs()) {
    for (std::size_t i = 0; i < ref.size(); ++i) sq += ref.data[i] * ref.data[i];
  }
  return std::sqrt(sq);
}

void clip_gradients(ModelParams& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  const double norm = gradient_norm(grads);
  if (norm <= max_norm) return;
  const double scale = max_norm / norm;
  for (auto& ref : grads.tensor_refs()) {
    for (std::size_t i = 0; i < ref.size(); ++i) ref.data[i] *= scale;
  }
}

void apply_update(ModelParams& params, ModelParams& grads, const TrainConfig& config,
                  AdamState& state) {
  clip_gradients(grads, config.clip_norm);
  auto prefs = params.tensor_refs();
  auto grefs = grads.tensor_refs();
  if (prefs.size() != grefs.size()) throw ShapeError("apply_update: tensor count mismatch");
  if (config.optimizer == OptimizerKind::kSgd) {
    for (std::size_t t = 0; t < prefs.size(); ++t) {
      for (std::size_t i = 0; i < prefs[t].size(); ++i) {
        prefs[t].data[i] -= config.learning_rate * grefs[t].data[i];
      }
    }
    return;
  }
  state.steps += 1;
  auto mrefs = state.m.tensor_refs();
  auto vrefs = state.v.tensor_refs();
  const double c1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(state.steps));
  const double c2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(state.steps));
  for (std::size_t t = 0; t < prefs.size(); ++t) {
    double* p = prefs[t].data;
    double* g = grefs[t].data;
    double* m = mrefs[t].data;
    double* v = vrefs[t].data;
    for (std::size_t i = 0; i < prefs[t].size(); ++i) {
      m[i] = config.adam_beta1 * m[i] + (1.0 - config.adam_beta1) * g[i];
      v[i] = config.adam_beta2 * v[i] + (1.0 - config.adam_beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.adam_eps);
    }
  }
}

SplitIndices stratified_split(const std::vector<Sample>& dataset, double fraction, Rng& rng) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw ConfigError("validation_fraction must be in [0, 1)");
  }
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset[i].label < 0) throw ConfigError("stratified_split: unlabeled sample");
    by_label[dataset[i].label].push_back(i);
  }
  SplitIndices out;
  for (auto& [label, members] : by_label) {
    shuffle(members, rng);
    const std::size_t n_val =
        static_cast<std::size_t>(std::floor(static_cast<double>(members.size()) * fraction));
    for (std::size_t i = 0; i < members.size(); ++i) {
      (i < n_val ? out.val : out.train).push_back(members[i]);
    }
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

MetricsReport evaluate_model(const ModelParams& params, const std::vector<const Sample*>& samples) {
  if (samples.empty()) throw ConfigError("evaluate_model: no samples");
  const std::size_t n_classes = params.config.classes;
  MetricsReport report;
  report.samples = samples.size();
  report.precision.assign(n_classes, 0.0);
  report.recall.assign(n_classes, 0.0);

  std::vector<std::vector<int>> rankings;
  std::vector<int> labels;
  rankings.reserve(samples.size());
  labels.reserve(samples.size());
  std::vector<std::size_t> true_count(n_classes, 0), pred_count(n_classes, 0),
      hit_count(n_classes, 0);
  double loss = 0.0;
  std::size_t hits = 0;
  for (const Sample* s : samples) {
    if (s == nullptr || s->label < 0) throw ConfigError("evaluate_model: unlabeled sample");
    ForwardResult res = forward(*s, params, RunMode::kEval);
    loss += cross_entropy(res.probs, s->label);
    std::vector<int> top = rank_top(res.probs, 3);
    const int pred = top[0];
    const auto label = static_cast<std::size_t>(s->label);
    true_count[label] += 1;
    pred_count[static_cast<std::size_t>(pred)] += 1;
    if (pred == s->label) {
      hit_count[label] += 1;
      ++hits;
    }
    rankings.push_back(std::move(top));
    labels.push_back(s->label);
  }
  report.loss = loss / static_cast<double>(samples.size());
  report.accuracy = static_cast<double>(hits) / static_cast<double>(samples.size());
  report.map_at_3 = map_at_3(rankings, labels);
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (pred_count[c] > 0) {
      report.precision[c] = static_cast<double>(hit_count[c]) / static_cast<double>(pred_count[c]);
    }
    if (true_count[c] > 0) {
      report.recall[c] = static_cast<double>(hit_count[c]) / static_cast<double>(true_count[c]);
    }
  }
  return report;
}

namespace {

std::vector<const Sample*> gather(const std::vector<Sample>& dataset,
                                  const std::vector<std::size_t>& indices) {
  std::vector<const Sample*> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(&dataset[i]);
  return out;
}

}  // namespace

TrainResult train_model(const std::vector<Sample>& dataset, const ModelConfig& model_config,
                        const TrainConfig& train_config, const ModelParams* initial) {
  model_config.validate();
  train_config.validate();
  if (dataset.size() < 2) throw ConfigError("train_model: need at least 2 samples");
  std::set<int> seen;
  for (const Sample& s : dataset) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= model_config.classes) {
      throw ConfigError("train_model: sample label outside [0, classes)");
    }
    seen.insert(s.label);
  }
  if (seen.size() < 2) throw ConfigError("train_model: dataset has a single class");

  Rng init_rng(mix_seed(train_config.seed, 1));
  Rng split_rng(mix_seed(train_config.seed, 2));
  Rng order_rng(mix_seed(train_config.seed, 3));
  Rng dropout_rng(mix_seed(train_config.seed, 4));

  ModelParams params = initial ? *initial : ModelParams::init(model_config, init_rng);
  SplitIndices split = stratified_split(dataset, train_config.validation_fraction, split_rng);
  const bool val_is_train = split.val.empty();
  std::vector<const Sample*> val_ptrs = gather(dataset, val_is_train ? split.train : split.val);

  ModelParams grads = ModelParams::zeros(model_config);
  AdamState state = AdamState::zeros(model_config);

  TrainResult result;
  result.params = params;
  result.val_is_train = val_is_train;
  double best_map3 = -1.0;

  std::vector<std::size_t> order = split.train;
  std::vector<const Sample*> batch;
  for (std::size_t epoch = 1; epoch <= train_config.epochs; ++epoch) {
    if (train_config.shuffle) shuffle(order, order_rng);
    double loss_sum = 0.0;
    for (std::size_t offset = 0; offset < order.size(); offset += train_config.batch_size) {
      const std::size_t end = std::min(order.size(), offset + train_config.batch_size);
      batch.clear();
      for (std::size_t i = offset; i < end; ++i) batch.push_back(&dataset[order[i]]);
      grads.fill(0.0);
      const double loss = batch_gradients(batch, params, RunMode::kTrain, &dropout_rng, grads);
      loss_sum += loss * static_cast<double>(batch.size());
      apply_update(params, grads, train_config, state);
    }
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(order.size());
    MetricsReport val = evaluate_model(params, val_ptrs);
    record.val_loss = val.loss;
    record.val_accuracy = val.accuracy;
    record.val_map3 = val.map_at_3;
    result.history.push_back(record);
    if (val.map_at_3 > best_map3) {
      best_map3 = val.map_at_3;
      result.params = params;
      result.best_epoch = epoch;
      result.best_val = std::move(val);
    }
  }
  return result;
}

TrainResult baseline_nonseq_train(const std::vector<Sample>& dataset, ModelConfig model_config,
                                  const TrainConfig& train_config, const ModelParams* initial) {
  model_config.sequence_branch = false;
  return train_model(dataset, model_config, train_config, initial);
}

void write_metrics_jsonl(const std::string& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write metrics file: " + path);
  for (const EpochRecord& r : history) {
    nlohmann::json row{{"epoch", r.epoch},
                       {"train_loss", r.train_loss},
                       {"val_loss", r.val_loss},
                       {"val_accuracy", r.val_accuracy},
                       {"val_map3", r.val_map3}};
    out << row.dump() << "\n";
  }
  if (!out) throw ConfigError("failed writing metrics file: " + path);
}

std::string format_metrics_table(const TrainResult& result) {
  std::string text = "epoch  train_loss  val_loss  val_acc  val_map3\n";
  char line[128];
  for (const EpochRecord& r : result.history) {
    std::snprintf(line, sizeof(line), "%5zu  %10.4f  %8.4f  %7.4f  %8.4f%s\n", r.epoch,
                  r.train_loss, r.val_loss, r.val_accuracy, r.val_map3,
                  r.epoch == result.best_epoch ? "  *best" : "");
    text += line;
  }
  if (result.val_is_train) {
    text += "note: validation split was empty; metrics computed on training rows\n";
  }
  return text;
}

}  // namespace callseq
