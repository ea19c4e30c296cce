#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "callseq/model.hpp"
#include "callseq/rng.hpp"
#include "callseq/sample.hpp"

namespace callseq {

enum class OptimizerKind { kAdam, kSgd };

std::string optimizer_name(OptimizerKind kind);
OptimizerKind optimizer_from_name(const std::string& name);

struct TrainConfig {
  std::size_t batch_size = 128;
  double learning_rate = 3e-4;
  std::size_t epochs = 3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 5.0;  // global gradient norm ceiling; <= 0 disables clipping
  std::uint64_t seed = 0;
  double validation_fraction = 0.10;
  bool shuffle = true;

  void validate() const;
};

struct MetricsReport {
  double loss = 0.0;
  double accuracy = 0.0;
  double map_at_3 = 0.0;
  std::vector<double> precision;  // per class, from argmax predictions
  std::vector<double> recall;
  std::size_t samples = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double val_map3 = 0.0;
};

struct TrainResult {
  ModelParams params;  // snapshot from the best validation map@3 epoch
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 1-based; earliest epoch wins ties
  MetricsReport best_val;
  bool val_is_train = false;  // split produced no validation rows; metrics use train rows
};

// -log(probs[label]); probabilities below 1e-12 are clamped there and reported
// through `clamped` so callers can surface a numeric warning.
double cross_entropy(std::span<const double> probs, int label, bool* clamped = nullptr);

// Mean loss over the batch; gradients of that mean are accumulated into
// `grads`, which must arrive zeroed and shaped like `params`.
double batch_gradients(const std::vector<const Sample*>& batch, const ModelParams& params,
                       RunMode mode, Rng* rng, ModelParams& grads);

struct AdamState {
  ModelParams m;
  ModelParams v;
  std::uint64_t steps = 0;
  static AdamState zeros(const ModelConfig& config);
};

double gradient_norm(ModelParams& grads);
void clip_gradients(ModelParams& grads, double max_norm);

// One optimizer step; clips `grads` in place first when clip_norm > 0.
void apply_update(ModelParams& params, ModelParams& grads, const TrainConfig& config,
                  AdamState& state);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

// Per class: floor(count * fraction) indices go to validation, chosen by the
// rng; both halves come back sorted so the split is seed-stable.
SplitIndices stratified_split(const std::vector<Sample>& dataset, double fraction, Rng& rng);

MetricsReport evaluate_model(const ModelParams& params, const std::vector<const Sample*>& samples);

TrainResult train_model(const std::vector<Sample>& dataset, const ModelConfig& model_config,
                        const TrainConfig& train_config, const ModelParams* initial = nullptr);

// Same loop with the sequence branch ablated: nonsequential tower straight to
// the output layer.
TrainResult baseline_nonseq_train(const std::vector<Sample>& dataset, ModelConfig model_config,
                                  const TrainConfig& train_config,
                                  const ModelParams* initial = nullptr);

void write_metrics_jsonl(const std::string& path, const std::vector<EpochRecord>& history);
std::string format_metrics_table(const TrainResult& result);

}  // namespace callseq
