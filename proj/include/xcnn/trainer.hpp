#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xcnn/adam.hpp"
#include "xcnn/augment.hpp"
#include "xcnn/dataset.hpp"
#include "xcnn/model.hpp"

namespace xcnn {

struct TrainConfig {
  double learning_rate = 1e-2;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 50;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  // Re-estimate batchnorm running statistics on the un-augmented train split
  // after every epoch, before validation.
  bool recalibrate_batchnorm = true;

  void validate() const;
  AdamConfig adam() const { return {learning_rate, beta1, beta2, epsilon}; }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

/// Tracks the minimum validation loss; stop once `patience` consecutive
/// epochs pass without a strict improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience);

  /// Returns true when `val_loss` is a new best.
  bool update(std::size_t epoch, double val_loss);
  bool should_stop() const { return since_best_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  std::size_t patience_;
  std::size_t best_epoch_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
  std::size_t since_best_ = 0;
};

/// Supplies model inputs for a list of sample indices.
template <typename T>
class BatchSource {
 public:
  virtual ~BatchSource() = default;
  virtual std::size_t size() const = 0;
  virtual std::size_t num_classes() const = 0;
  virtual std::size_t label(std::size_t index) const = 0;
  /// Batch tensor for `indices`. When `augment` is set, per-sample draws
  /// derive from (seed, sample index) only.
  virtual Tensor<T> inputs(std::span<const std::size_t> indices, bool augment,
                           std::uint64_t seed) const = 0;
};

/// Normalized images; augmentation applies only when requested and a policy is set.
template <typename T>
class ImageBatchSource final : public BatchSource<T> {
 public:
  ImageBatchSource(const LabeledDataset& dataset, std::optional<AugmentationPolicy> policy);

  std::size_t size() const override { return dataset_.samples.size(); }
  std::size_t num_classes() const override { return dataset_.num_classes(); }
  std::size_t label(std::size_t index) const override { return dataset_.samples.at(index).label; }
  Tensor<T> inputs(std::span<const std::size_t> indices, bool augment,
                   std::uint64_t seed) const override;

 private:
  const LabeledDataset& dataset_;
  std::optional<AugmentationPolicy> policy_;
};

/// Precomputed feature vectors (frozen-backbone protocol).
template <typename T>
class FeatureBatchSource final : public BatchSource<T> {
 public:
  FeatureBatchSource(std::vector<std::vector<double>> features, std::vector<std::size_t> labels,
                     std::size_t num_classes);

  std::size_t size() const override { return features_.size(); }
  std::size_t num_classes() const override { return num_classes_; }
  std::size_t label(std::size_t index) const override { return labels_.at(index); }
  Tensor<T> inputs(std::span<const std::size_t> indices, bool augment,
                   std::uint64_t seed) const override;

 private:
  std::vector<std::vector<double>> features_;
  std::vector<std::size_t> labels_;
  std::size_t num_classes_;
};

struct EpochScore {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Eval-mode weighted loss and argmax accuracy over `indices`.
template <typename T>
EpochScore score_split(Model<T>& model, const BatchSource<T>& data,
                       std::span<const std::size_t> indices, std::span<const double> weights,
                       std::size_t batch_size);

/// Replaces every batchnorm layer's running mean and unbiased variance with
/// the exact statistics of its inputs over `indices`, as seen by a no-grad
/// train-mode pass without augmentation. The momentum average lags behind
/// fast-moving weights; eval-mode accuracy suffers from that lag.
template <typename T>
void recalibrate_batchnorm(Model<T>& model, const BatchSource<T>& data,
                           std::span<const std::size_t> indices, std::size_t batch_size);

template <typename T>
struct TrainHooks {
  // Replaces the default validation pass when set.
  std::function<EpochScore(Model<T>&, std::size_t epoch)> validate;
  std::function<void(const EpochRecord&)> on_epoch;
};

template <typename T>
struct TrainRun {
  std::vector<EpochRecord> records;
  ModelState<T> best_state;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
};

/// Raised when the training loss turns non-finite; carries the epochs
/// completed so far and where it happened.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, std::vector<EpochRecord> records)
      : NumericError(what), records_(std::move(records)) {}
  const std::vector<EpochRecord>& records() const { return records_; }

 private:
  std::vector<EpochRecord> records_;
};

/// Per epoch: seeded shuffle of the train indices, batches of
/// config.batch_size (the last may be partial), forward / backward / Adam,
/// optional batchnorm recalibration, then an eval-mode validation pass. The state with minimum validation
/// loss is kept and loaded back into `model` before returning.
template <typename T>
TrainRun<T> train(Model<T>& model, const BatchSource<T>& data,
                  std::span<const std::size_t> train_indices,
                  std::span<const std::size_t> val_indices, std::span<const double> class_weights,
                  const TrainConfig& config, const TrainHooks<T>& hooks = {});

/// `epoch,train_loss,train_acc,val_loss,val_acc` with one row per record.
std::string curves_csv(std::span<const EpochRecord> records);

extern template class ImageBatchSource<float>;
extern template class ImageBatchSource<double>;
extern template class FeatureBatchSource<float>;
extern template class FeatureBatchSource<double>;

}  // namespace xcnn
