#include "xcnn/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "xcnn/loss.hpp"

namespace xcnn {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be > 0");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (max_epochs < 1) throw InvalidArgument("max_epochs must be >= 1");
  if (patience < 1) throw InvalidArgument("patience must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidArgument("Adam betas must be in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw InvalidArgument("Adam epsilon must be > 0");
}

EarlyStopping::EarlyStopping(std::size_t patience) : patience_(patience) {
  if (patience < 1) throw InvalidArgument("patience must be >= 1");
}

bool EarlyStopping::update(std::size_t epoch, double val_loss) {
  if (val_loss < best_loss_) {
    best_loss_ = val_loss;
    best_epoch_ = epoch;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

template <typename T>
ImageBatchSource<T>::ImageBatchSource(const LabeledDataset& dataset,
                                      std::optional<AugmentationPolicy> policy)
    : dataset_(dataset), policy_(std::move(policy)) {
  if (policy_) policy_->validate();
}

template <typename T>
Tensor<T> ImageBatchSource<T>::inputs(std::span<const std::size_t> indices, bool augment,
                                      std::uint64_t seed) const {
  if (indices.empty()) throw InvalidArgument("empty batch");
  const Image& first = dataset_.samples.at(indices[0]).image;
  const std::size_t per = 3 * first.height * first.width;
  std::vector<T> data(indices.size() * per);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Sample& s = dataset_.samples.at(indices[b]);
    if (s.image.height != first.height || s.image.width != first.width) {
      throw ShapeError("batch mixes image sizes");
    }
    std::span<T> dst(data.data() + b * per, per);
    if (augment && policy_ && !policy_->is_identity()) {
      normalize_into(xcnn::augment(s.image, *policy_, mix_seed(seed, indices[b])), dst);
    } else {
      normalize_into(s.image, dst);
    }
  }
  return Tensor<T>({indices.size(), 3, first.height, first.width}, std::move(data));
}

template <typename T>
FeatureBatchSource<T>::FeatureBatchSource(std::vector<std::vector<double>> features,
                                          std::vector<std::size_t> labels, std::size_t num_classes)
    : features_(std::move(features)), labels_(std::move(labels)), num_classes_(num_classes) {
  if (features_.size() != labels_.size()) throw InvalidArgument("features and labels differ in length");
  for (const auto& row : features_) {
    if (row.empty() || row.size() != features_.front().size()) {
      throw ShapeError("feature rows must share one non-zero width");
    }
  }
  for (std::size_t l : labels_) {
    if (l >= num_classes_) throw InvalidArgument("feature label out of range");
  }
}

template <typename T>
Tensor<T> FeatureBatchSource<T>::inputs(std::span<const std::size_t> indices, bool,
                                        std::uint64_t) const {
  if (indices.empty()) throw InvalidArgument("empty batch");
  const std::size_t f = features_.front().size();
  std::vector<T> data;
  data.reserve(indices.size() * f);
  for (std::size_t i : indices) {
    for (double v : features_.at(i)) data.push_back(static_cast<T>(v));
  }
  return Tensor<T>({indices.size(), f}, std::move(data));
}

namespace {

template <typename T>
std::vector<std::size_t> batch_labels(const BatchSource<T>& data, std::span<const std::size_t> idx) {
  std::vector<std::size_t> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(data.label(i));
  return out;
}

}  // namespace

template <typename T>
EpochScore score_split(Model<T>& model, const BatchSource<T>& data,
                       std::span<const std::size_t> indices, std::span<const double> weights,
                       std::size_t batch_size) {
  if (indices.empty()) throw InvalidArgument("cannot score an empty split");
  const Mode previous = model.mode();
  model.set_mode(Mode::kEval);
  NoGradGuard no_grad;
  double weighted = 0.0, weight_total = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto batch = indices.subspan(start, std::min(batch_size, indices.size() - start));
    const auto labels = batch_labels(data, batch);
    const Tensor<T> logits = model.forward(data.inputs(batch, false, 0));
    const double loss = weighted_cross_entropy(logits, labels, weights).item();
    double bw = 0.0;
    for (std::size_t l : labels) bw += weights[l];
    weighted += loss * bw;
    weight_total += bw;
    const auto pred = argmax_rows(logits);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  }
  model.set_mode(previous);
  return {weighted / weight_total, static_cast<double>(correct) / static_cast<double>(indices.size())};
}

template <typename T>
void recalibrate_batchnorm(Model<T>& model, const BatchSource<T>& data,
                           std::span<const std::size_t> indices, std::size_t batch_size) {
  const auto& layers = model.spec().layers;
  // Per batchnorm layer: per-channel sums of x and x^2 and the element count.
  struct Moments {
    std::vector<double> sum, sum_sq;
    double count = 0.0;
  };
  std::vector<Moments> moments(layers.size());
  bool any = false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind != LayerKind::kBatchNorm2d) continue;
    moments[i].sum.assign(layers[i].in, 0.0);
    moments[i].sum_sq.assign(layers[i].in, 0.0);
    any = true;
  }
  if (!any || indices.empty()) return;

  auto accumulate = [&](std::size_t layer, const Tensor<T>& x) {
    Moments& m = moments[layer];
    const std::size_t n = x.extent(0), c = x.extent(1), plane = x.numel() / (n * c);
    const auto xd = x.data();
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* p = xd.data() + (s * c + ch) * plane;
        double a = 0.0, b = 0.0;
        for (std::size_t k = 0; k < plane; ++k) {
          a += p[k];
          b += static_cast<double>(p[k]) * p[k];
        }
        m.sum[ch] += a;
        m.sum_sq[ch] += b;
      }
    }
    m.count += static_cast<double>(n * plane);
  };

  const Mode previous = model.mode();
  model.set_mode(Mode::kTrain);
  NoGradGuard no_grad;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto batch = indices.subspan(start, std::min(batch_size, indices.size() - start));
    const Tensor<T> x = data.inputs(batch, false, 0);
    if (layers[0].kind == LayerKind::kBatchNorm2d) accumulate(0, x);
    model.forward(x, 0, [&](std::size_t layer, const Tensor<T>& out) {
      if (layer + 1 < layers.size() && layers[layer + 1].kind == LayerKind::kBatchNorm2d) {
        accumulate(layer + 1, out);
      }
    });
  }
  model.set_mode(previous);

  for (auto& b : model.buffers()) {
    const Moments& m = moments[b.layer];
    if (m.count < 2.0) continue;
    const bool is_mean = b.name.ends_with("running_mean");
    for (std::size_t ch = 0; ch < b.values.size(); ++ch) {
      const double mean = m.sum[ch] / m.count;
      const double var = std::max(0.0, (m.sum_sq[ch] - m.count * mean * mean) / (m.count - 1.0));
      b.values[ch] = static_cast<T>(is_mean ? mean : var);
    }
  }
}

template <typename T>
TrainRun<T> train(Model<T>& model, const BatchSource<T>& data,
                  std::span<const std::size_t> train_indices,
                  std::span<const std::size_t> val_indices, std::span<const double> class_weights,
                  const TrainConfig& config, const TrainHooks<T>& hooks) {
  config.validate();
  if (train_indices.empty()) throw InvalidArgument("train split is empty");
  if (val_indices.empty() && !hooks.validate) throw InvalidArgument("validation split is empty");
  if (class_weights.size() != data.num_classes()) {
    throw InvalidArgument("class weight count does not match the number of classes");
  }

  TrainRun<T> run;
  EarlyStopping stopper(config.patience);
  std::vector<std::string> names;
  std::vector<Tensor<T>> params;
  for (const auto& p : model.parameters()) {
    if (p.tensor.requires_grad()) {
      names.push_back(p.name);
      params.push_back(p.tensor);
    }
  }
  AdamState<T> adam;
  const AdamConfig adam_config = config.adam();
  std::vector<std::size_t> order(train_indices.begin(), train_indices.end());

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    model.set_mode(Mode::kTrain);
    std::mt19937_64 rng(mix_seed(config.seed, epoch, 0x5f1));
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[static_cast<std::size_t>(rng() % (i + 1))]);
    }

    double weighted = 0.0, weight_total = 0.0;
    std::size_t correct = 0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_no) {
      const std::span<const std::size_t> batch(order.data() + start,
                                               std::min(config.batch_size, order.size() - start));
      const auto labels = batch_labels(data, batch);
      const std::uint64_t batch_seed = mix_seed(config.seed, epoch, batch_no);
      const Tensor<T> x = data.inputs(batch, true, batch_seed);
      model.zero_grad();
      const Tensor<T> logits = model.forward(x, batch_seed);
      const Tensor<T> loss = weighted_cross_entropy(logits, labels, class_weights);
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw TrainingAborted("non-finite training loss at epoch " + std::to_string(epoch) +
                                  ", batch " + std::to_string(batch_no),
                              run.records);
      }
      if (loss.requires_grad()) {
        loss.backward();
        adam_step(std::span<Tensor<T>>(params), adam, adam_config, names);
      }
      double bw = 0.0;
      for (std::size_t l : labels) bw += class_weights[l];
      weighted += loss_value * bw;
      weight_total += bw;
      const auto pred = argmax_rows(logits);
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
    }

    if (config.recalibrate_batchnorm) {
      recalibrate_batchnorm(model, data, train_indices, config.batch_size);
    }
    const EpochScore val = hooks.validate
                               ? hooks.validate(model, epoch)
                               : score_split(model, data, val_indices, class_weights, config.batch_size);
    EpochRecord rec{epoch, weighted / weight_total,
                    static_cast<double>(correct) / static_cast<double>(order.size()), val.loss,
                    val.accuracy};
    run.records.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);

    if (stopper.update(epoch, val.loss)) {
      run.best_state = model.state();
      run.best_epoch = epoch;
      run.best_val_loss = val.loss;
    }
    if (stopper.should_stop()) {
      run.stopped_early = epoch < config.max_epochs;
      break;
    }
  }
  if (run.best_epoch == 0) {
    // Validation loss never finite; keep the final weights.
    run.best_state = model.state();
    run.best_epoch = run.records.back().epoch;
    run.best_val_loss = run.records.back().val_loss;
  }
  model.load_state(run.best_state);
  model.set_mode(Mode::kEval);
  return run;
}

std::string curves_csv(std::span<const EpochRecord> records) {
  std::string out = "epoch,train_loss,train_acc,val_loss,val_acc\n";
  char line[160];
  for (const auto& r : records) {
    std::snprintf(line, sizeof(line), "%zu,%.6f,%.6f,%.6f,%.6f\n", r.epoch, r.train_loss,
                  r.train_acc, r.val_loss, r.val_acc);
    out += line;
  }
  return out;
}

template class ImageBatchSource<float>;
template class ImageBatchSource<double>;
template class FeatureBatchSource<float>;
template class FeatureBatchSource<double>;

template EpochScore score_split(Model<float>&, const BatchSource<float>&, std::span<const std::size_t>,
                                std::span<const double>, std::size_t);
template EpochScore score_split(Model<double>&, const BatchSource<double>&,
                                std::span<const std::size_t>, std::span<const double>, std::size_t);
template void recalibrate_batchnorm(Model<float>&, const BatchSource<float>&, std::span<const std::size_t>,
                                    std::size_t);
template void recalibrate_batchnorm(Model<double>&, const BatchSource<double>&, std::span<const std::size_t>,
                                    std::size_t);
template TrainRun<float> train(Model<float>&, const BatchSource<float>&, std::span<const std::size_t>,
                               std::span<const std::size_t>, std::span<const double>,
                               const TrainConfig&, const TrainHooks<float>&);
template TrainRun<double> train(Model<double>&, const BatchSource<double>&,
                                std::span<const std::size_t>, std::span<const std::size_t>,
                                std::span<const double>, const TrainConfig&,
                                const TrainHooks<double>&);

}  // namespace xcnn
