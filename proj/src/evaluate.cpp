#include "xcnn/evaluate.hpp"

#include "xcnn/ops.hpp"

namespace xcnn {

template <typename T>
std::vector<std::vector<double>> predict_probabilities(Model<T>& model, const BatchSource<T>& data,
                                                       std::span<const std::size_t> indices,
                                                       std::size_t batch_size) {
  if (indices.empty()) throw InvalidArgument("cannot evaluate an empty split");
  if (batch_size == 0) throw InvalidArgument("batch_size must be >= 1");
  const Mode previous = model.mode();
  model.set_mode(Mode::kEval);
  NoGradGuard no_grad;
  std::vector<std::vector<double>> out;
  out.reserve(indices.size());
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto batch = indices.subspan(start, std::min(batch_size, indices.size() - start));
    const Tensor<T> probs = softmax(model.forward(data.inputs(batch, false, 0)));
    const std::size_t k = probs.extent(1);
    const auto values = probs.data();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      out.emplace_back(values.begin() + static_cast<std::ptrdiff_t>(i * k),
                       values.begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
    }
  }
  model.set_mode(previous);
  return out;
}

template <typename T>
MetricsReport evaluate(Model<T>& model, const BatchSource<T>& data,
                       std::span<const std::size_t> indices, std::vector<std::string> class_names,
                       std::size_t batch_size) {
  const auto probs = predict_probabilities(model, data, indices, batch_size);
  std::vector<std::size_t> truth;
  truth.reserve(indices.size());
  for (std::size_t i : indices) truth.push_back(data.label(i));
  return build_report(truth, probs, std::move(class_names));
}

template std::vector<std::vector<double>> predict_probabilities(Model<float>&, const BatchSource<float>&,
                                                                std::span<const std::size_t>, std::size_t);
template std::vector<std::vector<double>> predict_probabilities(Model<double>&, const BatchSource<double>&,
                                                                std::span<const std::size_t>, std::size_t);
template MetricsReport evaluate(Model<float>&, const BatchSource<float>&, std::span<const std::size_t>,
                                std::vector<std::string>, std::size_t);
template MetricsReport evaluate(Model<double>&, const BatchSource<double>&, std::span<const std::size_t>,
                                std::vector<std::string>, std::size_t);

}  // namespace xcnn
