#include "xcnn/shap.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include "xcnn/dataset.hpp"
#include "xcnn/error.hpp"
#include "xcnn/ops.hpp"

namespace xcnn {

std::vector<std::size_t> Segmentation::pixel_counts() const {
  std::vector<std::size_t> counts(segments, 0);
  for (auto l : labels) ++counts.at(l);
  return counts;
}

Segmentation grid_segment(std::size_t height, std::size_t width, std::size_t grid) {
  if (grid == 0 || height == 0 || width == 0 || height % grid != 0 || width % grid != 0) {
    throw InvalidArgument("grid " + std::to_string(grid) + " does not divide " +
                          std::to_string(height) + "x" + std::to_string(width));
  }
  Segmentation seg;
  seg.height = height;
  seg.width = width;
  seg.segments = grid * grid;
  seg.labels.resize(height * width);
  const std::size_t ch = height / grid, cw = width / grid;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      seg.labels[y * width + x] = static_cast<std::uint32_t>((y / ch) * grid + x / cw);
    }
  }
  return seg;
}

Segmentation grid_segment(const Image& image, std::size_t grid) {
  return grid_segment(image.height, image.width, grid);
}

namespace {

void check_coalition(const Image& image, const Segmentation& seg, const Coalition& coalition) {
  if (image.height != seg.height || image.width != seg.width) {
    throw ShapeError("segmentation does not match the image extent");
  }
  if (coalition.size() != seg.segments) {
    throw ShapeError("coalition length " + std::to_string(coalition.size()) + " != " +
                     std::to_string(seg.segments) + " segments");
  }
}

}  // namespace

Image apply_coalition(const Image& image, const Segmentation& seg, const Coalition& coalition,
                      const Image& background) {
  check_coalition(image, seg, coalition);
  if (background.channels != image.channels || background.height != image.height ||
      background.width != image.width) {
    throw ShapeError("background shape differs from the image");
  }
  Image out = image;
  const std::size_t plane = image.height * image.width;
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      if (!coalition[seg.labels[i]]) out.pixels[c * plane + i] = background.pixels[c * plane + i];
    }
  }
  return out;
}

Image apply_coalition(const Image& image, const Segmentation& seg, const Coalition& coalition,
                      float background) {
  return apply_coalition(image, seg, coalition,
                         Image(image.channels, image.height, image.width, background));
}

Image mean_background(std::span<const Image> images) {
  if (images.empty()) throw InvalidArgument("mean background needs at least one image");
  const Image& first = images.front();
  std::vector<double> sums(first.channels, 0.0);
  std::size_t count = 0;
  for (const auto& img : images) {
    if (img.channels != first.channels) throw ShapeError("images differ in channel count");
    const std::size_t plane = img.height * img.width;
    for (std::size_t c = 0; c < img.channels; ++c) {
      for (std::size_t i = 0; i < plane; ++i) sums[c] += img.pixels[c * plane + i];
    }
    count += plane;
  }
  Image out(first.channels, first.height, first.width);
  const std::size_t plane = first.height * first.width;
  for (std::size_t c = 0; c < first.channels; ++c) {
    std::fill_n(out.pixels.begin() + static_cast<std::ptrdiff_t>(c * plane), plane,
                static_cast<float>(sums[c] / static_cast<double>(count)));
  }
  return out;
}

namespace {

double binomial(std::size_t n, std::size_t k) {
  k = std::min(k, n - k);
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return std::round(r);
}

}  // namespace

std::optional<double> shapley_kernel_weight(std::size_t m, std::size_t s) {
  if (s > m) throw InvalidArgument("coalition size exceeds player count");
  if (s == 0 || s == m) return std::nullopt;
  return static_cast<double>(m - 1) /
         (binomial(m, s) * static_cast<double>(s) * static_cast<double>(m - s));
}

std::vector<double> exact_shapley(const ValueFunction& v, std::size_t m) {
  if (m == 0) throw InvalidArgument("need at least one player");
  if (m > kMaxExactPlayers) {
    throw BudgetError("exact Shapley enumeration is limited to " +
                      std::to_string(kMaxExactPlayers) + " players, got " + std::to_string(m));
  }
  const std::size_t n = std::size_t{1} << m;
  std::vector<double> values(n);
  Coalition z(m);
  for (std::size_t mask = 0; mask < n; ++mask) {
    for (std::size_t i = 0; i < m; ++i) z[i] = (mask >> i) & 1U;
    values[mask] = v(z);
  }
  std::vector<double> fact(m + 1, 1.0);
  for (std::size_t i = 1; i <= m; ++i) fact[i] = fact[i - 1] * static_cast<double>(i);
  std::vector<double> phi(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t bit = std::size_t{1} << i;
    for (std::size_t mask = 0; mask < n; ++mask) {
      if (mask & bit) continue;
      const auto s = static_cast<std::size_t>(std::popcount(mask));
      const double w = fact[s] * fact[m - s - 1] / fact[m];
      phi[i] += w * (values[mask | bit] - values[mask]);
    }
  }
  return phi;
}

const char* shap_mode_name(ShapMode mode) {
  return mode == ShapMode::kExhaustive ? "exhaustive" : "sampled";
}

namespace {

struct Design {
  std::vector<Coalition> rows;
  std::vector<double> weights;
  std::unordered_map<std::string, std::size_t> index;

  // Returns true when the coalition was new.
  bool add(const Coalition& z, double w) {
    std::string key(z.begin(), z.end());
    auto [it, inserted] = index.emplace(std::move(key), rows.size());
    if (inserted) {
      rows.push_back(z);
      weights.push_back(w);
    } else {
      weights[it->second] += w;
    }
    return inserted;
  }
};

Coalition complement(const Coalition& z) {
  Coalition c(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) c[i] = z[i] ? 0 : 1;
  return c;
}

template <typename Fn>
void for_each_subset(std::size_t m, std::size_t s, Fn&& fn) {
  std::vector<std::size_t> idx(s);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Coalition z(m);
  while (true) {
    std::fill(z.begin(), z.end(), 0);
    for (std::size_t i : idx) z[i] = 1;
    fn(z);
    std::size_t k = s;
    while (k > 0 && idx[k - 1] == m - s + k - 1) --k;
    if (k == 0) return;
    ++idx[k - 1];
    for (std::size_t j = k; j < s; ++j) idx[j] = idx[j - 1] + 1;
  }
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Design exhaustive_design(std::size_t m) {
  Design d;
  const std::size_t n = std::size_t{1} << m;
  Coalition z(m);
  for (std::size_t mask = 1; mask + 1 < n; ++mask) {
    for (std::size_t i = 0; i < m; ++i) z[i] = (mask >> i) & 1U;
    d.rows.push_back(z);
    d.weights.push_back(*shapley_kernel_weight(m, static_cast<std::size_t>(std::popcount(mask))));
  }
  return d;
}

Design sampled_design(std::size_t m, std::size_t budget, std::uint64_t seed) {
  Design d;
  const std::size_t n_sizes = m / 2;            // sizes 1..ceil((m-1)/2)
  const std::size_t n_paired = (m - 1) / 2;     // sizes whose complement differs
  std::vector<double> wv(n_sizes + 1, 0.0);
  double total = 0.0;
  for (std::size_t s = 1; s <= n_sizes; ++s) {
    wv[s] = static_cast<double>(m - 1) / (static_cast<double>(s) * static_cast<double>(m - s));
    if (s <= n_paired) wv[s] *= 2.0;
    total += wv[s];
  }
  for (auto& w : wv) w /= total;

  std::vector<double> remaining = wv;
  double left = static_cast<double>(budget - 2);
  std::size_t full_sizes = 0;
  for (std::size_t s = 1; s <= n_sizes; ++s) {
    const bool paired = s <= n_paired;
    const double n_subsets = binomial(m, s) * (paired ? 2.0 : 1.0);
    if (left * remaining[s] / n_subsets < 1.0 - 1e-8) break;
    ++full_sizes;
    left -= n_subsets;
    if (remaining[s] < 1.0) {
      for (std::size_t t = s + 1; t <= n_sizes; ++t) remaining[t] /= 1.0 - remaining[s];
    }
    const double w = wv[s] / n_subsets;
    for_each_subset(m, s, [&](const Coalition& z) {
      d.add(z, w);
      if (paired) d.add(complement(z), w);
    });
  }

  auto samples_left = static_cast<std::size_t>(std::max(0.0, left));
  if (full_sizes == n_sizes || samples_left == 0) return d;

  double weight_left = 0.0, mass = 0.0;
  for (std::size_t s = full_sizes + 1; s <= n_sizes; ++s) {
    weight_left += wv[s];
    mass += remaining[s];
  }
  std::mt19937_64 rng(seed);
  const std::size_t first_sampled = d.rows.size();
  std::vector<std::size_t> perm(m);
  std::size_t attempts = 0;
  const std::size_t max_attempts = 4 * samples_left + 100;
  while (samples_left > 0 && attempts++ < max_attempts) {
    double u = uniform01(rng) * mass;
    std::size_t s = full_sizes + 1;
    for (; s < n_sizes; ++s) {
      if (u < remaining[s]) break;
      u -= remaining[s];
    }
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Coalition z(m, 0);
    for (std::size_t i = 0; i < s; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng() % (m - i));
      std::swap(perm[i], perm[j]);
      z[perm[i]] = 1;
    }
    if (d.add(z, 1.0)) --samples_left;
    if (samples_left > 0 && s <= n_paired) {
      if (d.add(complement(z), 1.0)) --samples_left;
    }
  }
  double sampled_total = 0.0;
  for (std::size_t r = first_sampled; r < d.rows.size(); ++r) sampled_total += d.weights[r];
  for (std::size_t r = first_sampled; r < d.rows.size(); ++r) {
    d.weights[r] *= weight_left / sampled_total;
  }
  return d;
}

bool solve_ok(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& x) {
  if (!x.allFinite()) return false;
  const double scale = std::max(b.norm(), a.norm() * x.norm());
  return (a * x - b).norm() <= 1e-8 * scale + 1e-300;
}

}  // namespace

ShapResult kernel_shap(const BatchValueFunction& v, std::size_t m, const ShapOptions& options) {
  if (m == 0) throw InvalidArgument("need at least one segment");
  ShapResult result;
  const bool exhaustive = m < 63 && (std::uint64_t{1} << m) <= options.budget;
  if (!exhaustive && options.budget < m + 2) {
    throw BudgetError("sampling budget " + std::to_string(options.budget) + " is below M + 2 = " +
                      std::to_string(m + 2));
  }
  result.mode = exhaustive ? ShapMode::kExhaustive : ShapMode::kSampled;
  Design design = exhaustive ? exhaustive_design(m) : sampled_design(m, options.budget, options.seed);

  std::vector<Coalition> queries;
  queries.reserve(design.rows.size() + 2);
  queries.emplace_back(m, 0);
  queries.emplace_back(m, 1);
  queries.insert(queries.end(), design.rows.begin(), design.rows.end());
  const std::vector<double> values = v(queries);
  if (values.size() != queries.size()) throw ContractViolation("value function returned wrong count");
  result.evaluations = queries.size();
  result.base_value = values[0];
  result.full_value = values[1];
  const double delta = result.full_value - result.base_value;

  result.phi.assign(m, 0.0);
  if (m == 1) {
    result.phi[0] = delta;
    return result;
  }
  const std::size_t p = m - 1;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  Eigen::VectorXd x(static_cast<Eigen::Index>(p));
  for (std::size_t r = 0; r < design.rows.size(); ++r) {
    const auto& z = design.rows[r];
    const double w = design.weights[r];
    const double last = z[p];
    for (std::size_t i = 0; i < p; ++i) x[static_cast<Eigen::Index>(i)] = z[i] - last;
    const double y = values[r + 2] - result.base_value - last * delta;
    a.noalias() += w * x * x.transpose();
    b.noalias() += (w * y) * x;
  }

  Eigen::VectorXd sol = a.ldlt().solve(b);
  if (!solve_ok(a, b, sol)) {
    const double ridge = 1e-8 * std::max(a.trace() / static_cast<double>(p), 1e-300);
    const Eigen::MatrixXd reg =
        a + ridge * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    sol = reg.ldlt().solve(b);
    if (!solve_ok(reg, b, sol)) throw SolverError("kernel SHAP normal equations are singular");
  }
  double partial = 0.0;
  for (std::size_t i = 0; i < p; ++i) {
    result.phi[i] = sol[static_cast<Eigen::Index>(i)];
    partial += result.phi[i];
  }
  result.phi[p] = delta - partial;
  return result;
}

ShapResult kernel_shap(const ValueFunction& v, std::size_t m, const ShapOptions& options) {
  return kernel_shap(
      BatchValueFunction([&v](std::span<const Coalition> zs) {
        std::vector<double> out;
        out.reserve(zs.size());
        for (const auto& z : zs) out.push_back(v(z));
        return out;
      }),
      m, options);
}

double AttributionMap::phi_sum() const {
  double s = 0.0;
  for (double p : phi) s += p;
  return s;
}

namespace {

template <typename T>
std::vector<std::vector<double>> batch_probabilities(Model<T>& model, std::span<const Image> images) {
  const Image& first = images.front();
  const std::size_t per = 3 * first.height * first.width;
  std::vector<T> data(images.size() * per);
  for (std::size_t i = 0; i < images.size(); ++i) {
    normalize_into(images[i], std::span<T>(data.data() + i * per, per));
  }
  const Tensor<T> probs =
      softmax(model.forward(Tensor<T>({images.size(), 3, first.height, first.width}, std::move(data))));
  const std::size_t k = probs.extent(1);
  std::vector<std::vector<double>> out(images.size(), std::vector<double>(k));
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (std::size_t c = 0; c < k; ++c) out[i][c] = static_cast<double>(probs.data()[i * k + c]);
  }
  return out;
}

}  // namespace

template <typename T>
std::vector<double> class_probabilities(Model<T>& model, const Image& image) {
  const Mode previous = model.mode();
  model.set_mode(Mode::kEval);
  NoGradGuard no_grad;
  const Image rgb = to_rgb(image);
  auto probs = batch_probabilities(model, std::span<const Image>(&rgb, 1));
  model.set_mode(previous);
  return probs.front();
}

template <typename T>
AttributionMap explain_image(Model<T>& model, const Image& image, const Segmentation& seg,
                             const Image& background, std::size_t target_class,
                             const ShapOptions& options, std::size_t batch_size) {
  if (batch_size == 0) throw InvalidArgument("batch_size must be >= 1");
  if (target_class >= model.spec().classes) {
    throw InvalidArgument("target class " + std::to_string(target_class) + " out of range");
  }
  const Image rgb = to_rgb(image);
  const Image bg = to_rgb(background);
  const Mode previous = model.mode();
  model.set_mode(Mode::kEval);
  NoGradGuard no_grad;
  BatchValueFunction v = [&](std::span<const Coalition> zs) {
    std::vector<double> out;
    out.reserve(zs.size());
    std::vector<Image> chunk;
    for (std::size_t start = 0; start < zs.size(); start += batch_size) {
      chunk.clear();
      const std::size_t end = std::min(zs.size(), start + batch_size);
      for (std::size_t i = start; i < end; ++i) chunk.push_back(apply_coalition(rgb, seg, zs[i], bg));
      for (const auto& row : batch_probabilities(model, std::span<const Image>(chunk))) {
        out.push_back(row[target_class]);
      }
    }
    return out;
  };
  ShapResult r = kernel_shap(v, seg.segments, options);
  model.set_mode(previous);

  AttributionMap map;
  map.phi = std::move(r.phi);
  map.base_value = r.base_value;
  map.full_value = r.full_value;
  map.target_class = target_class;
  map.mode = r.mode;
  map.budget = options.budget;
  map.seed = options.seed;
  map.segmentation = seg;
  return map;
}

namespace {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(std::string_view s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw FormatError("sidecar: bad number '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

std::string sidecar_text(const AttributionMap& map) {
  std::string out;
  out += "target_class " + std::to_string(map.target_class) + "\n";
  if (!map.target_name.empty()) out += "target_name " + map.target_name + "\n";
  out += std::string("target_source ") + (map.target_predicted ? "predicted" : "requested") + "\n";
  out += "base_value " + g17(map.base_value) + "\n";
  out += "full_value " + g17(map.full_value) + "\n";
  out += std::string("mode ") + shap_mode_name(map.mode) + "\n";
  out += "segments " + std::to_string(map.phi.size()) + "\n";
  if (map.grid) out += "grid " + std::to_string(map.grid) + "\n";
  if (!map.background.empty()) out += "background " + map.background + "\n";
  out += "budget " + std::to_string(map.budget) + "\n";
  out += "seed " + std::to_string(map.seed) + "\n";
  out += "phi_sum " + g17(map.phi_sum()) + "\n";
  for (std::size_t i = 0; i < map.phi.size(); ++i) {
    out += "phi " + std::to_string(i) + " " + g17(map.phi[i]) + "\n";
  }
  return out;
}

Sidecar parse_sidecar(std::string_view text) {
  Sidecar sc;
  bool have_target = false, have_base = false, have_full = false, have_sum = false;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string key;
    fields >> key;
    if (key == "phi") {
      std::size_t idx = 0;
      std::string value;
      if (!(fields >> idx >> value) || idx != sc.phi.size()) throw FormatError("sidecar: bad phi line");
      sc.phi.push_back(parse_double(value));
      continue;
    }
    std::string value;
    fields >> value;
    if (key == "target_class") {
      sc.target_class = static_cast<std::size_t>(parse_double(value));
      have_target = true;
    } else if (key == "base_value") {
      sc.base_value = parse_double(value);
      have_base = true;
    } else if (key == "full_value") {
      sc.full_value = parse_double(value);
      have_full = true;
    } else if (key == "phi_sum") {
      sc.phi_sum = parse_double(value);
      have_sum = true;
    }
  }
  if (!have_target || !have_base || !have_full || !have_sum || sc.phi.empty()) {
    throw FormatError("sidecar is missing required fields");
  }
  return sc;
}

template std::vector<double> class_probabilities(Model<float>&, const Image&);
template std::vector<double> class_probabilities(Model<double>&, const Image&);
template AttributionMap explain_image(Model<float>&, const Image&, const Segmentation&, const Image&,
                                      std::size_t, const ShapOptions&, std::size_t);
template AttributionMap explain_image(Model<double>&, const Image&, const Segmentation&, const Image&,
                                      std::size_t, const ShapOptions&, std::size_t);

}  // namespace xcnn
