#include "xcnn/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace xcnn {

namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
}

void put_f32(std::string& out, float value) { put_le(out, std::bit_cast<std::uint32_t>(value)); }

void put_text(std::string& out, const std::string& text) {
  put_le(out, static_cast<std::uint32_t>(text.size()));
  out += text;
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw IntegrityError(std::string("checkpoint truncated while reading ") + what);
    }
    auto view = bytes_.substr(pos_, n);
    pos_ += n;
    return view;
  }

  template <typename U>
  U le(const char* what) {
    auto raw = take(sizeof(U), what);
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(static_cast<unsigned char>(raw[i])) << (8 * i);
    }
    return value;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string encode_metadata(const Model<float>& model, const CheckpointMetadata& meta) {
  std::string out = "epoch=" + std::to_string(meta.epoch) + "\n";
  out += "val_loss=" + format_double(meta.val_loss) + "\n";
  std::string frozen;
  for (std::size_t i = 0; i < model.spec().layers.size(); ++i) {
    if (model.layer_frozen(i)) frozen += (frozen.empty() ? "" : ",") + std::to_string(i);
  }
  if (!frozen.empty()) out += "frozen=" + frozen + "\n";
  if (!meta.class_names.empty()) {
    out += "classes=";
    for (std::size_t i = 0; i < meta.class_names.size(); ++i) {
      out += (i ? "," : "") + meta.class_names[i];
    }
    out += "\n";
  }
  return out;
}

void decode_metadata(std::string_view text, CheckpointMetadata& meta, Model<float>& model) {
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("malformed checkpoint metadata line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    const char* first = value.data();
    const char* last = value.data() + value.size();
    if (key == "epoch") {
      if (std::from_chars(first, last, meta.epoch).ptr != last) throw FormatError("bad epoch metadata");
    } else if (key == "val_loss") {
      if (std::from_chars(first, last, meta.val_loss).ptr != last) {
        throw FormatError("bad val_loss metadata");
      }
    } else if (key == "frozen") {
      std::istringstream items(value);
      std::string item;
      while (std::getline(items, item, ',')) {
        std::size_t layer = 0;
        if (std::from_chars(item.data(), item.data() + item.size(), layer).ptr !=
                item.data() + item.size() ||
            layer >= model.spec().layers.size()) {
          throw FormatError("bad frozen layer index '" + item + "'");
        }
        model.freeze_layers(layer, layer + 1);
      }
    } else if (key == "classes") {
      std::istringstream items(value);
      std::string item;
      while (std::getline(items, item, ',')) meta.class_names.push_back(item);
      if (meta.class_names.size() != model.spec().classes) {
        throw FormatError("class name count differs from the architecture");
      }
    }
    // Unknown keys are ignored so newer writers stay readable.
  }
}

}  // namespace

std::string encode_checkpoint(const Model<float>& model, const CheckpointMetadata& metadata) {
  std::string out(kCheckpointMagic);
  put_le(out, kCheckpointVersion);
  put_text(out, to_descriptor(model.spec()));
  put_text(out, encode_metadata(model, metadata));
  std::uint64_t n_params = 0;
  for (const auto& p : model.parameters()) n_params += p.tensor.numel();
  out.reserve(out.size() + 16 + 4 * n_params);
  put_le(out, n_params);
  for (const auto& p : model.parameters()) {
    for (float v : p.tensor.data()) put_f32(out, v);
  }
  std::uint64_t n_buffers = 0;
  for (const auto& b : model.buffers()) n_buffers += b.values.size();
  put_le(out, n_buffers);
  for (const auto& b : model.buffers()) {
    for (float v : b.values) put_f32(out, v);
  }
  return out;
}

LoadedCheckpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (bytes.size() < kCheckpointMagic.size() || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw FormatError("not a checkpoint file (bad magic)");
  }
  r.take(kCheckpointMagic.size(), "magic");
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto desc_len = r.le<std::uint32_t>("descriptor length");
  const std::string_view descriptor = r.take(desc_len, "descriptor");
  const auto meta_len = r.le<std::uint32_t>("metadata length");
  const std::string_view meta_text = r.take(meta_len, "metadata");

  ArchitectureSpec spec = parse_descriptor(descriptor);
  const ParameterAudit audit = audit_parameters(spec);

  const auto n_params = r.le<std::uint64_t>("parameter count");
  if (n_params != audit.all) {
    throw IntegrityError("checkpoint stores " + std::to_string(n_params) +
                         " parameter values, descriptor requires " + std::to_string(audit.all));
  }
  if (r.remaining() / 4 < n_params) throw IntegrityError("checkpoint truncated in parameter blob");
  const std::string_view param_blob = r.take(4 * n_params, "parameters");
  const auto n_buffers = r.le<std::uint64_t>("buffer count");
  if (r.remaining() < 4 * n_buffers) {
    throw IntegrityError("checkpoint truncated in buffer blob: " + std::to_string(r.remaining()) +
                         " bytes, expected " + std::to_string(4 * n_buffers));
  }
  if (r.remaining() > 4 * n_buffers) {
    throw IntegrityError("checkpoint has " + std::to_string(r.remaining() - 4 * n_buffers) +
                         " trailing bytes");
  }
  const std::string_view buffer_blob = r.take(4 * n_buffers, "buffers");

  Model<float> model(spec, 0);
  std::size_t expected_buffers = 0;
  for (const auto& b : model.buffers()) expected_buffers += b.values.size();
  if (n_buffers != expected_buffers) {
    throw IntegrityError("checkpoint stores " + std::to_string(n_buffers) +
                         " buffer values, descriptor requires " + std::to_string(expected_buffers));
  }
  auto read_f32 = [](std::string_view blob, std::size_t i) {
    std::uint32_t bits = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[4 * i + k])) << (8 * k);
    }
    return std::bit_cast<float>(bits);
  };
  std::size_t at = 0;
  for (auto& p : model.parameters()) {
    auto dst = p.tensor.mutable_data();
    for (auto& v : dst) v = read_f32(param_blob, at++);
  }
  at = 0;
  for (auto& b : model.buffers()) {
    for (auto& v : b.values) v = read_f32(buffer_blob, at++);
  }

  LoadedCheckpoint loaded{std::move(model), {}, n_params, n_buffers};
  decode_metadata(meta_text, loaded.metadata, loaded.model);
  return loaded;
}

void save_checkpoint(const Model<float>& model, const CheckpointMetadata& metadata,
                     const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(model, metadata);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

}  // namespace xcnn
