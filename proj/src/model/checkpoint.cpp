#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "aniformer/errors.hpp"
#include "aniformer/model.hpp"

namespace aniformer {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'A', 'N', 'I', 'F', 'C', 'K', 'P', 'T'};

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void put(std::string& buf, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  buf.append(bytes, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& buf, std::size_t begin, std::size_t end, const std::string& what)
      : buf_(buf), pos_(begin), end_(end), what_(what) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw ValidationError(what_ + ": truncated tensor record");
  }
  const std::string& buf_;
  std::size_t pos_;
  std::size_t end_;
  std::string what_;
};

}  // namespace

void write_tensors(const std::filesystem::path& path, const std::vector<NamedTensor<float>>& tensors) {
  std::string payload;
  for (const auto& [name, value] : tensors) {
    put<std::uint64_t>(payload, name.size());
    payload += name;
    put<std::uint64_t>(payload, value.rank());
    for (std::size_t e : value.shape()) put<std::uint64_t>(payload, e);
    const auto d = value.data();
    payload.append(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(float));
  }
  std::string file(kMagic, sizeof kMagic);
  put<std::uint32_t>(file, kCheckpointVersion);
  file += payload;
  put<std::uint64_t>(file, fnv1a(payload.data(), payload.size()));

  // Write-then-rename keeps the previous file intact if writing fails.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(file.data(), static_cast<std::streamsize>(file.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

std::vector<NamedTensor<float>> read_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string what = path.string();
  const std::size_t header = sizeof kMagic + sizeof(std::uint32_t);
  if (file.size() < header + sizeof(std::uint64_t) || file.compare(0, sizeof kMagic, kMagic, sizeof kMagic) != 0) {
    throw ValidationError(what + ": not a checkpoint file");
  }
  Reader head(file, sizeof kMagic, header, what);
  const auto version = head.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ValidationError(what + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::size_t end = file.size() - sizeof(std::uint64_t);
  Reader tail(file, end, file.size(), what);
  if (tail.get<std::uint64_t>() != fnv1a(file.data() + header, end - header)) {
    throw ValidationError(what + ": checksum mismatch");
  }

  std::vector<NamedTensor<float>> out;
  Reader r(file, header, end, what);
  while (!r.done()) {
    const auto name_len = r.get<std::uint64_t>();
    std::string name = r.bytes(name_len);
    const auto rank = r.get<std::uint64_t>();
    if (rank > 8) throw ValidationError(what + ": implausible rank for '" + name + "'");
    Shape shape;
    for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(r.get<std::uint64_t>());
    const std::size_t count = element_count(shape);
    if (count > (end - header) / sizeof(float)) throw ValidationError(what + ": tensor '" + name + "' overruns file");
    const std::string raw = r.bytes(count * sizeof(float));
    std::vector<float> values(count);
    std::memcpy(values.data(), raw.data(), raw.size());
    out.push_back({std::move(name), Tensor<float>(std::move(shape), std::move(values))});
  }
  return out;
}

std::filesystem::path config_sidecar(const std::filesystem::path& checkpoint) {
  return checkpoint.string() + ".json";
}

std::string model_config_to_json(const ModelConfig& c) {
  const nlohmann::json j = {{"extractor_widths", c.extractor_widths},
                            {"encoder_widths", c.encoder_widths},
                            {"window", c.window},
                            {"max_frames", c.max_frames},
                            {"heads", c.heads},
                            {"softmax_axis", to_string(c.softmax_axis)},
                            {"output_scale", c.output_scale},
                            {"regression_head", c.regression_head},
                            {"head_hidden", c.head_hidden},
                            {"vertex_count", c.vertex_count}};
  return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
  ModelConfig c;
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    for (const auto& [key, value] : j.items()) {
      if (key == "extractor_widths") c.extractor_widths = value.get<std::vector<std::size_t>>();
      else if (key == "encoder_widths") c.encoder_widths = value.get<std::vector<std::size_t>>();
      else if (key == "window") c.window = value.get<std::size_t>();
      else if (key == "max_frames") c.max_frames = value.get<std::size_t>();
      else if (key == "heads") c.heads = value.get<std::size_t>();
      else if (key == "softmax_axis") c.softmax_axis = parse_softmax_axis(value.get<std::string>());
      else if (key == "output_scale") c.output_scale = value.get<double>();
      else if (key == "regression_head") c.regression_head = value.get<bool>();
      else if (key == "head_hidden") c.head_hidden = value.get<std::size_t>();
      else if (key == "vertex_count") c.vertex_count = value.get<std::size_t>();
      else throw ValidationError("unknown model config key '" + key + "'");
    }
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("model config: ") + e.what(), 0);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

template <typename Real>
void assign_parameters(AniFormer<Real>& model, const std::vector<NamedTensor<float>>& tensors) {
  const auto& params = model.parameters();
  if (tensors.size() != params.size()) {
    throw ValidationError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model has " +
                          std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (tensors[i].name != params[i].name || tensors[i].value.shape() != params[i].value.shape()) {
      throw ValidationError("checkpoint tensor '" + tensors[i].name + "' " + shape_string(tensors[i].value.shape()) +
                            " does not match parameter '" + params[i].name + "' " +
                            shape_string(params[i].value.shape()));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = Tensor<Real>(params[i].value).mutable_data();
    const auto src = tensors[i].value.data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<Real>(src[j]);
  }
}

template <typename Real>
void save_model(const AniFormer<Real>& model, const std::filesystem::path& path) {
  std::vector<NamedTensor<float>> tensors;
  for (const auto& [name, value] : model.parameters()) {
    const auto d = value.data();
    tensors.push_back({name, Tensor<float>(value.shape(), std::vector<float>(d.begin(), d.end()))});
  }
  write_tensors(path, tensors);
  std::ofstream out(config_sidecar(path));
  if (!out) throw IoError("cannot write " + config_sidecar(path).string());
  out << model_config_to_json(model.config()) << '\n';
}

template <typename Real>
AniFormer<Real> load_model(const std::filesystem::path& path) {
  std::ifstream in(config_sidecar(path));
  if (!in) throw IoError("cannot open " + config_sidecar(path).string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  AniFormer<Real> model(model_config_from_json(text), 0);
  assign_parameters(model, read_tensors(path));
  return model;
}

template void assign_parameters<float>(AniFormer<float>&, const std::vector<NamedTensor<float>>&);
template void assign_parameters<double>(AniFormer<double>&, const std::vector<NamedTensor<float>>&);
template void save_model<float>(const AniFormer<float>&, const std::filesystem::path&);
template void save_model<double>(const AniFormer<double>&, const std::filesystem::path&);
template AniFormer<float> load_model<float>(const std::filesystem::path&);
template AniFormer<double> load_model<double>(const std::filesystem::path&);

}  // namespace aniformer
