#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "strlab/models.hpp"

namespace strlab::models {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::string_view kMagic = "STRC1";

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

// Bounds-checked reader; any overrun means a truncated or corrupt file.
class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T value;
    std::memcpy(&value, take(sizeof(T)).data(), sizeof(T));
    return value;
  }
  std::string_view take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw Error(ErrorCode::Io, "checkpoint is truncated");
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::size_t element_size(DType dtype) { return dtype == DType::F32 ? 4 : 8; }

template <typename S>
DType dtype_of() {
  return sizeof(S) == 4 ? DType::F32 : DType::F64;
}

bool is_head(const std::string& name) {
  return name.rfind("head.", 0) == 0 || name.rfind("correction.head.", 0) == 0;
}

}  // namespace

template <typename S>
Tensor<S> TensorRecord::to_tensor() const {
  Tensor<S> out(shape);
  if (dtype == DType::F32) {
    Eigen::VectorXf values(out.size());
    std::memcpy(values.data(), bytes.data(), bytes.size());
    out.vec() = values.cast<S>();
  } else {
    Eigen::VectorXd values(out.size());
    std::memcpy(values.data(), bytes.data(), bytes.size());
    out.vec() = values.cast<S>();
  }
  return out;
}

template <typename S>
TensorRecord TensorRecord::from_tensor(std::string name, const Tensor<S>& t) {
  TensorRecord r;
  r.name = std::move(name);
  r.dtype = dtype_of<S>();
  r.shape = t.shape();
  r.bytes.assign(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(S));
  return r;
}

std::string Checkpoint::serialize() const {
  std::string desc = descriptor.dump();
  std::string out(kMagic);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(desc.size()));
  out += desc;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out += t.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
    for (Index d : t.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    put<std::uint64_t>(out, offset);
    offset += t.bytes.size();
  }
  for (const auto& t : tensors) out += t.bytes;
  return out;
}

Checkpoint Checkpoint::parse(std::string_view bytes) {
  if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic) {
    throw Error(ErrorCode::BadMagic, "not a STRC1 checkpoint");
  }
  Reader in(bytes.substr(kMagic.size()));
  Checkpoint ckpt;
  auto desc = in.take(in.get<std::uint32_t>());
  try {
    ckpt.descriptor = Json::parse(desc);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, std::string("corrupt checkpoint descriptor: ") + e.what());
  }
  auto count = in.get<std::uint32_t>();
  std::vector<std::uint64_t> offsets;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    t.name = std::string(in.take(in.get<std::uint16_t>()));
    auto dtype = in.get<std::uint8_t>();
    if (dtype > 1) throw Error(ErrorCode::Io, "unknown dtype in tensor " + t.name);
    t.dtype = static_cast<DType>(dtype);
    auto rank = in.get<std::uint8_t>();
    for (int d = 0; d < rank; ++d) {
      auto extent = in.get<std::uint32_t>();
      if (extent == 0) throw Error(ErrorCode::Io, "zero extent in tensor " + t.name);
      t.shape.push_back(extent);
    }
    offsets.push_back(in.get<std::uint64_t>());
    ckpt.tensors.push_back(std::move(t));
  }
  std::uint64_t expected = 0;
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
    auto& t = ckpt.tensors[i];
    if (offsets[i] != expected) throw Error(ErrorCode::Io, "tensor " + t.name + " has an inconsistent offset");
    auto n = static_cast<std::size_t>(shape_size(t.shape)) * element_size(t.dtype);
    t.bytes = std::string(in.take(n));
    expected += n;
  }
  if (in.remaining() != 0) throw Error(ErrorCode::Io, "trailing bytes after checkpoint payload");
  return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::string bytes = serialize();
  // Write-then-rename so a crash never leaves a partial checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot move checkpoint into " + path.string() + ": " + ec.message());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

const TensorRecord* Checkpoint::find(std::string_view name) const {
  auto it = std::find_if(tensors.begin(), tensors.end(), [&](const auto& t) { return t.name == name; });
  return it == tensors.end() ? nullptr : &*it;
}

ModelKind Checkpoint::kind() const {
  auto kind = descriptor.value("kind", std::string());
  if (kind == "crnn") return ModelKind::Crnn;
  if (kind == "starnet") return ModelKind::StarNet;
  throw Error(ErrorCode::Io, "checkpoint has unknown model kind '" + kind + "'");
}

Vocabulary Checkpoint::vocab() const {
  try {
    const auto& v = descriptor.at("vocab");
    auto cps = v.at("codepoints").get<std::vector<std::uint32_t>>();
    auto vocab = Vocabulary::from_codepoints(std::vector<char32_t>(cps.begin(), cps.end()));
    if (vocab.hash_hex() != v.at("hash").get<std::string>()) {
      throw Error(ErrorCode::HashMismatch, "stored vocabulary hash does not match its codepoints");
    }
    return vocab;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, std::string("checkpoint vocabulary is malformed: ") + e.what());
  }
}

bool Checkpoint::has_correction() const {
  return descriptor.contains("correction") && descriptor["correction"].value("attached", false);
}

template <typename S>
Checkpoint make_checkpoint(Recognizer<S>& model) {
  Checkpoint ckpt;
  ckpt.descriptor = model.descriptor();
  ckpt.descriptor["dtype"] = dtype_of<S>() == DType::F32 ? "f32" : "f64";
  for (auto& entry : model.state()) ckpt.tensors.push_back(TensorRecord::from_tensor(entry.name, entry.tensor()));
  return ckpt;
}

template <typename S>
void restore_state(Recognizer<S>& model, const Checkpoint& ckpt) {
  auto state = model.state();
  for (auto& entry : state) {
    const auto* rec = ckpt.find(entry.name);
    if (rec == nullptr || rec->shape != entry.tensor().shape()) {
      throw Error(ErrorCode::ArchMismatch, "checkpoint has no tensor matching " + entry.name + " " +
                                               shape_string(entry.tensor().shape()));
    }
    entry.tensor() = rec->template to_tensor<S>();
  }
  for (const auto& rec : ckpt.tensors) {
    if (rec.name.rfind("opt.", 0) == 0) continue;
    bool known = std::any_of(state.begin(), state.end(), [&](const auto& e) { return e.name == rec.name; });
    if (!known) throw Error(ErrorCode::ArchMismatch, "checkpoint tensor " + rec.name + " is not part of the model");
  }
}

template <typename S>
Recognizer<S> load_model(const Checkpoint& ckpt, const Vocabulary* expected) {
  Vocabulary vocab = ckpt.vocab();
  if (expected != nullptr && expected->hash() != vocab.hash()) {
    throw Error(ErrorCode::HashMismatch, "checkpoint vocabulary " + vocab.hash_hex() + " differs from supplied " +
                                             expected->hash_hex());
  }
  ArchConfig config = config_from_json(ckpt.descriptor.at("config"));
  if ((ckpt.kind() == ModelKind::Crnn) != std::holds_alternative<CrnnConfig>(config)) {
    throw Error(ErrorCode::Io, "checkpoint kind does not match its config");
  }
  auto model = Recognizer<S>::build(config, vocab, ckpt.descriptor.value("seed", std::uint64_t{0}));
  if (ckpt.has_correction()) model.attach_correction(0, ckpt.descriptor["correction"].at("hidden").get<Index>());
  restore_state(model, ckpt);
  return model;
}

std::string TransferReport::tsv() const {
  std::string out;
  for (const auto& name : copied) out += name + "\tcopied\n";
  for (const auto& name : reinitialized) out += name + "\treinitialized\n";
  return out;
}

template <typename S>
TransferReport transfer_weights(const Checkpoint& src, Recognizer<S>& dst) {
  if (src.kind() != dst.kind()) {
    throw Error(ErrorCode::ArchMismatch, "cannot transfer " + to_string(src.kind()) + " weights into " +
                                             to_string(dst.kind()));
  }
  if (config_from_json(src.descriptor.at("config")) != dst.config()) {
    throw Error(ErrorCode::ArchMismatch, "source and destination configs differ");
  }
  TransferReport report;
  for (auto& entry : dst.state()) {
    const auto* rec = src.find(entry.name);
    if (rec != nullptr && rec->shape == entry.tensor().shape()) {
      entry.tensor() = rec->template to_tensor<S>();
      report.copied.push_back(entry.name);
    } else if (is_head(entry.name) || entry.name.rfind("correction.", 0) == 0) {
      report.reinitialized.push_back(entry.name);
    } else {
      throw Error(ErrorCode::ArchMismatch, "tensor " + entry.name + " cannot be transferred");
    }
  }
  return report;
}

template <typename S>
void dump_filters(Recognizer<S>& model, const std::filesystem::path& path) {
  auto state = model.state();
  const auto& w = state.front().tensor();  // first conv weight [O,1,kh,kw]
  const Index count = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  constexpr Index kZoom = 4;
  const Index cols = std::min<Index>(count, 8);
  const Index rows = (count + cols - 1) / cols;
  synth::Image grid = synth::Image::Zero(rows * (kh * kZoom + 1) + 1, cols * (kw * kZoom + 1) + 1);
  for (Index f = 0; f < count; ++f) {
    auto values = w.vec().segment(f * w.dim(1) * kh * kw, kh * kw);
    S lo = values.minCoeff(), hi = values.maxCoeff();
    S span = hi > lo ? hi - lo : S(1);
    Index top = (f / cols) * (kh * kZoom + 1) + 1, left = (f % cols) * (kw * kZoom + 1) + 1;
    for (Index y = 0; y < kh * kZoom; ++y) {
      for (Index x = 0; x < kw * kZoom; ++x) {
        grid(top + y, left + x) = static_cast<float>((values[(y / kZoom) * kw + x / kZoom] - lo) / span);
      }
    }
  }
  synth::write_pgm(path, grid);
}

#define STRLAB_INSTANTIATE(S)                                                              \
  template Tensor<S> TensorRecord::to_tensor<S>() const;                                   \
  template TensorRecord TensorRecord::from_tensor<S>(std::string, const Tensor<S>&);       \
  template Checkpoint make_checkpoint<S>(Recognizer<S>&);                                  \
  template void restore_state<S>(Recognizer<S>&, const Checkpoint&);                       \
  template Recognizer<S> load_model<S>(const Checkpoint&, const Vocabulary*);              \
  template TransferReport transfer_weights<S>(const Checkpoint&, Recognizer<S>&);          \
  template void dump_filters<S>(Recognizer<S>&, const std::filesystem::path&);

STRLAB_INSTANTIATE(float)
STRLAB_INSTANTIATE(double)

}  // namespace strlab::models
