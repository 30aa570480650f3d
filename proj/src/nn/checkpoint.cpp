#include "tfn/checkpoint.hpp"

#include "tfn/data.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace tfn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'T', 'F', 'N', 'C', 'K', 'P', 'T', '1'};

std::vector<float> as_f32(const Tensor& t) {
  std::vector<float> out(static_cast<std::size_t>(t.numel()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(t.at(static_cast<std::int64_t>(i)));
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors, const nlohmann::json& meta) {
  nlohmann::json manifest;
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& nt : tensors) {
    manifest["tensors"].push_back(
        {{"name", nt.name}, {"shape", nt.tensor.shape()}, {"offset", offset}, {"count", nt.tensor.numel()}});
    offset += static_cast<std::uint64_t>(nt.tensor.numel()) * sizeof(float);
  }
  manifest["meta"] = meta;
  const std::string text = manifest.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& nt : tensors) {
    const auto values = as_f32(nt.tensor);
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("short write on checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw std::runtime_error("not a checkpoint file: " + path);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("truncated checkpoint manifest in " + path);
  const auto manifest = nlohmann::json::parse(text);
  std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Checkpoint ck;
  ck.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& e : manifest.at("tensors")) {
    const auto shape = e.at("shape").get<Shape>();
    const auto offset = e.at("offset").get<std::uint64_t>();
    const auto count = e.at("count").get<std::int64_t>();
    if (count != numel_of(shape) || offset + static_cast<std::uint64_t>(count) * sizeof(float) > payload.size()) {
      throw std::runtime_error("corrupt entry " + e.at("name").get<std::string>() + " in " + path);
    }
    Tensor t = Tensor::empty(shape, DType::F32);
    std::memcpy(t.data<float>().data(), payload.data() + offset, static_cast<std::size_t>(count) * sizeof(float));
    ck.tensors.emplace(e.at("name").get<std::string>(), t);
  }
  return ck;
}

std::vector<NamedTensor> module_state(const Module& m, const std::string& prefix) {
  auto out = m.named_parameters(prefix);
  auto buffers = m.named_buffers(prefix);
  out.insert(out.end(), buffers.begin(), buffers.end());
  return out;
}

void load_module(Module& m, const Checkpoint& ckpt, const std::string& prefix) {
  for (auto& nt : module_state(m, prefix)) {
    auto it = ckpt.tensors.find(nt.name);
    if (it == ckpt.tensors.end()) throw std::runtime_error("checkpoint is missing tensor " + nt.name);
    if (it->second.shape() != nt.tensor.shape()) {
      throw DimensionError("checkpoint tensor " + nt.name + " has shape " + shape_str(it->second.shape()) +
                           ", model expects " + shape_str(nt.tensor.shape()));
    }
    Tensor dst = nt.tensor;
    for (std::int64_t i = 0; i < dst.numel(); ++i) dst.set(i, it->second.at(i));
  }
}

std::string fnv1a_hex(const void* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a_hex(bytes.data(), bytes.size());
}

std::string state_digest(const std::vector<NamedTensor>& tensors) {
  std::string buf;
  for (const auto& nt : tensors) {
    buf += nt.name;
    buf += shape_str(nt.tensor.shape());
    const auto values = as_f32(nt.tensor);
    buf.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(float));
  }
  return fnv1a_hex(buf.data(), buf.size());
}

}  // namespace tfn
