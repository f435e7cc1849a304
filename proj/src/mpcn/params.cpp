#include "mpcn/params.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "mpcn/wire.hpp"

namespace mpcn {

template <typename T>
int ParamStore<T>::add(const std::string& name, Tensor<T> value) {
  if (index_.count(name)) throw UsageError("parameter registered twice: " + name);
  int idx = static_cast<int>(names_.size());
  index_[name] = idx;
  names_.push_back(name);
  values_.push_back(std::move(value));
  return idx;
}

template <typename T>
int ParamStore<T>::index_of(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

template <typename T>
Tensor<T>& ParamStore<T>::value(const std::string& name) {
  int i = index_of(name);
  if (i < 0) throw UsageError("unknown parameter: " + name);
  return values_[static_cast<size_t>(i)];
}

template <typename T>
const Tensor<T>& ParamStore<T>::value(const std::string& name) const {
  int i = index_of(name);
  if (i < 0) throw UsageError("unknown parameter: " + name);
  return values_[static_cast<size_t>(i)];
}

template <typename T>
std::vector<Var<T>> ParamStore<T>::register_leaves(Tape<T>& tape, bool requires_grad) const {
  std::vector<Var<T>> leaves;
  leaves.reserve(values_.size());
  for (const auto& v : values_) leaves.push_back(tape.leaf(v, requires_grad));
  return leaves;
}

template <typename T>
std::vector<Tensor<T>> ParamStore<T>::clone_values() const {
  std::vector<Tensor<T>> out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.push_back(v.clone());
  return out;
}

template <typename T>
void ParamStore<T>::assign_values(const std::vector<Tensor<T>>& values) {
  if (values.size() != values_.size())
    throw UsageError("assign_values: store holds " + std::to_string(values_.size()) +
                     " parameters, got " + std::to_string(values.size()));
  for (size_t i = 0; i < values.size(); ++i) {
    if (values[i].shape() != values_[i].shape())
      throw DimensionError("assign_values: shape mismatch for " + names_[i]);
    values_[i] = values[i].clone();
  }
}

template <typename T>
int64_t ParamStore<T>::total_elements() const {
  int64_t n = 0;
  for (const auto& v : values_) n += v.numel();
  return n;
}

// --- checkpoint io -----------------------------------------------------------------

namespace {

constexpr char kCkptMagic[9] = "MPCNCKPT";
constexpr uint32_t kCkptVersion = 1;

std::string read_file(const std::string& path, const char* what) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError(std::string("cannot open ") + what + " file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

wire::Reader open_checkpoint(const std::string& buf, const std::string& path, CheckpointInfo& info) {
  wire::Reader r(buf);
  r.need(8);
  if (std::memcmp(buf.data(), kCkptMagic, 8) != 0)
    throw DataError("not a checkpoint file: " + path);
  r.pos = 8;
  uint32_t version = r.get_u32();
  if (version != kCkptVersion)
    throw DataError("checkpoint " + path + " has format version " + std::to_string(version) +
                    ", expected " + std::to_string(kCkptVersion));
  info.model_kind = r.get_str();
  info.dtype_bytes = r.get_u8();
  if (info.dtype_bytes != 4 && info.dtype_bytes != 8)
    throw DataError("checkpoint " + path + " has unsupported element width");
  info.config_text = r.get_str();
  uint32_t n_meta = r.get_u32();
  for (uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.get_str();
    info.meta[k] = r.get_str();
  }
  return r;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, const std::string& model_kind,
                     const std::string& config_text,
                     const std::map<std::string, std::string>& meta, const ParamStore<T>& store) {
  std::string out;
  wire::put_bytes(out, kCkptMagic, 8);
  wire::put_u32(out, kCkptVersion);
  wire::put_str(out, model_kind);
  out.push_back(static_cast<char>(sizeof(T)));
  wire::put_str(out, config_text);
  wire::put_u32(out, static_cast<uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    wire::put_str(out, k);
    wire::put_str(out, v);
  }
  wire::put_u32(out, static_cast<uint32_t>(store.count()));
  for (size_t i = 0; i < store.count(); ++i) {
    const Tensor<T>& t = store.value(i);
    wire::put_str(out, store.name(i));
    wire::put_u32(out, static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape()) wire::put_u64(out, static_cast<uint64_t>(d));
    for (int64_t e = 0; e < t.numel(); ++e) {
      if constexpr (sizeof(T) == 4)
        wire::put_f32(out, static_cast<float>(t.at(e)));
      else
        wire::put_f64(out, static_cast<double>(t.at(e)));
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write checkpoint file: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("short write to checkpoint file: " + path);
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
  std::string buf = read_file(path, "checkpoint");
  CheckpointInfo info;
  open_checkpoint(buf, path, info);
  return info;
}

template <typename T>
void load_checkpoint_values(const std::string& path, ParamStore<T>& store) {
  std::string buf = read_file(path, "checkpoint");
  CheckpointInfo info;
  wire::Reader r = open_checkpoint(buf, path, info);
  uint32_t n_params = r.get_u32();
  if (n_params != store.count())
    throw DataError("checkpoint " + path + " holds " + std::to_string(n_params) +
                    " parameters, model expects " + std::to_string(store.count()));
  for (uint32_t i = 0; i < n_params; ++i) {
    std::string name = r.get_str();
    if (name != store.name(i))
      throw DataError("checkpoint " + path + ": parameter " + std::to_string(i) + " is '" + name +
                      "', model expects '" + store.name(i) + "'");
    uint32_t rank = r.get_u32();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int64_t>(r.get_u64());
    Tensor<T>& dst = store.value(i);
    if (shape != dst.shape())
      throw DataError("checkpoint " + path + ": parameter '" + name + "' has shape " +
                      shape_str(shape) + ", model expects " + shape_str(dst.shape()));
    for (int64_t e = 0; e < dst.numel(); ++e)
      dst.at(e) = info.dtype_bytes == 4 ? static_cast<T>(r.get_f32())
                                        : static_cast<T>(r.get_f64());
  }
}

template class ParamStore<float>;
template class ParamStore<double>;
template void save_checkpoint<float>(const std::string&, const std::string&, const std::string&,
                                     const std::map<std::string, std::string>&,
                                     const ParamStore<float>&);
template void save_checkpoint<double>(const std::string&, const std::string&, const std::string&,
                                      const std::map<std::string, std::string>&,
                                      const ParamStore<double>&);
template void load_checkpoint_values<float>(const std::string&, ParamStore<float>&);
template void load_checkpoint_values<double>(const std::string&, ParamStore<double>&);

}  // namespace mpcn
