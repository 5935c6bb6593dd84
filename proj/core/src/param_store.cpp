#include "actbridge/param_store.hpp"

#include <cstring>
#include <fstream>

namespace actbridge {

Tensor ParameterStore::add(const std::string& name, Tensor t, bool trainable) {
  if (entries_.count(name))
    throw CheckpointError("duplicate parameter name: " + name);
  entries_[name] = Entry{t, trainable};
  return t;
}

Tensor ParameterStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw CheckpointError("unknown parameter: " + name);
  return it->second.tensor;
}

bool ParameterStore::contains(const std::string& name) const {
  return entries_.count(name) != 0;
}

bool ParameterStore::trainable(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw CheckpointError("unknown parameter: " + name);
  return it->second.trainable;
}

void ParameterStore::set_trainable(const std::string& name, bool trainable) {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw CheckpointError("unknown parameter: " + name);
  it->second.trainable = trainable;
}

void ParameterStore::set_trainable_prefix(const std::string& prefix,
                                          bool trainable) {
  for (auto& [name, e] : entries_)
    if (name.rfind(prefix, 0) == 0) e.trainable = trainable;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, e] : entries_) out.push_back(name);
  return out;
}

std::vector<std::string> ParameterStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_)
    if (e.trainable) out.push_back(name);
  return out;
}

std::size_t ParameterStore::total_count() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += e.tensor.size();
  return n;
}

void ParameterStore::zero_grads() {
  for (auto& [name, e] : entries_) e.tensor.zero_grad();
}

void ParameterStore::round_to_f32() {
  for (auto& [name, e] : entries_) {
    std::vector<double> d = e.tensor.data();
    for (double& v : d) v = static_cast<double>(static_cast<float>(v));
    e.tensor.set_data(d);
  }
}

namespace {

constexpr char kMagic[4] = {'A', 'B', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CheckpointError(std::string("truncated checkpoint: ") + what);
  return v;
}

}  // namespace

void save_store(const std::string& path, const ParameterStore& store,
                const std::string& metadata) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open for writing: " + path);
  os.write(kMagic, 4);
  write_pod<std::uint32_t>(os, kVersion);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(metadata.size()));
  os.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
  std::uint64_t count = 0;
  for (const auto& e : store) {
    (void)e;
    ++count;
  }
  write_pod<std::uint64_t>(os, count);
  for (const auto& [name, entry] : store) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint32_t>(os, 2);
    write_pod<std::uint64_t>(os, entry.tensor.rows());
    write_pod<std::uint64_t>(os, entry.tensor.cols());
    for (double v : entry.tensor.data())
      write_pod<float>(os, static_cast<float>(v));
  }
  if (!os) throw CheckpointError("write failed: " + path);
}

void load_store(const std::string& path, ParameterStore& store,
                std::string* metadata_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw CheckpointError("bad checkpoint header (magic mismatch): " + path);
  const auto version = read_pod<std::uint32_t>(is, "version");
  if (version != kVersion)
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  const auto meta_len = read_pod<std::uint32_t>(is, "metadata length");
  std::string metadata(meta_len, '\0');
  is.read(metadata.data(), meta_len);
  if (!is) throw CheckpointError("truncated checkpoint: metadata");
  if (metadata_out) *metadata_out = metadata;
  const auto count = read_pod<std::uint64_t>(is, "parameter count");
  std::size_t seen = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(is, "name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw CheckpointError("truncated checkpoint: name");
    const auto rank = read_pod<std::uint32_t>(is, "rank");
    if (rank != 2)
      throw CheckpointError("unsupported rank " + std::to_string(rank) +
                            " for parameter " + name);
    const auto rows = read_pod<std::uint64_t>(is, "extent");
    const auto cols = read_pod<std::uint64_t>(is, "extent");
    if (!store.contains(name))
      throw CheckpointError("checkpoint parameter not in store: " + name);
    Tensor t = store.get(name);
    if (t.rows() != rows || t.cols() != cols)
      throw CheckpointError(
          "shape mismatch for parameter " + name + ": store " +
          std::to_string(t.rows()) + "x" + std::to_string(t.cols()) +
          " vs checkpoint " + std::to_string(rows) + "x" +
          std::to_string(cols));
    std::vector<double> d(rows * cols);
    for (double& v : d)
      v = static_cast<double>(read_pod<float>(is, "value"));
    t.set_data(d);
    ++seen;
  }
  std::size_t expected = 0;
  for (const auto& e : store) {
    (void)e;
    ++expected;
  }
  if (seen != expected)
    throw CheckpointError("checkpoint has " + std::to_string(seen) +
                          " parameters, store expects " +
                          std::to_string(expected));
}

}  // namespace actbridge
