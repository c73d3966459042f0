#include "cvnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cvnet/error.hpp"
#include "cvnet/loss.hpp"

namespace cvnet {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

const CheckpointRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& r : records) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

const CheckpointRecord& Checkpoint::at(const std::string& name) const {
  if (const auto* r = find(name)) return *r;
  throw FormatError("checkpoint has no record '" + name + "'");
}

namespace {

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t read_u32(std::istream& is, const std::string& path) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw FormatError(path + ": truncated checkpoint record");
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(path.string() + ": cannot open for writing");
  os << "cvnet-checkpoint " << kCheckpointFormatVersion << '\n';
  os << "meta " << ckpt.meta.dump() << '\n';
  os << "records " << ckpt.records.size() << '\n';
  os << "end\n";
  for (const auto& r : ckpt.records) {
    if (numel(r.shape) != r.data.size()) throw ShapeError("checkpoint record '" + r.name + "' shape mismatch");
    write_u32(os, static_cast<std::uint32_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    write_u32(os, static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) write_u32(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(r.data.data()), static_cast<std::streamsize>(r.data.size() * 4));
  }
  if (!os) throw IoError(path.string() + ": write failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(p + ": cannot open checkpoint");
  Checkpoint ckpt;
  std::string line;
  if (!std::getline(is, line) || line != "cvnet-checkpoint " + std::to_string(kCheckpointFormatVersion)) {
    throw FormatError(p + ": not a version " + std::to_string(kCheckpointFormatVersion) + " checkpoint");
  }
  if (!std::getline(is, line) || line.rfind("meta ", 0) != 0) throw FormatError(p + ": missing meta line");
  try {
    ckpt.meta = nlohmann::json::parse(line.substr(5));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(p + ": unreadable meta: " + e.what());
  }
  std::size_t count = 0;
  if (!std::getline(is, line) || line.rfind("records ", 0) != 0) throw FormatError(p + ": missing records line");
  count = std::stoul(line.substr(8));
  if (!std::getline(is, line) || line != "end") throw FormatError(p + ": missing end line");
  for (std::size_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    const auto len = read_u32(is, p);
    if (len > 4096) throw FormatError(p + ": implausible record name length");
    r.name.resize(len);
    if (!is.read(r.name.data(), len)) throw FormatError(p + ": truncated checkpoint record");
    const auto rank = read_u32(is, p);
    if (rank > 8) throw FormatError(p + ": implausible record rank");
    for (std::uint32_t k = 0; k < rank; ++k) r.shape.push_back(read_u32(is, p));
    r.data.resize(numel(r.shape));
    if (!is.read(reinterpret_cast<char*>(r.data.data()), static_cast<std::streamsize>(r.data.size() * 4))) {
      throw FormatError(p + ": truncated data for record '" + r.name + "'");
    }
    ckpt.records.push_back(std::move(r));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError(p + ": trailing bytes after records");
  return ckpt;
}

namespace {

template <typename T>
CheckpointRecord to_record(const std::string& name, const Tensor<T>& t) {
  CheckpointRecord r;
  r.name = name;
  r.shape = t.shape;
  r.data.assign(t.data.begin(), t.data.end());
  return r;
}

template <typename T>
void from_record(const CheckpointRecord& r, Tensor<T>& t) {
  if (r.shape != t.shape) {
    throw FormatError("checkpoint record '" + r.name + "' has shape " + to_string(r.shape) + ", expected " +
                      to_string(t.shape));
  }
  t.data.assign(r.data.begin(), r.data.end());
}

}  // namespace

template <typename T>
Checkpoint model_checkpoint(const ModelParams<T>& params, const NetworkConfig& cfg, std::uint64_t seed) {
  Checkpoint ckpt;
  ckpt.meta["format_version"] = kCheckpointFormatVersion;
  ckpt.meta["config"] = cfg;
  ckpt.meta["seed"] = seed;
  ckpt.meta["channel_labels"] = kChannelLabels;
  for (const auto& [name, entry] : params.entries) {
    if (const auto* k = std::get_if<ConvKernel<T>>(&entry)) {
      ckpt.records.push_back(to_record(name + ".weight", k->weight->value));
      if (k->bias) ckpt.records.push_back(to_record(name + ".bias", k->bias->value));
    } else {
      const auto& bn = std::get<BatchNormState<T>>(entry);
      ckpt.records.push_back(to_record(name + ".gamma", bn.gamma->value));
      ckpt.records.push_back(to_record(name + ".beta", bn.beta->value));
      ckpt.records.push_back(to_record(name + ".running_mean", bn.running_mean));
      ckpt.records.push_back(to_record(name + ".running_var", bn.running_var));
    }
  }
  return ckpt;
}

NetworkConfig config_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("config")) throw FormatError("checkpoint lacks a network config");
  NetworkConfig cfg = ckpt.meta.at("config").get<NetworkConfig>();
  cfg.validate();
  return cfg;
}

template <typename T>
ModelParams<T> params_from_checkpoint(const Checkpoint& ckpt, NetworkConfig* cfg_out) {
  const NetworkConfig cfg = config_from_checkpoint(ckpt);
  if (ckpt.meta.contains("channel_labels") &&
      ckpt.meta.at("channel_labels").get<std::vector<int>>() != std::vector<int>(kChannelLabels.begin(), kChannelLabels.end())) {
    throw FormatError("checkpoint uses an unsupported channel-to-label mapping");
  }
  ModelParams<T> params = build_network<T>(cfg, ckpt.meta.value("seed", std::uint64_t{0}));
  for (auto& [name, entry] : params.entries) {
    if (auto* k = std::get_if<ConvKernel<T>>(&entry)) {
      from_record(ckpt.at(name + ".weight"), k->weight->value);
      if (k->bias) from_record(ckpt.at(name + ".bias"), k->bias->value);
    } else {
      auto& bn = std::get<BatchNormState<T>>(entry);
      from_record(ckpt.at(name + ".gamma"), bn.gamma->value);
      from_record(ckpt.at(name + ".beta"), bn.beta->value);
      from_record(ckpt.at(name + ".running_mean"), bn.running_mean);
      from_record(ckpt.at(name + ".running_var"), bn.running_var);
    }
  }
  if (cfg_out) *cfg_out = cfg;
  return params;
}

template Checkpoint model_checkpoint<float>(const ModelParams<float>&, const NetworkConfig&, std::uint64_t);
template Checkpoint model_checkpoint<double>(const ModelParams<double>&, const NetworkConfig&, std::uint64_t);
template ModelParams<float> params_from_checkpoint<float>(const Checkpoint&, NetworkConfig*);
template ModelParams<double> params_from_checkpoint<double>(const Checkpoint&, NetworkConfig*);

}  // namespace cvnet
