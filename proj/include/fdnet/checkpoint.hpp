#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>

#include <fdnet/model.hpp>

namespace fdn {

// Self-describing binary container: magic "FSHD1", u32 little-endian header
// length, UTF-8 JSON header (spec, tensor directory, metadata), then raw
// little-endian float payloads at the offsets the header declares.
inline constexpr char kCheckpointMagic[5] = {'F', 'S', 'H', 'D', '1'};
inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  int epoch = 0;
  std::uint64_t seed = 0;
  double train_epsilon = -1.0;  // < 0: not adversarially trained
  std::string note;

  json to_json() const {
    json j;
    j["epoch"] = epoch;
    j["seed"] = std::to_string(seed);  // u64-safe
    j["train_epsilon"] = train_epsilon;
    j["note"] = note;
    return j;
  }
  static CheckpointMeta from_json(const json& j) {
    CheckpointMeta m;
    m.epoch = j.at("epoch").get<int>();
    m.seed = std::stoull(j.at("seed").get<std::string>());
    m.train_epsilon = j.at("train_epsilon").get<double>();
    m.note = j.at("note").get<std::string>();
    return m;
  }
};

namespace detail {

struct TensorEntry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;  // bytes into the payload
  std::uint64_t count = 0;   // float count
};

inline void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace detail

inline void save_checkpoint(Model& model, const std::filesystem::path& path,
                            const CheckpointMeta& meta = {},
                            const OptState& opt = {}) {
  std::vector<detail::TensorEntry> entries;
  std::vector<const float*> sources;
  std::uint64_t offset = 0;
  auto push = [&](const std::string& name, const Shape& shape, const float* p,
                  std::uint64_t count) {
    entries.push_back({name, shape, offset, count});
    sources.push_back(p);
    offset += count * sizeof(float);
  };

  for (auto& [name, t] : model.params())
    push(name, t.shape(), t.data().data(),
         static_cast<std::uint64_t>(t.numel()));
  for (auto& [name, bn] : model.bn_states()) {
    const int c = bn->channels();
    push(name + ".running_mean", {c}, bn->running_mean.data(),
         static_cast<std::uint64_t>(c));
    push(name + ".running_var", {c}, bn->running_var.data(),
         static_cast<std::uint64_t>(c));
  }
  for (const auto& [name, v] : opt)
    push("opt." + name, {static_cast<int>(v.size())}, v.data(), v.size());

  json header;
  header["version"] = kCheckpointVersion;
  header["spec"] = model.spec().to_json();
  header["spec_hash"] = hex16(model.spec().hash());
  header["meta"] = meta.to_json();
  json dir = json::array();
  for (const auto& e : entries) {
    json d;
    d["name"] = e.name;
    d["dtype"] = "f32";
    d["shape"] = e.shape;
    d["offset"] = e.offset;
    d["count"] = e.count;
    dir.push_back(d);
  }
  header["tensors"] = dir;
  const std::string hdr = header.dump();

  std::string blob;
  blob.reserve(5 + 4 + hdr.size() + offset);
  blob.append(kCheckpointMagic, 5);
  detail::put_u32_le(blob, static_cast<std::uint32_t>(hdr.size()));
  blob.append(hdr);
  for (std::size_t i = 0; i < entries.size(); ++i)
    blob.append(reinterpret_cast<const char*>(sources[i]),
                entries[i].count * sizeof(float));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw IoError("short write to " + path.string());
}

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  CheckpointMeta meta;
  OptState opt;
};

// Loads a checkpoint. When `expected` is given, its spec hash must match the
// stored one.
inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                        const ModelSpec* expected = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string blob((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (blob.size() < 9 || std::memcmp(blob.data(), kCheckpointMagic, 5) != 0)
    throw IoError("bad checkpoint magic in " + path.string());
  std::uint32_t hlen = 0;
  for (int i = 3; i >= 0; --i)
    hlen = (hlen << 8) | static_cast<unsigned char>(blob[5 + i]);
  if (blob.size() < 9 + static_cast<std::size_t>(hlen))
    throw IoError("truncated checkpoint header in " + path.string());

  json header;
  try {
    header = json::parse(blob.substr(9, hlen));
  } catch (const std::exception& e) {
    throw IoError("corrupt checkpoint header in " + path.string() + ": " +
                  e.what());
  }
  if (header.at("version").get<int>() != kCheckpointVersion)
    throw IoError("unsupported checkpoint version in " + path.string());

  ModelSpec spec = ModelSpec::from_json(header.at("spec"));
  const std::string stored_hash = header.at("spec_hash").get<std::string>();
  if (stored_hash != hex16(spec.hash()))
    throw IoError("checkpoint spec hash mismatch in " + path.string() +
                  " (stored " + stored_hash + ", computed " +
                  hex16(spec.hash()) + ")");
  if (expected && expected->hash() != spec.hash())
    throw IoError("checkpoint " + path.string() +
                  " was written for a different model spec (hash " +
                  stored_hash + ", expected " + hex16(expected->hash()) + ")");

  LoadedCheckpoint out;
  out.meta = CheckpointMeta::from_json(header.at("meta"));
  out.model = std::make_unique<Model>(spec, out.meta.seed);

  const char* payload = blob.data() + 9 + hlen;
  const std::size_t payload_size = blob.size() - 9 - hlen;
  std::map<std::string, std::pair<const float*, std::uint64_t>> by_name;
  for (const auto& d : header.at("tensors")) {
    const auto off = d.at("offset").get<std::uint64_t>();
    const auto count = d.at("count").get<std::uint64_t>();
    if (d.at("dtype").get<std::string>() != "f32")
      throw IoError("unsupported tensor dtype in " + path.string());
    if (off + count * sizeof(float) > payload_size)
      throw IoError("tensor '" + d.at("name").get<std::string>() +
                    "' overruns payload (offset " + std::to_string(off) + ")");
    by_name[d.at("name").get<std::string>()] = {
        reinterpret_cast<const float*>(payload + off), count};
  }

  auto fill = [&](const std::string& name, float* dst, std::uint64_t count) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw IoError("checkpoint " + path.string() + " is missing tensor '" +
                    name + "'");
    if (it->second.second != count)
      throw IoError("checkpoint tensor '" + name + "' has " +
                    std::to_string(it->second.second) + " values, expected " +
                    std::to_string(count));
    std::memcpy(dst, it->second.first, count * sizeof(float));
  };

  for (auto& [name, t] : out.model->params())
    fill(name, t.data().data(), static_cast<std::uint64_t>(t.numel()));
  for (auto& [name, bn] : out.model->bn_states()) {
    fill(name + ".running_mean", bn->running_mean.data(),
         bn->running_mean.size());
    fill(name + ".running_var", bn->running_var.data(), bn->running_var.size());
  }
  for (const auto& [name, src] : by_name)
    if (name.rfind("opt.", 0) == 0) {
      std::vector<float> v(src.second);
      std::memcpy(v.data(), src.first, src.second * sizeof(float));
      out.opt[name.substr(4)] = std::move(v);
    }
  return out;
}

}  // namespace fdn
