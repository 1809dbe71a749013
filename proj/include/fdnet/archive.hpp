#pragma once

#include <cstring>

#include <fdnet/attack.hpp>
#include <fdnet/dataset.hpp>

namespace fdn {

// Adversarial image archive: perturbations stored as signed 8-bit deltas
// against the clean images (valid while eps <= 127), bound to the clean set
// by a content hash. Layout: magic "FADL1", u32 little-endian header length,
// JSON header, int8 payload.
inline constexpr char kDeltaMagic[5] = {'F', 'A', 'D', 'L', '1'};

// Integer-quantized adversarial batch: deltas rounded to the nearest integer
// and clamped back into the (integer) budget and pixel range.
inline std::vector<std::int8_t> quantize_deltas(const Tensor& x_adv,
                                                const Tensor& x_clean,
                                                double eps) {
  if (eps > 127)
    throw ConfigError("delta archive: eps must be <= 127 for 8-bit deltas");
  if (!same_shape(x_adv.shape(), x_clean.shape()))
    throw ConfigError("delta archive: shape mismatch");
  const long bound = static_cast<long>(std::floor(eps));
  auto av = x_adv.data();
  auto cv = x_clean.data();
  std::vector<std::int8_t> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const long clean = std::lround(static_cast<double>(cv[i]));
    long q = std::lround(static_cast<double>(av[i]) - cv[i]);
    q = std::max(-bound, std::min(bound, q));
    q = std::max(-clean, std::min(255 - clean, q));  // stay in pixel range
    out[i] = static_cast<std::int8_t>(q);
  }
  return out;
}

inline Tensor apply_deltas(const Tensor& x_clean,
                           const std::vector<std::int8_t>& deltas) {
  if (static_cast<std::int64_t>(deltas.size()) != x_clean.numel())
    throw DataError("delta archive: delta count does not match images");
  Tensor out = x_clean.clone();
  auto ov = out.data();
  for (std::size_t i = 0; i < deltas.size(); ++i)
    ov[i] += static_cast<float>(deltas[i]);
  return out;
}

inline void save_delta_archive(const std::filesystem::path& path,
                               const Tensor& x_clean,
                               const std::vector<std::int8_t>& deltas,
                               double eps, const json& attack_meta) {
  json header;
  header["count"] = x_clean.dim(0);
  header["shape"] = x_clean.shape();
  header["epsilon"] = eps;
  header["attack"] = attack_meta;
  header["clean_hash"] =
      hex16(fnv1a64(x_clean.data().data(), x_clean.data().size_bytes()));
  const std::string hdr = header.dump();

  std::string blob;
  blob.append(kDeltaMagic, 5);
  for (int i = 0; i < 4; ++i)
    blob.push_back(static_cast<char>((hdr.size() >> (8 * i)) & 0xff));
  blob.append(hdr);
  blob.append(reinterpret_cast<const char*>(deltas.data()), deltas.size());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

struct DeltaArchive {
  json header;
  std::vector<std::int8_t> deltas;
};

inline DeltaArchive load_delta_archive(const std::filesystem::path& path) {
  const std::string blob = detail::read_file(path);
  if (blob.size() < 9 || std::memcmp(blob.data(), kDeltaMagic, 5) != 0)
    throw IoError("bad delta archive magic in " + path.string());
  std::uint32_t hlen = 0;
  for (int i = 3; i >= 0; --i)
    hlen = (hlen << 8) | static_cast<unsigned char>(blob[5 + i]);
  if (blob.size() < 9 + static_cast<std::size_t>(hlen))
    throw IoError("truncated delta archive header in " + path.string());
  DeltaArchive a;
  try {
    a.header = json::parse(blob.substr(9, hlen));
  } catch (const std::exception& e) {
    throw IoError("corrupt delta archive header in " + path.string() + ": " +
                  e.what());
  }
  const std::size_t payload = blob.size() - 9 - hlen;
  a.deltas.resize(payload);
  std::memcpy(a.deltas.data(), blob.data() + 9 + hlen, payload);
  return a;
}

// Reconstructs adversarial images, verifying the clean-set binding.
inline Tensor reconstruct_adversarial(const DeltaArchive& a,
                                      const Tensor& x_clean) {
  const std::string want = a.header.at("clean_hash").get<std::string>();
  const std::string got =
      hex16(fnv1a64(x_clean.data().data(), x_clean.data().size_bytes()));
  if (want != got)
    throw DataError("delta archive was built against a different clean set "
                    "(hash " + want + ", images hash " + got + ")");
  return apply_deltas(x_clean, a.deltas);
}

}  // namespace fdn
