#pragma once

#include <filesystem>
#include <fstream>

#include <fdnet/tensor.hpp>

namespace fdn {

// Labeled image set. Images are (N,C,H,W) floats holding integer values on
// the 0..255 scale; labels are class indices in [0,classes).
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  int classes = 0;

  std::int64_t count() const { return images.defined() ? images.dim(0) : 0; }

  void validate() const {
    if (!images.defined() || images.ndim() != 4)
      throw DataError("dataset: images must be (N,C,H,W)");
    if (static_cast<std::int64_t>(labels.size()) != images.dim(0))
      throw DataError("dataset: label count " + std::to_string(labels.size()) +
                      " != image count " + std::to_string(images.dim(0)));
    if (classes < 2) throw DataError("dataset: needs at least two classes");
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] < 0 || labels[i] >= classes)
        throw DataError("dataset: label " + std::to_string(labels[i]) +
                        " out of range at index " + std::to_string(i));
    for (float v : images.data())
      if (!(v >= 0.0f && v <= 255.0f))
        throw DataError("dataset: pixel value " + std::to_string(v) +
                        " outside [0,255]");
  }

  // Batch gather by index list.
  Tensor gather_images(std::span<const std::int64_t> idx) const {
    const int c = images.dim(1), h = images.dim(2), w = images.dim(3);
    const std::size_t stride = static_cast<std::size_t>(c) * h * w;
    Tensor out({static_cast<int>(idx.size()), c, h, w});
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::copy_n(images.data().data() + static_cast<std::size_t>(idx[i]) * stride,
                  stride, out.data().data() + i * stride);
    return out;
  }
  std::vector<int> gather_labels(std::span<const std::int64_t> idx) const {
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
      out[i] = labels[static_cast<std::size_t>(idx[i])];
    return out;
  }

  std::uint64_t content_hash() const {
    std::uint64_t h = fnv1a64(images.data().data(), images.data().size_bytes());
    return fnv1a64(labels.data(), labels.size() * sizeof(int), h);
  }
};

// ---------------------------------------------------------------------------
// IDX (magic-number binary, big-endian extents, u8 payload). 3-D files are
// read as single-channel image stacks; 4-D files as (N,C,H,W).
// ---------------------------------------------------------------------------

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

inline std::uint32_t be32(const std::string& s, std::size_t off) {
  return (static_cast<std::uint32_t>(static_cast<unsigned char>(s[off])) << 24) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 1])) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 2])) << 8) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 3]));
}

inline void put_be32(std::string& s, std::uint32_t v) {
  s.push_back(static_cast<char>((v >> 24) & 0xff));
  s.push_back(static_cast<char>((v >> 16) & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
  s.push_back(static_cast<char>(v & 0xff));
}

}  // namespace detail

inline Tensor load_idx_images(const std::filesystem::path& path) {
  const std::string s = detail::read_file(path);
  if (s.size() < 4)
    throw IoError(path.string() + ": truncated IDX header at byte offset 0");
  if (s[0] != 0 || s[1] != 0)
    throw IoError(path.string() + ": bad IDX magic at byte offset 0");
  const int dtype = static_cast<unsigned char>(s[2]);
  const int ndim = static_cast<unsigned char>(s[3]);
  if (dtype != 0x08)
    throw IoError(path.string() + ": unsupported IDX dtype 0x" +
                  std::to_string(dtype) + " at byte offset 2 (want u8)");
  if (ndim != 3 && ndim != 4)
    throw IoError(path.string() + ": IDX rank " + std::to_string(ndim) +
                  " at byte offset 3 (want 3 or 4)");
  const std::size_t hdr = 4 + 4 * static_cast<std::size_t>(ndim);
  if (s.size() < hdr)
    throw IoError(path.string() + ": truncated IDX extents at byte offset 4");
  std::vector<int> dims;
  for (int i = 0; i < ndim; ++i)
    dims.push_back(static_cast<int>(detail::be32(s, 4 + 4 * static_cast<std::size_t>(i))));
  const int n = dims[0];
  const int c = ndim == 4 ? dims[1] : 1;
  const int h = ndim == 4 ? dims[2] : dims[1];
  const int w = ndim == 4 ? dims[3] : dims[2];
  const std::size_t want = static_cast<std::size_t>(n) * c * h * w;
  if (s.size() != hdr + want)
    throw IoError(path.string() + ": payload is " +
                  std::to_string(s.size() - hdr) + " bytes at byte offset " +
                  std::to_string(hdr) + ", header declares " +
                  std::to_string(want));
  Tensor out({n, c, h, w});
  auto d = out.data();
  for (std::size_t i = 0; i < want; ++i)
    d[i] = static_cast<float>(static_cast<unsigned char>(s[hdr + i]));
  return out;
}

inline std::vector<int> load_idx_labels(const std::filesystem::path& path) {
  const std::string s = detail::read_file(path);
  if (s.size() < 8 || s[0] != 0 || s[1] != 0)
    throw IoError(path.string() + ": bad IDX label header at byte offset 0");
  if (static_cast<unsigned char>(s[2]) != 0x08 ||
      static_cast<unsigned char>(s[3]) != 1)
    throw IoError(path.string() + ": IDX labels must be u8 rank 1");
  const std::uint32_t n = detail::be32(s, 4);
  if (s.size() != 8 + n)
    throw IoError(path.string() + ": label payload is " +
                  std::to_string(s.size() - 8) + " bytes at byte offset 8, " +
                  "header declares " + std::to_string(n));
  std::vector<int> out(n);
  for (std::uint32_t i = 0; i < n; ++i)
    out[i] = static_cast<int>(static_cast<unsigned char>(s[8 + i]));
  return out;
}

inline Dataset load_idx_pair(const std::filesystem::path& images,
                             const std::filesystem::path& labels, int classes) {
  Dataset d;
  d.images = load_idx_images(images);
  d.labels = load_idx_labels(labels);
  d.classes = classes;
  d.validate();
  return d;
}

// Images rounded to u8. Rank 3 for single channel, rank 4 otherwise.
inline void save_idx_images(const Tensor& images,
                            const std::filesystem::path& path) {
  if (images.ndim() != 4) throw ConfigError("save_idx_images: want (N,C,H,W)");
  const int n = images.dim(0), c = images.dim(1), h = images.dim(2),
            w = images.dim(3);
  std::string s;
  s.push_back(0);
  s.push_back(0);
  s.push_back(0x08);
  s.push_back(c == 1 ? 3 : 4);
  detail::put_be32(s, static_cast<std::uint32_t>(n));
  if (c != 1) detail::put_be32(s, static_cast<std::uint32_t>(c));
  detail::put_be32(s, static_cast<std::uint32_t>(h));
  detail::put_be32(s, static_cast<std::uint32_t>(w));
  for (float v : images.data()) {
    const long r = std::lround(static_cast<double>(v));
    s.push_back(static_cast<char>(static_cast<unsigned char>(
        r < 0 ? 0 : (r > 255 ? 255 : r))));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void save_idx_labels(const std::vector<int>& labels,
                            const std::filesystem::path& path) {
  std::string s;
  s.push_back(0);
  s.push_back(0);
  s.push_back(0x08);
  s.push_back(1);
  detail::put_be32(s, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) s.push_back(static_cast<char>(static_cast<unsigned char>(l)));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

// ---------------------------------------------------------------------------
// CIFAR binary: 3073-byte records, one label byte then 3072 channel-planar
// pixel bytes (3 x 32 x 32).
// ---------------------------------------------------------------------------

inline Dataset load_cifar_binary(const std::vector<std::filesystem::path>& files,
                                 int classes = 10) {
  constexpr std::size_t kRecord = 3073;
  std::vector<std::string> blobs;
  std::size_t total = 0;
  for (const auto& f : files) {
    blobs.push_back(detail::read_file(f));
    if (blobs.back().size() % kRecord != 0)
      throw IoError(f.string() + ": size " + std::to_string(blobs.back().size()) +
                    " is not a multiple of the 3073-byte record (offset " +
                    std::to_string(blobs.back().size() / kRecord * kRecord) +
                    ")");
    total += blobs.back().size() / kRecord;
  }
  Dataset d;
  d.classes = classes;
  d.images = Tensor({static_cast<int>(total), 3, 32, 32});
  d.labels.resize(total);
  std::size_t ix = 0;
  for (const auto& blob : blobs)
    for (std::size_t r = 0; r + kRecord <= blob.size(); r += kRecord, ++ix) {
      d.labels[ix] = static_cast<int>(static_cast<unsigned char>(blob[r]));
      float* dst = d.images.data().data() + ix * 3072;
      for (std::size_t i = 0; i < 3072; ++i)
        dst[i] = static_cast<float>(static_cast<unsigned char>(blob[r + 1 + i]));
    }
  d.validate();
  return d;
}

inline void save_cifar_binary(const Tensor& images,
                              const std::vector<int>& labels,
                              const std::filesystem::path& path) {
  if (images.ndim() != 4 || images.dim(1) != 3 || images.dim(2) != 32 ||
      images.dim(3) != 32)
    throw ConfigError("save_cifar_binary: records are fixed at (N,3,32,32)");
  if (static_cast<std::int64_t>(labels.size()) != images.dim(0))
    throw ConfigError("save_cifar_binary: label count mismatch");
  std::string s;
  s.reserve(static_cast<std::size_t>(images.dim(0)) * 3073);
  for (std::int64_t i = 0; i < images.dim(0); ++i) {
    s.push_back(static_cast<char>(
        static_cast<unsigned char>(labels[static_cast<std::size_t>(i)])));
    const float* src = images.data().data() + i * 3072;
    for (int p = 0; p < 3072; ++p) {
      const long r = std::lround(static_cast<double>(src[p]));
      s.push_back(static_cast<char>(
          static_cast<unsigned char>(r < 0 ? 0 : (r > 255 ? 255 : r))));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

// ---------------------------------------------------------------------------
// Synthetic sets. Deterministic across platforms: the generator uses only
// integer RNG draws and basic IEEE arithmetic (no libm transcendentals).
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  enum class Kind { Shapes, Gaussians } kind = Kind::Shapes;
  int classes = 4;
  int count = 1000;
  int height = 32, width = 32, channels = 1;
  double noise = 24.0;     // pixel noise amplitude
  int distractors = 2;     // clutter blobs per image (Shapes)
  std::uint64_t seed = 0;

  void validate() const {
    if (classes < 2 || classes > 10)
      throw ConfigError("synthetic: classes must be in [2,10]");
    if (count < 1) throw ConfigError("synthetic: count must be positive");
    if (height < 8 || width < 8) throw ConfigError("synthetic: image too small");
    if (channels != 1 && channels != 3)
      throw ConfigError("synthetic: channels must be 1 or 3");
    if (noise < 0) throw ConfigError("synthetic: noise must be >= 0");
  }
};

namespace detail {

// Approximate N(0,1) without libm: mean of 12 uniforms minus 6.
inline double irwin_hall(Rng& rng) {
  double s = 0;
  for (int i = 0; i < 12; ++i) s += rng.uniform01();
  return s - 6.0;
}

// Shape mask menu; all membership tests are polynomial inequalities.
inline bool shape_member(int cls, double u, double v, double r) {
  const double au = u < 0 ? -u : u, av = v < 0 ? -v : v;
  switch (cls) {
    case 0: return u * u + v * v <= r * r;                      // disk
    case 1: return au <= r && av <= r;                          // square
    case 2: return av <= r && au <= (r - (v + r) * 0.5);        // triangle
    case 3: {                                                   // ring
      const double q = u * u + v * v;
      return q <= r * r && q >= 0.36 * r * r;
    }
    case 4: return (au <= 0.35 * r && av <= r) ||               // cross
                   (av <= 0.35 * r && au <= r);
    case 5: return au + av <= r;                                // diamond
    case 6: return au <= r && av <= 0.45 * r;                   // bar
    case 7: {                                                   // X cross
      const double d1 = au - av < 0 ? av - au : au - av;
      return d1 <= 0.4 * r && au <= r && av <= r;
    }
    case 8: return au <= r && av <= r &&                        // frame
                   (au >= 0.55 * r || av >= 0.55 * r);
    case 9: return u * u + 4.0 * v * v <= r * r;                // ellipse
  }
  return false;
}

}  // namespace detail

inline Dataset make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng = Rng::derive(spec.seed, "synthetic");
  Dataset d;
  d.classes = spec.classes;
  d.images = Tensor({spec.count, spec.channels, spec.height, spec.width});
  d.labels.resize(static_cast<std::size_t>(spec.count));

  const int h = spec.height, w = spec.width, ch = spec.channels;
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  // Class templates for the Gaussians flavor: a fixed coarse pattern per
  // class, bilinearly upsampled.
  std::vector<std::vector<double>> templates;
  if (spec.kind == SyntheticSpec::Kind::Gaussians) {
    const int g = 4;
    for (int c = 0; c < spec.classes; ++c) {
      Rng crng = Rng::derive(spec.seed, "class-template#" + std::to_string(c));
      std::vector<double> grid(static_cast<std::size_t>(g) * g);
      for (auto& v : grid) v = 40.0 + 175.0 * crng.uniform01();
      std::vector<double> up(plane);
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          const double gi = static_cast<double>(i) * (g - 1) / (h - 1);
          const double gj = static_cast<double>(j) * (g - 1) / (w - 1);
          const int i0 = static_cast<int>(gi), j0 = static_cast<int>(gj);
          const int i1 = std::min(i0 + 1, g - 1), j1 = std::min(j0 + 1, g - 1);
          const double fi = gi - i0, fj = gj - j0;
          up[static_cast<std::size_t>(i) * w + j] =
              grid[static_cast<std::size_t>(i0) * g + j0] * (1 - fi) * (1 - fj) +
              grid[static_cast<std::size_t>(i1) * g + j0] * fi * (1 - fj) +
              grid[static_cast<std::size_t>(i0) * g + j1] * (1 - fi) * fj +
              grid[static_cast<std::size_t>(i1) * g + j1] * fi * fj;
        }
      templates.push_back(std::move(up));
    }
  }

  std::vector<double> canvas(plane);
  for (int n = 0; n < spec.count; ++n) {
    const int cls = static_cast<int>(rng.uniform_int(
        static_cast<std::uint64_t>(spec.classes)));
    d.labels[static_cast<std::size_t>(n)] = cls;

    if (spec.kind == SyntheticSpec::Kind::Shapes) {
      const double bg = 30.0 + 60.0 * rng.uniform01();
      const double fg = 165.0 + 90.0 * rng.uniform01();
      const double cy = h * (0.35 + 0.3 * rng.uniform01());
      const double cx = w * (0.35 + 0.3 * rng.uniform01());
      const double r = std::min(h, w) * (0.18 + 0.14 * rng.uniform01());
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
          canvas[static_cast<std::size_t>(i) * w + j] =
              detail::shape_member(cls, j - cx, i - cy, r) ? fg : bg;
      // Clutter blobs, class independent.
      for (int t = 0; t < spec.distractors; ++t) {
        const double by = h * rng.uniform01();
        const double bx = w * rng.uniform01();
        const double br = std::min(h, w) * (0.04 + 0.05 * rng.uniform01());
        const double bv = 60.0 + 140.0 * rng.uniform01();
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < w; ++j)
            if ((j - bx) * (j - bx) + (i - by) * (i - by) <= br * br)
              canvas[static_cast<std::size_t>(i) * w + j] = bv;
      }
    } else {
      const auto& tpl = templates[static_cast<std::size_t>(cls)];
      std::copy(tpl.begin(), tpl.end(), canvas.begin());
    }

    for (int c = 0; c < ch; ++c) {
      // A mild per-channel offset keeps channels distinct without changing
      // the class signal.
      const double chan_off = ch == 1 ? 0.0 : (c - 1) * 6.0;
      float* dst = d.images.data().data() +
                   (static_cast<std::size_t>(n) * ch + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        double v = canvas[p] + chan_off + spec.noise * detail::irwin_hall(rng);
        long q = std::lround(v);
        dst[p] = static_cast<float>(q < 0 ? 0 : (q > 255 ? 255 : q));
      }
    }
  }
  d.validate();
  return d;
}

}  // namespace fdn
