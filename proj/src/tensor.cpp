// SPDX-License-Identifier: Apache-2.0
#include "unitar/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>

#include "unitar/errors.hpp"

namespace unitar {

namespace {

uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

void check_positive_dims(uint32_t t, uint32_t h, uint32_t w, uint32_t c) {
  if (t == 0 || h == 0 || w == 0 || c == 0) {
    throw std::invalid_argument("volume dims must all be >= 1, got (" +
                                std::to_string(t) + "," + std::to_string(h) +
                                "," + std::to_string(w) + "," +
                                std::to_string(c) + ")");
  }
}

}  // namespace

Rng::Rng(uint64_t seed) : seed_(seed) {
  uint64_t x = seed;
  for (auto& word : s_) word = splitmix64(x);
}

uint64_t Rng::next_u64() {
  const uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

LatentVolume::LatentVolume(uint32_t t, uint32_t h, uint32_t w, uint32_t c)
    : t(t), h(h), w(w), c(c) {
  check_positive_dims(t, h, w, c);
  data.assign(static_cast<size_t>(t) * h * w * c, 0.0f);
}

LatentVolume::LatentVolume(uint32_t t, uint32_t h, uint32_t w, uint32_t c,
                           std::vector<float> values)
    : t(t), h(h), w(w), c(c), data(std::move(values)) {
  check_positive_dims(t, h, w, c);
  const size_t expected = static_cast<size_t>(t) * h * w * c;
  if (data.size() != expected) {
    throw std::invalid_argument("volume data length " +
                                std::to_string(data.size()) +
                                " != t*h*w*c = " + std::to_string(expected));
  }
  for (float v : data) {
    if (!std::isfinite(v)) {
      throw NumericError("volume contains a non-finite value");
    }
  }
}

LatentVolume gaussian_volume(uint32_t t, uint32_t h, uint32_t w, uint32_t c,
                             Rng& rng) {
  check_positive_dims(t, h, w, c);
  LatentVolume z(t, h, w, c);
  for (auto& v : z.data) v = rng.normal_f32();
  return z;
}

namespace {

// align-corners-false source coordinate and the two clamped neighbours
struct AxisSample {
  uint32_t lo, hi;
  double frac;
};

AxisSample axis_sample(uint32_t out_i, uint32_t in_size, uint32_t out_size) {
  if (in_size == out_size) return {out_i, out_i, 0.0};
  const double src = (out_i + 0.5) * (static_cast<double>(in_size) / out_size) - 0.5;
  const double floor_src = std::floor(src);
  auto clamp = [in_size](double v) -> uint32_t {
    if (v < 0.0) return 0;
    if (v > in_size - 1.0) return in_size - 1;
    return static_cast<uint32_t>(v);
  };
  return {clamp(floor_src), clamp(floor_src + 1.0), src - floor_src};
}

}  // namespace

LatentVolume resize_volume(const LatentVolume& z, uint32_t s_t, uint32_t s_h,
                           uint32_t s_w) {
  check_positive_dims(s_t, s_h, s_w, z.c);
  if (s_t == z.t && s_h == z.h && s_w == z.w) return z;

  LatentVolume out(s_t, s_h, s_w, z.c);
  for (uint32_t ot = 0; ot < s_t; ++ot) {
    const AxisSample st = axis_sample(ot, z.t, s_t);
    for (uint32_t oh = 0; oh < s_h; ++oh) {
      const AxisSample sh = axis_sample(oh, z.h, s_h);
      for (uint32_t ow = 0; ow < s_w; ++ow) {
        const AxisSample sw = axis_sample(ow, z.w, s_w);
        for (uint32_t ci = 0; ci < z.c; ++ci) {
          double acc = 0.0;
          for (int dt = 0; dt < 2; ++dt) {
            const double wt = dt ? st.frac : 1.0 - st.frac;
            if (wt == 0.0) continue;
            for (int dh = 0; dh < 2; ++dh) {
              const double wh = dh ? sh.frac : 1.0 - sh.frac;
              if (wh == 0.0) continue;
              for (int dw = 0; dw < 2; ++dw) {
                const double ww = dw ? sw.frac : 1.0 - sw.frac;
                if (ww == 0.0) continue;
                acc += wt * wh * ww *
                       z.at(dt ? st.hi : st.lo, dh ? sh.hi : sh.lo,
                            dw ? sw.hi : sw.lo, ci);
              }
            }
          }
          out.at(ot, oh, ow, ci) = static_cast<float>(acc);
        }
      }
    }
  }
  return out;
}

double l2_norm(std::span<const float> v) {
  double acc = 0.0;
  for (float x : v) acc += static_cast<double>(x) * x;
  return std::sqrt(acc);
}

double mean_of(std::span<const float> v) {
  if (v.empty()) return 0.0;
  double acc = 0.0;
  for (float x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

double variance_of(std::span<const float> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (float x : v) acc += (x - m) * (x - m);
  return acc / static_cast<double>(v.size() - 1);
}

namespace {

constexpr char kMagic[4] = {'V', 'L', 'A', 'T'};
constexpr uint16_t kVersion = 1;

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<uint8_t>& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const uint8_t> bytes) : bytes_(bytes) {}

  size_t offset() const { return pos_; }

  void need(size_t n, const char* what) const {
    if (pos_ + n > bytes_.size()) {
      throw FormatError(std::string("truncated input while reading ") + what,
                        pos_);
    }
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  uint16_t u16(const char* what) {
    need(2, what);
    uint16_t v = static_cast<uint16_t>(bytes_[pos_]) |
                 static_cast<uint16_t>(bytes_[pos_ + 1]) << 8;
    pos_ += 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) {
    uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const uint8_t> bytes_;
  size_t pos_ = 0;
};

}  // namespace

std::vector<uint8_t> latent_to_bytes(const LatentVolume& z) {
  std::vector<uint8_t> out;
  out.reserve(4 + 2 + 16 + z.data.size() * 4);
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u16(out, kVersion);
  put_u32(out, z.t);
  put_u32(out, z.h);
  put_u32(out, z.w);
  put_u32(out, z.c);
  for (float v : z.data) put_f32(out, v);
  return out;
}

LatentVolume latent_from_bytes(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("bad magic, expected \"VLAT\"", 0);
  }
  for (int i = 0; i < 4; ++i) r.u8("magic");
  const uint16_t version = r.u16("version");
  if (version != kVersion) {
    throw FormatError("unsupported version " + std::to_string(version),
                      r.offset() - 2);
  }
  const uint32_t t = r.u32("dim t");
  const uint32_t h = r.u32("dim h");
  const uint32_t w = r.u32("dim w");
  const uint32_t c = r.u32("dim c");
  if (t == 0 || h == 0 || w == 0 || c == 0) {
    throw FormatError("zero dimension in header", r.offset() - 16);
  }
  const uint64_t count =
      static_cast<uint64_t>(t) * h * static_cast<uint64_t>(w) * c;
  if (count > r.remaining() / 4) {
    throw FormatError("header declares " + std::to_string(count) +
                          " floats but payload holds only " +
                          std::to_string(r.remaining() / 4),
                      r.offset());
  }
  std::vector<float> values;
  values.reserve(count);
  for (uint64_t i = 0; i < count; ++i) values.push_back(r.f32("payload"));
  if (r.remaining() != 0) {
    throw FormatError("trailing bytes after payload", r.offset());
  }
  return LatentVolume(t, h, w, c, std::move(values));
}

void write_latent(const LatentVolume& z, const std::string& path) {
  const std::vector<uint8_t> bytes = latent_to_bytes(z);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for write: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

LatentVolume read_latent(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for read: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return latent_from_bytes(bytes);
}

}  // namespace unitar
