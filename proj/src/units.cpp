// SPDX-License-Identifier: Apache-2.0
#include "unitar/units.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "unitar/errors.hpp"

namespace unitar {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

std::string scheme_name(const UnitScheme& s) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, FrameScheme>) return "frame";
        if constexpr (std::is_same_v<T, KeyDetailScheme>) return "keydetail";
        if constexpr (std::is_same_v<T, CubeScheme>) return "cube";
        return "multiscale";
      },
      s);
}

std::string scheme_to_string(const UnitScheme& s) {
  std::ostringstream out;
  std::visit(
      [&out](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, FrameScheme>) {
          out << "frame";
        } else if constexpr (std::is_same_v<T, KeyDetailScheme>) {
          out << "keydetail:" << v.k;
        } else if constexpr (std::is_same_v<T, CubeScheme>) {
          out << "cube:" << v.k_t << "," << v.k_h << "," << v.k_w;
        } else {
          out << "multiscale:";
          for (size_t i = 0; i < v.scales.size(); ++i) {
            if (i) out << ";";
            out << v.scales[i][0] << "," << v.scales[i][1] << ","
                << v.scales[i][2];
          }
        }
      },
      s);
  return out.str();
}

void validate_scheme(const UnitScheme& s, uint32_t t, uint32_t h, uint32_t w) {
  require(t >= 1 && h >= 1 && w >= 1, "dims must be >= 1");
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, KeyDetailScheme>) {
          require(v.k >= 2, "keydetail: k must be >= 2, got " +
                                std::to_string(v.k));
          require(t % v.k == 0, "keydetail: k=" + std::to_string(v.k) +
                                    " does not divide T=" + std::to_string(t));
        } else if constexpr (std::is_same_v<T, CubeScheme>) {
          require(v.k_t >= 1 && v.k_h >= 1 && v.k_w >= 1,
                  "cube: sizes must be >= 1");
          require(t % v.k_t == 0, "cube: k_t=" + std::to_string(v.k_t) +
                                      " does not divide T=" + std::to_string(t));
          require(h % v.k_h == 0, "cube: k_h=" + std::to_string(v.k_h) +
                                      " does not divide H=" + std::to_string(h));
          require(w % v.k_w == 0, "cube: k_w=" + std::to_string(v.k_w) +
                                      " does not divide W=" + std::to_string(w));
        } else if constexpr (std::is_same_v<T, MultiscaleScheme>) {
          require(!v.scales.empty(), "multiscale: needs at least one scale");
          for (size_t i = 0; i < v.scales.size(); ++i) {
            const auto& sc = v.scales[i];
            require(sc[0] >= 1 && sc[1] >= 1 && sc[2] >= 1,
                    "multiscale: scale dims must be >= 1");
            if (i > 0) {
              const auto& prev = v.scales[i - 1];
              require(sc[0] >= prev[0] && sc[1] >= prev[1] && sc[2] >= prev[2],
                      "multiscale: scales must be elementwise nondecreasing");
              require(sc != prev, "multiscale: duplicate scale at position " +
                                      std::to_string(i));
            }
          }
          const auto& last = v.scales.back();
          require(last[0] == t && last[1] == h && last[2] == w,
                  "multiscale: final scale (" + std::to_string(last[0]) + "," +
                      std::to_string(last[1]) + "," + std::to_string(last[2]) +
                      ") must equal dims (" + std::to_string(t) + "," +
                      std::to_string(h) + "," + std::to_string(w) + ")");
        }
      },
      s);
}

uint32_t step_count(const UnitScheme& s, uint32_t t, uint32_t h, uint32_t w) {
  validate_scheme(s, t, h, w);
  return std::visit(
      [&](const auto& v) -> uint32_t {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, FrameScheme>) {
          return t;
        } else if constexpr (std::is_same_v<T, KeyDetailScheme>) {
          return v.k;
        } else if constexpr (std::is_same_v<T, CubeScheme>) {
          return (t / v.k_t) * (h / v.k_h) * (w / v.k_w);
        } else {
          return static_cast<uint32_t>(v.scales.size());
        }
      },
      s);
}

std::vector<std::vector<std::array<uint32_t, 3>>> unit_ownerships(
    const UnitScheme& s, uint32_t t, uint32_t h, uint32_t w) {
  validate_scheme(s, t, h, w);
  std::vector<std::vector<std::array<uint32_t, 3>>> owners;

  auto frame_voxels = [&](uint32_t ti) {
    std::vector<std::array<uint32_t, 3>> vox;
    vox.reserve(static_cast<size_t>(h) * w);
    for (uint32_t hi = 0; hi < h; ++hi)
      for (uint32_t wi = 0; wi < w; ++wi) vox.push_back({ti, hi, wi});
    return vox;
  };

  if (std::holds_alternative<FrameScheme>(s)) {
    owners.reserve(t);
    for (uint32_t ti = 0; ti < t; ++ti) owners.push_back(frame_voxels(ti));
  } else if (const auto* kd = std::get_if<KeyDetailScheme>(&s)) {
    owners.reserve(kd->k);
    for (uint32_t j = 0; j < kd->k; ++j) {
      std::vector<std::array<uint32_t, 3>> vox;
      for (uint32_t ti = j; ti < t; ti += kd->k) {
        auto f = frame_voxels(ti);
        vox.insert(vox.end(), f.begin(), f.end());
      }
      owners.push_back(std::move(vox));
    }
  } else if (const auto* cu = std::get_if<CubeScheme>(&s)) {
    // time-major raster over cube grid; row-major (t, h, w) inside a cube
    const uint32_t nt = t / cu->k_t, nh = h / cu->k_h, nw = w / cu->k_w;
    owners.reserve(static_cast<size_t>(nt) * nh * nw);
    for (uint32_t ct = 0; ct < nt; ++ct)
      for (uint32_t ch = 0; ch < nh; ++ch)
        for (uint32_t cw = 0; cw < nw; ++cw) {
          std::vector<std::array<uint32_t, 3>> vox;
          vox.reserve(static_cast<size_t>(cu->k_t) * cu->k_h * cu->k_w);
          for (uint32_t dt = 0; dt < cu->k_t; ++dt)
            for (uint32_t dh = 0; dh < cu->k_h; ++dh)
              for (uint32_t dw = 0; dw < cu->k_w; ++dw)
                vox.push_back({ct * cu->k_t + dt, ch * cu->k_h + dh,
                               cw * cu->k_w + dw});
          owners.push_back(std::move(vox));
        }
  } else {
    throw std::invalid_argument(
        "multiscale units have no voxel ownership; use scale dims");
  }
  return owners;
}

UnitSequence partition(const LatentVolume& z, const UnitScheme& s) {
  validate_scheme(s, z.t, z.h, z.w);
  UnitSequence seq;
  seq.scheme = s;
  seq.dims = {z.t, z.h, z.w, z.c};

  if (const auto* ms = std::get_if<MultiscaleScheme>(&s)) {
    seq.units.reserve(ms->scales.size());
    for (size_t level = 0; level < ms->scales.size(); ++level) {
      const auto& sc = ms->scales[level];
      LatentVolume resized = resize_volume(z, sc[0], sc[1], sc[2]);
      Unit u;
      u.index = static_cast<uint32_t>(level);
      u.is_scale = true;
      u.scale_level = static_cast<uint32_t>(level);
      u.scale_dims = sc;
      u.payload = std::move(resized.data);
      seq.units.push_back(std::move(u));
    }
    return seq;
  }

  auto owners = unit_ownerships(s, z.t, z.h, z.w);
  seq.units.reserve(owners.size());
  for (size_t i = 0; i < owners.size(); ++i) {
    Unit u;
    u.index = static_cast<uint32_t>(i);
    u.ownership = std::move(owners[i]);
    u.payload.reserve(u.ownership.size() * z.c);
    for (const auto& vox : u.ownership)
      for (uint32_t ci = 0; ci < z.c; ++ci)
        u.payload.push_back(z.at(vox[0], vox[1], vox[2], ci));
    seq.units.push_back(std::move(u));
  }
  return seq;
}

LatentVolume reconstruct(const UnitSequence& seq) {
  const auto [t, h, w, c] = seq.dims;
  if (seq.units.size() != step_count(seq.scheme, t, h, w)) {
    throw IntegrityError("unit count " + std::to_string(seq.units.size()) +
                         " != step_count " +
                         std::to_string(step_count(seq.scheme, t, h, w)));
  }

  if (std::holds_alternative<MultiscaleScheme>(seq.scheme)) {
    const Unit& finest = seq.units.back();
    if (!finest.is_scale || finest.scale_dims != std::array<uint32_t, 3>{t, h, w}) {
      throw IntegrityError("finest multiscale unit does not match dims");
    }
    return LatentVolume(t, h, w, c, finest.payload);
  }

  LatentVolume out(t, h, w, c);
  std::vector<uint8_t> seen(static_cast<size_t>(t) * h * w, 0);
  for (const Unit& u : seq.units) {
    if (u.payload.size() != u.ownership.size() * c) {
      throw IntegrityError("unit " + std::to_string(u.index) +
                           " payload length does not match ownership");
    }
    for (size_t vi = 0; vi < u.ownership.size(); ++vi) {
      const auto& vox = u.ownership[vi];
      if (vox[0] >= t || vox[1] >= h || vox[2] >= w) {
        throw IntegrityError("unit " + std::to_string(u.index) +
                             " owns out-of-range voxel");
      }
      const size_t flat = (static_cast<size_t>(vox[0]) * h + vox[1]) * w + vox[2];
      if (seen[flat]) {
        throw IntegrityError("ownership overlap at voxel (" +
                             std::to_string(vox[0]) + "," +
                             std::to_string(vox[1]) + "," +
                             std::to_string(vox[2]) + ")");
      }
      seen[flat] = 1;
      for (uint32_t ci = 0; ci < c; ++ci)
        out.at(vox[0], vox[1], vox[2], ci) = u.payload[vi * c + ci];
    }
  }
  for (size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) {
      throw IntegrityError("ownership gap: voxel " + std::to_string(i) +
                           " never written");
    }
  }
  return out;
}

UnitLayout layout_of(const UnitSequence& seq, uint32_t tokens_per_voxel) {
  require(tokens_per_voxel >= 1, "tokens_per_voxel must be >= 1");
  UnitLayout lay;
  lay.tokens_per_unit.reserve(seq.units.size());
  lay.offsets.reserve(seq.units.size() + 1);
  lay.offsets.push_back(0);
  for (const Unit& u : seq.units) {
    const uint64_t voxels =
        u.is_scale ? static_cast<uint64_t>(u.scale_dims[0]) * u.scale_dims[1] *
                         u.scale_dims[2]
                   : u.ownership.size();
    const uint32_t tokens = static_cast<uint32_t>(voxels * tokens_per_voxel);
    lay.tokens_per_unit.push_back(tokens);
    lay.offsets.push_back(lay.offsets.back() + tokens);
  }
  lay.total_tokens = lay.offsets.back();
  return lay;
}

UnitLayout layout_for(const UnitScheme& s, uint32_t t, uint32_t h, uint32_t w,
                      uint32_t tokens_per_voxel) {
  validate_scheme(s, t, h, w);
  require(tokens_per_voxel >= 1, "tokens_per_voxel must be >= 1");
  UnitLayout lay;
  lay.offsets.push_back(0);
  auto push = [&](uint64_t voxels) {
    const uint32_t tokens = static_cast<uint32_t>(voxels * tokens_per_voxel);
    lay.tokens_per_unit.push_back(tokens);
    lay.offsets.push_back(lay.offsets.back() + tokens);
  };
  if (const auto* ms = std::get_if<MultiscaleScheme>(&s)) {
    for (const auto& sc : ms->scales)
      push(static_cast<uint64_t>(sc[0]) * sc[1] * sc[2]);
  } else {
    for (const auto& own : unit_ownerships(s, t, h, w)) push(own.size());
  }
  lay.total_tokens = lay.offsets.back();
  return lay;
}

// ---------------------------------------------------------------------------
// unit-sequence serialization

namespace {

constexpr char kMagic[4] = {'V', 'U', 'S', 'Q'};
constexpr uint16_t kVersion = 1;

void put_u8(std::vector<uint8_t>& out, uint8_t v) { out.push_back(v); }
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

struct Cursor {
  std::span<const uint8_t> bytes;
  size_t pos = 0;

  void need(size_t n, const char* what) const {
    if (pos + n > bytes.size())
      throw FormatError(std::string("truncated input while reading ") + what, pos);
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return bytes[pos++];
  }
  uint16_t u16(const char* what) {
    need(2, what);
    uint16_t v = static_cast<uint16_t>(bytes[pos]) |
                 static_cast<uint16_t>(bytes[pos + 1]) << 8;
    pos += 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  float f32(const char* what) {
    uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

}  // namespace

std::vector<uint8_t> units_to_bytes(const UnitSequence& seq) {
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u16(out, kVersion);
  std::visit(
      [&out](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, FrameScheme>) {
          put_u8(out, 0);
        } else if constexpr (std::is_same_v<T, KeyDetailScheme>) {
          put_u8(out, 1);
          put_u32(out, v.k);
        } else if constexpr (std::is_same_v<T, CubeScheme>) {
          put_u8(out, 2);
          put_u32(out, v.k_t);
          put_u32(out, v.k_h);
          put_u32(out, v.k_w);
        } else {
          put_u8(out, 3);
          put_u32(out, static_cast<uint32_t>(v.scales.size()));
          for (const auto& sc : v.scales) {
            put_u32(out, sc[0]);
            put_u32(out, sc[1]);
            put_u32(out, sc[2]);
          }
        }
      },
      seq.scheme);
  for (uint32_t d : seq.dims) put_u32(out, d);
  put_u32(out, static_cast<uint32_t>(seq.units.size()));
  for (const Unit& u : seq.units) {
    put_u32(out, u.index);
    if (u.is_scale) {
      put_u8(out, 1);
      put_u32(out, u.scale_level);
      put_u32(out, u.scale_dims[0]);
      put_u32(out, u.scale_dims[1]);
      put_u32(out, u.scale_dims[2]);
    } else {
      put_u8(out, 0);
      put_u32(out, static_cast<uint32_t>(u.ownership.size()));
      for (const auto& vox : u.ownership) {
        put_u32(out, vox[0]);
        put_u32(out, vox[1]);
        put_u32(out, vox[2]);
      }
    }
    for (float v : u.payload) put_f32(out, v);
  }
  return out;
}

UnitSequence units_from_bytes(std::span<const uint8_t> bytes) {
  Cursor r{bytes};
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("bad magic, expected \"VUSQ\"", 0);
  r.pos = 4;
  if (r.u16("version") != kVersion)
    throw FormatError("unsupported version", r.pos - 2);

  UnitSequence seq;
  const uint8_t tag = r.u8("scheme tag");
  switch (tag) {
    case 0:
      seq.scheme = FrameScheme{};
      break;
    case 1:
      seq.scheme = KeyDetailScheme{r.u32("keydetail k")};
      break;
    case 2: {
      CubeScheme cu;
      cu.k_t = r.u32("cube k_t");
      cu.k_h = r.u32("cube k_h");
      cu.k_w = r.u32("cube k_w");
      seq.scheme = cu;
      break;
    }
    case 3: {
      MultiscaleScheme ms;
      const uint32_t n = r.u32("scale count");
      for (uint32_t i = 0; i < n; ++i) {
        std::array<uint32_t, 3> sc{};
        sc[0] = r.u32("scale t");
        sc[1] = r.u32("scale h");
        sc[2] = r.u32("scale w");
        ms.scales.push_back(sc);
      }
      seq.scheme = ms;
      break;
    }
    default:
      throw FormatError("unknown scheme tag " + std::to_string(tag), r.pos - 1);
  }
  for (auto& d : seq.dims) d = r.u32("dims");
  const uint32_t c = seq.dims[3];
  const uint32_t n_units = r.u32("unit count");
  for (uint32_t i = 0; i < n_units; ++i) {
    Unit u;
    u.index = r.u32("unit index");
    const uint8_t kind = r.u8("unit kind");
    uint64_t voxels = 0;
    if (kind == 1) {
      u.is_scale = true;
      u.scale_level = r.u32("scale level");
      u.scale_dims[0] = r.u32("scale dims t");
      u.scale_dims[1] = r.u32("scale dims h");
      u.scale_dims[2] = r.u32("scale dims w");
      voxels = static_cast<uint64_t>(u.scale_dims[0]) * u.scale_dims[1] *
               u.scale_dims[2];
    } else if (kind == 0) {
      const uint32_t count = r.u32("voxel count");
      u.ownership.reserve(count);
      for (uint32_t vi = 0; vi < count; ++vi) {
        std::array<uint32_t, 3> vox{};
        vox[0] = r.u32("voxel t");
        vox[1] = r.u32("voxel h");
        vox[2] = r.u32("voxel w");
        u.ownership.push_back(vox);
      }
      voxels = count;
    } else {
      throw FormatError("unknown unit kind " + std::to_string(kind), r.pos - 1);
    }
    const uint64_t payload_len = voxels * c;
    u.payload.reserve(payload_len);
    for (uint64_t p = 0; p < payload_len; ++p)
      u.payload.push_back(r.f32("payload"));
    seq.units.push_back(std::move(u));
  }
  if (r.pos != bytes.size())
    throw FormatError("trailing bytes after last unit", r.pos);
  return seq;
}

void write_units(const UnitSequence& seq, const std::string& path) {
  const auto bytes = units_to_bytes(seq);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for write: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

UnitSequence read_units(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for read: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return units_from_bytes(bytes);
}

}  // namespace unitar
