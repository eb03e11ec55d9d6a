// On-disk formats: the GDAP binary tensor file, 8-bit binary PGM (P5), and
// checkpoint directories (one GDAP file per parameter plus a manifest).

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gatedap/param.hpp"
#include "gatedap/tensor.hpp"

namespace gatedap {

namespace fs = std::filesystem;
using json = nlohmann::json;

// GDAP layout: magic "GDAP", u8 version=1, u8 dtype (0=f32, 1=f64), u8 rank,
// u32 little-endian dims, then row-major little-endian values.

inline void write_gdap(const fs::path& path, const Tensor& t, bool as_f32 = false) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open for write: " + path.string());
  f.write("GDAP", 4);
  const std::uint8_t version = 1;
  const std::uint8_t dtype = as_f32 ? 0 : 1;
  const std::uint8_t rank = static_cast<std::uint8_t>(t.rank());
  f.put(static_cast<char>(version));
  f.put(static_cast<char>(dtype));
  f.put(static_cast<char>(rank));
  for (auto d : t.shape()) {
    const std::uint32_t dim = static_cast<std::uint32_t>(d);
    f.write(reinterpret_cast<const char*>(&dim), 4);
  }
  if (as_f32) {
    std::vector<float> buf(t.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(t.value()[i]);
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  } else {
    f.write(reinterpret_cast<const char*>(t.value().data()),
            static_cast<std::streamsize>(t.size() * 8));
  }
  if (!f) throw InputError("write failed: " + path.string());
}

inline Tensor read_gdap(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("missing file: " + path.string());
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "GDAP", 4) != 0)
    throw FormatError("bad GDAP magic in " + path.string());
  const int version = f.get();
  const int dtype = f.get();
  const int rank = f.get();
  if (version != 1) throw FormatError("unsupported GDAP version in " + path.string());
  if (dtype != 0 && dtype != 1) throw FormatError("unknown GDAP dtype in " + path.string());
  Shape shape(static_cast<std::size_t>(rank));
  for (auto& d : shape) {
    std::uint32_t dim = 0;
    f.read(reinterpret_cast<char*>(&dim), 4);
    d = dim;
  }
  const std::size_t n = numel(shape);
  std::vector<real> values(n);
  if (dtype == 0) {
    std::vector<float> buf(n);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 4));
    for (std::size_t i = 0; i < n; ++i) values[i] = buf[i];
  } else {
    f.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * 8));
  }
  if (!f) throw FormatError("truncated GDAP file: " + path.string());
  return Tensor::from_values(std::move(shape), std::move(values));
}

// ---------------------------------------------------------------------------
// PGM (P5), 8-bit
// ---------------------------------------------------------------------------

inline void write_pgm(const fs::path& path, std::size_t h, std::size_t w,
                      const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != h * w) throw ShapeError("write_pgm size mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open for write: " + path.string());
  f << "P5\n" << w << " " << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!f) throw InputError("write failed: " + path.string());
}

inline void read_pgm(const fs::path& path, std::size_t& h, std::size_t& w,
                     std::vector<std::uint8_t>& pixels) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("missing file: " + path.string());
  std::string magic;
  f >> magic;
  if (magic != "P5") throw FormatError("bad PGM magic in " + path.string());
  std::size_t maxval = 0;
  f >> w >> h >> maxval;
  if (!f || maxval != 255) throw FormatError("unsupported PGM header in " + path.string());
  f.get();  // single whitespace after header
  pixels.resize(h * w);
  f.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!f) throw FormatError("truncated PGM file: " + path.string());
}

// Saliency map in [0,1] quantized to 8 bits.
inline void write_pgm_map(const fs::path& path, std::size_t h, std::size_t w,
                          const std::vector<real>& map) {
  std::vector<std::uint8_t> px(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) {
    real v = std::min(1.0, std::max(0.0, map[i]));
    px[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  write_pgm(path, h, w, px);
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

inline void save_checkpoint(const ParamStore& store, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "gatedap-checkpoint";
  manifest["version"] = 1;
  json entries = json::object();
  for (const auto& [name, t] : store) {
    const std::string file = name + ".gdap";
    write_gdap(dir / file, t);
    json e;
    e["file"] = file;
    e["shape"] = t.shape();
    e["dtype"] = "f64";
    e["trainable"] = t.requires_grad();
    entries[name] = e;
  }
  manifest["tensors"] = entries;
  std::ofstream f(dir / "manifest.json");
  f << manifest.dump(2) << "\n";
}

// Loads into an already-constructed store; every stored parameter must exist
// with a matching shape.
inline void load_checkpoint(ParamStore& store, const fs::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw InputError("missing file: " + (dir / "manifest.json").string());
  json manifest = json::parse(f);
  for (auto& [name, e] : manifest.at("tensors").items()) {
    Tensor t = read_gdap(dir / e.at("file").get<std::string>());
    Tensor& dst = store.at(name);
    if (t.shape() != dst.shape())
      throw ShapeError("checkpoint shape mismatch for " + name + ": " + shape_str(t.shape()) +
                       " vs " + shape_str(dst.shape()));
    dst.value() = t.value();
  }
}

}  // namespace gatedap
