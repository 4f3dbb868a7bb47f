#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>
#include <png.h>

#include "scl/train.hpp"

namespace scl {

// Error taxonomy used by the command line tool to pick its exit category.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr std::uint32_t kWeightFormatVersion = 1;  // "SCLW" container
constexpr std::uint32_t kClipFormatVersion = 1;    // "CLP1" container

namespace detail {

constexpr std::int64_t align64(std::int64_t n) { return (n + 63) & ~std::int64_t(63); }

inline void put_u32le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32le(const std::string& buf, std::int64_t at) {
  const auto b = [&](int k) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(buf[static_cast<size_t>(at + k)]));
  };
  return b(0) | (b(1) << 8) | (b(2) << 16) | (b(3) << 24);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path);
  return buf;
}

inline void write_file(const std::string& path, const std::string& buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed for " + path);
}

inline void png_quiet_error(png_structp png, png_const_charp) { png_longjmp(png, 1); }
inline void png_quiet_warning(png_structp, png_const_charp) {}

}  // namespace detail

// ---- SCLW weight container -----------------------------------------------------
//
// Layout: magic "SCLW" | u32 LE version | u32 LE manifest byte length |
// manifest (UTF-8 JSON array of {name, shape, dtype, byte_offset}) | payload.
// The payload base is the manifest end rounded up to 64 bytes; byte_offset is
// relative to that base and every tensor start is 64-byte aligned. Values are
// little-endian f32.

inline std::string serialize_weights(const WeightStore<float>& store) {
  nlohmann::json manifest = nlohmann::json::array();
  std::int64_t cursor = 0;
  std::vector<std::int64_t> offsets;
  for (const auto& [name, tensor] : store.entries) {
    offsets.push_back(cursor);
    nlohmann::json item;
    item["name"] = name;
    item["shape"] = tensor.shape;
    item["dtype"] = "f32";
    item["byte_offset"] = cursor;
    manifest.push_back(item);
    cursor = detail::align64(cursor + tensor.size() * 4);
  }
  const std::string mtext = manifest.dump();

  std::string out;
  out += "SCLW";
  detail::put_u32le(out, kWeightFormatVersion);
  detail::put_u32le(out, static_cast<std::uint32_t>(mtext.size()));
  out += mtext;
  const std::int64_t base = detail::align64(static_cast<std::int64_t>(out.size()));
  for (size_t i = 0; i < store.entries.size(); ++i) {
    out.resize(static_cast<size_t>(base + offsets[i]), '\0');
    const auto& t = store.entries[i].second;
    const char* raw = reinterpret_cast<const char*>(t.data.data());
    out.append(raw, static_cast<size_t>(t.size() * 4));
  }
  return out;
}

inline WeightStore<float> deserialize_weights(const std::string& buf, const std::string& origin) {
  const std::int64_t size = static_cast<std::int64_t>(buf.size());
  if (size < 12 || buf.compare(0, 4, "SCLW") != 0)
    throw FormatError("sclw: bad magic at byte 0 in " + origin);
  const std::uint32_t version = detail::get_u32le(buf, 4);
  if (version != kWeightFormatVersion)
    throw FormatError("sclw: unsupported version " + std::to_string(version) + " at byte 4 in " +
                      origin);
  const std::int64_t mlen = detail::get_u32le(buf, 8);
  if (12 + mlen > size)
    throw FormatError("sclw: manifest length " + std::to_string(mlen) +
                      " overruns file size " + std::to_string(size) + " at byte 8 in " + origin);

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(buf.substr(12, static_cast<size_t>(mlen)));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("sclw: manifest parse failure at byte 12 in " + origin + ": " + e.what());
  }
  if (!manifest.is_array())
    throw FormatError("sclw: manifest must be a JSON array at byte 12 in " + origin);

  const std::int64_t base = detail::align64(12 + mlen);
  WeightStore<float> store;
  store.provenance = origin;
  std::vector<std::pair<std::int64_t, std::int64_t>> spans;  // {start, end} absolute
  for (const auto& item : manifest) {
    if (!item.is_object() || !item.contains("name") || !item.contains("shape") ||
        !item.contains("dtype") || !item.contains("byte_offset"))
      throw FormatError("sclw: manifest entry missing a required field in " + origin);
    const std::string name = item.at("name").get<std::string>();
    const std::string dtype = item.at("dtype").get<std::string>();
    if (dtype != "f32")
      throw FormatError("sclw: tensor '" + name + "' has unsupported dtype '" + dtype + "' in " +
                        origin);
    Shape shape = item.at("shape").get<Shape>();
    std::int64_t elems = 1;
    for (int d : shape) {
      if (d < 0)
        throw FormatError("sclw: tensor '" + name + "' has negative extent in " + origin);
      elems *= d;
    }
    const std::int64_t rel = item.at("byte_offset").get<std::int64_t>();
    const std::int64_t abs = base + rel;
    if (rel < 0 || rel % 64 != 0)
      throw FormatError("sclw: tensor '" + name + "' offset " + std::to_string(rel) +
                        " is not 64-byte aligned at byte " + std::to_string(abs) + " in " + origin);
    const std::int64_t end = abs + elems * 4;
    if (end > size)
      throw FormatError("sclw: tensor '" + name + "' payload [" + std::to_string(abs) + ", " +
                        std::to_string(end) + ") overruns file size " + std::to_string(size) +
                        " in " + origin);
    for (size_t i = 0; i < spans.size(); ++i)
      if (abs < spans[i].second && spans[i].first < end)
        throw FormatError("sclw: tensor '" + name + "' payload overlaps tensor '" +
                          store.entries[i].first + "' at byte " + std::to_string(abs) + " in " +
                          origin);
    spans.emplace_back(abs, end);

    Tensor<float> t(shape);
    std::copy_n(reinterpret_cast<const float*>(buf.data() + abs), t.size(), t.data.begin());
    store.add(name, std::move(t));
  }
  return store;
}

inline void write_weights(const std::string& path, const WeightStore<float>& store) {
  detail::write_file(path, serialize_weights(store));
}

inline WeightStore<float> read_weights(const std::string& path) {
  return deserialize_weights(detail::read_file(path), path);
}

template <typename T>
inline WeightStore<float> export_weights(Model<T>& m) {
  WeightStore<float> store;
  store.provenance = "model-export";
  for_each_model_tensor(
      m, [&](const std::string& name, Tensor<T>& t, bool) { store.add(name, t.template cast<float>()); });
  return store;
}

template <typename T>
inline ImportReport import_into_model(Model<T>& m, const WeightStore<float>& store) {
  WeightStore<T> converted;
  converted.provenance = store.provenance;
  for (const auto& [name, tensor] : store.entries) converted.add(name, tensor.template cast<T>());
  std::vector<std::pair<std::string, Tensor<T>*>> params;
  for_each_model_tensor(m,
                        [&](const std::string& name, Tensor<T>& t, bool) { params.emplace_back(name, &t); });
  return import_weights(params, converted);
}

// Two-column plain text mapping for renaming tensors imported from elsewhere:
// one "<source-name> <target-name>" pair per line, '#' starts a comment.
inline std::map<std::string, std::string> parse_name_map(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream row(line);
    std::string from, to, extra;
    if (!(row >> from)) continue;  // blank line
    if (!(row >> to) || (row >> extra))
      throw FormatError("name map line " + std::to_string(lineno) +
                        ": expected exactly two columns");
    if (!out.emplace(from, to).second)
      throw FormatError("name map line " + std::to_string(lineno) + ": duplicate source name '" +
                        from + "'");
  }
  return out;
}

inline WeightStore<float> rename_entries(const WeightStore<float>& store,
                                         const std::map<std::string, std::string>& names) {
  WeightStore<float> out;
  out.provenance = store.provenance;
  for (const auto& [name, tensor] : store.entries) {
    auto it = names.find(name);
    out.add(it == names.end() ? name : it->second, tensor);
  }
  return out;
}

// ---- CLP1 preprocessed clip container ----------------------------------------
//
// Layout: magic "CLP1" | u32 LE frames, height, width, channels | u32 LE dtype
// tag (0 = f32) | payload of frames*height*width*channels little-endian f32 in
// [0, 1].

inline std::string serialize_clip(const Tensor<float>& frames) {
  require_rank(frames, 4, "clp1");
  require_nonempty(frames, "clp1");
  for (std::int64_t i = 0; i < frames.size(); ++i) {
    const float v = frames[i];
    if (std::isnan(v) || v < 0.0f || v > 1.0f)
      throw FormatError("clp1: value " + std::to_string(v) + " at flat index " + std::to_string(i) +
                        " is outside [0, 1]");
  }
  std::string out;
  out += "CLP1";
  for (int d = 0; d < 4; ++d) detail::put_u32le(out, static_cast<std::uint32_t>(frames.extent(d)));
  detail::put_u32le(out, 0);  // dtype tag: f32
  out.append(reinterpret_cast<const char*>(frames.data.data()),
             static_cast<size_t>(frames.size() * 4));
  return out;
}

inline Tensor<float> deserialize_clip(const std::string& buf, const std::string& origin) {
  const std::int64_t size = static_cast<std::int64_t>(buf.size());
  if (size < 24 || buf.compare(0, 4, "CLP1") != 0)
    throw FormatError("clp1: bad magic at byte 0 in " + origin);
  Shape shape(4);
  for (int d = 0; d < 4; ++d) {
    const std::uint32_t v = detail::get_u32le(buf, 4 + 4 * d);
    if (v == 0 || v > (1u << 24))
      throw FormatError("clp1: bad extent " + std::to_string(v) + " at byte " +
                        std::to_string(4 + 4 * d) + " in " + origin);
    shape[static_cast<size_t>(d)] = static_cast<int>(v);
  }
  const std::uint32_t tag = detail::get_u32le(buf, 20);
  if (tag != 0)
    throw FormatError("clp1: unsupported dtype tag " + std::to_string(tag) + " at byte 20 in " +
                      origin);
  Tensor<float> frames(shape);
  if (24 + frames.size() * 4 != size)
    throw FormatError("clp1: payload size " + std::to_string(size - 24) + " does not match " +
                      std::to_string(frames.size() * 4) + " expected from the header in " + origin);
  std::copy_n(reinterpret_cast<const float*>(buf.data() + 24), frames.size(), frames.data.begin());
  for (std::int64_t i = 0; i < frames.size(); ++i) {
    const float v = frames[i];
    if (std::isnan(v) || v < 0.0f || v > 1.0f)
      throw FormatError("clp1: value at byte " + std::to_string(24 + 4 * i) +
                        " is outside [0, 1] in " + origin);
  }
  return frames;
}

inline void write_clip(const std::string& path, const Tensor<float>& frames) {
  detail::write_file(path, serialize_clip(frames));
}

inline Tensor<float> read_clip_file(const std::string& path) {
  return deserialize_clip(detail::read_file(path), path);
}

// ---- image frames ---------------------------------------------------------------

// Binary 8-bit PPM (P6).
inline Tensor<float> read_ppm(const std::string& path) {
  const std::string buf = detail::read_file(path);
  size_t pos = 0;
  auto next_token = [&]() -> std::string {
    while (pos < buf.size()) {
      if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const size_t start = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (start == pos) throw FormatError("ppm: truncated header in " + path);
    return buf.substr(start, pos - start);
  };
  if (next_token() != "P6") throw FormatError("ppm: not a binary P6 file: " + path);
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token());
    h = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    throw FormatError("ppm: malformed header in " + path);
  }
  if (w < 1 || h < 1) throw FormatError("ppm: bad dimensions in " + path);
  if (maxval < 1 || maxval > 255)
    throw FormatError("ppm: only 8-bit files supported, maxval " + std::to_string(maxval) +
                      " in " + path);
  ++pos;  // single whitespace after maxval
  const std::int64_t need = static_cast<std::int64_t>(w) * h * 3;
  if (static_cast<std::int64_t>(buf.size()) - static_cast<std::int64_t>(pos) < need)
    throw FormatError("ppm: pixel data truncated in " + path);
  Tensor<float> img({h, w, 3});
  for (std::int64_t i = 0; i < need; ++i)
    img[i] = static_cast<float>(static_cast<unsigned char>(buf[pos + static_cast<size_t>(i)])) /
             static_cast<float>(maxval);
  return img;
}

inline void write_ppm(const std::string& path, const Tensor<float>& img) {
  require_rank(img, 3, "write_ppm");
  if (img.extent(2) != 3) throw std::invalid_argument("write_ppm: need 3 channels");
  std::string out = "P6\n" + std::to_string(img.extent(1)) + " " + std::to_string(img.extent(0)) +
                    "\n255\n";
  for (std::int64_t i = 0; i < img.size(); ++i) {
    const float v = std::clamp(img[i], 0.0f, 1.0f);
    out.push_back(static_cast<char>(std::lround(v * 255.0f)));
  }
  detail::write_file(path, out);
}

// 8-bit PNG decoded to RGB.
inline Tensor<float> read_png_file(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           detail::png_quiet_error, detail::png_quiet_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  std::vector<unsigned char> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0, height = 0;
  bool failed = true;
  if (png && info && setjmp(png_jmpbuf(png)) == 0) {
    png_init_io(png, fp);
    png_read_info(png, info);
    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
      png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    if (png_get_rowbytes(png, info) == static_cast<size_t>(width) * 3) {
      pixels.resize(static_cast<size_t>(width) * height * 3);
      rows.resize(height);
      for (png_uint_32 y = 0; y < height; ++y)
        rows[y] = pixels.data() + static_cast<size_t>(y) * width * 3;
      png_read_image(png, rows.data());
      png_read_end(png, nullptr);
      failed = false;
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  if (failed) throw FormatError("png: cannot decode " + path);

  Tensor<float> img({static_cast<int>(height), static_cast<int>(width), 3});
  for (std::int64_t i = 0; i < img.size(); ++i)
    img[i] = static_cast<float>(pixels[static_cast<size_t>(i)]) / 255.0f;
  return img;
}

inline void write_png_file(const std::string& path, const Tensor<float>& img) {
  require_rank(img, 3, "write_png");
  if (img.extent(2) != 3) throw std::invalid_argument("write_png: need 3 channels");
  const int h = img.extent(0), w = img.extent(1);
  std::vector<unsigned char> pixels(static_cast<size_t>(h) * w * 3);
  for (std::int64_t i = 0; i < img.size(); ++i)
    pixels[static_cast<size_t>(i)] =
        static_cast<unsigned char>(std::lround(std::clamp(img[i], 0.0f, 1.0f) * 255.0f));

  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot create " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            detail::png_quiet_error, detail::png_quiet_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<size_t>(y)] = pixels.data() + static_cast<size_t>(y) * w * 3;
  bool failed = true;
  if (png && info && setjmp(png_jmpbuf(png)) == 0) {
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    failed = false;
  }
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
  if (failed) throw IoError("png: cannot encode " + path);
}

// Reads a directory of frame images (.ppm/.png) in lexicographic order.
inline Clip ingest_image_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext == ".ppm" || ext == ".png") files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.size() < 2)
    throw IoError("clip directory " + dir + " needs at least 2 frames, found " +
                  std::to_string(files.size()));

  std::vector<Tensor<float>> frames;
  for (const auto& f : files) {
    Tensor<float> img = f.size() >= 4 && f.compare(f.size() - 4, 4, ".ppm") == 0
                            ? read_ppm(f)
                            : read_png_file(f);
    if (!frames.empty() && !(img.shape == frames.front().shape))
      throw FormatError("frame size mismatch: " + files.front() + " is " +
                        shape_str(frames.front().shape) + " but " + f + " is " +
                        shape_str(img.shape));
    frames.push_back(std::move(img));
  }

  Clip clip;
  clip.source = dir;
  const int h = frames.front().extent(0), w = frames.front().extent(1);
  clip.frames = Tensor<float>({static_cast<int>(frames.size()), h, w, 3});
  for (size_t t = 0; t < frames.size(); ++t)
    std::copy(frames[t].data.begin(), frames[t].data.end(),
              clip.frames.data.begin() + static_cast<std::int64_t>(t) * h * w * 3);
  return clip;
}

// Loads one clip from either a .clp1 file or a directory of frames.
inline Clip load_clip(const std::string& path) {
  namespace fs = std::filesystem;
  if (fs::is_directory(path)) return ingest_image_dir(path);
  if (!fs::is_regular_file(path)) throw IoError("no such clip: " + path);
  Tensor<float> frames = read_clip_file(path);
  if (frames.extent(3) != 3)
    throw FormatError("clip " + path + " must have 3 channels, got " +
                      std::to_string(frames.extent(3)));
  Clip clip;
  clip.frames = std::move(frames);
  clip.source = path;
  return clip;
}

// Dataset layout: <root>/violent and <root>/nonviolent, each containing .clp1
// files and/or directories of frames. Entries are ordered by class then name.
inline Dataset load_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  Dataset out;
  const std::pair<const char*, int> classes[] = {{"nonviolent", 0}, {"violent", 1}};
  for (const auto& [cls, label] : classes) {
    const fs::path dir = fs::path(root) / cls;
    if (!fs::is_directory(dir)) throw IoError("missing class directory: " + dir.string());
    std::vector<fs::path> entries;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_directory() || entry.path().extension() == ".clp1")
        entries.push_back(entry.path());
    }
    std::sort(entries.begin(), entries.end());
    for (const auto& p : entries) {
      LabeledClip item;
      item.clip = load_clip(p.string());
      item.label = label;
      item.name = std::string(cls) + "/" + p.filename().string();
      out.items.push_back(std::move(item));
    }
  }
  if (out.items.empty()) throw IoError("no clips found under " + root);
  return out;
}

// Writes a synthetic dataset in the standard layout plus a manifest of the
// generation metadata.
inline void write_synth_dataset(const std::string& root, const SynthDataset& ds) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(root) / "violent", ec);
  fs::create_directories(fs::path(root) / "nonviolent", ec);
  nlohmann::json meta = nlohmann::json::array();
  for (size_t i = 0; i < ds.data.items.size(); ++i) {
    const auto& item = ds.data.items[i];
    const char* cls = item.label == 1 ? "violent" : "nonviolent";
    const std::string file = (fs::path(root) / cls / (item.name + ".clp1")).string();
    write_clip(file, item.clip.frames);
    const auto& m = ds.meta[i];
    meta.push_back({{"name", m.name},
                    {"label", m.label},
                    {"blob_count", m.blob_count},
                    {"moving", m.moving},
                    {"mean_step_px", m.mean_step_px}});
  }
  detail::write_file((fs::path(root) / "manifest.json").string(), meta.dump(2));
}

// ---- configuration JSON -----------------------------------------------------------

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                       const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename V>
inline void maybe(const nlohmann::json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("bad value for '") + key + "'");
  }
}

}  // namespace detail

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["backbone"] = {
      {"kind", cfg.backbone.kind == BackboneKind::mobilenet_truncated ? "mobilenet_truncated"
                                                                      : "tiny"},
      {"alpha", cfg.backbone.alpha},
      {"input_size", cfg.backbone.input_size},
      {"tiny_channels", cfg.backbone.tiny_channels}};
  j["lstm_filters"] = cfg.lstm_filters;
  j["lstm_kind"] = cfg.lstm_kind == CellKind::separable ? "separable" : "dense";
  j["fusion"] = fusion_name(cfg.fusion);
  j["streams"] = streams_name(cfg.streams);
  j["head"] = cfg.head;
  j["leaky_slope"] = cfg.leaky_slope;
  j["preproc"] = {{"sample_count", cfg.preproc.sample_count},
                  {"resize_to", cfg.preproc.resize_to},
                  {"crop_to", cfg.preproc.crop_to},
                  {"allow_short", cfg.preproc.allow_short}};
  return j;
}

// Unknown keys are rejected; missing keys keep the reference defaults.
inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  detail::check_keys(j,
                     {"backbone", "lstm_filters", "lstm_kind", "fusion", "streams", "head",
                      "leaky_slope", "preproc", "train"},
                     "model config");
  ModelConfig cfg = ModelConfig::reference();
  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    detail::check_keys(b, {"kind", "alpha", "input_size", "tiny_channels"}, "backbone");
    std::string kind = "mobilenet_truncated";
    detail::maybe(b, "kind", kind);
    if (kind == "mobilenet_truncated")
      cfg.backbone.kind = BackboneKind::mobilenet_truncated;
    else if (kind == "tiny")
      cfg.backbone.kind = BackboneKind::tiny;
    else
      throw ConfigError("unknown backbone kind '" + kind + "'");
    detail::maybe(b, "alpha", cfg.backbone.alpha);
    detail::maybe(b, "input_size", cfg.backbone.input_size);
    detail::maybe(b, "tiny_channels", cfg.backbone.tiny_channels);
  }
  detail::maybe(j, "lstm_filters", cfg.lstm_filters);
  if (j.contains("lstm_kind")) {
    const std::string kind = j.at("lstm_kind").get<std::string>();
    if (kind == "separable")
      cfg.lstm_kind = CellKind::separable;
    else if (kind == "dense")
      cfg.lstm_kind = CellKind::dense;
    else
      throw ConfigError("unknown lstm_kind '" + kind + "'");
  }
  if (j.contains("fusion")) {
    const std::string f = j.at("fusion").get<std::string>();
    if (f == "M")
      cfg.fusion = Fusion::M;
    else if (f == "C")
      cfg.fusion = Fusion::C;
    else if (f == "A")
      cfg.fusion = Fusion::A;
    else
      throw ConfigError("unknown fusion '" + f + "', expected M, C, or A");
  }
  if (j.contains("streams")) {
    const std::string s = j.at("streams").get<std::string>();
    if (s == "both")
      cfg.streams = Streams::both;
    else if (s == "frames_only")
      cfg.streams = Streams::frames_only;
    else if (s == "diff_only")
      cfg.streams = Streams::diff_only;
    else
      throw ConfigError("unknown streams '" + s + "'");
  }
  detail::maybe(j, "head", cfg.head);
  detail::maybe(j, "leaky_slope", cfg.leaky_slope);
  if (j.contains("preproc")) {
    const auto& p = j.at("preproc");
    detail::check_keys(p, {"sample_count", "resize_to", "crop_to", "allow_short"}, "preproc");
    detail::maybe(p, "sample_count", cfg.preproc.sample_count);
    detail::maybe(p, "resize_to", cfg.preproc.resize_to);
    detail::maybe(p, "crop_to", cfg.preproc.crop_to);
    detail::maybe(p, "allow_short", cfg.preproc.allow_short);
  }
  try {
    validate_config(cfg);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

// Training settings live in an optional "train" section of the same file.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.model = model_config_from_json(j);
  if (!j.contains("train")) return cfg;
  const auto& t = j.at("train");
  detail::check_keys(t,
                     {"epochs", "batch_size", "base_lr", "lr_floor", "lr_halve_every",
                      "augment_enabled", "early_stop_patience", "stop_at_train_acc", "augment"},
                     "train config");
  detail::maybe(t, "epochs", cfg.epochs);
  detail::maybe(t, "batch_size", cfg.batch_size);
  detail::maybe(t, "base_lr", cfg.base_lr);
  detail::maybe(t, "lr_floor", cfg.lr_floor);
  detail::maybe(t, "lr_halve_every", cfg.lr_halve_every);
  detail::maybe(t, "augment_enabled", cfg.augment_enabled);
  detail::maybe(t, "early_stop_patience", cfg.early_stop_patience);
  detail::maybe(t, "stop_at_train_acc", cfg.stop_at_train_acc);
  if (t.contains("augment")) {
    const auto& a = t.at("augment");
    detail::check_keys(a,
                       {"brightness_min", "brightness_max", "crop_scale_min", "crop_scale_max",
                        "flip_prob", "blur_sigma_min", "blur_sigma_max"},
                       "augment config");
    detail::maybe(a, "brightness_min", cfg.augment.brightness_min);
    detail::maybe(a, "brightness_max", cfg.augment.brightness_max);
    detail::maybe(a, "crop_scale_min", cfg.augment.crop_scale_min);
    detail::maybe(a, "crop_scale_max", cfg.augment.crop_scale_max);
    detail::maybe(a, "flip_prob", cfg.augment.flip_prob);
    detail::maybe(a, "blur_sigma_min", cfg.augment.blur_sigma_min);
    detail::maybe(a, "blur_sigma_max", cfg.augment.blur_sigma_max);
  }
  if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.base_lr <= 0) throw ConfigError("base_lr must be positive");
  return cfg;
}

inline nlohmann::json parse_json_file(const std::string& path) {
  const std::string text = detail::read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse " + path + ": " + e.what());
  }
}

}  // namespace scl
