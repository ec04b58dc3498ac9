#pragma once

// Loaders and savers for every on-disk artifact: 3DGS PLY scenes, camera
// JSON, PFM depth/normal rasters and 8-bit PNG images/masks.

#include <png.h>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gslight/errors.hpp"
#include "gslight/image.hpp"

namespace gslight {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Cameras

/// Pinhole view with a world-to-camera pose (OpenCV axes: x right, y down,
/// z forward). Pixel coordinates are continuous; pixel (i,j) covers
/// [i,i+1)x[j,j+1) and its centre is (i+0.5, j+0.5).
struct CameraView {
  int view_id = 0;
  int width = 0;
  int height = 0;
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Matrix3d intrinsics() const {
    Eigen::Matrix3d k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }

  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const { return rotation * world + translation; }
  Eigen::Vector3d to_world(const Eigen::Vector3d& cam) const { return rotation.transpose() * (cam - translation); }
  Eigen::Vector3d center() const { return -rotation.transpose() * translation; }

  /// Camera-space point to continuous pixel coordinates. Requires z != 0.
  Eigen::Vector2d project(const Eigen::Vector3d& cam) const {
    return {fx * cam.x() / cam.z() + cx, fy * cam.y() / cam.z() + cy};
  }

  bool contains(const Eigen::Vector2d& px) const {
    return px.x() >= 0.0 && px.y() >= 0.0 && px.x() < width && px.y() < height;
  }
};

/// Throws validation errors for anything violating CameraView's invariants.
/// Rotations within 1e-3 of orthonormal are snapped to the nearest rotation.
inline CameraView validated(CameraView v) {
  const std::string tag = "view " + std::to_string(v.view_id);
  if (v.width <= 0 || v.height <= 0) fail(ErrorKind::validation, tag + ": non-positive image size");
  if (!(v.fx > 0.0) || !(v.fy > 0.0)) fail(ErrorKind::validation, tag + ": focal lengths must be positive");
  if (!(v.cx > 0.0 && v.cx < v.width && v.cy > 0.0 && v.cy < v.height)) {
    fail(ErrorKind::validation, tag + ": principal point outside image");
  }
  if (!v.rotation.allFinite() || !v.translation.allFinite()) fail(ErrorKind::validation, tag + ": non-finite pose");
  const double dev = (v.rotation.transpose() * v.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (dev > 1e-3) fail(ErrorKind::validation, tag + ": rotation not orthonormal (deviation " + std::to_string(dev) + ")");
  if (v.rotation.determinant() < 0.0) fail(ErrorKind::validation, tag + ": rotation is a reflection (det < 0)");
  if (dev > 1e-12) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(v.rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
    v.rotation = svd.matrixU() * svd.matrixV().transpose();
  }
  return v;
}

inline nlohmann::json camera_to_json(const CameraView& v) {
  nlohmann::json j;
  j["view_id"] = v.view_id;
  j["width"] = v.width;
  j["height"] = v.height;
  j["fx"] = v.fx;
  j["fy"] = v.fy;
  j["cx"] = v.cx;
  j["cy"] = v.cy;
  std::vector<double> r(9);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r[i * 3 + k] = v.rotation(i, k);
  j["rotation"] = r;
  j["translation"] = {v.translation.x(), v.translation.y(), v.translation.z()};
  return j;
}

inline CameraView camera_from_json(const nlohmann::json& j) {
  try {
    CameraView v;
    v.view_id = j.at("view_id").get<int>();
    v.width = j.at("width").get<int>();
    v.height = j.at("height").get<int>();
    v.fx = j.at("fx").get<double>();
    v.fy = j.at("fy").get<double>();
    v.cx = j.contains("cx") ? j["cx"].get<double>() : v.width / 2.0;
    v.cy = j.contains("cy") ? j["cy"].get<double>() : v.height / 2.0;
    const auto r = j.at("rotation").get<std::vector<double>>();
    const auto t = j.at("translation").get<std::vector<double>>();
    if (r.size() != 9) fail(ErrorKind::format, "rotation must have 9 entries");
    if (t.size() != 3) fail(ErrorKind::format, "translation must have 3 entries");
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) v.rotation(i, k) = r[i * 3 + k];
    v.translation = {t[0], t[1], t[2]};
    return validated(v);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("camera entry: ") + e.what());
  }
}

/// Parses a camera JSON array; result sorted by view_id.
inline std::vector<CameraView> parse_cameras(const nlohmann::json& doc) {
  if (!doc.is_array()) fail(ErrorKind::format, "camera file must be a JSON array");
  std::vector<CameraView> views;
  std::set<int> seen;
  for (const auto& entry : doc) {
    views.push_back(camera_from_json(entry));
    if (!seen.insert(views.back().view_id).second) {
      fail(ErrorKind::validation, "duplicate view_id " + std::to_string(views.back().view_id));
    }
  }
  std::sort(views.begin(), views.end(), [](const auto& a, const auto& b) { return a.view_id < b.view_id; });
  return views;
}

inline nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::format, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::format, path.string() + ": " + e.what());
  }
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::format, "cannot write " + path.string());
  out << text;
}

inline std::vector<CameraView> load_cameras(const fs::path& path) { return parse_cameras(read_json_file(path)); }

inline void save_cameras(const fs::path& path, const std::vector<CameraView>& views) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& v : views) doc.push_back(camera_to_json(v));
  write_text_file(path, doc.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Per-view rasters

/// Metric camera-z depth; 0 marks invalid pixels.
struct DepthMap {
  static constexpr int kChannels = 1;
  static constexpr float kInvalid = 0.0f;
  Raster<float> raster;

  DepthMap() = default;
  DepthMap(int w, int h, float fill = kInvalid) : raster(w, h, 1, fill) {}
  explicit DepthMap(Raster<float> r) : raster(std::move(r)) {}

  int width() const { return raster.width(); }
  int height() const { return raster.height(); }
  float at(int x, int y) const { return raster.at(x, y); }
  float& at(int x, int y) { return raster.at(x, y); }
  bool valid(int x, int y) const { return raster.at(x, y) > 0.0f; }
};

/// Unit normals in camera coordinates; the zero vector marks invalid pixels.
struct NormalMap {
  static constexpr int kChannels = 3;
  Raster<float> raster;

  NormalMap() = default;
  NormalMap(int w, int h) : raster(w, h, 3, 0.0f) {}
  explicit NormalMap(Raster<float> r) : raster(std::move(r)) {}

  int width() const { return raster.width(); }
  int height() const { return raster.height(); }
  Eigen::Vector3d at(int x, int y) const {
    auto p = raster.pixel(x, y);
    return {p[0], p[1], p[2]};
  }
  void set(int x, int y, const Eigen::Vector3d& n) {
    auto p = raster.pixel(x, y);
    p[0] = static_cast<float>(n.x());
    p[1] = static_cast<float>(n.y());
    p[2] = static_cast<float>(n.z());
  }
  bool valid(int x, int y) const { return at(x, y).squaredNorm() > 0.0; }
};

/// Binary mask, 1 = set.
struct ObjectMask {
  Raster<std::uint8_t> raster;

  ObjectMask() = default;
  ObjectMask(int w, int h) : raster(w, h, 1, 0) {}

  int width() const { return raster.width(); }
  int height() const { return raster.height(); }
  bool at(int x, int y) const { return raster.at(x, y) != 0; }
  void set(int x, int y, bool on = true) { raster.at(x, y) = on ? 1 : 0; }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count_if(raster.values().begin(), raster.values().end(),
                                                  [](std::uint8_t v) { return v != 0; }));
  }
};

namespace detail {

template <typename T>
T byteswap_value(T v) {
  auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
  std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

template <typename T>
T from_little_endian(T v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return byteswap_value(v);
}

inline std::string read_token(std::istream& in) {
  std::string tok;
  in >> tok;
  return tok;
}

}  // namespace detail

/// Reads a PFM raster (rows stored bottom-up on disk, endianness from the
/// sign of the scale line) into a top-down raster.
inline Raster<float> read_pfm_raster(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::format, "cannot open " + path.string());
  const std::string magic = detail::read_token(in);
  int channels = 0;
  if (magic == "Pf") {
    channels = 1;
  } else if (magic == "PF") {
    channels = 3;
  } else {
    fail(ErrorKind::format, path.string() + ": not a PFM file");
  }
  int w = 0, h = 0;
  double scale = 0.0;
  if (!(in >> w >> h >> scale) || w <= 0 || h <= 0 || scale == 0.0) {
    fail(ErrorKind::format, path.string() + ": bad PFM header");
  }
  in.get();  // single whitespace byte before data
  const bool little = scale < 0.0;
  Raster<float> r(w, h, channels);
  std::vector<float> row(static_cast<std::size_t>(w) * channels);
  for (int y = h - 1; y >= 0; --y) {
    if (!in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)))) {
      fail(ErrorKind::format, path.string() + ": truncated PFM data");
    }
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        float v = row[static_cast<std::size_t>(x) * channels + c];
        const bool swap = little != (std::endian::native == std::endian::little);
        r.at(x, y, c) = swap ? detail::byteswap_value(v) : v;
      }
    }
  }
  return r;
}

/// Writes little-endian PFM (scale -1), rows bottom-up.
inline void write_pfm_raster(const fs::path& path, const Raster<float>& r) {
  if (r.channels() != 1 && r.channels() != 3) fail(ErrorKind::shape, "PFM supports 1 or 3 channels");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::format, "cannot write " + path.string());
  out << (r.channels() == 1 ? "Pf" : "PF") << "\n" << r.width() << " " << r.height() << "\n-1.0\n";
  std::vector<float> row(static_cast<std::size_t>(r.width()) * r.channels());
  for (int y = r.height() - 1; y >= 0; --y) {
    for (int x = 0; x < r.width(); ++x)
      for (int c = 0; c < r.channels(); ++c)
        row[static_cast<std::size_t>(x) * r.channels() + c] = detail::from_little_endian(r.at(x, y, c));
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
}

inline DepthMap load_depth_pfm(const fs::path& path, double depth_scale = 1.0) {
  Raster<float> r = read_pfm_raster(path);
  if (r.channels() != 1) fail(ErrorKind::format, path.string() + ": depth needs a 1-channel (Pf) file");
  for (int y = 0; y < r.height(); ++y) {
    for (int x = 0; x < r.width(); ++x) {
      float& d = r.at(x, y);
      if (!std::isfinite(d) || d < 0.0f) d = DepthMap::kInvalid;
      d = static_cast<float>(d * depth_scale);
    }
  }
  return DepthMap(std::move(r));
}

inline NormalMap load_normals_pfm(const fs::path& path) {
  Raster<float> r = read_pfm_raster(path);
  if (r.channels() != 3) fail(ErrorKind::format, path.string() + ": normals need a 3-channel (PF) file");
  NormalMap n(std::move(r));
  for (int y = 0; y < n.height(); ++y) {
    for (int x = 0; x < n.width(); ++x) {
      Eigen::Vector3d v = n.at(x, y);
      if (!v.allFinite()) {
        n.set(x, y, Eigen::Vector3d::Zero());
        continue;
      }
      const double len = v.norm();
      if (len == 0.0) continue;
      if (std::abs(len - 1.0) > 1e-2) {
        fail(ErrorKind::data, path.string() + ": normal at (" + std::to_string(x) + "," + std::to_string(y) +
                                  ") has length " + std::to_string(len));
      }
      if (std::abs(len - 1.0) > 1e-6) n.set(x, y, v / len);
    }
  }
  return n;
}

inline void save_depth_pfm(const fs::path& path, const DepthMap& d) { write_pfm_raster(path, d.raster); }
inline void save_normals_pfm(const fs::path& path, const NormalMap& n) { write_pfm_raster(path, n.raster); }

// ---------------------------------------------------------------------------
// PNG

namespace detail {

inline std::vector<std::uint8_t> read_png(const fs::path& path, png_uint_32 format, int& w, int& h) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    fail(ErrorKind::format, path.string() + ": " + image.message);
  }
  image.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    fail(ErrorKind::format, path.string() + ": " + image.message);
  }
  w = static_cast<int>(image.width);
  h = static_cast<int>(image.height);
  return buf;
}

inline void write_png(const fs::path& path, png_uint_32 format, int w, int h, const std::vector<std::uint8_t>& buf) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = format;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
    fail(ErrorKind::format, path.string() + ": " + image.message);
  }
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace detail

inline RgbImage load_png_rgb(const fs::path& path) {
  int w = 0, h = 0;
  const auto buf = detail::read_png(path, PNG_FORMAT_RGB, w, h);
  RgbImage img(w, h, 3);
  for (std::size_t i = 0; i < buf.size(); ++i) img.values()[i] = buf[i] / 255.0;
  return img;
}

inline void save_png_rgb(const fs::path& path, const RgbImage& img) {
  if (img.channels() != 3) fail(ErrorKind::shape, "RGB PNG needs 3 channels");
  std::vector<std::uint8_t> buf(img.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = detail::to_byte(img.values()[i]);
  detail::write_png(path, PNG_FORMAT_RGB, img.width(), img.height(), buf);
}

/// Single-channel preview of a [0,1] scalar raster.
inline void save_png_gray(const fs::path& path, const Raster<double>& img) {
  std::vector<std::uint8_t> buf(img.pixel_count());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      buf[static_cast<std::size_t>(y) * img.width() + x] = detail::to_byte(img.at(x, y));
  detail::write_png(path, PNG_FORMAT_GRAY, img.width(), img.height(), buf);
}

/// Mask PNG: grey value > 127 = set.
inline ObjectMask load_mask_png(const fs::path& path) {
  int w = 0, h = 0;
  const auto buf = detail::read_png(path, PNG_FORMAT_GRAY, w, h);
  ObjectMask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.set(x, y, buf[static_cast<std::size_t>(y) * w + x] > 127);
  return m;
}

inline void save_mask_png(const fs::path& path, const ObjectMask& m) {
  std::vector<std::uint8_t> buf(m.raster.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = m.raster.values()[i] ? 255 : 0;
  detail::write_png(path, PNG_FORMAT_GRAY, m.width(), m.height(), buf);
}

// ---------------------------------------------------------------------------
// Gaussian scenes

/// Degree-0 spherical-harmonic constant used by the 3DGS DC colour term.
inline constexpr double kShC0 = 0.28209479177387814;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

struct GaussianRecord {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Vector3d log_scale = Eigen::Vector3d::Zero();
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Eigen::Vector3d color_logit = Eigen::Vector3d::Zero();
  double opacity_logit = 0.0;

  Eigen::Vector3d color() const { return color_logit.unaryExpr([](double v) { return sigmoid(v); }); }
  double opacity() const { return sigmoid(opacity_logit); }
  Eigen::Vector3d scale() const { return log_scale.array().exp(); }

  /// Σ = R S² Rᵀ.
  Eigen::Matrix3d covariance() const {
    const Eigen::Matrix3d r = rotation.normalized().toRotationMatrix();
    const Eigen::Vector3d s2 = (2.0 * log_scale).array().exp();
    return r * s2.asDiagonal() * r.transpose();
  }

  friend bool operator==(const GaussianRecord& a, const GaussianRecord& b) {
    return a.position == b.position && a.log_scale == b.log_scale && a.rotation.coeffs() == b.rotation.coeffs() &&
           a.color_logit == b.color_logit && a.opacity_logit == b.opacity_logit;
  }
};

/// Field groups of a Gaussian; only colour and opacity are ever trainable.
struct TrainableMask {
  bool color = true;
  bool opacity = true;
};

struct GaussianScene {
  std::vector<GaussianRecord> records;
  TrainableMask trainable;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
};

namespace detail {

struct PlyProperty {
  std::string name;
  std::string type;
  std::size_t offset = 0;
  std::size_t bytes = 0;
};

inline std::size_t ply_type_size(const std::string& t) {
  static const std::map<std::string, std::size_t> sizes = {
      {"char", 1},  {"uchar", 1},  {"int8", 1},   {"uint8", 1},   {"short", 2},   {"ushort", 2},
      {"int16", 2}, {"uint16", 2}, {"int", 4},    {"uint", 4},    {"int32", 4},   {"uint32", 4},
      {"float", 4}, {"float32", 4}, {"double", 8}, {"float64", 8}};
  auto it = sizes.find(t);
  if (it == sizes.end()) fail(ErrorKind::format, "unsupported PLY property type '" + t + "'");
  return it->second;
}

template <typename T>
double load_le(const std::uint8_t* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return static_cast<double>(from_little_endian(v));
}

inline double read_ply_value(const PlyProperty& prop, const std::uint8_t* rec) {
  const std::uint8_t* p = rec + prop.offset;
  const std::string& t = prop.type;
  if (t == "float" || t == "float32") return load_le<float>(p);
  if (t == "double" || t == "float64") return load_le<double>(p);
  if (t == "char" || t == "int8") return load_le<std::int8_t>(p);
  if (t == "uchar" || t == "uint8") return load_le<std::uint8_t>(p);
  if (t == "short" || t == "int16") return load_le<std::int16_t>(p);
  if (t == "ushort" || t == "uint16") return load_le<std::uint16_t>(p);
  if (t == "int" || t == "int32") return load_le<std::int32_t>(p);
  return load_le<std::uint32_t>(p);
}

}  // namespace detail

inline GaussianScene load_scene(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::format, "cannot open " + path.string());

  std::string line;
  std::getline(in, line);
  if (line != "ply") fail(ErrorKind::format, path.string() + ": missing 'ply' magic");

  std::size_t vertex_count = 0;
  bool in_vertex = false, seen_vertex = false, binary_le = false;
  std::vector<detail::PlyProperty> props;
  std::size_t stride = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "end_header") break;
    if (kw == "format") {
      std::string fmt;
      ls >> fmt;
      binary_le = fmt == "binary_little_endian";
    } else if (kw == "element") {
      std::string name;
      ls >> name;
      if (name == "vertex") {
        if (seen_vertex) fail(ErrorKind::format, "duplicate vertex element");
        ls >> vertex_count;
        in_vertex = seen_vertex = true;
      } else {
        if (!seen_vertex) fail(ErrorKind::format, "elements before 'vertex' are not supported");
        in_vertex = false;
      }
    } else if (kw == "property" && in_vertex) {
      detail::PlyProperty p;
      ls >> p.type;
      if (p.type == "list") fail(ErrorKind::format, "list properties in vertex element are not supported");
      ls >> p.name;
      p.bytes = detail::ply_type_size(p.type);
      p.offset = stride;
      stride += p.bytes;
      props.push_back(p);
    }
  }
  if (!binary_le) fail(ErrorKind::format, path.string() + ": only binary_little_endian PLY is supported");
  if (!seen_vertex) fail(ErrorKind::format, path.string() + ": no vertex element");

  auto field = [&](const std::string& name) -> const detail::PlyProperty& {
    for (const auto& p : props)
      if (p.name == name) return p;
    fail(ErrorKind::format, "missing PLY field " + name);
  };
  static const std::array<const char*, 14> kNames = {"x",       "y",       "z",       "f_dc_0", "f_dc_1",
                                                     "f_dc_2",  "opacity", "scale_0", "scale_1", "scale_2",
                                                     "rot_0",   "rot_1",   "rot_2",   "rot_3"};
  std::vector<const detail::PlyProperty*> f;
  for (const char* n : kNames) f.push_back(&field(n));

  GaussianScene scene;
  scene.records.reserve(vertex_count);
  std::vector<std::uint8_t> rec(stride);
  for (std::size_t i = 0; i < vertex_count; ++i) {
    if (!in.read(reinterpret_cast<char*>(rec.data()), static_cast<std::streamsize>(stride))) {
      fail(ErrorKind::format, path.string() + ": truncated vertex data at record " + std::to_string(i));
    }
    std::array<double, 14> v{};
    for (std::size_t k = 0; k < v.size(); ++k) {
      v[k] = detail::read_ply_value(*f[k], rec.data());
      if (!std::isfinite(v[k])) {
        fail(ErrorKind::data, "non-finite " + f[k]->name + " in record " + std::to_string(i));
      }
    }
    GaussianRecord g;
    g.position = {v[0], v[1], v[2]};
    for (int c = 0; c < 3; ++c) {
      const double color = std::clamp(0.5 + kShC0 * v[3 + c], 1e-6, 1.0 - 1e-6);
      g.color_logit[c] = logit(color);
    }
    g.opacity_logit = v[6];
    g.log_scale = {v[7], v[8], v[9]};
    Eigen::Quaterniond q(v[10], v[11], v[12], v[13]);
    if (q.norm() == 0.0) fail(ErrorKind::data, "zero quaternion in record " + std::to_string(i));
    g.rotation = q.normalized();
    scene.records.push_back(g);
  }
  return scene;
}

/// Writes the standard 3DGS vertex layout (normals and f_rest zero-filled).
inline void save_scene(const fs::path& path, const GaussianScene& scene) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::format, "cannot write " + path.string());
  constexpr int kRest = 45;
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << scene.size() << "\n";
  for (const char* n : {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"})
    out << "property float " << n << "\n";
  for (int i = 0; i < kRest; ++i) out << "property float f_rest_" << i << "\n";
  for (const char* n : {"opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"})
    out << "property float " << n << "\n";
  out << "end_header\n";

  std::vector<float> row;
  row.reserve(9 + kRest + 8);
  for (const auto& g : scene.records) {
    row.clear();
    for (int c = 0; c < 3; ++c) row.push_back(static_cast<float>(g.position[c]));
    row.insert(row.end(), 3, 0.0f);
    for (int c = 0; c < 3; ++c) row.push_back(static_cast<float>((sigmoid(g.color_logit[c]) - 0.5) / kShC0));
    row.insert(row.end(), kRest, 0.0f);
    row.push_back(static_cast<float>(g.opacity_logit));
    for (int c = 0; c < 3; ++c) row.push_back(static_cast<float>(g.log_scale[c]));
    const Eigen::Quaterniond q = g.rotation.normalized();
    for (double c : {q.w(), q.x(), q.y(), q.z()}) row.push_back(static_cast<float>(c));
    for (float& v : row) v = detail::from_little_endian(v);
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
}

}  // namespace gslight
