#include "damnet/raster.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace damnet {

namespace {

std::string header_path(const std::string& path) {
  size_t dot = path.find_last_of('.');
  size_t slash = path.find_last_of('/');
  bool has_ext = dot != std::string::npos && (slash == std::string::npos || dot > slash);
  return (has_ext ? path.substr(0, dot) : path) + ".hdr";
}

std::string trimmed(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

void write_envi(const std::string& path, const Raster& raster) {
  const Tensor& t = raster.data;
  if (t.ndim() != 3 || t.dim(0) < 1 || t.dim(0) > 2)
    throw std::invalid_argument("write_envi: expected [bands<=2, H, W], got " + t.shape_str());

  std::ofstream hdr(header_path(path));
  if (!hdr) throw std::runtime_error("write_envi: cannot open " + header_path(path));
  hdr << "ENVI\n"
      << "samples = " << t.dim(2) << "\n"
      << "lines = " << t.dim(1) << "\n"
      << "bands = " << t.dim(0) << "\n"
      << "header offset = 0\n"
      << "file type = ENVI Standard\n"
      << "data type = 4\n"
      << "interleave = bsq\n"
      << "byte order = 0\n";
  if (!raster.map_info.empty()) hdr << "map info = " << raster.map_info << "\n";

  std::ofstream bin(path, std::ios::binary);
  if (!bin) throw std::runtime_error("write_envi: cannot open " + path);
  std::vector<float> row(static_cast<size_t>(t.numel()));
  for (i64 i = 0; i < t.numel(); ++i) row[static_cast<size_t>(i)] = static_cast<float>(t[i]);
  bin.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
  if (!bin) throw std::runtime_error("write_envi: short write to " + path);
}

Raster read_envi(const std::string& path) {
  std::ifstream hdr(header_path(path));
  if (!hdr) throw std::runtime_error("read_envi: missing header " + header_path(path));
  std::string line;
  std::getline(hdr, line);
  if (trimmed(line) != "ENVI")
    throw std::runtime_error("read_envi: " + header_path(path) + " is not an ENVI header");

  i64 samples = 0, lines = 0, bands = 0, dtype = 0, border = 0;
  std::string interleave = "bsq", map_info;
  while (std::getline(hdr, line)) {
    size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = trimmed(line.substr(0, eq));
    std::string val = trimmed(line.substr(eq + 1));
    if (key == "samples") samples = std::stoll(val);
    else if (key == "lines") lines = std::stoll(val);
    else if (key == "bands") bands = std::stoll(val);
    else if (key == "data type") dtype = std::stoll(val);
    else if (key == "byte order") border = std::stoll(val);
    else if (key == "interleave") interleave = val;
    else if (key == "map info") map_info = val;
  }
  if (samples < 1 || lines < 1 || bands < 1 || bands > 2)
    throw std::runtime_error("read_envi: bad dimensions in " + header_path(path));
  if (dtype != 4)
    throw std::runtime_error("read_envi: only float32 rasters are supported (data type 4), got " +
                             std::to_string(dtype));
  if (border != 0) throw std::runtime_error("read_envi: only little-endian rasters are supported");
  if (interleave != "bsq")
    throw std::runtime_error("read_envi: only bsq interleave is supported, got " + interleave);

  std::ifstream bin(path, std::ios::binary);
  if (!bin) throw std::runtime_error("read_envi: missing " + path);
  i64 n = bands * lines * samples;
  std::vector<float> raw(static_cast<size_t>(n));
  bin.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (bin.gcount() != static_cast<std::streamsize>(n * sizeof(float)))
    throw std::runtime_error("read_envi: " + path + " truncated");

  Raster r;
  r.data = Tensor({bands, lines, samples});
  for (i64 i = 0; i < n; ++i) r.data.data()[i] = static_cast<double>(raw[static_cast<size_t>(i)]);
  r.map_info = map_info;
  return r;
}

void write_pgm_mask(const std::string& path, const Tensor& mask) {
  if (mask.ndim() != 2) throw std::invalid_argument("write_pgm_mask: expected [H, W]");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_pgm_mask: cannot open " + path);
  f << "P5\n" << mask.dim(1) << " " << mask.dim(0) << "\n255\n";
  std::vector<std::uint8_t> bytes(static_cast<size_t>(mask.numel()));
  for (i64 i = 0; i < mask.numel(); ++i) {
    double v = mask[i];
    if (v != 0.0 && v != 1.0)
      throw std::invalid_argument("write_pgm_mask: mask must be binary, found " +
                                  std::to_string(v));
    bytes[static_cast<size_t>(i)] = v == 1.0 ? 255 : 0;
  }
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write_pgm_mask: short write to " + path);
}

Tensor read_pgm_mask(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_pgm_mask: missing " + path);
  std::string magic;
  i64 w = 0, h = 0, maxv = 0;
  f >> magic >> w >> h >> maxv;
  if (magic != "P5" || w < 1 || h < 1 || maxv != 255)
    throw std::runtime_error("read_pgm_mask: " + path + " is not an 8-bit binary PGM");
  f.get();  // single whitespace after the header
  std::vector<std::uint8_t> bytes(static_cast<size_t>(w * h));
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (f.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw std::runtime_error("read_pgm_mask: " + path + " truncated");
  Tensor t({h, w});
  for (i64 i = 0; i < t.numel(); ++i) {
    std::uint8_t b = bytes[static_cast<size_t>(i)];
    if (b != 0 && b != 255)
      throw std::runtime_error("read_pgm_mask: " + path + " holds non-binary value " +
                               std::to_string(int(b)));
    t.data()[i] = b == 255 ? 1.0 : 0.0;
  }
  return t;
}

}  // namespace damnet
