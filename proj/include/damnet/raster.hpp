#pragma once

#include "damnet/tensor.hpp"

#include <string>

namespace damnet {

/// Single- or dual-band raster in ENVI layout: raw float32 band-sequential
/// samples next to a small text header. `map_info` is carried through
/// verbatim when present so georeferencing survives processing.
struct Raster {
  Tensor data;  // [bands, H, W]
  std::string map_info;

  i64 bands() const { return data.numel() ? data.dim(0) : 0; }
  i64 height() const { return data.numel() ? data.dim(1) : 0; }
  i64 width() const { return data.numel() ? data.dim(2) : 0; }
};

/// `path` names the binary file; the header lives at the same path with the
/// extension replaced by ".hdr".
void write_envi(const std::string& path, const Raster& raster);
Raster read_envi(const std::string& path);

/// 8-bit binary PGM masks, foreground stored as 255. Values returned as 0/1.
void write_pgm_mask(const std::string& path, const Tensor& mask);  // [H, W] of {0,1}
Tensor read_pgm_mask(const std::string& path);

}  // namespace damnet
