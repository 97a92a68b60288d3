#pragma once

// Binary PPM (P6) / PGM (P5) reading and writing, 8 bits per sample.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "cdapose/core.hpp"

namespace cdapose {

inline void write_pnm(const Image& img, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3) throw InvalidArgument("write_pnm: need 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UserError("cannot write image " + path.string());
  out << (img.channels == 3 ? "P6" : "P5") << "\n" << img.width << " " << img.height << "\n255\n";
  std::string buf(img.pixels.size(), '\0');
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    buf[i] = static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(img.pixels[i], 0.0f, 1.0f) * 255.0f)));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot open image " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P6" && magic != "P5") throw ParseError("unsupported image format in " + path.string(), 1);
  auto next_int = [&]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string line;
      std::getline(in, line);
      in >> std::ws;
    }
    int v = 0;
    in >> v;
    return v;
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  in.get();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw ParseError("bad image header in " + path.string(), 1);
  Image img(h, w, magic == "P6" ? 3 : 1);
  std::string buf(img.pixels.size(), '\0');
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size()))
    throw ParseError("truncated image data in " + path.string(), 1);
  for (std::size_t i = 0; i < buf.size(); ++i)
    img.pixels[i] = static_cast<float>(static_cast<unsigned char>(buf[i])) / static_cast<float>(maxval);
  return img;
}

}  // namespace cdapose
