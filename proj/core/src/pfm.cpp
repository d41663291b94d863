#include "eapnet/pfm.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace eapnet {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::runtime_error("pfm: " + path + ": " + what);
}

float byteswap_float(float f) {
  uint32_t u;
  std::memcpy(&u, &f, 4);
  u = ((u & 0x000000ffu) << 24) | ((u & 0x0000ff00u) << 8) | ((u & 0x00ff0000u) >> 8) |
      ((u & 0xff000000u) >> 24);
  std::memcpy(&f, &u, 4);
  return f;
}

bool host_is_little_endian() {
  const uint16_t probe = 1;
  uint8_t first;
  std::memcpy(&first, &probe, 1);
  return first == 1;
}

std::string next_token(std::istream& in) {
  std::string tok;
  in >> tok;
  return tok;
}

}  // namespace

Tensor read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open for reading");

  const std::string magic = next_token(in);
  int64_t channels;
  if (magic == "PF") {
    channels = 3;
  } else if (magic == "Pf") {
    channels = 1;
  } else {
    fail(path, "bad magic \"" + magic + "\"");
  }

  int64_t width = 0, height = 0;
  double scale = 0.0;
  in >> width >> height >> scale;
  if (!in || width < 1 || height < 1) fail(path, "invalid header dimensions");
  if (scale == 0.0) fail(path, "invalid scale 0");
  in.get();  // the single whitespace byte before the raster

  const bool file_little = scale < 0.0;
  const int64_t count = width * height * channels;
  std::vector<float> raster(static_cast<size_t>(count));
  in.read(reinterpret_cast<char*>(raster.data()), count * static_cast<int64_t>(sizeof(float)));
  if (!in) fail(path, "truncated raster");

  if (file_little != host_is_little_endian()) {
    for (float& v : raster) v = byteswap_float(v);
  }

  Tensor out(Shape4{1, channels, height, width});
  // rows are stored bottom-to-top, samples interleaved
  for (int64_t y = 0; y < height; ++y) {
    const float* src = raster.data() + (height - 1 - y) * width * channels;
    for (int64_t c = 0; c < channels; ++c) {
      float* dst = out.row(0, c, y);
      for (int64_t x = 0; x < width; ++x) dst[x] = src[x * channels + c];
    }
  }
  return out;
}

void write_pfm(const std::string& path, const Tensor& image) {
  if (image.shape.n != 1 || (image.shape.c != 1 && image.shape.c != 3)) {
    throw std::invalid_argument("pfm: expected a 1x1xHxW or 1x3xHxW tensor, got " +
                                image.shape.str());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open for writing");

  const int64_t channels = image.shape.c;
  const int64_t height = image.shape.h;
  const int64_t width = image.shape.w;
  std::ostringstream header;
  header << (channels == 3 ? "PF" : "Pf") << "\n" << width << " " << height << "\n-1.0\n";
  out << header.str();

  const bool swap = !host_is_little_endian();
  std::vector<float> row(static_cast<size_t>(width * channels));
  for (int64_t y = height - 1; y >= 0; --y) {
    for (int64_t c = 0; c < channels; ++c) {
      const float* src = image.row(0, c, y);
      for (int64_t x = 0; x < width; ++x) {
        row[static_cast<size_t>(x * channels + c)] = swap ? byteswap_float(src[x]) : src[x];
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<int64_t>(row.size() * sizeof(float)));
  }
  if (!out) fail(path, "write failed");
}

}  // namespace eapnet
