#include "activeview/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <openssl/evp.h>
#include <png.h>

namespace av {

namespace {

// libpng reports errors by longjmp; the message is kept for the exception
// thrown once control is back in C++.
struct PngError {
  std::string message;
};

void on_png_error(png_structp png, png_const_charp msg) {
  static_cast<PngError*>(png_get_error_ptr(png))->message = msg;
  png_longjmp(png, 1);
}

void on_png_warning(png_structp, png_const_charp) {}

void append_bytes(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

struct ReadCursor {
  const std::vector<uint8_t>* bytes;
  size_t pos = 0;
};

void read_bytes(png_structp png, png_bytep data, png_size_t n) {
  auto* c = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (c->pos + n > c->bytes->size()) png_error(png, "truncated stream");
  std::memcpy(data, c->bytes->data() + c->pos, n);
  c->pos += n;
}

}  // namespace

std::vector<uint8_t> encode_png(const Frame& frame) {
  if (frame.width <= 0 || frame.height <= 0 || frame.rgb.size() != frame.pixels() * 3)
    throw std::runtime_error("encode_png: frame has no consistent color buffer");

  std::vector<uint8_t> rgb8(frame.rgb.size());
  for (size_t i = 0; i < rgb8.size(); ++i) {
    const float v = std::clamp(frame.rgb[i], 0.0f, 1.0f);
    rgb8[i] = static_cast<uint8_t>(std::lround(v * 255.0f));
  }

  std::vector<uint8_t> out;
  PngError err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, on_png_error, on_png_warning);
  if (!png) throw std::runtime_error("png: cannot create writer");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: " + (err.message.empty() ? std::string("cannot create info") : err.message));
  }
  {
    png_set_write_fn(png, &out, append_bytes, nullptr);
    png_set_IHDR(png, info, frame.width, frame.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < frame.height; ++y) {
      png_write_row(png, rgb8.data() + static_cast<size_t>(y) * frame.width * 3);
    }
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png(const std::filesystem::path& path, const Frame& frame) {
  const std::vector<uint8_t> bytes = encode_png(frame);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

Frame decode_png(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw std::runtime_error("png: bad signature");
  PngError err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, on_png_error, on_png_warning);
  if (!png) throw std::runtime_error("png: cannot create reader");
  png_infop info = png_create_info_struct(png);
  ReadCursor cursor{&bytes, 0};
  Frame f;
  std::vector<uint8_t> row;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: " + (err.message.empty() ? std::string("cannot create info") : err.message));
  }
  {
    png_set_read_fn(png, &cursor, read_bytes);
    png_read_info(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (bit_depth != 8 || (color != PNG_COLOR_TYPE_RGB && color != PNG_COLOR_TYPE_RGBA)) {
      png_destroy_read_struct(&png, &info, nullptr);
      throw std::runtime_error("png: only 8-bit RGB/RGBA is supported");
    }
    if (color == PNG_COLOR_TYPE_RGBA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    f.width = static_cast<int>(png_get_image_width(png, info));
    f.height = static_cast<int>(png_get_image_height(png, info));
    row.resize(static_cast<size_t>(f.width) * 3);
    f.rgb.resize(f.pixels() * 3);
    for (int y = 0; y < f.height; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (size_t i = 0; i < row.size(); ++i) f.rgb[static_cast<size_t>(y) * row.size() + i] = row[i] / 255.0f;
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return f;
}

std::string base64_encode(const std::vector<uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<size_t>(n));
  return out;
}

std::vector<uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw std::runtime_error("base64: length is not a multiple of 4");
  std::vector<uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw std::runtime_error("base64: invalid input");
  // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
  size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<size_t>(n) - pad);
  return out;
}

}  // namespace av
