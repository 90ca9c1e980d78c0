#pragma once

// PNG encoding of rendered frames and base64 for data URLs.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "activeview/microworld.hpp"

namespace av {

/// 8-bit RGB PNG of the frame's color buffer. Throws std::runtime_error on
/// encoder failure or an inconsistent frame.
std::vector<uint8_t> encode_png(const Frame& frame);
void write_png(const std::filesystem::path& path, const Frame& frame);

/// Decodes an 8-bit RGB or RGBA PNG; alpha is dropped. Only color and the
/// frame size are filled in.
Frame decode_png(const std::vector<uint8_t>& bytes);

std::string base64_encode(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> base64_decode(const std::string& text);

}  // namespace av
