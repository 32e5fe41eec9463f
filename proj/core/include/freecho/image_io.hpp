#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace freecho {

// 8-bit binary PGM (P5). Used for video frames and label rasters.
void write_pgm(const std::string& path, const std::vector<uint8_t>& data, int width, int height);
std::vector<uint8_t> read_pgm(const std::string& path, int& width, int& height);

// Minimal animated GIF writer for grayscale frames (preview output only).
void write_gif_grayscale(const std::string& path,
                         const std::vector<std::vector<uint8_t>>& frames, int width, int height,
                         int delay_centiseconds = 8);

}  // namespace freecho
