#include "freecho/image_io.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace freecho {

void write_pgm(const std::string& path, const std::vector<uint8_t>& data, int width, int height) {
    if (static_cast<size_t>(width) * static_cast<size_t>(height) != data.size())
        throw std::invalid_argument("write_pgm: data size does not match dimensions");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("write_pgm: cannot open " + path);
    f << "P5\n" << width << " " << height << "\n255\n";
    f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!f) throw std::runtime_error("write_pgm: write failed for " + path);
}

std::vector<uint8_t> read_pgm(const std::string& path, int& width, int& height) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_pgm: cannot open " + path);
    std::string magic;
    f >> magic;
    if (magic != "P5") throw std::runtime_error("read_pgm: not a binary PGM: " + path);
    auto skip_ws_comments = [&]() {
        while (true) {
            int c = f.peek();
            if (c == '#') {
                std::string line;
                std::getline(f, line);
            } else if (std::isspace(c)) {
                f.get();
            } else {
                break;
            }
        }
    };
    skip_ws_comments();
    f >> width;
    skip_ws_comments();
    f >> height;
    skip_ws_comments();
    int maxval = 0;
    f >> maxval;
    if (!f || width <= 0 || height <= 0 || maxval != 255)
        throw std::runtime_error("read_pgm: unsupported header in " + path);
    f.get();  // single whitespace before payload
    std::vector<uint8_t> data(static_cast<size_t>(width) * static_cast<size_t>(height));
    f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!f) throw std::runtime_error("read_pgm: truncated payload in " + path);
    return data;
}

namespace {

// LZW with immediate clear codes: every 8-bit pixel is emitted as a literal
// 9-bit code, with a clear code before the table would grow. Valid GIF,
// no compression.
class GifCodeStream {
public:
    explicit GifCodeStream(std::vector<uint8_t>& out) : out_(out) {}

    void put(int code) {
        buffer_ |= static_cast<uint32_t>(code) << bits_;
        bits_ += 9;
        while (bits_ >= 8) {
            bytes_.push_back(static_cast<uint8_t>(buffer_ & 0xff));
            buffer_ >>= 8;
            bits_ -= 8;
        }
    }

    void finish() {
        if (bits_ > 0) bytes_.push_back(static_cast<uint8_t>(buffer_ & 0xff));
        size_t pos = 0;
        while (pos < bytes_.size()) {
            const size_t chunk = std::min<size_t>(255, bytes_.size() - pos);
            out_.push_back(static_cast<uint8_t>(chunk));
            out_.insert(out_.end(), bytes_.begin() + static_cast<long>(pos),
                        bytes_.begin() + static_cast<long>(pos + chunk));
            pos += chunk;
        }
        out_.push_back(0);  // block terminator
    }

private:
    std::vector<uint8_t>& out_;
    std::vector<uint8_t> bytes_;
    uint32_t buffer_ = 0;
    int bits_        = 0;
};

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xff));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

}  // namespace

void write_gif_grayscale(const std::string& path,
                         const std::vector<std::vector<uint8_t>>& frames, int width, int height,
                         int delay_centiseconds) {
    if (frames.empty()) throw std::invalid_argument("write_gif_grayscale: no frames");
    for (const auto& fr : frames)
        if (fr.size() != static_cast<size_t>(width) * static_cast<size_t>(height))
            throw std::invalid_argument("write_gif_grayscale: frame size mismatch");

    std::vector<uint8_t> out;
    out.insert(out.end(), {'G', 'I', 'F', '8', '9', 'a'});
    put_u16(out, static_cast<uint16_t>(width));
    put_u16(out, static_cast<uint16_t>(height));
    out.push_back(0xF7);  // global color table, 256 entries
    out.push_back(0);
    out.push_back(0);
    for (int i = 0; i < 256; ++i) {
        out.push_back(static_cast<uint8_t>(i));
        out.push_back(static_cast<uint8_t>(i));
        out.push_back(static_cast<uint8_t>(i));
    }
    // loop forever
    out.insert(out.end(), {0x21, 0xFF, 0x0B});
    const char* netscape = "NETSCAPE2.0";
    out.insert(out.end(), netscape, netscape + 11);
    out.insert(out.end(), {0x03, 0x01, 0x00, 0x00, 0x00});

    for (const auto& frame : frames) {
        out.insert(out.end(), {0x21, 0xF9, 0x04, 0x00});
        put_u16(out, static_cast<uint16_t>(delay_centiseconds));
        out.push_back(0);
        out.push_back(0);
        out.push_back(0x2C);  // image descriptor
        put_u16(out, 0);
        put_u16(out, 0);
        put_u16(out, static_cast<uint16_t>(width));
        put_u16(out, static_cast<uint16_t>(height));
        out.push_back(0);     // no local color table
        out.push_back(8);     // minimum LZW code size
        GifCodeStream codes(out);
        const int clear = 256, end = 257;
        codes.put(clear);
        int since_clear = 0;
        for (uint8_t px : frame) {
            codes.put(px);
            // table holds 4096 codes; clear well before it fills
            if (++since_clear >= 3800) {
                codes.put(clear);
                since_clear = 0;
            }
        }
        codes.put(end);
        codes.finish();
    }
    out.push_back(0x3B);  // trailer

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("write_gif_grayscale: cannot open " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

}  // namespace freecho
