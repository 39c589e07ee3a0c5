#pragma once

// Annotated-frame output: SVG with the raster embedded as a base64 BMP data
// URI (BMP keeps the encoder dependency-free) and detection boxes drawn on top.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "fireyolo/box.hpp"
#include "fireyolo/dataset.hpp"

namespace fy {

inline std::vector<uint8_t> encode_bmp(const Image& img) {
    const int w = img.width, h = img.height;
    const int row_stride = (w * 3 + 3) / 4 * 4;
    const uint32_t data_size = row_stride * h;
    const uint32_t file_size = 54 + data_size;
    std::vector<uint8_t> out;
    out.reserve(file_size);
    auto u16 = [&](uint16_t v) {
        out.push_back(v & 0xff);
        out.push_back(v >> 8);
    };
    auto u32 = [&](uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
    };
    out.push_back('B');
    out.push_back('M');
    u32(file_size);
    u32(0);
    u32(54);
    u32(40);  // BITMAPINFOHEADER
    u32(static_cast<uint32_t>(w));
    u32(static_cast<uint32_t>(h));
    u16(1);
    u16(24);
    u32(0);
    u32(data_size);
    u32(2835);
    u32(2835);
    u32(0);
    u32(0);
    for (int y = h - 1; y >= 0; --y) {  // bottom-up rows, BGR
        for (int x = 0; x < w; ++x) {
            out.push_back(img.at(y, x, 2));
            out.push_back(img.at(y, x, 1));
            out.push_back(img.at(y, x, 0));
        }
        for (int p = w * 3; p < row_stride; ++p) out.push_back(0);
    }
    return out;
}

inline std::string base64_encode(const std::vector<uint8_t>& data) {
    static const char tbl[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((data.size() + 2) / 3 * 4);
    size_t i = 0;
    for (; i + 3 <= data.size(); i += 3) {
        uint32_t v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.push_back(tbl[(v >> 6) & 63]);
        out.push_back(tbl[v & 63]);
    }
    if (i + 1 == data.size()) {
        uint32_t v = data[i] << 16;
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out += "==";
    } else if (i + 2 == data.size()) {
        uint32_t v = (data[i] << 16) | (data[i + 1] << 8);
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.push_back(tbl[(v >> 6) & 63]);
        out += "=";
    }
    return out;
}

inline void write_overlay_svg(const std::string& path, const Image& img,
                              const std::vector<Detection>& dets) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write overlay: " + path);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << img.width << "\" height=\""
       << img.height << "\">\n";
    os << "<image width=\"" << img.width << "\" height=\"" << img.height
       << "\" href=\"data:image/bmp;base64," << base64_encode(encode_bmp(img)) << "\"/>\n";
    for (const auto& d : dets) {
        os << "<rect x=\"" << d.box.x1 << "\" y=\"" << d.box.y1 << "\" width=\""
           << d.box.x2 - d.box.x1 << "\" height=\"" << d.box.y2 - d.box.y1
           << "\" fill=\"none\" stroke=\"lime\" stroke-width=\"2\"/>\n";
        char label[64];
        std::snprintf(label, sizeof(label), "%d:%.2f", d.class_id, d.confidence);
        os << "<text x=\"" << d.box.x1 + 2 << "\" y=\"" << d.box.y1 + 14
           << "\" fill=\"lime\" font-size=\"12\">" << label << "</text>\n";
    }
    os << "</svg>\n";
}

}  // namespace fy
