#include "pga/image.hpp"

#include "pga/errors.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace pga {
namespace {

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void png_append(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + length);
}

void png_no_flush(png_structp) {}

[[noreturn]] void png_fail(png_structp, png_const_charp msg) { throw std::runtime_error(std::string("libpng: ") + msg); }

void png_quiet(png_structp, png_const_charp) {}

struct PngWriteHandle {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriteHandle() { png_destroy_write_struct(&png, &info); }
};

struct PngReadHandle {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReadHandle() { png_destroy_read_struct(&png, &info, nullptr); }
};

}  // namespace

std::size_t Mask::count() const { return static_cast<std::size_t>(std::count(data.begin(), data.end(), 1)); }

std::vector<std::uint8_t> encode_png(const Image& image) {
    if (image.channels != 1 && image.channels != 3) throw InvalidParameter("PNG export needs 1 or 3 channels");
    if (image.width <= 0 || image.height <= 0) throw InvalidParameter("PNG export of an empty image");
    PngWriteHandle h;
    h.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_quiet);
    if (!h.png) throw std::runtime_error("png_create_write_struct failed");
    h.info = png_create_info_struct(h.png);
    if (!h.info) throw std::runtime_error("png_create_info_struct failed");

    std::vector<std::uint8_t> out;
    png_set_write_fn(h.png, &out, png_append, png_no_flush);
    png_set_IHDR(h.png, h.info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(h.png, h.info);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(image.width) * image.channels);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < image.channels; ++c) row[x * image.channels + c] = to_byte(image.at(x, y, c));
        }
        png_write_row(h.png, row.data());
    }
    png_write_end(h.png, nullptr);
    return out;
}

void write_png(const Image& image, const std::filesystem::path& path) {
    const auto bytes = encode_png(image);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Image read_png(const std::filesystem::path& path) {
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
    if (!fp) throw std::runtime_error("cannot open '" + path.string() + "'");
    PngReadHandle h;
    h.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_quiet);
    if (!h.png) throw std::runtime_error("png_create_read_struct failed");
    h.info = png_create_info_struct(h.png);
    if (!h.info) throw std::runtime_error("png_create_info_struct failed");
    png_init_io(h.png, fp.get());
    png_read_info(h.png, h.info);

    png_set_strip_16(h.png);
    png_set_strip_alpha(h.png);
    png_set_palette_to_rgb(h.png);
    png_set_expand_gray_1_2_4_to_8(h.png);
    png_read_update_info(h.png, h.info);

    const int width = static_cast<int>(png_get_image_width(h.png, h.info));
    const int height = static_cast<int>(png_get_image_height(h.png, h.info));
    const int channels = png_get_channels(h.png, h.info);
    if (channels != 1 && channels != 3) throw std::runtime_error("unsupported PNG channel layout");

    Image img(width, height, channels);
    std::vector<std::uint8_t> row(png_get_rowbytes(h.png, h.info));
    for (int y = 0; y < height; ++y) {
        png_read_row(h.png, row.data(), nullptr);
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < channels; ++c) img.at(x, y, c) = row[x * channels + c] / 255.0;
        }
    }
    return img;
}

void write_float_dump(const Image& image, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out.write("PGAF", 4);
    const std::uint32_t dims[3] = {static_cast<std::uint32_t>(image.height), static_cast<std::uint32_t>(image.width),
                                   static_cast<std::uint32_t>(image.channels)};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    for (double v : image.data) {
        const float f = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&f), sizeof f);
    }
}

Image read_float_dump(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    char magic[4];
    std::uint32_t dims[3];
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(dims), sizeof dims);
    if (!in || std::memcmp(magic, "PGAF", 4) != 0) {
        throw ParseError("bad float dump header", ParseError::Location::Record, 0);
    }
    Image img(static_cast<int>(dims[1]), static_cast<int>(dims[0]), static_cast<int>(dims[2]));
    std::vector<float> buf(img.data.size());
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float))) {
        throw ParseError("truncated float dump", ParseError::Location::Record,
                         static_cast<std::size_t>(in.gcount()) / sizeof(float));
    }
    std::copy(buf.begin(), buf.end(), img.data.begin());
    return img;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("SHA-256 failed");
    }
    std::ostringstream ss;
    for (unsigned i = 0; i < len; ++i) ss << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return ss.str();
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return sha256_hex(bytes);
}

}  // namespace pga
