#include "drfuser/image_io.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <string>

#include "drfuser/errors.hpp"

namespace drfuser {

void write_netpbm(const std::filesystem::path& path, const Image8& image) {
    if (image.channels != 1 && image.channels != 3)
        throw DimensionError("netpbm images need 1 or 3 channels, got " + std::to_string(image.channels));
    if (image.pixels.size() != image.width * image.height * image.channels)
        throw DimensionError("pixel buffer does not match " + std::to_string(image.width) + "x" +
                             std::to_string(image.height) + "x" + std::to_string(image.channels));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out << (image.channels == 3 ? "P6" : "P5") << "\n" << image.width << " " << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()),
              static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw DataError("short write to " + path.string());
}

namespace {

class HeaderReader {
public:
    HeaderReader(const std::vector<char>& buf, const std::string& origin) : buf_(buf), origin_(origin) {}

    std::size_t number() {
        skip_space();
        std::size_t v = 0;
        bool any = false;
        while (pos_ < buf_.size() && std::isdigit(static_cast<unsigned char>(buf_[pos_]))) {
            v = v * 10 + static_cast<std::size_t>(buf_[pos_++] - '0');
            any = true;
            if (v > (1u << 24)) throw DataError(origin_ + ": header value too large");
        }
        if (!any) throw DataError(origin_ + ": malformed netpbm header");
        return v;
    }

    void skip_space() {
        while (pos_ < buf_.size()) {
            if (buf_[pos_] == '#') {
                while (pos_ < buf_.size() && buf_[pos_] != '\n') ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(buf_[pos_]))) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::size_t pos_ = 0;

private:
    const std::vector<char>& buf_;
    const std::string& origin_;
};

}  // namespace

Image8 read_netpbm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    const std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string origin = path.string();
    if (buf.size() < 2 || buf[0] != 'P' || (buf[1] != '5' && buf[1] != '6'))
        throw DataError(origin + ": not a binary PGM/PPM file");
    Image8 img;
    img.channels = buf[1] == '6' ? 3 : 1;
    HeaderReader h(buf, origin);
    h.pos_ = 2;
    img.width = h.number();
    img.height = h.number();
    if (h.number() != 255) throw DataError(origin + ": only 8-bit images (maxval 255) are supported");
    if (h.pos_ >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[h.pos_])))
        throw DataError(origin + ": malformed netpbm header");
    const std::size_t start = h.pos_ + 1;
    const std::size_t n = img.width * img.height * img.channels;
    if (buf.size() - start != n)
        throw DataError(origin + ": expected " + std::to_string(n) + " pixel bytes, found " +
                        std::to_string(buf.size() - start));
    img.pixels.assign(buf.begin() + static_cast<std::ptrdiff_t>(start), buf.end());
    return img;
}

}  // namespace drfuser
