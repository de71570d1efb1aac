#include "tfti2i/image.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <sstream>

#include "tfti2i/error.hpp"

namespace tfti2i {

Image Image::filled(std::size_t width, std::size_t height, std::size_t channels,
                    std::uint8_t value) {
  Image img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.pixels.assign(width * height * channels, value);
  return img;
}

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(const std::string& bytes) : bytes_(bytes) {}

  std::size_t next_number() {
    skip_space_and_comments();
    std::size_t value = 0;
    bool any = false;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      ++pos_;
      any = true;
    }
    if (!any) throw Error(Errc::Io, "malformed PNM header");
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_offset() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw Error(Errc::Io, "missing separator before PNM raster");
    }
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 2;
};

}  // namespace

Image parse_pnm(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw Error(Errc::Io, "not a binary PGM/PPM file");
  }
  Image img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  HeaderReader header(bytes);
  img.width = header.next_number();
  img.height = header.next_number();
  const std::size_t maxval = header.next_number();
  if (maxval == 0 || maxval > 255) throw Error(Errc::Io, "only 8-bit PNM is supported");
  const std::size_t offset = header.raster_offset();
  const std::size_t expected = img.width * img.height * img.channels;
  if (bytes.size() - offset < expected) throw Error(Errc::Io, "truncated PNM raster");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                    bytes.begin() + static_cast<std::ptrdiff_t>(offset + expected));
  return img;
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_pnm(bytes);
}

std::string encode_pnm(const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw Error(Errc::BadImageShape, "PNM supports 1 or 3 channels");
  }
  std::ostringstream out;
  out << (image.channels == 1 ? "P5" : "P6") << '\n'
      << image.width << ' ' << image.height << '\n'
      << 255 << '\n';
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  return out.str();
}

void write_pnm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  const std::string bytes = encode_pnm(image);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace tfti2i
