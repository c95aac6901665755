#include "rdet/image.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>

#include "rdet/errors.hpp"

namespace rdet::imaging {

namespace {

uint8_t to_byte(double v) {
  const double s = std::lround(v * 255.0);
  return uint8_t(s < 0.0 ? 0.0 : (s > 255.0 ? 255.0 : s));
}

// Netpbm headers are whitespace-delimited tokens; '#' starts a comment
// running to end of line.
int read_pnm_token(std::istream& in, const std::string& path) {
  int c = in.get();
  while (c == '#' || std::isspace(c)) {
    if (c == '#') {
      while (c != '\n' && c != EOF) c = in.get();
    }
    c = in.get();
  }
  if (c == EOF) throw IoError(path + ": truncated header");
  std::string tok;
  while (c != EOF && !std::isspace(c) && c != '#') {
    tok.push_back(char(c));
    c = in.get();
  }
  // Leave the delimiter unread: the byte after the last header token is the
  // single separator preceding the payload.
  if (c != EOF) in.unget();
  try {
    size_t pos = 0;
    const int v = std::stoi(tok, &pos);
    if (pos != tok.size() || v < 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw IoError(path + ": malformed header token '" + tok + "'");
  }
}

}  // namespace

void save_image(const Image& img, const std::string& path) {
  const int ch = img.channels();
  if (ch != 1 && ch != 3)
    throw IoError(path + ": image must have 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << (ch == 1 ? "P5" : "P6") << "\n"
      << img.width() << " " << img.height() << "\n255\n";
  std::vector<uint8_t> row(size_t(img.width()) * size_t(ch));
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < ch; ++c)
        row[size_t(x) * size_t(ch) + size_t(c)] = to_byte(img.at(y, x, c));
    out.write(reinterpret_cast<const char*>(row.data()),
              std::streamsize(row.size()));
  }
  if (!out) throw IoError(path + ": write failed");
}

Image load_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open");
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || (m1 != '5' && m1 != '6'))
    throw IoError(path + ": not a binary PGM/PPM file");
  const int ch = (m1 == '5') ? 1 : 3;
  const int w = read_pnm_token(in, path);
  const int h = read_pnm_token(in, path);
  const int maxval = read_pnm_token(in, path);
  if (w <= 0 || h <= 0) throw IoError(path + ": empty image");
  if (maxval != 255) throw IoError(path + ": only maxval 255 supported");
  // Exactly one whitespace byte separates the header from the payload.
  const int sep = in.get();
  if (sep == EOF || !std::isspace(sep)) throw IoError(path + ": bad header");
  Image img(h, w, ch);
  std::vector<uint8_t> row(size_t(w) * size_t(ch));
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size()));
    if (in.gcount() != std::streamsize(row.size()))
      throw IoError(path + ": truncated payload");
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c)
        img.at(y, x, c) = row[size_t(x) * size_t(ch) + size_t(c)] / 255.0;
  }
  return img;
}

std::vector<double> image_mean(const std::vector<Image>& images) {
  if (images.empty())
    throw std::invalid_argument("image_mean: empty dataset");
  const int ch = images[0].channels();
  std::vector<double> sum(size_t(ch), 0.0);
  double count = 0.0;
  for (const Image& img : images) {
    if (img.channels() != ch)
      throw std::invalid_argument("image_mean: mixed channel counts");
    for (int c = 0; c < ch; ++c) sum[size_t(c)] += img.planes[size_t(c)].sum();
    count += double(img.width()) * double(img.height());
  }
  for (double& s : sum) s /= count;
  return sum;
}

}  // namespace rdet::imaging
