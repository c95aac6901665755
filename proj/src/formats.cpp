#include "rdet/formats.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "rdet/errors.hpp"

namespace rdet::formats {

namespace {

// Binary payloads are raw host-order scalars; the formats are specified as
// little-endian, which every supported target is.
static_assert(std::endian::native == std::endian::little);

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

// Yields non-empty, non-comment lines.
std::vector<std::string> data_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    size_t start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    out.push_back(line);
  }
  return out;
}

int parse_int(const std::string& token) {
  size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(token, &used);
  } catch (const std::exception&) {
    throw IoError("bad integer field: '" + token + "'");
  }
  if (used != token.size())
    throw IoError("bad integer field: '" + token + "'");
  return v;
}

[[noreturn]] void bad_record(const char* what, const std::string& line) {
  throw IoError(std::string(what) + ": bad record '" + line + "'");
}

// Appending writers for the binary formats.
void put_bytes(std::string& buf, const void* p, size_t n) {
  buf.append(static_cast<const char*>(p), n);
}
void put_u32(std::string& buf, uint32_t v) { put_bytes(buf, &v, 4); }
void put_i32(std::string& buf, int32_t v) { put_bytes(buf, &v, 4); }
void put_f64(std::string& buf, double v) { put_bytes(buf, &v, 8); }

class Reader {
 public:
  Reader(const std::string& buf, const char* what) : buf_(buf), what_(what) {}

  void take(void* dst, size_t n) {
    if (pos_ + n > buf_.size())
      throw IoError(std::string(what_) + ": truncated file");
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  uint32_t u32() { uint32_t v; take(&v, 4); return v; }
  int32_t i32() { int32_t v; take(&v, 4); return v; }
  double f64() { double v; take(&v, 8); return v; }
  std::string str(size_t n) {
    std::string s(n, '\0');
    take(s.data(), n);
    return s;
  }
  void expect_magic(const char* magic) {
    if (str(4) != magic)
      throw IoError(std::string(what_) + ": bad magic, expected " + magic);
  }
  void expect_version(uint32_t v) {
    const uint32_t got = u32();
    if (got != v)
      throw IoError(std::string(what_) + ": unsupported version " +
                    std::to_string(got));
  }
  void expect_end() {
    if (pos_ != buf_.size())
      throw IoError(std::string(what_) + ": trailing bytes");
  }

 private:
  const std::string& buf_;
  const char* what_;
  size_t pos_ = 0;
};

}  // namespace

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& token) {
  char* end = nullptr;
  const double v = std::strtod(token.c_str(), &end);
  if (end != token.c_str() + token.size() || token.empty())
    throw IoError("bad numeric field: '" + token + "'");
  return v;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream out;
  out << in.rdbuf();
  if (!in.good() && !in.eof()) throw IoError("read failed: " + path);
  return out.str();
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp);
    out.write(contents.data(), std::streamsize(contents.size()));
    out.flush();
    if (!out.good()) throw IoError("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("rename failed: " + tmp + " -> " + path);
}

// --------------------------------------------------------------------------

std::string proposals_to_text(const std::vector<proposals::ProposalSet>& sets) {
  std::string out = "# image_id x_min y_min x_max y_max source_tag\n";
  for (const auto& set : sets)
    for (const auto& b : set.boxes) {
      out += std::to_string(set.image_id);
      for (double v : {b.x_min, b.y_min, b.x_max, b.y_max})
        out += ' ' + format_double(v);
      out += ' ' + (set.source_tag.empty() ? std::string("-") : set.source_tag);
      out += '\n';
    }
  return out;
}

std::vector<proposals::ProposalSet> proposals_from_text(
    const std::string& text) {
  std::vector<proposals::ProposalSet> sets;
  for (const std::string& line : data_lines(text)) {
    const auto tok = split_ws(line);
    if (tok.size() != 6) bad_record("proposals", line);
    const int image_id = parse_int(tok[0]);
    const std::string tag = tok[5] == "-" ? std::string() : tok[5];
    if (sets.empty() || sets.back().image_id != image_id ||
        sets.back().source_tag != tag) {
      sets.push_back({image_id, {}, tag});
    }
    sets.back().boxes.push_back({parse_double(tok[1]), parse_double(tok[2]),
                                 parse_double(tok[3]), parse_double(tok[4])});
  }
  return sets;
}

std::string annotations_to_text(
    const std::vector<synthdata::Annotation>& annotations) {
  std::string out = "# image_id class_id x_min y_min x_max y_max\n";
  for (const auto& ann : annotations)
    for (const auto& obj : ann.objects) {
      out += std::to_string(ann.image_id) + ' ' + std::to_string(obj.class_id);
      for (double v : {obj.box.x_min, obj.box.y_min, obj.box.x_max,
                       obj.box.y_max})
        out += ' ' + format_double(v);
      out += '\n';
    }
  return out;
}

std::vector<synthdata::Annotation> annotations_from_text(
    const std::string& text) {
  std::vector<synthdata::Annotation> anns;
  for (const std::string& line : data_lines(text)) {
    const auto tok = split_ws(line);
    if (tok.size() != 6) bad_record("annotations", line);
    const int image_id = parse_int(tok[0]);
    if (anns.empty() || anns.back().image_id != image_id) {
      anns.push_back({image_id, {}});
    }
    anns.back().objects.push_back(
        {parse_int(tok[1]),
         {parse_double(tok[2]), parse_double(tok[3]), parse_double(tok[4]),
          parse_double(tok[5])}});
  }
  return anns;
}

std::string detections_to_text(
    const std::vector<detection::Detection>& detections) {
  std::string out = "# image_id class_id score x_min y_min x_max y_max\n";
  for (const auto& d : detections) {
    out += std::to_string(d.image_id) + ' ' + std::to_string(d.class_id) +
           ' ' + format_double(d.score);
    for (double v : {d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max})
      out += ' ' + format_double(v);
    out += '\n';
  }
  return out;
}

std::vector<detection::Detection> detections_from_text(
    const std::string& text) {
  std::vector<detection::Detection> dets;
  for (const std::string& line : data_lines(text)) {
    const auto tok = split_ws(line);
    if (tok.size() != 7) bad_record("detections", line);
    dets.push_back({parse_int(tok[0]),
                    parse_int(tok[1]),
                    {parse_double(tok[3]), parse_double(tok[4]),
                     parse_double(tok[5]), parse_double(tok[6])},
                    parse_double(tok[2])});
  }
  return dets;
}

// --------------------------------------------------------------------------

std::string manifest_to_text(const DatasetManifest& manifest) {
  std::string out = "# dataset manifest\n";
  for (size_t c = 0; c < manifest.class_names.size(); ++c)
    out += "class " + std::to_string(c) + ' ' + manifest.class_names[c] + ' ' +
           std::to_string(manifest.similarity_groups[c]) + '\n';
  for (const auto& img : manifest.images)
    out += "image " + std::to_string(img.image_id) + ' ' + img.path + '\n';
  return out;
}

DatasetManifest manifest_from_text(const std::string& text) {
  DatasetManifest m;
  for (const std::string& line : data_lines(text)) {
    const auto tok = split_ws(line);
    if (tok[0] == "class") {
      if (tok.size() != 4) bad_record("manifest", line);
      if (parse_int(tok[1]) != int(m.class_names.size()))
        throw IoError("manifest: class ids must be dense and ascending");
      m.class_names.push_back(tok[2]);
      m.similarity_groups.push_back(parse_int(tok[3]));
    } else if (tok[0] == "image") {
      if (tok.size() != 3) bad_record("manifest", line);
      m.images.push_back({parse_int(tok[1]), tok[2]});
    } else {
      bad_record("manifest", line);
    }
  }
  return m;
}

// --------------------------------------------------------------------------

void save_classifier(const std::string& path,
                     const training::ClassifierModel& model) {
  std::string buf;
  put_bytes(buf, "RSVM", 4);
  put_u32(buf, 1);
  put_i32(buf, model.dim());
  put_i32(buf, model.num_classes());
  for (int c = 0; c < model.num_classes(); ++c) {
    put_i32(buf, model.class_ids[size_t(c)]);
    put_f64(buf, model.b(c));
    for (int j = 0; j < model.dim(); ++j) put_f64(buf, model.W(j, c));
  }
  write_file_atomic(path, buf);
}

training::ClassifierModel load_classifier(const std::string& path) {
  const std::string buf = read_file(path);
  Reader r(buf, "classifier");
  r.expect_magic("RSVM");
  r.expect_version(1);
  const int dim = r.i32();
  const int classes = r.i32();
  if (dim < 0 || classes < 0) throw IoError("classifier: negative dims");
  training::ClassifierModel model;
  model.W.resize(dim, classes);
  model.b.resize(classes);
  for (int c = 0; c < classes; ++c) {
    model.class_ids.push_back(r.i32());
    model.b(c) = r.f64();
    for (int j = 0; j < dim; ++j) model.W(j, c) = r.f64();
  }
  r.expect_end();
  return model;
}

void save_regressor(const std::string& path,
                    const training::BBoxRegressor& regressor) {
  std::string buf;
  put_bytes(buf, "RBBR", 4);
  put_u32(buf, 1);
  put_i32(buf, regressor.dim);
  put_i32(buf, int(regressor.weights.size()));
  put_f64(buf, regressor.lambda);
  put_f64(buf, regressor.assign_iou);
  for (size_t c = 0; c < regressor.weights.size(); ++c) {
    put_u32(buf, regressor.trained[c]);
    if (!regressor.trained[c]) continue;
    const Eigen::MatrixXd& W = regressor.weights[c];
    for (Eigen::Index i = 0; i < W.rows(); ++i)
      for (Eigen::Index j = 0; j < W.cols(); ++j) put_f64(buf, W(i, j));
  }
  write_file_atomic(path, buf);
}

training::BBoxRegressor load_regressor(const std::string& path) {
  const std::string buf = read_file(path);
  Reader r(buf, "regressor");
  r.expect_magic("RBBR");
  r.expect_version(1);
  training::BBoxRegressor reg;
  reg.dim = r.i32();
  const int classes = r.i32();
  if (reg.dim < 0 || classes < 0) throw IoError("regressor: negative dims");
  reg.lambda = r.f64();
  reg.assign_iou = r.f64();
  for (int c = 0; c < classes; ++c) {
    const uint32_t trained = r.u32();
    reg.trained.push_back(uint8_t(trained != 0));
    if (!trained) {
      reg.weights.emplace_back();
      continue;
    }
    Eigen::MatrixXd W(reg.dim + 1, 4);
    for (Eigen::Index i = 0; i < W.rows(); ++i)
      for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = r.f64();
    reg.weights.push_back(std::move(W));
  }
  r.expect_end();
  return reg;
}

void save_feature_block(const std::string& path, const FeatureBlock& block) {
  std::string buf;
  put_bytes(buf, "RFTC", 4);
  put_u32(buf, 1);
  put_i32(buf, block.image_id);
  put_i32(buf, int(block.features.rows()));
  put_i32(buf, int(block.features.cols()));
  put_u32(buf, uint32_t(block.tag.size()));
  put_bytes(buf, block.tag.data(), block.tag.size());
  // Row-major storage, so this is rows of contiguous feature vectors.
  put_bytes(buf, block.features.data(),
            sizeof(double) * size_t(block.features.size()));
  write_file_atomic(path, buf);
}

FeatureBlock load_feature_block(const std::string& path) {
  const std::string buf = read_file(path);
  Reader r(buf, "feature block");
  r.expect_magic("RFTC");
  r.expect_version(1);
  FeatureBlock block;
  block.image_id = r.i32();
  const int rows = r.i32();
  const int cols = r.i32();
  if (rows < 0 || cols < 0) throw IoError("feature block: negative dims");
  block.tag = r.str(r.u32());
  block.features.resize(rows, cols);
  r.take(block.features.data(), sizeof(double) * size_t(block.features.size()));
  r.expect_end();
  return block;
}

}  // namespace rdet::formats
