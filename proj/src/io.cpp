#include "mapfm/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include "mapfm/error.hpp"

namespace mapfm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json element_to_json(const MapElement& e) {
  json pts = json::array();
  for (const Point2& p : e.points) pts.push_back({p.x, p.y});
  return json{{"class", std::string(to_string(e.class_label))}, {"closed", e.closed}, {"points", pts}};
}

MapElement element_from_json(const json& j) {
  MapElement e;
  e.class_label = map_class_from_string(j.at("class").get<std::string>());
  e.closed = j.value("closed", false);
  for (const json& p : j.at("points")) {
    if (!p.is_array() || p.size() != 2) throw Error("map point must be [x, y]");
    e.points.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  validate_element(e);
  return e;
}

std::vector<json> sample_list(const json& j) {
  if (j.contains("samples")) return j.at("samples").get<std::vector<json>>();
  if (j.contains("elements")) return {j};
  throw Error("map file must contain 'elements' or 'samples'");
}

// Reads a PNM header "P5/P6 width height maxval" followed by one whitespace byte.
void read_pnm_header(std::istream& in, const std::string& magic, int& width, int& height, const fs::path& path) {
  std::string m;
  int maxval = 0;
  in >> m;
  auto skip_comments = [&] {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string line;
      std::getline(in, line);
      in >> std::ws;
    }
  };
  skip_comments();
  in >> width;
  skip_comments();
  in >> height;
  skip_comments();
  in >> maxval;
  in.get();
  if (!in || m != magic || width <= 0 || height <= 0 || maxval != 255)
    throw Error("malformed " + magic + " header: " + path.string());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open for reading: " + path.string());
  return in;
}

}  // namespace

json map_to_json(const VectorMap& map) {
  json elems = json::array();
  for (const MapElement& e : map.elements) elems.push_back(element_to_json(e));
  return json{{"elements", elems}};
}

json map_to_json(const ScoredMap& map) {
  json elems = json::array();
  for (const ScoredElement& s : map.elements) {
    json e = element_to_json(s.element);
    e["score"] = s.confidence;
    elems.push_back(e);
  }
  return json{{"elements", elems}};
}

VectorMap vector_map_from_json(const json& j) {
  VectorMap m;
  for (const json& e : j.at("elements")) m.elements.push_back(element_from_json(e));
  return m;
}

ScoredMap scored_map_from_json(const json& j) {
  ScoredMap m;
  for (const json& e : j.at("elements")) {
    const double score = e.value("score", 1.0);
    if (!std::isfinite(score)) throw Error("non-finite prediction score");
    m.elements.push_back({element_from_json(e), score});
  }
  std::stable_sort(m.elements.begin(), m.elements.end(),
                   [](const ScoredElement& a, const ScoredElement& b) { return a.confidence > b.confidence; });
  return m;
}

std::vector<ScoredMap> read_scored_maps(const fs::path& path) {
  std::vector<ScoredMap> out;
  for (const json& s : sample_list(read_json(path))) out.push_back(scored_map_from_json(s));
  return out;
}

std::vector<VectorMap> read_vector_maps(const fs::path& path) {
  std::vector<VectorMap> out;
  for (const json& s : sample_list(read_json(path))) out.push_back(vector_map_from_json(s));
  return out;
}

void write_scored_maps(const fs::path& path, const std::vector<ScoredMap>& maps) {
  json samples = json::array();
  for (const ScoredMap& m : maps) samples.push_back(map_to_json(m));
  write_text(path, json{{"samples", samples}}.dump(1) + "\n");
}

void write_vector_maps(const fs::path& path, const std::vector<VectorMap>& maps) {
  json samples = json::array();
  for (const VectorMap& m : maps) samples.push_back(map_to_json(m));
  write_text(path, json{{"samples", samples}}.dump(1) + "\n");
}

void write_pgm(const fs::path& path, const Mask& mask) {
  std::ofstream out = open_out(path);
  out << "P5\n" << mask.cols << " " << mask.rows << "\n255\n";
  std::vector<char> bytes(mask.data.size());
  std::transform(mask.data.begin(), mask.data.end(), bytes.begin(),
                 [](std::uint8_t v) { return static_cast<char>(v ? 255 : 0); });
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

Mask read_pgm(const fs::path& path) {
  std::ifstream in = open_in(path);
  int w = 0, h = 0;
  read_pnm_header(in, "P5", w, h, path);
  Mask m(h, w);
  std::vector<char> bytes(m.data.size());
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw Error("truncated PGM payload: " + path.string());
  std::transform(bytes.begin(), bytes.end(), m.data.begin(),
                 [](char v) { return static_cast<std::uint8_t>(static_cast<unsigned char>(v) >= 128 ? 1 : 0); });
  return m;
}

void write_ppm(const fs::path& path, const Image& image) {
  std::ofstream out = open_out(path);
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  std::vector<char> bytes(image.rgb.size());
  std::transform(image.rgb.begin(), image.rgb.end(), bytes.begin(), [](double v) {
    return static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  });
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

Image read_ppm(const fs::path& path) {
  std::ifstream in = open_in(path);
  int w = 0, h = 0;
  read_pnm_header(in, "P6", w, h, path);
  Image img(h, w);
  std::vector<char> bytes(img.rgb.size());
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw Error("truncated PPM payload: " + path.string());
  std::transform(bytes.begin(), bytes.end(), img.rgb.begin(),
                 [](char v) { return static_cast<unsigned char>(v) / 255.0; });
  return img;
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw Error("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out = open_out(path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1)
    throw Error("SHA-256 computation failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_text(path)); }

}  // namespace mapfm
