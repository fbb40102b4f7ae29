#include "ovhr3d/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ovhr3d/error.hpp"
#include "ovhr3d/png.hpp"

namespace ovhr3d {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return std::move(buf).str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

namespace {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

// ---------------------------------------------------------------------------
// PLY

enum class PlyType { kI8, kU8, kI16, kU16, kI32, kU32, kF32, kF64 };

std::optional<PlyType> ply_type(std::string_view name) {
  if (name == "char" || name == "int8") return PlyType::kI8;
  if (name == "uchar" || name == "uint8") return PlyType::kU8;
  if (name == "short" || name == "int16") return PlyType::kI16;
  if (name == "ushort" || name == "uint16") return PlyType::kU16;
  if (name == "int" || name == "int32") return PlyType::kI32;
  if (name == "uint" || name == "uint32") return PlyType::kU32;
  if (name == "float" || name == "float32") return PlyType::kF32;
  if (name == "double" || name == "float64") return PlyType::kF64;
  return std::nullopt;
}

std::size_t type_size(PlyType t) {
  switch (t) {
    case PlyType::kI8:
    case PlyType::kU8:
      return 1;
    case PlyType::kI16:
    case PlyType::kU16:
      return 2;
    case PlyType::kI32:
    case PlyType::kU32:
    case PlyType::kF32:
      return 4;
    case PlyType::kF64:
      return 8;
  }
  return 0;
}

bool is_integral(PlyType t) { return t != PlyType::kF32 && t != PlyType::kF64; }

struct PlyProperty {
  std::string name;
  bool is_list = false;
  PlyType count_type = PlyType::kU8;
  PlyType type = PlyType::kF32;
};

struct PlyElement {
  std::string name;
  std::uint64_t count = 0;
  std::vector<PlyProperty> props;
  std::size_t header_line = 0;
};

/// Decoded values of one property across all rows. Scalars fill `values`;
/// lists fill `values` with items and `offsets` with row boundaries.
struct PlyColumn {
  PlyType type = PlyType::kF32;
  bool is_list = false;
  std::vector<double> values;
  std::vector<std::uint64_t> offsets;
};

struct PlyElementData {
  std::string name;
  std::uint64_t count = 0;
  std::size_t header_line = 0;
  std::vector<std::string> order;
  std::map<std::string, PlyColumn> columns;

  const PlyColumn* find(const std::string& prop) const {
    const auto it = columns.find(prop);
    return it == columns.end() ? nullptr : &it->second;
  }
};

struct PlyFile {
  bool binary = false;
  std::vector<PlyElementData> elements;

  const PlyElementData* find(const std::string& name) const {
    for (const auto& e : elements) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }
};

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

double scalar_limit_check(double v, PlyType t, bool& ok) {
  ok = true;
  switch (t) {
    case PlyType::kI8:
      ok = v >= -128 && v <= 127;
      break;
    case PlyType::kU8:
      ok = v >= 0 && v <= 255;
      break;
    case PlyType::kI16:
      ok = v >= -32768 && v <= 32767;
      break;
    case PlyType::kU16:
      ok = v >= 0 && v <= 65535;
      break;
    case PlyType::kI32:
      ok = v >= -2147483648.0 && v <= 2147483647.0;
      break;
    case PlyType::kU32:
      ok = v >= 0 && v <= 4294967295.0;
      break;
    case PlyType::kF32:
      return static_cast<double>(static_cast<float>(v));
    case PlyType::kF64:
      break;
  }
  return v;
}

class PlyReader {
 public:
  PlyReader(std::string_view bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  PlyFile read() {
    std::vector<PlyElement> elements = parse_header();
    PlyFile file;
    file.binary = binary_;
    for (const auto& el : elements) file.elements.push_back(binary_ ? read_binary(el) : read_ascii(el));
    return file;
  }

 private:
  [[noreturn]] void fail_line(std::size_t line, const std::string& msg) const {
    throw ParseError(source_, line, pos_, msg);
  }
  [[noreturn]] void fail_at(std::size_t offset, const std::string& msg) const {
    throw ParseError(source_, 0, offset, msg);
  }

  std::optional<std::string_view> next_line() {
    if (pos_ >= bytes_.size()) return std::nullopt;
    const auto nl = bytes_.find('\n', pos_);
    const auto end = nl == std::string_view::npos ? bytes_.size() : nl;
    auto line = bytes_.substr(pos_, end - pos_);
    pos_ = nl == std::string_view::npos ? bytes_.size() : nl + 1;
    ++line_;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    return line;
  }

  std::vector<PlyElement> parse_header() {
    auto magic = next_line();
    if (!magic || *magic != "ply") fail_line(1, "missing 'ply' magic line");
    std::vector<PlyElement> elements;
    bool have_format = false;
    for (;;) {
      auto line = next_line();
      if (!line) fail_line(line_, "header ended without end_header");
      const auto tok = split_ws(*line);
      if (tok.empty()) continue;
      if (tok[0] == "end_header") break;
      if (tok[0] == "comment" || tok[0] == "obj_info") continue;
      if (tok[0] == "format") {
        if (tok.size() != 3) fail_line(line_, "malformed format line");
        if (tok[1] == "ascii") {
          binary_ = false;
        } else if (tok[1] == "binary_little_endian") {
          binary_ = true;
        } else {
          fail_line(line_, "unsupported PLY encoding '" + std::string(tok[1]) + "'");
        }
        have_format = true;
      } else if (tok[0] == "element") {
        if (tok.size() != 3) fail_line(line_, "malformed element line");
        PlyElement el;
        el.name = std::string(tok[1]);
        el.header_line = line_;
        const auto r = std::from_chars(tok[2].data(), tok[2].data() + tok[2].size(), el.count);
        if (r.ec != std::errc{} || r.ptr != tok[2].data() + tok[2].size()) fail_line(line_, "bad element count");
        elements.push_back(std::move(el));
      } else if (tok[0] == "property") {
        if (elements.empty()) fail_line(line_, "property before any element");
        PlyProperty p;
        if (tok.size() == 5 && tok[1] == "list") {
          const auto ct = ply_type(tok[2]);
          const auto it = ply_type(tok[3]);
          if (!ct || !it || !is_integral(*ct)) fail_line(line_, "bad list property types");
          p.is_list = true;
          p.count_type = *ct;
          p.type = *it;
          p.name = std::string(tok[4]);
        } else if (tok.size() == 3) {
          const auto t = ply_type(tok[1]);
          if (!t) fail_line(line_, "unknown property type '" + std::string(tok[1]) + "'");
          p.type = *t;
          p.name = std::string(tok[2]);
        } else {
          fail_line(line_, "malformed property line");
        }
        for (const auto& q : elements.back().props) {
          if (q.name == p.name) fail_line(line_, "duplicate property '" + p.name + "'");
        }
        elements.back().props.push_back(std::move(p));
      } else {
        fail_line(line_, "unknown header keyword '" + std::string(tok[0]) + "'");
      }
    }
    if (!have_format) fail_line(line_, "header lacks a format line");
    return elements;
  }

  static PlyElementData make_data(const PlyElement& el) {
    PlyElementData data;
    data.name = el.name;
    data.count = el.count;
    data.header_line = el.header_line;
    for (const auto& p : el.props) {
      data.order.push_back(p.name);
      PlyColumn col;
      col.type = p.type;
      col.is_list = p.is_list;
      data.columns.emplace(p.name, std::move(col));
    }
    return data;
  }

  template <typename T>
  T load(std::size_t at) const {
    T v;
    std::memcpy(&v, bytes_.data() + at, sizeof(T));
    return v;
  }

  double read_binary_value(PlyType t) {
    const std::size_t n = type_size(t);
    if (bytes_.size() - pos_ < n) fail_at(pos_, "unexpected end of binary data");
    double v = 0;
    switch (t) {
      case PlyType::kI8: v = load<std::int8_t>(pos_); break;
      case PlyType::kU8: v = load<std::uint8_t>(pos_); break;
      case PlyType::kI16: v = load<std::int16_t>(pos_); break;
      case PlyType::kU16: v = load<std::uint16_t>(pos_); break;
      case PlyType::kI32: v = load<std::int32_t>(pos_); break;
      case PlyType::kU32: v = load<std::uint32_t>(pos_); break;
      case PlyType::kF32: v = load<float>(pos_); break;
      case PlyType::kF64: v = load<double>(pos_); break;
    }
    pos_ += n;
    return v;
  }

  PlyElementData read_binary(const PlyElement& el) {
    PlyElementData data = make_data(el);
    if (el.props.empty() || el.count == 0) return data;
    std::size_t min_row = 0;
    for (const auto& p : el.props) min_row += p.is_list ? type_size(p.count_type) : type_size(p.type);
    const std::size_t remaining = bytes_.size() - pos_;
    if (el.count > remaining / min_row) {
      fail_at(pos_, "element '" + el.name + "' declares " + std::to_string(el.count) + " rows but only " +
                        std::to_string(remaining) + " bytes remain");
    }
    std::vector<PlyColumn*> cols;
    for (const auto& p : el.props) {
      auto* c = &data.columns.at(p.name);
      if (p.is_list) {
        c->offsets.reserve(el.count + 1);
        c->offsets.push_back(0);
      } else {
        c->values.reserve(el.count);
      }
      cols.push_back(c);
    }
    for (std::uint64_t row = 0; row < el.count; ++row) {
      for (std::size_t k = 0; k < el.props.size(); ++k) {
        const auto& p = el.props[k];
        if (!p.is_list) {
          cols[k]->values.push_back(read_binary_value(p.type));
          continue;
        }
        const std::size_t at = pos_;
        const double n = read_binary_value(p.count_type);
        if (n < 0) fail_at(at, "negative list length");
        const auto len = static_cast<std::uint64_t>(n);
        if (len > (bytes_.size() - pos_) / type_size(p.type)) fail_at(at, "list length exceeds remaining data");
        for (std::uint64_t i = 0; i < len; ++i) cols[k]->values.push_back(read_binary_value(p.type));
        cols[k]->offsets.push_back(cols[k]->values.size());
      }
    }
    return data;
  }

  // ASCII rows are whitespace-separated tokens; line numbers are tracked for errors.
  std::optional<std::string_view> next_token() {
    for (;;) {
      while (pos_ < bytes_.size() && (bytes_[pos_] == ' ' || bytes_[pos_] == '\t' || bytes_[pos_] == '\r' ||
                                      bytes_[pos_] == '\n')) {
        if (bytes_[pos_] == '\n') ++line_;
        ++pos_;
      }
      if (pos_ >= bytes_.size()) return std::nullopt;
      const std::size_t start = pos_;
      while (pos_ < bytes_.size() && bytes_[pos_] != ' ' && bytes_[pos_] != '\t' && bytes_[pos_] != '\r' &&
             bytes_[pos_] != '\n') {
        ++pos_;
      }
      return bytes_.substr(start, pos_ - start);
    }
  }

  double read_ascii_value(PlyType t) {
    const auto tok = next_token();
    if (!tok) fail_line(line_ + 1, "unexpected end of ASCII data");
    double v = 0;
    const char* first = tok->data();
    const char* last = first + tok->size();
    if (is_integral(t)) {
      long long iv = 0;
      const auto r = std::from_chars(first, last, iv);
      if (r.ec != std::errc{} || r.ptr != last) fail_line(line_ + 1, "expected an integer, got '" + std::string(*tok) + "'");
      v = static_cast<double>(iv);
    } else {
      const auto r = std::from_chars(first, last, v);
      if (r.ec != std::errc{} || r.ptr != last) fail_line(line_ + 1, "expected a number, got '" + std::string(*tok) + "'");
    }
    bool ok = true;
    v = scalar_limit_check(v, t, ok);
    if (!ok) fail_line(line_ + 1, "value '" + std::string(*tok) + "' out of range for its property type");
    return v;
  }

  PlyElementData read_ascii(const PlyElement& el) {
    PlyElementData data = make_data(el);
    if (el.props.empty() || el.count == 0) return data;
    const std::size_t remaining = bytes_.size() - pos_;
    // Every value needs at least one byte plus a separator.
    if (el.count > remaining / (2 * el.props.size()) + 1) {
      fail_line(el.header_line, "element '" + el.name + "' declares more rows than the data can hold");
    }
    std::vector<PlyColumn*> cols;
    for (const auto& p : el.props) {
      auto* c = &data.columns.at(p.name);
      if (p.is_list) c->offsets.push_back(0);
      cols.push_back(c);
    }
    for (std::uint64_t row = 0; row < el.count; ++row) {
      for (std::size_t k = 0; k < el.props.size(); ++k) {
        const auto& p = el.props[k];
        if (!p.is_list) {
          cols[k]->values.push_back(read_ascii_value(p.type));
          continue;
        }
        const double n = read_ascii_value(p.count_type);
        if (n < 0) fail_line(line_ + 1, "negative list length");
        const auto len = static_cast<std::uint64_t>(n);
        if (len > (bytes_.size() - pos_) / 2 + 1) fail_line(line_ + 1, "list length exceeds remaining data");
        for (std::uint64_t i = 0; i < len; ++i) cols[k]->values.push_back(read_ascii_value(p.type));
        cols[k]->offsets.push_back(cols[k]->values.size());
      }
    }
    return data;
  }

  std::string_view bytes_;
  std::string source_;
  std::size_t pos_ = 0;
  std::size_t line_ = 0;
  bool binary_ = false;
};

const PlyColumn* scalar(const PlyElementData& el, const std::string& name) {
  const auto* c = el.find(name);
  return (c && !c->is_list) ? c : nullptr;
}

std::uint8_t to_channel(double v, PlyType t) {
  if (!is_integral(t)) v = v * 255.0;
  if (!std::isfinite(v)) return 0;
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

template <typename Int>
std::optional<Int> exact_int(double v) {
  if (!std::isfinite(v) || v != std::floor(v)) return std::nullopt;
  if (v < static_cast<double>(std::numeric_limits<Int>::min()) || v > static_cast<double>(std::numeric_limits<Int>::max())) {
    return std::nullopt;
  }
  return static_cast<Int>(v);
}

// Vertices + optional colors from a PLY vertex element.
void read_vertices(const PlyElementData& v, const std::string& source, std::vector<Point3>& positions,
                   std::vector<Rgb>& colors) {
  const auto* x = scalar(v, "x");
  const auto* y = scalar(v, "y");
  const auto* z = scalar(v, "z");
  if (!x || !y || !z) throw ParseError(source, v.header_line, 0, "vertex element lacks scalar x, y, z properties");
  positions.resize(v.count);
  for (std::size_t i = 0; i < v.count; ++i) {
    positions[i] = Point3(x->values[i], y->values[i], z->values[i]);
    if (!positions[i].allFinite()) throw ParseError(source, 0, 0, "vertex " + std::to_string(i) + " is not finite");
  }
  const auto* r = scalar(v, "red");
  const auto* g = scalar(v, "green");
  const auto* b = scalar(v, "blue");
  if (r && g && b) {
    colors.resize(v.count);
    for (std::size_t i = 0; i < v.count; ++i) {
      colors[i] = Rgb{to_channel(r->values[i], r->type), to_channel(g->values[i], g->type), to_channel(b->values[i], b->type)};
    }
  }
}

void append_polygon(TriangleMesh& mesh, const std::vector<std::uint32_t>& poly, ClassId cls, InstanceId inst,
                    bool labeled) {
  for (std::size_t i = 1; i + 1 < poly.size(); ++i) {
    mesh.faces.push_back(Face{poly[0], poly[i], poly[i + 1]});
    if (labeled) {
      mesh.face_class.push_back(cls);
      mesh.face_instance.push_back(inst);
    }
  }
}

std::string ply_header_start(std::size_t vertex_count) {
  return "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(vertex_count) + "\n";
}

}  // namespace

TriangleMesh parse_ply_mesh(std::string_view bytes, const std::string& source) {
  const PlyFile file = PlyReader(bytes, source).read();
  const auto* v = file.find("vertex");
  if (!v) throw ParseError(source, 0, 0, "PLY has no vertex element");
  TriangleMesh mesh;
  read_vertices(*v, source, mesh.vertices, mesh.vertex_colors);

  const auto* f = file.find("face");
  if (!f) return mesh;
  const PlyColumn* idx = f->find("vertex_indices");
  if (!idx) idx = f->find("vertex_index");
  if (!idx || !idx->is_list) throw ParseError(source, f->header_line, 0, "face element lacks a vertex_indices list");
  const auto* cls = scalar(*f, "class_id");
  const auto* inst = scalar(*f, "instance_id");
  const bool labeled = cls && inst;
  std::vector<std::uint32_t> poly;
  for (std::size_t face = 0; face < f->count; ++face) {
    poly.clear();
    for (auto k = idx->offsets[face]; k < idx->offsets[face + 1]; ++k) {
      const auto vi = exact_int<std::uint32_t>(idx->values[k]);
      if (!vi || *vi >= mesh.vertices.size()) {
        throw ParseError(source, 0, 0,
                         "face " + std::to_string(face) + " has out-of-range vertex index " + std::to_string(idx->values[k]));
      }
      poly.push_back(*vi);
    }
    if (poly.size() < 3) throw ParseError(source, 0, 0, "face " + std::to_string(face) + " has fewer than 3 vertices");
    ClassId c = 0;
    InstanceId in = 0;
    if (labeled) {
      const auto cv = exact_int<ClassId>(cls->values[face]);
      const auto iv = exact_int<InstanceId>(inst->values[face]);
      if (!cv || !iv) throw ParseError(source, 0, 0, "face " + std::to_string(face) + " has an invalid class/instance id");
      c = *cv;
      in = *iv;
    }
    append_polygon(mesh, poly, c, in, labeled);
  }
  return mesh;
}

TriangleMesh parse_obj(std::string_view text, const std::string& source) {
  TriangleMesh mesh;
  struct PendingFace {
    std::vector<std::int64_t> refs;
    std::size_t line;
  };
  std::vector<PendingFace> faces;
  bool all_colored = true;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    const auto end = nl == std::string_view::npos ? text.size() : nl;
    const auto line = text.substr(pos, end - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    const auto tok = split_ws(line);
    if (tok.empty() || tok[0].front() == '#') continue;
    if (tok[0] == "v") {
      if (tok.size() < 4) throw ParseError(source, line_no, 0, "vertex record needs 3 coordinates");
      double vals[6] = {0, 0, 0, 0, 0, 0};
      const std::size_t n = std::min<std::size_t>(tok.size() - 1, 6);
      for (std::size_t i = 0; i < n; ++i) {
        const auto r = std::from_chars(tok[i + 1].data(), tok[i + 1].data() + tok[i + 1].size(), vals[i]);
        if (r.ec != std::errc{} || r.ptr != tok[i + 1].data() + tok[i + 1].size() || !std::isfinite(vals[i])) {
          throw ParseError(source, line_no, 0, "malformed vertex value '" + std::string(tok[i + 1]) + "'");
        }
      }
      mesh.vertices.emplace_back(vals[0], vals[1], vals[2]);
      if (n >= 6) {
        mesh.vertex_colors.push_back(Rgb{to_channel(vals[3], PlyType::kF32), to_channel(vals[4], PlyType::kF32),
                                         to_channel(vals[5], PlyType::kF32)});
      } else {
        all_colored = false;
      }
    } else if (tok[0] == "f") {
      if (tok.size() < 4) throw ParseError(source, line_no, 0, "face record needs at least 3 vertices");
      PendingFace face{{}, line_no};
      for (std::size_t i = 1; i < tok.size(); ++i) {
        const auto ref = tok[i].substr(0, tok[i].find('/'));
        std::int64_t idx = 0;
        const auto r = std::from_chars(ref.data(), ref.data() + ref.size(), idx);
        if (ref.empty() || r.ec != std::errc{} || r.ptr != ref.data() + ref.size()) {
          throw ParseError(source, line_no, 0, "malformed face index '" + std::string(tok[i]) + "'");
        }
        if (idx == 0) throw ParseError(source, line_no, 0, "face index 0 is invalid (OBJ indices are 1-based)");
        if (idx < 0) {
          idx += static_cast<std::int64_t>(mesh.vertices.size());
          if (idx < 0) throw ParseError(source, line_no, 0, "relative face index reaches before the first vertex");
        } else {
          idx -= 1;
        }
        face.refs.push_back(idx);
      }
      faces.push_back(std::move(face));
    }
    // vt, vn, g, o, s, usemtl, mtllib and other records carry nothing we use.
  }
  if (!all_colored) mesh.vertex_colors.clear();
  std::vector<std::uint32_t> poly;
  for (const auto& f : faces) {
    poly.clear();
    for (auto idx : f.refs) {
      if (idx >= static_cast<std::int64_t>(mesh.vertices.size())) {
        throw ParseError(source, f.line, 0,
                         "face index " + std::to_string(idx + 1) + " exceeds vertex count " +
                             std::to_string(mesh.vertices.size()));
      }
      poly.push_back(static_cast<std::uint32_t>(idx));
    }
    append_polygon(mesh, poly, 0, 0, false);
  }
  return mesh;
}

TriangleMesh parse_mesh(std::string_view bytes, const std::string& source) {
  if (bytes.substr(0, 3) == "ply") return parse_ply_mesh(bytes, source);
  return parse_obj(bytes, source);
}

TriangleMesh load_mesh(const std::filesystem::path& path) { return parse_mesh(read_file(path), path.string()); }

std::string serialize_mesh_ply(const TriangleMesh& mesh) {
  mesh.validate();
  std::string out = ply_header_start(mesh.vertices.size());
  out += "property double x\nproperty double y\nproperty double z\n";
  if (mesh.has_colors()) out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out += "element face " + std::to_string(mesh.faces.size()) + "\nproperty list uchar uint vertex_indices\n";
  const bool labeled = mesh.has_labels();
  if (labeled) out += "property ushort class_id\nproperty uint instance_id\n";
  out += "end_header\n";
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    put(out, mesh.vertices[i].x());
    put(out, mesh.vertices[i].y());
    put(out, mesh.vertices[i].z());
    if (mesh.has_colors()) {
      put(out, mesh.vertex_colors[i].r);
      put(out, mesh.vertex_colors[i].g);
      put(out, mesh.vertex_colors[i].b);
    }
  }
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    put(out, std::uint8_t{3});
    for (auto v : mesh.faces[f]) put(out, v);
    if (labeled) {
      put(out, mesh.face_class[f]);
      put(out, mesh.face_instance[f]);
    }
  }
  return out;
}

void save_mesh_ply(const TriangleMesh& mesh, const std::filesystem::path& path) {
  write_file(path, serialize_mesh_ply(mesh));
}

// ---------------------------------------------------------------------------
// Labeled clouds

std::string serialize_labeled_cloud(const LabeledPointCloud& cloud) {
  cloud.validate();
  const auto& pc = cloud.cloud;
  const bool colors = pc.has_colors();
  const bool gt = pc.has_ground_truth() && pc.gt_instance.size() == pc.size();
  std::string out = ply_header_start(pc.size());
  out += "property float x\nproperty float y\nproperty float z\n";
  if (colors) out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out += "property ushort class_id\nproperty uint instance_id\nproperty float confidence\n";
  if (gt) out += "property ushort gt_class\nproperty uint gt_instance\n";
  out += "end_header\n";
  out.reserve(out.size() + pc.size() * 32);
  for (std::size_t i = 0; i < pc.size(); ++i) {
    put(out, static_cast<float>(pc.positions[i].x()));
    put(out, static_cast<float>(pc.positions[i].y()));
    put(out, static_cast<float>(pc.positions[i].z()));
    if (colors) {
      put(out, pc.colors[i].r);
      put(out, pc.colors[i].g);
      put(out, pc.colors[i].b);
    }
    put(out, cloud.class_id[i]);
    put(out, cloud.instance_id[i]);
    put(out, cloud.confidence[i]);
    if (gt) {
      put(out, pc.gt_class[i]);
      put(out, pc.gt_instance[i]);
    }
  }
  return out;
}

namespace {

template <typename Int>
std::vector<Int> int_column(const PlyElementData& v, const std::string& name, const std::string& source) {
  const auto* c = scalar(v, name);
  std::vector<Int> out;
  out.reserve(v.count);
  for (std::size_t i = 0; i < v.count; ++i) {
    const auto val = exact_int<Int>(c->values[i]);
    if (!val) throw SchemaError(source + ": property '" + name + "' holds an out-of-range value at vertex " + std::to_string(i));
    out.push_back(*val);
  }
  return out;
}

}  // namespace

LabeledPointCloud parse_labeled_cloud(std::string_view bytes, const std::string& source) {
  const PlyFile file = PlyReader(bytes, source).read();
  const auto* v = file.find("vertex");
  if (!v) throw SchemaError(source + ": missing vertex element");
  for (const char* name : {"x", "y", "z", "class_id", "instance_id", "confidence"}) {
    if (!scalar(*v, name)) throw SchemaError(source + ": missing vertex property '" + std::string(name) + "'");
  }
  LabeledPointCloud out;
  read_vertices(*v, source, out.cloud.positions, out.cloud.colors);
  out.class_id = int_column<ClassId>(*v, "class_id", source);
  out.instance_id = int_column<InstanceId>(*v, "instance_id", source);
  const auto* conf = scalar(*v, "confidence");
  out.confidence.reserve(v->count);
  for (std::size_t i = 0; i < v->count; ++i) {
    const auto c = static_cast<float>(conf->values[i]);
    if (!(c >= 0.0f && c <= 1.0f)) throw SchemaError(source + ": confidence outside [0,1] at vertex " + std::to_string(i));
    out.confidence.push_back(c);
  }
  if (scalar(*v, "gt_class") && scalar(*v, "gt_instance")) {
    out.cloud.gt_class = int_column<ClassId>(*v, "gt_class", source);
    out.cloud.gt_instance = int_column<InstanceId>(*v, "gt_instance", source);
  }
  return out;
}

void save_labeled_cloud(const LabeledPointCloud& cloud, const std::filesystem::path& path) {
  write_file(path, serialize_labeled_cloud(cloud));
}

LabeledPointCloud load_labeled_cloud(const std::filesystem::path& path) {
  return parse_labeled_cloud(read_file(path), path.string());
}

PointCloud parse_point_cloud(std::string_view bytes, const std::string& source) {
  const PlyFile file = PlyReader(bytes, source).read();
  const auto* v = file.find("vertex");
  if (!v) throw SchemaError(source + ": missing vertex element");
  PointCloud out;
  read_vertices(*v, source, out.positions, out.colors);
  const char* cls = scalar(*v, "gt_class") ? "gt_class" : (scalar(*v, "class_id") ? "class_id" : nullptr);
  const char* inst = scalar(*v, "gt_instance") ? "gt_instance" : (scalar(*v, "instance_id") ? "instance_id" : nullptr);
  if (cls) out.gt_class = int_column<ClassId>(*v, cls, source);
  if (cls && inst) out.gt_instance = int_column<InstanceId>(*v, inst, source);
  if (cls && !inst) out.gt_instance.assign(out.size(), 0);
  return out;
}

PointCloud load_point_cloud(const std::filesystem::path& path) { return parse_point_cloud(read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// Rasters

namespace {

template <typename T>
std::string encode_raster(const char* magic, const Raster<T>& r) {
  std::string out(magic, 4);
  put(out, static_cast<std::uint32_t>(r.width));
  put(out, static_cast<std::uint32_t>(r.height));
  out.reserve(out.size() + r.size() * sizeof(T));
  for (const T& v : r.data) put(out, v);
  return out;
}

template <typename T>
Raster<T> decode_raster(const char* magic, std::string_view bytes, const std::string& source) {
  if (bytes.size() < 12) throw ParseError(source, 0, bytes.size(), "raster shorter than its 12-byte header");
  if (bytes.substr(0, 4) != std::string_view(magic, 4)) {
    throw ParseError(source, 0, 0, std::string("bad raster magic, expected ") + magic);
  }
  std::uint32_t w = 0;
  std::uint32_t h = 0;
  std::memcpy(&w, bytes.data() + 4, 4);
  std::memcpy(&h, bytes.data() + 8, 4);
  const std::uint64_t expected = 12 + static_cast<std::uint64_t>(w) * h * sizeof(T);
  if (w == 0 || h == 0 || w > (1u << 16) || h > (1u << 16) || expected != bytes.size()) {
    throw ParseError(source, 0, 4,
                     "header " + std::to_string(w) + "x" + std::to_string(h) + " does not match payload of " +
                         std::to_string(bytes.size() - 12) + " bytes");
  }
  Raster<T> r(static_cast<int>(w), static_cast<int>(h));
  std::memcpy(r.data.data(), bytes.data() + 12, r.size() * sizeof(T));
  return r;
}

std::string view_stem(int view_id) {
  std::ostringstream s;
  s << "view_" << std::setw(4) << std::setfill('0') << view_id;
  return s.str();
}

}  // namespace

std::string encode_depth(const Raster<float>& depth) { return encode_raster("OVDP", depth); }
Raster<float> decode_depth(std::string_view bytes, const std::string& source) {
  return decode_raster<float>("OVDP", bytes, source);
}
std::string encode_face_ids(const Raster<std::uint32_t>& ids) { return encode_raster("OVID", ids); }
Raster<std::uint32_t> decode_face_ids(std::string_view bytes, const std::string& source) {
  return decode_raster<std::uint32_t>("OVID", bytes, source);
}

std::string camera_sidecar(const RenderedView& view) {
  const auto& k = view.intrinsics;
  nlohmann::json rot = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) rot.push_back(view.pose.rotation(r, c));
  }
  nlohmann::json j{{"view_id", view.view_id},
                   {"fx", k.fx},
                   {"fy", k.fy},
                   {"cx", k.cx},
                   {"cy", k.cy},
                   {"width", k.width},
                   {"height", k.height},
                   {"rotation", rot},
                   {"translation", {view.pose.translation.x(), view.pose.translation.y(), view.pose.translation.z()}}};
  return j.dump(2) + "\n";
}

void save_view(const RenderedView& view, const std::filesystem::path& dir) {
  const auto stem = view_stem(view.view_id);
  write_file(dir / (stem + ".png"), encode_png(view.rgb));
  write_file(dir / (stem + ".depth"), encode_depth(view.depth));
  if (view.has_face_ids()) write_file(dir / (stem + ".faceid"), encode_face_ids(view.face_id));
  write_file(dir / (stem + ".json"), camera_sidecar(view));
}

RenderedView load_view(const std::filesystem::path& dir, int view_id) {
  const auto stem = view_stem(view_id);
  const auto cam_path = dir / (stem + ".json");
  const auto j = nlohmann::json::parse(read_file(cam_path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ParseError(cam_path.string(), 0, 0, "camera sidecar is not a JSON object");
  RenderedView view;
  try {
    view.view_id = j.at("view_id").get<int>();
    view.intrinsics.fx = j.at("fx").get<double>();
    view.intrinsics.fy = j.at("fy").get<double>();
    view.intrinsics.cx = j.at("cx").get<double>();
    view.intrinsics.cy = j.at("cy").get<double>();
    view.intrinsics.width = j.at("width").get<int>();
    view.intrinsics.height = j.at("height").get<int>();
    const auto& rot = j.at("rotation");
    const auto& t = j.at("translation");
    if (rot.size() != 9 || t.size() != 3) throw ParseError(cam_path.string(), 0, 0, "rotation/translation shape");
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) view.pose.rotation(r, c) = rot.at(r * 3 + c).get<double>();
    }
    view.pose.translation = Eigen::Vector3d(t[0].get<double>(), t[1].get<double>(), t[2].get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(cam_path.string(), 0, 0, std::string("camera sidecar: ") + e.what());
  }
  view.rgb = decode_png(read_file(dir / (stem + ".png")));
  view.depth = decode_depth(read_file(dir / (stem + ".depth")), (dir / (stem + ".depth")).string());
  const auto ids = dir / (stem + ".faceid");
  if (std::filesystem::exists(ids)) view.face_id = decode_face_ids(read_file(ids), ids.string());
  const int w = view.intrinsics.width;
  const int h = view.intrinsics.height;
  if (view.rgb.width != w || view.rgb.height != h || view.depth.width != w || view.depth.height != h ||
      (view.has_face_ids() && (view.face_id.width != w || view.face_id.height != h))) {
    throw ParseError(dir.string(), 0, 0, "view " + std::to_string(view_id) + " rasters disagree with the camera size");
  }
  return view;
}

}  // namespace ovhr3d
