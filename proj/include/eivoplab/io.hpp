#pragma once
// Flat-file persistence for experiment artifacts:
//   - ArrayFile: one-line JSON descriptor + raw little-endian f64 payload
//   - FNV-1a 64-bit content hashes for run manifests
//   - CSV tables with %.17g numeric cells (bit-exact double round-trip)

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "eivoplab/spectral.hpp"
#include "json.hpp"

namespace eivoplab::io {

// ---------------------------------------------------------------------------
// Hashing

inline std::uint64_t fnv1a(const void* data, std::size_t len,
                           std::uint64_t h = 14695981039346656037ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

inline std::string fnv1a_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Whole-file helpers (binary mode so bytes survive untouched)

inline void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write: " + path.string());
}

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

inline std::string hash_file(const std::filesystem::path& path) {
  return "fnv1a:" + fnv1a_hex(fnv1a(read_bytes(path)));
}

// ---------------------------------------------------------------------------
// ArrayFile

struct ArrayFile {
  std::string name;                 // semantic label, e.g. "u_noisy"
  std::vector<std::int64_t> shape;  // row-major extents, all >= 1
  std::vector<double> data;         // shape-product doubles
};

inline std::int64_t element_count(const std::vector<std::int64_t>& shape) {
  if (shape.empty()) throw std::invalid_argument("array shape must not be empty");
  std::int64_t count = 1;
  for (std::int64_t d : shape) {
    if (d < 1) throw std::invalid_argument("array dimensions must be >= 1");
    if (count > (std::int64_t{1} << 40) / d)
      throw std::invalid_argument("array shape overflows sane storage");
    count *= d;
  }
  return count;
}

inline std::string encode_array(const ArrayFile& a) {
  const std::int64_t count = element_count(a.shape);
  if (static_cast<std::int64_t>(a.data.size()) != count)
    throw std::invalid_argument("array data size does not match its shape");
  nlohmann::json header{{"byte_order", "little"},
                        {"dtype", "f64"},
                        {"layout", "row-major"},
                        {"name", a.name},
                        {"shape", a.shape}};
  std::string out = header.dump();
  out.push_back('\n');
  out.reserve(out.size() + 8 * a.data.size());
  for (double v : a.data) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
  }
  return out;
}

inline ArrayFile decode_array(const std::string& bytes, const std::string& origin = "<memory>") {
  const std::size_t nl = bytes.find('\n');
  if (nl == std::string::npos)
    throw std::runtime_error("array file has no header line: " + origin);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("bad array header in " + origin + ": " + e.what());
  }
  const auto need = [&](const char* key) -> const nlohmann::json& {
    if (!header.contains(key))
      throw std::runtime_error("array header missing '" + std::string(key) + "': " + origin);
    return header.at(key);
  };
  if (need("dtype") != "f64")
    throw std::runtime_error("unsupported dtype (want f64): " + origin);
  if (need("byte_order") != "little")
    throw std::runtime_error("unsupported byte order (want little): " + origin);
  if (need("layout") != "row-major")
    throw std::runtime_error("unsupported layout (want row-major): " + origin);
  ArrayFile a;
  a.name = header.value("name", std::string{});
  a.shape = need("shape").get<std::vector<std::int64_t>>();
  const std::int64_t count = element_count(a.shape);
  const std::size_t payload = bytes.size() - nl - 1;
  if (payload != static_cast<std::size_t>(8 * count))
    throw std::runtime_error("array payload of " + std::to_string(payload) + " bytes, header owes " +
                             std::to_string(8 * count) + ": " + origin);
  a.data.resize(static_cast<std::size_t>(count));
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + nl + 1);
  for (std::int64_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{p[8 * i + b]} << (8 * b);
    a.data[static_cast<std::size_t>(i)] = std::bit_cast<double>(bits);
  }
  return a;
}

inline void write_array(const std::filesystem::path& path, const ArrayFile& a) {
  write_bytes(path, encode_array(a));
}

inline ArrayFile read_array(const std::filesystem::path& path) {
  return decode_array(read_bytes(path), path.string());
}

// ---------------------------------------------------------------------------
// Field stacks: leading axis = sample index, trailing axes = grid extents.

inline ArrayFile pack_fields(const std::string& name,
                             const std::vector<spectral::Field>& fields) {
  if (fields.empty()) throw std::invalid_argument("cannot pack an empty field stack");
  const auto& g = *fields.front().grid;
  ArrayFile a;
  a.name = name;
  a.shape.push_back(static_cast<std::int64_t>(fields.size()));
  for (int d = 0; d < g.dim; ++d) a.shape.push_back(g.n[d]);
  a.data.reserve(fields.size() * static_cast<std::size_t>(g.total()));
  for (const auto& f : fields) {
    if (f.grid->dim != g.dim || f.grid->n != g.n)
      throw std::invalid_argument("field stack mixes grid sizes");
    a.data.insert(a.data.end(), f.values.begin(), f.values.end());
  }
  return a;
}

inline std::vector<spectral::Field> unpack_fields(const ArrayFile& a,
                                                  const spectral::GridPtr& grid) {
  if (static_cast<int>(a.shape.size()) != grid->dim + 1)
    throw std::invalid_argument("array rank does not match grid for '" + a.name + "'");
  for (int d = 0; d < grid->dim; ++d)
    if (a.shape[static_cast<std::size_t>(d) + 1] != grid->n[d])
      throw std::invalid_argument("array extents do not match grid for '" + a.name + "'");
  const std::size_t n = static_cast<std::size_t>(grid->total());
  std::vector<spectral::Field> fields;
  fields.reserve(static_cast<std::size_t>(a.shape[0]));
  for (std::int64_t i = 0; i < a.shape[0]; ++i) {
    spectral::Field f(grid);
    std::copy_n(a.data.begin() + static_cast<std::ptrdiff_t>(n * static_cast<std::size_t>(i)), n,
                f.values.begin());
    fields.push_back(std::move(f));
  }
  return fields;
}

// ---------------------------------------------------------------------------
// CSV

using CsvCell = std::variant<double, std::int64_t, std::string>;

inline std::string format_g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_table(const std::vector<std::string>& columns,
                             const std::vector<std::vector<CsvCell>>& rows) {
  const auto safe = [](const std::string& s) -> const std::string& {
    if (s.find_first_of(",\n\r\"") != std::string::npos)
      throw std::invalid_argument("csv cell needs quoting, which this format forbids: " + s);
    return s;
  };
  std::string out;
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (c) out.push_back(',');
    out += safe(columns[c]);
  }
  out.push_back('\n');
  for (const auto& row : rows) {
    if (row.size() != columns.size())
      throw std::invalid_argument("csv row width does not match header");
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out.push_back(',');
      if (const auto* d = std::get_if<double>(&row[c]))
        out += format_g17(*d);
      else if (const auto* i = std::get_if<std::int64_t>(&row[c]))
        out += std::to_string(*i);
      else
        out += safe(std::get<std::string>(row[c]));
    }
    out.push_back('\n');
  }
  return out;
}

struct Csv {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t c = 0; c < columns.size(); ++c)
      if (columns[c] == name) return static_cast<int>(c);
    throw std::invalid_argument("csv has no column '" + name + "'");
  }
  double number(std::size_t row, const std::string& name) const {
    return std::stod(rows.at(row).at(static_cast<std::size_t>(column(name))));
  }
};

inline Csv parse_csv(const std::string& text) {
  Csv csv;
  std::size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::vector<std::string> cells;
    std::size_t start = pos;
    for (std::size_t i = pos; i <= nl; ++i) {
      if (i == nl || text[i] == ',') {
        cells.emplace_back(text, start, i - start);
        start = i + 1;
      }
    }
    if (first) {
      csv.columns = std::move(cells);
      first = false;
    } else if (!(cells.size() == 1 && cells[0].empty())) {
      if (cells.size() != csv.columns.size())
        throw std::runtime_error("csv row width does not match header");
      csv.rows.push_back(std::move(cells));
    }
    pos = nl + 1;
  }
  if (first) throw std::runtime_error("csv text is empty");
  return csv;
}

inline Csv read_csv(const std::filesystem::path& path) { return parse_csv(read_bytes(path)); }

}  // namespace eivoplab::io
