#include <bit>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "eivoplab/io.hpp"
#include "eivoplab/rng.hpp"
#include "eivoplab/spectral.hpp"

namespace io = eivoplab::io;
namespace sp = eivoplab::spectral;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "eivoplab-io-tests";
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

}  // namespace

TEST_CASE("fnv1a matches the published test vectors", "[io]") {
  CHECK(io::fnv1a(std::string{}) == 0xcbf29ce484222325ull);
  CHECK(io::fnv1a(std::string{"a"}) == 0xaf63dc4c8601ec8cull);
  CHECK(io::fnv1a(std::string{"foobar"}) == 0x85944171f73967e8ull);
  CHECK(io::fnv1a_hex(0xcbf29ce484222325ull) == "cbf29ce484222325");
  CHECK(io::fnv1a_hex(0x1ull) == "0000000000000001");

  const fs::path p = temp_dir() / "hashme.bin";
  io::write_bytes(p, "foobar");
  CHECK(io::hash_file(p) == "fnv1a:85944171f73967e8");
}

TEST_CASE("array files round-trip bit-exactly", "[io]") {
  io::ArrayFile a;
  a.name = "u_noisy";
  a.shape = {3, 5};
  eivoplab::rng::Rng r(42);
  for (int i = 0; i < 15; ++i) a.data.push_back(r.normal());
  // Values %.17g would mangle but raw bits must not.
  a.data[0] = -0.0;
  a.data[1] = 5e-324;          // smallest denormal
  a.data[2] = 1.7976931348623157e308;
  a.data[3] = -1.0 / 3.0;

  const fs::path p = temp_dir() / "roundtrip.arr";
  io::write_array(p, a);
  const io::ArrayFile b = io::read_array(p);
  CHECK(b.name == a.name);
  CHECK(b.shape == a.shape);
  CHECK(same_bits(b.data, a.data));

  // Same content encodes to identical bytes: hashable, diff-able artifacts.
  CHECK(io::encode_array(a) == io::encode_array(b));
}

TEST_CASE("array file layout is a JSON line plus raw payload", "[io]") {
  io::ArrayFile a;
  a.name = "v";
  a.shape = {2, 3, 4};
  a.data.assign(24, 1.5);
  const std::string bytes = io::encode_array(a);

  const std::size_t nl = bytes.find('\n');
  REQUIRE(nl != std::string::npos);
  const auto header = nlohmann::json::parse(bytes.substr(0, nl));
  CHECK(header.at("dtype") == "f64");
  CHECK(header.at("byte_order") == "little");
  CHECK(header.at("layout") == "row-major");
  CHECK(header.at("name") == "v");
  CHECK(header.at("shape") == std::vector<std::int64_t>{2, 3, 4});
  CHECK(bytes.size() - nl - 1 == 8u * 24u);

  // 1.5 in little-endian IEEE-754: 00 00 00 00 00 00 f8 3f.
  const unsigned char* payload = reinterpret_cast<const unsigned char*>(bytes.data() + nl + 1);
  CHECK(payload[6] == 0xf8);
  CHECK(payload[7] == 0x3f);
  for (int b = 0; b < 6; ++b) CHECK(payload[b] == 0);
}

TEST_CASE("array decoding rejects malformed inputs", "[io]") {
  io::ArrayFile a;
  a.name = "x";
  a.shape = {4};
  a.data = {1, 2, 3, 4};
  std::string bytes = io::encode_array(a);

  SECTION("truncated payload") {
    bytes.pop_back();
    CHECK_THROWS_AS(io::decode_array(bytes), std::runtime_error);
  }
  SECTION("trailing garbage") {
    bytes.push_back('\0');
    CHECK_THROWS_AS(io::decode_array(bytes), std::runtime_error);
  }
  SECTION("missing header line") {
    CHECK_THROWS_AS(io::decode_array(std::string(16, '\0')), std::runtime_error);
  }
  SECTION("wrong dtype") {
    const std::size_t nl = bytes.find('\n');
    auto header = nlohmann::json::parse(bytes.substr(0, nl));
    header["dtype"] = "f32";
    CHECK_THROWS_AS(io::decode_array(header.dump() + "\n" + bytes.substr(nl + 1)),
                    std::runtime_error);
  }
  SECTION("bad shapes") {
    CHECK_THROWS_AS(io::element_count({}), std::invalid_argument);
    CHECK_THROWS_AS(io::element_count({3, 0}), std::invalid_argument);
    CHECK_THROWS_AS(io::element_count({1 << 20, 1 << 20, 1 << 20}), std::invalid_argument);
    io::ArrayFile bad;
    bad.name = "x";
    bad.shape = {5};
    bad.data = {1, 2};
    CHECK_THROWS_AS(io::encode_array(bad), std::invalid_argument);
  }
}

TEST_CASE("field stacks pack and unpack through arrays", "[io]") {
  auto g = sp::make_grid(2, 4, 1.0);
  std::vector<sp::Field> fields;
  for (int s = 0; s < 3; ++s) {
    sp::Field f(g);
    for (int i = 0; i < g->total(); ++i) f.values[i] = 100.0 * s + i;
    fields.push_back(std::move(f));
  }

  const io::ArrayFile a = io::pack_fields("stack", fields);
  CHECK(a.shape == std::vector<std::int64_t>{3, 4, 4});
  CHECK(a.data[0] == 0.0);
  CHECK(a.data[16] == 100.0);    // second sample starts one grid after the first
  CHECK(a.data[16 + 5] == 105.0);

  const auto back = io::unpack_fields(a, g);
  REQUIRE(back.size() == 3);
  for (int s = 0; s < 3; ++s) CHECK(same_bits(back[s].values, fields[s].values));

  auto g1 = sp::make_grid(1, 16, 1.0);
  CHECK_THROWS_AS(io::unpack_fields(a, g1), std::invalid_argument);  // rank mismatch

  io::ArrayFile wide = a;
  wide.shape = {3, 4, 8};
  wide.data.resize(96);
  CHECK_THROWS_AS(io::unpack_fields(wide, g), std::invalid_argument);  // extent mismatch

  CHECK_THROWS_AS(io::pack_fields("e", std::vector<sp::Field>{}), std::invalid_argument);

  auto g2 = sp::make_grid(2, 6, 1.0);
  std::vector<sp::Field> mixed;
  mixed.push_back(fields[0]);
  mixed.push_back(sp::Field(g2));
  CHECK_THROWS_AS(io::pack_fields("m", mixed), std::invalid_argument);
}

TEST_CASE("csv tables render and parse with exact numerics", "[io]") {
  const double pi = 3.14159265358979323846;
  const std::string text = io::csv_table(
      {"model", "count", "value"},
      {{std::string("ols"), std::int64_t{64}, pi}, {std::string("eiv"), std::int64_t{7}, 1e-300}});

  const io::Csv csv = io::parse_csv(text);
  REQUIRE(csv.columns == std::vector<std::string>{"model", "count", "value"});
  REQUIRE(csv.rows.size() == 2);
  CHECK(csv.rows[0][0] == "ols");
  CHECK(csv.number(0, "count") == 64.0);

  // %.17g is enough digits that strtod returns the identical double.
  CHECK(std::strtod(csv.rows[0][2].c_str(), nullptr) == pi);
  CHECK(std::strtod(csv.rows[1][2].c_str(), nullptr) == 1e-300);

  CHECK_THROWS_AS(io::csv_table({"a"}, {{std::string("x,y")}}), std::invalid_argument);
  CHECK_THROWS_AS(io::csv_table({"a", "b"}, {{1.0}}), std::invalid_argument);
  CHECK_THROWS_AS(io::parse_csv(""), std::runtime_error);
  CHECK_THROWS_AS(csv.number(0, "absent"), std::invalid_argument);

  const fs::path p = temp_dir() / "table.csv";
  io::write_bytes(p, text);
  const io::Csv again = io::read_csv(p);
  CHECK(again.columns == csv.columns);
  CHECK(again.rows == csv.rows);
}
