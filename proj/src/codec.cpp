#include "hieraddr/codec.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>
#include <openssl/sha.h>

namespace hieraddr {

static_assert(std::endian::native == std::endian::little, "blob encoding assumes a little-endian host");

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw FormatError("base64 length not a multiple of 4");
  std::string out(3 * text.size() / 4, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw FormatError("invalid base64");
  std::size_t len = static_cast<std::size_t>(n);
  // EVP_DecodeBlock keeps the bytes produced by '=' padding.
  if (!text.empty() && text.back() == '=') --len;
  if (text.size() > 1 && text[text.size() - 2] == '=') --len;
  out.resize(len);
  return out;
}

std::string encode_doubles(std::span<const double> values) {
  std::string bytes(values.size() * sizeof(double), '\0');
  if (!values.empty()) std::memcpy(bytes.data(), values.data(), bytes.size());
  return base64_encode(bytes);
}

std::vector<double> decode_doubles(std::string_view text) {
  const std::string bytes = base64_decode(text);
  if (bytes.size() % sizeof(double) != 0) throw FormatError("double blob has a partial value");
  std::vector<double> out(bytes.size() / sizeof(double));
  if (!out.empty()) std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  // Column-major, matching Eigen's storage.
  return {{"rows", m.rows()}, {"cols", m.cols()},
          {"data", encode_doubles(std::span<const double>(m.data(), static_cast<std::size_t>(m.size())))}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = decode_doubles(j.at("data").get<std::string>());
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw FormatError("matrix blob size mismatch");
  Eigen::MatrixXd m(rows, cols);
  if (!data.empty()) std::memcpy(m.data(), data.data(), data.size() * sizeof(double));
  if (!m.allFinite()) throw FormatError("matrix blob contains non-finite values");
  return m;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned char c : digest) {
    out += kHex[c >> 4];
    out += kHex[c & 15];
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

json load_artifact(const std::filesystem::path& path, std::string_view format, int version) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (!j.is_object() || j.value("format", "") != format)
    throw FormatError(path.string() + ": not a " + std::string(format) + " artifact");
  const int found = j.value("version", -1);
  if (found != version)
    throw FormatError(path.string() + ": " + std::string(format) + " version " + std::to_string(found) +
                      " is not supported (expected " + std::to_string(version) + ")");
  return j;
}

}  // namespace hieraddr
