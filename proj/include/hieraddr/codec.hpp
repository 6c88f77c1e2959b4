#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "hieraddr/core.hpp"

namespace hieraddr {

// Artifact plumbing: base64 parameter blobs, content hashes, file helpers.

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);  // throws FormatError

/// Little-endian IEEE-754 doubles, base64 encoded.
std::string encode_doubles(std::span<const double> values);
std::vector<double> decode_doubles(std::string_view text);

json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const json& j);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);  // throws FormatError naming the path
void write_file(const std::filesystem::path& path, std::string_view contents);

/// Loads a JSON artifact and checks its `format` and `version` fields.
json load_artifact(const std::filesystem::path& path, std::string_view format, int version);

}  // namespace hieraddr
