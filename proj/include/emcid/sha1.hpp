#pragma once

#include <cstdint>
#include <string>

namespace emcid {

// SHA-1 over raw bytes, hex-encoded.
std::string sha1_hex(const void* data, size_t len);
std::string sha1_hex(const std::string& data);

// git blob hash: sha1("blob <len>\0" + content).
std::string git_blob_hash(const std::string& content);
std::string git_blob_hash_file(const std::string& path);

}  // namespace emcid
