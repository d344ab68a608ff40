#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

namespace pmag {

/// Incremental SHA-256 (OpenSSL EVP).
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t size);
  void update(std::string_view s) { update(s.data(), s.size()); }
  /// Lower-case hex digest; the object cannot be updated afterwards.
  std::string hex();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

/// Reads a whole file as bytes.
std::string read_file(const std::filesystem::path& path);
/// Writes bytes via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// Quotes one argument for /bin/sh.
std::string shell_quote(std::string_view arg);

/// Prints "warning: <msg>" to stderr unless warnings are silenced.
void warn(std::string_view msg);
void set_warnings_enabled(bool enabled);

}  // namespace pmag
