#include "rsn/hashing.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>
#include <vector>

#include "rsn/error.hpp"

namespace rsn {

namespace {

using CtxPtr = std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)>;

std::string hex_digest(const unsigned char* digest, unsigned len) {
  static const char* kHex = "0123456789abcdef";
  std::string out(2 * len, '0');
  for (unsigned i = 0; i < len; ++i) {
    out[2 * i] = kHex[digest[i] >> 4];
    out[2 * i + 1] = kHex[digest[i] & 0xf];
  }
  return out;
}

} // namespace

std::string sha256_bytes(const void* data, std::size_t len) {
  CtxPtr ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned dlen = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data, len) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &dlen) != 1)
    fail("HashFailure", "SHA-256 computation failed");
  return hex_digest(digest, dlen);
}

std::string sha256_string(const std::string& s) {
  return sha256_bytes(s.data(), s.size());
}

std::string sha256_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail("IoError", "cannot open for hashing: " + path);
  CtxPtr ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
    fail("HashFailure", "SHA-256 init failed");
  std::vector<char> buf(1 << 16);
  while (f) {
    f.read(buf.data(), std::streamsize(buf.size()));
    const std::streamsize got = f.gcount();
    if (got > 0 && EVP_DigestUpdate(ctx.get(), buf.data(), std::size_t(got)) != 1)
      fail("HashFailure", "SHA-256 update failed");
  }
  if (!f.eof()) fail("IoError", "read error while hashing: " + path);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned dlen = 0;
  if (EVP_DigestFinal_ex(ctx.get(), digest, &dlen) != 1)
    fail("HashFailure", "SHA-256 final failed");
  return hex_digest(digest, dlen);
}

} // namespace rsn
