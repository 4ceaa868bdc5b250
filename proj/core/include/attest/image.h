#ifndef ATTEST_IMAGE_H_
#define ATTEST_IMAGE_H_

// Verification-function memory image and its `.vfbin` container.
//
// File layout (little endian):
//   0   "VF01"
//   4   code word count
//   8   entry offset (code word index)
//   12  buffer size in bytes
//   16  buffer bytes: code words (16 bytes each) followed by fill

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "attest/isa.h"

namespace attest::isa {

inline constexpr size_t kWordBytes = 16;
inline constexpr size_t kImageHeaderBytes = 16;

struct Image {
  uint32_t entry = 0;
  uint32_t code_words = 0;
  std::vector<uint8_t> buffer;

  size_t buffer_bytes() const { return buffer.size(); }
  Word128 word(size_t index) const;
  void set_word(size_t index, const Word128& w);

  bool operator==(const Image&) const = default;
};

Word128 LoadWord(std::span<const uint8_t> bytes, size_t index);
void StoreWord(std::span<uint8_t> bytes, size_t index, const Word128& w);

// Lays out `code` at word 0 of a zero-filled buffer of `buffer_bytes`.
Image MakeImage(std::span<const Instruction> code, size_t buffer_bytes,
                uint32_t entry = 0);
// Same, from assembly lines.
Image AssembleImage(std::span<const std::string> lines, size_t buffer_bytes,
                    uint32_t entry = 0);

std::vector<uint8_t> SerializeImage(const Image& image);
// Throws kBadMagic on a wrong header and kImageTooLarge when the declared
// code does not fit the declared buffer or the file is truncated.
Image ParseImage(std::span<const uint8_t> bytes);

void WriteImageFile(const std::filesystem::path& path, const Image& image);
Image ReadImageFile(const std::filesystem::path& path);

}  // namespace attest::isa

#endif  // ATTEST_IMAGE_H_
