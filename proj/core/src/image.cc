#include "attest/image.h"

#include <cstring>
#include <fstream>
#include <iterator>

#include "attest/error.h"

namespace attest::isa {
namespace {

constexpr char kMagic[4] = {'V', 'F', '0', '1'};

void PutU32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint32_t GetU32(std::span<const uint8_t> in, size_t at) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(in[at + i]) << (8 * i);
  return v;
}

uint64_t GetU64(std::span<const uint8_t> in, size_t at) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(in[at + i]) << (8 * i);
  return v;
}

void PutU64(std::span<uint8_t> out, size_t at, uint64_t v) {
  for (int i = 0; i < 8; ++i) out[at + i] = static_cast<uint8_t>(v >> (8 * i));
}

}  // namespace

Word128 LoadWord(std::span<const uint8_t> bytes, size_t index) {
  const size_t at = index * kWordBytes;
  return {GetU64(bytes, at), GetU64(bytes, at + 8)};
}

void StoreWord(std::span<uint8_t> bytes, size_t index, const Word128& w) {
  const size_t at = index * kWordBytes;
  PutU64(bytes, at, w.lo);
  PutU64(bytes, at + 8, w.hi);
}

Word128 Image::word(size_t index) const { return LoadWord(buffer, index); }

void Image::set_word(size_t index, const Word128& w) {
  StoreWord(buffer, index, w);
}

Image MakeImage(std::span<const Instruction> code, size_t buffer_bytes,
                uint32_t entry) {
  if (code.size() * kWordBytes > buffer_bytes) {
    throw Error(ErrorCode::kImageTooLarge, "code exceeds buffer");
  }
  Image image;
  image.entry = entry;
  image.code_words = static_cast<uint32_t>(code.size());
  image.buffer.assign(buffer_bytes, 0);
  for (size_t i = 0; i < code.size(); ++i) image.set_word(i, Encode(code[i]));
  return image;
}

Image AssembleImage(std::span<const std::string> lines, size_t buffer_bytes,
                    uint32_t entry) {
  std::vector<Instruction> code;
  code.reserve(lines.size());
  for (const auto& line : lines) code.push_back(ParseAsm(line));
  return MakeImage(code, buffer_bytes, entry);
}

std::vector<uint8_t> SerializeImage(const Image& image) {
  if (static_cast<size_t>(image.code_words) * kWordBytes > image.buffer.size()) {
    throw Error(ErrorCode::kImageTooLarge, "code does not fit the buffer");
  }
  std::vector<uint8_t> out(kMagic, kMagic + 4);
  PutU32(out, image.code_words);
  PutU32(out, image.entry);
  PutU32(out, static_cast<uint32_t>(image.buffer.size()));
  out.insert(out.end(), image.buffer.begin(), image.buffer.end());
  return out;
}

Image ParseImage(std::span<const uint8_t> bytes) {
  if (bytes.size() < kImageHeaderBytes ||
      std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorCode::kBadMagic, "not a VF01 image");
  }
  Image image;
  image.code_words = GetU32(bytes, 4);
  image.entry = GetU32(bytes, 8);
  const uint32_t buffer_bytes = GetU32(bytes, 12);
  if (bytes.size() - kImageHeaderBytes < buffer_bytes) {
    throw Error(ErrorCode::kImageTooLarge, "truncated image");
  }
  if (static_cast<uint64_t>(image.code_words) * kWordBytes > buffer_bytes) {
    throw Error(ErrorCode::kImageTooLarge, "code exceeds buffer");
  }
  image.buffer.assign(bytes.begin() + kImageHeaderBytes,
                      bytes.begin() + kImageHeaderBytes + buffer_bytes);
  return image;
}

void WriteImageFile(const std::filesystem::path& path, const Image& image) {
  const auto bytes = SerializeImage(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kConfigError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

Image ReadImageFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kConfigError, "cannot read " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return ParseImage(bytes);
}

}  // namespace attest::isa
