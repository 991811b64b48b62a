#include "ocl/binary_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>

namespace ocl {

void ByteWriter::magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::write_file(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes_.data()), static_cast<std::streamsize>(bytes_.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

ByteReader ByteReader::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return ByteReader(std::move(bytes));
}

void ByteReader::need(std::size_t n, const char* what) const {
  if (remaining() < n) {
    throw ParseError(std::string("truncated input while reading ") + what, pos_);
  }
}

void ByteReader::expect_magic(std::string_view m) {
  need(m.size(), "magic");
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (bytes_[pos_ + i] != static_cast<unsigned char>(m[i])) {
      throw ParseError("bad magic, expected \"" + std::string(m) + "\"", pos_);
    }
  }
  pos_ += m.size();
}

std::uint32_t ByteReader::u32() {
  need(4, "u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8, "u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

void ByteReader::expect_end() const {
  if (remaining() != 0) {
    throw ParseError(std::to_string(remaining()) + " trailing bytes", pos_);
  }
}

}  // namespace ocl
