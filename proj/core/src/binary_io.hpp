#pragma once

// Little-endian framing shared by the trajectory and density binary files.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <string_view>

#include "ropdf/error.hpp"

namespace ropdf::detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T to_little(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    std::array<unsigned char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes.data(), sizeof(T));
  }
  return value;
}

class BinaryWriter {
 public:
  BinaryWriter(const std::string& path, std::string_view magic, std::uint32_t version) : out_(path, std::ios::binary) {
    if (!out_) throw Error("cannot write " + path);
    out_.write(magic.data(), static_cast<std::streamsize>(magic.size()));
    put(version);
  }

  template <typename T>
  void put(T value) {
    value = to_little(value);
    out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }

  void put_doubles(std::span<const double> values) {
    if constexpr (std::endian::native == std::endian::little) {
      out_.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
    } else {
      for (double x : values) put(x);
    }
  }

 private:
  std::ofstream out_;
};

class BinaryReader {
 public:
  BinaryReader(const std::string& path, std::string_view magic, std::uint32_t version) : in_(path, std::ios::binary) {
    if (!in_) throw Error("cannot read " + path);
    std::string head(magic.size(), '\0');
    in_.read(head.data(), static_cast<std::streamsize>(head.size()));
    if (!in_ || head != magic) throw Error(path + ": bad magic header");
    if (get<std::uint32_t>() != version) throw Error(path + ": unsupported version");
  }

  template <typename T>
  T get() {
    T value{};
    in_.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in_) throw Error("truncated binary file");
    return to_little(value);
  }

  void get_doubles(std::span<double> values) {
    for (double& x : values) x = get<double>();
  }

 private:
  std::ifstream in_;
};

}  // namespace ropdf::detail
