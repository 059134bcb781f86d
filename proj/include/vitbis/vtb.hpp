#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vitbis/metrics.hpp"
#include "vitbis/tensor.hpp"

namespace vitbis {

// VTB1 container, little-endian throughout:
//   magic "VTB1" (4 bytes)
//   u8   version (currently 1)
//   u32  metadata byte length, then that many bytes of UTF-8 JSON
//   u32  tensor count
//   per tensor:
//     u8  name length, then the name (ASCII, unique within the file)
//     u8  dtype (0 = f64, 1 = f32, 2 = u8)
//     u8  rank, then rank x u32 extents
//     row-major payload
//   u32  CRC32 (IEEE) of every preceding byte

enum class VtbDtype : std::uint8_t { f64 = 0, f32 = 1, u8 = 2 };

struct VtbTensor {
  std::string name;
  VtbDtype dtype = VtbDtype::f64;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> bytes;  // raw little-endian payload

  std::uint64_t elem_count() const;
};

// IEEE CRC32 (polynomial 0xEDB88320, reflected), init/final xor 0xFFFFFFFF.
std::uint32_t crc32(const std::uint8_t* data, std::size_t n);
std::uint32_t crc32(const std::vector<std::uint8_t>& data);

std::vector<std::uint8_t> encode_vtb(const std::vector<VtbTensor>& tensors,
                                     const nlohmann::json& meta);
// Throws CorruptFile on structural damage or checksum mismatch and
// VersionMismatch on an unknown version byte.
std::pair<std::vector<VtbTensor>, nlohmann::json> decode_vtb(
    const std::vector<std::uint8_t>& bytes);

void write_vtb(const std::string& path, const std::vector<VtbTensor>& tensors,
               const nlohmann::json& meta);
std::pair<std::vector<VtbTensor>, nlohmann::json> read_vtb(const std::string& path);

// Conversions. Tensors store f64, masks store u8 (labels must fit).
VtbTensor tensor_to_vtb(const std::string& name, const Tensor& t);
Tensor vtb_to_tensor(const VtbTensor& v);
VtbTensor mask_to_vtb(const std::string& name, const LabelMask& m);
LabelMask vtb_to_mask(const VtbTensor& v, double spacing_r = 1.0,
                      double spacing_c = 1.0);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace vitbis
