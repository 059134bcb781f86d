#include "vitbis/vtb.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <set>

namespace vitbis {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xFF));
}

struct Reader {
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;

  std::uint8_t u8() {
    if (pos + 1 > buf.size()) throw CorruptFile("container truncated");
    return buf[pos++];
  }
  std::uint32_t u32() {
    if (pos + 4 > buf.size()) throw CorruptFile("container truncated");
    std::uint32_t v = static_cast<std::uint32_t>(buf[pos]) |
                      (static_cast<std::uint32_t>(buf[pos + 1]) << 8) |
                      (static_cast<std::uint32_t>(buf[pos + 2]) << 16) |
                      (static_cast<std::uint32_t>(buf[pos + 3]) << 24);
    pos += 4;
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    if (pos + n > buf.size()) throw CorruptFile("container truncated");
    const std::uint8_t* p = buf.data() + pos;
    pos += n;
    return p;
  }
};

std::size_t dtype_size(VtbDtype d) {
  switch (d) {
    case VtbDtype::f64: return 8;
    case VtbDtype::f32: return 4;
    case VtbDtype::u8: return 1;
  }
  throw CorruptFile("unknown dtype");
}

void check_name(const std::string& name) {
  if (name.empty() || name.size() > 255) {
    throw CorruptFile("tensor name length out of range");
  }
  for (char c : name) {
    if (c < 0x20 || c > 0x7E) throw CorruptFile("tensor name must be printable ASCII");
  }
}

}  // namespace

std::uint64_t VtbTensor::elem_count() const {
  std::uint64_t n = 1;
  for (std::uint32_t d : dims) n *= d;
  return n;
}

std::uint32_t crc32(const std::uint8_t* data, std::size_t n) {
  // Table-driven IEEE CRC32 with the reflected polynomial.
  static const auto lut = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i) {
    crc = lut[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  }
  return crc ^ 0xFFFFFFFFu;
}

std::uint32_t crc32(const std::vector<std::uint8_t>& data) {
  return crc32(data.data(), data.size());
}

std::vector<std::uint8_t> encode_vtb(const std::vector<VtbTensor>& tensors,
                                     const nlohmann::json& meta) {
  std::set<std::string> names;
  for (const VtbTensor& t : tensors) {
    check_name(t.name);
    if (!names.insert(t.name).second) {
      throw CorruptFile("duplicate tensor name: " + t.name);
    }
    if (t.bytes.size() != t.elem_count() * dtype_size(t.dtype)) {
      throw ShapeMismatch("payload size does not match dims for " + t.name);
    }
    if (t.dims.size() > static_cast<std::size_t>(Shape::kMaxRank)) {
      throw ShapeMismatch("tensor rank too large: " + t.name);
    }
  }

  std::vector<std::uint8_t> out;
  out.push_back('V');
  out.push_back('T');
  out.push_back('B');
  out.push_back('1');
  out.push_back(1);  // version
  const std::string meta_str = meta.dump();
  put_u32(out, static_cast<std::uint32_t>(meta_str.size()));
  out.insert(out.end(), meta_str.begin(), meta_str.end());
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const VtbTensor& t : tensors) {
    out.push_back(static_cast<std::uint8_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    out.push_back(static_cast<std::uint8_t>(t.dtype));
    out.push_back(static_cast<std::uint8_t>(t.dims.size()));
    for (std::uint32_t d : t.dims) put_u32(out, d);
    out.insert(out.end(), t.bytes.begin(), t.bytes.end());
  }
  put_u32(out, crc32(out));
  return out;
}

std::pair<std::vector<VtbTensor>, nlohmann::json> decode_vtb(
    const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 + 1 + 4 + 4 + 4) throw CorruptFile("container too small");
  const std::uint32_t stored = static_cast<std::uint32_t>(bytes[bytes.size() - 4]) |
                               (static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8) |
                               (static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16) |
                               (static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24);
  if (crc32(bytes.data(), bytes.size() - 4) != stored) {
    throw CorruptFile("checksum mismatch");
  }

  Reader r{bytes};
  const std::uint8_t* magic = r.take(4);
  if (std::memcmp(magic, "VTB1", 4) != 0) throw CorruptFile("bad magic");
  const std::uint8_t version = r.u8();
  if (version != 1) {
    throw VersionMismatch("unsupported container version " + std::to_string(version));
  }
  const std::uint32_t meta_len = r.u32();
  const std::uint8_t* meta_bytes = r.take(meta_len);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_bytes, meta_bytes + meta_len);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile(std::string("metadata is not valid JSON: ") + e.what());
  }

  const std::uint32_t count = r.u32();
  std::vector<VtbTensor> tensors;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    VtbTensor t;
    const std::uint8_t name_len = r.u8();
    const std::uint8_t* name_bytes = r.take(name_len);
    t.name.assign(reinterpret_cast<const char*>(name_bytes), name_len);
    check_name(t.name);
    if (!names.insert(t.name).second) {
      throw CorruptFile("duplicate tensor name: " + t.name);
    }
    const std::uint8_t dt = r.u8();
    if (dt > 2) throw CorruptFile("unknown dtype byte");
    t.dtype = static_cast<VtbDtype>(dt);
    const std::uint8_t rank = r.u8();
    if (rank > Shape::kMaxRank) throw CorruptFile("tensor rank too large");
    for (std::uint8_t d = 0; d < rank; ++d) {
      const std::uint32_t e = r.u32();
      if (e == 0) throw CorruptFile("zero extent");
      t.dims.push_back(e);
    }
    const std::size_t payload = t.elem_count() * dtype_size(t.dtype);
    const std::uint8_t* p = r.take(payload);
    t.bytes.assign(p, p + payload);
    tensors.push_back(std::move(t));
  }
  if (r.pos != bytes.size() - 4) throw CorruptFile("trailing bytes in container");
  return {std::move(tensors), std::move(meta)};
}

void write_vtb(const std::string& path, const std::vector<VtbTensor>& tensors,
               const nlohmann::json& meta) {
  write_file_bytes(path, encode_vtb(tensors, meta));
}

std::pair<std::vector<VtbTensor>, nlohmann::json> read_vtb(const std::string& path) {
  return decode_vtb(read_file_bytes(path));
}

VtbTensor tensor_to_vtb(const std::string& name, const Tensor& t) {
  VtbTensor v;
  v.name = name;
  v.dtype = VtbDtype::f64;
  for (std::int64_t d : t.shape.dims) v.dims.push_back(static_cast<std::uint32_t>(d));
  v.bytes.resize(t.data->size() * sizeof(double));
  std::memcpy(v.bytes.data(), t.data->data(), v.bytes.size());
  return v;
}

Tensor vtb_to_tensor(const VtbTensor& v) {
  if (v.dtype != VtbDtype::f64) throw CorruptFile("expected f64 tensor: " + v.name);
  std::vector<std::int64_t> dims;
  for (std::uint32_t d : v.dims) dims.push_back(static_cast<std::int64_t>(d));
  Tensor t = Tensor::zeros(Shape{dims});
  std::memcpy(t.data->data(), v.bytes.data(), v.bytes.size());
  return t;
}

VtbTensor mask_to_vtb(const std::string& name, const LabelMask& m) {
  VtbTensor v;
  v.name = name;
  v.dtype = VtbDtype::u8;
  v.dims = {static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols)};
  v.bytes.reserve(m.labels.size());
  for (std::int32_t l : m.labels) {
    if (l < 0 || l > 255) throw DomainError("label does not fit in u8");
    v.bytes.push_back(static_cast<std::uint8_t>(l));
  }
  return v;
}

LabelMask vtb_to_mask(const VtbTensor& v, double spacing_r, double spacing_c) {
  if (v.dtype != VtbDtype::u8 || v.dims.size() != 2) {
    throw CorruptFile("expected u8 rank-2 mask: " + v.name);
  }
  LabelMask m = LabelMask::filled(v.dims[0], v.dims[1], 0, spacing_r, spacing_c);
  for (std::size_t i = 0; i < v.bytes.size(); ++i) {
    m.labels[i] = v.bytes[i];
  }
  return m;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptFile("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path);
}

}  // namespace vitbis
