// SPDX-License-Identifier: Apache-2.0
#include "bfvae/npz.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace bfvae::npz {

namespace {

[[noreturn]] void fail(const std::string& what) {
  throw std::runtime_error("npz: " + what);
}

size_t dtype_size(const std::string& descr) {
  if (descr == "<f8") return 8;
  if (descr == "<f4") return 4;
  if (descr == "<i8") return 8;
  if (descr == "<i4") return 4;
  if (descr == "|u1" || descr == "|i1") return 1;
  fail("unsupported dtype '" + descr + "'");
}

void put_u16(std::string& s, uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint16_t get_u16(const uint8_t* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }

uint32_t get_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

// --- npy member encoding ----------------------------------------------------

std::string npy_encode(const Array& a) {
  std::ostringstream dict;
  dict << "{'descr': '" << a.descr << "', 'fortran_order': False, 'shape': (";
  for (size_t i = 0; i < a.shape.size(); ++i) {
    if (i) dict << ", ";
    dict << a.shape[i];
  }
  if (a.shape.size() == 1) dict << ",";
  dict << "), }";
  std::string header = dict.str();
  const size_t base = 10;  // magic(6) + version(2) + hlen(2)
  size_t total = base + header.size() + 1;
  const size_t pad = (64 - total % 64) % 64;
  header.append(pad, ' ');
  header.push_back('\n');

  std::string out;
  out += "\x93NUMPY";
  out.push_back(1);
  out.push_back(0);
  put_u16(out, static_cast<uint16_t>(header.size()));
  out += header;
  out.append(reinterpret_cast<const char*>(a.data.data()), a.data.size());
  return out;
}

Array npy_decode(const std::vector<uint8_t>& buf, const std::string& name) {
  if (buf.size() < 10 || std::memcmp(buf.data(), "\x93NUMPY", 6) != 0)
    fail("member '" + name + "' is not an npy array");
  const int major = buf[6];
  size_t hlen = 0, hoff = 0;
  if (major == 1) {
    hlen = get_u16(buf.data() + 8);
    hoff = 10;
  } else if (major == 2 || major == 3) {
    if (buf.size() < 12) fail("member '" + name + "' truncated header");
    hlen = get_u32(buf.data() + 8);
    hoff = 12;
  } else {
    fail("member '" + name + "' has unsupported npy version");
  }
  if (buf.size() < hoff + hlen) fail("member '" + name + "' truncated header");
  const std::string header(reinterpret_cast<const char*>(buf.data() + hoff), hlen);

  auto find_str = [&](const std::string& key) -> std::string {
    const size_t k = header.find("'" + key + "'");
    if (k == std::string::npos) fail("member '" + name + "': missing " + key);
    const size_t q1 = header.find('\'', header.find(':', k));
    const size_t q2 = header.find('\'', q1 + 1);
    return header.substr(q1 + 1, q2 - q1 - 1);
  };

  Array a;
  a.descr = find_str("descr");
  (void)dtype_size(a.descr);

  const size_t fo = header.find("'fortran_order'");
  if (fo == std::string::npos || header.find("False", fo) == std::string::npos)
    fail("member '" + name + "': only C-order arrays are supported");

  const size_t sh = header.find("'shape'");
  const size_t p1 = header.find('(', sh);
  const size_t p2 = header.find(')', p1);
  if (sh == std::string::npos || p1 == std::string::npos || p2 == std::string::npos)
    fail("member '" + name + "': missing shape");
  std::string tup = header.substr(p1 + 1, p2 - p1 - 1);
  std::istringstream ts(tup);
  std::string tok;
  size_t count = 1;
  while (std::getline(ts, tok, ',')) {
    std::string trimmed;
    for (char ch : tok)
      if (!std::isspace(static_cast<unsigned char>(ch))) trimmed += ch;
    if (trimmed.empty()) continue;
    a.shape.push_back(static_cast<size_t>(std::stoull(trimmed)));
    count *= a.shape.back();
  }
  if (a.shape.empty()) count = 1;  // 0-d scalar

  const size_t want = count * dtype_size(a.descr);
  if (buf.size() - hoff - hlen < want)
    fail("member '" + name + "' payload truncated");
  a.data.assign(buf.begin() + static_cast<long>(hoff + hlen),
                buf.begin() + static_cast<long>(hoff + hlen + want));
  return a;
}

std::vector<uint8_t> inflate_raw(const uint8_t* src, size_t src_len, size_t dst_len,
                                 const std::string& name) {
  std::vector<uint8_t> out(dst_len);
  z_stream zs{};
  if (inflateInit2(&zs, -15) != Z_OK) fail("inflateInit failed");
  zs.next_in = const_cast<Bytef*>(src);
  zs.avail_in = static_cast<uInt>(src_len);
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(dst_len);
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END) fail("member '" + name + "' failed to decompress");
  return out;
}

}  // namespace

size_t Array::itemsize() const { return dtype_size(descr); }

size_t Array::elems() const {
  size_t n = 1;
  for (size_t s : shape) n *= s;
  return n;
}

Array Array::from_doubles(std::vector<size_t> shape, const std::vector<double>& v) {
  Array a;
  a.descr = "<f8";
  a.shape = std::move(shape);
  a.data.resize(v.size() * 8);
  std::memcpy(a.data.data(), v.data(), a.data.size());
  if (a.elems() != v.size()) fail("from_doubles: shape/size mismatch");
  return a;
}

Array Array::from_int64(std::vector<size_t> shape, const std::vector<int64_t>& v) {
  Array a;
  a.descr = "<i8";
  a.shape = std::move(shape);
  a.data.resize(v.size() * 8);
  std::memcpy(a.data.data(), v.data(), a.data.size());
  if (a.elems() != v.size()) fail("from_int64: shape/size mismatch");
  return a;
}

Array Array::from_bytes(std::vector<size_t> shape, std::vector<uint8_t> v) {
  Array a;
  a.descr = "|u1";
  a.shape = std::move(shape);
  a.data = std::move(v);
  if (a.elems() != a.data.size()) fail("from_bytes: shape/size mismatch");
  return a;
}

Array Array::from_string(const std::string& s) {
  std::vector<uint8_t> v(s.begin(), s.end());
  return from_bytes({s.size()}, std::move(v));
}

std::vector<double> Array::to_doubles() const {
  std::vector<double> out(elems());
  if (descr == "<f8") {
    std::memcpy(out.data(), data.data(), data.size());
  } else if (descr == "<f4") {
    const float* p = reinterpret_cast<const float*>(data.data());
    for (size_t i = 0; i < out.size(); ++i) out[i] = p[i];
  } else if (descr == "<i8") {
    const int64_t* p = reinterpret_cast<const int64_t*>(data.data());
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(p[i]);
  } else if (descr == "<i4") {
    const int32_t* p = reinterpret_cast<const int32_t*>(data.data());
    for (size_t i = 0; i < out.size(); ++i) out[i] = p[i];
  } else if (descr == "|u1") {
    for (size_t i = 0; i < out.size(); ++i) out[i] = data[i];
  } else {
    fail("to_doubles: unsupported dtype " + descr);
  }
  return out;
}

std::vector<int64_t> Array::to_int64() const {
  std::vector<int64_t> out(elems());
  if (descr == "<i8") {
    std::memcpy(out.data(), data.data(), data.size());
  } else if (descr == "<i4") {
    const int32_t* p = reinterpret_cast<const int32_t*>(data.data());
    for (size_t i = 0; i < out.size(); ++i) out[i] = p[i];
  } else if (descr == "|u1") {
    for (size_t i = 0; i < out.size(); ++i) out[i] = data[i];
  } else if (descr == "<f8") {
    const double* p = reinterpret_cast<const double*>(data.data());
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<int64_t>(p[i]);
  } else {
    fail("to_int64: unsupported dtype " + descr);
  }
  return out;
}

std::string Array::to_string() const {
  return std::string(data.begin(), data.end());
}

Archive load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail("cannot open '" + path + "'");
  f.seekg(0, std::ios::end);
  const std::streamoff fsize = f.tellg();
  if (fsize < 22) fail("'" + path + "' is not a zip archive (too small)");

  // locate end-of-central-directory
  const std::streamoff tail = std::min<std::streamoff>(fsize, 66000);
  std::vector<uint8_t> buf(static_cast<size_t>(tail));
  f.seekg(fsize - tail);
  f.read(reinterpret_cast<char*>(buf.data()), tail);
  long eocd = -1;
  for (long i = static_cast<long>(buf.size()) - 22; i >= 0; --i) {
    if (get_u32(buf.data() + i) == 0x06054b50) {
      eocd = i;
      break;
    }
  }
  if (eocd < 0) fail("'" + path + "': end-of-central-directory not found (truncated?)");
  const uint16_t n_entries = get_u16(buf.data() + eocd + 10);
  const uint32_t cd_size = get_u32(buf.data() + eocd + 12);
  const uint32_t cd_off = get_u32(buf.data() + eocd + 16);
  if (cd_off == 0xffffffffu) fail("zip64 archives are not supported");

  std::vector<uint8_t> cd(cd_size);
  f.seekg(cd_off);
  f.read(reinterpret_cast<char*>(cd.data()), cd_size);
  if (!f) fail("'" + path + "': central directory truncated");

  Archive out;
  size_t p = 0;
  for (int e = 0; e < n_entries; ++e) {
    if (p + 46 > cd.size() || get_u32(cd.data() + p) != 0x02014b50)
      fail("'" + path + "': corrupt central directory");
    const uint16_t method = get_u16(cd.data() + p + 10);
    const uint32_t crc = get_u32(cd.data() + p + 16);
    const uint32_t csize = get_u32(cd.data() + p + 20);
    const uint32_t usize = get_u32(cd.data() + p + 24);
    const uint16_t nlen = get_u16(cd.data() + p + 28);
    const uint16_t xlen = get_u16(cd.data() + p + 30);
    const uint16_t clen = get_u16(cd.data() + p + 32);
    const uint32_t lho = get_u32(cd.data() + p + 42);
    std::string name(reinterpret_cast<const char*>(cd.data() + p + 46), nlen);
    p += 46u + nlen + xlen + clen;

    // local header: re-read name/extra lengths (they can differ from the CD)
    uint8_t lh[30];
    f.seekg(lho);
    f.read(reinterpret_cast<char*>(lh), 30);
    if (!f || get_u32(lh) != 0x04034b50)
      fail("'" + path + "': bad local header for member '" + name + "'");
    const uint16_t lnlen = get_u16(lh + 26);
    const uint16_t lxlen = get_u16(lh + 28);
    f.seekg(lho + 30 + lnlen + lxlen);
    std::vector<uint8_t> raw(csize);
    f.read(reinterpret_cast<char*>(raw.data()), csize);
    if (!f) fail("'" + path + "': member '" + name + "' truncated");

    std::vector<uint8_t> payload;
    if (method == 0) {
      payload = std::move(raw);
    } else if (method == 8) {
      payload = inflate_raw(raw.data(), raw.size(), usize, name);
    } else {
      fail("'" + path + "': member '" + name + "' uses unsupported compression");
    }
    const uint32_t got_crc =
        static_cast<uint32_t>(crc32(0L, payload.data(), static_cast<uInt>(payload.size())));
    if (got_crc != crc) fail("'" + path + "': member '" + name + "' CRC mismatch");

    std::string key = name;
    if (key.size() > 4 && key.substr(key.size() - 4) == ".npy")
      key = key.substr(0, key.size() - 4);
    out[key] = npy_decode(payload, key);
  }
  return out;
}

void save(const std::string& path, const Archive& arrays) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail("cannot write '" + path + "'");

  struct Entry {
    std::string name;
    uint32_t crc, size, offset;
  };
  std::vector<Entry> entries;
  uint32_t pos = 0;

  for (const auto& [key, arr] : arrays) {
    const std::string payload = npy_encode(arr);
    const std::string name = key + ".npy";
    if (payload.size() > 0xfffffffeull) fail("member too large (zip64 unsupported)");
    const uint32_t crc = static_cast<uint32_t>(crc32(
        0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));

    std::string lh;
    put_u32(lh, 0x04034b50);
    put_u16(lh, 20);  // version needed
    put_u16(lh, 0);   // flags
    put_u16(lh, 0);   // method: stored
    put_u16(lh, 0);   // time
    put_u16(lh, 0);   // date
    put_u32(lh, crc);
    put_u32(lh, static_cast<uint32_t>(payload.size()));
    put_u32(lh, static_cast<uint32_t>(payload.size()));
    put_u16(lh, static_cast<uint16_t>(name.size()));
    put_u16(lh, 0);
    lh += name;

    entries.push_back({name, crc, static_cast<uint32_t>(payload.size()), pos});
    f.write(lh.data(), static_cast<std::streamsize>(lh.size()));
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    pos += static_cast<uint32_t>(lh.size() + payload.size());
  }

  const uint32_t cd_start = pos;
  for (const auto& e : entries) {
    std::string cd;
    put_u32(cd, 0x02014b50);
    put_u16(cd, 20);  // made by
    put_u16(cd, 20);  // needed
    put_u16(cd, 0);   // flags
    put_u16(cd, 0);   // method
    put_u16(cd, 0);   // time
    put_u16(cd, 0);   // date
    put_u32(cd, e.crc);
    put_u32(cd, e.size);
    put_u32(cd, e.size);
    put_u16(cd, static_cast<uint16_t>(e.name.size()));
    put_u16(cd, 0);  // extra
    put_u16(cd, 0);  // comment
    put_u16(cd, 0);  // disk
    put_u16(cd, 0);  // internal attrs
    put_u32(cd, 0);  // external attrs
    put_u32(cd, e.offset);
    cd += e.name;
    f.write(cd.data(), static_cast<std::streamsize>(cd.size()));
    pos += static_cast<uint32_t>(cd.size());
  }

  std::string eocd;
  put_u32(eocd, 0x06054b50);
  put_u16(eocd, 0);
  put_u16(eocd, 0);
  put_u16(eocd, static_cast<uint16_t>(entries.size()));
  put_u16(eocd, static_cast<uint16_t>(entries.size()));
  put_u32(eocd, pos - cd_start);
  put_u32(eocd, cd_start);
  put_u16(eocd, 0);
  f.write(eocd.data(), static_cast<std::streamsize>(eocd.size()));
  if (!f) fail("write error on '" + path + "'");
}

}  // namespace bfvae::npz
