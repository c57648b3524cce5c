#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "netconv/common/logging.hpp"
#include "netconv/ingest/packet.hpp"

namespace netconv::ingest {

namespace {

constexpr std::uint32_t kPcapMicro = 0xA1B2C3D4;
constexpr std::uint32_t kPcapNano = 0xA1B23C4D;
constexpr std::uint32_t kPcapngSection = 0x0A0D0D0A;
constexpr std::uint32_t kPcapngByteOrder = 0x1A2B3C4D;

constexpr std::size_t kPcapGlobalHeader = 24;
constexpr std::size_t kPcapRecordHeader = 16;

constexpr std::uint32_t byteswap(std::uint32_t v) { return __builtin_bswap32(v); }
constexpr std::uint16_t byteswap(std::uint16_t v) { return __builtin_bswap16(v); }

std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << v;
  return os.str();
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void set_swapped(bool swapped) { swapped_ = swapped; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }
  void seek(std::size_t pos) { pos_ = pos; }
  void skip(std::size_t n) { pos_ += n; }

  std::uint32_t u32_at(std::size_t at) const {
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + at, 4);
    return swapped_ ? byteswap(v) : v;
  }
  std::uint16_t u16_at(std::size_t at) const {
    std::uint16_t v;
    std::memcpy(&v, bytes_.data() + at, 2);
    return swapped_ ? byteswap(v) : v;
  }
  std::uint32_t u32() {
    const auto v = u32_at(pos_);
    pos_ += 4;
    return v;
  }
  std::vector<std::uint8_t> take(std::size_t n) {
    std::vector<std::uint8_t> out(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  bool swapped_ = false;
};

LinkType link_type_from(std::uint32_t network) {
  switch (network) {
    case 1:
      return LinkType::ethernet;
    case 101:
    case 228:
    case 229:
      return LinkType::raw_ip;
    default:
      throw CaptureError("unsupported link type " + std::to_string(network));
  }
}

CaptureContents parse_pcap(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kPcapGlobalHeader) throw CaptureError("malformed capture header");
  Reader in(bytes);
  std::uint32_t magic = in.u32_at(0);
  bool nano = false;
  if (magic == byteswap(kPcapMicro) || magic == byteswap(kPcapNano)) {
    in.set_swapped(true);
    magic = in.u32_at(0);
  }
  nano = magic == kPcapNano;
  const LinkType link = link_type_from(in.u32_at(20));
  in.seek(kPcapGlobalHeader);

  CaptureContents out;
  while (in.remaining() > 0) {
    if (in.remaining() < kPcapRecordHeader) {
      ++out.truncated_records;
      break;
    }
    const std::uint32_t sec = in.u32();
    const std::uint32_t frac = in.u32();
    const std::uint32_t incl = in.u32();
    in.u32();  // original length
    if (in.remaining() < incl) {
      ++out.truncated_records;
      break;
    }
    RawPacket p;
    p.timestamp_us = static_cast<std::int64_t>(sec) * 1'000'000 + (nano ? frac / 1000 : frac);
    p.link_type = link;
    p.bytes = in.take(incl);
    if (p.bytes.empty()) continue;
    out.packets.push_back(std::move(p));
  }
  return out;
}

struct Interface {
  LinkType link = LinkType::ethernet;
  double ticks_per_us = 1.0;
};

CaptureContents parse_pcapng(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  std::vector<Interface> interfaces;
  CaptureContents out;
  while (in.remaining() > 0) {
    const std::size_t start = in.position();
    if (in.remaining() < 12) {
      ++out.truncated_records;
      break;
    }
    std::uint32_t type = in.u32_at(start);
    if (type == kPcapngSection) {
      const std::uint32_t bom = in.u32_at(start + 8);
      if (bom == byteswap(kPcapngByteOrder)) {
        in.set_swapped(true);
      } else if (bom == kPcapngByteOrder) {
        in.set_swapped(false);
      } else {
        throw CaptureError("malformed capture header");
      }
      interfaces.clear();
    }
    const std::uint32_t total = in.u32_at(start + 4);
    if (total < 12 || total % 4 != 0) throw CaptureError("malformed pcapng block length " + std::to_string(total));
    if (in.remaining() < total) {
      ++out.truncated_records;
      break;
    }
    const std::size_t body = start + 8;
    const std::size_t body_end = start + total - 4;
    switch (type) {
      case kPcapngSection:
        break;
      case 1: {  // interface description
        Interface itf;
        itf.link = link_type_from(in.u16_at(body));
        std::size_t at = body + 8;
        while (at + 4 <= body_end) {
          const std::uint16_t code = in.u16_at(at);
          const std::uint16_t len = in.u16_at(at + 2);
          if (code == 0) break;
          if (code == 9 && len >= 1) {
            const std::uint8_t res = bytes[at + 4];
            const double ticks_per_s = (res & 0x80) ? std::ldexp(1.0, res & 0x7F) : std::pow(10.0, res);
            itf.ticks_per_us = ticks_per_s / 1e6;
          }
          at += 4 + ((len + 3u) & ~3u);
        }
        interfaces.push_back(itf);
        break;
      }
      case 6: {  // enhanced packet
        const std::uint32_t id = in.u32_at(body);
        if (id >= interfaces.size()) throw CaptureError("packet references unknown interface " + std::to_string(id));
        const std::uint64_t ticks = (static_cast<std::uint64_t>(in.u32_at(body + 4)) << 32) | in.u32_at(body + 8);
        const std::uint32_t caplen = in.u32_at(body + 12);
        if (body + 20 + caplen > body_end) throw CaptureError("malformed enhanced packet block");
        RawPacket p;
        p.link_type = interfaces[id].link;
        p.timestamp_us = static_cast<std::int64_t>(static_cast<double>(ticks) / interfaces[id].ticks_per_us);
        p.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(body + 20),
                       bytes.begin() + static_cast<std::ptrdiff_t>(body + 20 + caplen));
        if (!p.bytes.empty()) out.packets.push_back(std::move(p));
        break;
      }
      case 3: {  // simple packet
        if (interfaces.empty()) throw CaptureError("simple packet block before any interface");
        const std::uint32_t orig = in.u32_at(body);
        const std::size_t caplen = std::min<std::size_t>(orig, body_end - (body + 4));
        RawPacket p;
        p.link_type = interfaces[0].link;
        p.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(body + 4),
                       bytes.begin() + static_cast<std::ptrdiff_t>(body + 4 + caplen));
        if (!p.bytes.empty()) out.packets.push_back(std::move(p));
        break;
      }
      case 4:  // name resolution
      case 5:  // interface statistics
        break;
      default:
        throw CaptureError("unsupported pcapng block type " + hex32(type));
    }
    in.seek(start + total);
  }
  return out;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

}  // namespace

CaptureContents parse_capture(std::span<const std::uint8_t> file_bytes) {
  if (file_bytes.size() < 4) throw CaptureError("malformed capture header");
  std::uint32_t magic;
  std::memcpy(&magic, file_bytes.data(), 4);
  CaptureContents contents;
  if (magic == kPcapMicro || magic == kPcapNano || magic == byteswap(kPcapMicro) ||
      magic == byteswap(kPcapNano)) {
    contents = parse_pcap(file_bytes);
  } else if (magic == kPcapngSection) {
    contents = parse_pcapng(file_bytes);
  } else {
    throw CaptureError("unsupported capture format");
  }
  if (contents.truncated_records > 0) {
    log().warn("capture ends with {} truncated record(s); skipped", contents.truncated_records);
  }
  return contents;
}

CaptureContents parse_capture(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CaptureError("cannot open capture " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_capture(std::span<const std::uint8_t>(bytes));
}

std::vector<std::uint8_t> encode_pcap(std::span<const RawPacket> packets) {
  const LinkType link = packets.empty() ? LinkType::ethernet : packets.front().link_type;
  std::vector<std::uint8_t> out;
  put_u32(out, kPcapMicro);
  put_u16(out, 2);
  put_u16(out, 4);
  put_u32(out, 0);
  put_u32(out, 0);
  put_u32(out, 65535);
  put_u32(out, link == LinkType::ethernet ? 1u : 101u);
  for (const auto& p : packets) {
    if (p.link_type != link) throw CaptureError("pcap writer needs a single link type per file");
    put_u32(out, static_cast<std::uint32_t>(p.timestamp_us / 1'000'000));
    put_u32(out, static_cast<std::uint32_t>(p.timestamp_us % 1'000'000));
    put_u32(out, static_cast<std::uint32_t>(p.bytes.size()));
    put_u32(out, static_cast<std::uint32_t>(p.bytes.size()));
    out.insert(out.end(), p.bytes.begin(), p.bytes.end());
  }
  return out;
}

void write_pcap(const std::filesystem::path& path, std::span<const RawPacket> packets) {
  const auto bytes = encode_pcap(packets);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CaptureError("cannot write capture " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace netconv::ingest
