#include "sdd/wav.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "sdd/error.hpp"

namespace sdd {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t read_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

int bytes_per_sample(SampleFormat f) {
  switch (f) {
    case SampleFormat::pcm8: return 1;
    case SampleFormat::pcm16: return 2;
    case SampleFormat::pcm24: return 3;
    case SampleFormat::pcm32: return 4;
    case SampleFormat::float32: return 4;
  }
  return 0;
}

struct ParsedHeader {
  WavInfo info;
  std::size_t data_offset = 0;
  std::size_t data_bytes = 0;
};

// `available` is the total byte count of the file; `bytes` may hold only a
// prefix of it when probing.
ParsedHeader parse_header(std::span<const std::uint8_t> bytes, std::size_t available) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw Error("not a RIFF/WAVE file");
  }
  ParsedHeader h;
  bool have_fmt = false;
  std::uint16_t format_tag = 0;
  std::uint16_t bits = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || body + size > bytes.size()) throw Error("malformed fmt chunk");
      format_tag = read_u16(chunk + 8);
      h.info.channels = read_u16(chunk + 10);
      h.info.sample_rate = static_cast<int>(read_u32(chunk + 12));
      bits = read_u16(chunk + 22);
      if (format_tag == kFormatExtensible) {
        if (size < 40) throw Error("malformed WAVE_FORMAT_EXTENSIBLE header");
        format_tag = read_u16(chunk + 8 + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw Error("data chunk before fmt chunk");
      h.data_offset = body;
      h.data_bytes = size;
      if (body + size > available) throw Error("truncated data chunk");
      break;
    }
    pos = body + size + (size & 1U);
  }
  if (!have_fmt) throw Error("missing fmt chunk");
  if (h.data_offset == 0) throw Error("missing data chunk");
  if (h.info.channels <= 0) throw Error("invalid channel count");
  if (h.info.sample_rate <= 0) throw Error("invalid sample rate");

  if (format_tag == kFormatPcm) {
    switch (bits) {
      case 8: h.info.format = SampleFormat::pcm8; break;
      case 16: h.info.format = SampleFormat::pcm16; break;
      case 24: h.info.format = SampleFormat::pcm24; break;
      case 32: h.info.format = SampleFormat::pcm32; break;
      default: throw Error("unsupported PCM bit depth " + std::to_string(bits));
    }
  } else if (format_tag == kFormatFloat) {
    if (bits != 32) throw Error("unsupported float bit depth " + std::to_string(bits));
    h.info.format = SampleFormat::float32;
  } else {
    throw Error("unsupported codec (format tag " + std::to_string(format_tag) + ")");
  }
  const std::size_t frame_bytes =
      static_cast<std::size_t>(bytes_per_sample(h.info.format)) * h.info.channels;
  if (h.data_bytes % frame_bytes != 0) throw Error("data chunk is not a whole number of frames");
  h.info.frames = h.data_bytes / frame_bytes;
  return h;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path, std::size_t limit) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes;
  if (limit == 0) {
    bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  } else {
    bytes.resize(limit);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(limit));
    bytes.resize(static_cast<std::size_t>(in.gcount()));
  }
  return bytes;
}

}  // namespace

WavInfo probe_wav(const std::filesystem::path& path) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw Error("cannot stat " + path.string());
  // Headers with LIST/INFO chunks can be long; 64 KiB covers real-world files.
  const auto bytes = read_file(path, 1 << 16);
  try {
    return parse_header(bytes, size).info;
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

AudioBuffer decode_wav(std::span<const std::uint8_t> bytes) {
  const ParsedHeader h = parse_header(bytes, bytes.size());
  AudioBuffer buf;
  buf.sample_rate = h.info.sample_rate;
  buf.channels = h.info.channels;
  const std::size_t count = h.info.frames * static_cast<std::size_t>(h.info.channels);
  buf.samples.resize(count);
  const std::uint8_t* p = bytes.data() + h.data_offset;
  switch (h.info.format) {
    case SampleFormat::pcm8:
      for (std::size_t i = 0; i < count; ++i) buf.samples[i] = (static_cast<int>(p[i]) - 128) / 128.0f;
      break;
    case SampleFormat::pcm16:
      for (std::size_t i = 0; i < count; ++i) {
        buf.samples[i] = static_cast<std::int16_t>(read_u16(p + 2 * i)) / 32768.0f;
      }
      break;
    case SampleFormat::pcm24:
      for (std::size_t i = 0; i < count; ++i) {
        const std::uint8_t* s = p + 3 * i;
        std::int32_t v = s[0] | (s[1] << 8) | (s[2] << 16);
        if (v & 0x800000) v -= 0x1000000;
        buf.samples[i] = static_cast<float>(v / 8388608.0);
      }
      break;
    case SampleFormat::pcm32:
      for (std::size_t i = 0; i < count; ++i) {
        buf.samples[i] = static_cast<float>(static_cast<std::int32_t>(read_u32(p + 4 * i)) / 2147483648.0);
      }
      break;
    case SampleFormat::float32:
      for (std::size_t i = 0; i < count; ++i) {
        buf.samples[i] = std::bit_cast<float>(read_u32(p + 4 * i));
      }
      break;
  }
  return buf;
}

AudioBuffer load_wav(const std::filesystem::path& path) {
  const auto bytes = read_file(path, 0);
  try {
    return decode_wav(bytes);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_wav(const AudioBuffer& buf, SampleFormat format) {
  if (buf.sample_rate <= 0 || buf.channels <= 0) throw Error("encode_wav: invalid buffer");
  const int bps = bytes_per_sample(format);
  const std::size_t data_bytes = buf.samples.size() * static_cast<std::size_t>(bps);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, static_cast<std::uint32_t>(36 + data_bytes));
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, format == SampleFormat::float32 ? kFormatFloat : kFormatPcm);
  put_u16(out, static_cast<std::uint16_t>(buf.channels));
  put_u32(out, static_cast<std::uint32_t>(buf.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(buf.sample_rate * buf.channels * bps));
  put_u16(out, static_cast<std::uint16_t>(buf.channels * bps));
  put_u16(out, static_cast<std::uint16_t>(8 * bps));
  put_tag(out, "data");
  put_u32(out, static_cast<std::uint32_t>(data_bytes));

  for (float x : buf.samples) {
    const double c = std::clamp(static_cast<double>(x), -1.0, 1.0);
    switch (format) {
      case SampleFormat::pcm8:
        out.push_back(static_cast<std::uint8_t>(std::clamp(std::lround(c * 128.0) + 128, 0L, 255L)));
        break;
      case SampleFormat::pcm16: {
        const long v = std::clamp(std::lround(c * 32768.0), -32768L, 32767L);
        put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
        break;
      }
      case SampleFormat::pcm24: {
        const long v = std::clamp(std::lround(c * 8388608.0), -8388608L, 8388607L);
        const auto u = static_cast<std::uint32_t>(static_cast<std::int32_t>(v));
        out.push_back(static_cast<std::uint8_t>(u & 0xFF));
        out.push_back(static_cast<std::uint8_t>((u >> 8) & 0xFF));
        out.push_back(static_cast<std::uint8_t>((u >> 16) & 0xFF));
        break;
      }
      case SampleFormat::pcm32: {
        const long long v =
            std::clamp(std::llround(c * 2147483648.0), -2147483648LL, 2147483647LL);
        put_u32(out, static_cast<std::uint32_t>(static_cast<std::int32_t>(v)));
        break;
      }
      case SampleFormat::float32:
        put_u32(out, std::bit_cast<std::uint32_t>(x));
        break;
    }
  }
  return out;
}

void save_wav(const std::filesystem::path& path, const AudioBuffer& buf, SampleFormat format) {
  const auto bytes = encode_wav(buf, format);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace sdd
