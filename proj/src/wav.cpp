#include "hetdiar/error.hpp"
#include "hetdiar/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "hetdiar/binary_io.hpp"

namespace hetdiar {

namespace {

std::uint16_t read_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  if (!is) throw DataError("truncated WAV header");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

void write_u16(std::ostream& os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  os.write(b, 2);
}

std::string read_tag(std::istream& is) {
  std::string tag(4, '\0');
  is.read(tag.data(), 4);
  if (!is) throw DataError("truncated WAV file");
  return tag;
}

}  // namespace

AudioSignal load_audio(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing audio file: " + path.string());
  if (read_tag(in) != "RIFF") throw DataError("not a RIFF file: " + path.string());
  io::read_u32(in);
  if (read_tag(in) != "WAVE") throw DataError("not a WAVE file: " + path.string());

  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  while (true) {
    const std::string tag = read_tag(in);
    const std::uint32_t size = io::read_u32(in);
    if (tag == "fmt ") {
      const std::uint16_t format = read_u16(in);
      channels = read_u16(in);
      rate = io::read_u32(in);
      io::read_u32(in);  // byte rate
      read_u16(in);      // block align
      bits = read_u16(in);
      if (size > 16) in.ignore(size - 16);
      if (format != 1) throw DataError("unsupported encoding: WAV format tag " + std::to_string(format) + " (need PCM)");
      if (channels != 1) throw DataError("non-mono input: " + std::to_string(channels) + " channels");
      if (bits != 16) throw DataError("unsupported encoding: " + std::to_string(bits) + "-bit samples (need 16-bit)");
      have_fmt = true;
    } else if (tag == "data") {
      if (!have_fmt) throw DataError("WAV data chunk before fmt chunk");
      AudioSignal signal;
      signal.sample_rate = static_cast<int>(rate);
      signal.samples.resize(size / 2);
      for (auto& s : signal.samples) s = static_cast<std::int16_t>(read_u16(in)) / 32768.0;
      if (signal.sample_rate <= 0) throw DataError("invalid sample rate");
      return signal;
    } else {
      in.ignore(size + (size & 1));
      if (!in) throw DataError("WAV file has no data chunk");
    }
  }
}

void save_audio(const std::filesystem::path& path, const AudioSignal& signal) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(signal.samples.size() * 2);
  out.write("RIFF", 4);
  io::write_u32(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  io::write_u32(out, 16);
  write_u16(out, 1);
  write_u16(out, 1);
  io::write_u32(out, static_cast<std::uint32_t>(signal.sample_rate));
  io::write_u32(out, static_cast<std::uint32_t>(signal.sample_rate * 2));
  write_u16(out, 2);
  write_u16(out, 16);
  out.write("data", 4);
  io::write_u32(out, data_bytes);
  for (double s : signal.samples) {
    const double scaled = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
    write_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
  }
}

}  // namespace hetdiar
