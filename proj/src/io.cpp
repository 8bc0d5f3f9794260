#include "fad/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "fad/motion.hpp"

namespace fad::io {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

namespace fs = std::filesystem;

void write_bytes(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), "write failed: " + path.string());
}

std::string read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_f32(const fs::path& path, std::span<const float> data) {
    std::string bytes(data.size() * sizeof(float), '\0');
    std::memcpy(bytes.data(), data.data(), bytes.size());
    write_bytes(path, bytes);
}

void check_size(const fs::path& path, std::uintmax_t bytes, const std::string& what) {
    require(fs::exists(path), what + ": missing file " + path.string());
    const std::uintmax_t got = fs::file_size(path);
    require(got == bytes, what + ": size mismatch in " + path.string() + " (expected " +
                              std::to_string(bytes) + " bytes, found " +
                              std::to_string(got) + ")");
}

std::vector<float> read_f32(const fs::path& path, std::size_t count, const std::string& what) {
    check_size(path, count * sizeof(float), what);
    const std::string bytes = read_bytes(path);
    std::vector<float> out(count);
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
}

namespace {

void put_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& s, std::uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>(v >> 8));
}
std::uint32_t get_u32(const std::string& s, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[at + i]);
    return v;
}
std::uint16_t get_u16(const std::string& s, std::size_t at) {
    return static_cast<std::uint16_t>(static_cast<unsigned char>(s[at]) |
                                      (static_cast<unsigned char>(s[at + 1]) << 8));
}

} // namespace

void write_wav(const fs::path& path, std::span<const float> samples, int sample_rate) {
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
    std::string s;
    s.reserve(44 + data_bytes);
    s += "RIFF";
    put_u32(s, 36 + data_bytes);
    s += "WAVEfmt ";
    put_u32(s, 16);
    put_u16(s, 1); // PCM
    put_u16(s, 1); // mono
    put_u32(s, static_cast<std::uint32_t>(sample_rate));
    put_u32(s, static_cast<std::uint32_t>(sample_rate) * 2);
    put_u16(s, 2);
    put_u16(s, 16);
    s += "data";
    put_u32(s, data_bytes);
    for (float x : samples) {
        const double c = std::clamp(static_cast<double>(x), -1.0, 1.0);
        put_u16(s, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0))));
    }
    write_bytes(path, s);
}

std::vector<float> read_wav(const fs::path& path, int expected_rate) {
    const std::string s = read_bytes(path);
    require(s.size() >= 12 && s.compare(0, 4, "RIFF") == 0 && s.compare(8, 4, "WAVE") == 0,
            path.string() + ": not a RIFF/WAVE file");
    std::size_t at = 12;
    bool have_fmt = false;
    while (at + 8 <= s.size()) {
        const std::string id = s.substr(at, 4);
        const std::uint32_t len = get_u32(s, at + 4);
        const std::size_t body = at + 8;
        require(body + len <= s.size(), path.string() + ": truncated chunk " + id);
        if (id == "fmt ") {
            require(len >= 16, path.string() + ": bad fmt chunk");
            require(get_u16(s, body) == 1 && get_u16(s, body + 2) == 1 &&
                        get_u16(s, body + 14) == 16,
                    path.string() + ": expected 16-bit PCM mono");
            const int rate = static_cast<int>(get_u32(s, body + 4));
            require(rate == expected_rate, path.string() + ": sample rate " +
                                               std::to_string(rate) + " (expected " +
                                               std::to_string(expected_rate) + ")");
            have_fmt = true;
        } else if (id == "data") {
            require(have_fmt, path.string() + ": data chunk before fmt");
            std::vector<float> out(len / 2);
            for (std::size_t i = 0; i < out.size(); ++i) {
                out[i] = static_cast<float>(static_cast<std::int16_t>(get_u16(s, body + 2 * i))) /
                         32767.0f;
            }
            return out;
        }
        at = body + len + (len & 1);
    }
    throw Error(path.string() + ": no data chunk");
}

Stream read_stream(const fs::path& sidecar) {
    const nlohmann::json j = nlohmann::json::parse(read_bytes(sidecar));
    const fs::path dir = sidecar.parent_path();
    const auto shape = j.at("shape").get<std::vector<std::size_t>>();
    require(shape.size() == 4, sidecar.string() + ": shape must be [T,C,H,W]");
    Stream s;
    s.video = nn::Tensor<float>(shape, read_f32(dir / j.at("frames").get<std::string>(),
                                                nn::shape_size(shape), "frames"));
    const fs::path audio = dir / j.at("audio").get<std::string>();
    if (audio.extension() == ".wav") {
        s.audio = read_wav(audio, kSampleRate);
    } else {
        require(fs::exists(audio), "audio: missing file " + audio.string());
        const auto bytes = fs::file_size(audio);
        require(bytes % sizeof(float) == 0, "audio: size not a multiple of 4 bytes");
        s.audio = read_f32(audio, bytes / sizeof(float), "audio");
    }
    return s;
}

void write_stream(const fs::path& sidecar, const Stream& s) {
    require(s.video.rank() == 4, "stream video must be [T,C,H,W]");
    const std::string stem = sidecar.stem().string();
    const fs::path dir = sidecar.parent_path();
    write_f32(dir / (stem + ".frames.f32"), s.video.data());
    write_wav(dir / (stem + ".wav"), s.audio, kSampleRate);
    nlohmann::json j{{"frames", stem + ".frames.f32"},
                     {"shape", s.video.shape()},
                     {"audio", stem + ".wav"}};
    write_bytes(sidecar, j.dump(2) + "\n");
}

} // namespace fad::io
