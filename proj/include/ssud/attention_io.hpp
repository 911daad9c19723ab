#pragma once

// Attention fixture files: one UTF-8 JSON header line, '\n', then the raw
// little-endian row-major f32 tensor. Reading and re-writing a file
// reproduces it byte for byte (the header is emitted compactly with sorted
// keys).

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssud/attention.hpp"
#include "ssud/error.hpp"

namespace ssud {

struct AttentionFixture {
  std::string sentence_id;
  TokenAttention attention;
  SubwordAlignment alignment;

  std::size_t word_count() const { return alignment.word_count(); }
};

namespace detail {

inline std::uint32_t byteswap32(std::uint32_t v) {
  return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

inline void decode_f32_le(const char* bytes, std::size_t count, std::vector<float>& out) {
  out.resize(count);
  std::memcpy(out.data(), bytes, count * sizeof(float));
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& f : out) {
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      u = byteswap32(u);
      std::memcpy(&f, &u, 4);
    }
  }
}

inline std::string encode_f32_le(const std::vector<float>& values) {
  std::string out(values.size() * sizeof(float), '\0');
  std::memcpy(out.data(), values.data(), out.size());
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::uint32_t u;
      std::memcpy(&u, out.data() + 4 * i, 4);
      u = byteswap32(u);
      std::memcpy(out.data() + 4 * i, &u, 4);
    }
  }
  return out;
}

}  // namespace detail

inline nlohmann::json fixture_header(const AttentionFixture& f) {
  nlohmann::json spans = nlohmann::json::array();
  for (const auto& s : f.alignment.spans) spans.push_back({s.begin, s.end});
  const auto& d = f.attention.dims();
  return {{"sentence_id", f.sentence_id},
          {"token_strings", f.attention.token_strings()},
          {"spans", spans},
          {"special_tokens", f.alignment.special_tokens},
          {"dims", {d.layers, d.heads, d.tokens, d.tokens}},
          {"dtype", "f32"},
          {"layout", "row-major"},
          {"byte_order", "little-endian"}};
}

// Builds a fixture from a parsed header and a tensor payload. Shared by the
// file reader and the service client, whose responses carry the same fields.
inline AttentionFixture fixture_from_header(const nlohmann::json& header, std::vector<float> values) {
  AttentionFixture f;
  try {
    f.sentence_id = header.value("sentence_id", std::string());
    auto dims = header.at("dims").get<std::vector<std::size_t>>();
    if (dims.size() != 4 || dims[2] != dims[3]) throw ParseError("dims must be [L, H, T, T]");
    if (header.at("dtype").get<std::string>() != "f32") throw ParseError("unsupported dtype");
    if (header.contains("layout") && header.at("layout").get<std::string>() != "row-major")
      throw ParseError("unsupported layout");
    if (header.contains("byte_order") && header.at("byte_order").get<std::string>() != "little-endian")
      throw ParseError("unsupported byte order");
    for (const auto& s : header.at("spans")) {
      auto pair = s.get<std::vector<std::size_t>>();
      if (pair.size() != 2) throw ParseError("span must be [begin, end]");
      f.alignment.spans.push_back({pair[0], pair[1]});
    }
    f.alignment.special_tokens = header.at("special_tokens").get<std::vector<std::size_t>>();
    auto tokens = header.at("token_strings").get<std::vector<std::string>>();
    f.attention = TokenAttention({dims[0], dims[1], dims[2]}, std::move(values), std::move(tokens));
    f.alignment.validate(dims[2]);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("attention header: ") + e.what());
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(std::string("attention header: ") + e.what());
  }
  return f;
}

inline AttentionFixture read_attention_fixture(std::istream& in) {
  std::string header_line;
  if (!std::getline(in, header_line)) throw ParseError("attention fixture: missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("attention fixture: corrupt header: ") + e.what());
  }
  std::vector<std::size_t> dims;
  try {
    dims = header.at("dims").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("attention fixture: corrupt header: ") + e.what());
  }
  if (dims.size() != 4) throw ParseError("attention fixture: dims must be [L, H, T, T]");
  const std::size_t count = dims[0] * dims[1] * dims[2] * dims[3];
  std::string payload(count * sizeof(float), '\0');
  in.read(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (static_cast<std::size_t>(in.gcount()) != payload.size())
    throw ParseError("attention fixture: truncated tensor payload");
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError("attention fixture: trailing bytes after tensor");
  std::vector<float> values;
  detail::decode_f32_le(payload.data(), count, values);
  return fixture_from_header(header, std::move(values));
}

inline void write_attention_fixture(std::ostream& out, const AttentionFixture& f) {
  out << fixture_header(f).dump() << '\n';
  const auto bytes = detail::encode_f32_le(f.attention.values());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline AttentionFixture read_attention_fixture_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("attention fixture: cannot open " + path.string());
  try {
    return read_attention_fixture(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline void write_attention_fixture_file(const std::filesystem::path& path, const AttentionFixture& f) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("attention fixture: cannot write " + tmp);
    write_attention_fixture(out, f);
    if (!out) throw Error("attention fixture: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline WordMatrix word_level_matrix(const AttentionFixture& f, std::size_t layer,
                                    const HeadSelection& heads = HeadSelection::all()) {
  return word_level_matrix(f.attention, f.alignment, layer, heads);
}

}  // namespace ssud
