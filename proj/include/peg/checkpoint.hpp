#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "peg/encoder.hpp"
#include "peg/error.hpp"
#include "peg/eval.hpp"
#include "peg/tokenizer.hpp"

namespace peg {

// Checkpoint text layout (version 1), one item per line:
//
//   peg-checkpoint 1
//   vocab_size <V>
//   dim <d>
//   positions <P>
//   vocab            followed by V lines, one token each, in id order
//   token_table      followed by V lines of d hex floats
//   projection       followed by d lines of d hex floats
//   position_table   followed by P lines of d hex floats
//   output           followed by d lines of V hex floats
//   end
//
// Matrices are row-major; values use C99 hexadecimal floating point so that a
// save/load cycle is exact and repeated saves are byte-identical.
struct Checkpoint {
  Vocabulary vocab;
  ToyEncoder encoder;
  MaeDecoder decoder;
};

inline constexpr std::string_view kCheckpointMagic = "peg-checkpoint";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void append_hex(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::hex);
  out.append(buf, res.ptr);
}

inline void write_matrix(std::ostream& out, std::string_view name, const Matrix& m) {
  out << name << '\n';
  std::string line;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    line.clear();
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) line.push_back(' ');
      append_hex(line, m(i, j));
    }
    out << line << '\n';
  }
}

class LineReader {
 public:
  LineReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  std::string next() {
    std::string line;
    if (!std::getline(in_, line)) fail("unexpected end of file");
    ++line_no_;
    return line;
  }

  void expect(std::string_view keyword) {
    if (next() != keyword) fail("expected '" + std::string(keyword) + "'");
  }

  std::size_t keyed_count(std::string_view key) {
    const std::string line = next();
    std::istringstream ss(line);
    std::string k;
    long long v = -1;
    if (!(ss >> k >> v) || k != key || v < 0) fail("expected '" + std::string(key) + " <count>'");
    return static_cast<std::size_t>(v);
  }

  void read_matrix(std::string_view name, Matrix& m) {
    expect(name);
    for (std::size_t i = 0; i < m.rows(); ++i) {
      const std::string line = next();
      const char* p = line.data();
      const char* end = line.data() + line.size();
      for (std::size_t j = 0; j < m.cols(); ++j) {
        while (p < end && *p == ' ') ++p;
        double v = 0.0;
        auto res = std::from_chars(p, end, v, std::chars_format::hex);
        if (res.ec != std::errc()) fail("bad value in " + std::string(name));
        m(i, j) = v;
        p = res.ptr;
      }
      while (p < end && *p == ' ') ++p;
      if (p != end) fail("trailing data in " + std::string(name));
    }
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ValidationError(source_ + ":" + std::to_string(line_no_) + ": " + what);
  }

 private:
  std::istream& in_;
  std::string source_;
  std::size_t line_no_ = 0;
};

inline std::string version_line() {
  return std::string(kCheckpointMagic) + " " + std::to_string(kCheckpointVersion);
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  const auto& enc = ckpt.encoder;
  const auto& dec = ckpt.decoder;
  if (ckpt.vocab.size() != enc.vocab_size()) throw InvariantError("checkpoint: vocabulary/encoder size mismatch");
  if (dec.vocab_size() != enc.vocab_size() || dec.dim() != enc.dim()) {
    throw InvariantError("checkpoint: encoder/decoder shape mismatch");
  }
  out << detail::version_line() << '\n';
  out << "vocab_size " << enc.vocab_size() << '\n';
  out << "dim " << enc.dim() << '\n';
  out << "positions " << dec.max_positions() << '\n';
  out << "vocab\n";
  for (const auto& t : ckpt.vocab.tokens()) out << t << '\n';
  detail::write_matrix(out, "token_table", enc.token_table());
  detail::write_matrix(out, "projection", enc.projection());
  detail::write_matrix(out, "position_table", dec.position_table());
  detail::write_matrix(out, "output", dec.output());
  out << "end\n";
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_checkpoint(out, ckpt);
  if (!out) throw IoError("write failed on '" + path.string() + "'");
}

inline Checkpoint read_checkpoint(std::istream& in, const std::string& source = "<checkpoint>") {
  detail::LineReader r(in, source);
  const std::string header = r.next();
  if (header.rfind(kCheckpointMagic, 0) != 0) r.fail("not a checkpoint file");
  if (header != detail::version_line()) r.fail("unsupported checkpoint version '" + header + "'");
  const std::size_t v = r.keyed_count("vocab_size");
  const std::size_t d = r.keyed_count("dim");
  const std::size_t p = r.keyed_count("positions");
  if (v < 3 || d < 1) r.fail("invalid dimensions");
  r.expect("vocab");
  std::vector<std::string> tokens;
  tokens.reserve(v);
  for (std::size_t i = 0; i < v; ++i) tokens.push_back(r.next());
  Checkpoint ckpt{Vocabulary::from_tokens(std::move(tokens)), ToyEncoder(v, d), MaeDecoder(p, d, v)};
  r.read_matrix("token_table", ckpt.encoder.token_table());
  r.read_matrix("projection", ckpt.encoder.projection());
  r.read_matrix("position_table", ckpt.decoder.position_table());
  r.read_matrix("output", ckpt.decoder.output());
  r.expect("end");
  return ckpt;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(in, path.string());
}

// Embedding block layout (version 1):
//
//   "peg-embeddings 1\n"
//   uint64 count, uint64 dim, uint32 element width (8)     little-endian
//   count * dim float64 values, row-major                    little-endian
//   count ids, each as uint32 byte length + UTF-8 bytes
inline constexpr std::string_view kEmbeddingMagic = "peg-embeddings 1";

namespace detail {

template <typename T>
void put(std::ostream& out, T v) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& source) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw ValidationError(source + ": truncated embedding block");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

}  // namespace detail

inline void save_embeddings(const std::filesystem::path& path, const eval::Gallery& block) {
  require(block.ids.size() == block.embeddings.rows(), "save_embeddings: ids/rows mismatch");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << kEmbeddingMagic << '\n';
  detail::put<std::uint64_t>(out, block.embeddings.rows());
  detail::put<std::uint64_t>(out, block.embeddings.cols());
  detail::put<std::uint32_t>(out, sizeof(double));
  for (double x : block.embeddings.values()) detail::put<double>(out, x);
  for (const auto& id : block.ids) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
  }
  if (!out) throw IoError("write failed on '" + path.string() + "'");
}

inline eval::Gallery load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open embeddings '" + path.string() + "'");
  const std::string source = path.string();
  std::string header;
  std::getline(in, header);
  if (header != kEmbeddingMagic) throw ValidationError(source + ": unsupported embedding header '" + header + "'");
  const auto count = detail::get<std::uint64_t>(in, source);
  const auto dim = detail::get<std::uint64_t>(in, source);
  const auto width = detail::get<std::uint32_t>(in, source);
  if (width != sizeof(double)) throw ValidationError(source + ": unsupported element width " + std::to_string(width));
  eval::Gallery block;
  block.embeddings = Matrix(count, dim);
  for (double& x : block.embeddings.values()) x = detail::get<double>(in, source);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = detail::get<std::uint32_t>(in, source);
    std::string id(len, '\0');
    if (!in.read(id.data(), len)) throw ValidationError(source + ": truncated id table");
    block.ids.push_back(std::move(id));
  }
  return block;
}

}  // namespace peg
