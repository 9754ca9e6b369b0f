#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sport/error.hpp"
#include "sport/nn.hpp"

namespace sport::nn {

using nlohmann::json;

namespace {

constexpr int kCheckpointVersion = 1;
constexpr std::size_t kMagicSize = sizeof(kCheckpointMagic) - 1;

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw FormatError("checkpoint truncated in header length");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_floats(std::ostream& out, const Mat& m, Eigen::Index rows, Eigen::Index cols) {
  std::string buf(static_cast<std::size_t>(rows * cols) * 4, '\0');
  for (Eigen::Index i = 0; i < rows * cols; ++i) {
    const double x = m.size() == 0 ? 0.0 : m.data()[i];
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(x));
    for (int k = 0; k < 4; ++k) buf[static_cast<std::size_t>(4 * i + k)] = static_cast<char>(bits >> (8 * k));
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

Mat get_floats(std::istream& in, Eigen::Index rows, Eigen::Index cols, const std::string& name) {
  std::string buf(static_cast<std::size_t>(rows * cols) * 4, '\0');
  if (!in.read(buf.data(), static_cast<std::streamsize>(buf.size())))
    throw FormatError("checkpoint truncated in parameter '" + name + "'");
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows * cols; ++i) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[static_cast<std::size_t>(4 * i + k)])) << (8 * k);
    m.data()[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return m;
}

}  // namespace

void write_checkpoint(std::ostream& out, const ParameterStore& store, const json& meta) {
  json params = json::array();
  for (const auto& [name, p] : store.items()) params.push_back({{"name", name}, {"shape", {p.value.rows(), p.value.cols()}}});
  const json header = {{"format", "SPCK1"}, {"version", kCheckpointVersion}, {"step", store.step},
                       {"parameters", params}, {"meta", meta}, {"dtype", "float32"},
                       {"blobs", {"value", "adam_m", "adam_v"}}};
  const std::string text = header.dump();
  out.write(kCheckpointMagic, static_cast<std::streamsize>(kMagicSize));
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, p] : store.items()) {
    put_floats(out, p.value, p.value.rows(), p.value.cols());
    put_floats(out, p.m, p.value.rows(), p.value.cols());
    put_floats(out, p.v, p.value.rows(), p.value.cols());
  }
}

void save_checkpoint(const std::string& path, const ParameterStore& store, const json& meta) {
  std::ostringstream buf;
  write_checkpoint(buf, store, meta);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  const std::string bytes = buf.str();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

json read_checkpoint(std::istream& in, ParameterStore& store) {
  char magic[kMagicSize];
  if (!in.read(magic, static_cast<std::streamsize>(kMagicSize)) || std::memcmp(magic, kCheckpointMagic, kMagicSize) != 0)
    throw FormatError("not an SPCK1 checkpoint");
  const std::uint64_t len = get_u64(in);
  if (len > (1u << 30)) throw FormatError("checkpoint header too large");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("checkpoint truncated in header");
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header is not JSON: ") + e.what());
  }
  try {
    if (header.at("version").get<int>() != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
    const bool fill = store.items().empty();
    if (!fill && header.at("parameters").size() != store.items().size())
      throw FormatError("checkpoint parameter count does not match the model");
    for (const auto& entry : header.at("parameters")) {
      const auto name = entry.at("name").get<std::string>();
      const auto rows = entry.at("shape").at(0).get<Eigen::Index>();
      const auto cols = entry.at("shape").at(1).get<Eigen::Index>();
      if (rows < 0 || cols < 0) throw FormatError("negative shape for '" + name + "'");
      Mat value = get_floats(in, rows, cols, name);
      Mat m = get_floats(in, rows, cols, name);
      Mat v = get_floats(in, rows, cols, name);
      Parameter* p = nullptr;
      if (fill) {
        p = &store.add(name, Mat{});
      } else {
        if (!store.contains(name)) throw FormatError("checkpoint parameter '" + name + "' is not in the model");
        p = &store.at(name);
        if (p->value.rows() != rows || p->value.cols() != cols)
          throw FormatError("shape mismatch for parameter '" + name + "'");
      }
      p->value = std::move(value);
      p->m = std::move(m);
      p->v = std::move(v);
      p->grad.resize(0, 0);
    }
    store.step = header.at("step").get<std::int64_t>();
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint");
    return header.at("meta");
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what());
  }
}

json load_checkpoint(const std::string& path, ParameterStore& store) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in, store);
}

}  // namespace sport::nn
