#include "chatgate/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "chatgate/error.hpp"

namespace chatgate {

namespace {

constexpr char kMagic[8] = {'C', 'H', 'G', 'T', 'B', 'I', 'N', '\0'};
constexpr std::uint32_t kContainerVersion = 1;

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw Error(ErrorKind::FormatError, "container truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  }
  pos += sizeof(T);
  return v;
}

}  // namespace

std::string config_hash(const nlohmann::json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a 64 offset basis
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

nlohmann::json artifact_meta(const nlohmann::json& config, std::uint64_t seed) {
  return {{"tool", kToolName}, {"version", kToolVersion}, {"config_hash", config_hash(config)}, {"seed", seed}};
}

std::size_t Tensor::numel() const {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor to_tensor(std::string name, const Eigen::MatrixXd& m) {
  Tensor t{std::move(name), {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, {}};
  t.data.reserve(t.numel());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.data.push_back(static_cast<float>(m(r, c)));
  }
  return t;
}

Tensor to_tensor(std::string name, const Eigen::VectorXd& v) {
  Tensor t{std::move(name), {static_cast<std::size_t>(v.size())}, {}};
  t.data.reserve(t.numel());
  for (Eigen::Index i = 0; i < v.size(); ++i) t.data.push_back(static_cast<float>(v[i]));
  return t;
}

Eigen::MatrixXd to_matrix(const Tensor& t) {
  if (t.shape.size() != 2) throw Error(ErrorKind::FormatError, "tensor '" + t.name + "' is not a matrix");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1]));
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = t.data[k++];
  }
  return m;
}

Eigen::VectorXd to_vector(const Tensor& t) {
  if (t.shape.size() != 1) throw Error(ErrorKind::FormatError, "tensor '" + t.name + "' is not a vector");
  Eigen::VectorXd v(static_cast<Eigen::Index>(t.shape[0]));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = t.data[static_cast<std::size_t>(i)];
  return v;
}

const Tensor& Container::tensor(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw Error(ErrorKind::FormatError, "container has no tensor '" + std::string(name) + "'");
}

std::string serialize_container(const Container& c) {
  nlohmann::json header = c.header;
  header["kind"] = c.kind;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& t : c.tensors) list.push_back({{"name", t.name}, {"shape", t.shape}});
  header["tensors"] = list;
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kContainerVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& t : c.tensors) {
    if (t.data.size() != t.numel()) throw Error(ErrorKind::ShapeError, "tensor '" + t.name + "' data/shape mismatch");
    for (float f : t.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

Container parse_container(std::string_view bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorKind::FormatError, "not a chatgate model file");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = get_le<std::uint32_t>(bytes, pos);
  if (version != kContainerVersion) throw Error(ErrorKind::FormatError, "unsupported container version " + std::to_string(version));
  const auto len = get_le<std::uint64_t>(bytes, pos);
  if (pos + len > bytes.size()) throw Error(ErrorKind::FormatError, "container header truncated");
  Container c;
  try {
    c.header = nlohmann::json::parse(bytes.substr(pos, len));
    c.kind = c.header.at("kind").get<std::string>();
    pos += len;
    for (const auto& entry : c.header.at("tensors")) {
      Tensor t{entry.at("name").get<std::string>(), entry.at("shape").get<std::vector<std::size_t>>(), {}};
      t.data.resize(t.numel());
      for (auto& f : t.data) f = std::bit_cast<float>(get_le<std::uint32_t>(bytes, pos));
      c.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("bad container header: ") + e.what());
  }
  c.header.erase("kind");
  c.header.erase("tensors");
  return c;
}

void write_container(const Container& c, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write '" + path.string() + "'");
  out << serialize_container(c);
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_container(buf.str());
}

}  // namespace chatgate
