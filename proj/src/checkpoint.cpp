#include "crossdiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "crossdiff/errors.hpp"

namespace crossdiff {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

template <typename U>
U get(const std::string& in, std::size_t pos) {
  U v;
  std::memcpy(&v, in.data() + pos, sizeof(U));
  return v;
}

}  // namespace

void write_container(const std::string& path, const Container& container) {
  nlohmann::ordered_json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["role"] = container.role;
  manifest["meta"] = container.meta;
  manifest["arrays"] = nlohmann::ordered_json::array();
  std::string data;
  for (const auto& name : container.arrays.names()) {
    const auto& p = container.arrays.at(name);
    const std::size_t nbytes = p.size() * sizeof(float);
    manifest["arrays"].push_back(
        {{"name", name}, {"shape", p.shape}, {"dtype", "f32"}, {"offset", data.size()}, {"nbytes", nbytes}});
    data.append(reinterpret_cast<const char*>(p.value.data()), nbytes);
  }
  const std::string text = manifest.dump();

  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  out += data;

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("failed writing checkpoint: " + path);
}

Container read_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  constexpr std::size_t header = sizeof kCheckpointMagic + 4 + 8;
  if (in.size() < sizeof kCheckpointMagic) throw CorruptionError("checkpoint truncated in header");
  if (std::memcmp(in.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw FormatError("not a checkpoint file (bad magic): " + path);
  }
  if (in.size() < header) throw CorruptionError("checkpoint truncated in header");
  const auto version = get<std::uint32_t>(in, 8);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto mlen = get<std::uint64_t>(in, 12);
  if (mlen > in.size() - header) throw CorruptionError("checkpoint truncated in manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in.begin() + header, in.begin() + header + static_cast<std::ptrdiff_t>(mlen));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("unreadable checkpoint manifest: ") + e.what());
  }

  const std::size_t base = header + mlen;
  const std::size_t data_size = in.size() - base;
  Container c;
  try {
    if (manifest.at("format_version").get<std::uint32_t>() != version) {
      throw CorruptionError("manifest version disagrees with header");
    }
    c.role = manifest.at("role").get<std::string>();
    c.meta = manifest.at("meta");
    std::size_t expected = 0;
    for (const auto& a : manifest.at("arrays")) {
      const auto name = a.at("name").get<std::string>();
      const auto shape = a.at("shape").get<std::vector<int>>();
      const auto offset = a.at("offset").get<std::size_t>();
      const auto nbytes = a.at("nbytes").get<std::size_t>();
      if (a.at("dtype").get<std::string>() != "f32") throw CorruptionError("unsupported dtype for " + name);
      if (c.arrays.contains(name)) throw CorruptionError("duplicate array " + name);
      auto& p = c.arrays.add(name, shape);
      if (nbytes != p.size() * sizeof(float)) throw CorruptionError("shape/nbytes mismatch for " + name);
      if (offset != expected) throw CorruptionError("unexpected offset for " + name);
      if (offset + nbytes > data_size) throw CorruptionError("checkpoint truncated in array " + name);
      std::memcpy(p.value.data(), in.data() + base + offset, nbytes);
      expected += nbytes;
    }
    if (expected != data_size) throw CorruptionError("trailing bytes after checkpoint arrays");
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("malformed checkpoint manifest: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CorruptionError(std::string("malformed checkpoint array: ") + e.what());
  }
  return c;
}

}  // namespace crossdiff
