#include "dobi/model_io.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace dobi {

namespace {

using bytes = std::vector<std::uint8_t>;

void put_u16(bytes& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v & 0xFF));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(bytes& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_u64(bytes& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_f32(bytes& b, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(b, u);
}

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t len) : p_(p), len_(len) {}

  std::uint16_t u16() { return static_cast<std::uint16_t>(u8() | (u8() << 8)); }

  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }

  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }

  float f32() {
    const std::uint32_t u = u32();
    float f;
    std::memcpy(&f, &u, 4);
    return f;
  }

  std::string str(std::size_t n) {
    require(n);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), n);
    pos_ += n;
    return s;
  }

  std::uint8_t u8() {
    require(1);
    return p_[pos_++];
  }

  std::size_t pos() const { return pos_; }

 private:
  void require(std::size_t n) {
    if (pos_ + n > len_) throw io_error(io_error::kind::truncated, "container section truncated");
  }

  const std::uint8_t* p_;
  std::size_t len_;
  std::size_t pos_ = 0;
};

bytes encode_dense_f32(const DenseMatrix& w) {
  bytes out;
  out.reserve(static_cast<std::size_t>(w.size()) * 4);
  for (index i = 0; i < w.rows(); ++i)
    for (index j = 0; j < w.cols(); ++j) put_f32(out, static_cast<float>(w(i, j)));
  return out;
}

DenseMatrix decode_dense_f32(Reader& r, index rows, index cols) {
  DenseMatrix w(rows, cols);
  for (index i = 0; i < rows; ++i)
    for (index j = 0; j < cols; ++j) w(i, j) = static_cast<double>(r.f32());
  return w;
}

// Packed section: u32 name_len, name, u32 m, u32 n, u32 k, u8 layout_tag,
// scale table (k f32 u-scales then k f32 v-scales), u16 slots row-major.
bytes encode_packed(const std::string& name, const PackedWeight& p) {
  bytes out;
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  put_u32(out, static_cast<std::uint32_t>(p.m));
  put_u32(out, static_cast<std::uint32_t>(p.n));
  put_u32(out, static_cast<std::uint32_t>(p.k));
  out.push_back(p.layout_tag);
  for (float s : p.u_scales) put_f32(out, s);
  for (float s : p.v_scales) put_f32(out, s);
  for (std::uint16_t s : p.slots) put_u16(out, s);
  return out;
}

PackedWeight decode_packed(Reader& r, const std::string& expected_name) {
  const std::uint32_t name_len = r.u32();
  const std::string name = r.str(name_len);
  if (name != expected_name)
    throw io_error(io_error::kind::corrupt, "packed section name mismatch: " + name);
  PackedWeight p;
  p.m = static_cast<index>(r.u32());
  p.n = static_cast<index>(r.u32());
  p.k = static_cast<index>(r.u32());
  p.layout_tag = r.u8();
  if (p.m < 0 || p.n < 0 || p.k < 0 || p.k > std::min(p.m, p.n))
    throw io_error(io_error::kind::corrupt, "packed section has invalid dimensions");
  p.u_scales.resize(static_cast<std::size_t>(p.k));
  p.v_scales.resize(static_cast<std::size_t>(p.k));
  for (auto& s : p.u_scales) s = r.f32();
  for (auto& s : p.v_scales) s = r.f32();
  p.slots.resize(static_cast<std::size_t>(std::max(p.m, p.n) * p.k));
  for (auto& s : p.slots) s = r.u16();
  return p;
}

}  // namespace

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t len) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

FactoredModel StoredModel::factored() const {
  FactoredModel fm;
  fm.base = model;
  fm.factors.assign(model.layers.size(), std::nullopt);
  for (std::size_t i = 0; i < packed.size() && i < model.layers.size(); ++i) {
    if (!packed[i]) continue;
    auto [w1, w2] = unpack(*packed[i]);
    fm.factors[i] = FactoredLayer{std::move(w1), std::move(w2)};
  }
  return fm;
}

void save_model(const std::string& path, const StoredModel& stored) {
  stored.model.validate();
  if (!stored.packed.empty() && stored.packed.size() != stored.model.layers.size())
    throw shape_error("save_model: packed list misaligned with layers");

  bytes payload;
  nlohmann::ordered_json manifest;
  manifest["format_version"] = kContainerVersion;
  manifest["input_dim"] = stored.model.input_dim;
  manifest["output_dim"] = stored.model.output_dim;
  auto layers = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < stored.model.layers.size(); ++i) {
    const auto& l = stored.model.layers[i];
    nlohmann::ordered_json jl;
    jl["name"] = l.name;
    jl["m"] = l.weight.rows();
    jl["n"] = l.weight.cols();
    jl["activation"] = activation_name(l.act);
    jl["compressible"] = l.compressible;

    auto sections = nlohmann::ordered_json::array();
    {
      const bytes sec = encode_dense_f32(l.weight);
      nlohmann::ordered_json js;
      js["type"] = "dense_f32";
      js["offset"] = payload.size();
      js["nbytes"] = sec.size();
      payload.insert(payload.end(), sec.begin(), sec.end());
      sections.push_back(std::move(js));
    }
    if (i < stored.packed.size() && stored.packed[i]) {
      const bytes sec = encode_packed(l.name, *stored.packed[i]);
      nlohmann::ordered_json js;
      js["type"] = "packed";
      js["offset"] = payload.size();
      js["nbytes"] = sec.size();
      payload.insert(payload.end(), sec.begin(), sec.end());
      sections.push_back(std::move(js));
    }
    jl["sections"] = std::move(sections);
    layers.push_back(std::move(jl));
  }
  manifest["layers"] = std::move(layers);
  if (stored.alloc) manifest["alloc"] = nlohmann::ordered_json::parse(allocation_to_json(*stored.alloc));
  {
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(payload.data(), payload.size())));
    manifest["payload_fnv1a64"] = std::string(hex);
  }

  const std::string mstr = manifest.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error(io_error::kind::open_failed, "save_model: cannot open " + path);
  out.write(kContainerMagic, 4);
  out.put(static_cast<char>(kContainerVersion));
  bytes len;
  put_u64(len, mstr.size());
  out.write(reinterpret_cast<const char*>(len.data()), static_cast<std::streamsize>(len.size()));
  out.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!out) throw io_error(io_error::kind::open_failed, "save_model: write failed for " + path);
}

StoredModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error(io_error::kind::open_failed, "load_model: cannot open " + path);
  bytes raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (raw.size() < 13) throw io_error(io_error::kind::truncated, "load_model: file too short");
  if (std::memcmp(raw.data(), kContainerMagic, 4) != 0)
    throw io_error(io_error::kind::bad_magic, "load_model: bad magic bytes");
  if (raw[4] != kContainerVersion)
    throw io_error(io_error::kind::bad_version,
                   "load_model: unsupported container version " + std::to_string(raw[4]));

  Reader head(raw.data() + 5, raw.size() - 5);
  const std::uint64_t mlen = head.u64();
  if (13 + mlen > raw.size()) throw io_error(io_error::kind::truncated, "load_model: manifest truncated");
  const std::string mstr(reinterpret_cast<const char*>(raw.data() + 13), mlen);
  nlohmann::ordered_json manifest;
  try {
    manifest = nlohmann::ordered_json::parse(mstr);
  } catch (const nlohmann::json::exception& e) {
    throw io_error(io_error::kind::corrupt, std::string("load_model: manifest parse: ") + e.what());
  }

  const std::uint8_t* payload = raw.data() + 13 + mlen;
  const std::size_t payload_len = raw.size() - 13 - mlen;

  try {
    if (manifest.at("format_version").get<int>() != kContainerVersion)
      throw io_error(io_error::kind::bad_version, "load_model: manifest version mismatch");

    {
      char hex[17];
      std::snprintf(hex, sizeof(hex), "%016llx",
                    static_cast<unsigned long long>(fnv1a64(payload, payload_len)));
      if (manifest.at("payload_fnv1a64").get<std::string>() != hex)
        throw io_error(io_error::kind::checksum_mismatch, "load_model: payload checksum mismatch");
    }

    StoredModel stored;
    stored.model.input_dim = manifest.at("input_dim").get<index>();
    stored.model.output_dim = manifest.at("output_dim").get<index>();
    for (const auto& jl : manifest.at("layers")) {
      LayerSpec l;
      l.name = jl.at("name").get<std::string>();
      const index m = jl.at("m").get<index>();
      const index n = jl.at("n").get<index>();
      l.act = activation_from_name(jl.at("activation").get<std::string>());
      l.compressible = jl.at("compressible").get<bool>();

      std::optional<PackedWeight> packed;
      for (const auto& js : jl.at("sections")) {
        const auto off = js.at("offset").get<std::size_t>();
        const auto nbytes = js.at("nbytes").get<std::size_t>();
        if (off + nbytes > payload_len)
          throw io_error(io_error::kind::truncated, "load_model: section exceeds payload");
        Reader r(payload + off, nbytes);
        const std::string type = js.at("type").get<std::string>();
        if (type == "dense_f32") {
          if (nbytes != static_cast<std::size_t>(m * n) * 4)
            throw io_error(io_error::kind::corrupt, "load_model: dense section size mismatch");
          l.weight = decode_dense_f32(r, m, n);
        } else if (type == "packed") {
          packed = decode_packed(r, l.name);
        } else {
          throw io_error(io_error::kind::corrupt, "load_model: unknown section type " + type);
        }
      }
      if (l.weight.empty())
        throw io_error(io_error::kind::corrupt, "load_model: layer missing dense section");
      stored.model.layers.push_back(std::move(l));
      stored.packed.push_back(std::move(packed));
    }
    if (manifest.contains("alloc"))
      stored.alloc = int_allocation_from_json(manifest.at("alloc").dump());
    stored.model.validate();
    return stored;
  } catch (const nlohmann::json::exception& e) {
    throw io_error(io_error::kind::corrupt, std::string("load_model: manifest field: ") + e.what());
  }
}

}  // namespace dobi
