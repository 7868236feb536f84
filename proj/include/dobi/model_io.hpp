#ifndef DOBI_MODEL_IO_HPP
#define DOBI_MODEL_IO_HPP

#include <optional>
#include <string>
#include <vector>

#include "dobi/model.hpp"
#include "dobi/pack.hpp"

namespace dobi {

// One-file model container: 4-byte magic "DOBI", version byte, u64
// little-endian manifest length, JSON manifest, then the binary payload
// the manifest's offsets point into. Dense weights are row-major f32
// little-endian; packed sections follow the layout in docs/format.md.
// The manifest records an FNV-1a 64 digest of the payload; load refuses
// mismatches, unknown versions, truncated files and bad magic with typed
// io_error kinds.
inline constexpr char kContainerMagic[4] = {'D', 'O', 'B', 'I'};
inline constexpr std::uint8_t kContainerVersion = 1;

struct StoredModel {
  ToyModel model;
  std::optional<IntAllocation> alloc;
  // Aligned with model.layers; engaged where a packed section exists.
  std::vector<std::optional<PackedWeight>> packed;

  FactoredModel factored() const;  // from the packed sections
};

void save_model(const std::string& path, const StoredModel& stored);
StoredModel load_model(const std::string& path);

// Payload digest used by the container (FNV-1a 64).
std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t len);

}  // namespace dobi

#endif
