#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "dobi/kernels.hpp"
#include "dobi/model_io.hpp"
#include "dobi/weight_update.hpp"

using namespace dobi;
using idx = dobi::index;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("dense container round-trips bitwise") {
  const std::string path = temp_path("dobi_test_dense.dobi");
  StoredModel stored;
  stored.model = make_teacher_student_mlp(7);
  save_model(path, stored);

  const StoredModel back = load_model(path);
  REQUIRE(back.model.layers.size() == stored.model.layers.size());
  for (std::size_t i = 0; i < back.model.layers.size(); ++i) {
    const auto& a = stored.model.layers[i];
    const auto& b = back.model.layers[i];
    CHECK(a.name == b.name);
    CHECK(a.act == b.act);
    CHECK(a.compressible == b.compressible);
    REQUIRE(a.weight.size() == b.weight.size());
    for (idx j = 0; j < a.weight.size(); ++j)
      CHECK(a.weight.data()[static_cast<std::size_t>(j)] ==
            b.weight.data()[static_cast<std::size_t>(j)]);
  }

  // Saving the loaded model reproduces the file byte for byte.
  const std::string path2 = temp_path("dobi_test_dense2.dobi");
  save_model(path2, back);
  CHECK(slurp(path) == slurp(path2));
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("container carries allocation and packed sections") {
  const std::string path = temp_path("dobi_test_packed.dobi");
  StoredModel stored;
  stored.model = make_char_lm(3);
  IntAllocation alloc = full_rank_allocation(stored.model);
  for (auto& e : alloc.entries) e.k = std::min(e.m, e.n) / 2;
  stored.alloc = alloc;
  stored.packed.assign(stored.model.layers.size(), std::nullopt);
  std::size_t slot = 0;
  for (std::size_t i = 0; i < stored.model.layers.size(); ++i) {
    const auto& l = stored.model.layers[i];
    if (!l.compressible) continue;
    stored.packed[i] = pack(UpdatedWeight{l.weight, alloc.entries[slot].k});
    ++slot;
  }
  save_model(path, stored);

  const StoredModel back = load_model(path);
  REQUIRE(back.alloc.has_value());
  CHECK(back.alloc->entries.size() == alloc.entries.size());
  for (std::size_t i = 0; i < alloc.entries.size(); ++i)
    CHECK(back.alloc->entries[i].k == alloc.entries[i].k);

  for (std::size_t i = 0; i < stored.packed.size(); ++i) {
    REQUIRE(stored.packed[i].has_value() == back.packed[i].has_value());
    if (!stored.packed[i]) continue;
    CHECK(stored.packed[i]->slots == back.packed[i]->slots);
    CHECK(stored.packed[i]->u_scales == back.packed[i]->u_scales);
    CHECK(stored.packed[i]->v_scales == back.packed[i]->v_scales);
    CHECK(stored.packed[i]->layout_tag == back.packed[i]->layout_tag);
  }

  // Unpacked factors agree before and after the round trip.
  const FactoredModel fm1 = stored.factored();
  const FactoredModel fm2 = back.factored();
  for (std::size_t i = 0; i < fm1.factors.size(); ++i) {
    if (!fm1.factors[i]) continue;
    CHECK(frob_dist(fm1.factors[i]->w1, fm2.factors[i]->w1) == 0.0);
    CHECK(frob_dist(fm1.factors[i]->w2, fm2.factors[i]->w2) == 0.0);
  }
  std::remove(path.c_str());
}

TEST_CASE("load rejects corrupted containers with typed errors") {
  const std::string path = temp_path("dobi_test_corrupt.dobi");
  StoredModel stored;
  stored.model = make_teacher_student_mlp(5);
  save_model(path, stored);
  const std::vector<char> raw = slurp(path);

  SUBCASE("bad magic") {
    std::vector<char> bad = raw;
    bad[0] = 'X';
    spit(path, bad);
    try {
      load_model(path);
      FAIL("expected io_error");
    } catch (const io_error& e) {
      CHECK(e.what_kind() == io_error::kind::bad_magic);
    }
  }
  SUBCASE("unknown version") {
    std::vector<char> bad = raw;
    bad[4] = 42;
    spit(path, bad);
    try {
      load_model(path);
      FAIL("expected io_error");
    } catch (const io_error& e) {
      CHECK(e.what_kind() == io_error::kind::bad_version);
    }
  }
  SUBCASE("truncated payload") {
    std::vector<char> bad(raw.begin(), raw.end() - 200);
    spit(path, bad);
    try {
      load_model(path);
      FAIL("expected io_error");
    } catch (const io_error& e) {
      const bool ok = e.what_kind() == io_error::kind::truncated ||
                      e.what_kind() == io_error::kind::checksum_mismatch;
      CHECK(ok);
    }
  }
  SUBCASE("payload bit flip fails the checksum") {
    std::vector<char> bad = raw;
    bad[bad.size() - 3] = static_cast<char>(bad[bad.size() - 3] ^ 0x40);
    spit(path, bad);
    try {
      load_model(path);
      FAIL("expected io_error");
    } catch (const io_error& e) {
      CHECK(e.what_kind() == io_error::kind::checksum_mismatch);
    }
  }
  std::remove(path.c_str());
}

TEST_CASE("missing file reports open_failed") {
  try {
    load_model(temp_path("definitely_not_there.dobi"));
    FAIL("expected io_error");
  } catch (const io_error& e) {
    CHECK(e.what_kind() == io_error::kind::open_failed);
  }
}
