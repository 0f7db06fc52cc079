#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "stm/container.hpp"
#include "stm/error.hpp"
#include "stm/fixture.hpp"
#include "stm/moe.hpp"
#include "stm/quant.hpp"
#include "stm/rng.hpp"

using namespace stm;

namespace {

std::vector<uint8_t> tiny_bytes(uint64_t seed = 7) {
  return generate_fixture(preset("tiny"), seed);
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("open/write round trip reproduces config, index and bytes") {
  auto bytes = tiny_bytes();
  Container c = Container::from_bytes(bytes);
  CHECK(config_to_text(c.config()) == config_to_text(preset("tiny")));

  // extract every tensor and re-serialize: identical bytes
  std::vector<NamedTensor> tensors;
  for (const TensorRecord& rec : c.index().tensors) {
    auto span = c.tensor_bytes(rec);
    tensors.push_back({rec.name, rec.dtype, rec.rows, rec.cols,
                       std::vector<uint8_t>(span.begin(), span.end())});
  }
  auto bytes2 = write_container(c.config(), std::move(tensors));
  CHECK(bytes == bytes2);
}

TEST_CASE("payload corruption is detected on open") {
  auto bytes = tiny_bytes();
  ContainerIndex idx = parse_container(bytes.data(), bytes.size());
  bytes[idx.payload_offset + idx.payload_length / 2] ^= 0x01;
  CHECK_THROWS_WITH_AS(Container::from_bytes(bytes), "payload checksum mismatch",
                       ModelError);
}

TEST_CASE("bad magic is rejected") {
  auto bytes = tiny_bytes();
  bytes[0] = 'X';
  CHECK_THROWS_AS(Container::from_bytes(bytes), ModelError);
}

TEST_CASE("tiny index carries 48 expert tensors") {
  Container c = Container::from_bytes(tiny_bytes());
  int experts = 0;
  for (const TensorRecord& rec : c.index().tensors)
    experts += is_expert_tensor_name(rec.name);
  CHECK(experts == 2 * 8 * 3);
  CHECK(c.index().tensors.size() == expected_tensor_names(c.config()).size());
}

TEST_CASE("expert segments start 4096-aligned and do not overlap") {
  Container c = Container::from_bytes(tiny_bytes());
  std::vector<std::pair<uint64_t, uint64_t>> ranges;
  for (const TensorRecord& rec : c.index().tensors) {
    if (!is_expert_tensor_name(rec.name)) continue;
    CHECK(rec.byte_offset % 4096 == 0);
    CHECK((c.index().payload_offset + rec.byte_offset) % 4096 == 0);
    ranges.push_back({rec.byte_offset, rec.byte_offset + rec.byte_length});
  }
  std::sort(ranges.begin(), ranges.end());
  for (size_t i = 1; i < ranges.size(); i++) CHECK(ranges[i - 1].second <= ranges[i].first);
}

TEST_CASE("missing and duplicate tensors are write errors") {
  auto bytes = tiny_bytes();
  Container c = Container::from_bytes(bytes);
  std::vector<NamedTensor> tensors;
  for (const TensorRecord& rec : c.index().tensors) {
    auto span = c.tensor_bytes(rec);
    tensors.push_back({rec.name, rec.dtype, rec.rows, rec.cols,
                       std::vector<uint8_t>(span.begin(), span.end())});
  }
  auto missing = tensors;
  missing.pop_back();
  CHECK_THROWS_AS(write_container(c.config(), std::move(missing)), ModelError);

  auto dup = tensors;
  dup.push_back(dup.front());
  CHECK_THROWS_AS(write_container(c.config(), std::move(dup)), ModelError);
}

TEST_CASE("segment fetch equals the in-memory slice") {
  oracle::TempFile f;
  auto bytes = tiny_bytes();
  write_file(f.path, bytes);
  Container mem = Container::from_bytes(bytes);
  SegmentReader reader(f.path);

  ModelConfig cfg = mem.config();
  for (auto [layer, expert] : {std::pair{0, 0}, {0, 7}, {1, 3}, {1, 0}}) {
    ExpertSegment seg = reader.fetch(layer, expert);
    for (const TensorRecord* rec : {&seg.gate, &seg.up, &seg.down}) {
      auto fetched = seg.tensor_bytes(*rec);
      auto sliced = mem.tensor_bytes(rec->name);
      REQUIRE(fetched.size() == sliced.size());
      CHECK(std::equal(fetched.begin(), fetched.end(), sliced.begin()));
    }
  }
  (void)cfg;
}

TEST_CASE("random fetches byte-match the reference container") {
  oracle::TempFile f;
  auto bytes = tiny_bytes(12);
  write_file(f.path, bytes);
  Container mem = Container::from_bytes(bytes);
  SegmentReader reader(f.path);
  CounterRng rng(99, "fetch.random");
  for (int i = 0; i < 50; i++) {
    int layer = static_cast<int>(rng.next_u64() % 2);
    int expert = static_cast<int>(rng.next_u64() % 8);
    ExpertWeights w = decode_expert_weights(reader.fetch(layer, expert));
    CHECK(w.gate.data == mem.matrix(expert_tensor_name(layer, expert, "gate")).data);
    CHECK(w.down.data == mem.matrix(expert_tensor_name(layer, expert, "down")).data);
  }
}

TEST_CASE("fetch reads exactly the padded segment bytes") {
  oracle::TempFile f;
  write_file(f.path, tiny_bytes());
  SegmentReader reader(f.path);
  const ContainerIndex& idx = reader.index();

  uint64_t expected = 0;
  for (const char* part : {"gate", "up", "down"}) {
    const TensorRecord& rec = idx.at(expert_tensor_name(0, 3, part));
    expected += round_up(rec.byte_length, kExpertAlign);
  }
  uint64_t before = reader.bytes_read();
  reader.fetch(0, 3);
  CHECK(reader.bytes_read() - before == expected);
  CHECK(SegmentReader::segment_bytes(idx, 0, 3) == expected);

  // byte ranges of different experts are disjoint
  ExpertSegment a = reader.fetch(0, 0);
  ExpertSegment b = reader.fetch(0, 1);
  uint64_t a_end = a.range_offset + a.bytes.size();
  uint64_t b_end = b.range_offset + b.bytes.size();
  CHECK((a_end <= b.range_offset || b_end <= a.range_offset));
}

TEST_CASE("out-of-range expert indices fail") {
  oracle::TempFile f;
  write_file(f.path, tiny_bytes());
  SegmentReader reader(f.path);
  CHECK_THROWS_AS(reader.fetch(0, 8), ModelError);
  CHECK_THROWS_AS(reader.fetch(2, 0), ModelError);
}

TEST_CASE("config text survives a parse round trip") {
  for (const std::string& name : preset_names()) {
    ModelConfig c = preset(name);
    ModelConfig back = config_from_text(config_to_text(c));
    CHECK(config_to_text(back) == config_to_text(c));
    CHECK(back.rope_base == c.rope_base);
    CHECK(back.norm_epsilon == c.norm_epsilon);
  }
  CHECK_THROWS_AS(config_from_text("num_layers"), ParseError);
  CHECK_THROWS_AS(config_from_text("bogus_key=3\n"), ParseError);
}
