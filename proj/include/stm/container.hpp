#pragma once

// Model container: magic "STMW0001", little-endian, a UTF-8 key/value config
// block, a name-sorted tensor index with 64-bit payload offsets, and a
// trailing FNV-1a 64 checksum of the payload. Expert tensors live in
// 4096-aligned, 4096-padded slots so one expert is one contiguous,
// direct-I/O-friendly read; everything else is packed at 64-byte alignment.

#include <atomic>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stm/config.hpp"
#include "stm/kernels.hpp"

namespace stm {

inline constexpr char kContainerMagic[8] = {'S', 'T', 'M', 'W', '0', '0', '0', '1'};
inline constexpr uint32_t kContainerVersion = 1;
inline constexpr uint64_t kExpertAlign = 4096;

enum class DType : uint8_t { F32 = 0, Q4 = 1 };

struct TensorRecord {
  std::string name;
  DType dtype = DType::F32;
  uint64_t rows = 0;
  uint64_t cols = 0;
  uint64_t byte_offset = 0;  // relative to payload start
  uint64_t byte_length = 0;
};

struct ContainerIndex {
  uint32_t version = 0;
  ModelConfig config;
  std::vector<TensorRecord> tensors;  // sorted by name
  uint64_t payload_offset = 0;
  uint64_t payload_length = 0;
  uint64_t checksum = 0;

  const TensorRecord* find(std::string_view name) const;
  const TensorRecord& at(std::string_view name) const;  // ModelError if absent
};

struct NamedTensor {
  std::string name;
  DType dtype = DType::F32;
  uint64_t rows = 0;
  uint64_t cols = 0;
  std::vector<uint8_t> bytes;
};

bool is_expert_tensor_name(std::string_view name);
std::string expert_tensor_name(int layer, int expert, const char* part);

// Full tensor set one container must carry for a given architecture.
std::vector<std::string> expected_tensor_names(const ModelConfig& config);

std::string config_to_text(const ModelConfig& config);
ModelConfig config_from_text(std::string_view text);

uint64_t round_up(uint64_t v, uint64_t align);

// Serializes a complete tensor set. Throws ModelError on a missing or
// duplicate tensor and ShapeError on malformed tensor payloads.
std::vector<uint8_t> write_container(const ModelConfig& config,
                                     std::vector<NamedTensor> tensors);

// Parses the header and index and verifies the payload checksum.
ContainerIndex parse_container(const uint8_t* data, size_t len);

// Fully in-memory container.
class Container {
 public:
  static Container from_bytes(std::vector<uint8_t> bytes);
  static Container from_file(const std::string& path);

  const ContainerIndex& index() const { return index_; }
  const ModelConfig& config() const { return index_.config; }
  std::span<const uint8_t> tensor_bytes(const TensorRecord& rec) const;
  std::span<const uint8_t> tensor_bytes(std::string_view name) const;
  // Tensor as f32 (Q4 tensors are dequantized).
  Matrix matrix(std::string_view name) const;
  const std::vector<uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<uint8_t> bytes_;
  ContainerIndex index_;
};

// One expert's contiguous byte range plus the three tensor records in it.
struct ExpertSegment {
  int layer = 0;
  int expert = 0;
  TensorRecord gate, up, down;
  uint64_t range_offset = 0;  // payload-relative start of `bytes`
  std::vector<uint8_t> bytes;

  std::span<const uint8_t> tensor_bytes(const TensorRecord& rec) const;
};

// Instrumented positional reader over an immutable container file. The
// checksum is verified once at open; fetches afterwards touch exactly the
// requested expert's padded slots and are safe from concurrent threads.
class SegmentReader {
 public:
  explicit SegmentReader(const std::string& path);
  ~SegmentReader();
  SegmentReader(const SegmentReader&) = delete;
  SegmentReader& operator=(const SegmentReader&) = delete;

  const ContainerIndex& index() const { return index_; }
  ExpertSegment fetch(int layer, int expert);

  uint64_t bytes_read() const { return bytes_read_.load(); }
  uint64_t fetches() const { return fetches_.load(); }

  // Contiguous padded byte count of one expert, straight from the index.
  static uint64_t segment_bytes(const ContainerIndex& index, int layer, int expert);

 private:
  int fd_ = -1;
  ContainerIndex index_;
  std::atomic<uint64_t> bytes_read_{0};
  std::atomic<uint64_t> fetches_{0};
};

}  // namespace stm
