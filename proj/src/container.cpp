#include "stm/container.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>

#include "stm/error.hpp"
#include "stm/quant.hpp"
#include "stm/rng.hpp"

namespace stm {

namespace {

constexpr uint64_t kHeaderSize = 64;
constexpr uint64_t kF32Align = 64;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; i++) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; i++) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

struct Cursor {
  const uint8_t* data;
  size_t len;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > len) throw ModelError("container truncated");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; i++) v |= static_cast<uint32_t>(data[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; i++) v |= static_cast<uint64_t>(data[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data + pos), n);
    pos += n;
    return s;
  }
};

std::string format_float(float v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

float parse_float(std::string_view s) {
  float v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ParseError("bad float value '" + std::string(s) + "'");
  return v;
}

int parse_int(std::string_view s) {
  int v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ParseError("bad integer value '" + std::string(s) + "'");
  return v;
}

uint64_t expected_tensor_bytes(const TensorRecord& rec) {
  if (rec.dtype == DType::Q4) return rec.rows * q4_row_bytes(static_cast<int>(rec.cols));
  return rec.rows * rec.cols * sizeof(float);
}

}  // namespace

const TensorRecord* ContainerIndex::find(std::string_view name) const {
  auto it = std::lower_bound(tensors.begin(), tensors.end(), name,
                             [](const TensorRecord& r, std::string_view n) {
                               return std::string_view(r.name) < n;
                             });
  if (it == tensors.end() || it->name != name) return nullptr;
  return &*it;
}

const TensorRecord& ContainerIndex::at(std::string_view name) const {
  const TensorRecord* rec = find(name);
  if (!rec) throw ModelError("tensor '" + std::string(name) + "' not in container");
  return *rec;
}

bool is_expert_tensor_name(std::string_view name) {
  return name.starts_with("layer.") && name.find(".expert.") != std::string_view::npos;
}

std::string expert_tensor_name(int layer, int expert, const char* part) {
  return "layer." + std::to_string(layer) + ".expert." + std::to_string(expert) +
         "." + part;
}

std::vector<std::string> expected_tensor_names(const ModelConfig& c) {
  std::vector<std::string> names;
  names.push_back("embedding");
  names.push_back("final_norm");
  names.push_back("lmhead");
  names.push_back("lmhead.predictor.left");
  names.push_back("lmhead.predictor.right");
  for (int l = 0; l < c.num_layers; l++) {
    std::string p = "layer." + std::to_string(l) + ".";
    names.push_back(p + "attn_norm");
    names.push_back(p + "attn.wq");
    names.push_back(p + "attn.wk");
    names.push_back(p + "attn.wv");
    names.push_back(p + "attn.wo");
    names.push_back(p + "router");
    names.push_back(p + "ffn_norm");
    for (int e = 0; e < c.num_experts; e++)
      for (const char* part : {"gate", "up", "down"})
        names.push_back(expert_tensor_name(l, e, part));
  }
  std::sort(names.begin(), names.end());
  return names;
}

std::string config_to_text(const ModelConfig& c) {
  std::string t;
  auto kv = [&](const char* k, const std::string& v) { t += std::string(k) + "=" + v + "\n"; };
  kv("num_layers", std::to_string(c.num_layers));
  kv("hidden_dim", std::to_string(c.hidden_dim));
  kv("head_dim", std::to_string(c.head_dim));
  kv("ffn_dim", std::to_string(c.ffn_dim));
  kv("num_q_heads", std::to_string(c.num_q_heads));
  kv("num_kv_heads", std::to_string(c.num_kv_heads));
  kv("num_experts", std::to_string(c.num_experts));
  kv("top_k", std::to_string(c.top_k));
  kv("window_size", std::to_string(c.window_size));
  kv("attn_pattern_period", std::to_string(c.attn_pattern_period));
  kv("rope_base", format_float(c.rope_base));
  kv("vocab_size", std::to_string(c.vocab_size));
  kv("max_context", std::to_string(c.max_context));
  kv("norm_epsilon", format_float(c.norm_epsilon));
  return t;
}

ModelConfig config_from_text(std::string_view text) {
  ModelConfig c;
  size_t pos = 0;
  int line_no = 0;
  while (pos < text.size()) {
    size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    line_no++;
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ParseError("config line " + std::to_string(line_no) + ": missing '='");
    std::string_view k = line.substr(0, eq);
    std::string_view v = line.substr(eq + 1);
    if (k == "num_layers") c.num_layers = parse_int(v);
    else if (k == "hidden_dim") c.hidden_dim = parse_int(v);
    else if (k == "head_dim") c.head_dim = parse_int(v);
    else if (k == "ffn_dim") c.ffn_dim = parse_int(v);
    else if (k == "num_q_heads") c.num_q_heads = parse_int(v);
    else if (k == "num_kv_heads") c.num_kv_heads = parse_int(v);
    else if (k == "num_experts") c.num_experts = parse_int(v);
    else if (k == "top_k") c.top_k = parse_int(v);
    else if (k == "window_size") c.window_size = parse_int(v);
    else if (k == "attn_pattern_period") c.attn_pattern_period = parse_int(v);
    else if (k == "rope_base") c.rope_base = parse_float(v);
    else if (k == "vocab_size") c.vocab_size = parse_int(v);
    else if (k == "max_context") c.max_context = parse_int(v);
    else if (k == "norm_epsilon") c.norm_epsilon = parse_float(v);
    else throw ParseError("config line " + std::to_string(line_no) + ": unknown key '" + std::string(k) + "'");
  }
  return c;
}

uint64_t round_up(uint64_t v, uint64_t align) {
  return (v + align - 1) / align * align;
}

std::vector<uint8_t> write_container(const ModelConfig& config,
                                     std::vector<NamedTensor> tensors) {
  if (auto violations = validate_config(config); !violations.empty())
    throw ModelError("invalid config: " + violations.front());

  std::sort(tensors.begin(), tensors.end(),
            [](const NamedTensor& a, const NamedTensor& b) { return a.name < b.name; });
  for (size_t i = 1; i < tensors.size(); i++)
    if (tensors[i].name == tensors[i - 1].name)
      throw ModelError("duplicate tensor '" + tensors[i].name + "'");

  auto expected = expected_tensor_names(config);
  {
    size_t ti = 0;
    for (const std::string& name : expected) {
      while (ti < tensors.size() && tensors[ti].name < name) ti++;
      if (ti >= tensors.size() || tensors[ti].name != name)
        throw ModelError("missing tensor '" + name + "'");
    }
  }

  // Lay out the payload.
  std::vector<TensorRecord> records;
  records.reserve(tensors.size());
  uint64_t cursor = 0;
  for (const NamedTensor& t : tensors) {
    TensorRecord rec;
    rec.name = t.name;
    rec.dtype = t.dtype;
    rec.rows = t.rows;
    rec.cols = t.cols;
    rec.byte_length = t.bytes.size();
    if (t.dtype == DType::Q4 && t.cols % kQ4BlockSize != 0)
      throw ShapeError("tensor '" + t.name + "': Q4 cols must be a multiple of 32");
    if (rec.byte_length != expected_tensor_bytes(rec))
      throw ShapeError("tensor '" + t.name + "': payload size mismatch");
    bool expert = is_expert_tensor_name(t.name);
    cursor = round_up(cursor, expert ? kExpertAlign : kF32Align);
    rec.byte_offset = cursor;
    cursor += rec.byte_length;
    if (expert) cursor = round_up(cursor, kExpertAlign);  // pad the slot
    records.push_back(std::move(rec));
  }
  uint64_t payload_length = cursor;

  std::string config_text = config_to_text(config);

  std::vector<uint8_t> index_bytes;
  for (const TensorRecord& rec : records) {
    put_u32(index_bytes, static_cast<uint32_t>(rec.name.size()));
    index_bytes.insert(index_bytes.end(), rec.name.begin(), rec.name.end());
    index_bytes.push_back(static_cast<uint8_t>(rec.dtype));
    put_u64(index_bytes, rec.rows);
    put_u64(index_bytes, rec.cols);
    put_u64(index_bytes, rec.byte_offset);
    put_u64(index_bytes, rec.byte_length);
  }

  uint64_t config_offset = kHeaderSize;
  uint64_t index_offset = config_offset + config_text.size();
  uint64_t payload_offset = round_up(index_offset + index_bytes.size(), kExpertAlign);

  std::vector<uint8_t> out(8);
  out.reserve(payload_offset + payload_length + 8);
  std::memcpy(out.data(), kContainerMagic, 8);
  put_u32(out, kContainerVersion);
  put_u32(out, 0);
  put_u64(out, config_offset);
  put_u64(out, config_text.size());
  put_u64(out, index_offset);
  put_u64(out, records.size());
  put_u64(out, payload_offset);
  put_u64(out, payload_length);
  out.insert(out.end(), config_text.begin(), config_text.end());
  out.insert(out.end(), index_bytes.begin(), index_bytes.end());
  out.resize(payload_offset, 0);

  out.resize(payload_offset + payload_length, 0);
  for (size_t i = 0; i < tensors.size(); i++) {
    std::memcpy(out.data() + payload_offset + records[i].byte_offset,
                tensors[i].bytes.data(), tensors[i].bytes.size());
  }
  uint64_t checksum = fnv1a64(out.data() + payload_offset, payload_length);
  put_u64(out, checksum);
  return out;
}

ContainerIndex parse_container(const uint8_t* data, size_t len) {
  Cursor cur{data, len};
  std::string magic = cur.str(8);
  if (std::memcmp(magic.data(), kContainerMagic, 8) != 0)
    throw ModelError("bad magic");
  ContainerIndex idx;
  idx.version = cur.u32();
  if (idx.version != kContainerVersion)
    throw ModelError("unsupported container version " + std::to_string(idx.version));
  cur.u32();  // reserved
  uint64_t config_offset = cur.u64();
  uint64_t config_length = cur.u64();
  uint64_t index_offset = cur.u64();
  uint64_t index_count = cur.u64();
  idx.payload_offset = cur.u64();
  idx.payload_length = cur.u64();

  if (config_offset + config_length > len) throw ModelError("container truncated");
  idx.config = config_from_text(std::string_view(
      reinterpret_cast<const char*>(data + config_offset), config_length));

  Cursor icur{data, len, index_offset};
  idx.tensors.reserve(index_count);
  for (uint64_t i = 0; i < index_count; i++) {
    TensorRecord rec;
    uint32_t name_len = icur.u32();
    rec.name = icur.str(name_len);
    icur.need(1);
    uint8_t dt = icur.data[icur.pos++];
    if (dt > 1) throw ModelError("tensor '" + rec.name + "': unknown dtype");
    rec.dtype = static_cast<DType>(dt);
    rec.rows = icur.u64();
    rec.cols = icur.u64();
    rec.byte_offset = icur.u64();
    rec.byte_length = icur.u64();
    if (rec.byte_offset + rec.byte_length > idx.payload_length)
      throw ModelError("tensor '" + rec.name + "': offset outside payload");
    if (i > 0 && !(idx.tensors.back().name < rec.name))
      throw ModelError("index not sorted by name");
    idx.tensors.push_back(std::move(rec));
  }

  if (idx.payload_offset + idx.payload_length + 8 > len)
    throw ModelError("container truncated");
  uint64_t computed = fnv1a64(data + idx.payload_offset, idx.payload_length);
  Cursor ccur{data, len, idx.payload_offset + idx.payload_length};
  idx.checksum = ccur.u64();
  if (computed != idx.checksum) throw ModelError("payload checksum mismatch");
  return idx;
}

Container Container::from_bytes(std::vector<uint8_t> bytes) {
  Container c;
  c.index_ = parse_container(bytes.data(), bytes.size());
  c.bytes_ = std::move(bytes);
  return c;
}

Container Container::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open '" + path + "'");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return from_bytes(std::move(bytes));
}

std::span<const uint8_t> Container::tensor_bytes(const TensorRecord& rec) const {
  return {bytes_.data() + index_.payload_offset + rec.byte_offset, rec.byte_length};
}

std::span<const uint8_t> Container::tensor_bytes(std::string_view name) const {
  return tensor_bytes(index_.at(name));
}

Matrix Container::matrix(std::string_view name) const {
  const TensorRecord& rec = index_.at(name);
  auto bytes = tensor_bytes(rec);
  if (rec.dtype == DType::Q4)
    return dequantize_matrix_q4(bytes.data(), bytes.size(),
                                static_cast<int>(rec.rows), static_cast<int>(rec.cols));
  Matrix m(static_cast<int>(rec.rows), static_cast<int>(rec.cols));
  std::memcpy(m.data.data(), bytes.data(), bytes.size());
  return m;
}

std::span<const uint8_t> ExpertSegment::tensor_bytes(const TensorRecord& rec) const {
  return {bytes.data() + (rec.byte_offset - range_offset), rec.byte_length};
}

namespace {

struct SegmentRange {
  TensorRecord gate, up, down;
  uint64_t start = 0;
  uint64_t length = 0;
};

SegmentRange segment_range(const ContainerIndex& index, int layer, int expert) {
  SegmentRange r;
  r.gate = index.at(expert_tensor_name(layer, expert, "gate"));
  r.up = index.at(expert_tensor_name(layer, expert, "up"));
  r.down = index.at(expert_tensor_name(layer, expert, "down"));
  r.start = std::min({r.gate.byte_offset, r.up.byte_offset, r.down.byte_offset});
  uint64_t end = 0;
  for (const TensorRecord* rec : {&r.gate, &r.up, &r.down})
    end = std::max(end, round_up(rec->byte_offset + rec->byte_length, kExpertAlign));
  r.length = end - r.start;
  return r;
}

}  // namespace

SegmentReader::SegmentReader(const std::string& path) {
  // Verify once up front; fetches then trust the index.
  Container probe = Container::from_file(path);
  index_ = probe.index();
  fd_ = ::open(path.c_str(), O_RDONLY);
  if (fd_ < 0) throw ModelError("cannot open '" + path + "'");
}

SegmentReader::~SegmentReader() {
  if (fd_ >= 0) ::close(fd_);
}

ExpertSegment SegmentReader::fetch(int layer, int expert) {
  SegmentRange range = segment_range(index_, layer, expert);
  ExpertSegment seg;
  seg.layer = layer;
  seg.expert = expert;
  seg.gate = range.gate;
  seg.up = range.up;
  seg.down = range.down;
  seg.range_offset = range.start;
  seg.bytes.resize(range.length);
  uint64_t file_offset = index_.payload_offset + range.start;
  size_t done = 0;
  while (done < range.length) {
    ssize_t n = ::pread(fd_, seg.bytes.data() + done, range.length - done,
                        static_cast<off_t>(file_offset + done));
    if (n < 0) throw StorageError("pread failed for expert segment");
    if (n == 0) throw StorageError("short read: container truncated");
    done += static_cast<size_t>(n);
  }
  bytes_read_ += range.length;
  fetches_ += 1;
  return seg;
}

uint64_t SegmentReader::segment_bytes(const ContainerIndex& index, int layer,
                                      int expert) {
  return segment_range(index, layer, expert).length;
}

}  // namespace stm
