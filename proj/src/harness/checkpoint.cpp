#include "dalign/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dalign/errors.hpp"

namespace dalign {

namespace {

constexpr char kMagic[4] = {'D', 'A', 'L', 'N'};
// Names longer than this are treated as a corrupt header.
constexpr std::uint32_t kMaxNameLength = 4096;
constexpr std::uint32_t kMaxRank = 8;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw IntegrityError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                           std::to_string(pos_));
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(bytes_[pos_ + b]) << (8 * b);
    pos_ += 4;
    return v;
  }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const CheckpointBlock* Checkpoint::find(const std::string& name) const {
  for (const CheckpointBlock& b : blocks) {
    if (b.name == name) return &b;
  }
  return nullptr;
}

double Checkpoint::meta(const std::string& key) const {
  const CheckpointBlock* b = find("meta/" + key);
  if (!b || b->values.size() != 1) throw FormatError("checkpoint lacks meta/" + key);
  return b->values[0];
}

void Checkpoint::set_meta(const std::string& key, double value) {
  CheckpointBlock b{"meta/" + key, {1}, {static_cast<float>(value)}};
  for (CheckpointBlock& existing : blocks) {
    if (existing.name == b.name) {
      existing = std::move(b);
      return;
    }
  }
  blocks.push_back(std::move(b));
}

std::size_t Checkpoint::parameter_scalars() const {
  std::size_t n = 0;
  for (const CheckpointBlock& b : blocks) {
    if (!b.is_meta()) n += b.values.size();
  }
  return n;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(ckpt.blocks.size()));
  for (const CheckpointBlock& b : ckpt.blocks) {
    if (b.name.empty() || b.name.size() > kMaxNameLength) throw ContractError("bad checkpoint block name");
    if (numel(b.shape) != b.values.size()) {
      throw DimensionError("checkpoint block " + b.name + " shape does not match its data");
    }
    put_u32(out, static_cast<std::uint32_t>(b.name.size()));
    out.insert(out.end(), b.name.begin(), b.name.end());
    put_u32(out, static_cast<std::uint32_t>(b.shape.size()));
    for (std::size_t d : b.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : b.values) put_f32(out, v);
  }
  return out;
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  in.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not a checkpoint: bad magic");
  in.text(4, "magic");
  const std::uint32_t version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = in.u32("block count");
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointBlock b;
    const std::uint32_t len = in.u32("name length");
    if (len == 0 || len > kMaxNameLength) throw FormatError("checkpoint block " + std::to_string(i) + " has a bad name length");
    b.name = in.text(len, "block name");
    const std::uint32_t rank = in.u32("rank");
    if (rank > kMaxRank) throw FormatError("checkpoint block " + b.name + " has rank " + std::to_string(rank));
    for (std::uint32_t r = 0; r < rank; ++r) b.shape.push_back(in.u32("dims"));
    // Checked one dimension at a time so a corrupt header cannot overflow.
    std::size_t count_values = 1;
    for (std::size_t d : b.shape) {
      if (d != 0 && count_values > in.remaining() / 4 / d) {
        throw IntegrityError("checkpoint truncated in block " + b.name);
      }
      count_values *= d;
    }
    in.need(count_values * 4, "data");
    b.values.resize(count_values);
    for (float& v : b.values) v = std::bit_cast<float>(in.u32("data"));
    ckpt.blocks.push_back(std::move(b));
  }
  if (in.remaining() != 0) {
    throw IntegrityError("checkpoint has " + std::to_string(in.remaining()) + " trailing bytes");
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = serialize_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

template <typename T>
Checkpoint checkpoint_from_params(const ParameterStore<T>& params) {
  Checkpoint ckpt;
  for (const auto& [name, t] : params) {
    CheckpointBlock b{name, t.shape(), {}};
    b.values.reserve(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) b.values.push_back(static_cast<float>(t[i]));
    ckpt.blocks.push_back(std::move(b));
  }
  return ckpt;
}

template <typename T>
void load_params(const Checkpoint& ckpt, ParameterStore<T>& params) {
  std::vector<const CheckpointBlock*> sources;
  for (const auto& [name, t] : params) {
    const CheckpointBlock* b = ckpt.find(name);
    if (!b) throw FormatError("checkpoint lacks parameter " + name);
    if (b->shape != t.shape()) {
      throw DimensionError("checkpoint parameter " + name + " has shape " + shape_string(b->shape) + ", expected " +
                           shape_string(t.shape()));
    }
    for (float v : b->values) {
      if (!std::isfinite(v)) throw NumericError("checkpoint parameter " + name + " holds a non-finite value");
    }
    sources.push_back(b);
  }
  std::size_t stored = 0;
  for (const CheckpointBlock& b : ckpt.blocks) stored += b.is_meta() ? 0 : 1;
  if (stored != params.size()) {
    throw FormatError("checkpoint has " + std::to_string(stored) + " parameter blocks, model expects " +
                      std::to_string(params.size()));
  }
  std::size_t i = 0;
  for (auto& [name, t] : params) {
    const auto& values = sources[i++]->values;
    for (std::size_t k = 0; k < values.size(); ++k) t[k] = static_cast<T>(values[k]);
  }
}

template Checkpoint checkpoint_from_params(const ParameterStore<float>&);
template Checkpoint checkpoint_from_params(const ParameterStore<double>&);
template void load_params(const Checkpoint&, ParameterStore<float>&);
template void load_params(const Checkpoint&, ParameterStore<double>&);

}  // namespace dalign
