#include "disam/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "disam/crc32.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace disam {
namespace net {

namespace {

constexpr char kMagic[] = "DISAMCKPT";
constexpr uint32_t kVersion = 1;

class Writer {
 public:
  void u8(uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u16(uint16_t v) { raw(&v, 2); }
  void u32(uint32_t v) { raw(&v, 4); }
  void raw(const void* p, size_t n) {
    const char* c = static_cast<const char*>(p);
    bytes_.insert(bytes_.end(), c, c + n);
  }
  void str16(const std::string& s) {
    if (s.size() > 0xFFFF) throw IoError("name too long for checkpoint table");
    u16(static_cast<uint16_t>(s.size()));
    raw(s.data(), s.size());
  }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}
  uint8_t u8() { return static_cast<uint8_t>(take(1)[0]); }
  uint16_t u16() {
    uint16_t v;
    std::memcpy(&v, take(2), 2);
    return v;
  }
  uint32_t u32() {
    uint32_t v;
    std::memcpy(&v, take(4), 4);
    return v;
  }
  std::string str16() {
    const uint16_t n = u16();
    return std::string(take(n), n);
  }
  const char* take(size_t n) {
    if (pos_ + n > bytes_.size()) throw CorruptCheckpoint("truncated checkpoint");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  size_t pos() const { return pos_; }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
  size_t pos_ = 0;
};

void append_tensor(Writer& w, const std::string& name, const TensorF& t) {
  w.str16(name);
  w.u8(static_cast<uint8_t>(t.ndim()));
  for (int i = 0; i < t.ndim(); ++i) w.u32(static_cast<uint32_t>(t.dim(i)));
  w.raw(t.data(), sizeof(float) * static_cast<size_t>(t.numel()));
}

std::string config_block(const ModelBundle& bundle, const CheckpointExtra* extra) {
  std::ostringstream os;
  const NetworkConfig& c = bundle.config;
  os << "image_size=" << c.image_size << '\n'
     << "base_channels=" << c.base_channels << '\n'
     << "latent_channels=" << c.latent_channels << '\n'
     << "n_res_blocks_total=" << c.n_res_blocks_total << '\n'
     << "n_domains=" << c.n_domains << '\n'
     << "disc_layers=" << c.disc_layers << '\n'
     << "seed=" << c.seed << '\n'
     << "epoch=" << bundle.epoch << '\n'
     << "stage=" << to_string(bundle.stage) << '\n';
  if (extra)
    for (const auto& [k, v] : extra->meta) os << "meta." << k << '=' << v << '\n';
  return os.str();
}

}  // namespace

void require_compatible(const NetworkConfig& stored, const NetworkConfig& expected) {
  NetworkConfig a = stored, b = expected;
  a.seed = b.seed = 0;
  if (!(a == b))
    throw VersionMismatch("checkpoint network configuration does not match the run");
}

void save_checkpoint(ModelBundle& bundle, const std::string& path, const CheckpointExtra* extra) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic) - 1);
  w.u32(kVersion);
  const std::string cfg = config_block(bundle, extra);
  w.u32(static_cast<uint32_t>(cfg.size()));
  w.raw(cfg.data(), cfg.size());

  auto params = bundle.named_params();
  uint32_t count = static_cast<uint32_t>(params.size());
  if (extra) count += static_cast<uint32_t>(extra->tensors.size());
  w.u32(count);
  for (auto& np : params) append_tensor(w, np.name, np.param->value);
  if (extra)
    for (const auto& [name, t] : extra->tensors) append_tensor(w, name, t);

  Crc32 crc;
  crc.update(w.bytes().data(), w.bytes().size());
  w.u32(crc.value());

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + tmp);
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw IoError("short checkpoint write: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
  bundle.refresh_fingerprint();
}

ModelBundle load_checkpoint(const std::string& path, CheckpointExtra* extra) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) - 1 + 8) throw CorruptCheckpoint("checkpoint too small");

  // Verify the trailing checksum before trusting any field.
  Crc32 crc;
  crc.update(bytes.data(), bytes.size() - 4);
  uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  if (crc.value() != stored_crc) throw CorruptCheckpoint("checkpoint checksum mismatch");

  Reader r(std::move(bytes));
  if (std::memcmp(r.take(sizeof(kMagic) - 1), kMagic, sizeof(kMagic) - 1) != 0)
    throw CorruptCheckpoint("bad checkpoint magic");
  const uint32_t version = r.u32();
  if (version != kVersion)
    throw VersionMismatch("unsupported checkpoint version " + std::to_string(version));

  const uint32_t cfg_len = r.u32();
  std::istringstream cfg(std::string(r.take(cfg_len), cfg_len));

  NetworkConfig c;
  int epoch = 0;
  Stage stage = Stage::coarse;
  std::map<std::string, std::string> meta;
  std::string line;
  while (std::getline(cfg, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CorruptCheckpoint("bad config line: " + line);
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "image_size") c.image_size = std::stoi(val);
    else if (key == "base_channels") c.base_channels = std::stoi(val);
    else if (key == "latent_channels") c.latent_channels = std::stoi(val);
    else if (key == "n_res_blocks_total") c.n_res_blocks_total = std::stoi(val);
    else if (key == "n_domains") c.n_domains = std::stoi(val);
    else if (key == "disc_layers") c.disc_layers = std::stoi(val);
    else if (key == "seed") c.seed = std::stoull(val);
    else if (key == "epoch") epoch = std::stoi(val);
    else if (key == "stage") stage = (val == "fine") ? Stage::fine : Stage::coarse;
    else if (key.rfind("meta.", 0) == 0) meta[key.substr(5)] = val;
    else throw CorruptCheckpoint("unknown config key: " + key);
  }
  c.validate();

  // Build the topology, then fill parameters strictly by name.
  ModelBundle b;
  b.config = c;
  b.epoch = epoch;
  b.stage = stage;
  for (int d = 0; d < c.n_domains; ++d) {
    b.encoders.push_back(make_encoder<float>(c));
    b.decoders.push_back(make_decoder<float>(c));
    b.discriminators.push_back(make_discriminator<float>(c));
  }
  auto params = b.named_params();
  std::map<std::string, Param<float>*> by_name;
  for (auto& np : params) by_name[np.name] = np.param;

  const uint32_t count = r.u32();
  size_t matched = 0;
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str16();
    const int ndim = r.u8();
    std::vector<int> shape(static_cast<size_t>(ndim));
    int64_t numel = 1;
    for (int dI = 0; dI < ndim; ++dI) {
      shape[static_cast<size_t>(dI)] = static_cast<int>(r.u32());
      numel *= shape[static_cast<size_t>(dI)];
    }
    TensorF t(shape);
    std::memcpy(t.data(), r.take(sizeof(float) * static_cast<size_t>(numel)),
                sizeof(float) * static_cast<size_t>(numel));
    auto it = by_name.find(name);
    if (it != by_name.end()) {
      if (it->second->value.shape() != shape)
        throw VersionMismatch("parameter '" + name + "' has shape " + t.shape_str() +
                              ", expected " + it->second->value.shape_str());
      it->second->value = std::move(t);
      it->second->zero_grad();
      ++matched;
    } else if (extra) {
      extra->tensors.emplace_back(name, std::move(t));
    }
  }
  if (matched != params.size())
    throw VersionMismatch("checkpoint parameter table does not cover the configured networks");
  if (extra) extra->meta = std::move(meta);

  b.refresh_fingerprint();
  return b;
}

}  // namespace net
}  // namespace disam
