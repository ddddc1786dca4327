// SPDX-License-Identifier: Apache-2.0
#include "omim/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

#include "omim/error.hpp"
#include "omim/image.hpp"

namespace omim {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'O', 'M', 'I', 'M'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  template <typename T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void read(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, b_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw CorruptionError("checkpoint: truncated at byte " + std::to_string(pos_));
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

void put_config(Writer& w, const ModelConfig& c) {
  for (int v : {c.patch_size, c.height, c.width, c.enc_depth, c.dec_depth, c.enc_dim, c.dec_dim, c.heads, c.mlp_ratio})
    w.put(static_cast<std::uint32_t>(v));
  w.put(c.seed);
}

ModelConfig get_config(Reader& r) {
  ModelConfig c;
  for (int* f : {&c.patch_size, &c.height, &c.width, &c.enc_depth, &c.dec_depth, &c.enc_dim, &c.dec_dim, &c.heads,
                 &c.mlp_ratio})
    *f = static_cast<int>(r.get<std::uint32_t>());
  c.seed = r.get<std::uint64_t>();
  return c;
}

void put_tensors(Writer& w, const std::string& prefix, const Params<float>& p) {
  p.for_each([&](const std::string& name, const Mat<float>& t, Params<float>::Role) {
    const std::string full = prefix + name;
    w.put(static_cast<std::uint32_t>(full.size()));
    w.bytes(full.data(), full.size());
    w.put(std::uint32_t{2});
    w.put(static_cast<std::uint32_t>(t.rows()));
    w.put(static_cast<std::uint32_t>(t.cols()));
    w.put(static_cast<std::uint64_t>(t.size()) * sizeof(float));
    w.bytes(t.data(), static_cast<std::size_t>(t.size()) * sizeof(float));
  });
}

std::size_t count_tensors(const Params<float>& p) {
  std::size_t n = 0;
  p.for_each([&](const std::string&, const Mat<float>&, Params<float>::Role) { ++n; });
  return n;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const TrainState& s) {
  if (s.adam_m.has_value() != s.adam_v.has_value()) throw ConfigError("checkpoint: optimizer moments must come in pairs");
  Writer w;
  w.bytes(kMagic, 4);
  w.put(kCheckpointVersion);
  w.put(s.stage);
  w.put(s.step);
  put_config(w, s.model);
  const std::size_t per = count_tensors(s.params);
  w.put(static_cast<std::uint32_t>(s.adam_m ? 3 * per : per));
  put_tensors(w, "param/", s.params);
  if (s.adam_m) {
    put_tensors(w, "adam_m/", *s.adam_m);
    put_tensors(w, "adam_v/", *s.adam_v);
  }
  return w.take();
}

TrainState deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw CorruptionError("checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CorruptionError("checkpoint: unsupported format version " + std::to_string(version));
  TrainState s;
  s.stage = r.get<std::uint32_t>();
  s.step = r.get<std::uint64_t>();
  s.model = get_config(r);
  try {
    s.model.validate();
  } catch (const ConfigError& e) {
    throw CorruptionError(std::string("checkpoint: invalid model config: ") + e.what());
  }
  const auto n_records = r.get<std::uint32_t>();

  std::map<std::string, Mat<float>> records;
  for (std::uint32_t i = 0; i < n_records; ++i) {
    const auto len = r.get<std::uint32_t>();
    if (len > 4096) throw CorruptionError("checkpoint: implausible record name length");
    std::string name(len, '\0');
    r.read(name.data(), len);
    const auto rank = r.get<std::uint32_t>();
    if (rank != 2) throw CorruptionError("checkpoint: record " + name + " has rank " + std::to_string(rank));
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    const auto payload = r.get<std::uint64_t>();
    if (payload != static_cast<std::uint64_t>(rows) * cols * sizeof(float))
      throw CorruptionError("checkpoint: record " + name + " length does not match its dims");
    Mat<float> t(rows, cols);
    r.read(t.data(), static_cast<std::size_t>(payload));
    records.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) throw CorruptionError("checkpoint: trailing bytes");

  auto fill = [&](const std::string& prefix, Params<float>& p) {
    p.for_each([&](const std::string& name, Mat<float>& t, Params<float>::Role) {
      auto it = records.find(prefix + name);
      if (it == records.end()) throw CorruptionError("checkpoint: missing record " + prefix + name);
      if (it->second.rows() != t.rows() || it->second.cols() != t.cols())
        throw CorruptionError("checkpoint: record " + prefix + name + " has the wrong shape");
      t = std::move(it->second);
      records.erase(it);
    });
  };
  s.params = init_params<float>(s.model, 0);
  fill("param/", s.params);
  if (!records.empty()) {
    s.adam_m = s.params.zeros_like();
    s.adam_v = s.params.zeros_like();
    fill("adam_m/", *s.adam_m);
    fill("adam_v/", *s.adam_v);
  }
  if (!records.empty()) throw CorruptionError("checkpoint: unexpected record " + records.begin()->first);
  return s;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(state);
  write_file_atomic(path, bytes.data(), bytes.size());
}

TrainState load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

std::string checkpoint_id(const TrainState& state) {
  const auto bytes = serialize_checkpoint(state);
  return sha256_hex(bytes.data(), bytes.size());
}

}  // namespace omim
