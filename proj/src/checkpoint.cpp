#include "hopmix/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "hopmix/config.hpp"

namespace hopmix {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_entry(std::string& out, const std::string& name, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_u64(out, d);
  const std::size_t bytes = t.numel() * sizeof(double);
  const std::size_t off = out.size();
  out.resize(off + bytes);
  std::memcpy(out.data() + off, t.data().data(), bytes);
}

class Reader {
 public:
  Reader(std::string buf, std::string path) : buf_(std::move(buf)), path_(std::move(path)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void f64s(double* dst, std::size_t n) {
    need(n * sizeof(double));
    std::memcpy(dst, buf_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > buf_.size()) throw Truncated(path_ + ": truncated checkpoint");
  }
  std::string buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, MixerModel& model, const NormStats& stats) {
  std::string out;
  out += "HMX1";
  put_u32(out, 1);
  const std::string echo = serialize_mixer_config(model.config());
  put_u32(out, static_cast<std::uint32_t>(echo.size()));
  out += echo;

  const auto buffers = model.named_buffers();
  const std::uint32_t entries =
      static_cast<std::uint32_t>(model.parameters().size() + buffers.size() + 2);
  put_u32(out, entries);
  for (Parameter* p : model.parameters()) put_entry(out, p->name, p->value);
  for (const auto& [name, tensor] : buffers) put_entry(out, name, *tensor);
  put_entry(out, "data.mean", Tensor({stats.mean.size()}, stats.mean));
  put_entry(out, "data.std", Tensor({stats.std_dev.size()}, stats.std_dev));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 4 || buf.compare(0, 4, "HMX1") != 0)
    throw BadMagic(path + ": not a checkpoint file");

  Reader r(buf.substr(4), path);
  const std::uint32_t version = r.u32();
  if (version != 1) throw Malformed(path + ": unsupported checkpoint version");
  const std::uint32_t echo_len = r.u32();
  const std::string echo = r.str(echo_len);

  LoadedCheckpoint loaded;
  loaded.cfg = mixer_config_from(Config::from_string(echo));
  loaded.model = std::make_unique<MixerModel>(loaded.cfg);

  const std::uint32_t entries = r.u32();
  auto buffers = loaded.model->named_buffers();
  std::size_t applied = 0;
  for (std::uint32_t e = 0; e < entries; ++e) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.str(name_len);
    const std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<std::size_t>(r.u64());
      numel *= shape[d];
    }
    Tensor* target = nullptr;
    if (name == "data.mean") {
      loaded.stats.mean.resize(numel);
      Tensor tmp({numel});
      r.f64s(tmp.data().data(), numel);
      loaded.stats.mean = tmp.data();
      ++applied;
      continue;
    }
    if (name == "data.std") {
      loaded.stats.std_dev.resize(numel);
      Tensor tmp({numel});
      r.f64s(tmp.data().data(), numel);
      loaded.stats.std_dev = tmp.data();
      ++applied;
      continue;
    }
    if (Parameter* p = loaded.model->find(name)) {
      target = &p->value;
    } else {
      for (auto& [bname, tensor] : buffers)
        if (bname == name) {
          target = tensor;
          break;
        }
    }
    if (!target) throw Malformed(path + ": unexpected entry '" + name + "'");
    if (target->shape() != shape) throw Malformed(path + ": shape mismatch for '" + name + "'");
    r.f64s(target->data().data(), numel);
    ++applied;
  }
  if (!r.done()) throw Malformed(path + ": trailing bytes after last entry");
  const std::size_t expected = loaded.model->parameters().size() + buffers.size() + 2;
  if (applied != expected)
    throw Malformed(path + ": entry count does not cover the full registry");
  return loaded;
}

}  // namespace hopmix
