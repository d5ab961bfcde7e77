#include "hopmix/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "hopmix/rng.hpp"

namespace hopmix {

namespace {

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(std::string buf, std::string path) : buf_(std::move(buf)), path_(std::move(path)) {}

  std::uint16_t u16() { return static_cast<std::uint16_t>(byte() | (byte() << 8)); }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
    return v;
  }
  void bytes(std::uint8_t* dst, std::size_t n) {
    if (pos_ + n > buf_.size()) throw Truncated(path_ + ": truncated payload");
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  std::uint32_t byte() {
    if (pos_ >= buf_.size()) throw Truncated(path_ + ": truncated header");
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::string buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void Dataset::validate() const {
  if (channels == 0 || height == 0 || width == 0) throw Malformed("dataset: zero dimensions");
  if (num_classes < 2) throw Malformed("dataset: fewer than two classes");
  if (pixels.size() != count() * image_size())
    throw Malformed("dataset: pixel payload does not match count * image size");
  for (std::uint8_t y : labels) {
    if (y >= num_classes)
      throw Malformed("dataset: label " + std::to_string(int(y)) + " out of range");
  }
}

Dataset gen_synthetic(int classes, int per_class, int channels, int height, int width,
                      double noise_sigma, std::uint64_t seed) {
  if (classes < 2) throw Error("gen_synthetic: need at least two classes");
  if (per_class < 1) throw Error("gen_synthetic: need at least one sample per class");
  if (classes > 256) throw Error("gen_synthetic: u8 labels limit classes to 256");
  Dataset ds;
  ds.channels = static_cast<std::uint16_t>(channels);
  ds.height = static_cast<std::uint16_t>(height);
  ds.width = static_cast<std::uint16_t>(width);
  ds.num_classes = static_cast<std::uint16_t>(classes);
  ds.split = "all";
  const std::size_t d = ds.image_size();

  RandomStream tmpl_rs = RandomStream::for_label(seed, "templates");
  std::vector<double> templates(static_cast<std::size_t>(classes) * d);
  for (double& t : templates) t = tmpl_rs.uniform01();

  RandomStream noise_rs = RandomStream::for_label(seed, "noise");
  ds.pixels.resize(static_cast<std::size_t>(classes) * per_class * d);
  ds.labels.resize(static_cast<std::size_t>(classes) * per_class);
  std::size_t idx = 0;
  for (int k = 0; k < classes; ++k) {
    const double* t = templates.data() + static_cast<std::size_t>(k) * d;
    for (int s = 0; s < per_class; ++s, ++idx) {
      ds.labels[idx] = static_cast<std::uint8_t>(k);
      std::uint8_t* px = ds.pixels.data() + idx * d;
      for (std::size_t j = 0; j < d; ++j) {
        double v = t[j];
        if (noise_sigma > 0.0) v += noise_sigma * noise_rs.gaussian();
        v = std::clamp(v, 0.0, 1.0);
        px[j] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return ds;
}

void save_imgb(const std::string& path, const Dataset& ds) {
  ds.validate();
  std::string out;
  out.reserve(20 + ds.pixels.size() + ds.labels.size());
  out += "IMGB";
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(ds.count()));
  put_u16(out, ds.channels);
  put_u16(out, ds.height);
  put_u16(out, ds.width);
  put_u16(out, ds.num_classes);
  out.append(reinterpret_cast<const char*>(ds.pixels.data()), ds.pixels.size());
  out.append(reinterpret_cast<const char*>(ds.labels.data()), ds.labels.size());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("write failed: " + path);
}

Dataset load_imgb(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (buf.size() < 4 || buf.compare(0, 4, "IMGB") != 0)
    throw BadMagic(path + ": not an IMGB file");
  Reader r(buf.substr(4), path);
  const std::uint32_t version = r.u32();
  if (version != 1) throw Malformed(path + ": unsupported IMGB version");
  Dataset ds;
  const std::uint32_t count = r.u32();
  ds.channels = r.u16();
  ds.height = r.u16();
  ds.width = r.u16();
  ds.num_classes = r.u16();
  if (ds.channels == 0 || ds.height == 0 || ds.width == 0 || ds.num_classes < 2)
    throw Malformed(path + ": invalid header dimensions");
  const std::size_t payload = static_cast<std::size_t>(count) * ds.image_size() + count;
  if (r.remaining() < payload) throw Truncated(path + ": payload shorter than header declares");
  if (r.remaining() > payload) throw Malformed(path + ": payload longer than header declares");
  ds.pixels.resize(static_cast<std::size_t>(count) * ds.image_size());
  ds.labels.resize(count);
  r.bytes(ds.pixels.data(), ds.pixels.size());
  r.bytes(ds.labels.data(), ds.labels.size());
  ds.split = "file";
  ds.validate();
  return ds;
}

std::pair<Dataset, Dataset> split_per_class(const Dataset& ds, int head_per_class) {
  Dataset head, tail;
  for (Dataset* part : {&head, &tail}) {
    part->channels = ds.channels;
    part->height = ds.height;
    part->width = ds.width;
    part->num_classes = ds.num_classes;
  }
  head.split = "train";
  tail.split = "val";
  std::vector<int> seen(ds.num_classes, 0);
  const std::size_t d = ds.image_size();
  for (std::size_t i = 0; i < ds.count(); ++i) {
    Dataset& dst = (seen[ds.labels[i]]++ < head_per_class) ? head : tail;
    dst.labels.push_back(ds.labels[i]);
    auto img = ds.image(i);
    dst.pixels.insert(dst.pixels.end(), img.begin(), img.end());
    (void)d;
  }
  return {std::move(head), std::move(tail)};
}

NormStats compute_norm_stats(const Dataset& ds) {
  NormStats stats;
  stats.mean.assign(ds.channels, 0.0);
  stats.std_dev.assign(ds.channels, 0.0);
  const std::size_t plane = static_cast<std::size_t>(ds.height) * ds.width;
  const std::size_t n = ds.count() * plane;
  if (n == 0) throw Error("compute_norm_stats: empty dataset");
  for (std::size_t i = 0; i < ds.count(); ++i) {
    auto img = ds.image(i);
    for (std::size_t c = 0; c < ds.channels; ++c)
      for (std::size_t j = 0; j < plane; ++j)
        stats.mean[c] += static_cast<double>(img[c * plane + j]) / 255.0;
  }
  for (std::size_t c = 0; c < ds.channels; ++c) stats.mean[c] /= static_cast<double>(n);
  for (std::size_t i = 0; i < ds.count(); ++i) {
    auto img = ds.image(i);
    for (std::size_t c = 0; c < ds.channels; ++c)
      for (std::size_t j = 0; j < plane; ++j) {
        const double d = static_cast<double>(img[c * plane + j]) / 255.0 - stats.mean[c];
        stats.std_dev[c] += d * d;
      }
  }
  for (std::size_t c = 0; c < ds.channels; ++c) {
    stats.std_dev[c] = std::sqrt(stats.std_dev[c] / static_cast<double>(n));
    if (stats.std_dev[c] < 1e-8) stats.std_dev[c] = 1.0;  // constant channel
  }
  return stats;
}

std::vector<double> normalize_image(const Dataset& ds, std::size_t index, const NormStats& stats) {
  const std::size_t plane = static_cast<std::size_t>(ds.height) * ds.width;
  auto img = ds.image(index);
  std::vector<double> out(img.size());
  for (std::size_t c = 0; c < ds.channels; ++c)
    for (std::size_t j = 0; j < plane; ++j)
      out[c * plane + j] =
          (static_cast<double>(img[c * plane + j]) / 255.0 - stats.mean[c]) / stats.std_dev[c];
  return out;
}

}  // namespace hopmix
