#include "fedlwr/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <optional>
#include <set>

#include "fedlwr/errors.hpp"
#include "fedlwr/rng.hpp"
#include "json.hpp"

namespace fedlwr {

namespace {

using nlohmann::json;

constexpr std::size_t kHeaderBytes = 8 + 4 * 4;

void validate_spec(const DomainSpec& spec) {
  if (spec.blob_count_min < 1 || spec.blob_count_max < spec.blob_count_min) {
    throw InvalidArgument("domain blob_count_range is empty");
  }
  if (!(spec.blob_radius_min > 0.0) || spec.blob_radius_max < spec.blob_radius_min) {
    throw InvalidArgument("domain blob_radius_range is empty");
  }
  if (!(spec.noise_sigma >= 0.0)) throw InvalidArgument("domain noise_sigma must be >= 0");
  if (!std::isfinite(spec.gain) || !std::isfinite(spec.bias) || !std::isfinite(spec.texture_freq)) {
    throw InvalidArgument("domain parameters must be finite");
  }
}

struct Blob {
  double cx, cy, rx, ry, cos_t, sin_t;
};

Sample render_sample(const DomainSpec& spec, std::size_t h, std::size_t w, Rng& rng) {
  const auto count = rng.uniform_int(spec.blob_count_min, spec.blob_count_max);
  std::vector<Blob> blobs;
  for (std::int64_t i = 0; i < count; ++i) {
    const double theta = rng.uniform(0.0, std::numbers::pi);
    blobs.push_back({rng.uniform(0.0, static_cast<double>(w)), rng.uniform(0.0, static_cast<double>(h)),
                     rng.uniform(spec.blob_radius_min, spec.blob_radius_max),
                     rng.uniform(spec.blob_radius_min, spec.blob_radius_max), std::cos(theta), std::sin(theta)});
  }
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double orient = rng.uniform(0.0, std::numbers::pi);

  Sample s{Tensor({1, h, w}), Tensor({1, h, w})};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double px = static_cast<double>(x) + 0.5;
      const double py = static_cast<double>(y) + 0.5;
      bool inside = false;
      double base = 0.0;
      for (const auto& b : blobs) {
        const double dx = px - b.cx, dy = py - b.cy;
        const double u = (dx * b.cos_t + dy * b.sin_t) / b.rx;
        const double v = (-dx * b.sin_t + dy * b.cos_t) / b.ry;
        const double q = u * u + v * v;
        if (q <= 1.0) {
          inside = true;
          // Radial shading: 1 at the centre, 0.5 on the rim, 0 outside.
          base = std::max(base, 1.0 - 0.5 * q);
        }
      }
      const double along = (px * std::cos(orient)) / static_cast<double>(w) +
                           (py * std::sin(orient)) / static_cast<double>(h);
      const double texture =
          kTextureAmplitude * (0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * spec.texture_freq * along + phase));
      double value = spec.gain * (base + texture) + spec.bias;
      if (spec.noise_sigma > 0.0) value += spec.noise_sigma * rng.normal();
      const std::size_t i = y * w + x;
      s.image.data[i] = static_cast<double>(static_cast<float>(value));
      s.mask.data[i] = inside ? 1.0 : 0.0;
    }
  }
  return s;
}

// --- little-endian encoding -------------------------------------------------

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

json domain_to_json(const DomainSpec& d) {
  return {{"gain", d.gain},
          {"bias", d.bias},
          {"noise_sigma", d.noise_sigma},
          {"blob_count_range", {d.blob_count_min, d.blob_count_max}},
          {"blob_radius_range", {d.blob_radius_min, d.blob_radius_max}},
          {"texture_freq", d.texture_freq}};
}

DomainSpec domain_from_json(const json& j) {
  DomainSpec d;
  d.gain = j.at("gain").get<double>();
  d.bias = j.at("bias").get<double>();
  d.noise_sigma = j.at("noise_sigma").get<double>();
  d.blob_count_min = j.at("blob_count_range").at(0).get<int>();
  d.blob_count_max = j.at("blob_count_range").at(1).get<int>();
  d.blob_radius_min = j.at("blob_radius_range").at(0).get<double>();
  d.blob_radius_max = j.at("blob_radius_range").at(1).get<double>();
  d.texture_freq = j.at("texture_freq").get<double>();
  return d;
}

// Finds a length-prefixed JSON footer that runs exactly to the end of file.
std::optional<std::size_t> locate_footer(const std::vector<std::uint8_t>& bytes) {
  for (std::size_t pos = bytes.size(); pos-- > kHeaderBytes + 8;) {
    if (bytes[pos] != '{') continue;
    if (get_u64(bytes.data() + pos - 8) == bytes.size() - pos) return pos - 8;
  }
  return std::nullopt;
}

}  // namespace

std::vector<Sample> DatasetBundle::split(Split which) const {
  const auto& idx = which == Split::train ? train_index : which == Split::val ? val_index : test_index;
  std::vector<Sample> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(samples.at(i));
  return out;
}

DatasetBundle generate_client_dataset(const DomainSpec& spec, std::size_t n, std::size_t height, std::size_t width,
                                      std::uint64_t seed, const SplitRatios& ratios) {
  validate_spec(spec);
  if (n < 10) throw InvalidArgument("dataset needs n >= 10, got " + std::to_string(n));
  if (height < 8 || width < 8) throw InvalidArgument("dataset images must be at least 8x8");
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw InvalidArgument("split ratios must be non-negative and sum to 1");
  }

  DatasetBundle bundle;
  bundle.height = height;
  bundle.width = width;
  bundle.domain = spec;
  bundle.ratios = ratios;
  bundle.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(mix_seed({seed, 0x5a4d, i}));
    bundle.samples.push_back(render_sample(spec, height, width, rng));
  }

  Rng split_rng(mix_seed({seed, 0x5917}));
  const auto perm = split_rng.permutation(n);
  const auto n_train = static_cast<std::size_t>(std::llround(ratios.train * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(ratios.val * static_cast<double>(n))));
  bundle.train_index.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  bundle.val_index.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                          perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  bundle.test_index.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());
  return bundle;
}

std::vector<DomainSpec> benchmark_domains(std::string_view name) {
  if (name == "shift4") {
    const double gains[] = {0.6, 1.0, 1.4, 1.0};
    const double biases[] = {0.0, 0.0, 0.2, -0.2};
    const double noise[] = {0.02, 0.05, 0.02, 0.10};
    const double freqs[] = {1.0, 2.0, 3.0, 4.0};
    std::vector<DomainSpec> out;
    for (int k = 0; k < 4; ++k) {
      DomainSpec d;
      d.gain = gains[k];
      d.bias = biases[k];
      d.noise_sigma = noise[k];
      d.texture_freq = freqs[k];
      out.push_back(d);
    }
    return out;
  }
  throw InvalidArgument("unknown benchmark '" + std::string(name) + "'");
}

void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& path) {
  const std::size_t plane = bundle.height * bundle.width;
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + bundle.samples.size() * plane * 5 + 1024);
  out.insert(out.end(), std::begin(kDatasetMagic), std::end(kDatasetMagic));
  put_u32(out, kDatasetVersion);
  put_u32(out, static_cast<std::uint32_t>(bundle.samples.size()));
  put_u32(out, static_cast<std::uint32_t>(bundle.height));
  put_u32(out, static_cast<std::uint32_t>(bundle.width));
  for (const auto& s : bundle.samples) {
    if (s.image.size() != plane || s.mask.size() != plane) {
      throw ShapeError("sample does not match bundle size " + std::to_string(bundle.height) + "x" +
                       std::to_string(bundle.width));
    }
    for (double v : s.image.data) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    for (double v : s.mask.data) {
      if (v != 0.0 && v != 1.0) throw InvalidArgument("mask values must be binary");
      out.push_back(v == 1.0 ? 1 : 0);
    }
  }
  const json footer = {{"shape", {{"count", bundle.samples.size()}, {"height", bundle.height}, {"width", bundle.width}}},
                       {"domain", domain_to_json(bundle.domain)},
                       {"split_ratios", {bundle.ratios.train, bundle.ratios.val, bundle.ratios.test}},
                       {"splits", {{"train", bundle.train_index}, {"val", bundle.val_index}, {"test", bundle.test_index}}}};
  const std::string text = footer.dump();
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error("cannot open '" + path.string() + "' for writing");
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) throw Error("write to '" + path.string() + "' failed");
}

DatasetBundle load_dataset(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw Error("cannot open '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

  if (bytes.size() < sizeof(kDatasetMagic)) throw TruncatedFileError("dataset file truncated inside header");
  if (std::memcmp(bytes.data(), kDatasetMagic, sizeof(kDatasetMagic)) != 0) {
    throw FormatError("bad magic: expected \"FLWRDS1\\0\"");
  }
  if (bytes.size() < kHeaderBytes) throw TruncatedFileError("dataset file truncated inside header");
  const std::uint32_t version = get_u32(bytes.data() + 8);
  if (version != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(version));
  const std::size_t count = get_u32(bytes.data() + 12);
  const std::size_t height = get_u32(bytes.data() + 16);
  const std::size_t width = get_u32(bytes.data() + 20);
  const std::size_t plane = height * width;
  const std::size_t footer_at = kHeaderBytes + count * plane * 5;

  const bool header_consistent =
      bytes.size() >= footer_at + 8 && get_u64(bytes.data() + footer_at) == bytes.size() - footer_at - 8;
  if (!header_consistent) {
    // Either the file was cut short or the header disagrees with the payload.
    // A self-consistent footer elsewhere carries the real shape.
    const auto found = locate_footer(bytes);
    if (!found) throw TruncatedFileError("dataset file truncated: payload or footer incomplete");
    json footer;
    try {
      footer = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(*found + 8), bytes.end());
    } catch (const json::exception&) {
      throw TruncatedFileError("dataset file truncated: footer unreadable");
    }
    const auto& shape = footer.value("shape", json::object());
    throw ShapeMismatchError("header declares " + std::to_string(count) + " samples of " + std::to_string(height) +
                             "x" + std::to_string(width) + " but payload holds " + shape.dump());
  }

  DatasetBundle bundle;
  bundle.height = height;
  bundle.width = width;
  bundle.samples.reserve(count);
  const std::uint8_t* p = bytes.data() + kHeaderBytes;
  for (std::size_t s = 0; s < count; ++s) {
    Sample sample{Tensor({1, height, width}), Tensor({1, height, width})};
    for (std::size_t i = 0; i < plane; ++i, p += 4) {
      sample.image.data[i] = static_cast<double>(std::bit_cast<float>(get_u32(p)));
    }
    for (std::size_t i = 0; i < plane; ++i, ++p) {
      if (*p > 1) throw FormatError("mask byte " + std::to_string(*p) + " is not binary");
      sample.mask.data[i] = *p;
    }
    bundle.samples.push_back(std::move(sample));
  }

  json footer;
  try {
    footer = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(footer_at + 8), bytes.end());
    const auto& shape = footer.at("shape");
    if (shape.at("count").get<std::size_t>() != count || shape.at("height").get<std::size_t>() != height ||
        shape.at("width").get<std::size_t>() != width) {
      throw ShapeMismatchError("footer shape " + shape.dump() + " disagrees with header");
    }
    bundle.domain = domain_from_json(footer.at("domain"));
    const auto& r = footer.at("split_ratios");
    bundle.ratios = {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>()};
    const auto& splits = footer.at("splits");
    bundle.train_index = splits.at("train").get<std::vector<std::size_t>>();
    bundle.val_index = splits.at("val").get<std::vector<std::size_t>>();
    bundle.test_index = splits.at("test").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed dataset footer: ") + e.what());
  }

  std::set<std::size_t> seen;
  for (const auto* idx : {&bundle.train_index, &bundle.val_index, &bundle.test_index}) {
    for (auto i : *idx) {
      if (i >= count || !seen.insert(i).second) {
        throw ShapeMismatchError("split index " + std::to_string(i) + " out of range or repeated");
      }
    }
  }
  if (seen.size() != count) throw ShapeMismatchError("split indices do not cover all samples");
  return bundle;
}

Tensor stack_images(std::span<const Sample> samples) {
  if (samples.empty()) throw InvalidArgument("cannot stack an empty sample list");
  const auto& first = samples.front().image.shape;
  Tensor out({samples.size(), 1, first.at(1), first.at(2)});
  auto it = out.data.begin();
  for (const auto& s : samples) {
    if (s.image.shape != first) throw ShapeError("samples have different image shapes");
    it = std::copy(s.image.data.begin(), s.image.data.end(), it);
  }
  return out;
}

Tensor stack_masks(std::span<const Sample> samples) {
  if (samples.empty()) throw InvalidArgument("cannot stack an empty sample list");
  const auto& first = samples.front().mask.shape;
  Tensor out({samples.size(), 1, first.at(1), first.at(2)});
  auto it = out.data.begin();
  for (const auto& s : samples) {
    if (s.mask.shape != first) throw ShapeError("samples have different mask shapes");
    it = std::copy(s.mask.data.begin(), s.mask.data.end(), it);
  }
  return out;
}

}  // namespace fedlwr
