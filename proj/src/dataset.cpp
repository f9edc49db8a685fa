#include "mpl/dataset.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "json.hpp"
#include "mpl/error.hpp"

namespace mpl {

namespace {

constexpr std::array<char, 4> kMagic{'M', 'P', 'L', 'D'};
constexpr std::uint16_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "dataset I/O assumes a little-endian host");

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

Tensor FewShotDataset::image(std::size_t i) const {
  if (i >= size()) {
    throw BoundsError("image " + std::to_string(i) + " outside dataset of " +
                      std::to_string(size()));
  }
  const std::size_t n = image_values();
  return Tensor({height, width, 3},
                std::vector<double>(pixels.begin() + i * n,
                                    pixels.begin() + (i + 1) * n));
}

std::vector<std::size_t> FewShotDataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes(), 0);
  for (std::size_t y : labels) ++counts.at(y);
  return counts;
}

void FewShotDataset::validate() const {
  if (pixels.size() != size() * image_values()) {
    throw DataError("dataset holds " + std::to_string(pixels.size()) +
                    " pixel values for " + std::to_string(size()) +
                    " images of " + std::to_string(height) + "x" +
                    std::to_string(width) + "x3");
  }
  for (std::size_t y : labels) {
    if (y >= num_classes()) {
      throw DataError("label " + std::to_string(y) + " but only " +
                      std::to_string(num_classes()) + " classes");
    }
  }
  for (const auto& name : class_names) {
    if (name.empty()) throw DataError("empty class name");
  }
}

FewShotDataset make_synthetic_dataset(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw DataError("synthetic dataset needs >= 2 classes");
  if (spec.per_class == 0) throw DataError("per_class must be >= 1");
  if (spec.noise < 0.0) throw DataError("noise must be >= 0");
  if (spec.patch_size == 0 || spec.height % spec.patch_size != 0 ||
      spec.width % spec.patch_size != 0) {
    throw DataError("image size must be a multiple of the patch size");
  }
  if (spec.first_name_token >= spec.vocab_size || spec.name_length == 0) {
    throw DataError("no room for class-name tokens in the vocabulary");
  }

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> token(spec.first_name_token,
                                                   spec.vocab_size - 1);

  FewShotDataset ds;
  ds.height = spec.height;
  ds.width = spec.width;

  const double name_space =
      std::pow(static_cast<double>(spec.vocab_size - spec.first_name_token),
               static_cast<double>(spec.name_length));
  if (name_space < static_cast<double>(spec.classes)) {
    throw DataError("vocabulary too small for distinct class names");
  }
  std::set<std::vector<std::size_t>> used;
  while (ds.class_names.size() < spec.classes) {
    std::vector<std::size_t> name(spec.name_length);
    for (auto& t : name) t = token(rng);
    if (used.insert(name).second) ds.class_names.push_back(std::move(name));
  }

  const std::size_t gr = spec.height / spec.patch_size;
  const std::size_t gc = spec.width / spec.patch_size;
  const auto pattern = [&](std::mt19937_64& g) {
    std::vector<double> colours(gr * gc * 3);
    for (double& c : colours) c = unit(g);
    return colours;
  };
  std::vector<std::vector<double>> prototypes;
  for (std::size_t c = 0; c < spec.classes; ++c) prototypes.push_back(pattern(rng));
  if (spec.prototype_shift != 0.0) {
    std::mt19937_64 shift_rng(spec.shift_seed);
    for (auto& proto : prototypes) {
      const auto other = pattern(shift_rng);
      for (std::size_t k = 0; k < proto.size(); ++k) {
        proto[k] = (1.0 - spec.prototype_shift) * proto[k] +
                   spec.prototype_shift * other[k];
      }
    }
  }

  std::mt19937_64 noise_rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t n = spec.classes * spec.per_class;
  ds.pixels.reserve(n * spec.height * spec.width * 3);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t s = 0; s < spec.per_class; ++s) {
      for (std::size_t y = 0; y < spec.height; ++y) {
        for (std::size_t x = 0; x < spec.width; ++x) {
          const std::size_t cell =
              (y / spec.patch_size) * gc + x / spec.patch_size;
          for (std::size_t ch = 0; ch < 3; ++ch) {
            double v = prototypes[c][cell * 3 + ch];
            if (spec.noise > 0.0) v += spec.noise * gauss(noise_rng);
            ds.pixels.push_back(std::clamp(v, 0.0, 1.0));
          }
        }
      }
      ds.labels.push_back(c);
    }
  }
  return ds;
}

FewShotDataset select_samples(const FewShotDataset& ds,
                              std::span<const std::size_t> indices) {
  FewShotDataset out;
  out.height = ds.height;
  out.width = ds.width;
  out.class_names = ds.class_names;
  out.split_tag = ds.split_tag;
  const std::size_t n = ds.image_values();
  out.pixels.reserve(indices.size() * n);
  for (std::size_t i : indices) {
    if (i >= ds.size()) {
      throw BoundsError("sample " + std::to_string(i) + " outside dataset");
    }
    out.pixels.insert(out.pixels.end(), ds.pixels.begin() + i * n,
                      ds.pixels.begin() + (i + 1) * n);
    out.labels.push_back(ds.labels[i]);
  }
  return out;
}

FewShotDataset subset_classes(const FewShotDataset& ds,
                              std::span<const std::size_t> classes,
                              std::string split_tag) {
  std::vector<std::size_t> remap(ds.num_classes(), SIZE_MAX);
  for (std::size_t k = 0; k < classes.size(); ++k) {
    if (classes[k] >= ds.num_classes()) {
      throw DataError("class " + std::to_string(classes[k]) +
                      " not in dataset");
    }
    remap[classes[k]] = k;
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (remap[ds.labels[i]] != SIZE_MAX) keep.push_back(i);
  }
  FewShotDataset out = select_samples(ds, keep);
  for (auto& y : out.labels) y = remap[y];
  out.class_names.clear();
  for (std::size_t c : classes) out.class_names.push_back(ds.class_names[c]);
  out.split_tag = std::move(split_tag);
  return out;
}

FewShotSplit split_few_shot(const FewShotDataset& ds, std::size_t shots,
                            std::uint64_t seed) {
  ds.validate();
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes());
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> train, holdout;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.size() < shots) {
      throw DataError("class " + std::to_string(c) + " has " +
                      std::to_string(idx.size()) + " samples, " +
                      std::to_string(shots) + " shots requested");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    std::sort(idx.begin(), idx.begin() + shots);
    std::sort(idx.begin() + shots, idx.end());
    train.insert(train.end(), idx.begin(), idx.begin() + shots);
    holdout.insert(holdout.end(), idx.begin() + shots, idx.end());
  }
  return {select_samples(ds, train), select_samples(ds, holdout)};
}

FewShotDataset sample_few_shot(const FewShotDataset& ds, std::size_t shots,
                               std::uint64_t seed) {
  return split_few_shot(ds, shots, seed).train;
}

void write_dataset(const FewShotDataset& ds, const std::filesystem::path& dir) {
  ds.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  if (ds.size() > UINT32_MAX || ds.height > UINT16_MAX ||
      ds.width > UINT16_MAX) {
    throw DataError("dataset too large for the binary header");
  }

  nlohmann::json manifest;
  manifest["format"] = "mpl-dataset";
  manifest["version"] = kVersion;
  manifest["height"] = ds.height;
  manifest["width"] = ds.width;
  manifest["channels"] = 3;
  manifest["count"] = ds.size();
  manifest["split"] = ds.split_tag;
  manifest["class_names"] = ds.class_names;
  manifest["class_counts"] = ds.class_counts();
  manifest["labels"] = ds.labels;
  manifest["payload"] = "images.bin";
  {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
  }

  std::ofstream out(dir / "images.bin", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "images.bin").string());
  out.write(kMagic.data(), kMagic.size());
  put<std::uint16_t>(out, kVersion);
  put<std::uint16_t>(out, 3);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.size()));
  put<std::uint16_t>(out, static_cast<std::uint16_t>(ds.height));
  put<std::uint16_t>(out, static_cast<std::uint16_t>(ds.width));
  out.write(reinterpret_cast<const char*>(ds.pixels.data()),
            static_cast<std::streamsize>(ds.pixels.size() * sizeof(double)));
  if (!out) throw IoError("short write to " + (dir / "images.bin").string());
}

FewShotDataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw IoError("cannot open " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest in " + dir.string() + ": " + e.what());
  }

  FewShotDataset ds;
  try {
    ds.height = manifest.at("height").get<std::size_t>();
    ds.width = manifest.at("width").get<std::size_t>();
    ds.split_tag = manifest.value("split", std::string("all"));
    ds.class_names =
        manifest.at("class_names").get<std::vector<std::vector<std::size_t>>>();
    ds.labels = manifest.at("labels").get<std::vector<std::size_t>>();
    if (manifest.value("channels", 3) != 3) {
      throw DataError("only 3-channel images are supported");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest in " + dir.string() + ": " + e.what());
  }
  const std::string payload = manifest.value("payload", "images.bin");

  std::ifstream in(dir / payload, std::ios::binary);
  if (!in) throw IoError("cannot open " + (dir / payload).string());
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (magic != kMagic) throw DataError("bad magic in " + payload);
  const auto version = get<std::uint16_t>(in);
  const auto channels = get<std::uint16_t>(in);
  const auto n = get<std::uint32_t>(in);
  const auto h = get<std::uint16_t>(in);
  const auto w = get<std::uint16_t>(in);
  if (!in) throw IoError("truncated header in " + payload);
  if (version != kVersion) {
    throw DataError("unsupported dataset version " + std::to_string(version));
  }
  if (channels != 3 || n != ds.labels.size() || h != ds.height ||
      w != ds.width) {
    throw DataError("binary header disagrees with manifest in " +
                    dir.string());
  }
  ds.pixels.resize(static_cast<std::size_t>(n) * h * w * 3);
  in.read(reinterpret_cast<char*>(ds.pixels.data()),
          static_cast<std::streamsize>(ds.pixels.size() * sizeof(double)));
  if (!in) throw IoError("truncated payload in " + payload);
  ds.validate();
  return ds;
}

}  // namespace mpl
