#include "sslbd/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "sslbd/errors.hpp"
#include "sslbd/hashing.hpp"
#include "sslbd/rng.hpp"

namespace sslbd {

namespace fs = std::filesystem;

const std::vector<std::string>& synthetic_class_names() {
  static const std::vector<std::string> names{"disc",    "square",  "triangle", "cross",   "ring",
                                              "hstripe", "vstripe", "checker",  "diamond", "ellipse"};
  return names;
}

namespace {

using Rgb = std::array<float, 3>;

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (static_cast<int>(i) % 6) {
    case 0: return {float(v), float(t), float(p)};
    case 1: return {float(q), float(v), float(p)};
    case 2: return {float(p), float(v), float(t)};
    case 3: return {float(p), float(q), float(v)};
    case 4: return {float(t), float(p), float(v)};
    default: return {float(v), float(p), float(q)};
  }
}

double positive_mod(double a, double m) { return a - m * std::floor(a / m); }

// Shape membership for `label` at offset (dx, dy) from the center, radius r.
// Texture classes also use absolute coordinates (x, y) and phase terms.
bool inside(int label, double dx, double dy, double r, double x, double y, double period, double phase,
            bool full_frame) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  const bool box = full_frame || (ax < r && ay < r);
  switch (label) {
    case 0: return dx * dx + dy * dy < r * r;
    case 1: return ax < r * 0.8 && ay < r * 0.8;
    case 2: return dy > -r && ax < (dy + r) * 0.5 && dy < r;
    case 3: return (ax < 2 || ay < 2) && ax < r && ay < r;
    case 4: {
      const double d = std::sqrt(dx * dx + dy * dy);
      return d < r && d > r - 2.5;
    }
    case 5: return box && positive_mod(std::floor((y + phase) / period * 2), 2) == 0;
    case 6: return box && positive_mod(std::floor((x + phase) / period * 2), 2) == 0;
    case 7: return box && positive_mod(std::floor(x / period) + std::floor(y / period), 2) == 0;
    case 8: return ax + ay < r;
    default: return dx * dx / (r * r * 1.8) + dy * dy / (r * r * 0.3) < 1;
  }
}

// Bilinear upsampling of a 4x4 grid of random colors.
std::vector<Rgb> smooth_field(int size, Rng& rng) {
  std::array<Rgb, 16> grid;
  for (auto& g : grid) {
    for (auto& c : g) c = static_cast<float>(uniform01(rng));
  }
  std::vector<Rgb> out(size * size);
  for (int y = 0; y < size; ++y) {
    const double fy = 3.0 * y / (size - 1);
    const int y0 = std::min(2, static_cast<int>(fy));
    const double wy = fy - y0;
    for (int x = 0; x < size; ++x) {
      const double fx = 3.0 * x / (size - 1);
      const int x0 = std::min(2, static_cast<int>(fx));
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double a = grid[y0 * 4 + x0][c], b = grid[y0 * 4 + x0 + 1][c];
        const double d = grid[(y0 + 1) * 4 + x0][c], e = grid[(y0 + 1) * 4 + x0 + 1][c];
        out[y * size + x][c] = static_cast<float>((1 - wy) * ((1 - wx) * a + wx * b) + wy * ((1 - wx) * d + wx * e));
      }
    }
  }
  return out;
}

}  // namespace

Image synthesize_image(const SyntheticSpec& spec, int label, uint64_t image_seed) {
  if (label < 0 || label >= kSyntheticClasses) throw ConfigError("synthetic label out of range");
  if (spec.image_size < 16) throw ConfigError("synthetic images must be at least 16 px");
  const int s = spec.image_size;
  const double scale = s / 32.0;
  Rng rng = make_rng(image_seed);
  std::vector<Rgb> px;
  double r, cx, cy;
  const bool scenes = spec.style == "scenes";
  if (!scenes && spec.style != "shapes") throw ConfigError("unknown synthetic style '" + spec.style + "'");
  const double hue = label / double(kSyntheticClasses) + (scenes ? 0.03 : 0.04) * standard_normal(rng);
  const Rgb fg = scenes ? hsv_to_rgb(hue, uniform(rng, 0.6, 1.0), uniform(rng, 0.7, 1.0))
                        : hsv_to_rgb(hue, uniform(rng, 0.5, 1.0), uniform(rng, 0.6, 1.0));
  if (scenes) {
    px = smooth_field(s, rng);
    for (auto& p : px) {
      for (auto& c : p) c *= 0.6f;
    }
    r = uniform(rng, 5, 8) * scale;
    cx = uniform(rng, r, s - r);
    cy = uniform(rng, r, s - r);
  } else {
    const Rgb bg = hsv_to_rgb(uniform01(rng), uniform(rng, 0, 0.4), uniform(rng, 0, 0.5));
    px.assign(s * s, bg);
    cx = uniform(rng, 10, 22) * scale;
    cy = uniform(rng, 10, 22) * scale;
    r = uniform(rng, 6, 10) * scale;
  }
  const double period = (scenes ? 2.5 : uniform(rng, 4, 8)) * scale;
  const double phase = uniform(rng, 0, 6) * scale;
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      if (inside(label, x - cx, y - cy, r, x, y, period, phase, !scenes)) px[y * s + x] = fg;
    }
  }
  const double noise = scenes ? 0.04 : 0.06;
  Image img(s, s);
  for (int i = 0; i < s * s; ++i) {
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(px[i][c] + noise * standard_normal(rng), 0.0, 1.0);
      img.pixels[i * 3 + c] = static_cast<uint8_t>(v * 255.0);
    }
  }
  return img;
}

void write_synthetic_dataset(const SyntheticSpec& spec, const fs::path& root) {
  const auto& names = synthetic_class_names();
  for (int split = 0; split < 2; ++split) {
    const int count = split == 0 ? spec.train_per_class : spec.val_per_class;
    const char* dir = split == 0 ? "train" : "val";
    for (int c = 0; c < kSyntheticClasses; ++c) {
      fs::create_directories(root / dir / names[c]);
      for (int i = 0; i < count; ++i) {
        const uint64_t seed = derive_seed(derive_seed(spec.seed, split == 0 ? "train" : "val"),
                                          static_cast<uint64_t>(c), static_cast<uint64_t>(i));
        std::ostringstream name;
        name << (split == 0 ? "" : "v") << names[c] << '_' << std::setw(5) << std::setfill('0') << i << ".png";
        write_png(root / dir / names[c] / name.str(), synthesize_image(spec, c, seed));
      }
    }
  }
}

void import_cifar10(const fs::path& bin_dir, const fs::path& root, int limit_per_class) {
  std::vector<std::string> names;
  {
    const auto meta = bin_dir / "batches.meta.txt";
    if (!fs::exists(meta)) throw IoError("missing " + meta.string());
    std::istringstream in(read_text_file(meta));
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) names.push_back(line);
    }
    if (names.size() != 10) throw FormatError("batches.meta.txt must list 10 classes");
  }
  auto convert = [&](const std::vector<std::string>& files, const char* split, const char* prefix) {
    std::vector<int> counts(10, 0);
    for (const auto& f : files) {
      const auto path = bin_dir / f;
      std::ifstream in(path, std::ios::binary);
      if (!in) throw IoError("cannot open " + path.string());
      std::array<unsigned char, 3073> rec;
      while (in.read(reinterpret_cast<char*>(rec.data()), rec.size())) {
        const int label = rec[0];
        if (label > 9) throw FormatError("bad label in " + path.string());
        const int index = counts[label]++;
        if (limit_per_class > 0 && index >= limit_per_class) continue;
        Image img(32, 32);
        for (int p = 0; p < 1024; ++p) {
          for (int c = 0; c < 3; ++c) img.pixels[p * 3 + c] = rec[1 + c * 1024 + p];
        }
        fs::create_directories(root / split / names[label]);
        std::ostringstream name;
        name << prefix << names[label] << '_' << std::setw(5) << std::setfill('0') << index << ".png";
        write_png(root / split / names[label] / name.str(), img);
      }
    }
  };
  convert({"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"},
          "train", "");
  convert({"test_batch.bin"}, "val", "v");
}

}  // namespace sslbd
