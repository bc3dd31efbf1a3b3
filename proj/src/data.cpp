#include "ha2f/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "ha2f/errors.hpp"
#include "ha2f/rng.hpp"

namespace fs = std::filesystem;

namespace ha2f {

void SynthConfig::validate() const {
  if (size <= 0 || size % 16 != 0) throw ConfigError("synth size must be a positive multiple of 16");
  if (n_objects_min < 0 || n_objects_max < n_objects_min)
    throw ConfigError("synth n_objects range is empty");
  if (change_fraction_lo < 0.0 || change_fraction_hi >= 1.0 ||
      change_fraction_hi < change_fraction_lo)
    throw ConfigError("synth change_fraction range must satisfy 0 <= lo <= hi < 1");
  if (jitter_brightness < 0.0 || jitter_contrast < 0.0)
    throw ConfigError("synth jitter amplitudes must be >= 0");
  if (noise_sigma < 0.0) throw ConfigError("synth noise_sigma must be >= 0");
  if (shift_px < 0) throw ConfigError("synth shift_px must be >= 0");
}

namespace {

struct Obj {
  bool ellipse = false;
  int cx = 0, cy = 0, rx = 1, ry = 1;
  double col[3] = {0, 0, 0};
};

bool covers(const Obj& o, int x, int y) {
  if (std::abs(x - o.cx) > o.rx || std::abs(y - o.cy) > o.ry) return false;
  if (!o.ellipse) return true;
  double ex = double(x - o.cx) / o.rx, ey = double(y - o.cy) / o.ry;
  return ex * ex + ey * ey <= 1.0;
}

long pixel_area(const Obj& o) {
  long n = 0;
  for (int y = o.cy - o.ry; y <= o.cy + o.ry; ++y)
    for (int x = o.cx - o.rx; x <= o.cx + o.rx; ++x)
      if (covers(o, x, y)) ++n;
  return n;
}

// Bounding boxes with a 1px margin so opaque objects never touch.
bool boxes_clash(const Obj& a, const Obj& b) {
  return std::abs(a.cx - b.cx) <= a.rx + b.rx + 1 && std::abs(a.cy - b.cy) <= a.ry + b.ry + 1;
}

Obj propose(Rng& rng, int size, int rmax) {
  Obj o;
  o.ellipse = rng.bernoulli(0.5);
  int rmin = std::max(2, size / 16);
  rmax = std::max(rmin, rmax);
  o.rx = rng.uniform_int(rmin, rmax);
  o.ry = rng.uniform_int(rmin, rmax);
  o.cx = rng.uniform_int(o.rx, size - 1 - o.rx);
  o.cy = rng.uniform_int(o.ry, size - 1 - o.ry);
  for (double& c : o.col) c = rng.uniform();
  return o;
}

void draw(Image& img, const Obj& o) {
  for (int y = o.cy - o.ry; y <= o.cy + o.ry; ++y)
    for (int x = o.cx - o.rx; x <= o.cx + o.rx; ++x)
      if (covers(o, x, y))
        for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = o.col[ch];
}

Image blur(const Image& img, int radius, double sigma) {
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;

  Image tmp = img, out = img;
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[i + radius] * img.at(c, y, std::clamp(x + i, 0, img.w - 1));
        tmp.at(c, y, x) = acc;
      }
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[i + radius] * tmp.at(c, std::clamp(y + i, 0, img.h - 1), x);
        out.at(c, y, x) = acc;
      }
  return out;
}

Image shift_clamped(const Image& img, int dx, int dy) {
  Image out = img;
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        out.at(c, y, x) =
            img.at(c, std::clamp(y - dy, 0, img.h - 1), std::clamp(x - dx, 0, img.w - 1));
  return out;
}

Image to_rgb(Image img) {
  if (img.c == 3) return img;
  Image out{img.h, img.w, 3, {}};
  out.v.resize(size_t(3) * img.h * img.w);
  for (int ch = 0; ch < 3; ++ch)
    std::copy(img.v.begin(), img.v.end(), out.v.begin() + size_t(ch) * img.h * img.w);
  return out;
}

}  // namespace

ImagePair synth_pair(const SynthConfig& cfg, int index) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, "synth", uint64_t(index)));
  const int s = cfg.size;

  Image bg{s, s, 3, {}};
  bg.v.resize(size_t(3) * s * s);
  for (double& v : bg.v) v = rng.uniform();
  bg = blur(bg, 4, 2.0);

  std::vector<Obj> placed;
  std::vector<Obj> base;
  int n_base = rng.uniform_int(cfg.n_objects_min, cfg.n_objects_max);
  for (int i = 0; i < n_base; ++i) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      Obj o = propose(rng, s, s / 8);
      if (std::none_of(placed.begin(), placed.end(), [&](const Obj& p) { return boxes_clash(o, p); })) {
        placed.push_back(o);
        base.push_back(o);
        break;
      }
    }
  }

  // Added/removed objects until the changed fraction lands in the target window.
  std::vector<Obj> added, removed;
  long changed = 0;
  const long total = long(s) * s;
  if (cfg.change_fraction_hi > 0.0) {
    int attempts = 0;
    while (double(changed) / total < cfg.change_fraction_lo) {
      if (++attempts > 100)
        throw DataError("synth: no placement reached change_fraction in [" +
                        std::to_string(cfg.change_fraction_lo) + ", " +
                        std::to_string(cfg.change_fraction_hi) + "] after 100 attempts");
      // Cap the proposal so its bounding box fits the remaining change budget.
      long remaining = long(cfg.change_fraction_hi * total) - changed;
      int rcap = std::min(s / 8, int((std::sqrt(double(remaining)) - 1.0) / 2.0));
      Obj o = propose(rng, s, rcap);
      bool remove = rng.bernoulli(0.5);
      if (std::any_of(placed.begin(), placed.end(), [&](const Obj& p) { return boxes_clash(o, p); }))
        continue;
      long area = pixel_area(o);
      if (double(changed + area) / total > cfg.change_fraction_hi) continue;
      placed.push_back(o);
      (remove ? removed : added).push_back(o);
      changed += area;
    }
  }

  ImagePair pair;
  char id[32];
  std::snprintf(id, sizeof id, "synth_%04d", index);
  pair.id = id;
  pair.a = bg;
  Image b = bg;
  for (const Obj& o : base) {
    draw(pair.a, o);
    draw(b, o);
  }
  for (const Obj& o : removed) draw(pair.a, o);
  for (const Obj& o : added) draw(b, o);

  pair.label.h = s;
  pair.label.w = s;
  pair.label.v.assign(size_t(s) * s, 0);
  for (const Obj& o : added)
    for (int y = o.cy - o.ry; y <= o.cy + o.ry; ++y)
      for (int x = o.cx - o.rx; x <= o.cx + o.rx; ++x)
        if (covers(o, x, y)) pair.label.v[size_t(y) * s + x] = 1;
  for (const Obj& o : removed)
    for (int y = o.cy - o.ry; y <= o.cy + o.ry; ++y)
      for (int x = o.cx - o.rx; x <= o.cx + o.rx; ++x)
        if (covers(o, x, y)) pair.label.v[size_t(y) * s + x] = 1;

  // Phase-2-only nuisances: misregistration, photometric jitter, sensor noise.
  int dx = int(rng.uniform_int(-cfg.shift_px, cfg.shift_px));
  int dy = int(rng.uniform_int(-cfg.shift_px, cfg.shift_px));
  if (dx != 0 || dy != 0) b = shift_clamped(b, dx, dy);
  double brightness = cfg.jitter_brightness * rng.uniform(-1.0, 1.0);
  double contrast = 1.0 + cfg.jitter_contrast * rng.uniform(-1.0, 1.0);
  for (double& v : b.v) v = (v - 0.5) * contrast + 0.5 + brightness;
  if (cfg.noise_sigma > 0.0)
    for (double& v : b.v) v += cfg.noise_sigma * rng.normal();
  pair.b = std::move(b);

  // Snap to the 8-bit grid so a written corpus loads back bit-identically.
  for (Image* img : {&pair.a, &pair.b})
    for (double& v : img->v) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return pair;
}

std::vector<ImagePair> load_dataset(const std::string& root, const std::string& split) {
  fs::path base = fs::path(root) / split;
  fs::path da = base / "A", db = base / "B", dl = base / "label";
  if (!fs::is_directory(da)) throw DataError("dataset directory not found: " + da.string());

  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(da))
    if (e.is_regular_file() && e.path().extension() == ".png") names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  if (names.empty()) throw DataError("no .png files in " + da.string());

  std::vector<ImagePair> out;
  out.reserve(names.size());
  for (const std::string& name : names) {
    fs::path pb = db / name, pl = dl / name;
    if (!fs::is_regular_file(pb)) throw DataError("missing counterpart " + pb.string() + " for " + name);
    if (!fs::is_regular_file(pl)) throw DataError("missing label " + pl.string() + " for " + name);

    ImagePair pair;
    pair.id = fs::path(name).stem().string();
    pair.a = to_rgb(read_png((da / name).string()));
    pair.b = to_rgb(read_png(pb.string()));
    Image lab = read_png(pl.string());
    if (pair.a.h != pair.b.h || pair.a.w != pair.b.w || lab.h != pair.a.h || lab.w != pair.a.w)
      throw DataError("size mismatch between A/B/label for " + name);
    pair.label.h = lab.h;
    pair.label.w = lab.w;
    pair.label.v.resize(size_t(lab.h) * lab.w);
    for (size_t i = 0; i < pair.label.v.size(); ++i)
      pair.label.v[i] = lab.v[i] > 127.0 / 255.0 ? 1 : 0;  // channel 0; >127 of 255
    out.push_back(std::move(pair));
  }
  return out;
}

Image resize_bilinear(const Image& img, int oh, int ow) {
  Image out{oh, ow, img.c, {}};
  out.v.resize(size_t(img.c) * oh * ow);
  double sy = double(img.h) / oh, sx = double(img.w) / ow;
  for (int y = 0; y < oh; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = std::clamp(int(std::floor(fy)), 0, img.h - 1);
    int y1 = std::min(y0 + 1, img.h - 1);
    double wy = std::clamp(fy - std::floor(fy), 0.0, 1.0);
    if (fy < 0) wy = 0.0;
    for (int x = 0; x < ow; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = std::clamp(int(std::floor(fx)), 0, img.w - 1);
      int x1 = std::min(x0 + 1, img.w - 1);
      double wx = std::clamp(fx - std::floor(fx), 0.0, 1.0);
      if (fx < 0) wx = 0.0;
      for (int c = 0; c < img.c; ++c) {
        double top = img.at(c, y0, x0) * (1 - wx) + img.at(c, y0, x1) * wx;
        double bot = img.at(c, y1, x0) * (1 - wx) + img.at(c, y1, x1) * wx;
        out.at(c, y, x) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

BinaryMask resize_nearest(const BinaryMask& m, int oh, int ow) {
  BinaryMask out{oh, ow, {}};
  out.v.resize(size_t(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    int sy = std::min(int((y + 0.5) * m.h / oh), m.h - 1);
    for (int x = 0; x < ow; ++x) {
      int sx = std::min(int((x + 0.5) * m.w / ow), m.w - 1);
      out.v[size_t(y) * ow + x] = m.v[size_t(sy) * m.w + sx];
    }
  }
  return out;
}

namespace {

void flip_image(Image& img, bool horiz) {
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < (horiz ? img.h : img.h / 2); ++y)
      for (int x = 0; x < (horiz ? img.w / 2 : img.w); ++x) {
        int yy = horiz ? y : img.h - 1 - y, xx = horiz ? img.w - 1 - x : x;
        std::swap(img.at(c, y, x), img.at(c, yy, xx));
      }
}

void flip_mask(BinaryMask& m, bool horiz) {
  for (int y = 0; y < (horiz ? m.h : m.h / 2); ++y)
    for (int x = 0; x < (horiz ? m.w / 2 : m.w); ++x) {
      int yy = horiz ? y : m.h - 1 - y, xx = horiz ? m.w - 1 - x : x;
      std::swap(m.v[size_t(y) * m.w + x], m.v[size_t(yy) * m.w + xx]);
    }
}

Image crop_image(const Image& img, int oy, int ox, int size) {
  Image out{size, size, img.c, {}};
  out.v.resize(size_t(img.c) * size * size);
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) out.at(c, y, x) = img.at(c, oy + y, ox + x);
  return out;
}

BinaryMask crop_mask(const BinaryMask& m, int oy, int ox, int size) {
  BinaryMask out{size, size, {}};
  out.v.resize(size_t(size) * size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) out.v[size_t(y) * size + x] = m.v[size_t(oy + y) * m.w + ox + x];
  return out;
}

}  // namespace

ImagePair augment(const ImagePair& pair, uint64_t seed, int crop_size) {
  int h = pair.a.h, w = pair.a.w;
  if (crop_size < 1 || crop_size > h || crop_size > w)
    throw ContractError("augment crop_size " + std::to_string(crop_size) +
                        " out of range for " + std::to_string(h) + "x" + std::to_string(w));

  Rng rng(seed);
  bool hflip = rng.bernoulli(0.5), vflip = rng.bernoulli(0.5);
  long oy = rng.uniform_int(0, h - crop_size), ox = rng.uniform_int(0, w - crop_size);

  ImagePair out = pair;
  if (hflip) {
    flip_image(out.a, true);
    flip_image(out.b, true);
    flip_mask(out.label, true);
  }
  if (vflip) {
    flip_image(out.a, false);
    flip_image(out.b, false);
    flip_mask(out.label, false);
  }
  if (crop_size != h || crop_size != w) {
    out.a = resize_bilinear(crop_image(out.a, int(oy), int(ox), crop_size), h, w);
    out.b = resize_bilinear(crop_image(out.b, int(oy), int(ox), crop_size), h, w);
    out.label = resize_nearest(crop_mask(out.label, int(oy), int(ox), crop_size), h, w);
  }
  return out;
}

void write_pair(const std::string& dir, const ImagePair& pair) {
  for (const char* sub : {"A", "B", "label"}) fs::create_directories(fs::path(dir) / sub);
  std::string name = pair.id + ".png";
  write_png((fs::path(dir) / "A" / name).string(), pair.a);
  write_png((fs::path(dir) / "B" / name).string(), pair.b);
  Image lab{pair.label.h, pair.label.w, 1, {}};
  lab.v.resize(pair.label.v.size());
  for (size_t i = 0; i < lab.v.size(); ++i) lab.v[i] = pair.label.v[i] ? 1.0 : 0.0;
  write_png((fs::path(dir) / "label" / name).string(), lab);
}

}  // namespace ha2f
