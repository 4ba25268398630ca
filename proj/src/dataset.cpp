#include "cp2/dataset.hpp"

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "cp2/error.hpp"

namespace cp2 {

namespace {

struct Color {
  double r, g, b;
};

Color random_color(Rng& rng, double lo, double hi) {
  return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

// Two colors with a guaranteed luma gap so every texture keeps contrast.
void contrasting_pair(Rng& rng, Color& a, Color& b) {
  a = random_color(rng, 0.05, 0.95);
  for (int i = 0; i < 16; ++i) {
    b = random_color(rng, 0.05, 0.95);
    if (std::abs(luma(a.r, a.g, a.b) - luma(b.r, b.g, b.b)) > 0.25) return;
  }
  b = {clamp01(1.0 - a.r), clamp01(1.0 - a.g), clamp01(1.0 - a.b)};
}

using TexFn = std::function<Color(int, int)>;

TexFn make_background_texture(Rng& rng, int size) {
  const Color c1 = random_color(rng, 0.1, 0.9);
  const Color c2 = random_color(rng, 0.1, 0.9);
  const double fx = rng.uniform(0.5, 1.5), fy = rng.uniform(0.5, 1.5);
  const double phase = rng.uniform(0.0, 2.0 * M_PI);
  const double amp = rng.uniform(0.05, 0.15);
  const double inv = 1.0 / size;
  return [=](int y, int x) {
    const double t = (x + y) * 0.5 * inv;
    const double wave = amp * std::sin(2.0 * M_PI * (fx * x + fy * y) * inv + phase);
    return Color{clamp01(c1.r + (c2.r - c1.r) * t + wave),
                 clamp01(c1.g + (c2.g - c1.g) * t + wave),
                 clamp01(c1.b + (c2.b - c1.b) * t + wave)};
  };
}

TexFn make_stripes_texture(Rng& rng) {
  Color c1, c2;
  contrasting_pair(rng, c1, c2);
  const double theta = rng.uniform(0.0, M_PI);
  const double period = rng.uniform(4.0, 10.0);
  const double phase = rng.uniform(0.0, period);
  const double cs = std::cos(theta), sn = std::sin(theta);
  return [=](int y, int x) {
    const double t = x * cs + y * sn + phase;
    return (std::fmod(std::fmod(t, period) + period, period) < period / 2) ? c1 : c2;
  };
}

TexFn make_checker_texture(Rng& rng) {
  Color c1, c2;
  contrasting_pair(rng, c1, c2);
  const int cell = rng.uniform_int(3, 8);
  const int ox = rng.uniform_int(0, cell - 1), oy = rng.uniform_int(0, cell - 1);
  return [=](int y, int x) {
    return (((x + ox) / cell + (y + oy) / cell) % 2 == 0) ? c1 : c2;
  };
}

TexFn make_dots_texture(Rng& rng) {
  Color bg, dot;
  contrasting_pair(rng, bg, dot);
  const int spacing = rng.uniform_int(6, 11);
  const double rad = rng.uniform(1.5, spacing * 0.45);
  const int ox = rng.uniform_int(0, spacing - 1), oy = rng.uniform_int(0, spacing - 1);
  return [=](int y, int x) {
    const int lx = (x + ox) % spacing, ly = (y + oy) % spacing;
    const double dx = lx - spacing / 2.0, dy = ly - spacing / 2.0;
    return (dx * dx + dy * dy <= rad * rad) ? dot : bg;
  };
}

TexFn make_class_texture(Rng& rng, int cls) {
  switch ((cls - 1) % 3) {
    case 0: return make_stripes_texture(rng);
    case 1: return make_checker_texture(rng);
    default: return make_dots_texture(rng);
  }
}

using ShapeFn = std::function<bool(double, double)>;  // pixel-center membership

ShapeFn make_shape(Rng& rng, int cls, int size, int quadrant) {
  // Per-kind scale equalizes the expected pixel mass across shape classes
  // (a triangle on radius r covers ~1.3 r^2 versus ~pi r^2 for a circle).
  constexpr double kKindScale[] = {0.0, 1.0, 1.55, 0.89, 1.04, 0.95};
  const double rad = rng.uniform(size / 6.2, size / 4.6) * kKindScale[cls];
  // One shape per quadrant keeps shapes from occluding each other, which
  // also keeps the class pixel mass stable across datasets.
  const double jitter = size / 16.0;
  const double cx = (quadrant % 2 ? 0.75 : 0.25) * size + rng.uniform(-jitter, jitter);
  const double cy = (quadrant / 2 ? 0.75 : 0.25) * size + rng.uniform(-jitter, jitter);
  switch (cls) {
    case 1:  // circle
      return [=](double x, double y) {
        return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= rad * rad;
      };
    case 2: {  // triangle (three well-spread vertices around the center)
      std::array<double, 3> ang{};
      const double base = rng.uniform(0.0, 2.0 * M_PI);
      for (int i = 0; i < 3; ++i)
        ang[static_cast<std::size_t>(i)] =
            base + i * 2.0 * M_PI / 3.0 + rng.uniform(-0.4, 0.4);
      std::array<double, 3> vx{}, vy{};
      for (int i = 0; i < 3; ++i) {
        const double r = rad * rng.uniform(0.85, 1.25);
        vx[static_cast<std::size_t>(i)] = cx + r * std::cos(ang[static_cast<std::size_t>(i)]);
        vy[static_cast<std::size_t>(i)] = cy + r * std::sin(ang[static_cast<std::size_t>(i)]);
      }
      return [=](double x, double y) {
        const auto cross = [](double ax, double ay, double bx, double by) {
          return ax * by - ay * bx;
        };
        const double d1 = cross(vx[1] - vx[0], vy[1] - vy[0], x - vx[0], y - vy[0]);
        const double d2 = cross(vx[2] - vx[1], vy[2] - vy[1], x - vx[1], y - vy[1]);
        const double d3 = cross(vx[0] - vx[2], vy[0] - vy[2], x - vx[2], y - vy[2]);
        const bool neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
        const bool pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
        return !(neg && pos);
      };
    }
    case 3: {  // rectangle
      const double hw = rad * rng.uniform(0.7, 1.3);
      const double hh = rad * rng.uniform(0.7, 1.3);
      return [=](double x, double y) {
        return std::abs(x - cx) <= hw && std::abs(y - cy) <= hh;
      };
    }
    case 4:  // diamond
      return [=](double x, double y) { return std::abs(x - cx) + std::abs(y - cy) <= rad * 1.2; };
    default: {  // cross
      const double arm = rad * 0.45;
      return [=](double x, double y) {
        return (std::abs(x - cx) <= arm && std::abs(y - cy) <= rad * 1.2) ||
               (std::abs(y - cy) <= arm && std::abs(x - cx) <= rad * 1.2);
      };
    }
  }
}

}  // namespace

SegSample gen_shapes_sample(Rng& rng, int size, int num_classes, int class_base_hint,
                            int n_shapes_hint) {
  if (num_classes < 2 || num_classes > 6)
    throw InvalidConfig("gen_shapes_sample: num_classes must be in [2,6]");
  if (size < 8) throw InvalidConfig("gen_shapes_sample: size must be at least 8");

  SegSample sample;
  sample.image = Image(size, size);
  sample.label.assign(static_cast<std::size_t>(size) * size, 0);

  const TexFn bg = make_background_texture(rng, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const Color c = bg(y, x);
      sample.image.at(y, x, 0) = c.r;
      sample.image.at(y, x, 1) = c.g;
      sample.image.at(y, x, 2) = c.b;
    }

  // Shape classes rotate from a base so each sample draws distinct classes
  // and the per-class pixel mass stays balanced across a dataset. The draws
  // happen unconditionally to keep the rng stream aligned with hinted calls.
  const int n_drawn = rng.uniform_int(1, 3);
  const int base_drawn = rng.uniform_int(0, num_classes - 2);
  const int n_shapes = n_shapes_hint > 0 ? n_shapes_hint : n_drawn;
  const int class_base = class_base_hint >= 0 ? class_base_hint % (num_classes - 1) : base_drawn;
  int quadrants[4] = {0, 1, 2, 3};
  for (int i = 4; i > 1; --i)
    std::swap(quadrants[i - 1], quadrants[rng.uniform_int(static_cast<std::uint64_t>(i))]);
  for (int s = 0; s < n_shapes; ++s) {
    const int cls = 1 + (class_base + s) % (num_classes - 1);
    const ShapeFn inside = make_shape(rng, cls, size, quadrants[s]);
    const TexFn tex = make_class_texture(rng, cls);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        if (!inside(x + 0.5, y + 0.5)) continue;
        const Color c = tex(y, x);
        sample.image.at(y, x, 0) = c.r;
        sample.image.at(y, x, 1) = c.g;
        sample.image.at(y, x, 2) = c.b;
        sample.label[static_cast<std::size_t>(y) * size + x] = static_cast<std::uint16_t>(cls);
      }
  }
  return sample;
}

std::vector<SegSample> gen_shapes_dataset(Rng& rng, int n_samples, int size, int num_classes) {
  std::vector<SegSample> out;
  out.reserve(static_cast<std::size_t>(n_samples));
  const int rot = num_classes - 1;
  for (int i = 0; i < n_samples; ++i) {
    Rng sample_rng = rng.child(0x5a5a, static_cast<std::uint64_t>(i));
    out.push_back(gen_shapes_sample(sample_rng, size, num_classes, i % rot,
                                    1 + (i / rot) % 3));
  }
  return out;
}

namespace {

std::string index_name(const char* stem, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%05d.png", stem, i);
  return buf;
}

}  // namespace

void save_dataset(const std::string& dir, const std::vector<SegSample>& samples,
                  int num_classes) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["n_samples"] = samples.size();
  manifest["num_classes"] = num_classes;
  manifest["ignore_value"] = kIgnoreValue;
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string img_name = index_name("image", static_cast<int>(i));
    const std::string lbl_name = index_name("label", static_cast<int>(i));
    save_image((fs::path(dir) / img_name).string(), samples[i].image);

    const Image& img = samples[i].image;
    cv::Mat lbl(img.h, img.w, CV_8UC1);
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        lbl.at<unsigned char>(y, x) =
            static_cast<unsigned char>(samples[i].label[static_cast<std::size_t>(y) * img.w + x]);
    if (!cv::imwrite((fs::path(dir) / lbl_name).string(), lbl))
      throw IOFailure("cannot write label map: " + lbl_name);
    files.push_back({{"image", img_name}, {"label", lbl_name}});
  }
  manifest["files"] = std::move(files);
  std::ofstream os(fs::path(dir) / "manifest.json");
  os << manifest.dump(2) << "\n";
  if (!os) throw IOFailure("cannot write dataset manifest in " + dir);
}

std::vector<SegSample> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream is(fs::path(dir) / "manifest.json");
  if (!is) throw IOFailure("cannot open dataset manifest in " + dir);
  nlohmann::json manifest;
  is >> manifest;
  std::vector<SegSample> out;
  for (const auto& f : manifest.at("files")) {
    SegSample s;
    s.image = load_image((fs::path(dir) / f.at("image").get<std::string>()).string());
    cv::Mat lbl = cv::imread((fs::path(dir) / f.at("label").get<std::string>()).string(),
                             cv::IMREAD_GRAYSCALE);
    if (lbl.empty()) throw IOFailure("cannot read label map for " + f.dump());
    s.label.resize(static_cast<std::size_t>(lbl.rows) * lbl.cols);
    for (int y = 0; y < lbl.rows; ++y)
      for (int x = 0; x < lbl.cols; ++x)
        s.label[static_cast<std::size_t>(y) * lbl.cols + x] = lbl.at<unsigned char>(y, x);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::int64_t> class_pixel_histogram(const std::vector<SegSample>& samples,
                                                int num_classes) {
  std::vector<std::int64_t> hist(static_cast<std::size_t>(num_classes), 0);
  for (const auto& s : samples)
    for (auto v : s.label)
      if (v != kIgnoreValue) ++hist.at(v);
  return hist;
}

}  // namespace cp2
