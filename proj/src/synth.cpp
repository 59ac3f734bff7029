#include "refcomp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace refcomp {

namespace {

struct NamedColor {
  const char* name;
  Color rgb;
};

constexpr std::array<NamedColor, 12> kClothColors = {{
    {"red", {0.85, 0.15, 0.15}},   {"blue", {0.15, 0.30, 0.85}},  {"green", {0.15, 0.65, 0.25}},
    {"yellow", {0.92, 0.85, 0.20}}, {"purple", {0.55, 0.25, 0.75}}, {"orange", {0.95, 0.55, 0.15}},
    {"white", {0.95, 0.95, 0.95}}, {"black", {0.10, 0.10, 0.10}}, {"pink", {0.95, 0.55, 0.70}},
    {"teal", {0.10, 0.60, 0.60}},  {"brown", {0.50, 0.30, 0.15}}, {"gray", {0.50, 0.50, 0.50}},
}};

constexpr std::array<NamedColor, 5> kHairColors = {{
    {"black", {0.08, 0.07, 0.06}}, {"brown", {0.40, 0.24, 0.12}}, {"blonde", {0.90, 0.78, 0.45}},
    {"red", {0.70, 0.25, 0.10}},   {"gray", {0.62, 0.62, 0.62}},
}};

constexpr std::array<Color, 4> kSkinTones = {{
    {0.96, 0.80, 0.69}, {0.87, 0.67, 0.52}, {0.67, 0.46, 0.33}, {0.45, 0.30, 0.20}}};

constexpr std::array<NamedColor, 5> kGlyphColors = {{
    {"white", {1.0, 1.0, 1.0}}, {"black", {0.0, 0.0, 0.0}}, {"yellow", {1.0, 0.95, 0.0}},
    {"cyan", {0.0, 0.9, 0.95}}, {"magenta", {0.95, 0.0, 0.8}}}};

constexpr int kGlyphCells = 5;
constexpr double kGlyphCell = 1.6;

double luminance(const Color& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

Color mix(const Color& a, const Color& b, double t) {
  return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

double color_distance(const Color& a, const Color& b) {
  return std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]);
}

PartPattern make_pattern(const NamedColor& c, Texture tex) {
  PartPattern p;
  p.color_name = c.name;
  p.primary = c.rgb;
  p.secondary = mix(c.rgb, luminance(c.rgb) > 0.5 ? Color{0, 0, 0} : Color{1, 1, 1}, 0.45);
  p.texture = tex;
  return p;
}

std::array<std::array<std::uint8_t, kGlyphCells>, kGlyphCells> glyph_bitmap(std::uint64_t glyph_seed) {
  Rng rng(glyph_seed);
  std::array<std::array<std::uint8_t, kGlyphCells>, kGlyphCells> g{};
  int on = 0;
  while (on < 9) {
    on = 0;
    for (auto& row : g)
      for (auto& cell : row) {
        cell = bernoulli(rng, 0.5) ? 1 : 0;
        on += cell;
      }
  }
  return g;
}

Color glyph_color(const FigureSpec& spec) {
  const Color base = spec.patterns[static_cast<int>(spec.glyph_part())].primary;
  auto idx = static_cast<size_t>(spec.glyph_seed % kGlyphColors.size());
  for (size_t k = 0; k < kGlyphColors.size(); ++k) {
    const auto& c = kGlyphColors[(idx + k) % kGlyphColors.size()].rgb;
    if (color_distance(c, base) > 0.9) return c;
  }
  return kGlyphColors[idx].rgb;
}

double wrap_mod(double v, double period) {
  double r = std::fmod(v, period);
  return r < 0 ? r + period : r;
}

Color texture_color(const PartPattern& p, double u, double v) {
  bool alt = false;
  switch (p.texture) {
    case Texture::solid:
      break;
    case Texture::h_stripes:
      alt = wrap_mod(v, 4.0) >= 2.0;
      break;
    case Texture::v_stripes:
      alt = wrap_mod(u, 4.0) >= 2.0;
      break;
    case Texture::checker:
      alt = (wrap_mod(u, 6.0) >= 3.0) != (wrap_mod(v, 6.0) >= 3.0);
      break;
    case Texture::dots:
      alt = wrap_mod(u, 4.0) >= 1.0 && wrap_mod(u, 4.0) < 3.0 && wrap_mod(v, 4.0) >= 1.0 && wrap_mod(v, 4.0) < 3.0;
      break;
  }
  return alt ? p.secondary : p.primary;
}

Color background_color(int background, double x, double y, int size) {
  const double hue = (background % kBackgroundCount) / static_cast<double>(kBackgroundCount);
  auto channel = [&](double phase) { return 0.5 + 0.22 * std::cos(2 * std::numbers::pi * (hue + phase)); };
  const Color top{channel(0.0), channel(1.0 / 3), channel(2.0 / 3)};
  const Color bottom = mix(top, {0.35, 0.35, 0.35}, 0.5);
  Color c = mix(top, bottom, y / size);
  const int stripe_period = 6 + background % 5;
  if (wrap_mod(x + y * ((background % 2) ? 1.0 : -1.0), stripe_period) < 1.5) c = mix(c, {1, 1, 1}, 0.12);
  return c;
}

// Capsule distance helpers in canvas coordinates.
struct Segment {
  double ax, ay, bx, by;
};

/// Returns (along, across) of point relative to the segment's axis, in canvas units.
std::pair<double, double> segment_coords(const Segment& s, double px, double py) {
  const double dx = s.bx - s.ax, dy = s.by - s.ay;
  const double len = std::hypot(dx, dy);
  const double ux = dx / len, uy = dy / len;
  const double rx = px - s.ax, ry = py - s.ay;
  return {rx * ux + ry * uy, -rx * uy + ry * ux};
}

bool in_capsule(const Segment& s, double radius, double px, double py) {
  const double len = std::hypot(s.bx - s.ax, s.by - s.ay);
  auto [along, across] = segment_coords(s, px, py);
  const double t = std::clamp(along, 0.0, len);
  const double ux = (s.bx - s.ax) / len, uy = (s.by - s.ay) / len;
  const double cx = s.ax + ux * t, cy = s.ay + uy * t;
  (void)across;
  return std::hypot(px - cx, py - cy) <= radius;
}

enum Region : int { kBackground = -1, kSkin = kPartCount };

}  // namespace

bool FigureSpec::has_part(PartLabel p) const {
  if (p == PartLabel::whole_body_clothes) return whole_body;
  if (p == PartLabel::upper_clothes || p == PartLabel::lower_clothes) return !whole_body;
  return true;
}

FigureSpec make_figure_spec(const std::string& figure_id, std::uint64_t seed) {
  FigureSpec spec;
  spec.figure_id = figure_id;
  spec.seed = seed;
  Rng rng(mix_seed(seed, fnv1a(figure_id)));
  spec.whole_body = bernoulli(rng, 0.3);

  std::vector<size_t> order(kClothColors.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  auto texture = [&] { return static_cast<Texture>(uniform_int(rng, 0, kTextureCount - 1)); };
  spec.patterns[static_cast<int>(PartLabel::upper_clothes)] = make_pattern(kClothColors[order[0]], texture());
  spec.patterns[static_cast<int>(PartLabel::lower_clothes)] = make_pattern(kClothColors[order[1]], texture());
  spec.patterns[static_cast<int>(PartLabel::whole_body_clothes)] = make_pattern(kClothColors[order[2]], texture());
  spec.patterns[static_cast<int>(PartLabel::shoes)] = make_pattern(kClothColors[order[3]], Texture::solid);
  const auto& hair = kHairColors[static_cast<size_t>(uniform_int(rng, 0, kHairColors.size() - 1))];
  spec.patterns[static_cast<int>(PartLabel::hair_headwear)] =
      make_pattern(hair, bernoulli(rng, 0.3) ? Texture::h_stripes : Texture::solid);
  spec.skin = kSkinTones[static_cast<size_t>(uniform_int(rng, 0, kSkinTones.size() - 1))];
  PartPattern face;
  face.color_name = "skin";
  face.primary = spec.skin;
  face.secondary = spec.skin;
  spec.patterns[static_cast<int>(PartLabel::face)] = face;

  spec.body.torso_w = uniform(rng, 14, 18);
  spec.body.torso_h = uniform(rng, 16, 19);
  spec.body.leg_len = uniform(rng, 17, 20);
  spec.body.head_r = uniform(rng, 5.0, 6.2);
  spec.body.arm_len = uniform(rng, 12, 15);
  // Drawn last so nothing else depends on it.
  spec.glyph_seed = mix_seed(rng(), fnv1a(figure_id) ^ 0x5f5f5f5full);
  return spec;
}

void Pose::validate() const {
  auto check = [](double v, double lo, double hi, const char* name) {
    if (!(v >= lo && v <= hi))
      throw InvalidArgument(std::string("pose.") + name + " out of range [" + std::to_string(lo) + ", " +
                            std::to_string(hi) + "]");
  };
  check(shift_x, -5, 5, "shift_x");
  check(shift_y, -2, 2, "shift_y");
  check(arm_left, -0.3, 1.3, "arm_left");
  check(arm_right, -0.3, 1.3, "arm_right");
  check(leg_spread, 0, 0.35, "leg_spread");
  check(scale, 0.9, 1.05, "scale");
}

Pose random_pose(Rng& rng) {
  Pose p;
  p.shift_x = uniform(rng, -5, 5);
  p.shift_y = uniform(rng, -2, 2);
  p.arm_left = uniform(rng, -0.2, 1.2);
  p.arm_right = uniform(rng, -0.2, 1.2);
  p.leg_spread = uniform(rng, 0, 0.35);
  p.scale = uniform(rng, 0.9, 1.05);
  return p;
}

Pose different_pose(const Pose& base, Rng& rng) {
  Pose p = random_pose(rng);
  for (int i = 0; i < 100; ++i) {
    const double limb = std::abs(p.arm_left - base.arm_left) + std::abs(p.arm_right - base.arm_right);
    if (limb >= 0.8 && std::abs(p.shift_x - base.shift_x) >= 2.0) break;
    p = random_pose(rng);
  }
  return p;
}

RenderedFigure generate_figure(const FigureSpec& spec, const Pose& pose, int background, std::uint64_t seed,
                               int size) {
  pose.validate();
  if (size <= 0) throw InvalidArgument("figure size must be positive");
  if (background < 0 || background >= kBackgroundCount)
    throw InvalidArgument("background id out of range [0, " + std::to_string(kBackgroundCount) + ")");

  const double k = size / 64.0;
  const double u = pose.scale * k;
  const auto& b = spec.body;
  const double hx = 32 * k + pose.shift_x * k;
  const double hy = 37 * k + pose.shift_y * k;
  const double ty = hy - b.torso_h * u;
  const double head_cx = hx, head_cy = ty - 2 * u - b.head_r * u;
  const double head_r = b.head_r * u;
  const double dress_bottom = hy + 0.55 * b.leg_len * u;

  std::array<Segment, 2> legs{};
  std::array<Segment, 2> arms{};
  for (int side = 0; side < 2; ++side) {
    const double sgn = side == 0 ? -1.0 : 1.0;
    const double lx = hx + sgn * 3.5 * u, ly = hy - 1 * u;
    legs[side] = {lx, ly, lx + sgn * std::sin(pose.leg_spread) * b.leg_len * u,
                  ly + std::cos(pose.leg_spread) * b.leg_len * u};
    const double arm = side == 0 ? pose.arm_left : pose.arm_right;
    const double sx = hx + sgn * (b.torso_w / 2 + 2) * u, sy = ty + 2 * u;
    arms[side] = {sx, sy, sx + sgn * std::sin(arm) * b.arm_len * u, sy + std::cos(arm) * b.arm_len * u};
  }

  const auto glyph = glyph_bitmap(spec.glyph_seed);
  const Color gcolor = glyph_color(spec);
  const auto pattern = [&](PartLabel p) -> const PartPattern& { return spec.patterns[static_cast<int>(p)]; };

  RenderedFigure out;
  out.image = Raster(size, size);
  for (auto& m : out.part_masks) m = Mask(size, size);
  out.silhouette = Mask(size, size);
  out.glyph_mask = Mask(size, size);
  Rng noise(mix_seed(seed, static_cast<std::uint64_t>(background)));

  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      int region = kBackground;
      Color color{};
      bool glyph_hit = false;

      auto body_clothes = [&](PartLabel label) {
        const double lu = (px - hx) / u, lv = (py - ty) / u;
        region = static_cast<int>(label);
        color = texture_color(pattern(label), lu, lv);
        const int gx = static_cast<int>(std::floor((lu + kGlyphCells * kGlyphCell / 2) / kGlyphCell));
        const int gy = static_cast<int>(std::floor((lv - 5.0) / kGlyphCell));
        if (label == spec.glyph_part() && gx >= 0 && gx < kGlyphCells && gy >= 0 && gy < kGlyphCells &&
            glyph[static_cast<size_t>(gy)][static_cast<size_t>(gx)]) {
          color = gcolor;
          glyph_hit = true;
        }
      };

      // Front-to-back: the first shape hit owns the pixel.
      const double hdx = px - head_cx, hdy = py - head_cy;
      const double hd = std::hypot(hdx, hdy);
      if (hd <= head_r) {
        if (hdy >= -0.15 * head_r && std::abs(hdx) <= 0.8 * head_r) {
          region = static_cast<int>(PartLabel::face);
          color = spec.skin;
        } else {
          region = static_cast<int>(PartLabel::hair_headwear);
          color = texture_color(pattern(PartLabel::hair_headwear), hdx / u, hdy / u);
        }
      } else if (hd <= head_r + u && hdy < 0) {
        region = static_cast<int>(PartLabel::hair_headwear);
        color = texture_color(pattern(PartLabel::hair_headwear), hdx / u, hdy / u);
      } else if (std::abs(px - hx) <= 2 * u && py >= ty - 3 * u && py <= ty) {
        region = kSkin;
        color = spec.skin;
      } else if (in_capsule(arms[0], 2 * u, px, py) || in_capsule(arms[1], 2 * u, px, py)) {
        region = kSkin;
        color = spec.skin;
      } else if (spec.whole_body && py >= ty && py <= dress_bottom &&
                 std::abs(px - hx) <= (b.torso_w / 2 + 5 * (py - ty) / (dress_bottom - ty)) * u) {
        body_clothes(PartLabel::whole_body_clothes);
      } else if (!spec.whole_body && py >= ty && py <= hy && std::abs(px - hx) <= b.torso_w / 2 * u) {
        body_clothes(PartLabel::upper_clothes);
      } else {
        for (int side = 0; side < 2 && region == kBackground; ++side) {
          const double sgn = side == 0 ? -1.0 : 1.0;
          const double fx = legs[side].bx + sgn * 1.0 * u, fy = legs[side].by + 1.5 * u;
          const double ex = (px - fx) / (3.5 * u), ey = (py - fy) / (2.0 * u);
          if (ex * ex + ey * ey <= 1.0) {
            region = static_cast<int>(PartLabel::shoes);
            color = pattern(PartLabel::shoes).primary;
          }
        }
        for (int side = 0; side < 2 && region == kBackground; ++side) {
          if (!in_capsule(legs[side], 3 * u, px, py)) continue;
          if (spec.whole_body) {
            region = kSkin;
            color = spec.skin;
          } else {
            auto [along, across] = segment_coords(legs[side], px, py);
            region = static_cast<int>(PartLabel::lower_clothes);
            color = texture_color(pattern(PartLabel::lower_clothes), across / u, along / u);
          }
        }
      }

      if (region == kBackground) {
        color = background_color(background, px, py, size);
        const double n = uniform(noise, -0.015, 0.015);
        for (auto& c : color) c = std::clamp(c + n, 0.0, 1.0);
      } else {
        out.silhouette.at(y, x) = 1;
        if (region < kPartCount) out.part_masks[static_cast<size_t>(region)].at(y, x) = 1;
        if (glyph_hit) out.glyph_mask.at(y, x) = 1;
      }
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = color[static_cast<size_t>(c)];
    }
  return out;
}

std::string part_caption(const FigureSpec& spec, PartLabel p) {
  const auto& pat = spec.patterns[static_cast<int>(p)];
  switch (p) {
    case PartLabel::upper_clothes:
      return "a figure wearing " + pat.color_name + " upper clothes";
    case PartLabel::lower_clothes:
      return "a figure wearing " + pat.color_name + " lower clothes";
    case PartLabel::whole_body_clothes:
      return "a figure wearing a " + pat.color_name + " dress";
    case PartLabel::hair_headwear:
      return "a figure with " + pat.color_name + " hair";
    case PartLabel::face:
      return "a face";
    case PartLabel::shoes:
      return "a figure wearing " + pat.color_name + " shoes";
  }
  return {};
}

std::string figure_caption(const FigureSpec& spec) {
  const auto color = [&](PartLabel p) { return spec.patterns[static_cast<int>(p)].color_name; };
  std::string s = "a figure wearing ";
  if (spec.whole_body)
    s += "a " + color(PartLabel::whole_body_clothes) + " dress";
  else
    s += color(PartLabel::upper_clothes) + " upper clothes and " + color(PartLabel::lower_clothes) + " lower clothes";
  s += " with " + color(PartLabel::hair_headwear) + " hair and " + color(PartLabel::shoes) + " shoes";
  return s;
}

std::vector<ReferencePart> reference_parts(const FigureSpec& spec, const RenderedFigure& view) {
  std::vector<ReferencePart> refs;
  for (PartLabel p : kAllParts) {
    if (!spec.has_part(p) || view.part(p).empty()) continue;
    refs.push_back({p, view.image, view.part(p), part_caption(spec, p)});
  }
  return refs;
}

namespace {

struct TwoViews {
  SampleMeta meta;
  RenderedFigure source;
  RenderedFigure reference;
};

TwoViews render_two_views(const FigureSpec& spec, Rng& rng, int size) {
  TwoViews v;
  v.meta.figure_id = spec.figure_id;
  v.meta.figure_seed = spec.seed;
  v.meta.pose = random_pose(rng);
  v.meta.reference_pose = different_pose(v.meta.pose, rng);
  v.meta.background = uniform_int(rng, 0, kBackgroundCount - 1);
  v.meta.reference_background = (v.meta.background + uniform_int(rng, 1, kBackgroundCount - 1)) % kBackgroundCount;
  v.meta.render_seed = rng();
  v.meta.caption = figure_caption(spec);
  v.source = generate_figure(spec, v.meta.pose, v.meta.background, v.meta.render_seed, size);
  v.reference = generate_figure(spec, v.meta.reference_pose, v.meta.reference_background,
                                mix_seed(v.meta.render_seed, 1), size);
  return v;
}

}  // namespace

TrainingSample build_training_pair(const FigureSpec& spec, Rng& rng, const MaskSpec& mask_spec, int size) {
  auto views = render_two_views(spec, rng, size);
  auto sampled = sample_training_mask(views.source.silhouette, rng, mask_spec);
  TrainingSample s;
  s.target = std::move(views.source.image);
  s.source_mask = std::move(sampled.mask);
  s.mask_branch = sampled.branch;
  s.occluded_input = apply_mask(s.target, s.source_mask, 0.0);
  s.references = reference_parts(spec, views.reference);
  s.prompt = views.meta.caption;
  s.meta = std::move(views.meta);
  return s;
}

SyntheticGroup build_benchmark_group(const FigureSpec& spec, Rng& rng, const std::string& group_id, int size) {
  auto views = render_two_views(spec, rng, size);
  SyntheticGroup g;
  g.glyph_part_mask = views.source.part(spec.glyph_part());
  g.group.group_id = group_id;
  g.group.source_mask = dilate(g.glyph_part_mask, 1);
  g.group.ground_truth = views.source.image;
  g.group.source = apply_mask(views.source.image, g.group.source_mask, 0.0);
  g.group.references = reference_parts(spec, views.reference);
  g.group.prompt = views.meta.caption;
  g.meta = std::move(views.meta);
  return g;
}

}  // namespace refcomp
