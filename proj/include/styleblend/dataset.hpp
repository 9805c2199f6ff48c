#ifndef STYLEBLEND_DATASET_HPP
#define STYLEBLEND_DATASET_HPP

#include <array>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "styleblend/config.hpp"
#include "styleblend/image.hpp"
#include "styleblend/rng.hpp"

namespace styleblend {

// A procedural style. Texture fields (pattern, palette, background) and
// composition fields (outline, scale, placement) are disjoint by design:
// varying one set never touches what the other controls. That separation is
// what makes the style decomposition measurable on this corpus.
struct SyntheticStyleSpec {
    std::string name;
    std::string pattern;  // stripes | dots | checker | grain
    std::vector<std::array<int, 3>> palette;  // 2-3 colors; last one draws the outline
    std::array<int, 3> background{240, 240, 240};
    double outline_px = 1.0;          // composition
    double object_scale = 0.8;        // composition in (0,1]
    std::string placement = "centered";  // centered | thirds

    void validate() const {
        if (pattern != "stripes" && pattern != "dots" && pattern != "checker" && pattern != "grain")
            throw ValidationError("style '" + name + "': unknown pattern '" + pattern + "'");
        if (palette.size() < 2 || palette.size() > 3)
            throw ValidationError("style '" + name + "': palette needs 2-3 colors");
        if (object_scale <= 0.0 || object_scale > 1.0)
            throw ValidationError("style '" + name + "': object_scale must lie in (0,1]");
        if (placement != "centered" && placement != "thirds")
            throw ValidationError("style '" + name + "': unknown placement '" + placement + "'");
        if (outline_px < 0.0) throw ValidationError("style '" + name + "': outline_px must be >= 0");
    }
};

inline nlohmann::json style_to_json(const SyntheticStyleSpec& s) {
    return {{"name", s.name},       {"pattern", s.pattern},         {"palette", s.palette},
            {"background", s.background}, {"outline_px", s.outline_px}, {"object_scale", s.object_scale},
            {"placement", s.placement}};
}

inline SyntheticStyleSpec style_from_json(const nlohmann::json& j) {
    SyntheticStyleSpec s;
    s.name = j.at("name");
    s.pattern = j.at("pattern");
    s.palette = j.at("palette").get<std::vector<std::array<int, 3>>>();
    s.background = j.at("background").get<std::array<int, 3>>();
    s.outline_px = j.at("outline_px");
    s.object_scale = j.at("object_scale");
    s.placement = j.at("placement");
    s.validate();
    return s;
}

inline const std::vector<std::string>& corpus_classes() {
    static const std::vector<std::string> classes = {"circle", "square", "triangle", "star", "cross", "ring"};
    return classes;
}

// Four base styles for pretraining plus one held-out style ("voltage") that
// style learning sees few-shot. The held-out style differs in both factor
// groups: neon palette on a dark ground (texture) and a small, thick-outlined,
// off-center subject (composition).
inline const std::vector<SyntheticStyleSpec>& default_styles() {
    static const std::vector<SyntheticStyleSpec> styles = {
        {"ember", "stripes", {{{230, 80, 40}}, {{250, 180, 60}}, {{70, 25, 10}}}, {250, 236, 214}, 1.0, 0.80, "centered"},
        {"tide", "dots", {{{40, 90, 200}}, {{170, 225, 250}}, {{15, 35, 70}}}, {226, 240, 250}, 1.0, 0.85, "centered"},
        {"meadow", "checker", {{{80, 175, 60}}, {{205, 232, 120}}, {{30, 70, 22}}}, {246, 250, 232}, 1.0, 0.80, "centered"},
        {"slate", "grain", {{{115, 115, 130}}, {{205, 205, 215}}, {{45, 45, 55}}}, {236, 236, 242}, 1.0, 0.85, "centered"},
        {"voltage", "stripes", {{{240, 45, 200}}, {{250, 240, 70}}, {{25, 12, 35}}}, {38, 26, 50}, 2.0, 0.65, "thirds"},
    };
    return styles;
}

namespace shapes {

struct Geometry {
    double cx, cy;   // center in pixels
    double radius;   // base size in pixels
};

// Geometry is a pure function of composition fields + class + seed. Texture
// draws come from a separate stream so changing texture fields can never
// shift the mask.
inline Geometry make_geometry(const SyntheticStyleSpec& spec, int size, uint64_t seed) {
    Rng geom(derive_seed(seed, "geom"));
    Geometry g;
    double half = size / 2.0;
    if (spec.placement == "thirds") {
        static const double pts[4][2] = {{1.0 / 3, 1.0 / 3}, {2.0 / 3, 1.0 / 3}, {1.0 / 3, 2.0 / 3}, {2.0 / 3, 2.0 / 3}};
        int pick = geom.uniform_int(0, 3);
        g.cx = pts[pick][0] * size;
        g.cy = pts[pick][1] * size;
    } else {
        g.cx = half;
        g.cy = half;
    }
    g.cx += geom.uniform() * 3.0 - 1.5;
    g.cy += geom.uniform() * 3.0 - 1.5;
    g.radius = (half - 2.5) * spec.object_scale * (0.92 + 0.16 * geom.uniform());
    return g;
}

inline bool point_in_polygon(double px, double py, const std::vector<std::array<double, 2>>& poly) {
    bool in = false;
    size_t n = poly.size();
    for (size_t i = 0, j = n - 1; i < n; j = i++) {
        if ((poly[i][1] > py) != (poly[j][1] > py)) {
            double t = (py - poly[i][1]) / (poly[j][1] - poly[i][1]);
            double xint = poly[i][0] + t * (poly[j][0] - poly[i][0]);
            if (px < xint) in = !in;
        }
    }
    return in;
}

// Point-inside test with the boundary pulled inward by `shrink` pixels;
// shrink > 0 carves the fill region out of the outline band.
inline bool inside_shape(const std::string& cls, double x, double y, double r, double shrink) {
    double d2 = x * x + y * y;
    if (cls == "circle") {
        double rr = r - shrink;
        return rr > 0 && d2 <= rr * rr;
    }
    if (cls == "ring") {
        double ro = r - shrink, ri = 0.55 * r + shrink;
        return ro > ri && d2 <= ro * ro && d2 >= ri * ri;
    }
    if (cls == "square") {
        double hs = 0.82 * r - shrink;
        return hs > 0 && std::fabs(x) <= hs && std::fabs(y) <= hs;
    }
    if (cls == "cross") {
        double arm = 0.34 * r - shrink, len = r - shrink;
        if (arm <= 0) return false;
        return (std::fabs(x) <= arm && std::fabs(y) <= len) || (std::fabs(y) <= arm && std::fabs(x) <= len);
    }
    if (cls == "triangle") {
        // equilateral, apex up (negative y); each edge pulled in by `shrink`
        double vx[3] = {0.0, -0.8660254037844386, 0.8660254037844386};
        double vy[3] = {-1.0, 0.5, 0.5};
        for (int e = 0; e < 3; e++) {
            int f = (e + 1) % 3;
            double ex = vx[f] * r - vx[e] * r, ey = vy[f] * r - vy[e] * r;
            double nx = -ey, ny = ex;  // outward normal in image coords (y down)
            double nl = std::sqrt(nx * nx + ny * ny);
            nx /= nl;
            ny /= nl;
            double dist = (x - vx[e] * r) * nx + (y - vy[e] * r) * ny;
            if (dist > -shrink) return false;
        }
        return true;
    }
    if (cls == "star") {
        double f = (r - 1.8 * shrink) / r;
        if (f <= 0) return false;
        std::vector<std::array<double, 2>> poly;
        for (int i = 0; i < 10; i++) {
            double ang = -1.5707963267948966 + i * 0.3141592653589793;  // -pi/2 + i*pi/5
            double rr = (i % 2 == 0 ? 1.0 : 0.45) * r * f;
            poly.push_back({rr * std::cos(ang), rr * std::sin(ang)});
        }
        return point_in_polygon(x, y, poly);
    }
    throw ValidationError("unknown class '" + cls + "'");
}

// 2x2 supersampled coverage in [0,1]
inline double coverage(const std::string& cls, double x, double y, double r, double shrink) {
    static const double off[4][2] = {{-0.25, -0.25}, {0.25, -0.25}, {-0.25, 0.25}, {0.25, 0.25}};
    int hit = 0;
    for (auto& o : off) hit += inside_shape(cls, x + o[0], y + o[1], r, shrink) ? 1 : 0;
    return hit / 4.0;
}

}  // namespace shapes

// Coverage map of the rendered shape (the alpha the style fills). Depends on
// class, seed and composition fields only.
inline std::vector<double> render_mask(const SyntheticStyleSpec& spec, const std::string& cls, uint64_t seed,
                                       int size = 32) {
    spec.validate();
    shapes::Geometry g = shapes::make_geometry(spec, size, seed);
    std::vector<double> mask(static_cast<size_t>(size) * size);
    for (int y = 0; y < size; y++)
        for (int x = 0; x < size; x++)
            mask[static_cast<size_t>(y) * size + x] =
                shapes::coverage(cls, x + 0.5 - g.cx, y + 0.5 - g.cy, g.radius, 0.0);
    return mask;
}

inline Image render(const SyntheticStyleSpec& spec, const std::string& cls, uint64_t seed, int size = 32) {
    spec.validate();
    shapes::Geometry g = shapes::make_geometry(spec, size, seed);
    Rng tex(derive_seed(seed, "tex"));
    double phase_a = tex.uniform() * 8.0;
    double phase_b = tex.uniform() * 8.0;
    uint64_t grain_seed = tex.next_u64();

    int ncol = static_cast<int>(spec.palette.size());
    auto pal = [&](int i) { return spec.palette[static_cast<size_t>(((i % ncol) + ncol) % ncol)]; };
    std::array<int, 3> outline_col = spec.palette.back();

    auto fill_color = [&](int px, int py) -> std::array<int, 3> {
        if (spec.pattern == "stripes") {
            int band = static_cast<int>(std::floor((px + py + phase_a) / 4.0));
            return pal(band);
        }
        if (spec.pattern == "checker") {
            int cxx = static_cast<int>(std::floor((px + phase_a) / 4.0));
            int cyy = static_cast<int>(std::floor((py + phase_b) / 4.0));
            return pal(cxx + cyy);
        }
        if (spec.pattern == "dots") {
            double lx = std::fmod(px + phase_a, 6.0), ly = std::fmod(py + phase_b, 6.0);
            double dx = lx - 3.0, dy = ly - 3.0;
            return dx * dx + dy * dy <= 4.0 ? pal(1) : pal(0);
        }
        // grain: per-pixel hash, optional third color as sparse speckle
        uint64_t cell = fnv1a64(&px, sizeof(px), fnv1a64(&py, sizeof(py), grain_seed));
        double u = (splitmix64(cell) >> 11) * 0x1.0p-53;
        if (ncol >= 3 && u > 0.93) return pal(2);
        return u < 0.5 ? pal(0) : pal(1);
    };

    Image im;
    im.width = size;
    im.height = size;
    im.rgb.resize(static_cast<size_t>(size) * size * 3);
    for (int y = 0; y < size; y++)
        for (int x = 0; x < size; x++) {
            double rx = x + 0.5 - g.cx, ry = y + 0.5 - g.cy;
            double cov_outer = shapes::coverage(cls, rx, ry, g.radius, 0.0);
            double cov_inner = spec.outline_px > 0.0 ? shapes::coverage(cls, rx, ry, g.radius, spec.outline_px)
                                                     : cov_outer;
            double band = cov_outer - cov_inner;
            std::array<int, 3> fc = fill_color(x, y);
            for (int c = 0; c < 3; c++) {
                double v = spec.background[static_cast<size_t>(c)] * (1.0 - cov_outer) +
                           outline_col[static_cast<size_t>(c)] * band + fc[static_cast<size_t>(c)] * cov_inner;
                long q = std::lround(v);
                im.rgb[(static_cast<size_t>(y) * size + x) * 3 + static_cast<size_t>(c)] =
                    static_cast<uint8_t>(q < 0 ? 0 : (q > 255 ? 255 : q));
            }
        }
    return im;
}

// ---------------------------------------------------------------------------
// corpus
// ---------------------------------------------------------------------------

struct CorpusItem {
    std::string class_name;
    std::string style;
    std::string path;   // relative to the corpus root
    std::string split;  // train | val
    uint64_t seed = 0;
};

struct CorpusManifest {
    std::vector<std::string> classes;
    std::vector<SyntheticStyleSpec> styles;
    std::vector<CorpusItem> items;
    std::string root;  // set on load/build; not serialized

    const SyntheticStyleSpec& style(const std::string& name) const {
        for (const auto& s : styles)
            if (s.name == name) return s;
        throw ValidationError("manifest has no style '" + name + "'");
    }
};

inline nlohmann::json manifest_to_json(const CorpusManifest& m) {
    nlohmann::json styles = nlohmann::json::array();
    for (const auto& s : m.styles) styles.push_back(style_to_json(s));
    nlohmann::json items = nlohmann::json::array();
    for (const auto& it : m.items)
        items.push_back({{"class", it.class_name}, {"style", it.style}, {"path", it.path}, {"split", it.split},
                         {"seed", it.seed}});
    return {{"classes", m.classes}, {"styles", styles}, {"items", items}};
}

inline CorpusManifest manifest_from_json(const nlohmann::json& j) {
    CorpusManifest m;
    m.classes = j.at("classes").get<std::vector<std::string>>();
    for (const auto& sj : j.at("styles")) m.styles.push_back(style_from_json(sj));
    for (const auto& ij : j.at("items"))
        m.items.push_back({ij.at("class"), ij.at("style"), ij.at("path"), ij.at("split"), ij.at("seed")});
    return m;
}

// Renders every (class, style) cell: `per_cell` train images plus
// `val_per_cell` held-out images. Same seed, same bytes.
inline CorpusManifest build_corpus(const Config& cfg, const std::string& root, uint64_t seed) {
    namespace fs = std::filesystem;
    CorpusManifest m;
    m.root = root;
    m.classes = corpus_classes();
    m.styles = default_styles();
    fs::create_directories(root);
    for (const auto& style : m.styles) {
        fs::create_directories(fs::path(root) / style.name);
        for (const auto& cls : m.classes) {
            int total = cfg.corpus_per_cell + cfg.corpus_val_per_cell;
            for (int i = 0; i < total; i++) {
                uint64_t item_seed = derive_seed(seed, style.name + "/" + cls + "/" + std::to_string(i));
                Image im = render(style, cls, item_seed, cfg.model.image_size);
                std::string rel = style.name + "/" + cls + "_" + std::to_string(i) + ".png";
                save_png(im, (fs::path(root) / rel).string());
                m.items.push_back({cls, style.name, rel, i < cfg.corpus_per_cell ? "train" : "val", item_seed});
            }
        }
    }
    std::ofstream f(fs::path(root) / "manifest.json");
    if (!f) throw std::runtime_error("cannot write manifest under " + root);
    f << manifest_to_json(m).dump(2) << "\n";
    return m;
}

inline CorpusManifest load_manifest(const std::string& root) {
    std::ifstream f(std::filesystem::path(root) / "manifest.json");
    if (!f) throw std::runtime_error("no manifest.json under " + root);
    nlohmann::json j;
    f >> j;
    CorpusManifest m = manifest_from_json(j);
    m.root = root;
    return m;
}

inline Image load_item(const CorpusManifest& m, const CorpusItem& it) {
    return load_png((std::filesystem::path(m.root) / it.path).string());
}

// Reference images defining the target style for few-shot learning.
struct ReferenceSet {
    std::vector<Image> images;
    std::vector<std::string> classes;
    std::string style;

    std::vector<uint64_t> hashes() const {
        std::vector<uint64_t> out;
        for (const auto& im : images) out.push_back(im.hash());
        return out;
    }
};

// k = 1 or 3 references drawn from the style's held-out images; the 3-shot
// case uses three distinct classes.
inline ReferenceSet make_reference_set(const CorpusManifest& m, const std::string& style, int k, uint64_t seed) {
    if (k != 1 && k != 3) throw ValidationError("reference set: k must be 1 or 3");
    m.style(style);  // existence check
    std::vector<const CorpusItem*> pool;
    std::set<std::string> pool_classes;
    for (const auto& it : m.items)
        if (it.style == style && it.split == "val") {
            pool.push_back(&it);
            pool_classes.insert(it.class_name);
        }
    if (static_cast<int>(pool_classes.size()) < k)
        throw ValidationError("style '" + style + "' has fewer than " + std::to_string(k) + " classes available");
    Rng rng(derive_seed(seed, "refs/" + style));
    ReferenceSet refs;
    refs.style = style;
    std::set<std::string> used;
    while (static_cast<int>(refs.images.size()) < k) {
        const CorpusItem* pick = pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
        if (used.count(pick->class_name)) continue;
        used.insert(pick->class_name);
        refs.images.push_back(load_item(m, *pick));
        refs.classes.push_back(pick->class_name);
    }
    return refs;
}

}  // namespace styleblend

#endif
