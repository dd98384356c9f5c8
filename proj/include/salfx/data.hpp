#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "salfx/image_io.hpp"
#include "salfx/maps.hpp"
#include "salfx/priors.hpp"
#include "salfx/rng.hpp"

namespace salfx::data {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Pixels per degree of visual angle of common eye-tracking datasets.
struct DatasetGeometry {
    std::string_view name;
    double pxva;
};

inline constexpr std::array<DatasetGeometry, 5> kKnownDatasets = {{
    {"TORONTO", 32.0},
    {"MIT1003", 35.0},
    {"KTH", 34.0},
    {"CAT2000", 38.0},
    {"SID4VAM", 40.0},
}};

inline std::optional<double> default_pxva(std::string_view name)
{
    std::string upper(name);
    std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
    for (const auto& d : kKnownDatasets)
        if (upper == d.name) return d.pxva;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestEntry {
    std::string id;
    std::filesystem::path image;
    std::filesystem::path fixations;
    std::optional<std::filesystem::path> density;
    std::optional<std::filesystem::path> mask;
    std::optional<int> label;
};

/// JSON dataset index; entry paths are relative to the manifest's directory.
struct DatasetManifest {
    std::string name;
    double pxva = 0.0;
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;

    [[nodiscard]] std::filesystem::path resolve(const std::filesystem::path& p) const
    {
        return p.is_absolute() ? p : root / p;
    }

    [[nodiscard]] nlohmann::json to_json() const
    {
        nlohmann::json j;
        j["name"] = name;
        j["pxva"] = pxva;
        auto arr = nlohmann::json::array();
        for (const auto& e : entries) {
            nlohmann::json ej;
            ej["id"] = e.id;
            ej["image"] = e.image.generic_string();
            ej["fixations"] = e.fixations.generic_string();
            if (e.density) ej["density"] = e.density->generic_string();
            if (e.mask) ej["mask"] = e.mask->generic_string();
            if (e.label) ej["label"] = *e.label;
            arr.push_back(std::move(ej));
        }
        j["entries"] = std::move(arr);
        return j;
    }

    /// Parse and validate. When `root` is given, files are checked to exist.
    static DatasetManifest from_json(const nlohmann::json& j, const std::filesystem::path& root,
                                     bool check_files = true)
    {
        auto fail = [](const std::string& what) -> DataError { return DataError("manifest: " + what); };
        if (!j.is_object()) throw fail("top level must be an object");
        for (const char* key : {"name", "pxva", "entries"})
            if (!j.contains(key)) throw fail(std::string("missing key '") + key + "'");
        if (!j["name"].is_string()) throw fail("'name' must be a string");
        if (!j["pxva"].is_number()) throw fail("'pxva' must be a number");
        if (!j["entries"].is_array()) throw fail("'entries' must be an array");

        DatasetManifest m;
        m.name = j["name"].get<std::string>();
        m.pxva = j["pxva"].get<double>();
        m.root = root;
        if (!(m.pxva > 0.0)) throw fail("'pxva' must be positive");
        std::set<std::string> ids;
        for (std::size_t i = 0; i < j["entries"].size(); ++i) {
            const auto& ej = j["entries"][i];
            const std::string where = "entry " + std::to_string(i);
            if (!ej.is_object()) throw fail(where + " must be an object");
            for (const char* key : {"id", "image", "fixations"})
                if (!ej.contains(key) || !ej[key].is_string())
                    throw fail(where + ": missing string '" + key + "'");
            ManifestEntry e;
            e.id = ej["id"].get<std::string>();
            e.image = ej["image"].get<std::string>();
            e.fixations = ej["fixations"].get<std::string>();
            if (ej.contains("density")) e.density = ej["density"].get<std::string>();
            if (ej.contains("mask")) e.mask = ej["mask"].get<std::string>();
            if (ej.contains("label")) {
                if (!ej["label"].is_number_integer()) throw fail(where + ": 'label' must be an integer");
                e.label = ej["label"].get<int>();
            }
            if (!ids.insert(e.id).second) throw fail("duplicate id '" + e.id + "'");
            if (check_files) {
                for (const auto* p : {&e.image, &e.fixations})
                    if (!std::filesystem::exists(m.resolve(*p)))
                        throw fail(where + " ('" + e.id + "'): missing file " + m.resolve(*p).string());
                for (const auto* p : {&e.density, &e.mask})
                    if (*p && !std::filesystem::exists(m.resolve(**p)))
                        throw fail(where + " ('" + e.id + "'): missing file " + m.resolve(**p).string());
            }
            m.entries.push_back(std::move(e));
        }
        return m;
    }

    static DatasetManifest load(const std::filesystem::path& path)
    {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open manifest " + path.string());
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw DataError("manifest " + path.string() + ": " + e.what());
        }
        return from_json(j, path.parent_path());
    }

    void save(const std::filesystem::path& path) const
    {
        std::ofstream out(path);
        if (!out) throw DataError("cannot create manifest " + path.string());
        out << to_json().dump(2) << '\n';
    }
};

// ---------------------------------------------------------------------------
// Fixations

inline constexpr std::string_view kFixationHeader = "image_id,participant_id,x,y";

namespace detail {

inline std::string_view trim(std::string_view s)
{
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i)
        if (i == line.size() || line[i] == ',') {
            out.push_back(trim(line.substr(start, i - start)));
            start = i + 1;
        }
    return out;
}

inline bool parse_int(std::string_view s, int& v)
{
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    return r.ec == std::errc{} && r.ptr == s.data() + s.size();
}

} // namespace detail

/// Parse fixation CSV text; points are validated against width x height.
inline FixationSet parse_fixations(std::istream& in, std::size_t width, std::size_t height,
                                   const std::string& name = "<fixations>")
{
    FixationSet fix{width, height, {}};
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string_view l = detail::trim(line);
        if (l.empty()) continue;
        if (!header_seen) {
            if (l != kFixationHeader)
                throw DataError(name + ":" + std::to_string(lineno) + ": expected header '" +
                                std::string(kFixationHeader) + "'");
            header_seen = true;
            continue;
        }
        const auto fields = detail::split_csv(l);
        Point p;
        if (fields.size() != 4 || !detail::parse_int(fields[2], p.x) || !detail::parse_int(fields[3], p.y))
            throw DataError(name + ":" + std::to_string(lineno) + ": malformed row '" + std::string(l) + "'");
        if (!fix.contains(p))
            throw DataError(name + ":" + std::to_string(lineno) + ": point (" + std::to_string(p.x) + "," +
                            std::to_string(p.y) + ") outside " + std::to_string(width) + "x" +
                            std::to_string(height) + " image");
        fix.points.push_back(p);
    }
    if (!header_seen) throw DataError(name + ": missing header");
    return fix;
}

inline FixationSet load_fixations(const std::filesystem::path& path, std::size_t width, std::size_t height)
{
    std::ifstream in(path);
    if (!in) throw DataError("cannot open fixations " + path.string());
    return parse_fixations(in, width, height, path.string());
}

inline void save_fixations(const std::filesystem::path& path, const std::string& image_id,
                           const FixationSet& fix)
{
    std::ofstream out(path);
    if (!out) throw DataError("cannot create " + path.string());
    out << kFixationHeader << '\n';
    for (std::size_t i = 0; i < fix.points.size(); ++i)
        out << image_id << ',' << i << ',' << fix.points[i].x << ',' << fix.points[i].y << '\n';
}

/// Fixation impulses blurred by a circular Gaussian whose FWHM spans
/// sigma_dva degrees (3-sigma truncated kernel), normalized to unit mass.
inline DensityMap fixations_to_density(const FixationSet& fix, double pxva, double sigma_dva = 1.0)
{
    if (fix.empty()) throw std::invalid_argument("fixations_to_density: empty fixation set");
    fix.validate();
    SaliencyMap impulses(fix.width, fix.height);
    for (const Point& p : fix.points)
        impulses(static_cast<std::size_t>(p.x), static_cast<std::size_t>(p.y)) += 1.0;
    return DensityMap::distribution(gaussian_blur(impulses, dva_to_sigma(sigma_dva, pxva)));
}

// ---------------------------------------------------------------------------
// Synthetic pop-out stimuli

enum class PopoutFeature { color, orientation, size };
enum class Placement { uniform, center };

inline std::string_view to_string(PopoutFeature f)
{
    switch (f) {
    case PopoutFeature::color: return "color";
    case PopoutFeature::orientation: return "orientation";
    case PopoutFeature::size: return "size";
    }
    return "?";
}

inline PopoutFeature parse_feature(std::string_view s)
{
    if (s == "color") return PopoutFeature::color;
    if (s == "orientation") return PopoutFeature::orientation;
    if (s == "size") return PopoutFeature::size;
    throw std::invalid_argument("unknown pop-out feature '" + std::string(s) + "'");
}

inline std::string_view to_string(Placement p) { return p == Placement::uniform ? "uniform" : "center"; }

inline Placement parse_placement(std::string_view s)
{
    if (s == "uniform") return Placement::uniform;
    if (s == "center") return Placement::center;
    throw std::invalid_argument("unknown placement '" + std::string(s) + "'");
}

struct PopoutSpec {
    std::size_t canvas = 64;
    std::size_t count = 100;
    std::size_t num_classes = 8;
    std::size_t distractors = 5;
    PopoutFeature feature = PopoutFeature::color;
    Placement placement = Placement::uniform;
    std::size_t fixations_per_image = 10;
    /// Probability that a fixation is replaced by a center-biased sample.
    double noise_rate = 0.0;
    /// Std. dev. of center-biased fixations as a fraction of the canvas.
    double center_sigma = 1.0 / 6.0;
    std::uint64_t seed = 0;
};

inline constexpr std::size_t kShapeCount = 4;  // square, triangle, cross, bar
inline constexpr std::size_t kColorCount = 8;
inline constexpr std::size_t kMaxClasses = kShapeCount * kColorCount;

struct Rgb {
    double r, g, b;
};

inline constexpr std::array<Rgb, kColorCount> kTargetColors = {{
    {0.95, 0.10, 0.10}, // red
    {0.10, 0.80, 0.10}, // green
    {0.15, 0.25, 0.95}, // blue
    {0.95, 0.90, 0.10}, // yellow
    {0.90, 0.10, 0.90}, // magenta
    {0.10, 0.90, 0.90}, // cyan
    {1.00, 0.55, 0.00}, // orange
    {1.00, 0.45, 0.65}, // pink
}};

/// Color-mode distractors mix another palette hue with this gray.
inline constexpr double kDistractorHueWeight = 0.5;
inline constexpr double kDistractorGray = 0.3;

struct BoundingBox {
    int x0 = 0, y0 = 0, x1 = -1, y1 = -1; // inclusive
    [[nodiscard]] bool contains(std::size_t x, std::size_t y) const
    {
        const auto xi = static_cast<int>(x), yi = static_cast<int>(y);
        return xi >= x0 && xi <= x1 && yi >= y0 && yi <= y1;
    }
};

struct PopoutSample {
    Tensor image;      // [3,H,W]
    int label = 0;
    SaliencyMap mask;  // 1 on target pixels, 0 elsewhere
    BoundingBox bbox;
    FixationSet fixations;
};

namespace detail {

struct Glyph {
    double cx, cy, radius, angle;
    std::size_t shape;
};

// Shape membership in glyph-local coordinates scaled by the radius.
inline bool inside_shape(std::size_t shape, double u, double v)
{
    switch (shape) {
    case 0: return std::abs(u) <= 0.8 && std::abs(v) <= 0.8;
    case 1: return v <= 0.8 && v >= -0.8 && std::abs(u) <= 0.9 * (v + 0.8) / 1.6;
    case 2: return (std::abs(u) <= 0.3 && std::abs(v) <= 0.9) || (std::abs(v) <= 0.3 && std::abs(u) <= 0.9);
    default: return std::abs(u) <= 0.95 && std::abs(v) <= 0.3;
    }
}

inline bool covers(const Glyph& g, std::size_t x, std::size_t y)
{
    const double dx = static_cast<double>(x) + 0.5 - g.cx;
    const double dy = static_cast<double>(y) + 0.5 - g.cy;
    const double c = std::cos(g.angle), s = std::sin(g.angle);
    return inside_shape(g.shape, (dx * c + dy * s) / g.radius, (-dx * s + dy * c) / g.radius);
}

} // namespace detail

/// Draw n fixations: each is, with probability noise_rate, a Gaussian sample
/// around the canvas center, otherwise a uniformly chosen mask pixel.
inline FixationSet sample_fixations(const SaliencyMap& mask, std::size_t n, double noise_rate,
                                    double center_sigma_px, Rng& rng)
{
    std::vector<std::size_t> pixels;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i] > 0.0) pixels.push_back(i);
    if (pixels.empty()) throw std::invalid_argument("sample_fixations: empty mask");
    FixationSet fix{mask.width(), mask.height(), {}};
    const double cx = static_cast<double>(mask.width()) / 2.0, cy = static_cast<double>(mask.height()) / 2.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (noise_rate > 0.0 && rng.uniform() < noise_rate) {
            const double x = std::floor(rng.normal(cx, center_sigma_px));
            const double y = std::floor(rng.normal(cy, center_sigma_px));
            fix.points.push_back({static_cast<int>(std::clamp(x, 0.0, static_cast<double>(mask.width() - 1))),
                                  static_cast<int>(std::clamp(y, 0.0, static_cast<double>(mask.height() - 1)))});
        } else {
            const std::size_t p = pixels[static_cast<std::size_t>(rng.index(pixels.size()))];
            fix.points.push_back({static_cast<int>(p % mask.width()), static_cast<int>(p / mask.width())});
        }
    }
    return fix;
}

/// One stimulus. Item i depends only on (spec, i).
inline PopoutSample gen_popout_item(const PopoutSpec& spec, std::size_t index)
{
    Rng rng(derive_seed(spec.seed, index));
    const double size = static_cast<double>(spec.canvas);
    const double radius = size * 6.0 / 64.0;
    const double extent = radius * 1.25;              // bounding radius of every shape
    const double stroke = std::max(1.0, size / 32.0); // minimum gap between objects
    const double lo = extent + 1.0, hi = size - extent - 1.0;
    if (hi <= lo) throw std::invalid_argument("gen_popout: canvas too small");

    PopoutSample s;
    s.label = static_cast<int>(rng.index(spec.num_classes));
    const std::size_t color = static_cast<std::size_t>(s.label) % kColorCount;
    const std::size_t shape = static_cast<std::size_t>(s.label) / kColorCount;

    Rgb distractor_color = kTargetColors[color];
    double distractor_radius = radius, distractor_angle = 0.0;
    switch (spec.feature) {
    case PopoutFeature::color: {
        // Another hue, half way to gray: the distractors still carry evidence
        // for a wrong class, so the target cannot be found by brightness alone.
        std::size_t other = rng.index(kColorCount - 1);
        if (other >= color) ++other;
        const Rgb h = kTargetColors[other];
        const double w = kDistractorHueWeight, g = (1.0 - w) * kDistractorGray;
        distractor_color = {w * h.r + g, w * h.g + g, w * h.b + g};
        break;
    }
    case PopoutFeature::orientation: distractor_angle = std::numbers::pi / 4.0; break;
    case PopoutFeature::size: distractor_radius = radius * 0.6; break;
    }
    const double min_dist = 2.0 * extent + stroke;

    // Sequential rejection sampling can jam; a jammed layout is redrawn from
    // scratch, so only genuinely overfull canvases are rejected.
    std::vector<detail::Glyph> glyphs;
    bool complete = false;
    for (int layout = 0; layout < 200 && !complete; ++layout) {
        glyphs.clear();
        double tx, ty;
        if (spec.placement == Placement::uniform) {
            tx = rng.uniform(lo, hi);
            ty = rng.uniform(lo, hi);
        } else {
            do {
                tx = rng.normal(size / 2.0, size / 8.0);
                ty = rng.normal(size / 2.0, size / 8.0);
            } while (tx < lo || tx > hi || ty < lo || ty > hi);
        }
        glyphs.push_back({tx, ty, radius, 0.0, shape});
        complete = true;
        for (std::size_t d = 0; d < spec.distractors && complete; ++d) {
            bool placed = false;
            for (int attempt = 0; attempt < 500 && !placed; ++attempt) {
                const double x = rng.uniform(lo, hi), y = rng.uniform(lo, hi);
                placed = std::all_of(glyphs.begin(), glyphs.end(), [&](const detail::Glyph& g) {
                    return std::hypot(g.cx - x, g.cy - y) >= min_dist;
                });
                if (placed) glyphs.push_back({x, y, distractor_radius, distractor_angle, shape});
            }
            complete = placed;
        }
    }
    if (!complete)
        throw std::invalid_argument("gen_popout: cannot fit " + std::to_string(spec.distractors) +
                                    " distractors on a " + std::to_string(spec.canvas) + " canvas");

    const std::size_t n = spec.canvas;
    s.image = Tensor(Shape{3, n, n});
    s.mask = SaliencyMap(n, n);
    s.bbox = {static_cast<int>(n), static_cast<int>(n), -1, -1};
    for (std::size_t gi = 0; gi < glyphs.size(); ++gi) {
        const auto& g = glyphs[gi];
        const Rgb c = gi == 0 ? kTargetColors[color] : distractor_color;
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) {
                if (!detail::covers(g, x, y)) continue;
                s.image[0 * n * n + y * n + x] = c.r;
                s.image[1 * n * n + y * n + x] = c.g;
                s.image[2 * n * n + y * n + x] = c.b;
                if (gi == 0) {
                    s.mask(x, y) = 1.0;
                    s.bbox.x0 = std::min(s.bbox.x0, static_cast<int>(x));
                    s.bbox.y0 = std::min(s.bbox.y0, static_cast<int>(y));
                    s.bbox.x1 = std::max(s.bbox.x1, static_cast<int>(x));
                    s.bbox.y1 = std::max(s.bbox.y1, static_cast<int>(y));
                }
            }
    }
    s.fixations = sample_fixations(s.mask, spec.fixations_per_image, spec.noise_rate,
                                   spec.center_sigma * size, rng);
    return s;
}

inline void validate(const PopoutSpec& spec)
{
    if (spec.num_classes < 1 || spec.num_classes > kMaxClasses)
        throw std::invalid_argument("gen_popout: " + std::to_string(spec.num_classes) +
                                    " classes exceed the " + std::to_string(kMaxClasses) +
                                    " shape/color combinations");
    if (spec.fixations_per_image == 0) throw std::invalid_argument("gen_popout: need at least one fixation");
    if (spec.noise_rate < 0.0 || spec.noise_rate > 1.0)
        throw std::invalid_argument("gen_popout: noise rate must be in [0,1]");
}

/// Deterministic stimulus set: one target per image whose class (shape x
/// color) is the label; distractors differ from it only in spec.feature.
inline std::vector<PopoutSample> gen_popout_dataset(const PopoutSpec& spec)
{
    validate(spec);
    std::vector<PopoutSample> out;
    out.reserve(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) out.push_back(gen_popout_item(spec, i));
    return out;
}

// ---------------------------------------------------------------------------
// Splits

struct Partition {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Seeded shuffle of 0..n-1; the first round(train_fraction * n) go to train.
/// Both halves are returned in ascending order.
inline Partition split(std::size_t n, double train_fraction, std::uint64_t seed)
{
    if (train_fraction < 0.0 || train_fraction > 1.0)
        throw std::invalid_argument("split: train fraction must be in [0,1]");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(order);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    Partition p{{order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train)},
                {order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end()}};
    std::sort(p.train.begin(), p.train.end());
    std::sort(p.test.begin(), p.test.end());
    return p;
}

inline std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& m, double train_fraction,
                                                         std::uint64_t seed)
{
    const Partition p = split(m.entries.size(), train_fraction, seed);
    DatasetManifest a = m, b = m;
    a.entries.clear();
    b.entries.clear();
    for (std::size_t i : p.train) a.entries.push_back(m.entries[i]);
    for (std::size_t i : p.test) b.entries.push_back(m.entries[i]);
    return {a, b};
}

// ---------------------------------------------------------------------------
// Loading a manifest entry

/// Image, fixations and ground-truth density of one manifest entry. The
/// density comes from the entry's PGM when present, else from the fixations.
struct LoadedEntry {
    Tensor image;
    FixationSet fixations;
    DensityMap density;
};

inline LoadedEntry load_entry(const DatasetManifest& m, const ManifestEntry& e)
{
    LoadedEntry out;
    out.image = io::load_image(m.resolve(e.image));
    const std::size_t h = out.image.dim(1), w = out.image.dim(2);
    out.fixations = load_fixations(m.resolve(e.fixations), w, h);
    if (e.density) {
        SaliencyMap d = io::load_pgm(m.resolve(*e.density));
        if (d.width() != w || d.height() != h)
            throw DataError("density map of '" + e.id + "' does not match its image size");
        out.density = DensityMap::distribution(std::move(d));
    } else {
        if (out.fixations.empty()) throw DataError("entry '" + e.id + "' has neither fixations nor density");
        out.density = fixations_to_density(out.fixations, m.pxva);
    }
    return out;
}

} // namespace salfx::data
