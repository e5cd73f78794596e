#include "patchdb/bench.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "json.hpp"

#include "patchdb/index.hpp"
#include "patchdb/rng.hpp"

namespace patchdb {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

constexpr double kDepthMargin = 0.05;  // "clearly behind" threshold in q6
constexpr uint64_t kNoiseSalt = 0xBA5EBA11u;
constexpr uint64_t kJitterSalt = 0xD17u;
constexpr uint64_t kShuffleSalt = 0x6A11E4u;

// Static per-video background noise: depends on (seed, x, y, channel) but
// not on the frame number, so delta coding sees an unchanging backdrop.
uint8_t noise_at(uint64_t seed, uint32_t x, uint32_t y, uint32_t c, uint8_t amp) {
    if (amp == 0) return 0;
    SplitMix64 g(mix_seed(seed, (static_cast<uint64_t>(y) << 34) ^
                                    (static_cast<uint64_t>(x) << 8) ^ c));
    return static_cast<uint8_t>(g.next() % (static_cast<uint64_t>(amp) + 1));
}

Frame scene_background(const SceneSpec& spec) {
    Frame f;
    f.video_id = spec.video_id;
    f.frame_no = 0;
    f.width = spec.width;
    f.height = spec.height;
    f.channels = 3;
    f.pixels.resize(static_cast<size_t>(spec.width) * spec.height * 3);
    uint64_t seed = mix_seed(spec.seed, kNoiseSalt);
    for (uint32_t y = 0; y < spec.height; y++)
        for (uint32_t x = 0; x < spec.width; x++)
            for (uint32_t c = 0; c < 3; c++)
                f.at(y, x, c) = noise_at(seed, x, y, c, spec.noise_amplitude);
    return f;
}

// Triangle-wave reflection keeping [start + v*t] inside [0, limit].
int64_t reflect_pos(int64_t start, int64_t v, uint64_t t, int64_t limit) {
    if (limit <= 0) return 0;
    int64_t period = 2 * limit;
    int64_t m = (start + v * static_cast<int64_t>(t)) % period;
    if (m < 0) m += period;
    return m <= limit ? m : period - m;
}

BoundingBox entity_box(const SceneSpec& spec, const SceneEntity& e, uint64_t t) {
    int64_t x = reflect_pos(e.x0, e.vx, t, static_cast<int64_t>(spec.width) - e.w);
    int64_t y = reflect_pos(e.y0, e.vy, t, static_cast<int64_t>(spec.height) - e.h);
    return BoundingBox{static_cast<uint32_t>(x), static_cast<uint32_t>(y),
                       static_cast<uint32_t>(x) + e.w, static_cast<uint32_t>(y) + e.h};
}

void draw_entities(Frame& f, const SceneSpec& spec, uint64_t t) {
    std::vector<const SceneEntity*> present;
    for (const auto& e : spec.entities)
        if (t >= e.enter && t < e.exit) present.push_back(&e);
    // painter's order: far first, nearer entities overwrite
    std::stable_sort(present.begin(), present.end(),
                     [](const SceneEntity* a, const SceneEntity* b) {
                         if (a->depth != b->depth) return a->depth > b->depth;
                         return a->id < b->id;
                     });
    for (const SceneEntity* e : present) {
        BoundingBox box = entity_box(spec, *e, t);
        const PaletteEntry& pe = spec.palette[e->palette_index];
        for (uint32_t y = box.y1; y < box.y2; y++)
            for (uint32_t x = box.x1; x < box.x2; x++) {
                f.at(y, x, 0) = pe.r;
                f.at(y, x, 1) = pe.g;
                f.at(y, x, 2) = pe.b;
            }
        // barcode strip: sync row (white first), id bits (high bit left,
        // white = 1), their complement, sync row (black first)
        uint32_t sx = box.x1 + e->strip_dx;
        uint32_t sy = box.y1 + e->strip_dy;
        for (uint32_t c = 0; c < kGlyphCols; c++) {
            bool sync = (c % 2 == 0);
            bool bit = (e->id >> (kGlyphCols - 1 - c)) & 1;
            const bool rows[kGlyphRows] = {sync, bit, !bit, !sync};
            for (uint32_t r = 0; r < kGlyphRows; r++) {
                uint8_t v = rows[r] ? 255 : 0;
                f.at(sy + r, sx + c, 0) = v;
                f.at(sy + r, sx + c, 1) = v;
                f.at(sy + r, sx + c, 2) = v;
            }
        }
    }
}

// Distinct 8x8x8 bin-center color triples, shuffled by the scene seed.
std::vector<std::array<uint8_t, 3>> gallery_colors(const SceneSpec& spec, size_t n) {
    std::vector<uint16_t> idx(512);
    for (size_t i = 0; i < idx.size(); i++) idx[i] = static_cast<uint16_t>(i);
    SplitMix64 rng(mix_seed(spec.seed, kShuffleSalt));
    std::vector<std::array<uint8_t, 3>> out;
    out.reserve(n);
    for (size_t i = 0; i < n && i < idx.size(); i++) {
        size_t j = i + rng.below(idx.size() - i);
        std::swap(idx[i], idx[j]);
        uint16_t k = idx[i];
        out.push_back({static_cast<uint8_t>(16 + 32 * (k / 64)),
                       static_cast<uint8_t>(16 + 32 * ((k / 8) % 8)),
                       static_cast<uint8_t>(16 + 32 * (k % 8))});
    }
    return out;
}

void gallery_paint(Frame& f, const SceneSpec& spec, uint64_t t) {
    size_t originals = spec.frames - spec.gallery_pairs;
    auto colors = gallery_colors(spec, originals);
    uint64_t orig = t < 2 * spec.gallery_pairs ? t / 2 : t - spec.gallery_pairs;
    const auto& base = colors[orig];
    for (uint32_t y = 0; y < f.height; y++)
        for (uint32_t x = 0; x < f.width; x++)
            for (uint32_t c = 0; c < 3; c++)
                f.at(y, x, c) = static_cast<uint8_t>(f.at(y, x, c) + base[c]);
    bool is_dup = t < 2 * spec.gallery_pairs && (t % 2 == 1);
    if (!is_dup) return;
    // nudge ~2% of pixels one red bin over: far below the duplicate
    // threshold, far above zero
    size_t npix = static_cast<size_t>(f.width) * f.height;
    std::vector<uint8_t> marked(npix, 0);
    SplitMix64 rng(mix_seed(mix_seed(spec.seed, kJitterSalt), t));
    size_t count = npix / 50 + 1;
    for (size_t i = 0; i < count; i++) marked[rng.below(npix)] = 1;
    int shift = base[0] >= 128 ? -32 : 32;
    for (size_t p = 0; p < npix; p++)
        if (marked[p]) {
            int v = f.pixels[p * 3] + shift;
            f.pixels[p * 3] = static_cast<uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
        }
}

void paint_frame(Frame& f, const SceneSpec& spec, uint64_t t) {
    f.frame_no = t;
    if (spec.gallery)
        gallery_paint(f, spec, t);
    else
        draw_entities(f, spec, t);
}

}  // namespace

// ---------------------------------------------------------------------------
// Scene spec

void SceneSpec::validate() const {
    if (frames == 0) throw ConfigError("scene needs at least one frame");
    if (frames > 1000000000ull) throw ConfigError("scene is unreasonably long");
    if (width == 0 || height == 0)
        throw ConfigError("scene dimensions must be positive");
    if (video_id.empty()) throw ConfigError("scene needs a video id");
    if (gallery) {
        if (!entities.empty())
            throw ConfigError("gallery scenes do not take entities");
        if (gallery_pairs * 2 > frames)
            throw ConfigError("more duplicate pairs than frames can hold");
        if (frames - gallery_pairs > 512)
            throw ConfigError("gallery palette exhausted: at most 512 distinct frames");
        if (noise_amplitude > 15)
            throw ConfigError("gallery noise amplitude above 15 bleeds across histogram bins");
        return;
    }
    std::set<uint16_t> ids;
    for (const auto& e : entities) {
        std::string tag = "entity " + std::to_string(e.id) + ": ";
        if (!ids.insert(e.id).second)
            throw ConfigError(tag + "duplicate entity id");
        if (e.palette_index >= palette.size())
            throw ConfigError(tag + "palette index out of range");
        if (e.w == 0 || e.h == 0) throw ConfigError(tag + "empty rect");
        if (e.w > width || e.h > height)
            throw ConfigError(tag + "entity larger than the frame");
        if (e.strip_dx < 1 || e.strip_dy < 1 ||
            e.strip_dx + kGlyphCols + 1 > e.w || e.strip_dy + kGlyphRows + 1 > e.h)
            throw ConfigError(tag +
                              "barcode strip must sit inside the rect with a "
                              "1px border");
        if (e.x0 < 0 || e.y0 < 0 ||
            e.x0 + static_cast<int64_t>(e.w) > static_cast<int64_t>(width) ||
            e.y0 + static_cast<int64_t>(e.h) > static_cast<int64_t>(height))
            throw ConfigError(tag + "starts outside the frame");
        if (e.vx > 1000000 || e.vx < -1000000 || e.vy > 1000000 || e.vy < -1000000)
            throw ConfigError(tag + "velocity out of range");
        if (e.depth < 0.0 || e.depth >= 1.0)
            throw ConfigError(tag + "depth must be in [0, 1)");
        if (e.enter >= e.exit) throw ConfigError(tag + "empty lifetime");
    }
}

// ---------------------------------------------------------------------------
// Rendering and ground truth

Frame render_scene_frame(const SceneSpec& spec, uint64_t frame_no) {
    Frame f = scene_background(spec);
    paint_frame(f, spec, frame_no);
    return f;
}

std::unique_ptr<Stream<Frame>> scene_frames(const SceneSpec& spec) {
    spec.validate();
    struct State {
        SceneSpec spec;
        Frame bg;
        uint64_t next = 0;
    };
    auto st = std::make_shared<State>();
    st->spec = spec;
    st->bg = scene_background(spec);
    return make_stream<Frame>([st]() -> std::optional<Frame> {
        if (st->next >= st->spec.frames) return std::nullopt;
        Frame f = st->bg;
        paint_frame(f, st->spec, st->next);
        st->next++;
        return f;
    });
}

GroundTruth scene_ground_truth(const SceneSpec& spec) {
    spec.validate();
    GroundTruth gt;
    gt.frames = spec.frames;
    gt.width = spec.width;
    gt.height = spec.height;
    gt.per_frame.resize(spec.frames);
    if (spec.gallery) {
        for (uint64_t k = 0; k < spec.gallery_pairs; k++)
            gt.duplicate_pairs.emplace_back(2 * k, 2 * k + 1);
        return gt;
    }
    std::vector<SceneEntity> ents = spec.entities;
    std::sort(ents.begin(), ents.end(),
              [](const SceneEntity& a, const SceneEntity& b) { return a.id < b.id; });
    for (uint64_t t = 0; t < spec.frames; t++) {
        for (const auto& e : ents) {
            if (t < e.enter || t >= e.exit) continue;
            gt.per_frame[t].push_back(GtEntry{e.id, spec.palette[e.palette_index].label,
                                              entity_box(spec, e, t), e.depth});
        }
    }
    for (const auto& e : ents)
        if (e.enter < spec.frames && e.enter < e.exit)
            gt.distinct_per_label[spec.palette[e.palette_index].label]++;
    return gt;
}

std::pair<std::unique_ptr<Stream<Frame>>, GroundTruth> gen_scene(const SceneSpec& spec) {
    return {scene_frames(spec), scene_ground_truth(spec)};
}

// ---------------------------------------------------------------------------
// Ground truth JSON sidecar

std::string GroundTruth::to_json() const {
    nlohmann::ordered_json j;
    j["frames"] = frames;
    j["width"] = width;
    j["height"] = height;
    auto pf = nlohmann::ordered_json::array();
    for (const auto& entries : per_frame) {
        auto fe = nlohmann::ordered_json::array();
        for (const auto& e : entries) {
            nlohmann::ordered_json je;
            je["id"] = e.entity_id;
            je["label"] = e.label;
            je["bbox"] = {e.bbox.x1, e.bbox.y1, e.bbox.x2, e.bbox.y2};
            je["depth"] = e.depth;
            fe.push_back(std::move(je));
        }
        pf.push_back(std::move(fe));
    }
    j["per_frame"] = std::move(pf);
    j["distinct"] = distinct_per_label;
    auto dp = nlohmann::ordered_json::array();
    for (const auto& [a, b] : duplicate_pairs) dp.push_back({a, b});
    j["duplicate_pairs"] = std::move(dp);
    return j.dump(2);
}

GroundTruth GroundTruth::from_json(std::string_view text) {
    try {
        auto j = nlohmann::json::parse(text);
        static const std::set<std::string> known = {
            "frames", "width", "height", "per_frame", "distinct", "duplicate_pairs"};
        for (const auto& [k, v] : j.items())
            if (!known.count(k))
                throw ValidationError("ground truth: unknown key '" + k + "'");
        GroundTruth gt;
        gt.frames = j.at("frames").get<uint64_t>();
        gt.width = j.at("width").get<uint32_t>();
        gt.height = j.at("height").get<uint32_t>();
        for (const auto& fe : j.at("per_frame")) {
            gt.per_frame.emplace_back();
            for (const auto& je : fe) {
                GtEntry e;
                e.entity_id = je.at("id").get<uint16_t>();
                e.label = je.at("label").get<std::string>();
                auto box = je.at("bbox");
                if (box.size() != 4)
                    throw ValidationError("ground truth: bbox needs 4 coordinates");
                e.bbox = BoundingBox{box[0].get<uint32_t>(), box[1].get<uint32_t>(),
                                     box[2].get<uint32_t>(), box[3].get<uint32_t>()};
                e.depth = je.at("depth").get<double>();
                gt.per_frame.back().push_back(std::move(e));
            }
        }
        if (gt.per_frame.size() != gt.frames)
            throw ValidationError("ground truth: per_frame length disagrees with frames");
        for (const auto& [k, v] : j.at("distinct").items())
            gt.distinct_per_label[k] = v.get<uint64_t>();
        for (const auto& p : j.at("duplicate_pairs")) {
            if (p.size() != 2)
                throw ValidationError("ground truth: duplicate pair needs 2 frames");
            gt.duplicate_pairs.emplace_back(p[0].get<uint64_t>(), p[1].get<uint64_t>());
        }
        return gt;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("ground truth: ") + e.what());
    }
}

void GroundTruth::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << to_json() << "\n";
    if (!out.flush()) throw IoError("short write to '" + path + "'");
}

GroundTruth GroundTruth::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json(buf.str());
}

// ---------------------------------------------------------------------------
// Canned scenes

SceneSpec make_tracking_scene(uint64_t seed, uint64_t frames, uint32_t width,
                              uint32_t height) {
    if (width < 96 || height < 160)
        throw ConfigError("tracking scene needs at least 96x160 frames");
    if (frames < 20) throw ConfigError("tracking scene needs at least 20 frames");
    SceneSpec s;
    s.seed = seed;
    s.frames = frames;
    s.width = width;
    s.height = height;
    s.video_id = "scene";
    // channels sit at 32 mod 64, so every quantizer step maps them to
    // themselves or within 8; pairwise separation is at least 64
    s.palette = {
        {224, 96, 96, "pedestrian"}, {96, 224, 96, "pedestrian"},
        {96, 96, 224, "pedestrian"}, {224, 224, 96, "pedestrian"},
        {224, 96, 224, "vehicle"},   {96, 224, 224, "vehicle"},
    };
    struct Proto {
        uint16_t id;
        uint32_t pal, w, h;
        int64_t vx;
        uint64_t enter20, exit20;  // lifetime in twentieths of the video
    };
    const Proto protos[] = {
        {10, 0, 24, 12, 3, 0, 20},  {11, 1, 28, 14, -2, 0, 20},
        {12, 2, 24, 12, 1, 5, 20},  {13, 3, 20, 10, -4, 0, 15},
        {20, 4, 32, 16, 2, 1, 9},   {21, 5, 30, 14, -3, 13, 19},
    };
    uint32_t pitch = (height - 16) / 6;
    for (size_t i = 0; i < std::size(protos); i++) {
        const Proto& p = protos[i];
        SceneEntity e;
        e.id = p.id;
        e.palette_index = p.pal;
        e.w = p.w;
        e.h = p.h;
        e.y0 = 8 + static_cast<int64_t>(i) * pitch;
        SplitMix64 rng(mix_seed(seed, p.id));
        e.x0 = static_cast<int64_t>(rng.below(width - p.w + 1));
        e.vx = p.vx;
        e.vy = 0;
        e.depth = 1.0 - static_cast<double>(e.y0 + p.h) / static_cast<double>(height);
        e.strip_dx = (p.w - kGlyphCols) / 2;
        e.strip_dy = (p.h - kGlyphRows) / 2;
        e.enter = frames * p.enter20 / 20;
        e.exit = std::max<uint64_t>(frames * p.exit20 / 20, e.enter + 1);
        s.entities.push_back(e);
    }
    s.validate();
    return s;
}

SceneSpec make_gallery_scene(uint64_t seed, uint64_t frames, uint64_t dup_pairs,
                             uint32_t width, uint32_t height) {
    SceneSpec s;
    s.seed = seed;
    s.frames = frames;
    s.width = width;
    s.height = height;
    s.video_id = "gallery";
    s.gallery = true;
    s.gallery_pairs = dup_pairs;
    s.validate();
    return s;
}

SceneSpec make_quality_scene(uint64_t seed, uint64_t frames, uint32_t width,
                             uint32_t height) {
    if (width < 96 || height < 160)
        throw ConfigError("quality scene needs at least 96x160 frames");
    if (frames < 20) throw ConfigError("quality scene needs at least 20 frames");
    SceneSpec s;
    s.seed = seed;
    s.frames = frames;
    s.width = width;
    s.height = height;
    s.video_id = "scene";
    // robust colors (32 mod 64) survive every quantizer; fragile ones
    // (4 mod 64) land 28 away under the coarsest step, past the detector's
    // tolerance of 24
    s.palette = {
        {96, 96, 224, "vehicle"},   // robust
        {196, 132, 68, "vehicle"},  // fragile
        {96, 224, 96, "vehicle"},   // robust
        {68, 132, 196, "vehicle"},  // fragile
        {224, 96, 96, "vehicle"},   // robust
    };
    uint32_t pitch = (height - 16) / 5;
    for (uint32_t k = 0; k < 5; k++) {
        SceneEntity e;
        e.id = static_cast<uint16_t>(30 + k);
        e.palette_index = k;
        e.w = 24;
        e.h = 12;
        e.y0 = 8 + static_cast<int64_t>(k) * pitch;
        SplitMix64 rng(mix_seed(seed, e.id));
        e.x0 = static_cast<int64_t>(rng.below(width - e.w + 1));
        e.vx = (k % 2 == 0) ? 2 + static_cast<int64_t>(k) : -2 - static_cast<int64_t>(k);
        e.vy = 0;
        e.depth = 1.0 - static_cast<double>(e.y0 + e.h) / static_cast<double>(height);
        e.strip_dx = (e.w - kGlyphCols) / 2;
        e.strip_dy = (e.h - kGlyphRows) / 2;
        e.enter = frames * k / 5;
        e.exit = std::max<uint64_t>(frames * (k + 1) / 5, e.enter + 1);
        s.entities.push_back(e);
    }
    s.validate();
    return s;
}

SceneSpec make_plan_order_scene(uint64_t seed, uint64_t frames, uint32_t triples,
                                double tau) {
    if (triples < 1 || triples > 9)
        throw ConfigError("plan-order scene supports 1 to 9 triples");
    if (frames < 20) throw ConfigError("plan-order scene needs at least 20 frames");
    // the three rect areas put same-color histograms at pairwise distances
    // (0.094, 0.094, 0.189); tau must split exactly the long edge
    if (tau < 0.095 || tau > 0.185)
        throw ConfigError("plan-order scene is tuned for tau in [0.095, 0.185]");
    SceneSpec s;
    s.seed = seed;
    s.frames = frames;
    s.width = 160;
    s.height = 16 + 72 * triples;
    s.video_id = "scene";
    for (uint32_t t = 0; t < triples; t++) {
        uint8_t g = static_cast<uint8_t>(32 + 64 * (t % 3));
        uint8_t b = static_cast<uint8_t>(32 + 64 * (t / 3));
        // 20 apart on red: distinct labels, same histogram bin
        s.palette.push_back({70, g, b, "vehicle"});
        s.palette.push_back({90, g, b, "pedestrian"});

        struct Proto {
            uint16_t id_off;
            uint32_t pal_off, w, h;
            int64_t dy;
            uint64_t enter;
        };
        // areas 288 / 360 / 480 pixels; the vehicle sits between the two
        // pedestrians in histogram space and above them in scan order
        const Proto protos[] = {
            {0, 0, 18, 16, 0, 0},
            {1, 1, 18, 20, 20, 0},
            {2, 1, 20, 24, 44, 1},
        };
        for (const Proto& p : protos) {
            SceneEntity e;
            e.id = static_cast<uint16_t>(100 + 3 * t + p.id_off);
            e.palette_index = 2 * t + p.pal_off;
            e.w = p.w;
            e.h = p.h;
            e.y0 = 8 + static_cast<int64_t>(72) * t + p.dy;
            SplitMix64 rng(mix_seed(seed, e.id));
            e.x0 = static_cast<int64_t>(rng.below(s.width - p.w + 1));
            e.vx = (p.id_off % 2 == 0) ? 2 : -3;
            e.vy = 0;
            e.depth =
                1.0 - static_cast<double>(e.y0 + p.h) / static_cast<double>(s.height);
            e.strip_dx = (p.w - kGlyphCols) / 2;
            e.strip_dy = (p.h - kGlyphRows) / 2;
            e.enter = p.enter;
            e.exit = frames;
            s.entities.push_back(e);
        }
    }
    s.validate();
    return s;
}

// ---------------------------------------------------------------------------
// Expectations

uint64_t expected_duplicate_tuples(const GroundTruth& gt) {
    // a self-join reports each planted pair in both orientations
    return static_cast<uint64_t>(gt.duplicate_pairs.size()) * 2;
}

uint64_t expected_label_frames(const GroundTruth& gt, const std::string& label) {
    uint64_t n = 0;
    for (const auto& entries : gt.per_frame)
        for (const auto& e : entries)
            if (e.label == label) {
                n++;
                break;
            }
    return n;
}

uint64_t expected_entity_frames(const GroundTruth& gt, uint16_t entity_id) {
    uint64_t n = 0;
    for (const auto& entries : gt.per_frame)
        for (const auto& e : entries)
            if (e.entity_id == entity_id) {
                n++;
                break;
            }
    return n;
}

uint64_t expected_distinct(const GroundTruth& gt, const std::string& label) {
    auto it = gt.distinct_per_label.find(label);
    return it == gt.distinct_per_label.end() ? 0 : it->second;
}

std::optional<uint64_t> expected_first_frame(const GroundTruth& gt,
                                             uint16_t entity_id) {
    for (uint64_t t = 0; t < gt.per_frame.size(); t++)
        for (const auto& e : gt.per_frame[t])
            if (e.entity_id == entity_id) return t;
    return std::nullopt;
}

namespace {

using BehindPair = std::tuple<uint64_t, BoundingBox, BoundingBox>;

// Mirrors the q6 analog: pedestrians only, same frame, depth derived from
// the box bottom exactly as the depth transformer derives it.
std::set<BehindPair> behind_pair_set(const GroundTruth& gt, double margin) {
    std::set<BehindPair> out;
    for (uint64_t t = 0; t < gt.per_frame.size(); t++) {
        const auto& entries = gt.per_frame[t];
        for (const auto& a : entries) {
            if (a.label != "pedestrian") continue;
            double da = 1.0 - static_cast<double>(a.bbox.y2) /
                                  static_cast<double>(gt.height);
            for (const auto& b : entries) {
                if (b.label != "pedestrian" || &a == &b) continue;
                double db = 1.0 - static_cast<double>(b.bbox.y2) /
                                      static_cast<double>(gt.height);
                if (!(da > db + margin)) continue;
                if (!(a.bbox.x1 < b.bbox.x2 && b.bbox.x1 < a.bbox.x2)) continue;
                out.emplace(t, a.bbox, b.bbox);
            }
        }
    }
    return out;
}

}  // namespace

uint64_t expected_behind_pairs(const GroundTruth& gt, double margin) {
    return behind_pair_set(gt, margin).size();
}

// ---------------------------------------------------------------------------
// Harness

void BenchConfig::validate() const {
    static const std::set<std::string> known = {"q1", "q2", "q3", "q4", "q5", "q6"};
    if (queries.empty()) throw ConfigError("bench: no queries selected");
    for (const auto& q : queries)
        if (!known.count(q)) throw ConfigError("bench: unknown query '" + q + "'");
    if (layouts.empty()) throw ConfigError("bench: no layouts selected");
    if (codecs.empty()) throw ConfigError("bench: no codecs selected");
    if (seeds.empty()) throw ConfigError("bench: no seeds selected");
    for (const auto& c : codecs) c.validate();
    if (!(tau > 0)) throw ConfigError("bench: tau must be positive");
    if (bins < 2) throw ConfigError("bench: need at least 2 histogram bins");
    if (clip_len == 0) throw ConfigError("bench: clip length must be positive");
    if (leaf_size == 0) throw ConfigError("bench: leaf size must be positive");
    if (node_capacity < 4) throw ConfigError("bench: node capacity below 4");
    if (label_noise_p < 0.0 || label_noise_p > 1.0)
        throw ConfigError("bench: label noise probability must be in [0, 1]");
    if (frames < 20) throw ConfigError("bench: tracking scene needs at least 20 frames");
    if (gallery_pairs * 2 > gallery_frames)
        throw ConfigError("bench: more gallery pairs than frames can hold");
    if (work_dir.empty()) throw ConfigError("bench: work directory not set");
    if (tracking_override) tracking_override->validate();
}

namespace {

uint64_t total_probes(const ExecStats& s) {
    uint64_t n = 0;
    for (const auto& op : s.ops) n += op.index_probes;
    return n;
}

void add_io(BenchRow& row, const IoCounters& io) {
    row.records_read += io.records_read;
    row.frames_decoded += io.frames_decoded;
}

template <typename SetT>
void set_score(BenchRow& row, const SetT& found, const SetT& truth) {
    size_t inter = 0;
    for (const auto& v : found) inter += truth.count(v);
    row.precision = found.empty() ? 1.0 : static_cast<double>(inter) / found.size();
    row.recall = truth.empty() ? 1.0 : static_cast<double>(inter) / truth.size();
}

void count_score(BenchRow& row, uint64_t found, uint64_t truth) {
    uint64_t matched = std::min(found, truth);
    row.precision = found ? static_cast<double>(matched) / found : 1.0;
    row.recall = truth ? static_cast<double>(matched) / truth : 1.0;
}

BenchRow base_row(std::string query, std::string variant, const VideoStore& vs,
                  uint64_t seed) {
    BenchRow row;
    row.query = std::move(query);
    row.variant = std::move(variant);
    row.layout = vs.descriptor().layout;
    row.codec = vs.descriptor().codec;
    row.seed = seed;
    row.storage_bytes = vs.store_size();
    return row;
}

GeneratorSpec blob_spec(const SceneSpec& scene, const BenchConfig& cfg,
                        uint64_t seed) {
    GeneratorSpec g;
    g.kind = GeneratorKind::blob_detector;
    g.palette = scene.palette;
    g.min_area = 32;
    g.label_noise_p = cfg.label_noise_p;
    g.seed = seed;
    return g;
}

PatchCollection build_collection(const VideoStore& vs, const GeneratorSpec& g,
                                 const std::optional<TransformerSpec>& t,
                                 const std::string& path, IoCounters& io) {
    auto stream = generate(vs.scan(std::nullopt, io), g);
    if (t) stream = transform(std::move(stream), *t);
    return PatchCollection::materialize(*stream, path);
}

uint64_t tuple_frame(const Tuple& t, size_t slot) {
    return static_cast<uint64_t>(t.at(slot).meta_int("frameno"));
}

BenchRow bench_q1(const BenchConfig& cfg, uint64_t seed, const VideoStore& vs,
                  const GroundTruth& gt, const std::string& dir) {
    BenchRow row = base_row("q1", "default", vs, seed);
    IoCounters etl_io;
    auto t0 = Clock::now();
    GeneratorSpec g;
    g.kind = GeneratorKind::whole_image;
    TransformerSpec tr;
    tr.kind = TransformerKind::color_histogram;
    tr.bins = cfg.bins;
    PatchCollection col = build_collection(vs, g, tr, dir + "/q1_hist.pdb", etl_io);
    row.etl_ms = ms_since(t0);

    ExecContext ctx;
    ctx.collections["hist"] = &col;
    auto plan = PlanNode::select(
        PlanNode::sim_join(PlanNode::scan("hist"), PlanNode::scan("hist"), cfg.tau),
        Predicate::cmp_of(CmpOp::ne, Operand::meta(0, "frameno"),
                          Operand::meta(1, "frameno")));
    ExecResult res = execute(*plan, ctx);
    row.query_ms = res.stats.total_ms;
    add_io(row, etl_io);
    add_io(row, res.stats.io);
    row.index_probes = total_probes(res.stats);
    row.result_count = res.tuples.size();

    std::set<std::pair<uint64_t, uint64_t>> found, truth;
    for (const auto& t : res.tuples) {
        uint64_t a = tuple_frame(t, 0), b = tuple_frame(t, 1);
        found.emplace(std::min(a, b), std::max(a, b));
    }
    for (const auto& [a, b] : gt.duplicate_pairs)
        truth.emplace(std::min(a, b), std::max(a, b));
    set_score(row, found, truth);
    return row;
}

BenchRow bench_q2(const BenchConfig& cfg, uint64_t seed, const VideoStore& vs,
                  const SceneSpec& scene, const GroundTruth& gt,
                  const std::string& dir) {
    BenchRow row = base_row("q2", "default", vs, seed);
    IoCounters etl_io;
    auto t0 = Clock::now();
    PatchCollection col = build_collection(vs, blob_spec(scene, cfg, seed),
                                           std::nullopt, dir + "/q2_blobs.pdb", etl_io);
    row.etl_ms = ms_since(t0);

    ExecContext ctx;
    ctx.collections["blobs"] = &col;
    auto plan = PlanNode::count_by(
        PlanNode::select(PlanNode::scan("blobs"),
                         Predicate::meta_cmp(0, "label", CmpOp::eq,
                                             MetaValue{std::string("vehicle")})),
        "frameno");
    ExecResult res = execute(*plan, ctx);
    row.query_ms = res.stats.total_ms;
    add_io(row, etl_io);
    add_io(row, res.stats.io);
    row.index_probes = total_probes(res.stats);
    row.result_count = res.tuples.size();

    std::set<uint64_t> found, truth;
    for (const auto& t : res.tuples) found.insert(tuple_frame(t, 0));
    for (uint64_t t = 0; t < gt.per_frame.size(); t++)
        for (const auto& e : gt.per_frame[t])
            if (e.label == "vehicle") {
                truth.insert(t);
                break;
            }
    set_score(row, found, truth);
    return row;
}

Predicate containment_pred() {
    // the blob box (slot 1) contains the glyph box (slot 0) in the same frame
    return Predicate::all_of({
        Predicate::cmp_of(CmpOp::eq, Operand::meta(0, "frameno"),
                          Operand::meta(1, "frameno")),
        Predicate::cmp_of(CmpOp::le, Operand::meta(1, "bbox.x1"),
                          Operand::meta(0, "bbox.x1")),
        Predicate::cmp_of(CmpOp::le, Operand::meta(1, "bbox.y1"),
                          Operand::meta(0, "bbox.y1")),
        Predicate::cmp_of(CmpOp::le, Operand::meta(0, "bbox.x2"),
                          Operand::meta(1, "bbox.x2")),
        Predicate::cmp_of(CmpOp::le, Operand::meta(0, "bbox.y2"),
                          Operand::meta(1, "bbox.y2")),
    });
}

std::vector<BenchRow> bench_q3(const BenchConfig& cfg, uint64_t seed,
                               const VideoStore& vs, const SceneSpec& scene,
                               const GroundTruth& gt, uint16_t target,
                               const std::string& dir) {
    IoCounters etl_io;
    auto t0 = Clock::now();
    GeneratorSpec glyphs;
    glyphs.kind = GeneratorKind::glyph_reader;
    PatchCollection gcol =
        build_collection(vs, glyphs, std::nullopt, dir + "/q3_glyphs.pdb", etl_io);
    PatchCollection bcol = build_collection(vs, blob_spec(scene, cfg, seed),
                                            std::nullopt, dir + "/q3_blobs.pdb", etl_io);
    double etl_ms = ms_since(t0);

    std::set<uint64_t> truth;
    for (uint64_t t = 0; t < gt.per_frame.size(); t++)
        for (const auto& e : gt.per_frame[t])
            if (e.entity_id == target) {
                truth.insert(t);
                break;
            }

    std::vector<BenchRow> rows;
    for (BacktraceMode mode : {BacktraceMode::lineage_index, BacktraceMode::rescan}) {
        BenchRow row = base_row("q3", backtrace_mode_name(mode), vs, seed);
        row.etl_ms = etl_ms;
        ExecContext ctx;
        ctx.collections["glyphs"] = &gcol;
        ctx.collections["blobs"] = &bcol;
        ctx.videos[vs.video_id()] = &vs;
        auto plan = PlanNode::backtrace(
            PlanNode::nl_join(
                PlanNode::select(PlanNode::scan("glyphs"),
                                 Predicate::meta_cmp(
                                     0, "text", CmpOp::eq,
                                     MetaValue{std::to_string(target)})),
                PlanNode::scan("blobs"), containment_pred()),
            mode, 1);
        ExecResult res = execute(*plan, ctx);
        row.query_ms = res.stats.total_ms;
        add_io(row, etl_io);
        add_io(row, res.stats.io);
        row.index_probes = total_probes(res.stats);
        row.result_count = res.tuples.size();

        std::set<uint64_t> found;
        for (const auto& t : res.tuples) found.insert(tuple_frame(t, 0));
        set_score(row, found, truth);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<BenchRow> bench_q4(const BenchConfig& cfg, uint64_t seed,
                               const VideoStore& vs, const SceneSpec& scene,
                               const GroundTruth& gt, const std::string& dir) {
    IoCounters etl_io;
    auto t0 = Clock::now();
    TransformerSpec tr;
    tr.kind = TransformerKind::color_histogram;
    tr.bins = cfg.bins;
    PatchCollection col = build_collection(vs, blob_spec(scene, cfg, seed), tr,
                                           dir + "/q4_hist.pdb", etl_io);
    double etl_ms = ms_since(t0);
    uint64_t truth = expected_distinct(gt, "pedestrian");

    auto run = [&](const char* variant, PlanPtr plan) {
        BenchRow row = base_row("q4", variant, vs, seed);
        row.etl_ms = etl_ms;
        ExecContext ctx;
        ctx.collections["hist"] = &col;
        ExecResult res = execute(*plan, ctx);
        row.query_ms = res.stats.total_ms;
        add_io(row, etl_io);
        add_io(row, res.stats.io);
        row.index_probes = total_probes(res.stats);
        row.result_count = res.tuples.size();
        count_score(row, res.tuples.size(), truth);
        return row;
    };

    std::vector<BenchRow> rows;
    rows.push_back(run(
        "select_first",
        PlanNode::dedup(
            PlanNode::select(PlanNode::scan("hist"),
                             Predicate::meta_cmp(0, "label", CmpOp::eq,
                                                 MetaValue{std::string("pedestrian")})),
            cfg.tau)));
    rows.push_back(run(
        "dedup_first",
        PlanNode::select(PlanNode::dedup(PlanNode::scan("hist"), cfg.tau),
                         Predicate::contains_of(0, "group_labels", "pedestrian"))));
    return rows;
}

BenchRow bench_q5(uint64_t seed, const VideoStore& vs, const GroundTruth& gt,
                  uint16_t target, const std::string& dir) {
    BenchRow row = base_row("q5", "default", vs, seed);
    IoCounters etl_io;
    auto t0 = Clock::now();
    GeneratorSpec glyphs;
    glyphs.kind = GeneratorKind::glyph_reader;
    PatchCollection col =
        build_collection(vs, glyphs, std::nullopt, dir + "/q5_glyphs.pdb", etl_io);
    HashIndex idx = build_hash(col.load_all(), "text");
    col.put_index("text_hash", idx.serialize());
    row.etl_ms = ms_since(t0);

    ExecContext ctx;
    ctx.collections["glyphs"] = &col;
    ctx.load_index(col, "text_hash");

    Patch probe;
    probe.patch_id = next_patch_id();
    probe.lineage = {LineageStep{"probe", FrameId{"none", 0}, std::nullopt, 0}};
    probe.data = {0.0f};
    probe.shape = {1};
    probe.meta["text"] = MetaValue{std::to_string(target)};

    auto plan = PlanNode::index_join(PlanNode::memory({Tuple{std::move(probe)}}),
                                     "glyphs", "text_hash", 0, "text");
    ExecResult res = execute(*plan, ctx);
    row.query_ms = res.stats.total_ms;
    add_io(row, etl_io);
    add_io(row, res.stats.io);
    row.index_probes = total_probes(res.stats);

    std::optional<uint64_t> found;
    for (const auto& t : res.tuples) {
        uint64_t f = tuple_frame(t, 1);
        if (!found || f < *found) found = f;
    }
    row.result_count = found ? 1 : 0;
    std::optional<uint64_t> expected = expected_first_frame(gt, target);
    bool correct = found.has_value() == expected.has_value() &&
                   (!found || *found == *expected);
    row.precision = row.recall = correct ? 1.0 : 0.0;
    return row;
}

BenchRow bench_q6(const BenchConfig& cfg, uint64_t seed, const VideoStore& vs,
                  const SceneSpec& scene, const GroundTruth& gt,
                  const std::string& dir) {
    BenchRow row = base_row("q6", "default", vs, seed);
    IoCounters etl_io;
    auto t0 = Clock::now();
    TransformerSpec tr;
    tr.kind = TransformerKind::depth_proxy;
    PatchCollection col = build_collection(vs, blob_spec(scene, cfg, seed), tr,
                                           dir + "/q6_depth.pdb", etl_io);
    row.etl_ms = ms_since(t0);

    ExecContext ctx;
    ctx.collections["depths"] = &col;
    auto ped = [] {
        return Predicate::meta_cmp(0, "label", CmpOp::eq,
                                   MetaValue{std::string("pedestrian")});
    };
    auto plan = PlanNode::nl_join(
        PlanNode::select(PlanNode::scan("depths"), ped()),
        PlanNode::select(PlanNode::scan("depths"), ped()),
        Predicate::all_of({
            Predicate::cmp_of(CmpOp::eq, Operand::meta(0, "frameno"),
                              Operand::meta(1, "frameno")),
            Predicate::cmp_of(CmpOp::gt, Operand::meta(0, "depth"),
                              Operand::meta(1, "depth"), kDepthMargin),
            Predicate::cmp_of(CmpOp::lt, Operand::meta(0, "bbox.x1"),
                              Operand::meta(1, "bbox.x2")),
            Predicate::cmp_of(CmpOp::lt, Operand::meta(1, "bbox.x1"),
                              Operand::meta(0, "bbox.x2")),
        }));
    ExecResult res = execute(*plan, ctx);
    row.query_ms = res.stats.total_ms;
    add_io(row, etl_io);
    add_io(row, res.stats.io);
    row.index_probes = total_probes(res.stats);
    row.result_count = res.tuples.size();

    std::set<BehindPair> found;
    for (const auto& t : res.tuples)
        found.emplace(tuple_frame(t, 0), t.at(0).meta_box("bbox"),
                      t.at(1).meta_box("bbox"));
    std::set<BehindPair> truth = behind_pair_set(gt, kDepthMargin);
    set_score(row, found, truth);
    return row;
}

std::string format_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

std::string echo_config(const BenchConfig& cfg) {
    std::ostringstream os;
    auto join = [&os](const char* key, auto&& items, auto&& fmt) {
        os << key << "=";
        bool first = true;
        for (const auto& it : items) {
            if (!first) os << ",";
            os << fmt(it);
            first = false;
        }
        os << " ";
    };
    join("queries", cfg.queries, [](const std::string& q) { return q; });
    join("layouts", cfg.layouts,
         [](Layout l) { return std::string(layout_name(l)); });
    join("codecs", cfg.codecs,
         [](const CodecConfig& c) { return quality_name(c); });
    join("seeds", cfg.seeds, [](uint64_t s) { return std::to_string(s); });
    os << "\n";
    os << "tau=" << format_g(cfg.tau) << " bins=" << cfg.bins
       << " clip_len=" << cfg.clip_len << " leaf_size=" << cfg.leaf_size
       << " node_capacity=" << cfg.node_capacity
       << " label_noise_p=" << format_g(cfg.label_noise_p) << "\n";
    os << "frames=" << cfg.frames << " width=" << cfg.width
       << " height=" << cfg.height
       << " noise_amplitude=" << static_cast<int>(cfg.noise_amplitude)
       << " gallery_frames=" << cfg.gallery_frames
       << " gallery_pairs=" << cfg.gallery_pairs;
    if (cfg.q3_target) os << " q3_target=" << *cfg.q3_target;
    if (cfg.q5_target) os << " q5_target=" << *cfg.q5_target;
    if (cfg.tracking_override) os << " scene=custom";
    os << "\n";
    return os.str();
}

}  // namespace

std::string BenchRow::csv_row() const {
    char fbuf[64];
    std::string s = query + "," + variant + "," + layout_name(layout) + "," +
                    codec_mode_name(codec.mode) + "," + quality_name(codec) + "," +
                    std::to_string(seed) + ",";
    std::snprintf(fbuf, sizeof fbuf, "%.3f,%.3f", etl_ms, query_ms);
    s += fbuf;
    s += "," + std::to_string(storage_bytes) + "," + std::to_string(records_read) +
         "," + std::to_string(frames_decoded) + "," + std::to_string(index_probes) +
         "," + std::to_string(result_count) + ",";
    std::snprintf(fbuf, sizeof fbuf, "%.6f,%.6f", precision, recall);
    s += fbuf;
    return s;
}

const char* BenchReport::csv_header() {
    return "query,variant,layout,codec,quality,seed,etl_ms,query_ms,storage_bytes,"
           "records_read,frames_decoded,index_probes,result_count,precision,recall";
}

std::string BenchReport::to_csv() const {
    std::string out = csv_header();
    out += "\n";
    for (const auto& r : rows) {
        out += r.csv_row();
        out += "\n";
    }
    return out;
}

std::string BenchReport::to_text() const {
    std::ostringstream os;
    std::istringstream echo(config_echo);
    std::string line;
    while (std::getline(echo, line)) os << "# " << line << "\n";
    os << csv_header() << "\n";
    for (const auto& r : rows) os << r.csv_row() << "\n";
    return os.str();
}

BenchReport run_benchmark(const BenchConfig& cfg) {
    cfg.validate();
    // start ids from a clean slate so back-to-back runs are bit-identical
    reset_patch_ids();
    std::filesystem::create_directories(cfg.work_dir);

    BenchReport rep;
    rep.config_echo = echo_config(cfg);

    bool want_tracking = false, want_gallery = false;
    for (const auto& q : cfg.queries)
        (q == "q1" ? want_gallery : want_tracking) = true;

    for (uint64_t seed : cfg.seeds) {
        for (Layout layout : cfg.layouts) {
            for (const CodecConfig& codec : cfg.codecs) {
                std::string dir = cfg.work_dir + "/s" + std::to_string(seed) + "_" +
                                  layout_name(layout) + "_" + quality_name(codec);
                std::filesystem::create_directories(dir);

                std::optional<VideoStore> tvs, gvs;
                SceneSpec tscene;
                GroundTruth tgt, ggt;
                if (want_tracking) {
                    tscene = cfg.tracking_override
                                 ? *cfg.tracking_override
                                 : make_tracking_scene(seed, cfg.frames, cfg.width,
                                                       cfg.height);
                    tscene.seed = seed;
                    if (!cfg.tracking_override)
                        tscene.noise_amplitude = cfg.noise_amplitude;
                    auto [frames, gt] = gen_scene(tscene);
                    tgt = std::move(gt);
                    StoreDescriptor d{layout, codec, cfg.clip_len, dir + "/scene.pdb"};
                    tvs = VideoStore::ingest(*frames, d);
                }
                if (want_gallery) {
                    SceneSpec gscene =
                        make_gallery_scene(seed, cfg.gallery_frames, cfg.gallery_pairs);
                    gscene.noise_amplitude =
                        std::min<uint8_t>(cfg.noise_amplitude, 15);
                    auto [frames, gt] = gen_scene(gscene);
                    ggt = std::move(gt);
                    StoreDescriptor d{layout, codec, cfg.clip_len,
                                      dir + "/gallery.pdb"};
                    gvs = VideoStore::ingest(*frames, d);
                }

                uint16_t q3_target = cfg.q3_target.value_or(
                    tscene.entities.empty() ? 0 : tscene.entities.front().id);
                uint16_t q5_target = q3_target;
                if (!cfg.q5_target) {
                    uint64_t latest = 0;
                    for (const auto& e : tscene.entities)
                        if (e.enter >= latest) {
                            latest = e.enter;
                            q5_target = e.id;
                        }
                } else {
                    q5_target = *cfg.q5_target;
                }

                for (const auto& q : cfg.queries) {
                    if (q == "q1") {
                        rep.rows.push_back(bench_q1(cfg, seed, *gvs, ggt, dir));
                    } else if (q == "q2") {
                        rep.rows.push_back(bench_q2(cfg, seed, *tvs, tscene, tgt, dir));
                    } else if (q == "q3") {
                        auto rows =
                            bench_q3(cfg, seed, *tvs, tscene, tgt, q3_target, dir);
                        for (auto& r : rows) rep.rows.push_back(std::move(r));
                    } else if (q == "q4") {
                        auto rows = bench_q4(cfg, seed, *tvs, tscene, tgt, dir);
                        for (auto& r : rows) rep.rows.push_back(std::move(r));
                    } else if (q == "q5") {
                        rep.rows.push_back(
                            bench_q5(seed, *tvs, tgt, q5_target, dir));
                    } else {
                        rep.rows.push_back(bench_q6(cfg, seed, *tvs, tscene, tgt, dir));
                    }
                }
            }
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Scaling probe

std::vector<ScalingPoint> simjoin_scaling(const std::vector<uint64_t>& ns,
                                          const std::vector<uint32_t>& ds,
                                          uint64_t seed, double tau) {
    std::vector<ScalingPoint> out;
    for (uint32_t d : ds) {
        for (uint64_t n : ns) {
            SplitMix64 rng(mix_seed(seed, mix_seed(n, d)));
            auto draw = [&](uint64_t first_id) {
                std::vector<Patch> side(n);
                for (uint64_t i = 0; i < n; i++) {
                    side[i].patch_id = first_id + i;
                    side[i].shape = {d};
                    side[i].data.resize(d);
                    for (uint32_t k = 0; k < d; k++)
                        side[i].data[k] = static_cast<float>(rng.uniform());
                }
                return side;
            };
            std::vector<Patch> left = draw(1), right = draw(n + 1);
            double best = 0;
            for (int rep = 0; rep < 3; rep++) {
                auto t0 = Clock::now();
                sim_join_pairs(left, right, tau);
                double ms = ms_since(t0);
                if (rep == 0 || ms < best) best = ms;
            }
            out.push_back(ScalingPoint{n, d, best});
        }
    }
    return out;
}

std::string scaling_csv(const std::vector<ScalingPoint>& points) {
    std::string out = "n,d,ms\n";
    char buf[64];
    for (const auto& p : points) {
        std::snprintf(buf, sizeof buf, "%llu,%u,%.3f\n",
                      static_cast<unsigned long long>(p.n), p.d, p.ms);
        out += buf;
    }
    return out;
}

}  // namespace patchdb
