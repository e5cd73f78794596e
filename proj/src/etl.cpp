#include "patchdb/etl.hpp"

#include <algorithm>
#include <set>

#include "patchdb/rng.hpp"

namespace patchdb {

const char* generator_kind_name(GeneratorKind k) {
    switch (k) {
        case GeneratorKind::whole_image: return "whole_image";
        case GeneratorKind::tiles: return "tiles";
        case GeneratorKind::blob_detector: return "blob_detector";
        case GeneratorKind::glyph_reader: return "glyph_reader";
    }
    return "?";
}

GeneratorKind generator_kind_from_name(std::string_view name) {
    if (name == "whole_image") return GeneratorKind::whole_image;
    if (name == "tiles") return GeneratorKind::tiles;
    if (name == "blob_detector") return GeneratorKind::blob_detector;
    if (name == "glyph_reader") return GeneratorKind::glyph_reader;
    throw ConfigError("unknown generator kind '" + std::string(name) + "'");
}

const char* transformer_kind_name(TransformerKind k) {
    switch (k) {
        case TransformerKind::color_histogram: return "color_histogram";
        case TransformerKind::depth_proxy: return "depth_proxy";
    }
    return "?";
}

TransformerKind transformer_kind_from_name(std::string_view name) {
    if (name == "color_histogram") return TransformerKind::color_histogram;
    if (name == "depth_proxy") return TransformerKind::depth_proxy;
    throw ConfigError("unknown transformer kind '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Spec validation and schemas

void GeneratorSpec::validate() const {
    switch (kind) {
        case GeneratorKind::whole_image:
        case GeneratorKind::glyph_reader:
            break;
        case GeneratorKind::tiles:
            if (tile_w < 1 || tile_h < 1)
                throw ConfigError("tiles generator needs tile_w and tile_h >= 1");
            break;
        case GeneratorKind::blob_detector:
            if (palette.empty())
                throw ConfigError("blob_detector palette must not be empty");
            if (min_area < 1) throw ConfigError("blob_detector min_area must be >= 1");
            if (label_noise_p < 0.0 || label_noise_p > 1.0)
                throw ConfigError("label_noise_p must be within [0, 1]");
            break;
    }
}

void TransformerSpec::validate() const {
    if (kind == TransformerKind::color_histogram && bins < 2)
        throw ConfigError("color_histogram needs at least 2 bins per channel");
}

PatchSchema GeneratorSpec::output_schema() const {
    PatchSchema s;
    s.required_keys = {{"frameno", Tag::Int},
                       {"bbox", Tag::Box},
                       {"frame_w", Tag::Int},
                       {"frame_h", Tag::Int}};
    switch (kind) {
        case GeneratorKind::whole_image:
            break;  // frame-sized pixels; shape depends on the video
        case GeneratorKind::tiles:
            s.data_shape = std::vector<uint32_t>{tile_h, tile_w, 3};
            break;
        case GeneratorKind::blob_detector: {
            std::set<std::string> domain;
            for (const auto& e : palette) domain.insert(e.label);
            s.label_domain = std::move(domain);
            s.required_keys["label"] = Tag::Str;
            break;
        }
        case GeneratorKind::glyph_reader:
            s.data_shape = std::vector<uint32_t>{kGlyphRows, kGlyphCols, 3};
            s.required_keys["text"] = Tag::Str;
            break;
    }
    return s;
}

PatchSchema TransformerSpec::output_schema(const PatchSchema& input) const {
    PatchSchema s = input;
    if (kind == TransformerKind::color_histogram) {
        s.data_shape = std::vector<uint32_t>{3 * bins};
    } else {
        s.required_keys["depth"] = Tag::Float;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Blob detector

namespace {

int palette_match(const std::vector<PaletteEntry>& palette, uint8_t r, uint8_t g,
                  uint8_t b) {
    int best = -1;
    int best_dist = kPaletteTolerance + 1;
    for (size_t i = 0; i < palette.size(); i++) {
        const PaletteEntry& e = palette[i];
        int dist = std::max({std::abs(int(r) - int(e.r)), std::abs(int(g) - int(e.g)),
                             std::abs(int(b) - int(e.b))});
        if (dist <= kPaletteTolerance && dist < best_dist) {
            best_dist = dist;
            best = static_cast<int>(i);
        }
    }
    return best;
}

}  // namespace

std::vector<Patch> detect_blobs(const Frame& frame, const GeneratorSpec& g) {
    g.validate();
    const uint32_t w = frame.width, h = frame.height;
    std::vector<int16_t> assign(static_cast<size_t>(w) * h, -1);
    for (uint32_t y = 0; y < h; y++)
        for (uint32_t x = 0; x < w; x++)
            assign[static_cast<size_t>(y) * w + x] = static_cast<int16_t>(
                palette_match(g.palette, frame.at(y, x, 0), frame.at(y, x, 1),
                              frame.at(y, x, 2)));

    // Distinct labels, for drawing a uniformly random *other* label on a flip.
    std::vector<std::string> labels;
    for (const auto& e : g.palette) labels.push_back(e.label);
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());

    SplitMix64 rng(mix_seed(g.seed, frame.frame_no));
    std::vector<Patch> out;
    std::vector<uint8_t> seen(static_cast<size_t>(w) * h, 0);
    std::vector<uint32_t> queue;

    for (uint32_t y0 = 0; y0 < h; y0++) {
        for (uint32_t x0 = 0; x0 < w; x0++) {
            size_t start = static_cast<size_t>(y0) * w + x0;
            if (seen[start] || assign[start] < 0) continue;
            int16_t color = assign[start];

            // 4-connected flood fill
            uint32_t min_x = x0, max_x = x0, min_y = y0, max_y = y0;
            size_t area = 0;
            queue.clear();
            queue.push_back(static_cast<uint32_t>(start));
            seen[start] = 1;
            while (!queue.empty()) {
                uint32_t cur = queue.back();
                queue.pop_back();
                uint32_t cy = cur / w, cx = cur % w;
                area++;
                min_x = std::min(min_x, cx);
                max_x = std::max(max_x, cx);
                min_y = std::min(min_y, cy);
                max_y = std::max(max_y, cy);
                const std::pair<int64_t, int64_t> steps[4] = {
                    {-1, 0}, {1, 0}, {0, -1}, {0, 1}};
                for (auto [dx, dy] : steps) {
                    int64_t nx = int64_t(cx) + dx, ny = int64_t(cy) + dy;
                    if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                    size_t ni = static_cast<size_t>(ny) * w + nx;
                    if (seen[ni] || assign[ni] != color) continue;
                    seen[ni] = 1;
                    queue.push_back(static_cast<uint32_t>(ni));
                }
            }
            if (area < g.min_area) continue;

            std::string label = g.palette[color].label;
            if (g.label_noise_p > 0.0 && rng.uniform() < g.label_noise_p) {
                std::vector<const std::string*> others;
                for (const auto& l : labels)
                    if (l != label) others.push_back(&l);
                if (!others.empty())
                    label = *others[rng.below(others.size())];
            }

            BoundingBox box{min_x, min_y, max_x + 1, max_y + 1};
            out.push_back(make_patch(frame, box, {{"label", label}}));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Glyph reader

namespace {

// 0 black, 1 white, -1 neither
int pixel_class(const Frame& f, uint32_t y, uint32_t x) {
    int lum = (int(f.at(y, x, 0)) + int(f.at(y, x, 1)) + int(f.at(y, x, 2))) / 3;
    if (lum < 64) return 0;
    if (lum >= 192) return 1;
    return -1;
}

std::optional<uint16_t> read_strip(const Frame& f, uint32_t x, uint32_t y) {
    uint32_t id = 0;
    for (uint32_t c = 0; c < kGlyphCols; c++) {
        int sync_top = pixel_class(f, y, x + c);
        if (sync_top != int((c + 1) & 1)) return std::nullopt;  // white first
        int data = pixel_class(f, y + 1, x + c);
        int comp = pixel_class(f, y + 2, x + c);
        if (data < 0 || comp != 1 - data) return std::nullopt;
        int sync_bot = pixel_class(f, y + 3, x + c);
        if (sync_bot != int(c & 1)) return std::nullopt;  // black first
        id = (id << 1) | static_cast<uint32_t>(data);
    }
    return static_cast<uint16_t>(id);
}

}  // namespace

std::vector<Patch> read_glyphs(const Frame& frame) {
    std::vector<Patch> out;
    if (frame.width < kGlyphCols || frame.height < kGlyphRows) return out;
    for (uint32_t y = 0; y + kGlyphRows <= frame.height; y++) {
        for (uint32_t x = 0; x + kGlyphCols <= frame.width; x++) {
            // Cheap pre-check on the first two sync pixels before the full
            // strip test.
            if (pixel_class(frame, y, x) != 1 || pixel_class(frame, y, x + 1) != 0)
                continue;
            auto id = read_strip(frame, x, y);
            if (!id) continue;
            BoundingBox box{x, y, x + kGlyphCols, y + kGlyphRows};
            out.push_back(
                make_patch(frame, box, {{"text", std::to_string(*id)}}));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Generators as streams

std::unique_ptr<Stream<Patch>> generate(std::unique_ptr<Stream<Frame>> frames,
                                        const GeneratorSpec& g) {
    g.validate();
    switch (g.kind) {
        case GeneratorKind::whole_image:
            return make_stream<Patch>(
                [in = std::move(frames)]() mutable -> std::optional<Patch> {
                    auto f = in->next();
                    if (!f) return std::nullopt;
                    return make_patch(*f, {0, 0, f->width, f->height}, {});
                });

        case GeneratorKind::tiles: {
            struct State {
                std::unique_ptr<Stream<Frame>> in;
                uint32_t tw, th;
                std::optional<Frame> cur;
                uint32_t tx = 0, ty = 0, ntx = 0, nty = 0;
            };
            auto st = std::make_shared<State>();
            st->in = std::move(frames);
            st->tw = g.tile_w;
            st->th = g.tile_h;
            return make_stream<Patch>([st]() mutable -> std::optional<Patch> {
                for (;;) {
                    if (!st->cur) {
                        st->cur = st->in->next();
                        if (!st->cur) return std::nullopt;
                        st->ntx = st->cur->width / st->tw;
                        st->nty = st->cur->height / st->th;
                        st->tx = st->ty = 0;
                    }
                    if (st->ty >= st->nty) {
                        st->cur.reset();
                        continue;
                    }
                    BoundingBox box{st->tx * st->tw, st->ty * st->th,
                                    (st->tx + 1) * st->tw, (st->ty + 1) * st->th};
                    Patch p = make_patch(*st->cur, box, {});
                    if (++st->tx >= st->ntx) {
                        st->tx = 0;
                        st->ty++;
                    }
                    return p;
                }
            });
        }

        case GeneratorKind::blob_detector:
        case GeneratorKind::glyph_reader: {
            struct State {
                std::unique_ptr<Stream<Frame>> in;
                GeneratorSpec g;
                std::vector<Patch> buf;
                size_t pos = 0;
            };
            auto st = std::make_shared<State>();
            st->in = std::move(frames);
            st->g = g;
            return make_stream<Patch>([st]() mutable -> std::optional<Patch> {
                while (st->pos >= st->buf.size()) {
                    auto f = st->in->next();
                    if (!f) return std::nullopt;
                    st->buf = st->g.kind == GeneratorKind::blob_detector
                                  ? detect_blobs(*f, st->g)
                                  : read_glyphs(*f);
                    st->pos = 0;
                }
                return std::move(st->buf[st->pos++]);
            });
        }
    }
    throw Error("unreachable generator kind");
}

// ---------------------------------------------------------------------------
// Transformers

Patch apply_transformer(const Patch& p, const TransformerSpec& t) {
    t.validate();
    if (!(p.shape.size() == 3 && p.shape[2] == 3))
        throw ShapeError("transformer input must be pixel shaped [h,w,3], patch " +
                         std::to_string(p.patch_id) + " is not");

    if (t.kind == TransformerKind::color_histogram) {
        const uint32_t bins = t.bins;
        const size_t pixels = static_cast<size_t>(p.shape[0]) * p.shape[1];
        std::vector<float> hist(3 * bins, 0.0f);
        for (size_t i = 0; i < pixels; i++) {
            for (size_t c = 0; c < 3; c++) {
                float v = p.data[i * 3 + c];
                uint32_t bin = static_cast<uint32_t>(v * bins / 256.0f);
                if (bin >= bins) bin = bins - 1;
                hist[c * bins + bin] += 1.0f;
            }
        }
        for (auto& v : hist) v /= static_cast<float>(pixels);
        uint64_t digest = ParamsDigest("color_histogram")
                              .add("bins", static_cast<int64_t>(bins))
                              .finish();
        return derive_patch(p, "color_histogram", std::move(hist), {3 * bins}, {},
                            digest);
    }

    // depth_proxy: annotate, keep the pixels
    const BoundingBox& box = p.meta_box("bbox");
    int64_t frame_h = p.meta_int("frame_h");
    double depth = 1.0 - static_cast<double>(box.y2) / static_cast<double>(frame_h);
    uint64_t digest = ParamsDigest("depth_proxy").finish();
    return derive_patch(p, "depth_proxy", p.data, p.shape, {{"depth", depth}}, digest);
}

std::unique_ptr<Stream<Patch>> transform(std::unique_ptr<Stream<Patch>> patches,
                                         const TransformerSpec& t) {
    t.validate();
    return make_stream<Patch>(
        [in = std::move(patches), t]() mutable -> std::optional<Patch> {
            auto p = in->next();
            if (!p) return std::nullopt;
            return apply_transformer(*p, t);
        });
}

// ---------------------------------------------------------------------------
// Materialized collections

namespace {

const std::string kCollectionKey = RecordStore::reserved_key("collection");
const std::string kForwardKey = RecordStore::reserved_key("lineage_fwd");
const std::string kIndexPrefix = RecordStore::reserved_key("idx:");

std::string serialize_forward(const std::map<FrameId, std::vector<uint64_t>>& fwd) {
    ByteWriter w;
    w.u64(fwd.size());
    for (const auto& [fid, ids] : fwd) {
        w.str8(fid.video_id);
        w.u64(fid.frame_no);
        w.u32(static_cast<uint32_t>(ids.size()));
        for (uint64_t id : ids) w.u64(id);
    }
    return w.take();
}

std::map<FrameId, std::vector<uint64_t>> deserialize_forward(std::string_view blob) {
    std::map<FrameId, std::vector<uint64_t>> fwd;
    ByteReader r(blob);
    uint64_t n = r.u64();
    for (uint64_t i = 0; i < n; i++) {
        FrameId fid;
        fid.video_id = r.str8();
        fid.frame_no = r.u64();
        uint32_t k = r.u32();
        std::vector<uint64_t> ids(k);
        for (auto& id : ids) id = r.u64();
        fwd.emplace(std::move(fid), std::move(ids));
    }
    return fwd;
}

}  // namespace

PatchCollection PatchCollection::materialize(Stream<Patch>& patches,
                                             const std::string& path) {
    PatchCollection col;
    auto rs = RecordStore::create(path);
    while (auto p = patches.next()) {
        std::string key = RecordStore::key_u64(p->patch_id);
        if (rs->has(key))
            throw DuplicatePatchIdError("patch id " + std::to_string(p->patch_id) +
                                        " materialized twice");
        rs->put(key, serialize_patch(*p));
        auto bases = base_frames_of(*p);
        for (const FrameId& fid : bases) col.fwd_[fid].push_back(p->patch_id);
        col.count_++;
    }
    for (auto& [fid, ids] : col.fwd_) std::sort(ids.begin(), ids.end());

    ByteWriter desc;
    desc.raw("PCOL", 4);
    desc.u64(col.count_);
    rs->put(kCollectionKey, desc.bytes());
    rs->put(kForwardKey, serialize_forward(col.fwd_));
    rs->finalize();
    col.rs_ = std::move(rs);
    return col;
}

PatchCollection PatchCollection::open(const std::string& path, bool writable) {
    PatchCollection col;
    col.rs_ = RecordStore::open(path, writable);
    auto desc = col.rs_->get(kCollectionKey);
    if (!desc || desc->size() < 12 || desc->compare(0, 4, "PCOL") != 0)
        throw IoError(path + " is not a patch collection");
    ByteReader r(desc->data() + 4, desc->size() - 4);
    col.count_ = r.u64();
    auto fwd = col.rs_->get(kForwardKey);
    if (fwd) col.fwd_ = deserialize_forward(*fwd);
    return col;
}

std::unique_ptr<Stream<Patch>> PatchCollection::scan(IoCounters& io) const {
    auto cursor = rs_->scan("", std::string("\xFF"));
    return make_stream<Patch>(
        [cursor = std::move(cursor), &io]() mutable -> std::optional<Patch> {
            std::string k, v;
            if (!cursor.next(k, v)) return std::nullopt;
            io.records_read++;
            io.bytes_read += v.size();
            return deserialize_patch(v);
        });
}

std::optional<Patch> PatchCollection::get(uint64_t patch_id, IoCounters& io) const {
    auto v = rs_->get(RecordStore::key_u64(patch_id));
    if (!v) return std::nullopt;
    io.records_read++;
    io.bytes_read += v->size();
    return deserialize_patch(*v);
}

std::vector<Patch> PatchCollection::load_all() const {
    IoCounters io;
    auto s = scan(io);
    return drain(*s);
}

std::vector<uint64_t> PatchCollection::ids_for_frame(const FrameId& fid) const {
    auto it = fwd_.find(fid);
    return it == fwd_.end() ? std::vector<uint64_t>{} : it->second;
}

void PatchCollection::put_index(const std::string& name, std::string_view blob) {
    rs_->put(kIndexPrefix + name, blob);
    rs_->finalize();
}

std::optional<std::string> PatchCollection::get_index(const std::string& name) const {
    return rs_->get(kIndexPrefix + name);
}

std::vector<std::string> PatchCollection::index_names() const {
    std::string hi = kIndexPrefix;
    hi.back()++;  // ':' -> ';' bounds the prefix range
    std::vector<std::string> out;
    for (const auto& key : rs_->keys_in_range(kIndexPrefix, hi))
        out.push_back(key.substr(kIndexPrefix.size()));
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline validation

PipelineStage PipelineStage::generator(GeneratorSpec g) {
    PipelineStage s;
    s.kind = Kind::generator;
    s.gen = std::move(g);
    return s;
}

PipelineStage PipelineStage::transformer(TransformerSpec t) {
    PipelineStage s;
    s.kind = Kind::transformer;
    s.trans = t;
    return s;
}

PipelineStage PipelineStage::label_filter(std::string label) {
    PipelineStage s;
    s.kind = Kind::label_filter;
    s.filter_label = std::move(label);
    return s;
}

PipelineStage PipelineStage::balltree_join(uint32_t dim) {
    PipelineStage s;
    s.kind = Kind::balltree_join;
    s.join_dim = dim;
    return s;
}

std::vector<Violation> validate_pipeline(const std::vector<PipelineStage>& stages) {
    std::vector<Violation> out;
    if (stages.empty()) {
        out.push_back({0, "pipeline has no stages"});
        return out;
    }
    if (stages[0].kind != PipelineStage::Kind::generator)
        out.push_back({0, "pipeline must begin with a generator"});

    PatchSchema cur;  // wildcard until a generator establishes one
    for (size_t i = 0; i < stages.size(); i++) {
        const PipelineStage& st = stages[i];
        switch (st.kind) {
            case PipelineStage::Kind::generator: {
                if (i != 0)
                    out.push_back({i, "generator allowed only as the first stage"});
                try {
                    st.gen.validate();
                    cur = st.gen.output_schema();
                } catch (const ConfigError& e) {
                    out.push_back({i, e.what()});
                }
                break;
            }
            case PipelineStage::Kind::transformer: {
                try {
                    st.trans.validate();
                } catch (const ConfigError& e) {
                    out.push_back({i, e.what()});
                    break;
                }
                if (cur.data_shape) {
                    const auto& sh = *cur.data_shape;
                    if (!(sh.size() == 3 && sh[2] == 3))
                        out.push_back(
                            {i, std::string(transformer_kind_name(st.trans.kind)) +
                                    " requires pixel shaped input [h,w,3]"});
                }
                cur = st.trans.output_schema(cur);
                break;
            }
            case PipelineStage::Kind::label_filter: {
                if (cur.label_domain && !cur.label_domain->count(st.filter_label))
                    out.push_back({i, "label '" + st.filter_label +
                                          "' is not producible by this pipeline"});
                break;
            }
            case PipelineStage::Kind::balltree_join: {
                if (cur.data_shape) {
                    const auto& sh = *cur.data_shape;
                    if (!(sh.size() == 1 && sh[0] == st.join_dim))
                        out.push_back(
                            {i, "join declared dimensionality " +
                                    std::to_string(st.join_dim) +
                                    " but the stage output shape disagrees"});
                }
                break;
            }
        }
    }
    return out;
}

}  // namespace patchdb
