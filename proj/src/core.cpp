#include "patchdb/core.hpp"

#include <numeric>

namespace patchdb {

namespace {

std::atomic<uint64_t> g_next_patch_id{1};

size_t shape_product(const std::vector<uint32_t>& shape) {
    if (shape.empty()) return 0;
    size_t n = 1;
    for (uint32_t d : shape) n *= d;
    return n;
}

}  // namespace

const char* tag_name(Tag t) {
    switch (t) {
        case Tag::Int: return "int";
        case Tag::Float: return "float";
        case Tag::Str: return "str";
        case Tag::Box: return "box";
        case Tag::StrList: return "str_list";
    }
    return "?";
}

uint64_t next_patch_id() { return g_next_patch_id.fetch_add(1); }

void reset_patch_ids(uint64_t start) { g_next_patch_id.store(start); }

// ---------------------------------------------------------------------------
// Metadata accessors

namespace {

const MetaValue& require_meta(const Patch& p, std::string_view key, Tag want) {
    auto it = p.meta.find(std::string(key));
    if (it == p.meta.end())
        throw MissingKeyError("patch " + std::to_string(p.patch_id) +
                              " has no metadata key '" + std::string(key) + "'");
    if (meta_tag(it->second) != want)
        throw TagMismatchError("patch " + std::to_string(p.patch_id) + " key '" +
                               std::string(key) + "' has tag " +
                               tag_name(meta_tag(it->second)) + ", expected " +
                               tag_name(want));
    return it->second;
}

}  // namespace

int64_t Patch::meta_int(std::string_view key) const {
    return std::get<int64_t>(require_meta(*this, key, Tag::Int));
}

double Patch::meta_float(std::string_view key) const {
    return std::get<double>(require_meta(*this, key, Tag::Float));
}

const std::string& Patch::meta_str(std::string_view key) const {
    return std::get<std::string>(require_meta(*this, key, Tag::Str));
}

const BoundingBox& Patch::meta_box(std::string_view key) const {
    return std::get<BoundingBox>(require_meta(*this, key, Tag::Box));
}

const std::vector<std::string>& Patch::meta_str_list(std::string_view key) const {
    return std::get<std::vector<std::string>>(require_meta(*this, key, Tag::StrList));
}

// ---------------------------------------------------------------------------
// Core operations

Patch make_patch(const Frame& frame, const BoundingBox& region, Metadata metadata) {
    if (!region.valid() || region.x2 > frame.width || region.y2 > frame.height)
        throw RegionOutOfBoundsError(
            "region (" + std::to_string(region.x1) + "," + std::to_string(region.y1) +
            "," + std::to_string(region.x2) + "," + std::to_string(region.y2) +
            ") exceeds frame " + std::to_string(frame.width) + "x" +
            std::to_string(frame.height));

    Patch p;
    p.patch_id = next_patch_id();
    p.shape = {region.height(), region.width(), frame.channels};
    p.data.reserve(shape_product(p.shape));
    for (uint32_t y = region.y1; y < region.y2; y++)
        for (uint32_t x = region.x1; x < region.x2; x++)
            for (uint32_t c = 0; c < frame.channels; c++)
                p.data.push_back(static_cast<float>(frame.at(y, x, c)));

    LineageStep step;
    step.op_name = "make_patch";
    step.source = FrameId{frame.video_id, frame.frame_no};
    step.region = region;
    step.params_digest = ParamsDigest("make_patch")
                             .add("x1", static_cast<int64_t>(region.x1))
                             .add("y1", static_cast<int64_t>(region.y1))
                             .add("x2", static_cast<int64_t>(region.x2))
                             .add("y2", static_cast<int64_t>(region.y2))
                             .finish();
    p.lineage.push_back(std::move(step));

    p.meta = std::move(metadata);
    p.meta["frameno"] = static_cast<int64_t>(frame.frame_no);
    p.meta["bbox"] = region;
    p.meta["frame_w"] = static_cast<int64_t>(frame.width);
    p.meta["frame_h"] = static_cast<int64_t>(frame.height);
    return p;
}

Patch derive_patch(const Patch& parent, std::string op_name, std::vector<float> new_data,
                   std::vector<uint32_t> new_shape, Metadata new_entries,
                   uint64_t params_digest) {
    if (shape_product(new_shape) != new_data.size())
        throw ShapeError("derive_patch '" + op_name + "': data length " +
                         std::to_string(new_data.size()) + " does not match shape");

    Patch p;
    p.patch_id = next_patch_id();
    p.data = std::move(new_data);
    p.shape = std::move(new_shape);

    LineageStep step;
    step.op_name = std::move(op_name);
    step.source = parent.patch_id;
    step.params_digest = params_digest;
    p.lineage.reserve(parent.lineage.size() + 1);
    p.lineage.push_back(std::move(step));
    p.lineage.insert(p.lineage.end(), parent.lineage.begin(), parent.lineage.end());

    p.meta = parent.meta;
    for (auto& [k, v] : new_entries) p.meta[k] = std::move(v);
    return p;
}

std::vector<FrameId> base_frames_of(const Patch& p) {
    if (p.lineage.empty() || p.lineage.back().kind() != SourceKind::base_frame)
        throw MalformedLineageError("patch " + std::to_string(p.patch_id) +
                                    ": lineage does not terminate in a base frame");
    std::vector<FrameId> out;
    for (const auto& step : p.lineage)
        if (step.kind() == SourceKind::base_frame) out.push_back(step.frame());
    return out;
}

bool check_schema(const Patch& p, const PatchSchema& s) {
    if (s.data_shape && p.shape != *s.data_shape) return false;
    if (s.label_domain) {
        auto it = p.meta.find("label");
        if (it == p.meta.end() || meta_tag(it->second) != Tag::Str) return false;
        if (!s.label_domain->count(std::get<std::string>(it->second))) return false;
    }
    for (const auto& [key, tag] : s.required_keys) {
        auto it = p.meta.find(key);
        if (it == p.meta.end() || meta_tag(it->second) != tag) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Canonical serialization

void serialize_meta_value(const MetaValue& v, ByteWriter& w) {
    w.u8(static_cast<uint8_t>(v.index()));
    switch (meta_tag(v)) {
        case Tag::Int:
            w.i64(std::get<int64_t>(v));
            break;
        case Tag::Float:
            w.f64(std::get<double>(v));
            break;
        case Tag::Str:
            w.str16(std::get<std::string>(v));
            break;
        case Tag::Box: {
            const auto& b = std::get<BoundingBox>(v);
            w.u32(b.x1);
            w.u32(b.y1);
            w.u32(b.x2);
            w.u32(b.y2);
            break;
        }
        case Tag::StrList: {
            const auto& l = std::get<std::vector<std::string>>(v);
            if (l.size() > 65535) throw Error("string list too long to serialize");
            w.u16(static_cast<uint16_t>(l.size()));
            for (const auto& s : l) w.str16(s);
            break;
        }
    }
}

MetaValue deserialize_meta_value(ByteReader& r) {
    switch (static_cast<Tag>(r.u8())) {
        case Tag::Int: return r.i64();
        case Tag::Float: return r.f64();
        case Tag::Str: return r.str16();
        case Tag::Box: {
            BoundingBox b;
            b.x1 = r.u32();
            b.y1 = r.u32();
            b.x2 = r.u32();
            b.y2 = r.u32();
            return b;
        }
        case Tag::StrList: {
            size_t n = r.u16();
            std::vector<std::string> l;
            l.reserve(n);
            for (size_t i = 0; i < n; i++) l.push_back(r.str16());
            return l;
        }
    }
    throw Error("unknown metadata tag byte");
}

void serialize_patch_body(const Patch& p, ByteWriter& w) {
    w.u64(p.patch_id);

    if (p.shape.size() > 255) throw Error("shape rank too large to serialize");
    w.u8(static_cast<uint8_t>(p.shape.size()));
    for (uint32_t d : p.shape) w.u32(d);
    for (float v : p.data) w.f32(v);

    if (p.lineage.size() > 65535) throw Error("lineage too long to serialize");
    w.u16(static_cast<uint16_t>(p.lineage.size()));
    for (const auto& step : p.lineage) {
        w.str8(step.op_name);
        w.u8(static_cast<uint8_t>(step.kind()));
        if (step.kind() == SourceKind::base_frame) {
            w.str8(step.frame().video_id);
            w.u64(step.frame().frame_no);
        } else {
            w.u64(step.parent_id());
        }
        w.u8(step.region ? 1 : 0);
        if (step.region) {
            w.u32(step.region->x1);
            w.u32(step.region->y1);
            w.u32(step.region->x2);
            w.u32(step.region->y2);
        }
        w.u64(step.params_digest);
    }

    if (p.meta.size() > 65535) throw Error("metadata too large to serialize");
    w.u16(static_cast<uint16_t>(p.meta.size()));
    for (const auto& [k, v] : p.meta) {
        w.str8(k);
        serialize_meta_value(v, w);
    }
}

std::string serialize_patch(const Patch& p) {
    ByteWriter body;
    serialize_patch_body(p, body);
    ByteWriter out;
    out.u32(static_cast<uint32_t>(body.size()));
    out.raw(body.bytes().data(), body.size());
    return out.take();
}

Patch deserialize_patch_body(ByteReader& r) {
    Patch p;
    p.patch_id = r.u64();

    size_t rank = r.u8();
    p.shape.reserve(rank);
    for (size_t i = 0; i < rank; i++) p.shape.push_back(r.u32());
    size_t n = shape_product(p.shape);
    p.data.reserve(n);
    for (size_t i = 0; i < n; i++) p.data.push_back(r.f32());

    size_t steps = r.u16();
    p.lineage.reserve(steps);
    for (size_t i = 0; i < steps; i++) {
        LineageStep step;
        step.op_name = r.str8();
        auto kind = static_cast<SourceKind>(r.u8());
        if (kind == SourceKind::base_frame) {
            FrameId fid;
            fid.video_id = r.str8();
            fid.frame_no = r.u64();
            step.source = std::move(fid);
        } else {
            step.source = r.u64();
        }
        if (r.u8()) {
            BoundingBox b;
            b.x1 = r.u32();
            b.y1 = r.u32();
            b.x2 = r.u32();
            b.y2 = r.u32();
            step.region = b;
        }
        step.params_digest = r.u64();
        p.lineage.push_back(std::move(step));
    }

    size_t entries = r.u16();
    for (size_t i = 0; i < entries; i++) {
        std::string key = r.str8();
        p.meta.emplace(std::move(key), deserialize_meta_value(r));
    }
    return p;
}

Patch deserialize_patch(std::string_view record) {
    ByteReader r(record);
    size_t body_len = r.u32();
    if (body_len != r.remaining())
        throw Error("patch record length prefix does not match payload");
    Patch p = deserialize_patch_body(r);
    if (!r.done()) throw Error("trailing bytes after patch record");
    return p;
}

}  // namespace patchdb
