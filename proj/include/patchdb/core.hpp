#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "patchdb/bytes.hpp"

namespace patchdb {

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define PATCHDB_ERROR(Name)                    \
    class Name : public Error {                \
    public:                                    \
        using Error::Error;                    \
    }

PATCHDB_ERROR(RegionOutOfBoundsError);
PATCHDB_ERROR(MalformedLineageError);
PATCHDB_ERROR(MissingKeyError);
PATCHDB_ERROR(DimensionMismatchError);
PATCHDB_ERROR(KTooLargeError);
PATCHDB_ERROR(EmptyInputError);
PATCHDB_ERROR(MixedDimensionError);
PATCHDB_ERROR(OutOfOrderFrameError);
PATCHDB_ERROR(MissingFrameError);
PATCHDB_ERROR(DuplicatePatchIdError);
PATCHDB_ERROR(IoError);
PATCHDB_ERROR(TagMismatchError);
PATCHDB_ERROR(ShapeError);
PATCHDB_ERROR(ValidationError);
PATCHDB_ERROR(ConfigError);

#undef PATCHDB_ERROR

// ---------------------------------------------------------------------------
// Domain types

// Half-open pixel rectangle [x1,x2) x [y1,y2).
struct BoundingBox {
    uint32_t x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    uint32_t width() const { return x2 - x1; }
    uint32_t height() const { return y2 - y1; }
    bool valid() const { return x1 < x2 && y1 < y2; }

    bool operator==(const BoundingBox&) const = default;
    auto operator<=>(const BoundingBox&) const = default;
};

struct Frame {
    std::string video_id;
    uint64_t frame_no = 0;
    uint32_t width = 0;
    uint32_t height = 0;
    uint8_t channels = 3;
    std::vector<uint8_t> pixels;  // row-major, h*w*channels

    uint8_t at(uint32_t y, uint32_t x, uint32_t c) const {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    uint8_t& at(uint32_t y, uint32_t x, uint32_t c) {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }
};

struct FrameId {
    std::string video_id;
    uint64_t frame_no = 0;

    bool operator==(const FrameId&) const = default;
    auto operator<=>(const FrameId&) const = default;
};

// Variant order fixes the on-disk tag bytes: Int=0 Float=1 Str=2 Box=3 StrList=4.
using MetaValue =
    std::variant<int64_t, double, std::string, BoundingBox, std::vector<std::string>>;

enum class Tag : uint8_t { Int = 0, Float = 1, Str = 2, Box = 3, StrList = 4 };

inline Tag meta_tag(const MetaValue& v) { return static_cast<Tag>(v.index()); }

const char* tag_name(Tag t);

using Metadata = std::map<std::string, MetaValue>;

enum class SourceKind : uint8_t { base_frame = 0, patch = 1 };

struct LineageStep {
    std::string op_name;
    // index 0 = base_frame source, index 1 = parent patch id
    std::variant<FrameId, uint64_t> source;
    std::optional<BoundingBox> region;
    uint64_t params_digest = 0;

    SourceKind kind() const { return static_cast<SourceKind>(source.index()); }
    const FrameId& frame() const { return std::get<FrameId>(source); }
    uint64_t parent_id() const { return std::get<uint64_t>(source); }

    bool operator==(const LineageStep&) const = default;
};

// Derivation chain, most-recent step first; the last step must be base_frame.
using LineageRef = std::vector<LineageStep>;

struct Patch {
    uint64_t patch_id = 0;
    LineageRef lineage;
    std::vector<float> data;
    std::vector<uint32_t> shape;
    Metadata meta;

    size_t data_len() const { return data.size(); }
    bool is_pixel() const { return shape.size() == 3 && shape[2] == 3; }
    bool is_feature() const { return shape.size() == 1; }

    const MetaValue* find_meta(std::string_view key) const {
        auto it = meta.find(std::string(key));
        return it == meta.end() ? nullptr : &it->second;
    }
    int64_t meta_int(std::string_view key) const;
    double meta_float(std::string_view key) const;
    const std::string& meta_str(std::string_view key) const;
    const BoundingBox& meta_box(std::string_view key) const;
    const std::vector<std::string>& meta_str_list(std::string_view key) const;
};

struct PatchSchema {
    std::optional<std::vector<uint32_t>> data_shape;  // nullopt = wildcard
    std::optional<std::set<std::string>> label_domain; // nullopt = open
    std::map<std::string, Tag> required_keys;
};

// ---------------------------------------------------------------------------
// Hashing and id assignment

constexpr uint64_t kFnvOffset = 14695981039346656037ull;
constexpr uint64_t kFnvPrime = 1099511628211ull;

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = kFnvOffset) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; i++) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = kFnvOffset) {
    return fnv1a64(s.data(), s.size(), h);
}

// Builds the canonical byte encoding of an operation's parameter list and
// hashes it, so equal parameters always produce equal digests.
class ParamsDigest {
public:
    explicit ParamsDigest(std::string_view op_name) { w_.str8(op_name); }

    ParamsDigest& add(std::string_view key, int64_t v) {
        w_.str8(key);
        w_.u8(0);
        w_.i64(v);
        return *this;
    }
    ParamsDigest& add(std::string_view key, double v) {
        w_.str8(key);
        w_.u8(1);
        w_.f64(v);
        return *this;
    }
    ParamsDigest& add(std::string_view key, std::string_view v) {
        w_.str8(key);
        w_.u8(2);
        w_.str16(v);
        return *this;
    }
    uint64_t finish() const { return fnv1a64(w_.bytes()); }

private:
    ByteWriter w_;
};

uint64_t next_patch_id();
void reset_patch_ids(uint64_t start = 1);

// ---------------------------------------------------------------------------
// Core operations

Patch make_patch(const Frame& frame, const BoundingBox& region, Metadata metadata);

Patch derive_patch(const Patch& parent, std::string op_name, std::vector<float> new_data,
                   std::vector<uint32_t> new_shape, Metadata new_entries,
                   uint64_t params_digest);

std::vector<FrameId> base_frames_of(const Patch& p);

bool check_schema(const Patch& p, const PatchSchema& s);

// ---------------------------------------------------------------------------
// Canonical serialization (length-prefixed, big-endian throughout)

void serialize_patch_body(const Patch& p, ByteWriter& w);
std::string serialize_patch(const Patch& p);
Patch deserialize_patch_body(ByteReader& r);
Patch deserialize_patch(std::string_view record);

void serialize_meta_value(const MetaValue& v, ByteWriter& w);
MetaValue deserialize_meta_value(ByteReader& r);

// ---------------------------------------------------------------------------
// Pull iterators

template <typename T>
class Stream {
public:
    virtual ~Stream() = default;
    virtual std::optional<T> next() = 0;
};

using Tuple = std::vector<Patch>;

template <typename T>
class VectorStream final : public Stream<T> {
public:
    explicit VectorStream(std::vector<T> items) : items_(std::move(items)) {}

    std::optional<T> next() override {
        if (pos_ >= items_.size()) return std::nullopt;
        return std::move(items_[pos_++]);
    }

private:
    std::vector<T> items_;
    size_t pos_ = 0;
};

template <typename T, typename Fn>
class FnStream final : public Stream<T> {
public:
    explicit FnStream(Fn fn) : fn_(std::move(fn)) {}
    std::optional<T> next() override { return fn_(); }

private:
    Fn fn_;
};

template <typename T, typename Fn>
std::unique_ptr<Stream<T>> make_stream(Fn fn) {
    return std::make_unique<FnStream<T, Fn>>(std::move(fn));
}

template <typename T>
std::vector<T> drain(Stream<T>& s) {
    std::vector<T> out;
    while (auto v = s.next()) out.push_back(std::move(*v));
    return out;
}

}  // namespace patchdb
