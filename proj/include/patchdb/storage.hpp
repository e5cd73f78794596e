#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>

#include "patchdb/core.hpp"
#include "patchdb/record_store.hpp"

namespace patchdb {

enum class CodecMode : uint8_t { lossless = 0, lossy = 1 };
enum class Layout : uint8_t { frame_file = 0, encoded_file = 1, segmented_file = 2 };

struct CodecConfig {
    CodecMode mode = CodecMode::lossless;
    uint8_t quant_step = 0;  // 4, 16 or 64 when lossy; 0 otherwise

    static CodecConfig lossless() { return {}; }
    static CodecConfig lossy(uint8_t step) { return {CodecMode::lossy, step}; }
    // "high" -> step 4, "medium" -> 16, "low" -> 64, "lossless" -> lossless
    static CodecConfig from_quality(std::string_view name);

    void validate() const;
    bool operator==(const CodecConfig&) const = default;
};

struct StoreDescriptor {
    Layout layout = Layout::frame_file;
    CodecConfig codec;
    uint32_t clip_len = 64;  // segmented_file only
    std::string path;
};

// Per-scan accounting, owned by the caller. frames_decoded counts codec
// decodes; reading a raw frame_file record is not a decode.
struct IoCounters {
    uint64_t records_read = 0;
    uint64_t frames_decoded = 0;
    uint64_t bytes_read = 0;
};

const char* layout_name(Layout l);
Layout layout_from_name(std::string_view name);
const char* codec_mode_name(CodecMode m);
std::string quality_name(const CodecConfig& c);

inline uint8_t quantize_pixel(uint8_t v, uint8_t step) {
    if (step == 0) return v;
    uint32_t q = static_cast<uint32_t>(v / step) * step + step / 2;
    return static_cast<uint8_t>(q > 255 ? 255 : q);
}

// Deflate-class (RFC 1951 family) compression via zlib.
std::string zlib_deflate(std::string_view raw);
std::string zlib_inflate_all(std::string_view compressed);

class VideoStore {
public:
    // Consumes the frame stream and persists it under desc.path in the
    // chosen layout. Frames must arrive as 0,1,2,... with constant size.
    static VideoStore ingest(Stream<Frame>& frames, const StoreDescriptor& desc);
    static VideoStore open(const std::string& path);

    // Frames in [lo, hi) in ascending order; no range means everything.
    std::unique_ptr<Stream<Frame>> scan(
        std::optional<std::pair<uint64_t, uint64_t>> range, IoCounters& io) const;

    Frame random_access(uint64_t frame_no, IoCounters& io) const;

    uint64_t store_size() const { return rs_->file_size(); }
    const StoreDescriptor& descriptor() const { return desc_; }
    uint64_t frame_count() const { return frame_count_; }
    uint32_t width() const { return width_; }
    uint32_t height() const { return height_; }
    const std::string& video_id() const { return video_id_; }

private:
    VideoStore() = default;

    std::shared_ptr<RecordStore> rs_;
    StoreDescriptor desc_;
    std::string video_id_;
    uint64_t frame_count_ = 0;
    uint32_t width_ = 0;
    uint32_t height_ = 0;
};

}  // namespace patchdb
