#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "patchdb/core.hpp"
#include "patchdb/record_store.hpp"
#include "patchdb/storage.hpp"

namespace patchdb {

// ---------------------------------------------------------------------------
// Stage specs

enum class GeneratorKind { whole_image, tiles, blob_detector, glyph_reader };
enum class TransformerKind { color_histogram, depth_proxy };

const char* generator_kind_name(GeneratorKind k);
GeneratorKind generator_kind_from_name(std::string_view name);
const char* transformer_kind_name(TransformerKind k);
TransformerKind transformer_kind_from_name(std::string_view name);

struct PaletteEntry {
    uint8_t r = 0, g = 0, b = 0;
    std::string label;
};

struct GeneratorSpec {
    GeneratorKind kind = GeneratorKind::whole_image;
    // tiles
    uint32_t tile_w = 0, tile_h = 0;
    // blob_detector
    std::vector<PaletteEntry> palette;
    uint32_t min_area = 1;
    double label_noise_p = 0.0;
    uint64_t seed = 0;

    PatchSchema output_schema() const;
    void validate() const;  // throws ConfigError on bad params
};

struct TransformerSpec {
    TransformerKind kind = TransformerKind::color_histogram;
    uint32_t bins = 8;  // color_histogram

    PatchSchema output_schema(const PatchSchema& input) const;
    void validate() const;
};

// Pixels match a palette entry when every channel is within this distance.
constexpr int kPaletteTolerance = 24;

// Barcode strip geometry shared with the scene generator: 16 columns by
// 4 rows — sync row (white first), 16 data bits (white = 1, high bit left),
// their complement, sync row (black first).
constexpr uint32_t kGlyphCols = 16;
constexpr uint32_t kGlyphRows = 4;

// ---------------------------------------------------------------------------
// Stages

std::unique_ptr<Stream<Patch>> generate(std::unique_ptr<Stream<Frame>> frames,
                                        const GeneratorSpec& g);
std::unique_ptr<Stream<Patch>> transform(std::unique_ptr<Stream<Patch>> patches,
                                         const TransformerSpec& t);

// Single-frame cores behind generate(); handy for direct testing.
std::vector<Patch> detect_blobs(const Frame& frame, const GeneratorSpec& g);
std::vector<Patch> read_glyphs(const Frame& frame);
Patch apply_transformer(const Patch& p, const TransformerSpec& t);

// ---------------------------------------------------------------------------
// Materialized collections

class PatchCollection {
public:
    // Drains the stream into a new store at path. Patch records are keyed by
    // big-endian patch_id; a forward lineage index maps (video_id, frame_no)
    // to the patch ids rooted at that frame.
    static PatchCollection materialize(Stream<Patch>& patches, const std::string& path);
    static PatchCollection open(const std::string& path, bool writable = false);

    std::unique_ptr<Stream<Patch>> scan(IoCounters& io) const;
    std::optional<Patch> get(uint64_t patch_id, IoCounters& io) const;
    std::vector<Patch> load_all() const;

    const std::map<FrameId, std::vector<uint64_t>>& forward_index() const {
        return fwd_;
    }
    std::vector<uint64_t> ids_for_frame(const FrameId& fid) const;

    size_t patch_count() const { return count_; }
    uint64_t store_size() const { return rs_->file_size(); }
    const std::string& path() const { return rs_->path(); }

    // Named secondary index records stored alongside the patches.
    void put_index(const std::string& name, std::string_view blob);
    std::optional<std::string> get_index(const std::string& name) const;
    std::vector<std::string> index_names() const;

private:
    PatchCollection() = default;

    std::shared_ptr<RecordStore> rs_;
    std::map<FrameId, std::vector<uint64_t>> fwd_;
    size_t count_ = 0;
};

// ---------------------------------------------------------------------------
// Pipeline validation

struct PipelineStage {
    enum class Kind { generator, transformer, label_filter, balltree_join };
    Kind kind = Kind::generator;
    GeneratorSpec gen;
    TransformerSpec trans;
    std::string filter_label;  // label_filter: the literal being selected
    uint32_t join_dim = 0;     // balltree_join: declared dimensionality

    static PipelineStage generator(GeneratorSpec g);
    static PipelineStage transformer(TransformerSpec t);
    static PipelineStage label_filter(std::string label);
    static PipelineStage balltree_join(uint32_t dim);
};

struct Violation {
    size_t stage;  // 0-based position in the stage list
    std::string message;
};

// Checks schema compatibility along the chain and returns every violation.
std::vector<Violation> validate_pipeline(const std::vector<PipelineStage>& stages);

}  // namespace patchdb
