#pragma once

// Deterministic synthetic scenes with exact ground truth, plus the benchmark
// harness that measures ETL time separately from query time and scores
// results against the generator's own log.
//
// A scene is a set of colored rectangles ("entities") gliding over a static
// noisy background, bouncing off the frame edges.  Every entity carries a
// 16x4 black/white barcode strip encoding its id, so the glyph reader can
// recover identities and the blob detector can recover labeled boxes.  The
// gallery variant instead emits flat-colored frames with planted
// near-duplicate pairs for the similarity-join query.

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "patchdb/core.hpp"
#include "patchdb/etl.hpp"
#include "patchdb/query.hpp"
#include "patchdb/storage.hpp"

namespace patchdb {

struct SceneEntity {
    uint16_t id = 0;
    uint32_t palette_index = 0;  // fill color and label
    uint32_t w = 0, h = 0;       // rect size, pixels
    int64_t x0 = 0, y0 = 0;      // position at frame 0 (top-left)
    int64_t vx = 0, vy = 0;      // pixels per frame; reflects at edges
    double depth = 0.0;          // [0,1); painter's order draws far first
    uint32_t strip_dx = 1, strip_dy = 1;  // barcode offset inside the rect
    uint64_t enter = 0;                   // first frame present
    uint64_t exit = UINT64_MAX;           // first frame absent
};

struct SceneSpec {
    uint64_t seed = 1;
    uint64_t frames = 0;
    uint32_t width = 0, height = 0;
    uint8_t noise_amplitude = 4;  // uniform [0, a] added to the background
    std::string video_id = "scene";
    std::vector<PaletteEntry> palette;
    std::vector<SceneEntity> entities;

    // Gallery mode: no entities; frame 2k and 2k+1 are a planted
    // near-duplicate pair for k < gallery_pairs, all other frames are
    // pairwise-distinct flat colors.
    bool gallery = false;
    uint64_t gallery_pairs = 0;

    void validate() const;
};

struct GtEntry {
    uint16_t entity_id = 0;
    std::string label;
    BoundingBox bbox;
    double depth = 0.0;
};

struct GroundTruth {
    uint64_t frames = 0;
    uint32_t width = 0, height = 0;
    std::vector<std::vector<GtEntry>> per_frame;        // ascending entity id
    std::map<std::string, uint64_t> distinct_per_label;  // entities ever shown
    std::vector<std::pair<uint64_t, uint64_t>> duplicate_pairs;  // frame pairs

    std::string to_json() const;
    static GroundTruth from_json(std::string_view text);
    void save(const std::string& path) const;
    static GroundTruth load(const std::string& path);
};

// Pure render of one frame; the stream from gen_scene yields exactly this.
Frame render_scene_frame(const SceneSpec& spec, uint64_t frame_no);

std::unique_ptr<Stream<Frame>> scene_frames(const SceneSpec& spec);
GroundTruth scene_ground_truth(const SceneSpec& spec);
std::pair<std::unique_ptr<Stream<Frame>>, GroundTruth> gen_scene(const SceneSpec& spec);

// -----------------------------------------------------------------------
// Canned scenes

// Pedestrians and vehicles in disjoint horizontal lanes (no occlusion, so
// detections match ground truth exactly on lossless storage).
SceneSpec make_tracking_scene(uint64_t seed, uint64_t frames,
                              uint32_t width = 320, uint32_t height = 240);

// Flat-color frames with planted near-duplicate pairs; duplicates sit at
// histogram distance well under 0.05, distinct frames well over 0.3.
SceneSpec make_gallery_scene(uint64_t seed, uint64_t frames,
                             uint64_t dup_pairs, uint32_t width = 64,
                             uint32_t height = 48);

// Vehicles whose colors are alternately robust (channels = 32 mod 64, exact
// under every quantizer) and fragile (channels = 4 mod 64, off by 28 after
// the coarsest quantizer, beyond the detector's tolerance of 24).
SceneSpec make_quality_scene(uint64_t seed, uint64_t frames,
                             uint32_t width = 320, uint32_t height = 240);

// Triples (vehicle, ped, ped) sharing a color but differing in area, placed
// at histogram distances (0.94tau, 0.94tau, 1.89tau) so the vehicle's
// detections act as an extra dedup anchor that separates the two pedestrians
// only when vehicle detections survive into the dedup input.
SceneSpec make_plan_order_scene(uint64_t seed, uint64_t frames,
                                uint32_t triples = 8, double tau = 0.1);

// -----------------------------------------------------------------------
// Ground-truth-derived expectations

uint64_t expected_duplicate_tuples(const GroundTruth& gt);  // both orientations
uint64_t expected_label_frames(const GroundTruth& gt, const std::string& label);
uint64_t expected_entity_frames(const GroundTruth& gt, uint16_t entity_id);
uint64_t expected_distinct(const GroundTruth& gt, const std::string& label);
std::optional<uint64_t> expected_first_frame(const GroundTruth& gt,
                                             uint16_t entity_id);
// Ordered pedestrian pairs (a behind b): same frame, depth(a) > depth(b) +
// margin, x-intervals overlapping, with depth = 1 - y2/height as the depth
// transformer computes it.
uint64_t expected_behind_pairs(const GroundTruth& gt, double margin = 0.05);

// -----------------------------------------------------------------------
// Harness

struct BenchConfig {
    std::vector<std::string> queries{"q1", "q2", "q3", "q4", "q5", "q6"};
    std::vector<Layout> layouts{Layout::frame_file};
    std::vector<CodecConfig> codecs{CodecConfig::lossless()};
    std::vector<uint64_t> seeds{1};
    std::string work_dir = "bench_work";

    double tau = 0.1;
    uint32_t bins = 8;
    uint32_t clip_len = 64;
    uint32_t leaf_size = 32;
    uint32_t node_capacity = 16;
    double label_noise_p = 0.0;

    uint64_t frames = 200;
    uint32_t width = 320, height = 240;
    uint8_t noise_amplitude = 4;
    uint64_t gallery_frames = 120;
    uint64_t gallery_pairs = 20;

    // Target entity for the trajectory (q3) and string-lookup (q5) analogs;
    // defaults to entities from the canned tracking scene.
    std::optional<uint16_t> q3_target, q5_target;

    // Replaces the canned tracking scene for q2-q6 (seed still applies).
    std::optional<SceneSpec> tracking_override;

    void validate() const;
};

struct BenchRow {
    std::string query, variant;
    Layout layout = Layout::frame_file;
    CodecConfig codec;
    uint64_t seed = 0;
    double etl_ms = 0, query_ms = 0;
    uint64_t storage_bytes = 0;
    uint64_t records_read = 0, frames_decoded = 0, index_probes = 0;
    uint64_t result_count = 0;
    double precision = 0, recall = 0;

    std::string csv_row() const;
};

struct BenchReport {
    std::vector<BenchRow> rows;
    std::string config_echo;  // effective settings, for provenance

    static const char* csv_header();
    std::string to_csv() const;
    std::string to_text() const;
};

BenchReport run_benchmark(const BenchConfig& config);

// -----------------------------------------------------------------------
// Join-cost scaling probe

struct ScalingPoint {
    uint64_t n = 0;
    uint32_t d = 0;
    double ms = 0;
};

std::vector<ScalingPoint> simjoin_scaling(const std::vector<uint64_t>& ns,
                                          const std::vector<uint32_t>& ds,
                                          uint64_t seed, double tau = 0.05);
std::string scaling_csv(const std::vector<ScalingPoint>& points);

}  // namespace patchdb
