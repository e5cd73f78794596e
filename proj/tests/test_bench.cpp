#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "patchdb/bench.hpp"
#include "patchdb/etl.hpp"
#include "patchdb/planfile.hpp"

using namespace patchdb;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("patchdb_b_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

SceneSpec small_scene() {
    SceneSpec s;
    s.seed = 9;
    s.frames = 12;
    s.width = 96;
    s.height = 80;
    s.noise_amplitude = 0;
    s.palette = {{200, 40, 40, "pedestrian"}, {40, 40, 200, "vehicle"}};
    SceneEntity ped;
    ped.id = 3;
    ped.palette_index = 0;
    ped.w = 20;
    ped.h = 24;
    ped.x0 = 4;
    ped.y0 = 8;
    ped.vx = 3;
    ped.depth = 0.2;
    SceneEntity veh;
    veh.id = 7;
    veh.palette_index = 1;
    veh.w = 30;
    veh.h = 12;
    veh.x0 = 40;
    veh.y0 = 50;
    veh.vx = -2;
    veh.depth = 0.6;
    veh.enter = 2;
    s.entities = {ped, veh};
    return s;
}

// Histogram of a whole frame, via the same ETL path queries use.
std::vector<float> frame_histogram(const Frame& f, uint32_t bins) {
    Patch whole = make_patch(f, {0, 0, f.width, f.height}, {});
    TransformerSpec tr;
    tr.kind = TransformerKind::color_histogram;
    tr.bins = bins;
    return apply_transformer(whole, tr).data;
}

// CSV with the two wall-clock columns (etl_ms, query_ms) blanked out.
std::string strip_timing(const std::string& csv) {
    std::istringstream in(csv);
    std::string out, line;
    while (std::getline(in, line)) {
        std::vector<std::string> fields;
        std::istringstream ls(line);
        std::string f;
        while (std::getline(ls, f, ',')) fields.push_back(f);
        if (fields.size() > 7) fields[6] = fields[7] = "-";
        for (size_t i = 0; i < fields.size(); i++)
            out += (i ? "," : "") + fields[i];
        out += "\n";
    }
    return out;
}

}  // namespace

TEST_CASE("scene validation rejects malformed specs") {
    SceneSpec s = small_scene();
    CHECK_NOTHROW(s.validate());

    SceneSpec bad = s;
    bad.frames = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = s;
    bad.entities[1].id = 3;  // duplicate
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = s;
    bad.entities[0].palette_index = 5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = s;
    bad.entities[0].w = 500;  // larger than the frame
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = s;
    bad.entities[0].x0 = 90;  // starts outside
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = s;
    bad.entities[0].depth = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = s;
    bad.entities[0].enter = 5;
    bad.entities[0].exit = 5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = s;
    bad.entities[0].w = 10;  // too small for the 16x4 barcode + border
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    SceneSpec g;
    g.frames = 40;
    g.width = 64;
    g.height = 48;
    g.gallery = true;
    g.gallery_pairs = 8;
    CHECK_NOTHROW(g.validate());
    g.gallery_pairs = 21;  // 42 > 40 frames
    CHECK_THROWS_AS(g.validate(), ConfigError);
    g.gallery_pairs = 8;
    g.entities = small_scene().entities;
    CHECK_THROWS_AS(g.validate(), ConfigError);
}

TEST_CASE("rendering is deterministic and the stream matches per-frame renders") {
    SceneSpec s = small_scene();
    s.noise_amplitude = 4;
    Frame a = render_scene_frame(s, 5);
    Frame b = render_scene_frame(s, 5);
    CHECK(a.pixels == b.pixels);

    auto frames = drain(*scene_frames(s));
    REQUIRE(frames.size() == s.frames);
    for (uint64_t i = 0; i < s.frames; i++) {
        Frame r = render_scene_frame(s, i);
        CHECK(frames[i].frame_no == i);
        CHECK(frames[i].pixels == r.pixels);
    }

    // A different seed moves the noise.
    SceneSpec s2 = s;
    s2.seed = 10;
    CHECK(render_scene_frame(s2, 5).pixels != a.pixels);
}

TEST_CASE("ground truth tracks entity lifetimes and movement") {
    SceneSpec s = small_scene();
    GroundTruth gt = scene_ground_truth(s);
    CHECK(gt.frames == 12);
    CHECK(gt.width == 96);
    CHECK(gt.height == 80);
    REQUIRE(gt.per_frame.size() == 12);

    // Frame 0: vehicle hasn't entered yet.
    REQUIRE(gt.per_frame[0].size() == 1);
    CHECK(gt.per_frame[0][0].entity_id == 3);
    CHECK(gt.per_frame[0][0].label == "pedestrian");
    CHECK(gt.per_frame[0][0].bbox == BoundingBox{4, 8, 24, 32});

    // Frame 2 onward: both, ascending id, moved by velocity.
    REQUIRE(gt.per_frame[2].size() == 2);
    CHECK(gt.per_frame[2][0].entity_id == 3);
    CHECK(gt.per_frame[2][0].bbox.x1 == 4 + 2 * 3);
    CHECK(gt.per_frame[2][1].entity_id == 7);
    CHECK(gt.per_frame[2][1].bbox == BoundingBox{36, 50, 66, 62});
    CHECK(gt.per_frame[2][1].depth == doctest::Approx(0.6));

    CHECK(gt.distinct_per_label.at("pedestrian") == 1);
    CHECK(gt.distinct_per_label.at("vehicle") == 1);

    // The render actually paints the ground-truth boxes: the blob detector
    // recovers them exactly on a noise-free frame.
    GeneratorSpec g;
    g.kind = GeneratorKind::blob_detector;
    g.palette = s.palette;
    g.min_area = 16;
    Frame f2 = render_scene_frame(s, 2);
    auto blobs = detect_blobs(f2, g);
    REQUIRE(blobs.size() == 2);
    std::map<std::string, BoundingBox> found;
    for (const auto& p : blobs) found[p.meta_str("label")] = p.meta_box("bbox");
    CHECK(found.at("pedestrian") == gt.per_frame[2][0].bbox);
    CHECK(found.at("vehicle") == gt.per_frame[2][1].bbox);

    // Each entity carries a barcode strip encoding its id.
    auto glyphs = read_glyphs(f2);
    std::set<std::string> texts;
    for (const auto& p : glyphs) texts.insert(p.meta_str("text"));
    CHECK(texts == std::set<std::string>{"3", "7"});
}

TEST_CASE("ground truth JSON roundtrips and rejects unknown keys") {
    SceneSpec s = small_scene();
    GroundTruth gt = scene_ground_truth(s);
    gt.duplicate_pairs = {{0, 1}, {4, 5}};

    GroundTruth back = GroundTruth::from_json(gt.to_json());
    CHECK(back.frames == gt.frames);
    CHECK(back.width == gt.width);
    CHECK(back.height == gt.height);
    CHECK(back.distinct_per_label == gt.distinct_per_label);
    CHECK(back.duplicate_pairs == gt.duplicate_pairs);
    REQUIRE(back.per_frame.size() == gt.per_frame.size());
    for (size_t i = 0; i < gt.per_frame.size(); i++) {
        REQUIRE(back.per_frame[i].size() == gt.per_frame[i].size());
        for (size_t j = 0; j < gt.per_frame[i].size(); j++) {
            CHECK(back.per_frame[i][j].entity_id == gt.per_frame[i][j].entity_id);
            CHECK(back.per_frame[i][j].label == gt.per_frame[i][j].label);
            CHECK(back.per_frame[i][j].bbox == gt.per_frame[i][j].bbox);
            CHECK(back.per_frame[i][j].depth ==
                  doctest::Approx(gt.per_frame[i][j].depth));
        }
    }

    TempDir tmp;
    gt.save(tmp.file("gt.json"));
    GroundTruth loaded = GroundTruth::load(tmp.file("gt.json"));
    CHECK(loaded.frames == gt.frames);
    CHECK(loaded.duplicate_pairs == gt.duplicate_pairs);

    CHECK_THROWS_AS(GroundTruth::from_json("{\"frames\": 1, \"bogus\": 2}"),
                    ValidationError);
    CHECK_THROWS_AS(GroundTruth::from_json("not json"), ValidationError);
}

TEST_CASE("canned tracking scene has the documented population") {
    SceneSpec s = make_tracking_scene(3, 30);
    CHECK_NOTHROW(s.validate());
    GroundTruth gt = scene_ground_truth(s);
    CHECK(gt.distinct_per_label.at("pedestrian") == 4);
    CHECK(gt.distinct_per_label.at("vehicle") == 2);
    CHECK(expected_distinct(gt, "pedestrian") == 4);
    CHECK(expected_distinct(gt, "vehicle") == 2);

    CHECK_THROWS_AS(make_tracking_scene(3, 10), ConfigError);
    CHECK_THROWS_AS(make_tracking_scene(3, 30, 32, 32), ConfigError);
}

TEST_CASE("gallery scene plants histogram near-duplicates") {
    SceneSpec s = make_gallery_scene(5, 30, 6);
    CHECK(s.gallery);
    GroundTruth gt = scene_ground_truth(s);
    REQUIRE(gt.duplicate_pairs.size() == 6);

    auto frames = drain(*scene_frames(s));
    auto hist = [&](uint64_t i) { return frame_histogram(frames.at(i), 8); };

    for (auto [a, b] : gt.duplicate_pairs) {
        CHECK(oracle::dist(hist(a), hist(b)) < 0.05);
    }
    // Distinct frames are far apart: check a sample of non-pair combinations.
    std::set<uint64_t> dup_frames;
    for (auto [a, b] : gt.duplicate_pairs) {
        dup_frames.insert(a);
        dup_frames.insert(b);
    }
    std::vector<uint64_t> distinct;
    for (uint64_t i = 0; i < s.frames; i++)
        if (!dup_frames.count(i)) distinct.push_back(i);
    REQUIRE(distinct.size() >= 4);
    for (size_t i = 0; i + 1 < distinct.size() && i < 6; i++)
        CHECK(oracle::dist(hist(distinct[i]), hist(distinct[i + 1])) > 0.3);
    // Duplicate pairs are far from unrelated frames too.
    CHECK(oracle::dist(hist(gt.duplicate_pairs[0].first), hist(distinct[0])) > 0.3);

    CHECK(expected_duplicate_tuples(gt) == 12);  // both orientations
}

TEST_CASE("quality scene splits palette into robust and fragile colors") {
    SceneSpec s = make_quality_scene(2, 24);
    GroundTruth gt = scene_ground_truth(s);
    size_t robust = 0, fragile = 0;
    for (const auto& e : s.entities) {
        const PaletteEntry& p = s.palette.at(e.palette_index);
        for (uint8_t c : {p.r, p.g, p.b}) {
            uint8_t q = quantize_pixel(c, 64);
            if (c % 64 == 32) {
                CHECK(q == c);  // survives the coarsest quantizer exactly
            } else {
                REQUIRE(c % 64 == 4);
                CHECK(std::abs(int(q) - int(c)) == 28);  // beyond tolerance 24
            }
        }
        if (s.palette[e.palette_index].r % 64 == 32)
            robust++;
        else
            fragile++;
    }
    CHECK(robust > 0);
    CHECK(fragile > 0);
    CHECK(gt.frames == 24);
}

TEST_CASE("plan-order scene enforces its tau window") {
    CHECK_NOTHROW(make_plan_order_scene(1, 24, 4, 0.1).validate());
    CHECK_THROWS_AS(make_plan_order_scene(1, 24, 4, 0.05), ConfigError);
    CHECK_THROWS_AS(make_plan_order_scene(1, 24, 4, 0.3), ConfigError);
    CHECK_THROWS_AS(make_plan_order_scene(1, 24, 0, 0.1), ConfigError);
    CHECK_THROWS_AS(make_plan_order_scene(1, 10, 4, 0.1), ConfigError);
}

TEST_CASE("expectation helpers agree with direct ground-truth scans") {
    SceneSpec s = make_tracking_scene(11, 26);
    GroundTruth gt = scene_ground_truth(s);

    uint64_t ped_frames = 0;
    std::map<uint16_t, uint64_t> per_entity;
    std::map<uint16_t, uint64_t> first_seen;
    for (uint64_t f = 0; f < gt.per_frame.size(); f++) {
        bool any_ped = false;
        for (const auto& e : gt.per_frame[f]) {
            if (e.label == "pedestrian") any_ped = true;
            per_entity[e.entity_id]++;
            if (!first_seen.count(e.entity_id)) first_seen[e.entity_id] = f;
        }
        if (any_ped) ped_frames++;
    }
    CHECK(expected_label_frames(gt, "pedestrian") == ped_frames);
    CHECK(expected_label_frames(gt, "dragon") == 0);
    for (const auto& [id, n] : per_entity) {
        CHECK(expected_entity_frames(gt, id) == n);
        REQUIRE(expected_first_frame(gt, id).has_value());
        CHECK(*expected_first_frame(gt, id) == first_seen[id]);
    }
    CHECK(expected_entity_frames(gt, 999) == 0);
    CHECK_FALSE(expected_first_frame(gt, 999).has_value());

    // behind-pairs: ordered same-frame pedestrian pairs with overlapping x
    // spans and a depth gap, where depth is recomputed as 1 - y2/height.
    double margin = 0.05;
    std::set<std::tuple<uint64_t, BoundingBox, BoundingBox>> behind;
    for (uint64_t f = 0; f < gt.per_frame.size(); f++) {
        for (const auto& a : gt.per_frame[f]) {
            if (a.label != "pedestrian") continue;
            for (const auto& b : gt.per_frame[f]) {
                if (&a == &b || b.label != "pedestrian") continue;
                double da = 1.0 - double(a.bbox.y2) / gt.height;
                double db = 1.0 - double(b.bbox.y2) / gt.height;
                bool overlap = a.bbox.x1 < b.bbox.x2 && b.bbox.x1 < a.bbox.x2;
                if (overlap && da > db + margin) behind.emplace(f, a.bbox, b.bbox);
            }
        }
    }
    CHECK(expected_behind_pairs(gt, margin) == behind.size());
}

TEST_CASE("bench config parsing applies defaults, overrides, and rejects junk") {
    BenchConfig def = parse_bench_config("{}");
    CHECK(def.queries == std::vector<std::string>{"q1", "q2", "q3", "q4", "q5", "q6"});
    CHECK(def.layouts == std::vector<Layout>{Layout::frame_file});
    CHECK(def.codecs.size() == 1);
    CHECK(def.codecs[0].mode == CodecMode::lossless);
    CHECK(def.tau == doctest::Approx(0.1));
    CHECK(def.frames == 200);
    CHECK_FALSE(def.q3_target.has_value());

    BenchConfig cfg = parse_bench_config(R"({
        "queries": ["q2", "q3"],
        "layouts": ["segmented_file", "encoded_file"],
        "qualities": ["medium", "lossless"],
        "seeds": [3, 4],
        "tau": 0.15,
        "frames": 48,
        "noise_amplitude": 0,
        "q3_target": 12
    })");
    CHECK(cfg.queries == std::vector<std::string>{"q2", "q3"});
    REQUIRE(cfg.layouts.size() == 2);
    CHECK(cfg.layouts[0] == Layout::segmented_file);
    REQUIRE(cfg.codecs.size() == 2);
    CHECK(cfg.codecs[0].quant_step == 16);
    CHECK(cfg.seeds == std::vector<uint64_t>{3, 4});
    CHECK(cfg.frames == 48);
    CHECK(cfg.noise_amplitude == 0);
    CHECK(cfg.q3_target == uint16_t{12});
    CHECK_NOTHROW(cfg.validate());

    CHECK_THROWS_AS(parse_bench_config("{\"speed\": 11}"), ValidationError);
    CHECK_THROWS_AS(parse_bench_config("{\"noise_amplitude\": 300}"), ValidationError);
    CHECK_THROWS_AS(parse_bench_config("nope"), ValidationError);

    BenchConfig bad;
    bad.queries = {"q9"};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = BenchConfig{};
    bad.seeds.clear();
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("benchmark runs produce exact counts and repeat bit-for-bit") {
    TempDir tmp;
    BenchConfig cfg;
    cfg.queries = {"q2", "q3"};
    cfg.seeds = {1};
    cfg.frames = 24;
    cfg.noise_amplitude = 0;
    cfg.q3_target = 21;  // short-lived vehicle: lineage should beat rescan
    cfg.work_dir = tmp.file("w1");

    BenchReport rep = run_benchmark(cfg);
    REQUIRE(rep.rows.size() == 3);  // q2 + q3 in both backtrace modes

    const BenchRow& q2 = rep.rows[0];
    CHECK(q2.query == "q2");
    CHECK(q2.variant == "default");
    CHECK(q2.precision == doctest::Approx(1.0));
    CHECK(q2.recall == doctest::Approx(1.0));

    SceneSpec scene = make_tracking_scene(1, 24);
    GroundTruth gt = scene_ground_truth(scene);
    CHECK(q2.result_count == expected_label_frames(gt, "vehicle"));

    const BenchRow& q3a = rep.rows[1];
    const BenchRow& q3b = rep.rows[2];
    CHECK(q3a.query == "q3");
    CHECK(q3a.variant == std::string(backtrace_mode_name(BacktraceMode::lineage_index)));
    CHECK(q3b.variant == std::string(backtrace_mode_name(BacktraceMode::rescan)));
    CHECK(q3a.result_count == q3b.result_count);
    CHECK(q3a.result_count == expected_entity_frames(gt, 21));
    CHECK(q3a.precision == doctest::Approx(1.0));
    CHECK(q3a.recall == doctest::Approx(1.0));
    CHECK(q3b.recall == doctest::Approx(1.0));
    // Targeted lineage lookups touch fewer records than a rescan.
    CHECK(q3a.records_read < q3b.records_read);

    // CSV shape: every row has exactly as many fields as the header.
    auto fields = [](const std::string& line) {
        return 1 + std::count(line.begin(), line.end(), ',');
    };
    for (const auto& r : rep.rows)
        CHECK(fields(r.csv_row()) == fields(BenchReport::csv_header()));
    std::string text = rep.to_text();
    CHECK(text.find("# ") == 0);
    CHECK(text.find(BenchReport::csv_header()) != std::string::npos);

    // A second run differs only in wall-clock columns.
    BenchConfig cfg2 = cfg;
    cfg2.work_dir = tmp.file("w2");
    BenchReport rep2 = run_benchmark(cfg2);
    CHECK(strip_timing(rep.to_csv()) == strip_timing(rep2.to_csv()));
}

TEST_CASE("similarity-join scaling probe reports one point per (n, d)") {
    auto pts = simjoin_scaling({200, 400}, {2, 4}, 7);
    REQUIRE(pts.size() == 4);
    CHECK(pts[0].n == 200);
    CHECK(pts[0].d == 2);
    CHECK(pts[1].n == 400);
    CHECK(pts[1].d == 2);
    CHECK(pts[2].n == 200);
    CHECK(pts[2].d == 4);
    CHECK(pts[3].n == 400);
    CHECK(pts[3].d == 4);
    for (const auto& p : pts) CHECK(p.ms >= 0.0);

    std::string csv = scaling_csv(pts);
    CHECK(csv.rfind("n,d,ms\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}
