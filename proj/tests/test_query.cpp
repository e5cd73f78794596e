#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "patchdb/query.hpp"

using namespace patchdb;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("patchdb_q_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

// A small on-disk world: one video, one collection of per-frame detections
// with labels, boxes, ranks, and a text column.
struct World {
    TempDir tmp;
    std::optional<VideoStore> video;
    std::optional<PatchCollection> col;
    ExecContext ctx;

    explicit World(uint64_t frames = 8, size_t per_frame = 3) {
        reset_patch_ids();
        std::vector<Frame> fs_;
        for (uint64_t i = 0; i < frames; i++)
            fs_.push_back(oracle::textured_frame("vid", i, 48, 32));
        VectorStream<Frame> fstream(fs_);
        video = VideoStore::ingest(
            fstream, {Layout::frame_file, CodecConfig::lossless(), 4, tmp.file("v.pdb")});

        std::vector<Patch> patches;
        for (uint64_t fno = 0; fno < frames; fno++) {
            for (size_t i = 0; i < per_frame; i++) {
                uint32_t x = static_cast<uint32_t>(8 * i);
                Metadata meta;
                meta["label"] = std::string(i == 0 ? "vehicle" : "pedestrian");
                meta["rank"] = static_cast<int64_t>((fno * per_frame + i) % 5);
                meta["text"] = "obj-" + std::to_string(i);
                patches.push_back(
                    make_patch(fs_[fno], {x, 4, x + 8, 12}, std::move(meta)));
            }
        }
        VectorStream<Patch> pstream(patches);
        col = PatchCollection::materialize(pstream, tmp.file("c.pcol"));
        ctx.collections["det"] = &*col;
        ctx.videos[video->video_id()] = &*video;
    }
};

Tuple tup(Patch p) {
    Tuple t;
    t.push_back(std::move(p));
    return t;
}

}  // namespace

TEST_CASE("operand resolution, including box coordinate keys") {
    Patch p = oracle::vec_patch(
        1, {0.0f}, {{"bbox", MetaValue{BoundingBox{3, 4, 10, 20}}},
                    {"rank", MetaValue{int64_t{7}}}});
    Tuple t = tup(p);

    CHECK(resolve_operand(Operand::lit(MetaValue{2.5}), t) == MetaValue{2.5});
    CHECK(resolve_operand(Operand::meta(0, "rank"), t) == MetaValue{int64_t{7}});
    CHECK(resolve_operand(Operand::meta(0, "bbox.x1"), t) == MetaValue{int64_t{3}});
    CHECK(resolve_operand(Operand::meta(0, "bbox.y1"), t) == MetaValue{int64_t{4}});
    CHECK(resolve_operand(Operand::meta(0, "bbox.x2"), t) == MetaValue{int64_t{10}});
    CHECK(resolve_operand(Operand::meta(0, "bbox.y2"), t) == MetaValue{int64_t{20}});
    CHECK_FALSE(resolve_operand(Operand::meta(0, "nope"), t).has_value());
    // a missing key is an absent value, but a bad slot is a broken plan
    CHECK_THROWS_AS(resolve_operand(Operand::meta(3, "rank"), t), ConfigError);
}

TEST_CASE("comparison predicates with offsets and mixed numeric tags") {
    Patch a = oracle::vec_patch(1, {0.0f}, {{"x", MetaValue{int64_t{10}}},
                                            {"s", MetaValue{std::string("mm")}}});
    Patch b = oracle::vec_patch(2, {0.0f}, {{"x", MetaValue{12.0}}});
    Tuple t{a, b};

    auto cmp = [&](CmpOp op, double off = 0.0) {
        return Predicate::cmp_of(op, Operand::meta(0, "x"), Operand::meta(1, "x"), off)
            .eval(t);
    };
    CHECK(cmp(CmpOp::lt));
    CHECK(cmp(CmpOp::le));
    CHECK_FALSE(cmp(CmpOp::eq));
    CHECK(cmp(CmpOp::ne));
    CHECK_FALSE(cmp(CmpOp::gt));
    CHECK(cmp(CmpOp::eq, -2.0));  // 10 == 12 + (-2)
    CHECK(cmp(CmpOp::gt, -3.0));

    CHECK(Predicate::meta_cmp(0, "s", CmpOp::eq, MetaValue{std::string("mm")}).eval(t));
    CHECK_FALSE(
        Predicate::meta_cmp(0, "s", CmpOp::eq, MetaValue{std::string("x")}).eval(t));
    CHECK(Predicate::meta_cmp(0, "s", CmpOp::lt, MetaValue{std::string("zz")}).eval(t));

    // Missing keys are simply false, mismatched non-numeric tags throw.
    CHECK_FALSE(Predicate::meta_cmp(0, "absent", CmpOp::eq, MetaValue{int64_t{1}}).eval(t));
    CHECK_THROWS_AS(
        Predicate::meta_cmp(0, "s", CmpOp::eq, MetaValue{int64_t{1}}).eval(t),
        TagMismatchError);

    for (const char* name : {"==", "!=", "<", "<=", ">", ">="})
        CHECK(cmp_op_name(cmp_op_from_name(name)) == std::string(name));
    // word spellings parse to the same operators
    CHECK(cmp_op_from_name("eq") == CmpOp::eq);
    CHECK(cmp_op_from_name("ne") == CmpOp::ne);
    CHECK(cmp_op_from_name("lt") == CmpOp::lt);
    CHECK(cmp_op_from_name("le") == CmpOp::le);
    CHECK(cmp_op_from_name("gt") == CmpOp::gt);
    CHECK(cmp_op_from_name("ge") == CmpOp::ge);
    CHECK_THROWS_AS(cmp_op_from_name("like"), ConfigError);
}

TEST_CASE("within, contains, and boolean combinators") {
    Patch a = oracle::vec_patch(1, {0.0f, 0.0f});
    Patch b = oracle::vec_patch(2, {3.0f, 4.0f});
    a.meta["tags"] = std::vector<std::string>{"red", "fast"};
    Tuple t{a, b};

    CHECK(Predicate::within_of(0, 1, 5.0).eval(t));
    CHECK_FALSE(Predicate::within_of(0, 1, 4.99).eval(t));

    CHECK(Predicate::contains_of(0, "tags", "red").eval(t));
    CHECK_FALSE(Predicate::contains_of(0, "tags", "blue").eval(t));
    CHECK_FALSE(Predicate::contains_of(1, "tags", "red").eval(t));  // no such key

    Predicate yes = Predicate::meta_cmp(0, "id_is", CmpOp::eq, MetaValue{int64_t{0}});
    Predicate truthy = Predicate::within_of(0, 1, 9.0);
    Predicate falsy = Predicate::within_of(0, 1, 1.0);
    CHECK(Predicate::all_of({truthy, truthy}).eval(t));
    CHECK_FALSE(Predicate::all_of({truthy, falsy}).eval(t));
    CHECK(Predicate::any_of({falsy, truthy}).eval(t));
    CHECK_FALSE(Predicate::any_of({falsy, falsy}).eval(t));
    CHECK(Predicate::negate(falsy).eval(t));
    CHECK_FALSE(Predicate::negate(truthy).eval(t));
    (void)yes;
}

TEST_CASE("scan and select") {
    World w;
    auto plan = PlanNode::select(
        PlanNode::scan("det"),
        Predicate::meta_cmp(0, "label", CmpOp::eq, MetaValue{std::string("vehicle")}));
    auto res = execute(*plan, w.ctx);
    CHECK(res.tuples.size() == 8);  // one vehicle per frame
    for (const auto& t : res.tuples) {
        REQUIRE(t.size() == 1);
        CHECK(t[0].meta_str("label") == "vehicle");
    }
    CHECK(res.stats.result_tuples == 8);
    CHECK(res.stats.io.records_read == 24);  // select scans everything
    CHECK(res.stats.ops.size() == 2);

    // Unknown collections fail fast.
    auto bad = PlanNode::scan("nope");
    CHECK_THROWS_AS(execute(*bad, w.ctx), ConfigError);
}

TEST_CASE("memory nodes feed inline tuples") {
    World w;
    std::vector<Tuple> tuples{tup(oracle::vec_patch(100, {1.0f})),
                              tup(oracle::vec_patch(101, {2.0f}))};
    auto plan = PlanNode::memory(tuples);
    auto res = execute(*plan, w.ctx);
    REQUIRE(res.tuples.size() == 2);
    CHECK(res.tuples[0][0].patch_id == 100);
    CHECK(res.stats.io.records_read == 0);
}

TEST_CASE("nested-loop join matches the quadratic oracle") {
    World w;
    // det x det on equal frameno and different labels.
    Predicate on = Predicate::all_of(
        {Predicate::cmp_of(CmpOp::eq, Operand::meta(0, "frameno"),
                           Operand::meta(1, "frameno")),
         Predicate::cmp_of(CmpOp::ne, Operand::meta(0, "label"),
                           Operand::meta(1, "label"))});
    auto plan = PlanNode::nl_join(PlanNode::scan("det"), PlanNode::scan("det"), on);
    auto res = execute(*plan, w.ctx);

    // Oracle: per frame 3 patches (1 vehicle, 2 pedestrians): ordered pairs
    // with different labels = 2 * (1*2) = 4 per frame.
    CHECK(res.tuples.size() == 8 * 4);
    for (const auto& t : res.tuples) {
        REQUIRE(t.size() == 2);
        CHECK(t[0].meta_int("frameno") == t[1].meta_int("frameno"));
        CHECK(t[0].meta_str("label") != t[1].meta_str("label"));
    }
}

TEST_CASE("index join probes hash and ordered indexes") {
    World w;
    auto patches = w.col->load_all();
    w.col.emplace(PatchCollection::open(w.tmp.file("c.pcol"), true));
    w.ctx.collections["det"] = &*w.col;
    w.col->put_index("by_text", build_hash(patches, "text").serialize());
    w.col->put_index("by_rank", build_ordered(patches, "rank").serialize());
    w.ctx.load_index(*w.col, "by_text");
    w.ctx.load_index(*w.col, "by_rank");

    // Probe with two memory tuples carrying a text key.
    std::vector<Tuple> probes{
        tup(oracle::vec_patch(500, {0.0f}, {{"text", MetaValue{std::string("obj-1")}}})),
        tup(oracle::vec_patch(501, {0.0f}, {{"text", MetaValue{std::string("obj-9")}}}))};
    auto plan = PlanNode::index_join(PlanNode::memory(probes), "det", "by_text", 0,
                                     "text");
    auto res = execute(*plan, w.ctx);
    // obj-1 exists once per frame; obj-9 never.
    CHECK(res.tuples.size() == 8);
    for (const auto& t : res.tuples) {
        REQUIRE(t.size() == 2);
        CHECK(t[0].patch_id == 500);
        CHECK(t[1].meta_str("text") == "obj-1");
    }
    uint64_t probes_total = 0;
    for (const auto& op : res.stats.ops) probes_total += op.index_probes;
    CHECK(probes_total == 2);

    // Range probe on the ordered index: rank in [probe+0, probe+2).
    std::vector<Tuple> rp{
        tup(oracle::vec_patch(600, {0.0f}, {{"rank", MetaValue{int64_t{3}}}}))};
    auto rplan = PlanNode::index_join(PlanNode::memory(rp), "det", "by_rank", 0,
                                      "rank", IndexProbeMode::range);
    rplan->range_lo = 0.0;
    rplan->range_hi = 2.0;
    auto rres = execute(*rplan, w.ctx);
    size_t expect = 0;
    for (const auto& p : patches) {
        int64_t r = p.meta_int("rank");
        if (r >= 3 && r < 5) expect++;
    }
    CHECK(rres.tuples.size() == expect);
    for (const auto& t : rres.tuples) {
        CHECK(t[1].meta_int("rank") >= 3);
        CHECK(t[1].meta_int("rank") < 5);
    }

    // eq probe with a key offset.
    auto oplan = PlanNode::index_join(PlanNode::memory(rp), "det", "by_rank", 0,
                                      "rank");
    oplan->key_offset = 1.0;  // probes rank == 4
    auto ores = execute(*oplan, w.ctx);
    size_t expect4 = 0;
    for (const auto& p : patches)
        if (p.meta_int("rank") == 4) expect4++;
    CHECK(ores.tuples.size() == expect4);

    // Unregistered index names fail fast.
    auto bad = PlanNode::index_join(PlanNode::scan("det"), "det", "ghost", 0, "text");
    CHECK_THROWS_AS(execute(*bad, w.ctx), ConfigError);
    CHECK_THROWS_AS(w.ctx.load_index(*w.col, "ghost"), ConfigError);
}

TEST_CASE("similarity join agrees with the quadratic oracle on both sides") {
    reset_patch_ids();
    std::mt19937_64 rng(77);
    auto lpts = oracle::random_points(80, 60, 6);
    auto rpts = oracle::random_points(81, 40, 6);
    auto left = oracle::to_patches(lpts);
    std::vector<Patch> right;
    for (const auto& [p, id] : rpts) right.push_back(oracle::vec_patch(1000 + id, p));

    double tau = 0.45;
    auto want = oracle::sim_pairs(left, right, tau);
    REQUIRE(want.size() > 5);  // meaningful selectivity for this tau/d

    for (BuildSide side : {BuildSide::automatic, BuildSide::left, BuildSide::right}) {
        uint64_t probes = 0;
        auto got = sim_join_pairs(left, right, tau, side, &probes);
        std::set<std::pair<uint64_t, uint64_t>> got_set;
        for (const auto& [l, r] : got) got_set.emplace(l.patch_id, r.patch_id);
        CHECK(got_set == want);
        CHECK(got.size() == want.size());
        // One probe per probe-side row.
        uint64_t probe_rows = side == BuildSide::left ? right.size() : left.size();
        if (side == BuildSide::automatic) probe_rows = left.size();  // right is smaller
        CHECK(probes == probe_rows);
    }

    CHECK(sim_join_pairs({}, right, tau).empty());
    CHECK(sim_join_pairs(left, {}, tau).empty());

    auto bad = left;
    bad.push_back(oracle::vec_patch(9999, {1.0f}));
    CHECK_THROWS_AS(sim_join_pairs(bad, right, tau), MixedDimensionError);
}

TEST_CASE("sim_join plan node joins two collections") {
    TempDir tmp;
    reset_patch_ids();
    auto apts = oracle::random_points(90, 50, 4);
    auto bpts = oracle::random_points(91, 30, 4);
    auto apatches = oracle::to_patches(apts);
    std::vector<Patch> bpatches;
    for (const auto& [p, id] : bpts) bpatches.push_back(oracle::vec_patch(500 + id, p));

    VectorStream<Patch> as(apatches), bs(bpatches);
    PatchCollection ca = PatchCollection::materialize(as, tmp.file("a.pcol"));
    PatchCollection cb = PatchCollection::materialize(bs, tmp.file("b.pcol"));
    ExecContext ctx;
    ctx.collections["A"] = &ca;
    ctx.collections["B"] = &cb;

    double tau = 0.5;
    auto plan = PlanNode::sim_join(PlanNode::scan("A"), PlanNode::scan("B"), tau);
    auto res = execute(*plan, ctx);

    auto want = oracle::sim_pairs(apatches, bpatches, tau);
    std::set<std::pair<uint64_t, uint64_t>> got;
    for (const auto& t : res.tuples) {
        REQUIRE(t.size() == 2);
        got.emplace(t[0].patch_id, t[1].patch_id);
    }
    CHECK(got == want);
}

TEST_CASE("dedup groups near-duplicates under the first representative") {
    reset_patch_ids();
    // Three tight clusters well over tau apart.
    std::vector<Patch> items;
    auto add = [&](uint64_t id, float cx, float cy, const char* label) {
        items.push_back(oracle::vec_patch(id, {cx, cy},
                                          {{"label", MetaValue{std::string(label)}}}));
    };
    add(1, 0.00f, 0.00f, "a");
    add(2, 0.01f, 0.00f, "b");   // joins cluster 1
    add(3, 1.00f, 1.00f, "a");
    add(4, 0.00f, 0.02f, "a");   // joins cluster 1
    add(5, 1.01f, 1.00f, "c");   // joins cluster 3
    add(6, 5.00f, 5.00f, "d");

    std::vector<Tuple> tuples;
    for (const auto& p : items) tuples.push_back(tup(p));
    ExecContext ctx;
    auto plan = PlanNode::dedup(PlanNode::memory(tuples), 0.1);
    auto res = execute(*plan, ctx);

    REQUIRE(res.tuples.size() == 3);
    CHECK(res.tuples[0][0].lineage[0].parent_id() == 1);
    CHECK(res.tuples[1][0].lineage[0].parent_id() == 3);
    CHECK(res.tuples[2][0].lineage[0].parent_id() == 6);
    CHECK(res.tuples[0][0].meta_int("group_size") == 3);
    CHECK(res.tuples[0][0].meta_str_list("group_labels") ==
          std::vector<std::string>{"a", "b"});
    CHECK(res.tuples[1][0].meta_str_list("group_labels") ==
          std::vector<std::string>{"a", "c"});
    CHECK(res.tuples[2][0].meta_int("group_size") == 1);

    // Deduping the reps again changes nothing (all reps > tau apart).
    std::vector<Tuple> reps = res.tuples;
    auto plan2 = PlanNode::dedup(PlanNode::memory(reps), 0.1);
    auto res2 = execute(*plan2, ctx);
    CHECK(res2.tuples.size() == 3);
}

TEST_CASE("dedup_stream keeps exactly the tau-separated prefix patches") {
    reset_patch_ids();
    auto pts = oracle::random_points(95, 300, 3);
    auto patches = oracle::to_patches(pts);
    double tau = 0.3;

    auto kept = drain(*dedup_stream(
        std::make_unique<VectorStream<Patch>>(patches), tau));

    // Oracle: greedy prefix scan.
    std::vector<Patch> want;
    for (const auto& p : patches) {
        bool close = false;
        for (const auto& k : want)
            if (oracle::dist(p.data, k.data) <= tau) close = true;
        if (!close) want.push_back(p);
    }
    REQUIRE(kept.size() == want.size());
    for (size_t i = 0; i < kept.size(); i++) CHECK(kept[i].patch_id == want[i].patch_id);
}

TEST_CASE("count_by groups on a metadata key") {
    World w;
    auto plan = PlanNode::count_by(PlanNode::scan("det"), "label");
    auto res = execute(*plan, w.ctx);
    REQUIRE(res.tuples.size() == 2);
    std::map<std::string, int64_t> counts;
    for (const auto& t : res.tuples)
        counts[t[0].meta_str("label")] = t[0].meta_int("count");
    CHECK(counts["vehicle"] == 8);
    CHECK(counts["pedestrian"] == 16);

    // Tuples lacking the key are skipped, not crashed on.
    std::vector<Tuple> mixed{tup(oracle::vec_patch(1, {0.0f}, {{"k", MetaValue{int64_t{1}}}})),
                             tup(oracle::vec_patch(2, {0.0f}))};
    auto plan2 = PlanNode::count_by(PlanNode::memory(mixed), "k");
    auto res2 = execute(*plan2, w.ctx);
    CHECK(res2.tuples.size() == 1);
    CHECK(res2.tuples[0][0].meta_int("count") == 1);
}

TEST_CASE("backtrace maps results to source frames in both modes") {
    World w(6, 2);
    Predicate vehicle_only =
        Predicate::meta_cmp(0, "label", CmpOp::eq, MetaValue{std::string("vehicle")});

    for (BacktraceMode mode : {BacktraceMode::lineage_index, BacktraceMode::rescan}) {
        auto plan = PlanNode::backtrace(
            PlanNode::select(PlanNode::scan("det"), vehicle_only), mode, 0);
        auto res = execute(*plan, w.ctx);
        REQUIRE(res.tuples.size() == 6);
        REQUIRE(res.traced.size() == 6);
        for (const auto& [patch, frame] : res.traced) {
            CHECK(frame.video_id == "vid");
            CHECK(frame.frame_no == uint64_t(patch.meta_int("frameno")));
            CHECK(frame.width == 48);
            // The traced frame really is the source: the patch's pixels
            // appear at its bbox.
            BoundingBox b = patch.meta_box("bbox");
            CHECK(patch.data[0] == float(frame.at(b.y1, b.x1, 0)));
        }
        CHECK(backtrace_mode_from_name(backtrace_mode_name(mode)) == mode);
    }

    // Lineage mode touches only the needed frames; rescan reads them all.
    auto lineage_plan = PlanNode::backtrace(
        PlanNode::select(PlanNode::scan("det"), vehicle_only),
        BacktraceMode::lineage_index, 0);
    auto rescan_plan = PlanNode::backtrace(
        PlanNode::select(PlanNode::scan("det"), vehicle_only),
        BacktraceMode::rescan, 0);
    auto lres = execute(*lineage_plan, w.ctx);
    auto rres = execute(*rescan_plan, w.ctx);
    // Both read the collection (12 records); the video side differs.
    CHECK(lres.stats.io.records_read == 12 + 6);
    CHECK(rres.stats.io.records_read == 12 + 6);  // every frame, once

    World big(10, 1);
    auto one = PlanNode::backtrace(
        PlanNode::select(PlanNode::scan("det"),
                         Predicate::meta_cmp(0, "frameno", CmpOp::eq,
                                             MetaValue{int64_t{4}})),
        BacktraceMode::lineage_index, 0);
    auto bres = execute(*one, big.ctx);
    CHECK(bres.traced.size() == 1);
    CHECK(bres.stats.io.records_read == 10 + 1);  // collection + one frame

    auto one_rescan = PlanNode::backtrace(
        PlanNode::select(PlanNode::scan("det"),
                         Predicate::meta_cmp(0, "frameno", CmpOp::eq,
                                             MetaValue{int64_t{4}})),
        BacktraceMode::rescan, 0);
    auto brres = execute(*one_rescan, big.ctx);
    CHECK(brres.stats.io.records_read == 10 + 10);  // collection + full rescan

    // Slot out of range is a configuration error.
    auto bad = PlanNode::backtrace(PlanNode::scan("det"), BacktraceMode::lineage_index, 3);
    CHECK_THROWS_AS(execute(*bad, big.ctx), ConfigError);
}

TEST_CASE("stats name every operator and count probes") {
    World w;
    auto plan = PlanNode::select(
        PlanNode::scan("det"),
        Predicate::meta_cmp(0, "rank", CmpOp::ge, MetaValue{int64_t{2}}));
    auto res = execute(*plan, w.ctx);
    REQUIRE(res.stats.ops.size() == 2);
    CHECK(res.stats.ops[0].label.find("Select") != std::string::npos);
    CHECK(res.stats.ops[1].label.find("Scan") != std::string::npos);
    CHECK(res.stats.ops[0].tuples_out == res.tuples.size());
    CHECK(res.stats.ops[1].tuples_out == 24);
    CHECK(res.stats.total_ms >= 0.0);

    std::string text = res.stats.to_text();
    CHECK(text.find("records_read=24") != std::string::npos);
    std::string csv = res.stats.to_csv();
    // Header + one line per op + totals line.
    CHECK(std::count(csv.begin(), csv.end(), '\n') >= res.stats.ops.size() + 1);
}
