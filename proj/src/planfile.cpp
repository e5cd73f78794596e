#include "patchdb/planfile.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include "json.hpp"

namespace patchdb {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& msg) {
    throw ValidationError("plan file: " + msg);
}

void expect_object(const json& j, const std::string& where) {
    if (!j.is_object()) bad(where + " must be an object");
}

void expect_keys(const json& j, const std::string& where,
                 std::initializer_list<const char*> keys) {
    expect_object(j, where);
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (const char* name : keys)
            if (k == name) {
                ok = true;
                break;
            }
        if (!ok) bad(where + ": unknown key '" + k + "'");
    }
}

uint64_t get_u64(const json& j, const std::string& where) {
    if (!j.is_number_integer() && !j.is_number_unsigned())
        bad(where + " must be a non-negative integer");
    if (j.is_number_integer() && j.get<int64_t>() < 0)
        bad(where + " must be a non-negative integer");
    return j.get<uint64_t>();
}

double get_num(const json& j, const std::string& where) {
    if (!j.is_number()) bad(where + " must be a number");
    return j.get<double>();
}

std::string get_str(const json& j, const std::string& where) {
    if (!j.is_string()) bad(where + " must be a string");
    return j.get<std::string>();
}

// Literal values: numbers and strings map directly; an array of four
// numbers is a box, an array of strings is a string list.
MetaValue meta_from_json(const json& v, const std::string& where) {
    if (v.is_number_integer() || v.is_number_unsigned())
        return MetaValue{v.get<int64_t>()};
    if (v.is_number_float()) return MetaValue{v.get<double>()};
    if (v.is_string()) return MetaValue{v.get<std::string>()};
    if (v.is_array()) {
        bool nums = !v.empty();
        for (const auto& e : v) nums = nums && e.is_number();
        if (nums && v.size() == 4)
            return MetaValue{BoundingBox{
                static_cast<uint32_t>(get_u64(v[0], where)),
                static_cast<uint32_t>(get_u64(v[1], where)),
                static_cast<uint32_t>(get_u64(v[2], where)),
                static_cast<uint32_t>(get_u64(v[3], where))}};
        std::vector<std::string> list;
        for (const auto& e : v) list.push_back(get_str(e, where + " element"));
        return MetaValue{std::move(list)};
    }
    bad(where + ": literal must be a number, string, box, or string list");
}

Operand operand_from_json(const json& j, const std::string& where) {
    expect_object(j, where);
    if (j.contains("lit")) {
        expect_keys(j, where, {"lit"});
        return Operand::lit(meta_from_json(j["lit"], where + ".lit"));
    }
    expect_keys(j, where, {"slot", "key"});
    if (!j.contains("slot") || !j.contains("key"))
        bad(where + " needs either {lit} or {slot, key}");
    return Operand::meta(static_cast<size_t>(get_u64(j["slot"], where + ".slot")),
                         get_str(j["key"], where + ".key"));
}

CmpOp cmp_op_from_name(const std::string& name, const std::string& where) {
    if (name == "eq") return CmpOp::eq;
    if (name == "ne") return CmpOp::ne;
    if (name == "lt") return CmpOp::lt;
    if (name == "le") return CmpOp::le;
    if (name == "gt") return CmpOp::gt;
    if (name == "ge") return CmpOp::ge;
    bad(where + ": unknown comparison '" + name + "'");
}

Predicate pred_from_json(const json& j, const std::string& where) {
    expect_object(j, where);
    if (!j.contains("kind")) bad(where + " needs a kind");
    std::string kind = get_str(j["kind"], where + ".kind");
    if (kind == "cmp") {
        expect_keys(j, where, {"kind", "op", "lhs", "rhs", "offset"});
        if (!j.contains("op") || !j.contains("lhs") || !j.contains("rhs"))
            bad(where + ": cmp needs op, lhs, rhs");
        double offset =
            j.contains("offset") ? get_num(j["offset"], where + ".offset") : 0.0;
        return Predicate::cmp_of(
            cmp_op_from_name(get_str(j["op"], where + ".op"), where),
            operand_from_json(j["lhs"], where + ".lhs"),
            operand_from_json(j["rhs"], where + ".rhs"), offset);
    }
    if (kind == "within") {
        expect_keys(j, where, {"kind", "slot_a", "slot_b", "radius"});
        if (!j.contains("slot_a") || !j.contains("slot_b") || !j.contains("radius"))
            bad(where + ": within needs slot_a, slot_b, radius");
        return Predicate::within_of(
            static_cast<size_t>(get_u64(j["slot_a"], where + ".slot_a")),
            static_cast<size_t>(get_u64(j["slot_b"], where + ".slot_b")),
            get_num(j["radius"], where + ".radius"));
    }
    if (kind == "contains") {
        expect_keys(j, where, {"kind", "slot", "key", "value"});
        if (!j.contains("slot") || !j.contains("key") || !j.contains("value"))
            bad(where + ": contains needs slot, key, value");
        return Predicate::contains_of(
            static_cast<size_t>(get_u64(j["slot"], where + ".slot")),
            get_str(j["key"], where + ".key"),
            get_str(j["value"], where + ".value"));
    }
    if (kind == "and" || kind == "or") {
        expect_keys(j, where, {"kind", "parts"});
        if (!j.contains("parts") || !j["parts"].is_array())
            bad(where + ": " + kind + " needs a parts array");
        std::vector<Predicate> parts;
        size_t i = 0;
        for (const auto& p : j["parts"])
            parts.push_back(
                pred_from_json(p, where + ".parts[" + std::to_string(i++) + "]"));
        return kind == "and" ? Predicate::all_of(std::move(parts))
                             : Predicate::any_of(std::move(parts));
    }
    if (kind == "not") {
        expect_keys(j, where, {"kind", "part"});
        if (!j.contains("part")) bad(where + ": not needs a part");
        return Predicate::negate(pred_from_json(j["part"], where + ".part"));
    }
    bad(where + ": unknown predicate kind '" + kind + "'");
}

PlanPtr plan_from_json(const json& j, const std::string& where) {
    expect_object(j, where);
    if (!j.contains("op")) bad(where + " needs an op");
    std::string op = get_str(j["op"], where + ".op");
    auto child = [&](const char* key) {
        if (!j.contains(key))
            bad(where + ": " + op + " needs a '" + key + "' input");
        return plan_from_json(j[key], where + "." + key);
    };
    if (op == "scan") {
        expect_keys(j, where, {"op", "collection"});
        if (!j.contains("collection")) bad(where + ": scan needs a collection");
        return PlanNode::scan(get_str(j["collection"], where + ".collection"));
    }
    if (op == "select") {
        expect_keys(j, where, {"op", "input", "pred"});
        if (!j.contains("pred")) bad(where + ": select needs a pred");
        return PlanNode::select(child("input"),
                                pred_from_json(j["pred"], where + ".pred"));
    }
    if (op == "nl_join") {
        expect_keys(j, where, {"op", "left", "right", "on"});
        if (!j.contains("on")) bad(where + ": nl_join needs an 'on' predicate");
        return PlanNode::nl_join(child("left"), child("right"),
                                 pred_from_json(j["on"], where + ".on"));
    }
    if (op == "index_join") {
        expect_keys(j, where,
                    {"op", "left", "collection", "index", "probe_slot", "probe_key",
                     "mode", "key_offset", "range_lo", "range_hi"});
        if (!j.contains("collection") || !j.contains("index") ||
            !j.contains("probe_key"))
            bad(where + ": index_join needs collection, index, probe_key");
        IndexProbeMode mode = IndexProbeMode::eq;
        if (j.contains("mode")) {
            std::string m = get_str(j["mode"], where + ".mode");
            if (m == "eq")
                mode = IndexProbeMode::eq;
            else if (m == "range")
                mode = IndexProbeMode::range;
            else
                bad(where + ": unknown probe mode '" + m + "'");
        }
        size_t slot = j.contains("probe_slot")
                          ? static_cast<size_t>(
                                get_u64(j["probe_slot"], where + ".probe_slot"))
                          : 0;
        auto plan = PlanNode::index_join(
            child("left"), get_str(j["collection"], where + ".collection"),
            get_str(j["index"], where + ".index"), slot,
            get_str(j["probe_key"], where + ".probe_key"), mode);
        if (j.contains("key_offset"))
            plan->key_offset = get_num(j["key_offset"], where + ".key_offset");
        if (j.contains("range_lo"))
            plan->range_lo = get_num(j["range_lo"], where + ".range_lo");
        if (j.contains("range_hi"))
            plan->range_hi = get_num(j["range_hi"], where + ".range_hi");
        return plan;
    }
    if (op == "sim_join") {
        expect_keys(j, where, {"op", "left", "right", "tau", "build_side"});
        if (!j.contains("tau")) bad(where + ": sim_join needs tau");
        BuildSide side = BuildSide::automatic;
        if (j.contains("build_side")) {
            std::string s = get_str(j["build_side"], where + ".build_side");
            if (s == "automatic")
                side = BuildSide::automatic;
            else if (s == "left")
                side = BuildSide::left;
            else if (s == "right")
                side = BuildSide::right;
            else
                bad(where + ": unknown build side '" + s + "'");
        }
        return PlanNode::sim_join(child("left"), child("right"),
                                  get_num(j["tau"], where + ".tau"), side);
    }
    if (op == "dedup") {
        expect_keys(j, where, {"op", "input", "tau"});
        if (!j.contains("tau")) bad(where + ": dedup needs tau");
        return PlanNode::dedup(child("input"), get_num(j["tau"], where + ".tau"));
    }
    if (op == "count_by") {
        expect_keys(j, where, {"op", "input", "key"});
        if (!j.contains("key")) bad(where + ": count_by needs a key");
        return PlanNode::count_by(child("input"),
                                  get_str(j["key"], where + ".key"));
    }
    if (op == "backtrace") {
        expect_keys(j, where, {"op", "input", "mode", "trace_slot"});
        BacktraceMode mode = BacktraceMode::lineage_index;
        if (j.contains("mode"))
            mode = backtrace_mode_from_name(get_str(j["mode"], where + ".mode"));
        size_t slot = j.contains("trace_slot")
                          ? static_cast<size_t>(
                                get_u64(j["trace_slot"], where + ".trace_slot"))
                          : 0;
        return PlanNode::backtrace(child("input"), mode, slot);
    }
    bad(where + ": unknown op '" + op + "'");
}

std::vector<PaletteEntry> palette_from_json(const json& j,
                                            const std::string& where) {
    if (!j.is_array()) bad(where + " must be an array of [r,g,b,label] entries");
    std::vector<PaletteEntry> out;
    size_t i = 0;
    for (const auto& e : j) {
        std::string ew = where + "[" + std::to_string(i++) + "]";
        if (!e.is_array() || e.size() != 4)
            bad(ew + " must be [r,g,b,label]");
        uint64_t rgb[3];
        for (int c = 0; c < 3; c++) {
            rgb[c] = get_u64(e[c], ew);
            if (rgb[c] > 255) bad(ew + ": channel above 255");
        }
        out.push_back(PaletteEntry{static_cast<uint8_t>(rgb[0]),
                                   static_cast<uint8_t>(rgb[1]),
                                   static_cast<uint8_t>(rgb[2]),
                                   get_str(e[3], ew + " label")});
    }
    return out;
}

GeneratorSpec generator_from_json(const json& j, const std::string& where) {
    expect_keys(j, where,
                {"kind", "tile_w", "tile_h", "palette", "min_area",
                 "label_noise_p", "seed"});
    if (!j.contains("kind")) bad(where + " needs a kind");
    GeneratorSpec g;
    g.kind = generator_kind_from_name(get_str(j["kind"], where + ".kind"));
    if (j.contains("tile_w"))
        g.tile_w = static_cast<uint32_t>(get_u64(j["tile_w"], where + ".tile_w"));
    if (j.contains("tile_h"))
        g.tile_h = static_cast<uint32_t>(get_u64(j["tile_h"], where + ".tile_h"));
    if (j.contains("palette"))
        g.palette = palette_from_json(j["palette"], where + ".palette");
    if (j.contains("min_area"))
        g.min_area =
            static_cast<uint32_t>(get_u64(j["min_area"], where + ".min_area"));
    if (j.contains("label_noise_p"))
        g.label_noise_p = get_num(j["label_noise_p"], where + ".label_noise_p");
    if (j.contains("seed")) g.seed = get_u64(j["seed"], where + ".seed");
    return g;
}

TransformerSpec transformer_from_json(const json& j, const std::string& where) {
    expect_keys(j, where, {"kind", "bins"});
    if (!j.contains("kind")) bad(where + " needs a kind");
    TransformerSpec t;
    t.kind = transformer_kind_from_name(get_str(j["kind"], where + ".kind"));
    if (j.contains("bins"))
        t.bins = static_cast<uint32_t>(get_u64(j["bins"], where + ".bins"));
    return t;
}

EtlSection etl_from_json(const json& j) {
    expect_keys(j, "etl", {"name", "store", "generator", "transformers", "output"});
    if (!j.contains("store") || !j.contains("generator") || !j.contains("output"))
        bad("etl needs store, generator, output");
    EtlSection s;
    if (j.contains("name")) s.name = get_str(j["name"], "etl.name");
    s.store = get_str(j["store"], "etl.store");
    s.generator = generator_from_json(j["generator"], "etl.generator");
    if (j.contains("transformers")) {
        if (!j["transformers"].is_array())
            bad("etl.transformers must be an array");
        size_t i = 0;
        for (const auto& t : j["transformers"])
            s.transformers.push_back(transformer_from_json(
                t, "etl.transformers[" + std::to_string(i++) + "]"));
    }
    s.output = get_str(j["output"], "etl.output");
    return s;
}

std::map<std::string, std::string> alias_map_from_json(const json& j,
                                                       const std::string& where) {
    expect_object(j, where);
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : j.items()) out[k] = get_str(v, where + "." + k);
    return out;
}

void collect_pred_labels(const Predicate& p, std::vector<std::string>& out) {
    switch (p.kind) {
        case Predicate::Kind::cmp: {
            auto label_lit = [&](const Operand& a, const Operand& b) {
                if (a.kind == Operand::Kind::slot_key && a.key == "label" &&
                    b.kind == Operand::Kind::literal &&
                    std::holds_alternative<std::string>(b.literal))
                    out.push_back(std::get<std::string>(b.literal));
            };
            label_lit(p.lhs, p.rhs);
            label_lit(p.rhs, p.lhs);
            break;
        }
        case Predicate::Kind::contains:
            if (p.list_key == "group_labels") out.push_back(p.needle);
            break;
        case Predicate::Kind::p_and:
        case Predicate::Kind::p_or:
        case Predicate::Kind::p_not:
            for (const auto& c : p.children) collect_pred_labels(c, out);
            break;
        case Predicate::Kind::within:
            break;
    }
}

void collect_plan_labels(const PlanNode& n, std::vector<std::string>& out) {
    if (n.kind == PlanNode::Kind::select || n.kind == PlanNode::Kind::nl_join)
        collect_pred_labels(n.pred, out);
    for (const auto& c : n.children) collect_plan_labels(*c, out);
}

}  // namespace

PlanFile PlanFile::parse(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        bad(e.what());
    }
    expect_keys(j, "plan file",
                {"stores", "collections", "etl", "indexes", "load_indexes", "plan",
                 "output"});
    PlanFile pf;
    if (j.contains("stores"))
        pf.stores = alias_map_from_json(j["stores"], "stores");
    if (j.contains("collections"))
        pf.collections = alias_map_from_json(j["collections"], "collections");
    if (j.contains("etl")) pf.etl = etl_from_json(j["etl"]);
    if (j.contains("indexes")) {
        if (!j["indexes"].is_array()) bad("indexes must be an array");
        size_t i = 0;
        for (const auto& e : j["indexes"]) {
            std::string where = "indexes[" + std::to_string(i++) + "]";
            expect_keys(e, where,
                        {"collection", "name", "kind", "key", "leaf_size",
                         "capacity"});
            if (!e.contains("name") || !e.contains("kind"))
                bad(where + " needs name and kind");
            IndexBuildSpec b;
            if (e.contains("collection"))
                b.collection = get_str(e["collection"], where + ".collection");
            b.name = get_str(e["name"], where + ".name");
            b.kind = index_kind_from_name(get_str(e["kind"], where + ".kind"));
            if (e.contains("key")) b.key = get_str(e["key"], where + ".key");
            if (e.contains("leaf_size"))
                b.leaf_size = static_cast<uint32_t>(
                    get_u64(e["leaf_size"], where + ".leaf_size"));
            if (e.contains("capacity"))
                b.capacity = static_cast<uint32_t>(
                    get_u64(e["capacity"], where + ".capacity"));
            if ((b.kind == IndexKind::ordered || b.kind == IndexKind::hash) &&
                b.key.empty())
                bad(where + ": " +
                    std::string(index_kind_name(b.kind)) +
                    " indexes need a key");
            pf.index_builds.push_back(std::move(b));
        }
    }
    if (j.contains("load_indexes")) {
        if (!j["load_indexes"].is_array()) bad("load_indexes must be an array");
        size_t i = 0;
        for (const auto& e : j["load_indexes"]) {
            std::string where = "load_indexes[" + std::to_string(i++) + "]";
            expect_keys(e, where, {"collection", "name"});
            if (!e.contains("collection") || !e.contains("name"))
                bad(where + " needs collection and name");
            pf.load_indexes.push_back(
                LoadIndexSpec{get_str(e["collection"], where + ".collection"),
                              get_str(e["name"], where + ".name")});
        }
    }
    if (j.contains("plan")) pf.plan = plan_from_json(j["plan"], "plan");
    if (j.contains("output")) {
        expect_keys(j["output"], "output", {"results", "stats_csv"});
        if (j["output"].contains("results"))
            pf.output.results = get_str(j["output"]["results"], "output.results");
        if (j["output"].contains("stats_csv"))
            pf.output.stats_csv =
                get_str(j["output"]["stats_csv"], "output.stats_csv");
    }
    return pf;
}

PlanFile PlanFile::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read plan file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::vector<PipelineStage> plan_stages(const PlanFile& pf) {
    std::vector<PipelineStage> stages;
    if (!pf.etl) return stages;
    stages.push_back(PipelineStage::generator(pf.etl->generator));
    for (const auto& t : pf.etl->transformers)
        stages.push_back(PipelineStage::transformer(t));
    if (pf.plan) {
        std::vector<std::string> labels;
        collect_plan_labels(*pf.plan, labels);
        for (auto& l : labels)
            stages.push_back(PipelineStage::label_filter(std::move(l)));
    }
    return stages;
}

BenchConfig parse_bench_config(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("bench config: ") + e.what());
    }
    auto where = [](const char* k) { return std::string("bench config ") + k; };
    expect_keys(j, "bench config",
                {"queries", "layouts", "qualities", "seeds", "work_dir", "tau",
                 "bins", "clip_len", "leaf_size", "node_capacity", "label_noise_p",
                 "frames", "width", "height", "noise_amplitude", "gallery_frames",
                 "gallery_pairs", "q3_target", "q5_target"});
    BenchConfig cfg;
    if (j.contains("queries")) {
        cfg.queries.clear();
        for (const auto& q : j["queries"])
            cfg.queries.push_back(get_str(q, where("queries entry")));
    }
    if (j.contains("layouts")) {
        cfg.layouts.clear();
        for (const auto& l : j["layouts"])
            cfg.layouts.push_back(
                layout_from_name(get_str(l, where("layouts entry"))));
    }
    if (j.contains("qualities")) {
        cfg.codecs.clear();
        for (const auto& q : j["qualities"])
            cfg.codecs.push_back(
                CodecConfig::from_quality(get_str(q, where("qualities entry"))));
    }
    if (j.contains("seeds")) {
        cfg.seeds.clear();
        for (const auto& s : j["seeds"])
            cfg.seeds.push_back(get_u64(s, where("seeds entry")));
    }
    if (j.contains("work_dir")) cfg.work_dir = get_str(j["work_dir"], where("work_dir"));
    if (j.contains("tau")) cfg.tau = get_num(j["tau"], where("tau"));
    if (j.contains("bins"))
        cfg.bins = static_cast<uint32_t>(get_u64(j["bins"], where("bins")));
    if (j.contains("clip_len"))
        cfg.clip_len =
            static_cast<uint32_t>(get_u64(j["clip_len"], where("clip_len")));
    if (j.contains("leaf_size"))
        cfg.leaf_size =
            static_cast<uint32_t>(get_u64(j["leaf_size"], where("leaf_size")));
    if (j.contains("node_capacity"))
        cfg.node_capacity = static_cast<uint32_t>(
            get_u64(j["node_capacity"], where("node_capacity")));
    if (j.contains("label_noise_p"))
        cfg.label_noise_p = get_num(j["label_noise_p"], where("label_noise_p"));
    if (j.contains("frames")) cfg.frames = get_u64(j["frames"], where("frames"));
    if (j.contains("width"))
        cfg.width = static_cast<uint32_t>(get_u64(j["width"], where("width")));
    if (j.contains("height"))
        cfg.height = static_cast<uint32_t>(get_u64(j["height"], where("height")));
    if (j.contains("noise_amplitude")) {
        uint64_t a = get_u64(j["noise_amplitude"], where("noise_amplitude"));
        if (a > 255) throw ValidationError("bench config: noise_amplitude above 255");
        cfg.noise_amplitude = static_cast<uint8_t>(a);
    }
    if (j.contains("gallery_frames"))
        cfg.gallery_frames = get_u64(j["gallery_frames"], where("gallery_frames"));
    if (j.contains("gallery_pairs"))
        cfg.gallery_pairs = get_u64(j["gallery_pairs"], where("gallery_pairs"));
    if (j.contains("q3_target"))
        cfg.q3_target =
            static_cast<uint16_t>(get_u64(j["q3_target"], where("q3_target")));
    if (j.contains("q5_target"))
        cfg.q5_target =
            static_cast<uint16_t>(get_u64(j["q5_target"], where("q5_target")));
    return cfg;
}

BenchConfig load_bench_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read bench config '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_bench_config(buf.str());
}

}  // namespace patchdb
