#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "patchdb/planfile.hpp"

namespace py = pybind11;
using namespace patchdb;

namespace {

py::object meta_to_py(const MetaValue& v) {
    if (const auto* i = std::get_if<int64_t>(&v)) return py::int_(*i);
    if (const auto* d = std::get_if<double>(&v)) return py::float_(*d);
    if (const auto* s = std::get_if<std::string>(&v)) return py::str(*s);
    if (const auto* b = std::get_if<BoundingBox>(&v))
        return py::make_tuple(b->x1, b->y1, b->x2, b->y2);
    return py::cast(std::get<std::vector<std::string>>(v));
}

py::dict patch_to_py(const Patch& p, bool with_data) {
    py::dict d;
    d["id"] = p.patch_id;
    d["shape"] = py::cast(p.shape);
    py::dict meta;
    for (const auto& [k, v] : p.meta) meta[py::str(k)] = meta_to_py(v);
    d["meta"] = meta;
    if (with_data) d["data"] = py::cast(p.data);
    return d;
}

SceneSpec scene_from_py(const std::string& kind, uint64_t seed, uint64_t frames,
                        uint32_t width, uint32_t height, uint32_t noise,
                        uint64_t pairs, uint32_t triples, double tau,
                        const std::string& video_id) {
    if (noise > 255) throw ConfigError("noise amplitude above 255");
    SceneSpec s;
    if (kind == "tracking")
        s = make_tracking_scene(seed, frames, width, height);
    else if (kind == "gallery")
        s = make_gallery_scene(seed, frames, pairs, width, height);
    else if (kind == "quality")
        s = make_quality_scene(seed, frames, width, height);
    else if (kind == "plan-order")
        s = make_plan_order_scene(seed, frames, triples, tau);
    else
        throw ConfigError("unknown scene kind '" + kind +
                          "' (tracking, gallery, quality, plan-order)");
    s.noise_amplitude = static_cast<uint8_t>(noise);
    if (!video_id.empty()) s.video_id = video_id;
    s.validate();
    return s;
}

// Raises with every violation message so the caller sees which stage failed.
void check_stages(const PlanFile& pf) {
    auto stages = plan_stages(pf);
    if (stages.empty()) return;
    auto violations = validate_pipeline(stages);
    if (violations.empty()) return;
    std::string msg;
    for (const auto& v : violations) {
        if (!msg.empty()) msg += "; ";
        msg += "stage " + std::to_string(v.stage) + ": " + v.message;
    }
    throw ValidationError(msg);
}

PatchCollection materialize_etl(const PlanFile& pf) {
    const EtlSection& etl = *pf.etl;
    auto it = pf.stores.find(etl.store);
    std::string store_path = it == pf.stores.end() ? etl.store : it->second;
    VideoStore vs = VideoStore::open(store_path);
    IoCounters io;
    auto stream = generate(vs.scan(std::nullopt, io), etl.generator);
    for (const auto& t : etl.transformers) stream = transform(std::move(stream), t);
    return PatchCollection::materialize(*stream, etl.output);
}

void build_into(PatchCollection& col, const IndexBuildSpec& b) {
    auto patches = col.load_all();
    std::string blob;
    switch (b.kind) {
        case IndexKind::ordered:
            blob = build_ordered(patches, b.key).serialize();
            break;
        case IndexKind::hash:
            blob = build_hash(patches, b.key).serialize();
            break;
        case IndexKind::rtree:
            blob = build_rtree(patches, b.capacity).serialize();
            break;
        case IndexKind::balltree:
            blob = build_balltree(patches, b.leaf_size).serialize();
            break;
    }
    col.put_index(b.name, blob);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "embeddable engine for storing, indexing, and querying image "
              "patches from synthetic vision pipelines";
    m.attr("__version__") = "0.1.0";

    m.def(
        "gen_scene",
        [](const std::string& kind, const std::string& out, uint64_t seed,
           uint64_t frames, uint32_t width, uint32_t height, uint32_t noise,
           uint64_t pairs, uint32_t triples, double tau,
           const std::string& layout, const std::string& quality,
           uint32_t clip_len, const std::string& video_id,
           const std::string& gt) {
            SceneSpec spec = scene_from_py(kind, seed, frames, width, height,
                                           noise, pairs, triples, tau, video_id);
            auto [stream, truth] = gen_scene(spec);
            VideoStore vs = VideoStore::ingest(
                *stream, StoreDescriptor{layout_from_name(layout),
                                         CodecConfig::from_quality(quality),
                                         clip_len, out});
            if (!gt.empty()) truth.save(gt);
            py::dict d;
            d["video_id"] = vs.video_id();
            d["frames"] = vs.frame_count();
            d["width"] = vs.width();
            d["height"] = vs.height();
            d["bytes"] = vs.store_size();
            return d;
        },
        py::arg("kind"), py::arg("out"), py::arg("seed") = 1,
        py::arg("frames") = 200, py::arg("width") = 320, py::arg("height") = 240,
        py::arg("noise") = 4, py::arg("pairs") = 20, py::arg("triples") = 6,
        py::arg("tau") = 0.1, py::arg("layout") = "frame_file",
        py::arg("quality") = "none", py::arg("clip_len") = 64,
        py::arg("video_id") = "", py::arg("gt") = "",
        "Render a deterministic scene into a video store; optionally write "
        "the ground-truth JSON sidecar.");

    m.def(
        "run_etl",
        [](const std::string& plan_json) {
            PlanFile pf = PlanFile::parse(plan_json);
            if (!pf.etl) throw ValidationError("plan file has no etl section");
            check_stages(pf);
            PatchCollection col = materialize_etl(pf);
            py::list indexes;
            for (const auto& b : pf.index_builds) {
                if (b.collection.empty() || b.collection == pf.etl->name) {
                    build_into(col, b);
                } else {
                    auto it = pf.collections.find(b.collection);
                    PatchCollection other = PatchCollection::open(
                        it == pf.collections.end() ? b.collection : it->second,
                        true);
                    build_into(other, b);
                }
                indexes.append(b.name);
            }
            py::dict d;
            d["patches"] = col.patch_count();
            d["output"] = col.path();
            d["indexes"] = indexes;
            return d;
        },
        py::arg("plan_json"),
        "Materialize the plan file's ETL section and build its indexes.");

    m.def(
        "run_query",
        [](const std::string& plan_json, bool with_data) {
            PlanFile pf = PlanFile::parse(plan_json);
            if (!pf.plan) throw ValidationError("plan file has no plan section");
            check_stages(pf);
            std::map<std::string, PatchCollection> cols;
            std::map<std::string, VideoStore> stores;
            if (pf.etl) cols.emplace(pf.etl->name, materialize_etl(pf));
            for (const auto& [alias, path] : pf.collections)
                cols.emplace(alias, PatchCollection::open(path, false));
            for (const auto& [alias, path] : pf.stores)
                stores.emplace(alias, VideoStore::open(path));
            ExecContext ctx;
            for (const auto& [alias, col] : cols) ctx.collections[alias] = &col;
            for (const auto& [alias, vs] : stores) ctx.videos[vs.video_id()] = &vs;
            for (const auto& li : pf.load_indexes) {
                auto it = cols.find(li.collection);
                if (it == cols.end())
                    throw ValidationError(
                        "load_indexes references unknown collection '" +
                        li.collection + "'");
                ctx.load_index(it->second, li.name);
            }
            ExecResult res = execute(*pf.plan, ctx);
            py::list tuples;
            for (const auto& t : res.tuples) {
                py::list slots;
                for (const auto& p : t) slots.append(patch_to_py(p, with_data));
                tuples.append(slots);
            }
            py::list traced;
            for (const auto& [patch, frame] : res.traced)
                traced.append(py::make_tuple(patch.patch_id, frame.video_id,
                                             frame.frame_no));
            py::dict d;
            d["tuples"] = tuples;
            d["traced"] = traced;
            d["stats_text"] = res.stats.to_text();
            d["stats_csv"] = res.stats.to_csv();
            d["records_read"] = res.stats.io.records_read;
            d["frames_decoded"] = res.stats.io.frames_decoded;
            return d;
        },
        py::arg("plan_json"), py::arg("with_data") = false,
        "Execute a plan file and return the result tuples plus stats.");

    m.def(
        "run_bench",
        [](const std::string& config_json) {
            BenchConfig cfg = parse_bench_config(config_json);
            BenchReport rep = run_benchmark(cfg);
            py::dict d;
            d["csv"] = rep.to_csv();
            d["text"] = rep.to_text();
            d["rows"] = rep.rows.size();
            return d;
        },
        py::arg("config_json"),
        "Run the measurement harness from a JSON config.");

    m.def(
        "store_stats",
        [](const std::string& path) {
            VideoStore vs = VideoStore::open(path);
            const StoreDescriptor& desc = vs.descriptor();
            py::dict d;
            d["video_id"] = vs.video_id();
            d["frames"] = vs.frame_count();
            d["width"] = vs.width();
            d["height"] = vs.height();
            d["layout"] = layout_name(desc.layout);
            d["quality"] = quality_name(desc.codec);
            d["clip_len"] = desc.clip_len;
            d["bytes"] = vs.store_size();
            return d;
        },
        py::arg("path"), "Describe a video store.");

    m.def(
        "collection_stats",
        [](const std::string& path) {
            PatchCollection col = PatchCollection::open(path, false);
            py::dict d;
            d["patches"] = col.patch_count();
            d["frames_covered"] = col.forward_index().size();
            d["bytes"] = col.store_size();
            d["indexes"] = py::cast(col.index_names());
            return d;
        },
        py::arg("path"), "Describe a patch collection.");

    m.def(
        "collection_patches",
        [](const std::string& path, bool with_data) {
            PatchCollection col = PatchCollection::open(path, false);
            py::list out;
            for (const auto& p : col.load_all()) out.append(patch_to_py(p, with_data));
            return out;
        },
        py::arg("path"), py::arg("with_data") = false,
        "Load every patch in a collection as dicts.");
}
