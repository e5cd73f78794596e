#include "patchdb/cli.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "patchdb/bench.hpp"
#include "patchdb/index.hpp"
#include "patchdb/planfile.hpp"

namespace patchdb {

namespace {

// ---------------------------------------------------------------------------
// Shared option bundles

struct StoreOpts {
    std::string layout = "frame_file";
    std::string quality = "none";
    uint32_t clip_len = 64;

    void attach(CLI::App* cmd) {
        cmd->add_option("--layout", layout,
                        "storage layout: frame_file, encoded_file, segmented_file")
            ->capture_default_str();
        cmd->add_option("--quality", quality,
                        "codec quality: none (lossless), high, medium, low")
            ->capture_default_str();
        cmd->add_option("--clip-len", clip_len, "frames per clip (segmented_file)")
            ->capture_default_str();
    }

    StoreDescriptor descriptor(std::string path) const {
        return StoreDescriptor{layout_from_name(layout),
                               CodecConfig::from_quality(quality), clip_len,
                               std::move(path)};
    }
};

struct SceneOpts {
    std::string kind = "tracking";
    uint64_t seed = 1;
    uint64_t frames = 200;
    uint32_t width = 320, height = 240;
    uint32_t noise = 4;
    uint64_t pairs = 20;    // gallery
    uint32_t triples = 6;   // plan-order
    double tau = 0.1;       // plan-order
    std::string video_id;

    void attach(CLI::App* cmd, bool required_kind) {
        auto* k = cmd->add_option(
            "--scene", kind, "scene kind: tracking, gallery, quality, plan-order");
        if (required_kind)
            k->required();
        else
            k->capture_default_str();
        cmd->add_option("--seed", seed, "scene seed")->capture_default_str();
        cmd->add_option("--frames", frames, "frame count")->capture_default_str();
        cmd->add_option("--width", width, "frame width")->capture_default_str();
        cmd->add_option("--height", height, "frame height")->capture_default_str();
        cmd->add_option("--noise", noise, "background noise amplitude")
            ->capture_default_str();
        cmd->add_option("--pairs", pairs, "planted duplicate pairs (gallery)")
            ->capture_default_str();
        cmd->add_option("--triples", triples, "entity triples (plan-order)")
            ->capture_default_str();
        cmd->add_option("--tau", tau, "match threshold the scene is tuned for "
                                      "(plan-order)")
            ->capture_default_str();
        cmd->add_option("--video-id", video_id, "override the video id");
    }

    SceneSpec build() const {
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
};

// ---------------------------------------------------------------------------
// Small helpers

std::string resolve_alias(const std::map<std::string, std::string>& aliases,
                          const std::string& name) {
    auto it = aliases.find(name);
    return it == aliases.end() ? name : it->second;
}

std::string meta_str(const MetaValue& v) {
    if (const auto* i = std::get_if<int64_t>(&v)) return std::to_string(*i);
    if (const auto* d = std::get_if<double>(&v)) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%g", *d);
        return buf;
    }
    if (const auto* s = std::get_if<std::string>(&v)) return *s;
    if (const auto* b = std::get_if<BoundingBox>(&v)) {
        return "[" + std::to_string(b->x1) + "," + std::to_string(b->y1) + "," +
               std::to_string(b->x2) + "," + std::to_string(b->y2) + "]";
    }
    const auto& list = std::get<std::vector<std::string>>(v);
    std::string out = "{";
    for (size_t i = 0; i < list.size(); i++) {
        if (i) out += ",";
        out += list[i];
    }
    return out + "}";
}

std::string tuple_line(const Tuple& t) {
    std::ostringstream os;
    for (size_t i = 0; i < t.size(); i++) {
        if (i) os << " | ";
        const Patch& p = t[i];
        os << "id=" << p.patch_id;
        os << " shape=";
        for (size_t k = 0; k < p.shape.size(); k++) {
            if (k) os << "x";
            os << p.shape[k];
        }
        for (const auto& [key, val] : p.meta) os << " " << key << "=" << meta_str(val);
    }
    return os.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << content;
    if (!out.flush()) throw IoError("short write to '" + path + "'");
}

// Prints each schema violation to stderr; true when the pipeline is invalid.
bool report_violations(const std::vector<PipelineStage>& stages) {
    if (stages.empty()) return false;
    auto violations = validate_pipeline(stages);
    for (const auto& v : violations)
        std::cerr << "error: stage " << v.stage << ": " << v.message << "\n";
    return !violations.empty();
}

void build_index_into(PatchCollection& col, const IndexBuildSpec& b) {
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
    std::cout << "index '" << b.name << "' (" << index_kind_name(b.kind) << ", "
              << blob.size() << " bytes) -> " << col.path() << "\n";
}

// ---------------------------------------------------------------------------
// PPM frame directories

std::string ppm_token(std::istream& in, const std::string& path) {
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            std::string line;
            std::getline(in, line);
            continue;
        }
        if (!std::isspace(static_cast<unsigned char>(c))) break;
    }
    if (c == EOF) throw ValidationError(path + ": truncated PPM header");
    std::string t(1, static_cast<char>(c));
    while ((c = in.get()) != EOF && !std::isspace(static_cast<unsigned char>(c)))
        t.push_back(static_cast<char>(c));
    return t;
}

uint64_t ppm_number(std::istream& in, const std::string& path) {
    std::string t = ppm_token(in, path);
    try {
        size_t pos = 0;
        uint64_t v = std::stoull(t, &pos);
        if (pos != t.size()) throw std::invalid_argument(t);
        return v;
    } catch (const std::exception&) {
        throw ValidationError(path + ": bad number '" + t + "' in PPM header");
    }
}

Frame read_ppm(const std::filesystem::path& path, const std::string& video_id,
               uint64_t frame_no) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read '" + path.string() + "'");
    std::string spath = path.string();
    if (ppm_token(in, spath) != "P6")
        throw ValidationError(spath + " is not a binary PPM (P6)");
    uint64_t w = ppm_number(in, spath);
    uint64_t h = ppm_number(in, spath);
    uint64_t maxval = ppm_number(in, spath);
    if (w == 0 || h == 0) throw ValidationError(spath + ": empty image");
    if (maxval != 255)
        throw ValidationError(spath + ": only maxval 255 is supported");
    Frame f;
    f.video_id = video_id;
    f.frame_no = frame_no;
    f.width = static_cast<uint32_t>(w);
    f.height = static_cast<uint32_t>(h);
    f.channels = 3;
    f.pixels.resize(w * h * 3);
    in.read(reinterpret_cast<char*>(f.pixels.data()),
            static_cast<std::streamsize>(f.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(f.pixels.size()))
        throw ValidationError(spath + ": truncated pixel data");
    return f;
}

std::unique_ptr<Stream<Frame>> ppm_dir_stream(const std::string& dir,
                                              const std::string& video_id) {
    std::vector<std::filesystem::path> paths;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".ppm")
            paths.push_back(e.path());
    if (paths.empty()) throw ValidationError("no .ppm frames in '" + dir + "'");
    std::sort(paths.begin(), paths.end());
    struct State {
        std::vector<std::filesystem::path> paths;
        std::string video_id;
        size_t i = 0;
    };
    auto st = std::make_shared<State>();
    st->paths = std::move(paths);
    st->video_id = video_id;
    return make_stream<Frame>([st]() -> std::optional<Frame> {
        if (st->i >= st->paths.size()) return std::nullopt;
        size_t i = st->i++;
        return read_ppm(st->paths[i], st->video_id, i);
    });
}

// ---------------------------------------------------------------------------
// Subcommand bodies

void describe_store(const VideoStore& vs) {
    const StoreDescriptor& d = vs.descriptor();
    std::cout << "wrote " << vs.frame_count() << " frames (" << vs.width() << "x"
              << vs.height() << ") to " << d.path << " [" << layout_name(d.layout)
              << ", quality " << quality_name(d.codec) << "], " << vs.store_size()
              << " bytes\n";
}

int run_gen_scene(const SceneOpts& so, const StoreOpts& sto,
                  const std::string& out, const std::string& gt_path) {
    SceneSpec spec = so.build();
    auto [frames, gt] = gen_scene(spec);
    VideoStore vs = VideoStore::ingest(*frames, sto.descriptor(out));
    describe_store(vs);
    if (!gt_path.empty()) {
        gt.save(gt_path);
        std::cout << "ground truth -> " << gt_path << "\n";
    }
    return 0;
}

int run_ingest(const std::string& frames_dir, const SceneOpts& so,
               const StoreOpts& sto, const std::string& out) {
    std::unique_ptr<Stream<Frame>> frames;
    if (!frames_dir.empty()) {
        std::string vid = so.video_id;
        if (vid.empty())
            vid = std::filesystem::path(frames_dir).filename().string();
        if (vid.empty()) vid = "video";
        frames = ppm_dir_stream(frames_dir, vid);
    } else {
        frames = scene_frames(so.build());
    }
    VideoStore vs = VideoStore::ingest(*frames, sto.descriptor(out));
    describe_store(vs);
    return 0;
}

// Runs the plan file's ETL section and returns the materialized collection.
PatchCollection run_etl_section(const PlanFile& pf) {
    const EtlSection& etl = *pf.etl;
    VideoStore vs = VideoStore::open(resolve_alias(pf.stores, etl.store));
    IoCounters io;
    auto stream = generate(vs.scan(std::nullopt, io), etl.generator);
    for (const auto& t : etl.transformers) stream = transform(std::move(stream), t);
    PatchCollection col = PatchCollection::materialize(*stream, etl.output);
    std::cout << "materialized " << col.patch_count() << " patches -> "
              << etl.output << " (" << io.records_read << " records, "
              << io.frames_decoded << " frames decoded)\n";
    return col;
}

int run_etl(const std::string& plan_path) {
    PlanFile pf = PlanFile::load(plan_path);
    if (!pf.etl) throw ValidationError("plan file has no etl section");
    if (report_violations(plan_stages(pf))) return 1;
    PatchCollection col = run_etl_section(pf);
    for (const auto& b : pf.index_builds) {
        if (b.collection.empty() || b.collection == pf.etl->name) {
            build_index_into(col, b);
        } else {
            PatchCollection other = PatchCollection::open(
                resolve_alias(pf.collections, b.collection), true);
            build_index_into(other, b);
        }
    }
    return 0;
}

int run_index(const std::string& path, const std::string& name,
              const std::string& kind, const std::string& key,
              uint32_t leaf_size, uint32_t capacity) {
    IndexBuildSpec b;
    b.name = name;
    b.kind = index_kind_from_name(kind);
    b.key = key;
    b.leaf_size = leaf_size;
    b.capacity = capacity;
    if ((b.kind == IndexKind::ordered || b.kind == IndexKind::hash) && key.empty())
        throw ConfigError(std::string(index_kind_name(b.kind)) +
                          " indexes need --key");
    PatchCollection col = PatchCollection::open(path, true);
    build_index_into(col, b);
    return 0;
}

int run_query(const std::string& plan_path) {
    PlanFile pf = PlanFile::load(plan_path);
    if (!pf.plan) throw ValidationError("plan file has no plan section");
    if (report_violations(plan_stages(pf))) return 1;

    std::map<std::string, PatchCollection> cols;
    std::map<std::string, VideoStore> stores;
    if (pf.etl) cols.emplace(pf.etl->name, run_etl_section(pf));
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
            throw ValidationError("load_indexes references unknown collection '" +
                                  li.collection + "'");
        ctx.load_index(it->second, li.name);
    }

    ExecResult res = execute(*pf.plan, ctx);

    std::ofstream file;
    std::ostream* out = &std::cout;
    if (!pf.output.results.empty()) {
        file.open(pf.output.results, std::ios::binary | std::ios::trunc);
        if (!file) throw IoError("cannot write '" + pf.output.results + "'");
        out = &file;
    }
    for (const auto& t : res.tuples) *out << tuple_line(t) << "\n";
    for (const auto& [patch, frame] : res.traced)
        *out << "# traced id=" << patch.patch_id << " -> " << frame.video_id << "#"
             << frame.frame_no << "\n";
    if (out == &file && !file.flush())
        throw IoError("short write to '" + pf.output.results + "'");
    if (!pf.output.results.empty())
        std::cout << res.tuples.size() << " tuples -> " << pf.output.results
                  << "\n";

    std::cout << res.stats.to_text();
    if (!pf.output.stats_csv.empty()) {
        write_file(pf.output.stats_csv, res.stats.to_csv());
        std::cout << "stats -> " << pf.output.stats_csv << "\n";
    }
    return 0;
}

struct BenchFlags {
    std::string config_path;
    std::string out = "bench.csv";
    std::vector<std::string> queries, layouts, qualities;
    std::vector<uint64_t> seeds;
    std::string work_dir;
    double tau = 0.1, label_noise_p = 0.0;
    uint32_t bins = 8, clip_len = 64, leaf_size = 32, node_capacity = 16;
    uint64_t frames = 200, gallery_frames = 120, gallery_pairs = 20;
    uint32_t width = 320, height = 240, noise = 4;
    uint64_t q3_target = 0, q5_target = 0;

    struct Opts {
        CLI::Option *queries = nullptr, *layouts = nullptr, *qualities = nullptr,
                    *seeds = nullptr, *work_dir = nullptr, *tau = nullptr,
                    *bins = nullptr, *clip_len = nullptr, *leaf_size = nullptr,
                    *node_capacity = nullptr, *label_noise_p = nullptr,
                    *frames = nullptr, *width = nullptr, *height = nullptr,
                    *noise = nullptr, *gallery_frames = nullptr,
                    *gallery_pairs = nullptr, *q3_target = nullptr,
                    *q5_target = nullptr;
    } opt;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "bench config file (JSON)");
        cmd->add_option("--out", out, "CSV report path")->capture_default_str();
        opt.queries = cmd->add_option("--queries", queries,
                                      "comma-separated subset of q1..q6")
                          ->delimiter(',');
        opt.layouts =
            cmd->add_option("--layouts", layouts, "layouts to sweep")->delimiter(',');
        opt.qualities = cmd->add_option("--qualities", qualities,
                                        "codec qualities to sweep")
                            ->delimiter(',');
        opt.seeds = cmd->add_option("--seeds", seeds, "seeds to sweep")->delimiter(',');
        opt.work_dir = cmd->add_option("--work-dir", work_dir,
                                       "scratch directory for stores");
        opt.tau = cmd->add_option("--tau", tau, "similarity threshold");
        opt.bins = cmd->add_option("--bins", bins, "histogram bins per channel");
        opt.clip_len = cmd->add_option("--clip-len", clip_len, "segmented clip length");
        opt.leaf_size = cmd->add_option("--leaf-size", leaf_size, "ball-tree leaf size");
        opt.node_capacity =
            cmd->add_option("--capacity", node_capacity, "r-tree node capacity");
        opt.label_noise_p = cmd->add_option("--label-noise", label_noise_p,
                                            "detector label flip probability");
        opt.frames = cmd->add_option("--frames", frames, "tracking scene frames");
        opt.width = cmd->add_option("--width", width, "tracking scene width");
        opt.height = cmd->add_option("--height", height, "tracking scene height");
        opt.noise = cmd->add_option("--noise", noise, "background noise amplitude");
        opt.gallery_frames =
            cmd->add_option("--gallery-frames", gallery_frames, "gallery frames");
        opt.gallery_pairs = cmd->add_option("--gallery-pairs", gallery_pairs,
                                            "planted duplicate pairs");
        opt.q3_target = cmd->add_option("--q3-target", q3_target,
                                        "entity id for the trajectory query");
        opt.q5_target = cmd->add_option("--q5-target", q5_target,
                                        "entity id for the lookup query");
    }

    BenchConfig to_config() const {
        BenchConfig cfg;
        if (!config_path.empty()) cfg = load_bench_config(config_path);
        if (opt.queries->count()) cfg.queries = queries;
        if (opt.layouts->count()) {
            cfg.layouts.clear();
            for (const auto& l : layouts) cfg.layouts.push_back(layout_from_name(l));
        }
        if (opt.qualities->count()) {
            cfg.codecs.clear();
            for (const auto& q : qualities)
                cfg.codecs.push_back(CodecConfig::from_quality(q));
        }
        if (opt.seeds->count()) cfg.seeds = seeds;
        if (opt.work_dir->count()) cfg.work_dir = work_dir;
        if (opt.tau->count()) cfg.tau = tau;
        if (opt.bins->count()) cfg.bins = bins;
        if (opt.clip_len->count()) cfg.clip_len = clip_len;
        if (opt.leaf_size->count()) cfg.leaf_size = leaf_size;
        if (opt.node_capacity->count()) cfg.node_capacity = node_capacity;
        if (opt.label_noise_p->count()) cfg.label_noise_p = label_noise_p;
        if (opt.frames->count()) cfg.frames = frames;
        if (opt.width->count()) cfg.width = width;
        if (opt.height->count()) cfg.height = height;
        if (opt.noise->count()) {
            if (noise > 255) throw ConfigError("noise amplitude above 255");
            cfg.noise_amplitude = static_cast<uint8_t>(noise);
        }
        if (opt.gallery_frames->count()) cfg.gallery_frames = gallery_frames;
        if (opt.gallery_pairs->count()) cfg.gallery_pairs = gallery_pairs;
        if (opt.q3_target->count())
            cfg.q3_target = static_cast<uint16_t>(q3_target);
        if (opt.q5_target->count())
            cfg.q5_target = static_cast<uint16_t>(q5_target);
        return cfg;
    }
};

int run_bench(const BenchFlags& f) {
    BenchConfig cfg = f.to_config();
    BenchReport rep = run_benchmark(cfg);
    write_file(f.out, rep.to_csv());
    std::cout << rep.to_text();
    std::cout << "wrote " << rep.rows.size() << " rows -> " << f.out << "\n";
    return 0;
}

int run_stats(const std::string& store_path, const std::string& col_path) {
    if (store_path.empty() == col_path.empty())
        throw ConfigError("stats needs exactly one of --store or --collection");
    if (!store_path.empty()) {
        VideoStore vs = VideoStore::open(store_path);
        const StoreDescriptor& d = vs.descriptor();
        std::cout << "video store " << store_path << "\n"
                  << "  video_id=" << vs.video_id() << " frames=" << vs.frame_count()
                  << " size=" << vs.width() << "x" << vs.height() << "\n"
                  << "  layout=" << layout_name(d.layout)
                  << " quality=" << quality_name(d.codec)
                  << " clip_len=" << d.clip_len << "\n"
                  << "  file_bytes=" << vs.store_size() << "\n";
        return 0;
    }
    PatchCollection col = PatchCollection::open(col_path, false);
    std::cout << "patch collection " << col_path << "\n"
              << "  patches=" << col.patch_count()
              << " frames_covered=" << col.forward_index().size()
              << " file_bytes=" << col.store_size() << "\n";
    for (const auto& name : col.index_names()) {
        auto blob = col.get_index(name);
        std::cout << "  index " << name << " ("
                  << index_kind_name(peek_index_kind(*blob)) << ", "
                  << blob->size() << " bytes)\n";
    }
    return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"patch store: ingest synthetic video, extract and index patches, "
                 "run query plans, and benchmark the tradeoffs"};
    app.require_subcommand(1);
    int rc = 0;

    // gen-scene
    auto* gen = app.add_subcommand(
        "gen-scene", "render a deterministic scene into a video store");
    SceneOpts gen_scene_opts;
    StoreOpts gen_store_opts;
    std::string gen_out, gen_gt;
    gen_scene_opts.attach(gen, false);
    gen_store_opts.attach(gen);
    gen->add_option("--out", gen_out, "video store path")->required();
    gen->add_option("--gt", gen_gt, "ground truth JSON path");
    gen->callback([&] { rc = run_gen_scene(gen_scene_opts, gen_store_opts, gen_out, gen_gt); });

    // ingest
    auto* ing = app.add_subcommand(
        "ingest", "ingest a PPM frame directory or a scene into a video store");
    SceneOpts ing_scene_opts;
    ing_scene_opts.kind.clear();
    StoreOpts ing_store_opts;
    std::string ing_dir, ing_out;
    ing->add_option("--frames-dir", ing_dir, "directory of .ppm frames");
    ing_scene_opts.attach(ing, false);
    ing_store_opts.attach(ing);
    ing->add_option("--out", ing_out, "video store path")->required();
    ing->callback([&] {
        if (ing_dir.empty() == ing_scene_opts.kind.empty())
            throw ConfigError("ingest needs exactly one of --frames-dir or --scene");
        rc = run_ingest(ing_dir, ing_scene_opts, ing_store_opts, ing_out);
    });

    // etl
    auto* etl = app.add_subcommand(
        "etl", "materialize a patch collection from a plan file's etl section");
    std::string etl_plan;
    etl->add_option("--plan", etl_plan, "plan file (JSON)")->required();
    etl->callback([&] { rc = run_etl(etl_plan); });

    // index
    auto* idx = app.add_subcommand("index", "build a persistent index on a collection");
    std::string idx_col, idx_name, idx_kind, idx_key;
    uint32_t idx_leaf = 32, idx_cap = 16;
    idx->add_option("--collection", idx_col, "collection path")->required();
    idx->add_option("--name", idx_name, "index name")->required();
    idx->add_option("--kind", idx_kind, "ordered, hash, rtree, balltree")->required();
    idx->add_option("--key", idx_key, "metadata key (ordered/hash)");
    idx->add_option("--leaf-size", idx_leaf, "ball-tree leaf size")
        ->capture_default_str();
    idx->add_option("--capacity", idx_cap, "r-tree node capacity")
        ->capture_default_str();
    idx->callback(
        [&] { rc = run_index(idx_col, idx_name, idx_kind, idx_key, idx_leaf, idx_cap); });

    // query
    auto* qry = app.add_subcommand("query", "execute a plan file");
    std::string qry_plan;
    qry->add_option("--plan", qry_plan, "plan file (JSON)")->required();
    qry->callback([&] { rc = run_query(qry_plan); });

    // bench
    auto* ben = app.add_subcommand("bench", "run the measurement harness");
    BenchFlags bench_flags;
    bench_flags.attach(ben);
    ben->callback([&] { rc = run_bench(bench_flags); });

    // stats
    auto* sts = app.add_subcommand("stats", "describe a store or collection");
    std::string sts_store, sts_col;
    sts->add_option("--store", sts_store, "video store path");
    sts->add_option("--collection", sts_col, "collection path");
    sts->callback([&] { rc = run_stats(sts_store, sts_col); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);  // help goes to stdout, errors to stderr
        return code == 0 ? 0 : 1;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return rc;
}

}  // namespace patchdb
