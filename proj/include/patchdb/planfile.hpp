#pragma once

// Declarative JSON plan files for the CLI.  A plan file names input stores
// and collections, an optional ETL pipeline, index builds, a query plan
// tree, and output destinations.  Parsing is strict: an unknown key anywhere
// is an error, not a warning.

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "patchdb/bench.hpp"
#include "patchdb/etl.hpp"
#include "patchdb/index.hpp"
#include "patchdb/query.hpp"

namespace patchdb {

// "etl": scan a store, run the generator and transformer chain, materialize
// the result.  `store` is an alias from the stores map, or a bare path.
struct EtlSection {
    std::string name = "etl";  // alias the plan tree can scan
    std::string store;
    GeneratorSpec generator;
    std::vector<TransformerSpec> transformers;
    std::string output;  // collection path to materialize
};

// "indexes": secondary indexes persisted into a collection.  An empty
// collection field targets the ETL section's output.
struct IndexBuildSpec {
    std::string collection;
    std::string name;
    IndexKind kind = IndexKind::ordered;
    std::string key;          // ordered / hash
    uint32_t leaf_size = 32;  // balltree
    uint32_t capacity = 16;   // rtree
};

// "load_indexes": named indexes the executor may probe.
struct LoadIndexSpec {
    std::string collection;
    std::string name;
};

struct OutputSection {
    std::string results;    // result tuples; empty means stdout
    std::string stats_csv;  // per-operator stats; empty means skip
};

struct PlanFile {
    std::map<std::string, std::string> stores;       // alias -> path
    std::map<std::string, std::string> collections;  // alias -> path
    std::optional<EtlSection> etl;
    std::vector<IndexBuildSpec> index_builds;
    std::vector<LoadIndexSpec> load_indexes;
    PlanPtr plan;  // null when the file declares no query
    OutputSection output;

    static PlanFile parse(std::string_view text);
    static PlanFile load(const std::string& path);
};

// The schema-checkable stage list implied by a plan file: the ETL chain
// followed by one label-filter stage per label literal the plan tree
// mentions (selects on "label" and containment tests on "group_labels").
std::vector<PipelineStage> plan_stages(const PlanFile& pf);

// Bench config files reuse BenchConfig defaults; every key is optional,
// unknown keys are errors.
BenchConfig parse_bench_config(std::string_view text);
BenchConfig load_bench_config(const std::string& path);

}  // namespace patchdb
