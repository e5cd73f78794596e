#pragma once

// Volcano-style query execution over materialized patch collections.
//
// A plan is a tree of PlanNode values.  execute() compiles the tree into a
// pull stream of tuples (a Tuple is a vector of patches, one slot per joined
// input), drains the root, and reports per-operator timing plus IO and probe
// counters alongside the results.

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "patchdb/core.hpp"
#include "patchdb/etl.hpp"
#include "patchdb/index.hpp"
#include "patchdb/storage.hpp"

namespace patchdb {

// ---------------------------------------------------------------------------
// Predicates

enum class CmpOp : uint8_t { eq, ne, lt, le, gt, ge };

const char* cmp_op_name(CmpOp op);
CmpOp cmp_op_from_name(std::string_view name);

// A comparison operand: either a literal value or a metadata key looked up on
// one tuple slot.  Keys of the form "bbox.x1" select a coordinate of a Box
// value as an integer.
struct Operand {
    enum class Kind : uint8_t { literal, slot_key };
    Kind kind = Kind::literal;
    MetaValue literal{int64_t{0}};
    size_t slot = 0;
    std::string key;

    static Operand lit(MetaValue v);
    static Operand meta(size_t slot, std::string key);
};

// Resolves an operand against a tuple; nullopt when the key is absent.
std::optional<MetaValue> resolve_operand(const Operand& o, const Tuple& t);

struct Predicate {
    enum class Kind : uint8_t { cmp, within, contains, p_and, p_or, p_not };

    Kind kind = Kind::cmp;

    // cmp: lhs <op> (rhs + offset).  Comparing a missing key is false; mixing
    // numeric tags is fine, any other tag mix throws TagMismatchError.
    CmpOp op = CmpOp::eq;
    Operand lhs, rhs;
    double offset = 0.0;

    // within: euclidean distance between the data of two slots is <= radius.
    size_t slot_a = 0, slot_b = 1;
    double radius = 0.0;

    // contains: a string-list key on slot_a holds `needle`.
    std::string list_key, needle;

    std::vector<Predicate> children;  // p_and / p_or / p_not

    bool eval(const Tuple& t) const;
    std::string describe() const;

    static Predicate cmp_of(CmpOp op, Operand lhs, Operand rhs, double offset = 0.0);
    // slot.key <op> literal
    static Predicate meta_cmp(size_t slot, std::string key, CmpOp op, MetaValue v);
    static Predicate within_of(size_t slot_a, size_t slot_b, double radius);
    static Predicate contains_of(size_t slot, std::string list_key, std::string needle);
    static Predicate all_of(std::vector<Predicate> parts);
    static Predicate any_of(std::vector<Predicate> parts);
    static Predicate negate(Predicate part);
};

// ---------------------------------------------------------------------------
// Plans

enum class BuildSide : uint8_t { automatic, left, right };
enum class BacktraceMode : uint8_t { lineage_index, rescan };
enum class IndexProbeMode : uint8_t { eq, range };

const char* backtrace_mode_name(BacktraceMode m);
BacktraceMode backtrace_mode_from_name(std::string_view name);

struct PlanNode;
using PlanPtr = std::unique_ptr<PlanNode>;

struct PlanNode {
    enum class Kind : uint8_t {
        memory,      // inline tuples, mostly for tests
        scan,        // full collection scan
        select,      // filter by predicate
        nl_join,     // nested loop join with an arbitrary predicate
        index_join,  // probe a named index on another collection
        sim_join,    // similarity join on patch data via a ball tree
        dedup,       // blocking near-duplicate grouping on patch data
        count_by,    // blocking group count on a metadata key
        backtrace,   // map result patches back to their source frames
    };

    Kind kind = Kind::scan;
    std::vector<PlanPtr> children;

    std::vector<Tuple> inline_tuples;  // memory
    std::string collection;            // scan; index_join right side
    Predicate pred;                    // select, nl_join

    // index_join
    std::string index_name;
    size_t probe_slot = 0;
    std::string probe_key;
    IndexProbeMode probe_mode = IndexProbeMode::eq;
    double key_offset = 0.0;             // eq: added to numeric probe values
    double range_lo = 0.0, range_hi = 0.0;  // range: probe+lo <= key < probe+hi

    // sim_join / dedup
    double tau = 0.1;
    BuildSide build_side = BuildSide::automatic;

    std::string group_key;  // count_by

    // backtrace
    BacktraceMode backtrace_mode = BacktraceMode::lineage_index;
    size_t trace_slot = 0;

    static PlanPtr memory(std::vector<Tuple> tuples);
    static PlanPtr scan(std::string collection);
    static PlanPtr select(PlanPtr child, Predicate pred);
    static PlanPtr nl_join(PlanPtr left, PlanPtr right, Predicate on);
    static PlanPtr index_join(PlanPtr left, std::string right_collection,
                              std::string index_name, size_t probe_slot,
                              std::string probe_key,
                              IndexProbeMode mode = IndexProbeMode::eq);
    static PlanPtr sim_join(PlanPtr left, PlanPtr right, double tau,
                            BuildSide side = BuildSide::automatic);
    static PlanPtr dedup(PlanPtr child, double tau);
    static PlanPtr count_by(PlanPtr child, std::string key);
    static PlanPtr backtrace(PlanPtr child, BacktraceMode mode,
                             size_t trace_slot = 0);
};

// ---------------------------------------------------------------------------
// Execution

// Deserialized named index, as stored in a collection's index slot.
struct NamedIndex {
    IndexKind kind = IndexKind::ordered;
    std::optional<OrderedIndex> ordered;
    std::optional<HashIndex> hash;
    std::optional<RTreeIndex> rtree;
    std::optional<BallTreeIndex> balltree;

    static NamedIndex from_blob(std::string_view blob);
};

struct ExecContext {
    std::map<std::string, const PatchCollection*> collections;
    std::map<std::string, const VideoStore*> videos;  // keyed by video id
    std::map<std::string, NamedIndex> indexes;

    // Loads a serialized index from a collection and registers it under
    // `name` (ConfigError if the collection has no such index).
    void load_index(const PatchCollection& col, const std::string& name);
};

struct OpStats {
    std::string label;
    double ms = 0.0;
    uint64_t tuples_out = 0;
    uint64_t index_probes = 0;
};

struct ExecStats {
    std::vector<OpStats> ops;  // pre-order over the plan
    IoCounters io;
    uint64_t result_tuples = 0;
    double total_ms = 0.0;

    std::string to_text() const;
    std::string to_csv() const;
};

struct ExecResult {
    std::vector<Tuple> tuples;
    // Filled by backtrace operators, in emission order.
    std::vector<std::pair<Patch, Frame>> traced;
    ExecStats stats;
};

ExecResult execute(const PlanNode& plan, ExecContext& ctx);

// ---------------------------------------------------------------------------
// Standalone operators

// Streaming near-duplicate filter: keeps a patch iff its data is farther than
// tau from every previously kept patch.
std::unique_ptr<Stream<Patch>> dedup_stream(std::unique_ptr<Stream<Patch>> in,
                                            double tau);

// Similarity join over in-memory patch vectors; emits (left, right) pairs in
// (probe order, ascending matched patch id), where the probe side is the one
// opposite the (possibly automatic) build side.
std::vector<std::pair<Patch, Patch>> sim_join_pairs(
    const std::vector<Patch>& left, const std::vector<Patch>& right, double tau,
    BuildSide side = BuildSide::automatic, uint64_t* index_probes = nullptr);

}  // namespace patchdb
