#include "patchdb/query.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

namespace patchdb {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Borrowed view of a tuple; lets the nested loop join evaluate predicates
// over a (left, right) pair without copying any patch.
using TupleView = std::vector<const Patch*>;

std::string format_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

std::string meta_to_string(const MetaValue& v) {
    switch (meta_tag(v)) {
        case Tag::Int: return std::to_string(std::get<int64_t>(v));
        case Tag::Float: return format_double(std::get<double>(v));
        case Tag::Str: return "'" + std::get<std::string>(v) + "'";
        case Tag::Box: {
            const auto& b = std::get<BoundingBox>(v);
            return "[" + std::to_string(b.x1) + ";" + std::to_string(b.y1) + ";" +
                   std::to_string(b.x2) + ";" + std::to_string(b.y2) + "]";
        }
        case Tag::StrList: {
            std::string out = "{";
            const auto& xs = std::get<std::vector<std::string>>(v);
            for (size_t i = 0; i < xs.size(); i++) {
                if (i) out += ";";
                out += xs[i];
            }
            return out + "}";
        }
    }
    return "?";
}

bool is_numeric(Tag t) { return t == Tag::Int || t == Tag::Float; }

double as_double(const MetaValue& v) {
    return meta_tag(v) == Tag::Int ? static_cast<double>(std::get<int64_t>(v))
                                   : std::get<double>(v);
}

const Patch& view_slot(const TupleView& t, size_t slot, const char* what) {
    if (slot >= t.size())
        throw ConfigError(std::string(what) + " references slot " +
                          std::to_string(slot) + " of a " +
                          std::to_string(t.size()) + "-wide tuple");
    return *t[slot];
}

std::optional<MetaValue> resolve_view(const Operand& o, const TupleView& t) {
    if (o.kind == Operand::Kind::literal) return o.literal;
    const Patch& p = view_slot(t, o.slot, "predicate");
    size_t dot = o.key.find('.');
    if (dot != std::string::npos) {
        std::string base = o.key.substr(0, dot);
        std::string comp = o.key.substr(dot + 1);
        const MetaValue* v = p.find_meta(base);
        if (!v) return std::nullopt;
        if (meta_tag(*v) != Tag::Box)
            throw TagMismatchError("key '" + base + "' holds " +
                                   std::string(tag_name(meta_tag(*v))) +
                                   ", component access needs a box");
        const BoundingBox& b = std::get<BoundingBox>(*v);
        uint32_t c;
        if (comp == "x1") c = b.x1;
        else if (comp == "y1") c = b.y1;
        else if (comp == "x2") c = b.x2;
        else if (comp == "y2") c = b.y2;
        else throw ConfigError("unknown box component '" + comp + "'");
        return MetaValue{static_cast<int64_t>(c)};
    }
    const MetaValue* v = p.find_meta(o.key);
    if (!v) return std::nullopt;
    return *v;
}

bool eval_cmp_values(CmpOp op, const MetaValue& l, const MetaValue& r, double offset) {
    Tag lt = meta_tag(l), rt = meta_tag(r);
    if (is_numeric(lt) && is_numeric(rt)) {
        double a = as_double(l), b = as_double(r) + offset;
        switch (op) {
            case CmpOp::eq: return a == b;
            case CmpOp::ne: return a != b;
            case CmpOp::lt: return a < b;
            case CmpOp::le: return a <= b;
            case CmpOp::gt: return a > b;
            case CmpOp::ge: return a >= b;
        }
    }
    if (offset != 0.0)
        throw ConfigError("numeric offset applied to non-numeric operands");
    if (lt != rt)
        throw TagMismatchError(std::string("cannot compare ") + tag_name(lt) +
                               " with " + tag_name(rt));
    if (lt == Tag::Str) {
        const auto& a = std::get<std::string>(l);
        const auto& b = std::get<std::string>(r);
        switch (op) {
            case CmpOp::eq: return a == b;
            case CmpOp::ne: return a != b;
            case CmpOp::lt: return a < b;
            case CmpOp::le: return a <= b;
            case CmpOp::gt: return a > b;
            case CmpOp::ge: return a >= b;
        }
    }
    if (op == CmpOp::eq) return l == r;
    if (op == CmpOp::ne) return !(l == r);
    throw TagMismatchError(std::string("ordering is undefined for ") + tag_name(lt) +
                           " values");
}

bool eval_view(const Predicate& p, const TupleView& t) {
    switch (p.kind) {
        case Predicate::Kind::cmp: {
            auto lv = resolve_view(p.lhs, t);
            if (!lv) return false;
            auto rv = resolve_view(p.rhs, t);
            if (!rv) return false;
            return eval_cmp_values(p.op, *lv, *rv, p.offset);
        }
        case Predicate::Kind::within: {
            const Patch& a = view_slot(t, p.slot_a, "distance predicate");
            const Patch& b = view_slot(t, p.slot_b, "distance predicate");
            if (a.data.size() != b.data.size())
                throw DimensionMismatchError(
                    "distance between " + std::to_string(a.data.size()) + " and " +
                    std::to_string(b.data.size()) + " dimensional patches");
            return euclidean(a.data.data(), b.data.data(), a.data.size()) <=
                   p.radius;
        }
        case Predicate::Kind::contains: {
            const Patch& a = view_slot(t, p.slot_a, "contains predicate");
            const MetaValue* v = a.find_meta(p.list_key);
            if (!v) return false;
            if (meta_tag(*v) != Tag::StrList)
                throw TagMismatchError("key '" + p.list_key + "' holds " +
                                       std::string(tag_name(meta_tag(*v))) +
                                       ", contains needs a string list");
            const auto& xs = std::get<std::vector<std::string>>(*v);
            return std::find(xs.begin(), xs.end(), p.needle) != xs.end();
        }
        case Predicate::Kind::p_and:
            for (const auto& c : p.children)
                if (!eval_view(c, t)) return false;
            return true;
        case Predicate::Kind::p_or:
            for (const auto& c : p.children)
                if (eval_view(c, t)) return true;
            return false;
        case Predicate::Kind::p_not:
            if (p.children.size() != 1)
                throw ConfigError("negation takes exactly one child predicate");
            return !eval_view(p.children[0], t);
    }
    throw Error("unreachable predicate kind");
}

TupleView view_of(const Tuple& t) {
    TupleView v;
    v.reserve(t.size());
    for (const Patch& p : t) v.push_back(&p);
    return v;
}

std::string operand_describe(const Operand& o) {
    if (o.kind == Operand::Kind::literal) return meta_to_string(o.literal);
    return "s" + std::to_string(o.slot) + "." + o.key;
}

}  // namespace

const char* cmp_op_name(CmpOp op) {
    switch (op) {
        case CmpOp::eq: return "==";
        case CmpOp::ne: return "!=";
        case CmpOp::lt: return "<";
        case CmpOp::le: return "<=";
        case CmpOp::gt: return ">";
        case CmpOp::ge: return ">=";
    }
    return "?";
}

CmpOp cmp_op_from_name(std::string_view name) {
    if (name == "==" || name == "eq") return CmpOp::eq;
    if (name == "!=" || name == "ne") return CmpOp::ne;
    if (name == "<" || name == "lt") return CmpOp::lt;
    if (name == "<=" || name == "le") return CmpOp::le;
    if (name == ">" || name == "gt") return CmpOp::gt;
    if (name == ">=" || name == "ge") return CmpOp::ge;
    throw ConfigError("unknown comparison operator '" + std::string(name) + "'");
}

Operand Operand::lit(MetaValue v) {
    Operand o;
    o.kind = Kind::literal;
    o.literal = std::move(v);
    return o;
}

Operand Operand::meta(size_t slot, std::string key) {
    Operand o;
    o.kind = Kind::slot_key;
    o.slot = slot;
    o.key = std::move(key);
    return o;
}

std::optional<MetaValue> resolve_operand(const Operand& o, const Tuple& t) {
    TupleView v = view_of(t);
    return resolve_view(o, v);
}

bool Predicate::eval(const Tuple& t) const {
    TupleView v = view_of(t);
    return eval_view(*this, v);
}

std::string Predicate::describe() const {
    switch (kind) {
        case Kind::cmp: {
            std::string s = operand_describe(lhs) + " " + cmp_op_name(op) + " " +
                            operand_describe(rhs);
            if (offset != 0.0) s += " + " + format_double(offset);
            return s;
        }
        case Kind::within:
            return "dist(s" + std::to_string(slot_a) + ";s" + std::to_string(slot_b) +
                   ") <= " + format_double(radius);
        case Kind::contains:
            return "contains(s" + std::to_string(slot_a) + "." + list_key + "; '" +
                   needle + "')";
        case Kind::p_and:
        case Kind::p_or: {
            std::string joiner = kind == Kind::p_and ? " AND " : " OR ";
            std::string s = "(";
            for (size_t i = 0; i < children.size(); i++) {
                if (i) s += joiner;
                s += children[i].describe();
            }
            return s + ")";
        }
        case Kind::p_not:
            return "NOT " + (children.empty() ? std::string("()")
                                              : children[0].describe());
    }
    return "?";
}

Predicate Predicate::cmp_of(CmpOp op, Operand lhs, Operand rhs, double offset) {
    Predicate p;
    p.kind = Kind::cmp;
    p.op = op;
    p.lhs = std::move(lhs);
    p.rhs = std::move(rhs);
    p.offset = offset;
    return p;
}

Predicate Predicate::meta_cmp(size_t slot, std::string key, CmpOp op, MetaValue v) {
    return cmp_of(op, Operand::meta(slot, std::move(key)), Operand::lit(std::move(v)));
}

Predicate Predicate::within_of(size_t slot_a, size_t slot_b, double radius) {
    Predicate p;
    p.kind = Kind::within;
    p.slot_a = slot_a;
    p.slot_b = slot_b;
    p.radius = radius;
    return p;
}

Predicate Predicate::contains_of(size_t slot, std::string list_key,
                                 std::string needle) {
    Predicate p;
    p.kind = Kind::contains;
    p.slot_a = slot;
    p.list_key = std::move(list_key);
    p.needle = std::move(needle);
    return p;
}

Predicate Predicate::all_of(std::vector<Predicate> parts) {
    Predicate p;
    p.kind = Kind::p_and;
    p.children = std::move(parts);
    return p;
}

Predicate Predicate::any_of(std::vector<Predicate> parts) {
    Predicate p;
    p.kind = Kind::p_or;
    p.children = std::move(parts);
    return p;
}

Predicate Predicate::negate(Predicate part) {
    Predicate p;
    p.kind = Kind::p_not;
    p.children.push_back(std::move(part));
    return p;
}

// ---------------------------------------------------------------------------
// Plan node factories

const char* backtrace_mode_name(BacktraceMode m) {
    return m == BacktraceMode::lineage_index ? "lineage_index" : "rescan";
}

BacktraceMode backtrace_mode_from_name(std::string_view name) {
    if (name == "lineage_index") return BacktraceMode::lineage_index;
    if (name == "rescan") return BacktraceMode::rescan;
    throw ConfigError("unknown backtrace mode '" + std::string(name) + "'");
}

PlanPtr PlanNode::memory(std::vector<Tuple> tuples) {
    auto n = std::make_unique<PlanNode>();
    n->kind = Kind::memory;
    n->inline_tuples = std::move(tuples);
    return n;
}

PlanPtr PlanNode::scan(std::string collection) {
    auto n = std::make_unique<PlanNode>();
    n->kind = Kind::scan;
    n->collection = std::move(collection);
    return n;
}

PlanPtr PlanNode::select(PlanPtr child, Predicate pred) {
    auto n = std::make_unique<PlanNode>();
    n->kind = Kind::select;
    n->children.push_back(std::move(child));
    n->pred = std::move(pred);
    return n;
}

PlanPtr PlanNode::nl_join(PlanPtr left, PlanPtr right, Predicate on) {
    auto n = std::make_unique<PlanNode>();
    n->kind = Kind::nl_join;
    n->children.push_back(std::move(left));
    n->children.push_back(std::move(right));
    n->pred = std::move(on);
    return n;
}

PlanPtr PlanNode::index_join(PlanPtr left, std::string right_collection,
                             std::string index_name, size_t probe_slot,
                             std::string probe_key, IndexProbeMode mode) {
    auto n = std::make_unique<PlanNode>();
    n->kind = Kind::index_join;
    n->children.push_back(std::move(left));
    n->collection = std::move(right_collection);
    n->index_name = std::move(index_name);
    n->probe_slot = probe_slot;
    n->probe_key = std::move(probe_key);
    n->probe_mode = mode;
    return n;
}

PlanPtr PlanNode::sim_join(PlanPtr left, PlanPtr right, double tau, BuildSide side) {
    auto n = std::make_unique<PlanNode>();
    n->kind = Kind::sim_join;
    n->children.push_back(std::move(left));
    n->children.push_back(std::move(right));
    n->tau = tau;
    n->build_side = side;
    return n;
}

PlanPtr PlanNode::dedup(PlanPtr child, double tau) {
    auto n = std::make_unique<PlanNode>();
    n->kind = Kind::dedup;
    n->children.push_back(std::move(child));
    n->tau = tau;
    return n;
}

PlanPtr PlanNode::count_by(PlanPtr child, std::string key) {
    auto n = std::make_unique<PlanNode>();
    n->kind = Kind::count_by;
    n->children.push_back(std::move(child));
    n->group_key = std::move(key);
    return n;
}

PlanPtr PlanNode::backtrace(PlanPtr child, BacktraceMode mode, size_t trace_slot) {
    auto n = std::make_unique<PlanNode>();
    n->kind = Kind::backtrace;
    n->children.push_back(std::move(child));
    n->backtrace_mode = mode;
    n->trace_slot = trace_slot;
    return n;
}

// ---------------------------------------------------------------------------
// Context

NamedIndex NamedIndex::from_blob(std::string_view blob) {
    NamedIndex out;
    out.kind = peek_index_kind(blob);
    switch (out.kind) {
        case IndexKind::ordered: out.ordered = OrderedIndex::deserialize(blob); break;
        case IndexKind::hash: out.hash = HashIndex::deserialize(blob); break;
        case IndexKind::rtree: out.rtree = RTreeIndex::deserialize(blob); break;
        case IndexKind::balltree:
            out.balltree = BallTreeIndex::deserialize(blob);
            break;
    }
    return out;
}

void ExecContext::load_index(const PatchCollection& col, const std::string& name) {
    auto blob = col.get_index(name);
    if (!blob)
        throw ConfigError("collection has no index named '" + name + "'");
    indexes[name] = NamedIndex::from_blob(*blob);
}

// ---------------------------------------------------------------------------
// Compilation

namespace {

// Applies the probe-side offset to an index key value.
MetaValue shifted_key(const MetaValue& v, double off) {
    if (off == 0.0) return v;
    Tag t = meta_tag(v);
    if (t == Tag::Int) {
        if (off != std::floor(off))
            throw ConfigError("fractional offset on an integer index key");
        return MetaValue{std::get<int64_t>(v) + static_cast<int64_t>(off)};
    }
    if (t == Tag::Float) return MetaValue{std::get<double>(v) + off};
    throw ConfigError("index key offsets need a numeric probe value");
}

void require_single(const Tuple& t, const char* op) {
    if (t.size() != 1)
        throw ValidationError(std::string(op) +
                              " operates on single-patch tuples, got width " +
                              std::to_string(t.size()));
}

size_t checked_dim(const std::vector<Patch>& items, const char* op) {
    size_t d = items.empty() ? 0 : items[0].data.size();
    if (!items.empty() && d == 0)
        throw ShapeError(std::string(op) + " needs non-empty patch data");
    for (const Patch& p : items)
        if (p.data.size() != d)
            throw MixedDimensionError(std::string(op) + " saw " + std::to_string(d) +
                                      " and " + std::to_string(p.data.size()) +
                                      " dimensional patches");
    return d;
}

struct SimJoinCore {
    BuildSide chosen = BuildSide::left;
    std::vector<std::pair<size_t, size_t>> pairs;  // (left pos, right pos)
    uint64_t probes = 0;
};

SimJoinCore run_sim_join(const std::vector<Patch>& left,
                         const std::vector<Patch>& right, double tau,
                         BuildSide side) {
    if (tau < 0.0) throw ConfigError("similarity join needs tau >= 0");
    SimJoinCore core;
    core.chosen = side != BuildSide::automatic
                      ? side
                      : (left.size() <= right.size() ? BuildSide::left
                                                     : BuildSide::right);
    size_t dl = checked_dim(left, "similarity join");
    size_t dr = checked_dim(right, "similarity join");
    if (!left.empty() && !right.empty() && dl != dr)
        throw DimensionMismatchError("similarity join over " + std::to_string(dl) +
                                     " and " + std::to_string(dr) +
                                     " dimensional sides");
    if (left.empty() || right.empty()) return core;

    const std::vector<Patch>& build =
        core.chosen == BuildSide::left ? left : right;
    const std::vector<Patch>& probe =
        core.chosen == BuildSide::left ? right : left;

    BallTreeIndex tree = build_balltree(build);
    std::unordered_map<uint64_t, size_t> build_pos;
    build_pos.reserve(build.size());
    for (size_t i = 0; i < build.size(); i++)
        if (!build_pos.emplace(build[i].patch_id, i).second)
            throw DuplicatePatchIdError("patch id " +
                                        std::to_string(build[i].patch_id) +
                                        " appears twice on the build side");

    for (size_t pi = 0; pi < probe.size(); pi++) {
        std::vector<uint64_t> ids = balltree_within(tree, probe[pi].data, tau);
        core.probes++;
        for (uint64_t id : ids) {
            size_t bi = build_pos.at(id);
            if (core.chosen == BuildSide::left)
                core.pairs.emplace_back(bi, pi);
            else
                core.pairs.emplace_back(pi, bi);
        }
    }
    return core;
}

struct DedupGroups {
    std::vector<size_t> reps;                  // indices into the input, kept order
    std::vector<std::vector<size_t>> members;  // per rep, arrival order
};

DedupGroups run_dedup(const std::vector<Patch>& items, double tau) {
    if (tau < 0.0) throw ConfigError("dedup needs tau >= 0");
    DedupGroups g;
    if (items.empty()) return g;
    size_t d = checked_dim(items, "dedup");
    DynamicNeighborSet nset(d);
    for (size_t i = 0; i < items.size(); i++) {
        if (!nset.any_within(items[i].data, tau)) {
            g.reps.push_back(i);
            g.members.push_back({i});
            nset.insert(items[i].data, i);
            continue;
        }
        // Attach to the nearest kept representative (earliest on ties).
        size_t best = 0;
        double best_dist = std::numeric_limits<double>::infinity();
        bool found = false;
        for (size_t r = 0; r < g.reps.size(); r++) {
            double dist = euclidean(items[i].data.data(),
                                    items[g.reps[r]].data.data(), d);
            if (dist <= tau && dist < best_dist) {
                best_dist = dist;
                best = r;
                found = true;
            }
        }
        if (!found)
            throw Error("dedup bookkeeping lost a kept neighbor");  // unreachable
        g.members[best].push_back(i);
    }
    return g;
}

Patch make_group_patch(const std::vector<Patch>& items, const std::vector<size_t>& members,
                       size_t rep, double tau) {
    std::set<std::string> labels;
    for (size_t m : members) {
        const MetaValue* v = items[m].find_meta("label");
        if (v && meta_tag(*v) == Tag::Str) labels.insert(std::get<std::string>(*v));
    }
    uint64_t digest = ParamsDigest("dedup_group").add("tau", tau).finish();
    Metadata extra{
        {"group_labels",
         MetaValue{std::vector<std::string>(labels.begin(), labels.end())}},
        {"group_size", MetaValue{static_cast<int64_t>(members.size())}}};
    return derive_patch(items[rep], "dedup_group", items[rep].data, items[rep].shape,
                        extra, digest);
}

class Compiler {
  public:
    Compiler(ExecContext& ctx, ExecStats& stats,
             std::vector<std::pair<Patch, Frame>>* traced)
        : ctx_(ctx), stats_(stats), traced_(traced) {}

    std::unique_ptr<Stream<Tuple>> compile(const PlanNode& n) {
        size_t op = stats_.ops.size();
        stats_.ops.push_back(OpStats{label_of(n), 0.0, 0, 0});
        auto inner = compile_inner(n, op);
        return metered(std::move(inner), op);
    }

  private:
    ExecContext& ctx_;
    ExecStats& stats_;
    std::vector<std::pair<Patch, Frame>>* traced_;

    const PatchCollection* find_collection(const std::string& name) {
        auto it = ctx_.collections.find(name);
        if (it == ctx_.collections.end())
            throw ConfigError("collection '" + name + "' is not registered");
        return it->second;
    }

    const NamedIndex* find_index(const std::string& name) {
        auto it = ctx_.indexes.find(name);
        if (it == ctx_.indexes.end())
            throw ConfigError("index '" + name + "' is not registered");
        return &it->second;
    }

    const VideoStore* find_video(const std::string& video_id) {
        auto it = ctx_.videos.find(video_id);
        if (it == ctx_.videos.end())
            throw ConfigError("video '" + video_id + "' is not registered");
        return it->second;
    }

    static std::string label_of(const PlanNode& n) {
        switch (n.kind) {
            case PlanNode::Kind::memory: return "Memory";
            case PlanNode::Kind::scan: return "Scan(" + n.collection + ")";
            case PlanNode::Kind::select:
                return "Select(" + n.pred.describe() + ")";
            case PlanNode::Kind::nl_join:
                return "NLJoin(" + n.pred.describe() + ")";
            case PlanNode::Kind::index_join:
                return "IndexJoin(" + n.index_name +
                       (n.probe_mode == IndexProbeMode::eq ? ";eq" : ";range") + ")";
            case PlanNode::Kind::sim_join: {
                std::string side =
                    n.build_side == BuildSide::automatic
                        ? "auto"
                        : (n.build_side == BuildSide::left ? "left" : "right");
                return "SimJoin(tau=" + format_double(n.tau) + ";build=" + side + ")";
            }
            case PlanNode::Kind::dedup:
                return "Dedup(tau=" + format_double(n.tau) + ")";
            case PlanNode::Kind::count_by: return "CountBy(" + n.group_key + ")";
            case PlanNode::Kind::backtrace:
                return std::string("Backtrace(") +
                       backtrace_mode_name(n.backtrace_mode) + ")";
        }
        return "?";
    }

    std::unique_ptr<Stream<Tuple>> metered(std::unique_ptr<Stream<Tuple>> inner,
                                           size_t op) {
        // ms is cumulative: time spent producing this operator's output,
        // children included.
        return make_stream<Tuple>(
            [inner = std::move(inner), es = &stats_, op]() mutable
            -> std::optional<Tuple> {
                auto t0 = Clock::now();
                auto r = inner->next();
                es->ops[op].ms += ms_since(t0);
                if (r) es->ops[op].tuples_out++;
                return r;
            });
    }

    std::unique_ptr<Stream<Tuple>> compile_inner(const PlanNode& n, size_t op) {
        switch (n.kind) {
            case PlanNode::Kind::memory:
                return std::make_unique<VectorStream<Tuple>>(n.inline_tuples);

            case PlanNode::Kind::scan: {
                const PatchCollection* col = find_collection(n.collection);
                auto ps = col->scan(stats_.io);
                return make_stream<Tuple>(
                    [s = std::move(ps)]() mutable -> std::optional<Tuple> {
                        auto p = s->next();
                        if (!p) return std::nullopt;
                        Tuple t;
                        t.push_back(std::move(*p));
                        return t;
                    });
            }

            case PlanNode::Kind::select: {
                auto child = compile(*n.children.at(0));
                return make_stream<Tuple>(
                    [c = std::move(child), pred = n.pred]() mutable
                    -> std::optional<Tuple> {
                        while (auto t = c->next())
                            if (pred.eval(*t)) return t;
                        return std::nullopt;
                    });
            }

            case PlanNode::Kind::nl_join: return compile_nl_join(n);
            case PlanNode::Kind::index_join: return compile_index_join(n, op);
            case PlanNode::Kind::sim_join: return compile_sim_join(n, op);
            case PlanNode::Kind::dedup: return compile_dedup(n);
            case PlanNode::Kind::count_by: return compile_count_by(n);
            case PlanNode::Kind::backtrace: return compile_backtrace(n, op);
        }
        throw Error("unreachable plan kind");
    }

    std::unique_ptr<Stream<Tuple>> compile_nl_join(const PlanNode& n) {
        struct State {
            std::unique_ptr<Stream<Tuple>> left, right_src;
            Predicate on;
            std::vector<Tuple> right;
            bool loaded = false;
            std::optional<Tuple> cur;
            size_t ri = 0;
            TupleView view;
        };
        auto st = std::make_shared<State>();
        st->left = compile(*n.children.at(0));
        st->right_src = compile(*n.children.at(1));
        st->on = n.pred;
        return make_stream<Tuple>([st]() -> std::optional<Tuple> {
            if (!st->loaded) {
                st->right = drain(*st->right_src);
                st->loaded = true;
            }
            for (;;) {
                if (!st->cur) {
                    st->cur = st->left->next();
                    if (!st->cur) return std::nullopt;
                    st->ri = 0;
                }
                while (st->ri < st->right.size()) {
                    const Tuple& r = st->right[st->ri++];
                    st->view.clear();
                    for (const Patch& p : *st->cur) st->view.push_back(&p);
                    for (const Patch& p : r) st->view.push_back(&p);
                    if (eval_view(st->on, st->view)) {
                        Tuple out = *st->cur;
                        out.insert(out.end(), r.begin(), r.end());
                        return out;
                    }
                }
                st->cur.reset();
            }
        });
    }

    std::unique_ptr<Stream<Tuple>> compile_index_join(const PlanNode& n, size_t op) {
        const NamedIndex* idx = find_index(n.index_name);
        if (idx->kind == IndexKind::rtree || idx->kind == IndexKind::balltree)
            throw ConfigError("index '" + n.index_name +
                              "' does not support key probes");
        if (n.probe_mode == IndexProbeMode::range && idx->kind != IndexKind::ordered)
            throw ConfigError("range probes need an ordered index");

        struct State {
            std::unique_ptr<Stream<Tuple>> left;
            const NamedIndex* idx;
            const PatchCollection* right;
            Operand probe;
            IndexProbeMode mode;
            double key_offset, range_lo, range_hi;
            std::optional<Tuple> cur;
            std::vector<uint64_t> pending;
            size_t pi = 0;
            ExecStats* es;
            size_t op;
        };
        auto st = std::make_shared<State>();
        st->left = compile(*n.children.at(0));
        st->idx = idx;
        st->right = find_collection(n.collection);
        st->probe = Operand::meta(n.probe_slot, n.probe_key);
        st->mode = n.probe_mode;
        st->key_offset = n.key_offset;
        st->range_lo = n.range_lo;
        st->range_hi = n.range_hi;
        st->es = &stats_;
        st->op = op;
        return make_stream<Tuple>([st]() -> std::optional<Tuple> {
            for (;;) {
                if (st->cur && st->pi < st->pending.size()) {
                    uint64_t id = st->pending[st->pi++];
                    auto rp = st->right->get(id, st->es->io);
                    if (!rp)
                        throw MissingKeyError(
                            "index lists patch id " + std::to_string(id) +
                            " that is absent from the probed collection");
                    Tuple out = *st->cur;
                    out.push_back(std::move(*rp));
                    return out;
                }
                st->cur = st->left->next();
                if (!st->cur) return std::nullopt;
                st->pi = 0;
                st->pending.clear();
                auto v = resolve_operand(st->probe, *st->cur);
                if (!v) continue;
                st->es->ops[st->op].index_probes++;
                if (st->mode == IndexProbeMode::eq) {
                    MetaValue key = shifted_key(*v, st->key_offset);
                    st->pending = st->idx->kind == IndexKind::ordered
                                      ? st->idx->ordered->lookup(key)
                                      : st->idx->hash->lookup(key);
                } else {
                    MetaValue lo = shifted_key(*v, st->range_lo);
                    MetaValue hi = shifted_key(*v, st->range_hi);
                    st->pending = st->idx->ordered->range(lo, hi);
                }
            }
        });
    }

    std::unique_ptr<Stream<Tuple>> compile_sim_join(const PlanNode& n, size_t op) {
        struct State {
            std::unique_ptr<Stream<Tuple>> left, right;
            double tau;
            BuildSide side;
            bool done = false;
            std::vector<Tuple> out;
            size_t pos = 0;
            ExecStats* es;
            size_t op;
        };
        auto st = std::make_shared<State>();
        st->left = compile(*n.children.at(0));
        st->right = compile(*n.children.at(1));
        st->tau = n.tau;
        st->side = n.build_side;
        st->es = &stats_;
        st->op = op;
        return make_stream<Tuple>([st]() -> std::optional<Tuple> {
            if (!st->done) {
                std::vector<Patch> L, R;
                while (auto t = st->left->next()) {
                    require_single(*t, "similarity join");
                    L.push_back(std::move((*t)[0]));
                }
                while (auto t = st->right->next()) {
                    require_single(*t, "similarity join");
                    R.push_back(std::move((*t)[0]));
                }
                SimJoinCore core = run_sim_join(L, R, st->tau, st->side);
                st->es->ops[st->op].index_probes += core.probes;
                st->out.reserve(core.pairs.size());
                for (auto [li, ri] : core.pairs)
                    st->out.push_back(Tuple{L[li], R[ri]});
                st->done = true;
            }
            if (st->pos >= st->out.size()) return std::nullopt;
            return std::move(st->out[st->pos++]);
        });
    }

    std::unique_ptr<Stream<Tuple>> compile_dedup(const PlanNode& n) {
        struct State {
            std::unique_ptr<Stream<Tuple>> child;
            double tau;
            bool done = false;
            std::vector<Tuple> out;
            size_t pos = 0;
        };
        auto st = std::make_shared<State>();
        st->child = compile(*n.children.at(0));
        st->tau = n.tau;
        return make_stream<Tuple>([st]() -> std::optional<Tuple> {
            if (!st->done) {
                std::vector<Patch> items;
                while (auto t = st->child->next()) {
                    require_single(*t, "dedup");
                    items.push_back(std::move((*t)[0]));
                }
                DedupGroups g = run_dedup(items, st->tau);
                st->out.reserve(g.reps.size());
                for (size_t r = 0; r < g.reps.size(); r++)
                    st->out.push_back(
                        Tuple{make_group_patch(items, g.members[r], g.reps[r],
                                               st->tau)});
                st->done = true;
            }
            if (st->pos >= st->out.size()) return std::nullopt;
            return std::move(st->out[st->pos++]);
        });
    }

    std::unique_ptr<Stream<Tuple>> compile_count_by(const PlanNode& n) {
        struct State {
            std::unique_ptr<Stream<Tuple>> child;
            std::string key;
            bool done = false;
            std::vector<Tuple> out;
            size_t pos = 0;
        };
        auto st = std::make_shared<State>();
        st->child = compile(*n.children.at(0));
        st->key = n.group_key;
        return make_stream<Tuple>([st]() -> std::optional<Tuple> {
            if (!st->done) {
                struct Group {
                    Patch first;
                    int64_t n = 0;
                };
                std::map<MetaValue, size_t> group_of;
                std::vector<Group> groups;
                while (auto t = st->child->next()) {
                    require_single(*t, "count_by");
                    Patch& p = (*t)[0];
                    const MetaValue* v = p.find_meta(st->key);
                    if (!v) continue;
                    auto [it, fresh] = group_of.try_emplace(*v, groups.size());
                    if (fresh)
                        groups.push_back(Group{std::move(p), 1});
                    else
                        groups[it->second].n++;
                }
                uint64_t digest =
                    ParamsDigest("count_by").add("key", st->key).finish();
                for (Group& g : groups) {
                    Patch counted = derive_patch(
                        g.first, "count_by", g.first.data, g.first.shape,
                        {{"count", MetaValue{g.n}}}, digest);
                    st->out.push_back(Tuple{std::move(counted)});
                }
                st->done = true;
            }
            if (st->pos >= st->out.size()) return std::nullopt;
            return std::move(st->out[st->pos++]);
        });
    }

    std::unique_ptr<Stream<Tuple>> compile_backtrace(const PlanNode& n, size_t op) {
        if (n.backtrace_mode == BacktraceMode::lineage_index) {
            struct State {
                std::unique_ptr<Stream<Tuple>> child;
                size_t slot;
                Compiler* comp;
                size_t op;
            };
            auto st = std::make_shared<State>();
            st->child = compile(*n.children.at(0));
            st->slot = n.trace_slot;
            st->comp = this;
            st->op = op;
            return make_stream<Tuple>([st]() -> std::optional<Tuple> {
                auto t = st->child->next();
                if (!t) return std::nullopt;
                if (st->slot >= t->size())
                    throw ConfigError("backtrace slot " + std::to_string(st->slot) +
                                      " exceeds tuple width " +
                                      std::to_string(t->size()));
                const Patch& p = (*t)[st->slot];
                FrameId fid = base_frames_of(p).back();
                const VideoStore* vs = st->comp->find_video(fid.video_id);
                st->comp->stats_.ops[st->op].index_probes++;
                Frame f = vs->random_access(fid.frame_no, st->comp->stats_.io);
                st->comp->traced_->emplace_back(p, std::move(f));
                return t;
            });
        }

        struct State {
            std::unique_ptr<Stream<Tuple>> child;
            size_t slot;
            Compiler* comp;
            bool done = false;
            std::vector<Tuple> out;
            size_t pos = 0;
        };
        auto st = std::make_shared<State>();
        st->child = compile(*n.children.at(0));
        st->slot = n.trace_slot;
        st->comp = this;
        return make_stream<Tuple>([st]() -> std::optional<Tuple> {
            if (!st->done) {
                std::vector<Tuple> tuples = drain(*st->child);
                std::vector<FrameId> fids;
                fids.reserve(tuples.size());
                std::map<std::string, std::set<uint64_t>> needed;
                for (const Tuple& t : tuples) {
                    if (st->slot >= t.size())
                        throw ConfigError(
                            "backtrace slot " + std::to_string(st->slot) +
                            " exceeds tuple width " + std::to_string(t.size()));
                    FrameId fid = base_frames_of(t[st->slot]).back();
                    needed[fid.video_id].insert(fid.frame_no);
                    fids.push_back(std::move(fid));
                }
                std::map<std::pair<std::string, uint64_t>, Frame> frames;
                for (const auto& [vid, frame_nos] : needed) {
                    const VideoStore* vs = st->comp->find_video(vid);
                    auto scan = vs->scan(std::nullopt, st->comp->stats_.io);
                    while (auto f = scan->next())
                        if (frame_nos.count(f->frame_no))
                            frames.emplace(std::make_pair(vid, f->frame_no),
                                           std::move(*f));
                }
                for (size_t i = 0; i < tuples.size(); i++) {
                    auto it = frames.find(
                        std::make_pair(fids[i].video_id, fids[i].frame_no));
                    if (it == frames.end())
                        throw MissingFrameError(
                            "frame " + std::to_string(fids[i].frame_no) +
                            " of video '" + fids[i].video_id +
                            "' vanished during rescan");
                    st->comp->traced_->emplace_back(tuples[i][st->slot],
                                                    it->second);
                }
                st->out = std::move(tuples);
                st->done = true;
            }
            if (st->pos >= st->out.size()) return std::nullopt;
            return std::move(st->out[st->pos++]);
        });
    }
};

}  // namespace

// ---------------------------------------------------------------------------
// Execution entry points

ExecResult execute(const PlanNode& plan, ExecContext& ctx) {
    ExecResult result;
    Compiler compiler(ctx, result.stats, &result.traced);
    auto root = compiler.compile(plan);
    auto t0 = Clock::now();
    result.tuples = drain(*root);
    result.stats.total_ms = ms_since(t0);
    result.stats.result_tuples = result.tuples.size();
    return result;
}

std::string ExecStats::to_text() const {
    std::ostringstream os;
    os << ops.size() << " operators; " << result_tuples << " tuples; "
       << format_double(total_ms) << " ms total\n";
    for (const OpStats& op : ops) {
        os << "  " << op.label << ": tuples_out=" << op.tuples_out
           << " ms=" << format_double(op.ms);
        if (op.index_probes) os << " probes=" << op.index_probes;
        os << "\n";
    }
    os << "io: records_read=" << io.records_read << " bytes_read=" << io.bytes_read
       << " frames_decoded=" << io.frames_decoded << "\n";
    return os.str();
}

std::string ExecStats::to_csv() const {
    std::ostringstream os;
    os << "op,ms,tuples_out,index_probes\n";
    uint64_t probes = 0;
    for (const OpStats& op : ops) {
        os << op.label << "," << format_double(op.ms) << "," << op.tuples_out << ","
           << op.index_probes << "\n";
        probes += op.index_probes;
    }
    os << "total," << format_double(total_ms) << "," << result_tuples << ","
       << probes << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Standalone operators

std::unique_ptr<Stream<Patch>> dedup_stream(std::unique_ptr<Stream<Patch>> in,
                                            double tau) {
    if (tau < 0.0) throw ConfigError("dedup needs tau >= 0");
    struct State {
        std::unique_ptr<Stream<Patch>> in;
        double tau;
        size_t dim = 0;
        std::optional<DynamicNeighborSet> nset;
    };
    auto st = std::make_shared<State>();
    st->in = std::move(in);
    st->tau = tau;
    return make_stream<Patch>([st]() -> std::optional<Patch> {
        while (auto p = st->in->next()) {
            if (p->data.empty()) throw ShapeError("dedup needs non-empty patch data");
            if (!st->nset) {
                st->dim = p->data.size();
                st->nset.emplace(st->dim);
            } else if (p->data.size() != st->dim) {
                throw MixedDimensionError(
                    "dedup saw " + std::to_string(st->dim) + " and " +
                    std::to_string(p->data.size()) + " dimensional patches");
            }
            if (st->nset->any_within(p->data, st->tau)) continue;
            st->nset->insert(p->data, p->patch_id);
            return std::move(*p);
        }
        return std::nullopt;
    });
}

std::vector<std::pair<Patch, Patch>> sim_join_pairs(const std::vector<Patch>& left,
                                                    const std::vector<Patch>& right,
                                                    double tau, BuildSide side,
                                                    uint64_t* index_probes) {
    SimJoinCore core = run_sim_join(left, right, tau, side);
    if (index_probes) *index_probes = core.probes;
    std::vector<std::pair<Patch, Patch>> out;
    out.reserve(core.pairs.size());
    for (auto [li, ri] : core.pairs) out.emplace_back(left[li], right[ri]);
    return out;
}

}  // namespace patchdb
