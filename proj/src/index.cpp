#include "patchdb/index.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

namespace patchdb {

namespace {

constexpr char kIndexMagic[] = "PIDX";

void write_index_header(ByteWriter& w, IndexKind k) {
    w.raw(kIndexMagic, 4);
    w.u8(static_cast<uint8_t>(k));
}

IndexKind read_index_header(ByteReader& r) {
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kIndexMagic, 4) != 0)
        throw IoError("not an index blob (bad magic)");
    uint8_t k = r.u8();
    if (k > 3) throw IoError("unknown index kind byte");
    return static_cast<IndexKind>(k);
}

void expect_kind(ByteReader& r, IndexKind want) {
    IndexKind got = read_index_header(r);
    if (got != want)
        throw IoError(std::string("index blob holds a ") + index_kind_name(got) +
                      " index, expected " + index_kind_name(want));
}

const MetaValue& index_key_of(const Patch& p, const std::string& key) {
    const MetaValue* v = p.find_meta(key);
    if (!v)
        throw MissingKeyError("patch " + std::to_string(p.patch_id) +
                              " lacks index key '" + key + "'");
    return *v;
}

}  // namespace

const char* index_kind_name(IndexKind k) {
    switch (k) {
        case IndexKind::ordered: return "ordered";
        case IndexKind::hash: return "hash";
        case IndexKind::rtree: return "rtree";
        case IndexKind::balltree: return "balltree";
    }
    return "?";
}

IndexKind index_kind_from_name(std::string_view name) {
    if (name == "ordered") return IndexKind::ordered;
    if (name == "hash") return IndexKind::hash;
    if (name == "rtree") return IndexKind::rtree;
    if (name == "balltree") return IndexKind::balltree;
    throw ConfigError("unknown index kind '" + std::string(name) + "'");
}

IndexKind peek_index_kind(std::string_view blob) {
    ByteReader r(blob);
    return read_index_header(r);
}

double euclidean(const float* a, const float* b, size_t d) {
    double acc = 0.0;
    for (size_t i = 0; i < d; i++) {
        double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += diff * diff;
    }
    return std::sqrt(acc);
}

// ---------------------------------------------------------------------------
// OrderedIndex

OrderedIndex build_ordered(const std::vector<Patch>& patches, const std::string& key) {
    OrderedIndex idx;
    idx.key_ = key;
    std::vector<std::pair<int64_t, uint64_t>> ints;
    std::vector<std::pair<double, uint64_t>> floats;
    bool tag_set = false;
    for (const Patch& p : patches) {
        const MetaValue& v = index_key_of(p, key);
        Tag t = meta_tag(v);
        if (t != Tag::Int && t != Tag::Float)
            throw TagMismatchError("ordered index key '" + key +
                                   "' must be int or float tagged, patch " +
                                   std::to_string(p.patch_id) + " has " + tag_name(t));
        if (!tag_set) {
            idx.tag_ = t;
            tag_set = true;
        } else if (t != idx.tag_) {
            throw TagMismatchError("mixed tags under index key '" + key + "'");
        }
        if (t == Tag::Int) {
            ints.emplace_back(std::get<int64_t>(v), p.patch_id);
        } else {
            double f = std::get<double>(v);
            if (std::isnan(f))
                throw ConfigError("cannot index NaN key on patch " +
                                  std::to_string(p.patch_id));
            floats.emplace_back(f, p.patch_id);
        }
    }
    idx.entry_count_ = patches.size();
    // one flat sort and a grouping pass: keys ascending, ids ascending
    // within each key (the pair order gives both)
    auto grouped = [](auto& pairs, auto& out) {
        std::sort(pairs.begin(), pairs.end());
        for (const auto& [k, id] : pairs) {
            if (out.empty() || out.back().first != k)
                out.emplace_back(k, std::vector<uint64_t>{});
            out.back().second.push_back(id);
        }
    };
    grouped(ints, idx.ints_);
    grouped(floats, idx.floats_);
    return idx;
}

namespace {

template <typename K, typename Groups>
void collect_range(const Groups& groups, const std::optional<K>& lo,
                   const std::optional<K>& hi, std::vector<uint64_t>& out) {
    auto begin = groups.begin();
    auto end = groups.end();
    if (lo)
        begin = std::lower_bound(groups.begin(), groups.end(), *lo,
                                 [](const auto& g, const K& k) { return g.first < k; });
    if (hi)
        end = std::lower_bound(groups.begin(), groups.end(), *hi,
                               [](const auto& g, const K& k) { return g.first < k; });
    for (auto it = begin; it != end; ++it)
        out.insert(out.end(), it->second.begin(), it->second.end());
}

}  // namespace

std::vector<uint64_t> OrderedIndex::lookup(const MetaValue& key) const {
    if (entry_count_ == 0) return {};
    if (meta_tag(key) != tag_)
        throw TagMismatchError("index '" + key_ + "' is " + tag_name(tag_) + " keyed");
    std::vector<uint64_t> out;
    if (tag_ == Tag::Int) {
        int64_t k = std::get<int64_t>(key);
        auto it = std::lower_bound(ints_.begin(), ints_.end(), k,
                                   [](const auto& g, int64_t v) { return g.first < v; });
        if (it != ints_.end() && it->first == k) out = it->second;
    } else {
        double k = std::get<double>(key);
        auto it = std::lower_bound(floats_.begin(), floats_.end(), k,
                                   [](const auto& g, double v) { return g.first < v; });
        if (it != floats_.end() && it->first == k) out = it->second;
    }
    return out;
}

std::vector<uint64_t> OrderedIndex::range(const std::optional<MetaValue>& lo,
                                          const std::optional<MetaValue>& hi) const {
    if (entry_count_ == 0) return {};
    for (const auto& bound : {lo, hi})
        if (bound && meta_tag(*bound) != tag_)
            throw TagMismatchError("range bound tag does not match index '" + key_ +
                                   "' (" + tag_name(tag_) + " keyed)");
    std::vector<uint64_t> out;
    if (tag_ == Tag::Int) {
        std::optional<int64_t> l, h;
        if (lo) l = std::get<int64_t>(*lo);
        if (hi) h = std::get<int64_t>(*hi);
        collect_range<int64_t>(ints_, l, h, out);
    } else {
        std::optional<double> l, h;
        if (lo) l = std::get<double>(*lo);
        if (hi) h = std::get<double>(*hi);
        collect_range<double>(floats_, l, h, out);
    }
    return out;
}

std::string OrderedIndex::serialize() const {
    ByteWriter w;
    write_index_header(w, IndexKind::ordered);
    w.str8(key_);
    w.u8(static_cast<uint8_t>(tag_));
    w.u64(entry_count_);
    if (tag_ == Tag::Int) {
        w.u64(ints_.size());
        for (const auto& [k, ids] : ints_) {
            w.i64(k);
            w.u32(static_cast<uint32_t>(ids.size()));
            for (uint64_t id : ids) w.u64(id);
        }
    } else {
        w.u64(floats_.size());
        for (const auto& [k, ids] : floats_) {
            w.f64(k);
            w.u32(static_cast<uint32_t>(ids.size()));
            for (uint64_t id : ids) w.u64(id);
        }
    }
    return w.take();
}

OrderedIndex OrderedIndex::deserialize(std::string_view blob) {
    ByteReader r(blob);
    expect_kind(r, IndexKind::ordered);
    OrderedIndex idx;
    idx.key_ = r.str8();
    idx.tag_ = static_cast<Tag>(r.u8());
    idx.entry_count_ = r.u64();
    uint64_t groups = r.u64();
    for (uint64_t g = 0; g < groups; g++) {
        if (idx.tag_ == Tag::Int) {
            int64_t k = r.i64();
            uint32_t n = r.u32();
            std::vector<uint64_t> ids(n);
            for (auto& id : ids) id = r.u64();
            idx.ints_.emplace_back(k, std::move(ids));
        } else {
            double k = r.f64();
            uint32_t n = r.u32();
            std::vector<uint64_t> ids(n);
            for (auto& id : ids) id = r.u64();
            idx.floats_.emplace_back(k, std::move(ids));
        }
    }
    return idx;
}

// ---------------------------------------------------------------------------
// HashIndex

HashIndex build_hash(const std::vector<Patch>& patches, const std::string& key) {
    HashIndex idx;
    idx.key_ = key;
    bool tag_set = false;
    for (const Patch& p : patches) {
        const MetaValue& v = index_key_of(p, key);
        Tag t = meta_tag(v);
        if (t != Tag::Str && t != Tag::Int)
            throw TagMismatchError("hash index key '" + key +
                                   "' must be string or int tagged, patch " +
                                   std::to_string(p.patch_id) + " has " + tag_name(t));
        if (!tag_set) {
            idx.tag_ = t;
            tag_set = true;
        } else if (t != idx.tag_) {
            throw TagMismatchError("mixed tags under index key '" + key + "'");
        }
        if (t == Tag::Str)
            idx.strs_[std::get<std::string>(v)].push_back(p.patch_id);
        else
            idx.ints_[std::get<int64_t>(v)].push_back(p.patch_id);
    }
    idx.entry_count_ = patches.size();
    for (auto& [k, ids] : idx.strs_) std::sort(ids.begin(), ids.end());
    for (auto& [k, ids] : idx.ints_) std::sort(ids.begin(), ids.end());
    return idx;
}

std::vector<uint64_t> HashIndex::lookup(const MetaValue& key) const {
    if (entry_count_ == 0) return {};
    if (meta_tag(key) != tag_)
        throw TagMismatchError("index '" + key_ + "' is " + tag_name(tag_) + " keyed");
    if (tag_ == Tag::Str) {
        auto it = strs_.find(std::get<std::string>(key));
        return it == strs_.end() ? std::vector<uint64_t>{} : it->second;
    }
    auto it = ints_.find(std::get<int64_t>(key));
    return it == ints_.end() ? std::vector<uint64_t>{} : it->second;
}

std::string HashIndex::serialize() const {
    ByteWriter w;
    write_index_header(w, IndexKind::hash);
    w.str8(key_);
    w.u8(static_cast<uint8_t>(tag_));
    w.u64(entry_count_);
    if (tag_ == Tag::Str) {
        std::vector<std::string> keys;
        keys.reserve(strs_.size());
        for (const auto& [k, ids] : strs_) keys.push_back(k);
        std::sort(keys.begin(), keys.end());
        w.u64(keys.size());
        for (const auto& k : keys) {
            const auto& ids = strs_.at(k);
            w.str16(k);
            w.u32(static_cast<uint32_t>(ids.size()));
            for (uint64_t id : ids) w.u64(id);
        }
    } else {
        std::vector<int64_t> keys;
        keys.reserve(ints_.size());
        for (const auto& [k, ids] : ints_) keys.push_back(k);
        std::sort(keys.begin(), keys.end());
        w.u64(keys.size());
        for (int64_t k : keys) {
            const auto& ids = ints_.at(k);
            w.i64(k);
            w.u32(static_cast<uint32_t>(ids.size()));
            for (uint64_t id : ids) w.u64(id);
        }
    }
    return w.take();
}

HashIndex HashIndex::deserialize(std::string_view blob) {
    ByteReader r(blob);
    expect_kind(r, IndexKind::hash);
    HashIndex idx;
    idx.key_ = r.str8();
    idx.tag_ = static_cast<Tag>(r.u8());
    idx.entry_count_ = r.u64();
    uint64_t groups = r.u64();
    for (uint64_t g = 0; g < groups; g++) {
        if (idx.tag_ == Tag::Str) {
            std::string k = r.str16();
            uint32_t n = r.u32();
            std::vector<uint64_t> ids(n);
            for (auto& id : ids) id = r.u64();
            idx.strs_.emplace(std::move(k), std::move(ids));
        } else {
            int64_t k = r.i64();
            uint32_t n = r.u32();
            std::vector<uint64_t> ids(n);
            for (auto& id : ids) id = r.u64();
            idx.ints_.emplace(k, std::move(ids));
        }
    }
    return idx;
}

// ---------------------------------------------------------------------------
// R-tree

namespace {

double box_area(const BoundingBox& b) {
    return static_cast<double>(b.x2 - b.x1) * static_cast<double>(b.y2 - b.y1);
}

BoundingBox box_union(const BoundingBox& a, const BoundingBox& b) {
    return {std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2),
            std::max(a.y2, b.y2)};
}

double enlargement(const BoundingBox& mbr, const BoundingBox& b) {
    return box_area(box_union(mbr, b)) - box_area(mbr);
}

// Guttman's quadratic split over an item list with a box accessor.
template <typename Item, typename GetBox>
void quadratic_split(std::vector<Item> items, GetBox box_of, size_t min_fill,
                     std::vector<Item>& g1, std::vector<Item>& g2,
                     BoundingBox& m1, BoundingBox& m2) {
    const size_t n = items.size();
    size_t s1 = 0, s2 = 1;
    double worst = -1.0;
    for (size_t i = 0; i < n; i++) {
        for (size_t j = i + 1; j < n; j++) {
            double dead = box_area(box_union(box_of(items[i]), box_of(items[j]))) -
                          box_area(box_of(items[i])) - box_area(box_of(items[j]));
            if (dead > worst) {
                worst = dead;
                s1 = i;
                s2 = j;
            }
        }
    }

    std::vector<bool> used(n, false);
    used[s1] = used[s2] = true;
    m1 = box_of(items[s1]);
    m2 = box_of(items[s2]);
    g1.push_back(items[s1]);
    g2.push_back(items[s2]);
    size_t remaining = n - 2;

    while (remaining > 0) {
        // A group that must absorb everything left to reach minimum fill
        // takes it without further scoring.
        if (g1.size() + remaining <= min_fill) {
            for (size_t i = 0; i < n; i++)
                if (!used[i]) {
                    m1 = box_union(m1, box_of(items[i]));
                    g1.push_back(items[i]);
                    used[i] = true;
                }
            return;
        }
        if (g2.size() + remaining <= min_fill) {
            for (size_t i = 0; i < n; i++)
                if (!used[i]) {
                    m2 = box_union(m2, box_of(items[i]));
                    g2.push_back(items[i]);
                    used[i] = true;
                }
            return;
        }

        size_t pick = n;
        double best_gap = -1.0;
        for (size_t i = 0; i < n; i++) {
            if (used[i]) continue;
            double gap = std::abs(enlargement(m1, box_of(items[i])) -
                                  enlargement(m2, box_of(items[i])));
            if (gap > best_gap) {
                best_gap = gap;
                pick = i;
            }
        }
        double e1 = enlargement(m1, box_of(items[pick]));
        double e2 = enlargement(m2, box_of(items[pick]));
        bool to_g1;
        if (e1 != e2)
            to_g1 = e1 < e2;
        else if (box_area(m1) != box_area(m2))
            to_g1 = box_area(m1) < box_area(m2);
        else
            to_g1 = g1.size() <= g2.size();
        if (to_g1) {
            m1 = box_union(m1, box_of(items[pick]));
            g1.push_back(items[pick]);
        } else {
            m2 = box_union(m2, box_of(items[pick]));
            g2.push_back(items[pick]);
        }
        used[pick] = true;
        remaining--;
    }
}

}  // namespace

uint32_t RTreeIndex::choose_leaf(const BoundingBox& box) const {
    uint32_t cur = root_;
    while (!nodes_[cur].leaf) {
        const auto& children = nodes_[cur].children;
        uint32_t best = children[0];
        double best_enl = enlargement(nodes_[best].mbr, box);
        double best_area = box_area(nodes_[best].mbr);
        for (size_t i = 1; i < children.size(); i++) {
            uint32_t c = children[i];
            double enl = enlargement(nodes_[c].mbr, box);
            double area = box_area(nodes_[c].mbr);
            if (enl < best_enl || (enl == best_enl && area < best_area)) {
                best = c;
                best_enl = enl;
                best_area = area;
            }
        }
        cur = best;
    }
    return cur;
}

void RTreeIndex::insert(const BoundingBox& box, uint64_t id) {
    if (nodes_.empty()) {
        Node root;
        root.leaf = true;
        root.mbr = box;
        nodes_.push_back(std::move(root));
        root_ = 0;
    }
    uint32_t leaf = choose_leaf(box);
    Node& ln = nodes_[leaf];
    ln.mbr = ln.entries.empty() ? box : box_union(ln.mbr, box);
    ln.entries.push_back({box, id});
    for (int32_t p = ln.parent; p >= 0; p = nodes_[p].parent)
        nodes_[p].mbr = box_union(nodes_[p].mbr, box);
    if (nodes_[leaf].entries.size() > capacity_) split_node(leaf);
    size_++;
}

void RTreeIndex::split_node(uint32_t idx) {
    uint32_t peer = static_cast<uint32_t>(nodes_.size());
    nodes_.push_back(Node{});
    Node& node = nodes_[idx];
    Node& twin = nodes_[peer];
    twin.leaf = node.leaf;
    twin.parent = node.parent;

    if (node.leaf) {
        std::vector<Entry> items = std::move(node.entries);
        node.entries.clear();
        quadratic_split(
            std::move(items), [](const Entry& e) { return e.box; }, min_fill_,
            node.entries, twin.entries, node.mbr, twin.mbr);
    } else {
        std::vector<uint32_t> items = std::move(node.children);
        node.children.clear();
        quadratic_split(
            std::move(items), [this](uint32_t c) { return nodes_[c].mbr; }, min_fill_,
            node.children, twin.children, node.mbr, twin.mbr);
        for (uint32_t c : nodes_[peer].children)
            nodes_[c].parent = static_cast<int32_t>(peer);
    }

    if (idx == root_) {
        uint32_t new_root = static_cast<uint32_t>(nodes_.size());
        nodes_.push_back(Node{});
        Node& r = nodes_[new_root];
        r.leaf = false;
        r.children = {idx, peer};
        r.mbr = box_union(nodes_[idx].mbr, nodes_[peer].mbr);
        nodes_[idx].parent = static_cast<int32_t>(new_root);
        nodes_[peer].parent = static_cast<int32_t>(new_root);
        root_ = new_root;
        return;
    }

    uint32_t parent = static_cast<uint32_t>(nodes_[idx].parent);
    nodes_[parent].children.push_back(peer);
    // The split may have shrunk this subtree's cover; rebuild the ancestor
    // MBRs from their children before any further split.
    adjust_upward(parent);
    if (nodes_[parent].children.size() > capacity_) split_node(parent);
}

void RTreeIndex::adjust_upward(uint32_t idx) {
    for (int32_t cur = static_cast<int32_t>(idx); cur >= 0;
         cur = nodes_[cur].parent) {
        Node& n = nodes_[cur];
        if (n.leaf) continue;
        BoundingBox m = nodes_[n.children[0]].mbr;
        for (size_t i = 1; i < n.children.size(); i++)
            m = box_union(m, nodes_[n.children[i]].mbr);
        n.mbr = m;
    }
}

RTreeIndex build_rtree(const std::vector<std::pair<BoundingBox, uint64_t>>& entries,
                       uint32_t node_capacity) {
    if (entries.empty()) throw EmptyInputError("r-tree build needs at least one entry");
    if (node_capacity < 4) throw ConfigError("r-tree node capacity must be at least 4");
    RTreeIndex idx;
    idx.capacity_ = node_capacity;
    idx.min_fill_ = node_capacity * 2 / 5;
    for (const auto& [box, id] : entries) {
        if (!box.valid())
            throw ConfigError("degenerate box on entry " + std::to_string(id));
        idx.insert(box, id);
    }
    return idx;
}

RTreeIndex build_rtree(const std::vector<Patch>& patches, uint32_t node_capacity) {
    std::vector<std::pair<BoundingBox, uint64_t>> entries;
    entries.reserve(patches.size());
    for (const Patch& p : patches) {
        const MetaValue& v = index_key_of(p, "bbox");
        if (meta_tag(v) != Tag::Box)
            throw TagMismatchError("patch " + std::to_string(p.patch_id) +
                                   " bbox key is not box tagged");
        entries.emplace_back(std::get<BoundingBox>(v), p.patch_id);
    }
    return build_rtree(entries, node_capacity);
}

std::vector<uint64_t> RTreeIndex::query(const BoundingBox& q,
                                        RectQueryMode mode) const {
    std::vector<uint64_t> out;
    if (nodes_.empty()) return out;
    std::vector<uint32_t> stack{root_};
    while (!stack.empty()) {
        uint32_t cur = stack.back();
        stack.pop_back();
        const Node& n = nodes_[cur];
        if (!boxes_intersect(n.mbr, q)) continue;
        if (n.leaf) {
            for (const Entry& e : n.entries) {
                bool hit = mode == RectQueryMode::intersects
                               ? boxes_intersect(e.box, q)
                               : box_contains(q, e.box);
                if (hit) out.push_back(e.id);
            }
        } else {
            for (uint32_t c : n.children) stack.push_back(c);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

void RTreeIndex::check_structure() const {
    if (nodes_.empty()) {
        if (size_ != 0) throw Error("r-tree has entries but no nodes");
        return;
    }
    size_t leaf_entries = 0;
    int leaf_depth = -1;
    struct Item {
        uint32_t node;
        int depth;
    };
    std::vector<Item> stack{{root_, 0}};
    while (!stack.empty()) {
        auto [cur, depth] = stack.back();
        stack.pop_back();
        const Node& n = nodes_[cur];
        if (n.leaf) {
            if (leaf_depth < 0) leaf_depth = depth;
            if (depth != leaf_depth) throw Error("r-tree leaves at unequal depth");
            leaf_entries += n.entries.size();
            for (const Entry& e : n.entries)
                if (!box_contains(n.mbr, e.box))
                    throw Error("r-tree leaf MBR does not cover an entry");
        } else {
            if (n.children.empty()) throw Error("r-tree internal node has no children");
            for (uint32_t c : n.children) {
                if (!box_contains(n.mbr, nodes_[c].mbr))
                    throw Error("r-tree node MBR does not cover a child");
                stack.push_back({c, depth + 1});
            }
        }
    }
    if (leaf_entries != size_)
        throw Error("r-tree leaf entry count disagrees with indexed size");
}

std::vector<uint64_t> rtree_query(const RTreeIndex& idx, const BoundingBox& q,
                                  RectQueryMode mode) {
    return idx.query(q, mode);
}

std::string RTreeIndex::serialize() const {
    ByteWriter w;
    write_index_header(w, IndexKind::rtree);
    w.u32(capacity_);
    w.u64(size_);
    w.u32(root_);
    w.u32(static_cast<uint32_t>(nodes_.size()));
    for (const Node& n : nodes_) {
        w.u8(n.leaf ? 1 : 0);
        w.u32(n.mbr.x1);
        w.u32(n.mbr.y1);
        w.u32(n.mbr.x2);
        w.u32(n.mbr.y2);
        if (n.leaf) {
            w.u16(static_cast<uint16_t>(n.entries.size()));
            for (const Entry& e : n.entries) {
                w.u32(e.box.x1);
                w.u32(e.box.y1);
                w.u32(e.box.x2);
                w.u32(e.box.y2);
                w.u64(e.id);
            }
        } else {
            w.u16(static_cast<uint16_t>(n.children.size()));
            for (uint32_t c : n.children) w.u32(c);
        }
    }
    return w.take();
}

RTreeIndex RTreeIndex::deserialize(std::string_view blob) {
    ByteReader r(blob);
    expect_kind(r, IndexKind::rtree);
    RTreeIndex idx;
    idx.capacity_ = r.u32();
    idx.min_fill_ = idx.capacity_ * 2 / 5;
    idx.size_ = r.u64();
    idx.root_ = r.u32();
    uint32_t n_nodes = r.u32();
    idx.nodes_.resize(n_nodes);
    for (uint32_t i = 0; i < n_nodes; i++) {
        Node& n = idx.nodes_[i];
        n.leaf = r.u8() != 0;
        n.mbr.x1 = r.u32();
        n.mbr.y1 = r.u32();
        n.mbr.x2 = r.u32();
        n.mbr.y2 = r.u32();
        uint16_t k = r.u16();
        if (n.leaf) {
            n.entries.resize(k);
            for (auto& e : n.entries) {
                e.box.x1 = r.u32();
                e.box.y1 = r.u32();
                e.box.x2 = r.u32();
                e.box.y2 = r.u32();
                e.id = r.u64();
            }
        } else {
            n.children.resize(k);
            for (auto& c : n.children) c = r.u32();
        }
    }
    return idx;
}

// ---------------------------------------------------------------------------
// Ball-tree

BallTreeIndex build_balltree(
    const std::vector<std::pair<std::vector<float>, uint64_t>>& points,
    uint32_t leaf_size) {
    if (points.empty())
        throw EmptyInputError("ball-tree build needs at least one point");
    if (leaf_size < 1) throw ConfigError("ball-tree leaf size must be at least 1");

    BallTreeIndex t;
    t.d_ = points[0].first.size();
    if (t.d_ == 0) throw MixedDimensionError("ball-tree points must have dimension >= 1");
    t.leaf_size_ = leaf_size;
    t.points_.reserve(points.size() * t.d_);
    t.ids_.reserve(points.size());
    for (const auto& [vec, id] : points) {
        if (vec.size() != t.d_)
            throw MixedDimensionError(
                "ball-tree point for id " + std::to_string(id) + " has dimension " +
                std::to_string(vec.size()) + ", expected " + std::to_string(t.d_));
        t.points_.insert(t.points_.end(), vec.begin(), vec.end());
        t.ids_.push_back(id);
    }
    t.order_.resize(points.size());
    std::iota(t.order_.begin(), t.order_.end(), 0u);
    t.root_ = t.build_range(0, static_cast<uint32_t>(points.size()));
    return t;
}

BallTreeIndex build_balltree(const std::vector<Patch>& patches, uint32_t leaf_size) {
    std::vector<std::pair<std::vector<float>, uint64_t>> pts;
    pts.reserve(patches.size());
    for (const Patch& p : patches) pts.emplace_back(p.data, p.patch_id);
    return build_balltree(pts, leaf_size);
}

uint32_t BallTreeIndex::build_range(uint32_t begin, uint32_t end) {
    const uint32_t n = end - begin;
    Node node;
    node.begin = begin;
    node.end = end;
    node.centroid.assign(d_, 0.0);
    for (uint32_t i = begin; i < end; i++) {
        const float* p = points_.data() + static_cast<size_t>(order_[i]) * d_;
        for (size_t j = 0; j < d_; j++) node.centroid[j] += p[j];
    }
    for (size_t j = 0; j < d_; j++) node.centroid[j] /= n;
    for (uint32_t i = begin; i < end; i++) {
        const float* p = points_.data() + static_cast<size_t>(order_[i]) * d_;
        double acc = 0.0;
        for (size_t j = 0; j < d_; j++) {
            double diff = p[j] - node.centroid[j];
            acc += diff * diff;
        }
        node.radius = std::max(node.radius, std::sqrt(acc));
    }

    uint32_t me = static_cast<uint32_t>(nodes_.size());
    nodes_.push_back(std::move(node));
    if (n <= leaf_size_) return me;

    // Split on the dimension with the widest spread; if every dimension is
    // flat the points coincide and this stays a (possibly oversized) leaf.
    size_t best_dim = 0;
    double best_spread = 0.0;
    for (size_t j = 0; j < d_; j++) {
        double mn = points_[static_cast<size_t>(order_[begin]) * d_ + j];
        double mx = mn;
        for (uint32_t i = begin + 1; i < end; i++) {
            double v = points_[static_cast<size_t>(order_[i]) * d_ + j];
            mn = std::min(mn, v);
            mx = std::max(mx, v);
        }
        if (mx - mn > best_spread) {
            best_spread = mx - mn;
            best_dim = j;
        }
    }
    if (best_spread == 0.0) return me;

    std::stable_sort(order_.begin() + begin, order_.begin() + end,
                     [&](uint32_t a, uint32_t b) {
                         return points_[static_cast<size_t>(a) * d_ + best_dim] <
                                points_[static_cast<size_t>(b) * d_ + best_dim];
                     });
    uint32_t mid = begin + (n + 1) / 2;  // median ties fall to the lower half
    uint32_t left = build_range(begin, mid);
    uint32_t right = build_range(mid, end);
    nodes_[me].left = static_cast<int32_t>(left);
    nodes_[me].right = static_cast<int32_t>(right);
    return me;
}

size_t BallTreeIndex::leaf_count() const {
    size_t n = 0;
    for (const Node& node : nodes_)
        if (node.is_leaf()) n++;
    return n;
}

namespace {

double dist_to_centroid(const std::vector<float>& q, const BallTreeIndex::Node& n) {
    double acc = 0.0;
    for (size_t j = 0; j < q.size(); j++) {
        double diff = static_cast<double>(q[j]) - n.centroid[j];
        acc += diff * diff;
    }
    return std::sqrt(acc);
}

}  // namespace

std::vector<uint64_t> balltree_within(const BallTreeIndex& idx,
                                      const std::vector<float>& q, double r,
                                      BallTreeStats* stats) {
    if (q.size() != idx.dim())
        throw DimensionMismatchError("query has dimension " +
                                     std::to_string(q.size()) + ", index has " +
                                     std::to_string(idx.dim()));
    if (r < 0) throw ConfigError("radius must be non-negative");

    std::vector<uint64_t> out;
    if (idx.size() == 0) return out;
    const auto& nodes = idx.nodes();
    std::vector<uint32_t> stack{idx.root()};
    while (!stack.empty()) {
        uint32_t cur = stack.back();
        stack.pop_back();
        const auto& node = nodes[cur];
        if (stats) stats->nodes_visited++;
        if (dist_to_centroid(q, node) > node.radius + r) continue;
        if (node.is_leaf()) {
            if (stats) stats->leaves_visited++;
            for (uint32_t i = node.begin; i < node.end; i++)
                if (euclidean(q.data(), idx.point(i), idx.dim()) <= r)
                    out.push_back(idx.id_at(i));
        } else {
            stack.push_back(static_cast<uint32_t>(node.left));
            stack.push_back(static_cast<uint32_t>(node.right));
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::pair<uint64_t, double>> balltree_knn(const BallTreeIndex& idx,
                                                      const std::vector<float>& q,
                                                      size_t k) {
    if (q.size() != idx.dim())
        throw DimensionMismatchError("query has dimension " +
                                     std::to_string(q.size()) + ", index has " +
                                     std::to_string(idx.dim()));
    if (k == 0) throw ConfigError("k must be positive");
    if (k > idx.size())
        throw KTooLargeError("k=" + std::to_string(k) + " exceeds indexed count " +
                             std::to_string(idx.size()));

    const auto& nodes = idx.nodes();
    using Cand = std::pair<double, uint64_t>;
    std::priority_queue<Cand> best;  // worst candidate on top

    using Probe = std::pair<double, uint32_t>;
    std::priority_queue<Probe, std::vector<Probe>, std::greater<>> frontier;
    auto bound_of = [&](uint32_t ni) {
        return std::max(0.0, dist_to_centroid(q, nodes[ni]) - nodes[ni].radius);
    };
    frontier.push({bound_of(idx.root()), idx.root()});

    while (!frontier.empty()) {
        auto [bound, cur] = frontier.top();
        frontier.pop();
        // Everything left on the frontier is at least this far away.
        if (best.size() == k && bound > best.top().first) break;
        const auto& node = nodes[cur];
        if (node.is_leaf()) {
            for (uint32_t i = node.begin; i < node.end; i++) {
                Cand c{euclidean(q.data(), idx.point(i), idx.dim()), idx.id_at(i)};
                if (best.size() < k)
                    best.push(c);
                else if (c < best.top()) {
                    best.pop();
                    best.push(c);
                }
            }
        } else {
            frontier.push({bound_of(static_cast<uint32_t>(node.left)),
                           static_cast<uint32_t>(node.left)});
            frontier.push({bound_of(static_cast<uint32_t>(node.right)),
                           static_cast<uint32_t>(node.right)});
        }
    }

    std::vector<Cand> sorted;
    sorted.reserve(best.size());
    while (!best.empty()) {
        sorted.push_back(best.top());
        best.pop();
    }
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::pair<uint64_t, double>> out;
    out.reserve(sorted.size());
    for (const auto& [d, id] : sorted) out.emplace_back(id, d);
    return out;
}

std::string BallTreeIndex::serialize() const {
    ByteWriter w;
    write_index_header(w, IndexKind::balltree);
    w.u32(static_cast<uint32_t>(d_));
    w.u32(leaf_size_);
    w.u64(ids_.size());
    for (float v : points_) w.f32(v);
    for (uint64_t id : ids_) w.u64(id);
    for (uint32_t o : order_) w.u32(o);
    w.u32(root_);
    w.u32(static_cast<uint32_t>(nodes_.size()));
    for (const Node& n : nodes_) {
        for (double c : n.centroid) w.f64(c);
        w.f64(n.radius);
        w.u32(static_cast<uint32_t>(n.left));
        w.u32(static_cast<uint32_t>(n.right));
        w.u32(n.begin);
        w.u32(n.end);
    }
    return w.take();
}

BallTreeIndex BallTreeIndex::deserialize(std::string_view blob) {
    ByteReader r(blob);
    expect_kind(r, IndexKind::balltree);
    BallTreeIndex t;
    t.d_ = r.u32();
    t.leaf_size_ = r.u32();
    uint64_t n = r.u64();
    t.points_.resize(n * t.d_);
    for (auto& v : t.points_) v = r.f32();
    t.ids_.resize(n);
    for (auto& id : t.ids_) id = r.u64();
    t.order_.resize(n);
    for (auto& o : t.order_) o = r.u32();
    t.root_ = r.u32();
    uint32_t n_nodes = r.u32();
    t.nodes_.resize(n_nodes);
    for (auto& node : t.nodes_) {
        node.centroid.resize(t.d_);
        for (auto& c : node.centroid) c = r.f64();
        node.radius = r.f64();
        node.left = static_cast<int32_t>(r.u32());
        node.right = static_cast<int32_t>(r.u32());
        node.begin = r.u32();
        node.end = r.u32();
    }
    return t;
}

// ---------------------------------------------------------------------------
// DynamicNeighborSet

DynamicNeighborSet::DynamicNeighborSet(size_t d, uint32_t leaf_size)
    : d_(d), leaf_size_(leaf_size) {}

bool DynamicNeighborSet::any_within(const std::vector<float>& q, double tau) const {
    if (q.size() != d_)
        throw DimensionMismatchError("neighbor query dimension mismatch");
    for (const auto& [p, id] : recent_)
        if (euclidean(q.data(), p.data(), d_) <= tau) return true;
    if (frozen_ && !balltree_within(*frozen_, q, tau).empty()) return true;
    return false;
}

void DynamicNeighborSet::insert(std::vector<float> point, uint64_t id) {
    if (point.size() != d_)
        throw DimensionMismatchError("neighbor insert dimension mismatch");
    all_.emplace_back(point, id);
    recent_.emplace_back(std::move(point), id);
    count_++;
    size_t frozen_n = frozen_ ? frozen_->size() : 0;
    if (recent_.size() >= std::max<size_t>(32, frozen_n)) rebuild();
}

void DynamicNeighborSet::rebuild() {
    frozen_ = build_balltree(all_, leaf_size_);
    recent_.clear();
}

}  // namespace patchdb
