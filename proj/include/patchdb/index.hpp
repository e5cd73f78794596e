#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "patchdb/core.hpp"

namespace patchdb {

enum class IndexKind : uint8_t { ordered = 0, hash = 1, rtree = 2, balltree = 3 };

const char* index_kind_name(IndexKind k);
IndexKind index_kind_from_name(std::string_view name);

// Every index serializes to a single value: 4-byte magic "PIDX", one kind
// byte, then a kind-specific body. Serialization is byte-deterministic for
// identical build inputs.
IndexKind peek_index_kind(std::string_view blob);

// ---------------------------------------------------------------------------
// Ordered index (sorted key -> patch ids, int- or float-keyed)

class OrderedIndex {
public:
    const std::string& key_name() const { return key_; }
    Tag tag() const { return tag_; }
    size_t entry_count() const { return entry_count_; }

    std::vector<uint64_t> lookup(const MetaValue& key) const;
    // Patch ids for keys in [lo, hi), grouped by ascending key; an absent
    // bound is unbounded on that side.
    std::vector<uint64_t> range(const std::optional<MetaValue>& lo,
                                const std::optional<MetaValue>& hi) const;

    std::string serialize() const;
    static OrderedIndex deserialize(std::string_view blob);

    friend OrderedIndex build_ordered(const std::vector<Patch>& patches,
                                      const std::string& key);

private:
    std::string key_;
    Tag tag_ = Tag::Int;
    size_t entry_count_ = 0;
    std::vector<std::pair<int64_t, std::vector<uint64_t>>> ints_;
    std::vector<std::pair<double, std::vector<uint64_t>>> floats_;
};

OrderedIndex build_ordered(const std::vector<Patch>& patches, const std::string& key);

// ---------------------------------------------------------------------------
// Hash index (string- or int-keyed)

class HashIndex {
public:
    const std::string& key_name() const { return key_; }
    Tag tag() const { return tag_; }
    size_t entry_count() const { return entry_count_; }

    std::vector<uint64_t> lookup(const MetaValue& key) const;

    std::string serialize() const;
    static HashIndex deserialize(std::string_view blob);

    friend HashIndex build_hash(const std::vector<Patch>& patches,
                                const std::string& key);

private:
    std::string key_;
    Tag tag_ = Tag::Str;
    size_t entry_count_ = 0;
    std::unordered_map<std::string, std::vector<uint64_t>> strs_;
    std::unordered_map<int64_t, std::vector<uint64_t>> ints_;
};

HashIndex build_hash(const std::vector<Patch>& patches, const std::string& key);

// ---------------------------------------------------------------------------
// R-tree over 2-D boxes (quadratic split)

enum class RectQueryMode { intersects, contains };

// Positive-area overlap of half-open boxes.
inline bool boxes_intersect(const BoundingBox& a, const BoundingBox& b) {
    return a.x1 < b.x2 && b.x1 < a.x2 && a.y1 < b.y2 && b.y1 < a.y2;
}

// b lies fully inside a.
inline bool box_contains(const BoundingBox& a, const BoundingBox& b) {
    return b.x1 >= a.x1 && b.y1 >= a.y1 && b.x2 <= a.x2 && b.y2 <= a.y2;
}

class RTreeIndex {
public:
    static constexpr uint32_t kDefaultNodeCapacity = 16;

    struct Entry {
        BoundingBox box;
        uint64_t id;
    };
    struct Node {
        bool leaf = true;
        BoundingBox mbr;
        std::vector<Entry> entries;    // leaf only
        std::vector<uint32_t> children;  // internal only
        int32_t parent = -1;             // build-time only, not serialized
    };

    size_t entry_count() const { return size_; }
    uint32_t node_capacity() const { return capacity_; }
    const std::vector<Node>& nodes() const { return nodes_; }
    uint32_t root() const { return root_; }

    std::vector<uint64_t> query(const BoundingBox& q, RectQueryMode mode) const;

    // Throws if a node's MBR fails to cover a child or the leaf entry count
    // disagrees with the indexed size; used by structural tests.
    void check_structure() const;

    std::string serialize() const;
    static RTreeIndex deserialize(std::string_view blob);

    friend RTreeIndex build_rtree(const std::vector<std::pair<BoundingBox, uint64_t>>&,
                                  uint32_t);

private:
    void insert(const BoundingBox& box, uint64_t id);
    uint32_t choose_leaf(const BoundingBox& box) const;
    void split_node(uint32_t idx);
    void adjust_upward(uint32_t idx);

    uint32_t capacity_ = kDefaultNodeCapacity;
    uint32_t min_fill_ = kDefaultNodeCapacity * 2 / 5;
    size_t size_ = 0;
    uint32_t root_ = 0;
    std::vector<Node> nodes_;
};

RTreeIndex build_rtree(const std::vector<std::pair<BoundingBox, uint64_t>>& entries,
                       uint32_t node_capacity = RTreeIndex::kDefaultNodeCapacity);
// Uses each patch's "bbox" metadata as the indexed rectangle.
RTreeIndex build_rtree(const std::vector<Patch>& patches,
                       uint32_t node_capacity = RTreeIndex::kDefaultNodeCapacity);

std::vector<uint64_t> rtree_query(const RTreeIndex& idx, const BoundingBox& q,
                                  RectQueryMode mode);

// ---------------------------------------------------------------------------
// Ball-tree over float vectors

struct BallTreeStats {
    size_t nodes_visited = 0;
    size_t leaves_visited = 0;
};

class BallTreeIndex {
public:
    static constexpr uint32_t kDefaultLeafSize = 32;

    struct Node {
        std::vector<double> centroid;
        double radius = 0.0;
        int32_t left = -1, right = -1;  // both -1 on a leaf
        uint32_t begin = 0, end = 0;    // leaf slice of the permutation

        bool is_leaf() const { return left < 0; }
    };

    size_t size() const { return ids_.size(); }
    size_t dim() const { return d_; }
    uint32_t leaf_size() const { return leaf_size_; }
    const std::vector<Node>& nodes() const { return nodes_; }
    uint32_t root() const { return root_; }
    size_t leaf_count() const;

    const float* point(uint32_t order_pos) const {
        return points_.data() + static_cast<size_t>(order_[order_pos]) * d_;
    }
    uint64_t id_at(uint32_t order_pos) const { return ids_[order_[order_pos]]; }

    std::string serialize() const;
    static BallTreeIndex deserialize(std::string_view blob);

    friend BallTreeIndex build_balltree(
        const std::vector<std::pair<std::vector<float>, uint64_t>>&, uint32_t);

private:
    uint32_t build_range(uint32_t begin, uint32_t end);

    size_t d_ = 0;
    uint32_t leaf_size_ = kDefaultLeafSize;
    std::vector<float> points_;    // n*d, original input order
    std::vector<uint64_t> ids_;    // n, original input order
    std::vector<uint32_t> order_;  // permutation; leaves own slices of it
    uint32_t root_ = 0;
    std::vector<Node> nodes_;
};

BallTreeIndex build_balltree(
    const std::vector<std::pair<std::vector<float>, uint64_t>>& points,
    uint32_t leaf_size = BallTreeIndex::kDefaultLeafSize);
// Uses each patch's data vector; every patch must share one dimensionality.
BallTreeIndex build_balltree(const std::vector<Patch>& patches,
                             uint32_t leaf_size = BallTreeIndex::kDefaultLeafSize);

// All ids within Euclidean distance r of q, ascending.
std::vector<uint64_t> balltree_within(const BallTreeIndex& idx,
                                      const std::vector<float>& q, double r,
                                      BallTreeStats* stats = nullptr);

// k nearest ids, ascending by (distance, id).
std::vector<std::pair<uint64_t, double>> balltree_knn(const BallTreeIndex& idx,
                                                      const std::vector<float>& q,
                                                      size_t k);

double euclidean(const float* a, const float* b, size_t d);

// ---------------------------------------------------------------------------
// Growable neighbor set: a frozen ball-tree over older points plus a linear
// buffer of recent ones, rebuilt when the buffer catches up with the tree.
// Backs the streaming dedup operator.

class DynamicNeighborSet {
public:
    explicit DynamicNeighborSet(size_t d,
                                uint32_t leaf_size = BallTreeIndex::kDefaultLeafSize);

    size_t size() const { return count_; }
    bool any_within(const std::vector<float>& q, double tau) const;
    void insert(std::vector<float> point, uint64_t id);

private:
    void rebuild();

    size_t d_;
    uint32_t leaf_size_;
    size_t count_ = 0;
    std::optional<BallTreeIndex> frozen_;
    std::vector<std::pair<std::vector<float>, uint64_t>> all_;
    std::vector<std::pair<std::vector<float>, uint64_t>> recent_;
};

}  // namespace patchdb
