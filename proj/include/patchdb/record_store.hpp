#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "patchdb/core.hpp"

namespace patchdb {

// Single-file sorted record table. Values are appended raw after an 8-byte
// magic; finalize() writes a sorted key index followed by a fixed footer
// (index offset, entry count, footer magic). Reopening for write truncates
// logically at the index offset and appends new values over the old index,
// which is rewritten on the next finalize. Keys sort in byte order, so
// big-endian integer keys scan in numeric order.
//
// File layout:
//   "PDBS0001"
//   value bytes ...
//   index: per entry { u32 key_len, key, u64 offset, u64 length }
//   footer: { u64 index_offset, u64 entry_count, "PDBSIDX1" }

class RecordCursor {
public:
    // Yields the next record in key order; false at the end of the range.
    bool next(std::string& key, std::string& value);

private:
    friend class RecordStore;
    struct Entry {
        std::string key;
        uint64_t off;
        uint64_t len;
    };

    std::ifstream in_;
    std::vector<Entry> entries_;
    size_t pos_ = 0;
};

class RecordStore {
public:
    static std::unique_ptr<RecordStore> create(const std::string& path);
    static std::unique_ptr<RecordStore> open(const std::string& path,
                                             bool writable = false);

    RecordStore(const RecordStore&) = delete;
    RecordStore& operator=(const RecordStore&) = delete;

    // Appends (or replaces) one record. The store must have been created or
    // opened writable; changes become durable at finalize().
    void put(std::string_view key, std::string_view value);

    // Writes the sorted index and footer. The store stays usable; further
    // put() calls append over the just-written index and require another
    // finalize() before the file is complete again.
    void finalize();

    std::optional<std::string> get(std::string_view key) const;
    bool has(std::string_view key) const;

    // Cursor over keys in [lo, hi); hi absent means to the end. The cursor
    // owns its own file handle, so concurrent cursors are independent.
    RecordCursor scan(std::string_view lo = {},
                      std::optional<std::string> hi = std::nullopt) const;

    std::vector<std::string> keys_in_range(std::string_view lo,
                                           std::optional<std::string> hi) const;

    size_t entry_count() const;
    uint64_t file_size() const;
    const std::string& path() const { return path_; }

    // Key helpers shared by every store layout.
    static std::string key_u64(uint64_t v);
    static uint64_t key_u64_decode(std::string_view key);
    static std::string reserved_key(std::string_view name);   // "\xFF" + name
    static std::string descriptor_key();                      // 8 bytes of 0xFF

private:
    RecordStore() = default;
    void open_file(bool truncate);
    void load_index();

    std::string path_;
    mutable std::fstream io_;
    mutable std::mutex mu_;
    bool writable_ = false;
    bool dirty_ = false;
    uint64_t write_pos_ = 0;
    std::map<std::string, std::pair<uint64_t, uint64_t>> index_;
};

}  // namespace patchdb
