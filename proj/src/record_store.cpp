#include "patchdb/record_store.hpp"

#include <cstring>
#include <filesystem>

namespace patchdb {

namespace {

constexpr char kFileMagic[] = "PDBS0001";
constexpr char kFooterMagic[] = "PDBSIDX1";
constexpr size_t kMagicLen = 8;
constexpr size_t kFooterLen = 8 + 8 + kMagicLen;

}  // namespace

std::string RecordStore::key_u64(uint64_t v) {
    ByteWriter w;
    w.u64(v);
    return w.take();
}

uint64_t RecordStore::key_u64_decode(std::string_view key) {
    ByteReader r(key);
    return r.u64();
}

std::string RecordStore::reserved_key(std::string_view name) {
    std::string k = "\xFF";
    k += name;
    return k;
}

std::string RecordStore::descriptor_key() { return std::string(8, '\xFF'); }

std::unique_ptr<RecordStore> RecordStore::create(const std::string& path) {
    auto rs = std::unique_ptr<RecordStore>(new RecordStore());
    rs->path_ = path;
    rs->writable_ = true;
    rs->open_file(true);
    rs->io_.write(kFileMagic, kMagicLen);
    if (!rs->io_) throw IoError("cannot write to " + path);
    rs->write_pos_ = kMagicLen;
    rs->dirty_ = true;
    return rs;
}

std::unique_ptr<RecordStore> RecordStore::open(const std::string& path, bool writable) {
    auto rs = std::unique_ptr<RecordStore>(new RecordStore());
    rs->path_ = path;
    rs->writable_ = writable;
    rs->open_file(false);
    rs->load_index();
    return rs;
}

void RecordStore::open_file(bool truncate) {
    std::ios::openmode mode = std::ios::binary | std::ios::in;
    if (writable_) mode |= std::ios::out;
    if (truncate) mode |= std::ios::trunc;
    io_.open(path_, mode);
    if (!io_.is_open()) throw IoError("cannot open record store at " + path_);
}

void RecordStore::load_index() {
    io_.seekg(0, std::ios::end);
    uint64_t size = static_cast<uint64_t>(io_.tellg());
    if (size < kMagicLen + kFooterLen)
        throw IoError("record store " + path_ + " is truncated");

    char magic[kMagicLen];
    io_.seekg(0);
    io_.read(magic, kMagicLen);
    if (std::memcmp(magic, kFileMagic, kMagicLen) != 0)
        throw IoError("record store " + path_ + " has a bad file magic");

    std::string footer(kFooterLen, '\0');
    io_.seekg(static_cast<std::streamoff>(size - kFooterLen));
    io_.read(footer.data(), kFooterLen);
    if (footer.compare(16, kMagicLen, kFooterMagic) != 0)
        throw IoError("record store " + path_ + " has a bad footer magic");
    ByteReader fr(footer);
    uint64_t index_off = fr.u64();
    uint64_t n_entries = fr.u64();
    if (index_off < kMagicLen || index_off > size - kFooterLen)
        throw IoError("record store " + path_ + " has a corrupt index offset");

    std::string raw(size - kFooterLen - index_off, '\0');
    io_.seekg(static_cast<std::streamoff>(index_off));
    io_.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (!io_) throw IoError("record store " + path_ + ": cannot read index");

    ByteReader ir(raw);
    for (uint64_t i = 0; i < n_entries; i++) {
        size_t key_len = ir.u32();
        std::string key(key_len, '\0');
        ir.raw(key.data(), key_len);
        uint64_t off = ir.u64();
        uint64_t len = ir.u64();
        index_.emplace(std::move(key), std::make_pair(off, len));
    }
    write_pos_ = index_off;
}

void RecordStore::put(std::string_view key, std::string_view value) {
    if (!writable_) throw IoError("record store " + path_ + " opened read-only");
    std::lock_guard lock(mu_);
    io_.seekp(static_cast<std::streamoff>(write_pos_));
    io_.write(value.data(), static_cast<std::streamsize>(value.size()));
    if (!io_) throw IoError("write failed on " + path_);
    index_[std::string(key)] = {write_pos_, value.size()};
    write_pos_ += value.size();
    dirty_ = true;
}

void RecordStore::finalize() {
    if (!writable_) throw IoError("record store " + path_ + " opened read-only");
    std::lock_guard lock(mu_);
    ByteWriter w;
    for (const auto& [key, loc] : index_) {
        w.u32(static_cast<uint32_t>(key.size()));
        w.raw(key.data(), key.size());
        w.u64(loc.first);
        w.u64(loc.second);
    }
    w.u64(write_pos_);
    w.u64(index_.size());
    w.raw(kFooterMagic, kMagicLen);

    io_.seekp(static_cast<std::streamoff>(write_pos_));
    io_.write(w.bytes().data(), static_cast<std::streamsize>(w.size()));
    io_.flush();
    if (!io_) throw IoError("finalize failed on " + path_);

    // Shrink the file if a previous finalize left a longer tail behind.
    uint64_t end = write_pos_ + w.size();
    std::error_code ec;
    if (std::filesystem::file_size(path_, ec) > end && !ec)
        std::filesystem::resize_file(path_, end, ec);
    dirty_ = false;
}

std::optional<std::string> RecordStore::get(std::string_view key) const {
    std::lock_guard lock(mu_);
    auto it = index_.find(std::string(key));
    if (it == index_.end()) return std::nullopt;
    std::string value(it->second.second, '\0');
    io_.seekg(static_cast<std::streamoff>(it->second.first));
    io_.read(value.data(), static_cast<std::streamsize>(value.size()));
    if (!io_) throw IoError("read failed on " + path_);
    return value;
}

bool RecordStore::has(std::string_view key) const {
    std::lock_guard lock(mu_);
    return index_.count(std::string(key)) > 0;
}

RecordCursor RecordStore::scan(std::string_view lo,
                               std::optional<std::string> hi) const {
    RecordCursor c;
    {
        std::lock_guard lock(mu_);
        if (dirty_) io_.flush();
        auto it = index_.lower_bound(std::string(lo));
        auto end = hi ? index_.lower_bound(*hi) : index_.end();
        for (; it != end; ++it)
            c.entries_.push_back({it->first, it->second.first, it->second.second});
    }
    c.in_.open(path_, std::ios::binary);
    if (!c.in_.is_open()) throw IoError("cannot open " + path_ + " for scan");
    return c;
}

std::vector<std::string> RecordStore::keys_in_range(
    std::string_view lo, std::optional<std::string> hi) const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    auto it = index_.lower_bound(std::string(lo));
    auto end = hi ? index_.lower_bound(*hi) : index_.end();
    for (; it != end; ++it) out.push_back(it->first);
    return out;
}

size_t RecordStore::entry_count() const {
    std::lock_guard lock(mu_);
    return index_.size();
}

uint64_t RecordStore::file_size() const {
    std::lock_guard lock(mu_);
    if (dirty_) io_.flush();
    return static_cast<uint64_t>(std::filesystem::file_size(path_));
}

bool RecordCursor::next(std::string& key, std::string& value) {
    if (pos_ >= entries_.size()) return false;
    const Entry& e = entries_[pos_++];
    key = e.key;
    value.assign(e.len, '\0');
    in_.seekg(static_cast<std::streamoff>(e.off));
    in_.read(value.data(), static_cast<std::streamsize>(e.len));
    if (!in_) throw IoError("scan read failed");
    return true;
}

}  // namespace patchdb
