#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "patchdb/record_store.hpp"

using namespace patchdb;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("patchdb_rs_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("put, finalize, reopen, get") {
    TempDir tmp;
    std::string p = tmp.file("a.rs");
    {
        auto rs = RecordStore::create(p);
        rs->put("alpha", "1");
        rs->put("beta", "22");
        rs->put("gamma", "333");
        rs->finalize();
        CHECK(rs->entry_count() == 3);
    }
    auto rs = RecordStore::open(p);
    CHECK(rs->entry_count() == 3);
    CHECK(rs->get("alpha") == "1");
    CHECK(rs->get("beta") == "22");
    CHECK(rs->get("gamma") == "333");
    CHECK_FALSE(rs->get("delta").has_value());
    CHECK(rs->has("beta"));
    CHECK_FALSE(rs->has("zeta"));
    CHECK(rs->file_size() == fs::file_size(p));
}

TEST_CASE("replacing a key keeps one entry") {
    TempDir tmp;
    auto rs = RecordStore::create(tmp.file("r.rs"));
    rs->put("k", "old");
    rs->put("k", "new");
    rs->finalize();
    CHECK(rs->entry_count() == 1);
    CHECK(rs->get("k") == "new");
}

TEST_CASE("scan yields key order and respects half-open ranges") {
    TempDir tmp;
    auto rs = RecordStore::create(tmp.file("s.rs"));
    // Insert out of order; scan must come back sorted.
    for (const char* k : {"m", "a", "z", "q", "b"}) rs->put(k, std::string("v:") + k);
    rs->finalize();

    std::vector<std::string> keys;
    auto cur = rs->scan();
    std::string k, v;
    while (cur.next(k, v)) {
        keys.push_back(k);
        CHECK(v == "v:" + k);
    }
    CHECK(keys == std::vector<std::string>{"a", "b", "m", "q", "z"});

    CHECK(rs->keys_in_range("b", std::string("q")) ==
          std::vector<std::string>{"b", "m"});
    CHECK(rs->keys_in_range("b", std::string("q!")) ==
          std::vector<std::string>{"b", "m", "q"});
    CHECK(rs->keys_in_range("", std::nullopt).size() == 5);
    CHECK(rs->keys_in_range("zz", std::nullopt).empty());
}

TEST_CASE("concurrent cursors are independent") {
    TempDir tmp;
    auto rs = RecordStore::create(tmp.file("c.rs"));
    for (int i = 0; i < 10; i++) rs->put(RecordStore::key_u64(i), std::to_string(i));
    rs->finalize();

    auto c1 = rs->scan();
    auto c2 = rs->scan();
    std::string k1, v1, k2, v2;
    for (int i = 0; i < 5; i++) REQUIRE(c1.next(k1, v1));
    REQUIRE(c2.next(k2, v2));
    CHECK(v2 == "0");  // c2 unaffected by c1's position
    CHECK(v1 == "4");
}

TEST_CASE("append after finalize overwrites the old index region") {
    TempDir tmp;
    std::string p = tmp.file("a2.rs");
    {
        auto rs = RecordStore::create(p);
        rs->put("a", "1");
        rs->finalize();
        rs->put("b", "2");
        rs->finalize();
    }
    auto rs = RecordStore::open(p);
    CHECK(rs->entry_count() == 2);
    CHECK(rs->get("a") == "1");
    CHECK(rs->get("b") == "2");

    // Reopening writable and adding more keeps the earlier records too.
    {
        auto w = RecordStore::open(p, true);
        w->put("c", "3");
        w->finalize();
    }
    auto r2 = RecordStore::open(p);
    CHECK(r2->entry_count() == 3);
    CHECK(r2->get("a") == "1");
    CHECK(r2->get("c") == "3");
}

TEST_CASE("big-endian u64 keys sort numerically") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 200; i++) {
        uint64_t a = rng(), b = rng();
        CHECK((a < b) == (RecordStore::key_u64(a) < RecordStore::key_u64(b)));
        CHECK(RecordStore::key_u64_decode(RecordStore::key_u64(a)) == a);
    }

    TempDir tmp;
    auto rs = RecordStore::create(tmp.file("n.rs"));
    for (uint64_t v : {300u, 5u, 1000000u, 42u, 0u})
        rs->put(RecordStore::key_u64(v), "x");
    rs->finalize();
    auto keys = rs->keys_in_range("", std::nullopt);
    std::vector<uint64_t> decoded;
    for (const auto& key : keys) decoded.push_back(RecordStore::key_u64_decode(key));
    CHECK(decoded == std::vector<uint64_t>{0, 5, 42, 300, 1000000});
}

TEST_CASE("reserved keys sort after every practical frame key") {
    // Frame keys with a 0xFF lead byte would need frame_no >= 2^56; reserved
    // names and the descriptor live above that whole range.
    std::string biggest_practical = RecordStore::key_u64((uint64_t(1) << 56) - 1);
    CHECK(RecordStore::reserved_key("idx") > biggest_practical);
    CHECK(RecordStore::descriptor_key() > biggest_practical);
    CHECK(RecordStore::descriptor_key() > RecordStore::reserved_key("anything"));
    CHECK(RecordStore::descriptor_key() >= RecordStore::key_u64(UINT64_MAX));
}

TEST_CASE("opening junk fails cleanly") {
    TempDir tmp;
    CHECK_THROWS_AS(RecordStore::open(tmp.file("missing.rs")), IoError);

    std::string p = tmp.file("junk.rs");
    std::ofstream(p) << "this is not a record store at all";
    CHECK_THROWS_AS(RecordStore::open(p), IoError);

    // Valid magic but truncated footer.
    std::string p2 = tmp.file("trunc.rs");
    {
        auto rs = RecordStore::create(p2);
        rs->put("k", "v");
        rs->finalize();
    }
    auto size = fs::file_size(p2);
    fs::resize_file(p2, size - 6);
    CHECK_THROWS_AS(RecordStore::open(p2), IoError);
}

TEST_CASE("writes require a writable handle") {
    TempDir tmp;
    std::string p = tmp.file("ro.rs");
    {
        auto rs = RecordStore::create(p);
        rs->put("k", "v");
        rs->finalize();
    }
    auto ro = RecordStore::open(p, false);
    CHECK_THROWS_AS(ro->put("k2", "v2"), IoError);
}

TEST_CASE("large values and binary keys survive") {
    TempDir tmp;
    auto rs = RecordStore::create(tmp.file("big.rs"));
    std::string big(1 << 20, '\x5A');
    std::string binkey("\x00\xFF\x01\xFE", 4);
    rs->put(binkey, big);
    rs->put("empty", "");
    rs->finalize();
    CHECK(rs->get(binkey) == big);
    CHECK(rs->get("empty") == "");
}
