#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "patchdb/storage.hpp"

using namespace patchdb;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("patchdb_st_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::vector<Frame> test_frames(uint64_t n, uint32_t w = 24, uint32_t h = 16) {
    std::vector<Frame> out;
    for (uint64_t i = 0; i < n; i++) out.push_back(oracle::textured_frame("vid", i, w, h));
    return out;
}

VideoStore ingest_frames(const std::vector<Frame>& frames, const StoreDescriptor& d) {
    VectorStream<Frame> s(frames);
    return VideoStore::ingest(s, d);
}

bool same_pixels(const Frame& a, const Frame& b) {
    return a.frame_no == b.frame_no && a.width == b.width && a.height == b.height &&
           a.pixels == b.pixels;
}

}  // namespace

TEST_CASE("names round-trip") {
    for (Layout l : {Layout::frame_file, Layout::encoded_file, Layout::segmented_file})
        CHECK(layout_from_name(layout_name(l)) == l);
    CHECK_THROWS_AS(layout_from_name("ring_buffer"), ConfigError);

    for (const char* q : {"high", "medium", "low"}) {
        CodecConfig c = CodecConfig::from_quality(q);
        CHECK(quality_name(c) == q);
        c.validate();
    }
    // both spellings of the identity codec canonicalize to "none"
    CHECK(quality_name(CodecConfig::from_quality("lossless")) == "none");
    CHECK(quality_name(CodecConfig::from_quality("none")) == "none");
    CodecConfig::from_quality("lossless").validate();
    CHECK(CodecConfig::from_quality("high").quant_step == 4);
    CHECK(CodecConfig::from_quality("medium").quant_step == 16);
    CHECK(CodecConfig::from_quality("low").quant_step == 64);
    CHECK(CodecConfig::from_quality("lossless").mode == CodecMode::lossless);
    CHECK_THROWS_AS(CodecConfig::from_quality("ultra"), ConfigError);
    CHECK_THROWS_AS(CodecConfig::lossy(5).validate(), ConfigError);
}

TEST_CASE("quantizer error is bounded by half a step") {
    for (uint8_t step : {4, 16, 64}) {
        int worst = 0;
        for (int v = 0; v <= 255; v++) {
            int q = quantize_pixel(static_cast<uint8_t>(v), step);
            worst = std::max(worst, std::abs(q - v));
            // Idempotent: re-quantizing a quantized value is a no-op.
            CHECK(quantize_pixel(static_cast<uint8_t>(q), step) == q);
        }
        CHECK(worst <= step / 2);
    }
    CHECK(quantize_pixel(123, 0) == 123);
}

TEST_CASE("zlib helpers round-trip") {
    std::string data(10000, 'a');
    for (size_t i = 0; i < data.size(); i += 7) data[i] = static_cast<char>(i & 0xFF);
    std::string packed = zlib_deflate(data);
    CHECK(packed.size() < data.size());
    CHECK(zlib_inflate_all(packed) == data);
    CHECK_THROWS_AS(zlib_inflate_all("not deflate data"), IoError);
}

TEST_CASE("lossless scan returns the exact ingested pixels on every layout") {
    TempDir tmp;
    auto frames = test_frames(13);
    for (Layout l : {Layout::frame_file, Layout::encoded_file, Layout::segmented_file}) {
        StoreDescriptor d{l, CodecConfig::lossless(), 4, tmp.file(layout_name(l))};
        VideoStore vs = ingest_frames(frames, d);
        CHECK(vs.frame_count() == 13);
        CHECK(vs.width() == 24);
        CHECK(vs.height() == 16);
        CHECK(vs.video_id() == "vid");

        IoCounters io;
        auto got = drain(*vs.scan(std::nullopt, io));
        REQUIRE(got.size() == frames.size());
        for (size_t i = 0; i < frames.size(); i++) {
            CHECK(same_pixels(got[i], frames[i]));
            CHECK(got[i].video_id == "vid");
        }
    }
}

TEST_CASE("reopened stores behave like freshly ingested ones") {
    TempDir tmp;
    auto frames = test_frames(9);
    for (Layout l : {Layout::frame_file, Layout::encoded_file, Layout::segmented_file}) {
        std::string path = tmp.file(std::string("ro_") + layout_name(l));
        StoreDescriptor d{l, CodecConfig::lossless(), 4, path};
        ingest_frames(frames, d);

        VideoStore vs = VideoStore::open(path);
        CHECK(vs.descriptor().layout == l);
        CHECK(vs.descriptor().clip_len == 4);
        CHECK(vs.frame_count() == 9);
        IoCounters io;
        auto got = drain(*vs.scan(std::nullopt, io));
        REQUIRE(got.size() == 9);
        for (size_t i = 0; i < 9; i++) CHECK(same_pixels(got[i], frames[i]));
    }
}

TEST_CASE("lossy stores decode to the quantized pixels exactly") {
    TempDir tmp;
    auto frames = test_frames(6);
    for (const char* q : {"high", "medium", "low"}) {
        CodecConfig codec = CodecConfig::from_quality(q);
        StoreDescriptor d{Layout::encoded_file, codec, 4, tmp.file(std::string("q") + q)};
        VideoStore vs = ingest_frames(frames, d);
        IoCounters io;
        auto got = drain(*vs.scan(std::nullopt, io));
        REQUIRE(got.size() == frames.size());
        for (size_t i = 0; i < frames.size(); i++)
            for (size_t j = 0; j < frames[i].pixels.size(); j++)
                CHECK(got[i].pixels[j] ==
                      quantize_pixel(frames[i].pixels[j], codec.quant_step));
    }
}

TEST_CASE("scan ranges are half-open and clamped") {
    TempDir tmp;
    auto frames = test_frames(20);
    for (Layout l : {Layout::frame_file, Layout::encoded_file, Layout::segmented_file}) {
        StoreDescriptor d{l, CodecConfig::lossless(), 8,
                          tmp.file(std::string("r_") + layout_name(l))};
        VideoStore vs = ingest_frames(frames, d);

        IoCounters io;
        auto got = drain(*vs.scan(std::make_pair<uint64_t, uint64_t>(5, 12), io));
        REQUIRE(got.size() == 7);
        for (size_t i = 0; i < got.size(); i++) CHECK(same_pixels(got[i], frames[5 + i]));

        // High bound beyond the end clamps.
        auto tail = drain(*vs.scan(std::make_pair<uint64_t, uint64_t>(18, 99), io));
        REQUIRE(tail.size() == 2);
        CHECK(tail[0].frame_no == 18);

        // Degenerate ranges are rejected; fully out-of-range is empty.
        CHECK_THROWS_AS(vs.scan(std::make_pair<uint64_t, uint64_t>(4, 4), io), ConfigError);
        CHECK_THROWS_AS(vs.scan(std::make_pair<uint64_t, uint64_t>(9, 3), io), ConfigError);
        CHECK(drain(*vs.scan(std::make_pair<uint64_t, uint64_t>(25, 30), io)).empty());
    }
}

TEST_CASE("random access matches scan on every layout and quality") {
    TempDir tmp;
    auto frames = test_frames(11);
    for (Layout l : {Layout::frame_file, Layout::encoded_file, Layout::segmented_file}) {
        for (const char* q : {"lossless", "medium"}) {
            StoreDescriptor d{l, CodecConfig::from_quality(q), 4,
                              tmp.file(std::string("ra_") + layout_name(l) + q)};
            VideoStore vs = ingest_frames(frames, d);
            IoCounters scan_io;
            auto all = drain(*vs.scan(std::nullopt, scan_io));
            for (uint64_t no : {uint64_t{0}, uint64_t{3}, uint64_t{10}}) {
                IoCounters io;
                Frame f = vs.random_access(no, io);
                CHECK(same_pixels(f, all[no]));
            }
            IoCounters io;
            CHECK_THROWS_AS(vs.random_access(11, io), MissingFrameError);
        }
    }
}

TEST_CASE("io counters reflect the layout's access pattern") {
    TempDir tmp;
    auto frames = test_frames(20);

    StoreDescriptor raw{Layout::frame_file, CodecConfig::lossless(), 4, tmp.file("c_raw")};
    VideoStore vraw = ingest_frames(frames, raw);
    IoCounters io;
    drain(*vraw.scan(std::make_pair<uint64_t, uint64_t>(5, 12), io));
    CHECK(io.records_read == 7);   // one record per frame in range
    CHECK(io.frames_decoded == 0); // raw records are not codec decodes
    CHECK(io.bytes_read > 0);

    io = {};
    vraw.random_access(9, io);
    CHECK(io.records_read == 1);
    CHECK(io.frames_decoded == 0);

    StoreDescriptor enc{Layout::encoded_file, CodecConfig::lossless(), 4, tmp.file("c_enc")};
    VideoStore venc = ingest_frames(frames, enc);
    io = {};
    drain(*venc.scan(std::make_pair<uint64_t, uint64_t>(5, 12), io));
    CHECK(io.records_read == 1);    // the single sequential blob
    CHECK(io.frames_decoded == 12); // must decode from frame 0 through hi
    io = {};
    venc.random_access(9, io);
    CHECK(io.records_read == 1);
    CHECK(io.frames_decoded == 10);

    StoreDescriptor seg{Layout::segmented_file, CodecConfig::lossless(), 4, tmp.file("c_seg")};
    VideoStore vseg = ingest_frames(frames, seg);
    io = {};
    drain(*vseg.scan(std::make_pair<uint64_t, uint64_t>(5, 12), io));
    CHECK(io.records_read == 2);    // clips [4,8) and [8,12)
    CHECK(io.frames_decoded == 8);  // both clips decode in full
    io = {};
    vseg.random_access(9, io);
    CHECK(io.records_read == 1);
    CHECK(io.frames_decoded == 2);  // frames 8 and 9 of the owning clip
}

TEST_CASE("segmented stores hold ceil(n / clip_len) clip records") {
    TempDir tmp;
    auto frames = test_frames(10);
    StoreDescriptor d{Layout::segmented_file, CodecConfig::lossless(), 4, tmp.file("seg")};
    VideoStore vs = ingest_frames(frames, d);
    IoCounters io;
    auto got = drain(*vs.scan(std::nullopt, io));
    CHECK(got.size() == 10);
    CHECK(io.records_read == 3);  // 4 + 4 + 2
}

TEST_CASE("ingest validation") {
    TempDir tmp;
    StoreDescriptor d{Layout::frame_file, CodecConfig::lossless(), 4, tmp.file("v")};

    // Out-of-order frame numbers.
    {
        auto frames = test_frames(3);
        std::swap(frames[1], frames[2]);
        VectorStream<Frame> s(frames);
        CHECK_THROWS_AS(VideoStore::ingest(s, d), OutOfOrderFrameError);
    }
    // A gap is also out of order.
    {
        auto frames = test_frames(3);
        frames.erase(frames.begin() + 1);
        VectorStream<Frame> s(frames);
        CHECK_THROWS_AS(VideoStore::ingest(s, d), OutOfOrderFrameError);
    }
    // Mid-video resize.
    {
        auto frames = test_frames(2);
        frames.push_back(oracle::textured_frame("vid", 2, 10, 10));
        VectorStream<Frame> s(frames);
        CHECK_THROWS_AS(VideoStore::ingest(s, d), ConfigError);
    }
    // Pixel buffer inconsistent with dimensions.
    {
        auto frames = test_frames(1);
        frames[0].pixels.pop_back();
        VectorStream<Frame> s(frames);
        CHECK_THROWS_AS(VideoStore::ingest(s, d), ConfigError);
    }
    // clip_len 0.
    {
        auto frames = test_frames(1);
        VectorStream<Frame> s(frames);
        StoreDescriptor bad = d;
        bad.clip_len = 0;
        CHECK_THROWS_AS(VideoStore::ingest(s, bad), ConfigError);
    }
}

TEST_CASE("ingest is byte-deterministic") {
    TempDir tmp;
    auto frames = test_frames(8);
    for (Layout l : {Layout::frame_file, Layout::encoded_file, Layout::segmented_file}) {
        std::string pa = tmp.file(std::string("da_") + layout_name(l));
        std::string pb = tmp.file(std::string("db_") + layout_name(l));
        ingest_frames(frames, {l, CodecConfig::lossless(), 4, pa});
        ingest_frames(frames, {l, CodecConfig::lossless(), 4, pb});
        std::ifstream fa(pa, std::ios::binary), fb(pb, std::ios::binary);
        std::string ba((std::istreambuf_iterator<char>(fa)), {});
        std::string bb((std::istreambuf_iterator<char>(fb)), {});
        CHECK(ba == bb);
    }
}

TEST_CASE("encoded layouts compress repetitive video") {
    TempDir tmp;
    // Mostly-static frames: a textured background with a small moving dot.
    std::vector<Frame> frames;
    Frame bg = oracle::textured_frame("vid", 0, 64, 48);
    for (uint64_t i = 0; i < 30; i++) {
        Frame f = bg;
        f.frame_no = i;
        f.at(10, static_cast<uint32_t>(2 * i), 0) = 255;
        frames.push_back(std::move(f));
    }
    VideoStore raw = ingest_frames(frames, {Layout::frame_file, CodecConfig::lossless(),
                                            8, tmp.file("sz_raw")});
    VideoStore enc = ingest_frames(frames, {Layout::encoded_file, CodecConfig::lossless(),
                                            8, tmp.file("sz_enc")});
    VideoStore seg = ingest_frames(frames, {Layout::segmented_file, CodecConfig::lossless(),
                                            8, tmp.file("sz_seg")});
    CHECK(enc.store_size() < raw.store_size());
    CHECK(seg.store_size() < raw.store_size());

    // Lossy quantization shrinks the stream further on this content.
    VideoStore low = ingest_frames(frames, {Layout::encoded_file, CodecConfig::lossy(64),
                                            8, tmp.file("sz_low")});
    CHECK(low.store_size() < enc.store_size());
}

TEST_CASE("empty ingest yields an openable zero-frame store") {
    TempDir tmp;
    VectorStream<Frame> s(std::vector<Frame>{});
    VideoStore vs = VideoStore::ingest(s, {Layout::frame_file, CodecConfig::lossless(),
                                           4, tmp.file("empty")});
    CHECK(vs.frame_count() == 0);
    IoCounters io;
    CHECK(drain(*vs.scan(std::nullopt, io)).empty());
    CHECK_THROWS_AS(vs.random_access(0, io), MissingFrameError);
}
