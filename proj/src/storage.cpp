#include "patchdb/storage.hpp"

#include <zlib.h>

#include <cstring>

namespace patchdb {

// ---------------------------------------------------------------------------
// Codec config

CodecConfig CodecConfig::from_quality(std::string_view name) {
    if (name == "lossless" || name == "none") return lossless();
    if (name == "high") return lossy(4);
    if (name == "medium") return lossy(16);
    if (name == "low") return lossy(64);
    throw ConfigError("unknown codec quality '" + std::string(name) +
                      "' (expected lossless, high, medium or low)");
}

void CodecConfig::validate() const {
    if (mode == CodecMode::lossless) {
        if (quant_step != 0)
            throw ConfigError("lossless codec must not set a quantization step");
        return;
    }
    if (quant_step != 4 && quant_step != 16 && quant_step != 64)
        throw ConfigError("lossy quantization step must be 4, 16 or 64");
}

const char* layout_name(Layout l) {
    switch (l) {
        case Layout::frame_file: return "frame_file";
        case Layout::encoded_file: return "encoded_file";
        case Layout::segmented_file: return "segmented_file";
    }
    return "?";
}

Layout layout_from_name(std::string_view name) {
    if (name == "frame_file") return Layout::frame_file;
    if (name == "encoded_file") return Layout::encoded_file;
    if (name == "segmented_file") return Layout::segmented_file;
    throw ConfigError("unknown storage layout '" + std::string(name) + "'");
}

const char* codec_mode_name(CodecMode m) {
    return m == CodecMode::lossless ? "lossless" : "lossy";
}

std::string quality_name(const CodecConfig& c) {
    if (c.mode == CodecMode::lossless) return "none";
    switch (c.quant_step) {
        case 4: return "high";
        case 16: return "medium";
        case 64: return "low";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// zlib plumbing

namespace {

class ZDeflater {
public:
    ZDeflater() {
        if (deflateInit(&zs_, Z_DEFAULT_COMPRESSION) != Z_OK)
            throw IoError("deflateInit failed");
    }
    ~ZDeflater() { deflateEnd(&zs_); }
    ZDeflater(const ZDeflater&) = delete;
    ZDeflater& operator=(const ZDeflater&) = delete;

    void feed(const void* p, size_t n) {
        zs_.next_in = static_cast<Bytef*>(const_cast<void*>(p));
        zs_.avail_in = static_cast<uInt>(n);
        while (zs_.avail_in > 0) pump(Z_NO_FLUSH);
    }

    std::string finish() {
        zs_.next_in = nullptr;
        zs_.avail_in = 0;
        int rc;
        do {
            rc = pump(Z_FINISH);
        } while (rc != Z_STREAM_END);
        return std::move(out_);
    }

private:
    int pump(int flush) {
        unsigned char tmp[1 << 16];
        zs_.next_out = tmp;
        zs_.avail_out = sizeof(tmp);
        int rc = deflate(&zs_, flush);
        if (rc == Z_STREAM_ERROR) throw IoError("deflate stream error");
        out_.append(reinterpret_cast<char*>(tmp), sizeof(tmp) - zs_.avail_out);
        return rc;
    }

    z_stream zs_{};
    std::string out_;
};

// Pull-style inflate over an owned compressed buffer so a scan can stop
// decoding as soon as it has the frames it needs.
class ZInflater {
public:
    explicit ZInflater(std::string compressed) : buf_(std::move(compressed)) {
        if (inflateInit(&zs_) != Z_OK) throw IoError("inflateInit failed");
        zs_.next_in = reinterpret_cast<Bytef*>(buf_.data());
        zs_.avail_in = static_cast<uInt>(buf_.size());
    }
    ~ZInflater() { inflateEnd(&zs_); }
    ZInflater(const ZInflater&) = delete;
    ZInflater& operator=(const ZInflater&) = delete;

    void read(uint8_t* out, size_t n) {
        zs_.next_out = out;
        zs_.avail_out = static_cast<uInt>(n);
        while (zs_.avail_out > 0) {
            if (end_) throw IoError("compressed stream ended early");
            int rc = inflate(&zs_, Z_NO_FLUSH);
            if (rc == Z_STREAM_END)
                end_ = true;
            else if (rc != Z_OK)
                throw IoError("inflate error " + std::to_string(rc));
        }
    }

private:
    std::string buf_;
    z_stream zs_{};
    bool end_ = false;
};

}  // namespace

std::string zlib_deflate(std::string_view raw) {
    ZDeflater d;
    d.feed(raw.data(), raw.size());
    return d.finish();
}

std::string zlib_inflate_all(std::string_view compressed) {
    z_stream zs{};
    if (inflateInit(&zs) != Z_OK) throw IoError("inflateInit failed");
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(compressed.data()));
    zs.avail_in = static_cast<uInt>(compressed.size());
    std::string out;
    unsigned char tmp[1 << 16];
    int rc;
    do {
        zs.next_out = tmp;
        zs.avail_out = sizeof(tmp);
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw IoError("inflate error " + std::to_string(rc));
        }
        out.append(reinterpret_cast<char*>(tmp), sizeof(tmp) - zs.avail_out);
    } while (rc != Z_STREAM_END);
    inflateEnd(&zs);
    return out;
}

// ---------------------------------------------------------------------------
// Clip codec: optional quantization, frame 0 intra, later frames as byte-wise
// wrapping deltas against the previous decoded frame, deflate over the lot.

namespace {

constexpr size_t kClipHeaderLen = 4 + 4 + 4 + 1 + 1;

class ClipEncoder {
public:
    ClipEncoder(uint32_t width, uint32_t height, CodecConfig codec)
        : w_(width), h_(height), codec_(codec) {}

    void add(const Frame& f) {
        const size_t n = f.pixels.size();
        std::vector<uint8_t> q(n);
        if (codec_.mode == CodecMode::lossy) {
            for (size_t i = 0; i < n; i++)
                q[i] = quantize_pixel(f.pixels[i], codec_.quant_step);
        } else {
            q = f.pixels;
        }
        if (frames_ == 0) {
            def_.feed(q.data(), n);
        } else {
            std::vector<uint8_t> delta(n);
            for (size_t i = 0; i < n; i++)
                delta[i] = static_cast<uint8_t>(q[i] - prev_[i]);
            def_.feed(delta.data(), n);
        }
        prev_ = std::move(q);
        frames_++;
    }

    uint32_t frames() const { return frames_; }

    std::string finish() {
        ByteWriter w;
        w.u32(frames_);
        w.u32(w_);
        w.u32(h_);
        w.u8(static_cast<uint8_t>(codec_.mode));
        w.u8(codec_.quant_step);
        std::string out = w.take();
        out += def_.finish();
        return out;
    }

private:
    uint32_t w_, h_;
    CodecConfig codec_;
    ZDeflater def_;
    std::vector<uint8_t> prev_;
    uint32_t frames_ = 0;
};

class ClipDecoder {
public:
    explicit ClipDecoder(std::string blob) {
        if (blob.size() < kClipHeaderLen) throw IoError("clip blob truncated");
        ByteReader r(blob.data(), kClipHeaderLen);
        frame_count_ = r.u32();
        w_ = r.u32();
        h_ = r.u32();
        r.u8();  // codec mode, informational for the decoder
        r.u8();  // quant step
        frame_bytes_ = static_cast<size_t>(w_) * h_ * 3;
        inf_ = std::make_unique<ZInflater>(blob.substr(kClipHeaderLen));
    }

    uint32_t frame_count() const { return frame_count_; }
    uint32_t width() const { return w_; }
    uint32_t height() const { return h_; }

    bool next(std::vector<uint8_t>& pixels) {
        if (decoded_ >= frame_count_) return false;
        pixels.resize(frame_bytes_);
        inf_->read(pixels.data(), frame_bytes_);
        if (decoded_ > 0)
            for (size_t i = 0; i < frame_bytes_; i++)
                pixels[i] = static_cast<uint8_t>(pixels[i] + prev_[i]);
        prev_ = pixels;
        decoded_++;
        return true;
    }

private:
    uint32_t frame_count_ = 0, w_ = 0, h_ = 0;
    size_t frame_bytes_ = 0;
    std::unique_ptr<ZInflater> inf_;
    std::vector<uint8_t> prev_;
    uint32_t decoded_ = 0;
};

std::string build_frame_record(const Frame& f) {
    ByteWriter w;
    w.u32(f.width);
    w.u32(f.height);
    w.u8(f.channels);
    w.u8(0);  // encoding: raw
    std::string out = w.take();
    out.append(reinterpret_cast<const char*>(f.pixels.data()), f.pixels.size());
    return out;
}

Frame parse_frame_record(std::string video_id, uint64_t frame_no,
                         const std::string& value) {
    Frame f;
    f.video_id = std::move(video_id);
    f.frame_no = frame_no;
    ByteReader r(value);
    f.width = r.u32();
    f.height = r.u32();
    f.channels = r.u8();
    uint8_t enc = r.u8();
    if (enc != 0) throw IoError("unknown frame record encoding byte");
    size_t n = static_cast<size_t>(f.width) * f.height * f.channels;
    if (r.remaining() != n) throw IoError("frame record has wrong pixel count");
    f.pixels.resize(n);
    r.raw(f.pixels.data(), n);
    return f;
}

std::string build_descriptor(const StoreDescriptor& desc, const std::string& video_id,
                             uint64_t frame_count, uint32_t width, uint32_t height) {
    ByteWriter w;
    w.u8(static_cast<uint8_t>(desc.layout));
    w.u8(static_cast<uint8_t>(desc.codec.mode));
    w.u8(desc.codec.quant_step);
    w.u32(desc.clip_len);
    w.u32(width);
    w.u32(height);
    w.u64(frame_count);
    w.str8(video_id);
    return w.take();
}

}  // namespace

// ---------------------------------------------------------------------------
// VideoStore

VideoStore VideoStore::ingest(Stream<Frame>& frames, const StoreDescriptor& desc) {
    desc.codec.validate();
    if (desc.clip_len < 1) throw ConfigError("clip_len must be at least 1");

    VideoStore vs;
    vs.desc_ = desc;
    auto rs = RecordStore::create(desc.path);

    std::unique_ptr<ClipEncoder> enc;
    uint64_t clip_start = 0;
    uint64_t expected = 0;

    while (auto f = frames.next()) {
        if (f->frame_no != expected)
            throw OutOfOrderFrameError("expected frame " + std::to_string(expected) +
                                       ", got " + std::to_string(f->frame_no));
        if (f->channels != 3) throw ConfigError("only 3-channel frames are supported");
        if (f->pixels.size() !=
            static_cast<size_t>(f->width) * f->height * f->channels)
            throw ConfigError("frame pixel buffer does not match its dimensions");
        if (expected == 0) {
            vs.width_ = f->width;
            vs.height_ = f->height;
            vs.video_id_ = f->video_id;
        } else if (f->width != vs.width_ || f->height != vs.height_) {
            throw ConfigError("frame size changed mid-video");
        }

        switch (desc.layout) {
            case Layout::frame_file:
                rs->put(RecordStore::key_u64(f->frame_no), build_frame_record(*f));
                break;
            case Layout::encoded_file:
                if (!enc) enc = std::make_unique<ClipEncoder>(vs.width_, vs.height_,
                                                              desc.codec);
                enc->add(*f);
                break;
            case Layout::segmented_file:
                if (!enc) {
                    enc = std::make_unique<ClipEncoder>(vs.width_, vs.height_,
                                                        desc.codec);
                    clip_start = f->frame_no;
                }
                enc->add(*f);
                if (enc->frames() == desc.clip_len) {
                    rs->put(RecordStore::key_u64(clip_start), enc->finish());
                    enc.reset();
                }
                break;
        }
        expected++;
    }

    if (enc) {
        uint64_t key = desc.layout == Layout::encoded_file ? 0 : clip_start;
        rs->put(RecordStore::key_u64(key), enc->finish());
    }

    vs.frame_count_ = expected;
    rs->put(RecordStore::descriptor_key(),
            build_descriptor(desc, vs.video_id_, expected, vs.width_, vs.height_));
    rs->finalize();
    vs.rs_ = std::move(rs);
    return vs;
}

VideoStore VideoStore::open(const std::string& path) {
    VideoStore vs;
    vs.rs_ = RecordStore::open(path);
    auto raw = vs.rs_->get(RecordStore::descriptor_key());
    if (!raw) throw IoError("store " + path + " has no descriptor record");
    ByteReader r(*raw);
    vs.desc_.layout = static_cast<Layout>(r.u8());
    vs.desc_.codec.mode = static_cast<CodecMode>(r.u8());
    vs.desc_.codec.quant_step = r.u8();
    vs.desc_.clip_len = r.u32();
    vs.width_ = r.u32();
    vs.height_ = r.u32();
    vs.frame_count_ = r.u64();
    vs.video_id_ = r.str8();
    vs.desc_.path = path;
    return vs;
}

std::unique_ptr<Stream<Frame>> VideoStore::scan(
    std::optional<std::pair<uint64_t, uint64_t>> range, IoCounters& io) const {
    uint64_t lo = 0, hi = frame_count_;
    if (range) {
        if (range->first >= range->second)
            throw ConfigError("scan range low bound must be below high bound");
        lo = std::min(range->first, frame_count_);
        hi = std::min(range->second, frame_count_);
    }
    if (lo >= hi) return std::make_unique<VectorStream<Frame>>(std::vector<Frame>{});

    switch (desc_.layout) {
        case Layout::frame_file: {
            auto cursor =
                rs_->scan(RecordStore::key_u64(lo), RecordStore::key_u64(hi));
            return make_stream<Frame>(
                [cursor = std::move(cursor), &io,
                 vid = video_id_]() mutable -> std::optional<Frame> {
                    std::string k, v;
                    if (!cursor.next(k, v)) return std::nullopt;
                    io.records_read++;
                    io.bytes_read += v.size();
                    return parse_frame_record(vid, RecordStore::key_u64_decode(k), v);
                });
        }

        case Layout::encoded_file: {
            auto blob = rs_->get(RecordStore::key_u64(0));
            if (!blob)
                return std::make_unique<VectorStream<Frame>>(std::vector<Frame>{});
            io.records_read++;
            io.bytes_read += blob->size();
            auto dec = std::make_unique<ClipDecoder>(std::move(*blob));
            // The sequential codec cannot seek; decode from frame 0 and stop
            // once hi frames have been produced.
            return make_stream<Frame>(
                [dec = std::move(dec), &io, lo, hi, no = uint64_t{0},
                 vid = video_id_]() mutable -> std::optional<Frame> {
                    std::vector<uint8_t> pixels;
                    while (no < hi && dec->next(pixels)) {
                        io.frames_decoded++;
                        uint64_t cur = no++;
                        if (cur >= lo) {
                            Frame f;
                            f.video_id = vid;
                            f.frame_no = cur;
                            f.width = dec->width();
                            f.height = dec->height();
                            f.pixels = std::move(pixels);
                            return f;
                        }
                    }
                    return std::nullopt;
                });
        }

        case Layout::segmented_file: {
            uint64_t clip = desc_.clip_len;
            struct State {
                std::shared_ptr<RecordStore> rs;
                std::unique_ptr<ClipDecoder> dec;
                uint64_t clip_start, next_clip, clip_len, lo, hi, cur = 0;
                std::string vid;
            };
            auto st = std::make_shared<State>();
            st->rs = rs_;
            st->next_clip = lo / clip * clip;
            st->clip_len = clip;
            st->lo = lo;
            st->hi = hi;
            st->vid = video_id_;
            return make_stream<Frame>([st, &io]() mutable -> std::optional<Frame> {
                std::vector<uint8_t> pixels;
                for (;;) {
                    if (!st->dec) {
                        if (st->next_clip >= st->hi) return std::nullopt;
                        auto blob = st->rs->get(RecordStore::key_u64(st->next_clip));
                        if (!blob) return std::nullopt;
                        io.records_read++;
                        io.bytes_read += blob->size();
                        st->dec = std::make_unique<ClipDecoder>(std::move(*blob));
                        st->clip_start = st->next_clip;
                        st->cur = st->next_clip;
                        st->next_clip += st->clip_len;
                    }
                    // Clips decode in full; only frames inside the range are
                    // handed upward.
                    while (st->dec->next(pixels)) {
                        io.frames_decoded++;
                        uint64_t no = st->cur++;
                        if (no >= st->lo && no < st->hi) {
                            Frame f;
                            f.video_id = st->vid;
                            f.frame_no = no;
                            f.width = st->dec->width();
                            f.height = st->dec->height();
                            f.pixels = std::move(pixels);
                            return f;
                        }
                    }
                    st->dec.reset();
                }
            });
        }
    }
    throw Error("unreachable storage layout");
}

Frame VideoStore::random_access(uint64_t frame_no, IoCounters& io) const {
    if (frame_no >= frame_count_)
        throw MissingFrameError("frame " + std::to_string(frame_no) +
                                " is not stored (video has " +
                                std::to_string(frame_count_) + " frames)");

    switch (desc_.layout) {
        case Layout::frame_file: {
            auto v = rs_->get(RecordStore::key_u64(frame_no));
            if (!v) throw MissingFrameError("frame record missing");
            io.records_read++;
            io.bytes_read += v->size();
            return parse_frame_record(video_id_, frame_no, *v);
        }
        case Layout::encoded_file:
        case Layout::segmented_file: {
            uint64_t clip_start = 0;
            if (desc_.layout == Layout::segmented_file)
                clip_start = frame_no / desc_.clip_len * desc_.clip_len;
            auto blob = rs_->get(RecordStore::key_u64(clip_start));
            if (!blob) throw MissingFrameError("clip record missing");
            io.records_read++;
            io.bytes_read += blob->size();
            ClipDecoder dec(std::move(*blob));
            std::vector<uint8_t> pixels;
            // Deltas force sequential decode up to the requested offset;
            // the rest of the clip is left undecoded.
            for (uint64_t no = clip_start; no <= frame_no; no++) {
                if (!dec.next(pixels)) throw MissingFrameError("clip ended early");
                io.frames_decoded++;
            }
            Frame f;
            f.video_id = video_id_;
            f.frame_no = frame_no;
            f.width = dec.width();
            f.height = dec.height();
            f.pixels = std::move(pixels);
            return f;
        }
    }
    throw Error("unreachable storage layout");
}

}  // namespace patchdb
