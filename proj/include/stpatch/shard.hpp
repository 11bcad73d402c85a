#ifndef STPATCH_SHARD_HPP
#define STPATCH_SHARD_HPP

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

#include "core.hpp"

/**
 * @file shard.hpp
 * @brief Deterministic binary serialization of patch datasets with a JSON
 * manifest recording full provenance.
 *
 * Shard layout (all integers little-endian):
 *   header: magic "STPZ", version u32, h u32, w u32, m u32, K u32,
 *           record_count u32, value_type u32 (0 = 32-bit real LE)
 *   record: slice_id length u32 + UTF-8 bytes,
 *           origin o_x, o_y (2 x u32),
 *           gene indices (m x u32, strictly ascending),
 *           occupancy bitmask (ceil(h*w/8) bytes, row-major, LSB-first),
 *           values (h*w*m f32 LE, [u][v][k] order).
 *
 * The same inputs, parameters and seed always produce byte-identical shard
 * files; the manifest carries a SHA-256 digest per shard so corruption is
 * detected before any record of that shard is yielded.
 */

namespace stpatch {

inline constexpr char kShardMagic[4] = {'S', 'T', 'P', 'Z'};
inline constexpr std::uint32_t kShardVersion = 1;

namespace detail {

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
            throw std::runtime_error("SHA-256 init failed");
        }
    }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;
    ~Sha256() { EVP_MD_CTX_free(ctx_); }

    void update(const void* data, std::size_t len) {
        if (EVP_DigestUpdate(ctx_, data, len) != 1) {
            throw std::runtime_error("SHA-256 update failed");
        }
    }

    std::string hex() {
        unsigned char md[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx_, md, &len) != 1) {
            throw std::runtime_error("SHA-256 final failed");
        }
        static const char* digits = "0123456789abcdef";
        std::string out;
        out.reserve(2 * len);
        for (unsigned int i = 0; i < len; ++i) {
            out.push_back(digits[md[i] >> 4]);
            out.push_back(digits[md[i] & 0xf]);
        }
        return out;
    }

private:
    EVP_MD_CTX* ctx_;
};

inline void append_u32_le(std::vector<char>& buf, std::uint32_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
    buf.push_back(static_cast<char>((v >> 16) & 0xff));
    buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void append_f32_le(std::vector<char>& buf, const float* values, std::size_t count) {
    const std::size_t start = buf.size();
    buf.resize(start + count * 4);
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(buf.data() + start, values, count * 4);
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            std::uint32_t bits;
            std::memcpy(&bits, values + i, 4);
            buf[start + 4 * i + 0] = static_cast<char>(bits & 0xff);
            buf[start + 4 * i + 1] = static_cast<char>((bits >> 8) & 0xff);
            buf[start + 4 * i + 2] = static_cast<char>((bits >> 16) & 0xff);
            buf[start + 4 * i + 3] = static_cast<char>((bits >> 24) & 0xff);
        }
    }
}

inline std::uint32_t read_u32_le(const unsigned char* b) {
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace detail

/// Streaming SHA-256 of a file, hex-encoded.
inline std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open '" + path + "' for hashing");
    }
    detail::Sha256 hash;
    std::vector<char> buf(1 << 20);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        hash.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return hash.hex();
}

/// Digest of a gene vocabulary: SHA-256 of the names joined by newlines.
inline std::string vocabulary_digest(const std::vector<std::string>& names) {
    detail::Sha256 hash;
    for (const auto& name : names) {
        hash.update(name.data(), name.size());
        hash.update("\n", 1);
    }
    return hash.hex();
}

struct ShardInfo {
    std::string file; // relative to the manifest directory
    std::uint64_t records = 0;
    std::string sha256;
};

/// Full provenance of a dataset; everything needed to reproduce it bit-exactly.
struct Manifest {
    std::string toolkit_version;
    std::string mode = "patch"; // "patch" or "spot"
    std::uint64_t seed = 0;
    std::uint32_t samples_per_slice = 0; // n_s (patch mode)
    std::uint32_t h = 0, w = 0, m = 0, K = 0;
    std::string selection_mode = "weighted";
    double epsilon = 1e-8;
    bool loss_on_holes = false;
    double mask_ratio = 0.3;
    bool log1p = false;
    std::string vocab_file; // relative path, one gene name per line
    std::string vocab_digest;
    std::uint64_t record_count = 0;
    std::uint64_t skipped_slices = 0;
    std::vector<ShardInfo> shards;
    nlohmann::json inputs = nlohmann::json::array(); // slice sources, echoed for reproduction
};

inline void save_manifest(const Manifest& manifest, const std::string& path) {
    nlohmann::json doc;
    doc["toolkit_version"] = manifest.toolkit_version;
    doc["mode"] = manifest.mode;
    doc["seed"] = manifest.seed;
    doc["n_s"] = manifest.samples_per_slice;
    doc["h"] = manifest.h;
    doc["w"] = manifest.w;
    doc["m"] = manifest.m;
    doc["K"] = manifest.K;
    doc["selection"] = {{"mode", manifest.selection_mode}, {"epsilon", manifest.epsilon}};
    doc["mask_policy"] = {{"loss_on_holes", manifest.loss_on_holes},
                          {"default_ratio", manifest.mask_ratio}};
    doc["log1p"] = manifest.log1p;
    doc["vocab"] = {{"file", manifest.vocab_file}, {"sha256", manifest.vocab_digest},
                    {"size", manifest.K}};
    doc["records"] = manifest.record_count;
    doc["skipped_slices"] = manifest.skipped_slices;
    doc["inputs"] = manifest.inputs;
    auto shards = nlohmann::json::array();
    for (const auto& s : manifest.shards) {
        shards.push_back({{"file", s.file}, {"records", s.records}, {"sha256", s.sha256}});
    }
    doc["shards"] = shards;
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    out << doc.dump(2) << '\n';
    if (!out) {
        throw std::runtime_error("write failed for '" + path + "'");
    }
}

inline Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open manifest '" + path + "'");
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("manifest '" + path + "' is not valid JSON: " + e.what());
    }
    try {
        Manifest m;
        m.toolkit_version = doc.at("toolkit_version").get<std::string>();
        m.mode = doc.at("mode").get<std::string>();
        m.seed = doc.at("seed").get<std::uint64_t>();
        m.samples_per_slice = doc.at("n_s").get<std::uint32_t>();
        m.h = doc.at("h").get<std::uint32_t>();
        m.w = doc.at("w").get<std::uint32_t>();
        m.m = doc.at("m").get<std::uint32_t>();
        m.K = doc.at("K").get<std::uint32_t>();
        m.selection_mode = doc.at("selection").at("mode").get<std::string>();
        m.epsilon = doc.at("selection").at("epsilon").get<double>();
        m.loss_on_holes = doc.at("mask_policy").at("loss_on_holes").get<bool>();
        m.mask_ratio = doc.at("mask_policy").at("default_ratio").get<double>();
        m.log1p = doc.value("log1p", false);
        m.vocab_file = doc.at("vocab").at("file").get<std::string>();
        m.vocab_digest = doc.at("vocab").at("sha256").get<std::string>();
        m.record_count = doc.at("records").get<std::uint64_t>();
        m.skipped_slices = doc.at("skipped_slices").get<std::uint64_t>();
        m.inputs = doc.value("inputs", nlohmann::json::array());
        for (const auto& s : doc.at("shards")) {
            m.shards.push_back({s.at("file").get<std::string>(),
                                s.at("records").get<std::uint64_t>(),
                                s.at("sha256").get<std::string>()});
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("manifest '" + path + "' is missing fields: " + e.what());
    }
}

/**
 * @brief Streaming writer: appends records, rolling over to a new shard
 * every `records_per_shard`, and reports per-shard digests on finish().
 *
 * A shape mismatch mid-stream deletes the partially written shard before
 * throwing. finish() on an empty stream still emits one record-free shard so
 * a dataset is never shard-less.
 */
class ShardWriter {
public:
    struct Params {
        std::uint32_t h = 0, w = 0, m = 0, K = 0;
        std::uint64_t records_per_shard = 1024;
    };

    ShardWriter(std::string dir, const Params& params) : dir_(std::move(dir)), params_(params) {
        if (params_.records_per_shard == 0) {
            throw std::invalid_argument("records_per_shard must be positive");
        }
        std::filesystem::create_directories(dir_);
    }

    ShardWriter(const ShardWriter&) = delete;
    ShardWriter& operator=(const ShardWriter&) = delete;

    ~ShardWriter() {
        if (out_.is_open()) {
            discard_current();
        }
    }

    void append(const PatchSample& sample) {
        validate(sample);
        if (!out_.is_open()) {
            open_next();
        }
        buf_.clear();
        detail::append_u32_le(buf_, static_cast<std::uint32_t>(sample.slice_id.size()));
        buf_.insert(buf_.end(), sample.slice_id.begin(), sample.slice_id.end());
        detail::append_u32_le(buf_, sample.origin_x);
        detail::append_u32_le(buf_, sample.origin_y);
        for (std::uint32_t g : sample.genes) {
            detail::append_u32_le(buf_, g);
        }
        const std::size_t sites = static_cast<std::size_t>(params_.h) * params_.w;
        const std::size_t mask_bytes = (sites + 7) / 8;
        const std::size_t mask_start = buf_.size();
        buf_.resize(mask_start + mask_bytes, 0);
        for (std::size_t s = 0; s < sites; ++s) {
            if (sample.occupied[s]) {
                buf_[mask_start + (s >> 3)] |= static_cast<char>(1u << (s & 7));
            }
        }
        detail::append_f32_le(buf_, sample.values.data(), sample.values.size());
        out_.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!out_) {
            const std::string path = current_path_;
            discard_current();
            throw std::runtime_error("write failed for shard '" + path + "'");
        }
        ++current_records_;
        if (current_records_ == params_.records_per_shard) {
            close_current();
        }
    }

    /// Close the stream and return the shard list. Idempotent footprint: call once.
    std::vector<ShardInfo> finish() {
        if (!out_.is_open() && shards_.empty()) {
            open_next(); // a dataset always holds at least one (possibly empty) shard
        }
        if (out_.is_open()) {
            close_current();
        }
        return shards_;
    }

    std::uint64_t total_records() const { return total_records_; }

private:
    void validate(const PatchSample& sample) {
        const std::size_t sites = static_cast<std::size_t>(params_.h) * params_.w;
        const bool shape_ok = sample.h == params_.h && sample.w == params_.w &&
                              sample.m == params_.m && sample.genes.size() == params_.m &&
                              sample.occupied.size() == sites &&
                              sample.values.size() == sites * params_.m;
        if (!shape_ok) {
            discard_current();
            throw std::runtime_error("sample shape mismatch mid-stream (expected " +
                                     std::to_string(params_.h) + "x" + std::to_string(params_.w) +
                                     "x" + std::to_string(params_.m) + ")");
        }
        std::uint32_t prev = 0;
        for (std::size_t i = 0; i < sample.genes.size(); ++i) {
            if (sample.genes[i] >= params_.K || (i > 0 && sample.genes[i] <= prev)) {
                discard_current();
                throw std::runtime_error("sample gene indices must be ascending and below K");
            }
            prev = sample.genes[i];
        }
    }

    void open_next() {
        char name[32];
        std::snprintf(name, sizeof(name), "shard-%05zu.stpz", shards_.size());
        current_name_ = name;
        current_path_ = (std::filesystem::path(dir_) / current_name_).string();
        out_.open(current_path_, std::ios::binary | std::ios::trunc);
        if (!out_) {
            throw std::runtime_error("cannot open shard '" + current_path_ + "' for writing");
        }
        // placeholder header; record_count is patched in close_current()
        write_header(0);
        current_records_ = 0;
    }

    void write_header(std::uint32_t record_count) {
        std::vector<char> head;
        head.insert(head.end(), kShardMagic, kShardMagic + 4);
        detail::append_u32_le(head, kShardVersion);
        detail::append_u32_le(head, params_.h);
        detail::append_u32_le(head, params_.w);
        detail::append_u32_le(head, params_.m);
        detail::append_u32_le(head, params_.K);
        detail::append_u32_le(head, record_count);
        detail::append_u32_le(head, 0); // value_type 0 = f32 little-endian
        out_.write(head.data(), static_cast<std::streamsize>(head.size()));
    }

    void close_current() {
        out_.seekp(0);
        write_header(static_cast<std::uint32_t>(current_records_));
        out_.close();
        if (out_.fail()) {
            throw std::runtime_error("close failed for shard '" + current_path_ + "'");
        }
        shards_.push_back({current_name_, current_records_, sha256_file(current_path_)});
        total_records_ += current_records_;
        out_.clear();
    }

    void discard_current() {
        if (out_.is_open()) {
            out_.close();
            std::error_code ec;
            std::filesystem::remove(current_path_, ec);
        }
        out_.clear();
    }

    std::string dir_;
    Params params_;
    std::ofstream out_;
    std::string current_name_, current_path_;
    std::uint64_t current_records_ = 0;
    std::uint64_t total_records_ = 0;
    std::vector<char> buf_;
    std::vector<ShardInfo> shards_;
};

/**
 * @brief Streaming reader over a manifest's shards in written order.
 *
 * Each shard's SHA-256 is re-computed and checked against the manifest
 * before its first record is yielded; memory use is one record regardless
 * of dataset size.
 */
class ShardReader {
public:
    explicit ShardReader(const std::string& manifest_path)
        : manifest_(load_manifest(manifest_path)),
          dir_(std::filesystem::path(manifest_path).parent_path().string()) {}

    const Manifest& manifest() const { return manifest_; }

    std::optional<PatchSample> next() {
        for (;;) {
            if (!in_.is_open()) {
                if (shard_index_ >= manifest_.shards.size()) {
                    return std::nullopt;
                }
                open_shard(shard_index_);
            }
            if (records_read_ < shard_records_) {
                return read_record();
            }
            // drained; expect clean EOF
            if (in_.peek() != std::ifstream::traits_type::eof()) {
                fail("trailing bytes after final record");
            }
            in_.close();
            in_.clear();
            ++shard_index_;
        }
    }

private:
    [[noreturn]] void fail(const std::string& what) {
        if (!in_.good()) {
            in_.clear();
        }
        const long long pos = in_.is_open() ? static_cast<long long>(in_.tellg()) : 0;
        throw std::runtime_error("shard '" + shard_path_ + "' at byte " + std::to_string(pos) +
                                 ": " + what);
    }

    void open_shard(std::size_t index) {
        const auto& info = manifest_.shards[index];
        shard_path_ = (std::filesystem::path(dir_) / info.file).string();
        const std::string digest = sha256_file(shard_path_);
        if (digest != info.sha256) {
            throw std::runtime_error("shard '" + shard_path_ + "': digest mismatch (manifest " +
                                     info.sha256 + ", file " + digest + ")");
        }
        in_.open(shard_path_, std::ios::binary);
        if (!in_) {
            throw std::runtime_error("cannot open shard '" + shard_path_ + "'");
        }
        unsigned char head[32];
        in_.read(reinterpret_cast<char*>(head), sizeof(head));
        if (in_.gcount() != sizeof(head)) {
            fail("truncated header");
        }
        if (std::memcmp(head, kShardMagic, 4) != 0) {
            fail("bad magic");
        }
        const std::uint32_t version = detail::read_u32_le(head + 4);
        if (version != kShardVersion) {
            fail("unsupported version " + std::to_string(version));
        }
        const std::uint32_t h = detail::read_u32_le(head + 8);
        const std::uint32_t w = detail::read_u32_le(head + 12);
        const std::uint32_t m = detail::read_u32_le(head + 16);
        const std::uint32_t K = detail::read_u32_le(head + 20);
        shard_records_ = detail::read_u32_le(head + 24);
        const std::uint32_t value_type = detail::read_u32_le(head + 28);
        if (h != manifest_.h || w != manifest_.w || m != manifest_.m || K != manifest_.K) {
            fail("header shape disagrees with manifest");
        }
        if (value_type != 0) {
            fail("unsupported value type " + std::to_string(value_type));
        }
        if (shard_records_ != info.records) {
            fail("header record count disagrees with manifest");
        }
        records_read_ = 0;
    }

    std::vector<unsigned char> read_exact(std::size_t n, const char* what) {
        std::vector<unsigned char> buf(n);
        in_.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
        if (in_.gcount() != static_cast<std::streamsize>(n)) {
            fail(std::string("truncated record (") + what + ")");
        }
        return buf;
    }

    PatchSample read_record() {
        PatchSample sample;
        sample.h = manifest_.h;
        sample.w = manifest_.w;
        sample.m = manifest_.m;

        auto len_bytes = read_exact(4, "id length");
        const std::uint32_t id_len = detail::read_u32_le(len_bytes.data());
        if (id_len > (1u << 20)) {
            fail("implausible slice id length " + std::to_string(id_len));
        }
        auto id_bytes = read_exact(id_len, "slice id");
        sample.slice_id.assign(id_bytes.begin(), id_bytes.end());

        auto origin = read_exact(8, "origin");
        sample.origin_x = detail::read_u32_le(origin.data());
        sample.origin_y = detail::read_u32_le(origin.data() + 4);

        auto gene_bytes = read_exact(static_cast<std::size_t>(sample.m) * 4, "gene indices");
        sample.genes.resize(sample.m);
        for (std::uint32_t i = 0; i < sample.m; ++i) {
            sample.genes[i] = detail::read_u32_le(gene_bytes.data() + 4 * i);
            if (sample.genes[i] >= manifest_.K || (i > 0 && sample.genes[i] <= sample.genes[i - 1])) {
                fail("gene indices not ascending below K");
            }
        }

        const std::size_t sites = static_cast<std::size_t>(sample.h) * sample.w;
        auto mask_bytes = read_exact((sites + 7) / 8, "occupancy bitmask");
        sample.occupied.resize(sites);
        for (std::size_t s = 0; s < sites; ++s) {
            sample.occupied[s] = (mask_bytes[s >> 3] >> (s & 7)) & 1u;
        }
        for (std::size_t b = sites; b < mask_bytes.size() * 8; ++b) {
            if ((mask_bytes[b >> 3] >> (b & 7)) & 1u) {
                fail("nonzero padding bit in occupancy bitmask");
            }
        }

        auto value_bytes = read_exact(sites * sample.m * 4, "values");
        sample.values.resize(sites * sample.m);
        if constexpr (std::endian::native == std::endian::little) {
            std::memcpy(sample.values.data(), value_bytes.data(), value_bytes.size());
        } else {
            for (std::size_t i = 0; i < sample.values.size(); ++i) {
                const std::uint32_t bits = detail::read_u32_le(value_bytes.data() + 4 * i);
                std::memcpy(&sample.values[i], &bits, 4);
            }
        }
        ++records_read_;
        return sample;
    }

    Manifest manifest_;
    std::string dir_;
    std::size_t shard_index_ = 0;
    std::ifstream in_;
    std::string shard_path_;
    std::uint64_t shard_records_ = 0;
    std::uint64_t records_read_ = 0;
};

/// Convenience one-shot writer used by tests and small tools.
inline std::vector<ShardInfo> write_shards(const std::vector<PatchSample>& samples,
                                           const std::string& dir, const ShardWriter::Params& params) {
    ShardWriter writer(dir, params);
    for (const auto& sample : samples) {
        writer.append(sample);
    }
    return writer.finish();
}

} // namespace stpatch

#endif
