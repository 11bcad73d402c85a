#ifndef STPATCH_PIPELINE_HPP
#define STPATCH_PIPELINE_HPP

#include <algorithm>
#include <array>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "compact.hpp"
#include "core.hpp"
#include "crop.hpp"
#include "genesel.hpp"
#include "ingest.hpp"
#include "rng.hpp"
#include "shard.hpp"
#include "version.hpp"

/**
 * @file pipeline.hpp
 * @brief End-to-end dataset construction: rasterize each slice, draw n_s
 * windows, select gene channels, and stream the samples into shards with a
 * provenance manifest.
 *
 * Slices are processed by a bounded worker pool but consumed in slice order,
 * and every random draw comes from a stream derived from (seed, slice id,
 * sample index), so the emitted bytes are identical for any worker count.
 * Peak memory is bounded by a few slices in flight, not by corpus size.
 *
 * Slices smaller than the window are skipped with a counted warning rather
 * than zero-padded; padding would fabricate measurements. A window that
 * lands entirely on holes gets an all-zero variance vector (selection then
 * degenerates gracefully) and is emitted as the all-zero sample it is.
 */

namespace stpatch {

/// Names one input slice: a dense CSV file, a triplet, or a synthetic spec.
struct SliceSpec {
    enum class Kind { dense_csv, triplet, synthetic };

    Kind kind = Kind::dense_csv;
    std::string id;
    std::string csv_path;
    std::string genes_path, spots_path, matrix_path;
    SyntheticConfig synth;

    static SliceSpec csv(std::string path, std::string id = "") {
        SliceSpec spec;
        spec.kind = Kind::dense_csv;
        spec.csv_path = std::move(path);
        spec.id = std::move(id);
        return spec;
    }
    static SliceSpec triplet(std::string genes, std::string spots, std::string matrix,
                             std::string id = "") {
        SliceSpec spec;
        spec.kind = Kind::triplet;
        spec.genes_path = std::move(genes);
        spec.spots_path = std::move(spots);
        spec.matrix_path = std::move(matrix);
        spec.id = std::move(id);
        return spec;
    }
    static SliceSpec synthetic(const SyntheticConfig& cfg, std::string id) {
        SliceSpec spec;
        spec.kind = Kind::synthetic;
        spec.synth = cfg;
        spec.id = std::move(id);
        return spec;
    }
};

struct BuildConfig {
    std::uint32_t h = 16;
    std::uint32_t w = 16;
    std::uint32_t m = 512;
    std::uint32_t n_s = 64;
    SelectionMode selection = SelectionMode::weighted();
    std::uint64_t seed = 0;
    std::uint64_t records_per_shard = 1024;
    bool loss_on_holes = false;
    double mask_ratio = 0.3;
    bool log1p = false;
    std::uint32_t workers = 1;
    std::string out_dir;
};

/// Load the slice behind a spec, with gene names local to that slice.
inline LoadedSlice load_slice(const SliceSpec& spec) {
    switch (spec.kind) {
        case SliceSpec::Kind::dense_csv:
            return read_dense_csv_slice(spec.csv_path, spec.id);
        case SliceSpec::Kind::triplet:
            return read_triplet_slice(spec.genes_path, spec.spots_path, spec.matrix_path, spec.id);
        default: {
            auto synth = generate_synthetic_slice(spec.synth, spec.id);
            return {std::move(synth.slice), synthetic_gene_names(spec.synth.genes)};
        }
    }
}

/// Gene names of a spec without loading expression data (CSV reads only the header).
inline std::vector<std::string> peek_gene_names(const SliceSpec& spec) {
    switch (spec.kind) {
        case SliceSpec::Kind::dense_csv: {
            std::ifstream in(spec.csv_path);
            if (!in) throw std::runtime_error("cannot open slice file '" + spec.csv_path + "'");
            std::string line;
            if (!std::getline(in, line)) {
                throw std::runtime_error(spec.csv_path + ": empty file");
            }
            line = detail::chomp(line);
            std::vector<std::string> names;
            std::stringstream header(line);
            std::string cell;
            while (std::getline(header, cell, ',')) names.push_back(cell);
            if (names.size() < 3 || names[0] != "x" || names[1] != "y") {
                throw std::runtime_error(spec.csv_path +
                                         ":1: header must start with 'x,y' followed by gene names");
            }
            return {names.begin() + 2, names.end()};
        }
        case SliceSpec::Kind::triplet: {
            std::ifstream in(spec.genes_path);
            if (!in) throw std::runtime_error("cannot open genes file '" + spec.genes_path + "'");
            std::vector<std::string> names;
            std::string line;
            while (std::getline(in, line)) {
                line = detail::chomp(line);
                if (!line.empty()) names.push_back(line);
            }
            if (names.empty()) throw std::runtime_error(spec.genes_path + ": no gene names");
            return names;
        }
        default:
            return synthetic_gene_names(spec.synth.genes);
    }
}

/// Union vocabulary over all specs, in first-appearance order.
inline GeneVocabulary collect_vocabulary(const std::vector<SliceSpec>& specs) {
    std::vector<std::string> all;
    for (const auto& spec : specs) {
        auto names = peek_gene_names(spec);
        all.insert(all.end(), names.begin(), names.end());
    }
    return build_vocabulary(all);
}

/// Remap a slice's sparse indices from its local gene list to the shared vocabulary.
inline void remap_to_vocabulary(LoadedSlice& loaded, const GeneVocabulary& vocab) {
    std::vector<std::uint32_t> map(loaded.gene_names.size());
    for (std::size_t g = 0; g < loaded.gene_names.size(); ++g) {
        auto it = vocab.index.find(loaded.gene_names[g]);
        if (it == vocab.index.end()) {
            throw std::runtime_error("gene '" + loaded.gene_names[g] + "' missing from vocabulary");
        }
        map[g] = it->second;
    }
    for (auto& spot : loaded.slice.spots) {
        for (auto& [g, v] : spot.values) {
            g = map[g];
        }
        std::sort(spot.values.begin(), spot.values.end());
    }
}

namespace detail {

struct SliceOutcome {
    std::vector<PatchSample> samples;
    bool skipped = false;
    std::string warning;
    std::exception_ptr error;
};

/// Slots consumed strictly in index order; put() applies backpressure once
/// the window of unconsumed slots reaches capacity.
class OrderedBuffer {
public:
    OrderedBuffer(std::size_t count, std::size_t capacity)
        : slots_(count), capacity_(capacity) {}

    void put(std::size_t index, SliceOutcome&& outcome) {
        std::unique_lock lock(mu_);
        cv_put_.wait(lock, [&] { return aborted_ || index < front_ + capacity_; });
        if (aborted_) return;
        slots_[index] = std::move(outcome);
        cv_get_.notify_all();
    }

    SliceOutcome take() {
        std::unique_lock lock(mu_);
        cv_get_.wait(lock, [&] { return slots_[front_].has_value(); });
        SliceOutcome outcome = std::move(*slots_[front_]);
        slots_[front_].reset();
        ++front_;
        cv_put_.notify_all();
        return outcome;
    }

    void abort() {
        std::lock_guard lock(mu_);
        aborted_ = true;
        cv_put_.notify_all();
    }

    bool aborted() const {
        std::lock_guard lock(mu_);
        return aborted_;
    }

private:
    mutable std::mutex mu_;
    std::condition_variable cv_put_, cv_get_;
    std::vector<std::optional<SliceOutcome>> slots_;
    std::size_t front_ = 0;
    std::size_t capacity_;
    bool aborted_ = false;
};

inline PatchSample gather_sample(const Window& win, const std::vector<std::uint32_t>& genes,
                                 std::uint32_t o_x, std::uint32_t o_y, const std::string& slice_id) {
    PatchSample sample;
    sample.h = win.h;
    sample.w = win.w;
    sample.m = static_cast<std::uint32_t>(genes.size());
    sample.origin_x = o_x;
    sample.origin_y = o_y;
    sample.slice_id = slice_id;
    sample.genes = genes;
    sample.occupied = win.occupied;
    sample.values.resize(static_cast<std::size_t>(win.h) * win.w * genes.size());
    const std::size_t sites = static_cast<std::size_t>(win.h) * win.w;
    for (std::size_t s = 0; s < sites; ++s) {
        const float* src = win.values.data() + s * win.channels;
        float* dst = sample.values.data() + s * genes.size();
        for (std::size_t k = 0; k < genes.size(); ++k) {
            dst[k] = src[genes[k]];
        }
    }
    return sample;
}

inline std::vector<double> window_variances(const Window& win) {
    const bool any_occupied =
        std::any_of(win.occupied.begin(), win.occupied.end(), [](std::uint8_t o) { return o != 0; });
    if (!any_occupied) {
        return std::vector<double>(win.channels, 0.0); // all-hole window
    }
    return per_gene_variance(win);
}

inline SliceOutcome process_patch_slice(const SliceSpec& spec, const GeneVocabulary& vocab,
                                        const BuildConfig& config) {
    SliceOutcome outcome;
    LoadedSlice loaded = load_slice(spec);
    if (config.log1p) {
        apply_log1p(loaded.slice);
    }
    remap_to_vocabulary(loaded, vocab);
    const CompactGrid grid = rasterize(loaded.slice, vocab);
    if (grid.height < config.h || grid.width < config.w) {
        outcome.skipped = true;
        outcome.warning = "slice '" + loaded.slice.id + "' (" + std::to_string(grid.height) + "x" +
                          std::to_string(grid.width) + ") smaller than window " +
                          std::to_string(config.h) + "x" + std::to_string(config.w) + "; skipped";
        return outcome;
    }
    outcome.samples.reserve(config.n_s);
    for (std::uint32_t r = 0; r < config.n_s; ++r) {
        Rng rng(derive_stream(config.seed, loaded.slice.id, r));
        const auto [o_x, o_y] = sample_window_origin(grid, config.h, config.w, rng);
        const Window win = extract_patch(grid, o_x, o_y, config.h, config.w);
        const auto variances = window_variances(win);
        auto genes = select_genes(variances, config.m, config.selection, rng);
        std::sort(genes.begin(), genes.end());
        outcome.samples.push_back(gather_sample(win, genes, o_x, o_y, loaded.slice.id));
    }
    return outcome;
}

inline SliceOutcome process_spot_slice(const SliceSpec& spec, const GeneVocabulary& vocab,
                                       const BuildConfig& config) {
    SliceOutcome outcome;
    LoadedSlice loaded = load_slice(spec);
    if (config.log1p) {
        apply_log1p(loaded.slice);
    }
    remap_to_vocabulary(loaded, vocab);
    const CompactGrid grid = rasterize(loaded.slice, vocab);
    outcome.samples.reserve(loaded.slice.spots.size());
    std::uint64_t ordinal = 0;
    std::vector<double> variances(vocab.size(), 0.0); // single-site variance is identically zero
    for (std::uint32_t row = 0; row < grid.height; ++row) {
        for (std::uint32_t col = 0; col < grid.width; ++col) {
            if (!grid.is_occupied(row, col)) continue;
            Rng rng(derive_stream(config.seed, loaded.slice.id, ordinal++));
            auto genes = select_genes(variances, config.m, config.selection, rng);
            std::sort(genes.begin(), genes.end());
            PatchSample sample;
            sample.h = 1;
            sample.w = 1;
            sample.m = config.m;
            sample.origin_x = col;
            sample.origin_y = row;
            sample.slice_id = loaded.slice.id;
            sample.genes = std::move(genes);
            sample.occupied = {1};
            sample.values.resize(config.m);
            const float* src = grid.at(row, col);
            for (std::uint32_t k = 0; k < config.m; ++k) {
                sample.values[k] = src[sample.genes[k]];
            }
            outcome.samples.push_back(std::move(sample));
        }
    }
    return outcome;
}

inline Manifest run_build(const std::vector<SliceSpec>& specs, const BuildConfig& config,
                          bool spot_mode) {
    if (specs.empty()) {
        throw std::runtime_error("zero usable slices: no inputs given");
    }
    if (config.m == 0 || (!spot_mode && (config.h == 0 || config.w == 0 || config.n_s == 0))) {
        throw std::invalid_argument("h, w, m and n_s must be positive");
    }
    if (config.out_dir.empty()) {
        throw std::invalid_argument("output directory not set");
    }
    const GeneVocabulary vocab = collect_vocabulary(specs);
    if (config.m > vocab.size()) {
        throw std::runtime_error("m=" + std::to_string(config.m) +
                                 " exceeds vocabulary size " + std::to_string(vocab.size()));
    }

    const std::uint32_t out_h = spot_mode ? 1 : config.h;
    const std::uint32_t out_w = spot_mode ? 1 : config.w;
    ShardWriter writer(config.out_dir,
                       {out_h, out_w, config.m, vocab.size(), config.records_per_shard});

    const std::size_t workers = std::max<std::uint32_t>(1, config.workers);
    OrderedBuffer buffer(specs.size(), workers + 1);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= specs.size() || buffer.aborted()) return;
            SliceOutcome outcome;
            try {
                outcome = spot_mode ? process_spot_slice(specs[i], vocab, config)
                                    : process_patch_slice(specs[i], vocab, config);
            } catch (...) {
                outcome.error = std::current_exception();
            }
            buffer.put(i, std::move(outcome));
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) {
        pool.emplace_back(work);
    }
    auto join_all = [&] {
        for (auto& t : pool) {
            if (t.joinable()) t.join();
        }
    };

    std::uint64_t skipped = 0;
    std::vector<std::string> warnings;
    try {
        for (std::size_t i = 0; i < specs.size(); ++i) {
            SliceOutcome outcome = buffer.take();
            if (outcome.error) {
                std::rethrow_exception(outcome.error);
            }
            if (outcome.skipped) {
                ++skipped;
                warnings.push_back(outcome.warning);
                continue;
            }
            for (const auto& sample : outcome.samples) {
                writer.append(sample);
            }
        }
    } catch (...) {
        buffer.abort();
        join_all();
        throw;
    }
    join_all();

    if (skipped == specs.size()) {
        throw std::runtime_error("zero usable slices: all " + std::to_string(skipped) +
                                 " inputs are smaller than the window");
    }

    const std::string vocab_file = "vocab.txt";
    {
        std::ofstream out(std::filesystem::path(config.out_dir) / vocab_file);
        if (!out) {
            throw std::runtime_error("cannot write vocabulary file");
        }
        for (const auto& name : vocab.names) {
            out << name << '\n';
        }
    }

    Manifest manifest;
    manifest.toolkit_version = kToolkitVersion;
    manifest.mode = spot_mode ? "spot" : "patch";
    manifest.seed = config.seed;
    manifest.samples_per_slice = spot_mode ? 0 : config.n_s;
    manifest.h = out_h;
    manifest.w = out_w;
    manifest.m = config.m;
    manifest.K = vocab.size();
    manifest.selection_mode = config.selection.name();
    manifest.epsilon = config.selection.epsilon;
    manifest.loss_on_holes = config.loss_on_holes;
    manifest.mask_ratio = config.mask_ratio;
    manifest.log1p = config.log1p;
    manifest.vocab_file = vocab_file;
    manifest.vocab_digest = vocabulary_digest(vocab.names);
    manifest.skipped_slices = skipped;
    for (const auto& spec : specs) {
        nlohmann::json entry;
        entry["id"] = spec.id;
        switch (spec.kind) {
            case SliceSpec::Kind::dense_csv:
                entry["kind"] = "csv";
                entry["path"] = spec.csv_path;
                break;
            case SliceSpec::Kind::triplet:
                entry["kind"] = "triplet";
                entry["genes"] = spec.genes_path;
                entry["spots"] = spec.spots_path;
                entry["matrix"] = spec.matrix_path;
                break;
            default:
                entry["kind"] = "synthetic";
                entry["config"] = {{"h", spec.synth.height},     {"w", spec.synth.width},
                                   {"k", spec.synth.genes},      {"domains", spec.synth.n_domains},
                                   {"signal", spec.synth.signal}, {"noise", spec.synth.noise_sd},
                                   {"holes", spec.synth.hole_rate}, {"baseline", spec.synth.baseline},
                                   {"seed", spec.synth.seed}};
                break;
        }
        manifest.inputs.push_back(std::move(entry));
    }
    manifest.shards = writer.finish();
    manifest.record_count = writer.total_records();
    save_manifest(manifest, (std::filesystem::path(config.out_dir) / "manifest.json").string());

    for (const auto& warning : warnings) {
        std::fprintf(stderr, "warning: %s\n", warning.c_str());
    }
    return manifest;
}

} // namespace detail

/// Build a patch dataset (Algorithm: rasterize, crop n_s windows, select genes).
inline Manifest build_dataset(const std::vector<SliceSpec>& specs, const BuildConfig& config) {
    return detail::run_build(specs, config, false);
}

/// Build the spot-level baseline dataset: one 1x1xm record per occupied spot.
inline Manifest build_spot_dataset(const std::vector<SliceSpec>& specs, const BuildConfig& config) {
    return detail::run_build(specs, config, true);
}

/// Summary statistics of a shard dataset, digest-verified while streaming.
struct DatasetStats {
    std::uint64_t records = 0;
    std::vector<ShardInfo> shards;
    std::vector<std::uint64_t> shard_bytes;
    std::array<std::uint64_t, 10> occupancy_hist{}; // occupancy rate deciles per record
    double value_mean = 0.0;
    double value_variance = 0.0;
    std::vector<double> channel_mean;     // per selected-channel index, occupied sites only
    std::vector<double> channel_variance;
};

inline DatasetStats dataset_stats(const std::string& manifest_path) {
    ShardReader reader(manifest_path);
    const Manifest& manifest = reader.manifest();
    DatasetStats stats;
    stats.shards = manifest.shards;
    const auto dir = std::filesystem::path(manifest_path).parent_path();
    for (const auto& shard : manifest.shards) {
        stats.shard_bytes.push_back(std::filesystem::file_size(dir / shard.file));
    }
    const std::uint32_t m = manifest.m;
    std::vector<double> sum(m, 0.0), sumsq(m, 0.0);
    std::uint64_t occupied_sites = 0;
    while (auto sample = reader.next()) {
        ++stats.records;
        const std::size_t sites = static_cast<std::size_t>(sample->h) * sample->w;
        std::size_t occ = 0;
        for (std::size_t s = 0; s < sites; ++s) {
            if (!sample->occupied[s]) continue;
            ++occ;
            const float* row = sample->values.data() + s * m;
            for (std::uint32_t k = 0; k < m; ++k) {
                sum[k] += row[k];
                sumsq[k] += static_cast<double>(row[k]) * row[k];
            }
        }
        occupied_sites += occ;
        const double rate = static_cast<double>(occ) / static_cast<double>(sites);
        const auto bin = std::min<std::size_t>(9, static_cast<std::size_t>(rate * 10.0));
        ++stats.occupancy_hist[bin];
    }
    stats.channel_mean.assign(m, 0.0);
    stats.channel_variance.assign(m, 0.0);
    if (occupied_sites > 0) {
        double total_sum = 0.0, total_sumsq = 0.0;
        for (std::uint32_t k = 0; k < m; ++k) {
            const double n = static_cast<double>(occupied_sites);
            stats.channel_mean[k] = sum[k] / n;
            stats.channel_variance[k] =
                std::max(0.0, sumsq[k] / n - stats.channel_mean[k] * stats.channel_mean[k]);
            total_sum += sum[k];
            total_sumsq += sumsq[k];
        }
        const double n_all = static_cast<double>(occupied_sites) * m;
        stats.value_mean = total_sum / n_all;
        stats.value_variance = std::max(0.0, total_sumsq / n_all - stats.value_mean * stats.value_mean);
    }
    return stats;
}

} // namespace stpatch

#endif
