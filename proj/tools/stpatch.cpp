// stpatch: build image-like patch datasets from spatial transcriptomics
// slices, inspect them, and score reconstruction objectives.
//
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include <stpatch/compact.hpp>
#include <stpatch/core.hpp>
#include <stpatch/crop.hpp>
#include <stpatch/eval.hpp>
#include <stpatch/genesel.hpp>
#include <stpatch/ingest.hpp>
#include <stpatch/losses.hpp>
#include <stpatch/mask.hpp>
#include <stpatch/matrix.hpp>
#include <stpatch/pipeline.hpp>
#include <stpatch/render.hpp>
#include <stpatch/shard.hpp>
#include <stpatch/version.hpp>

namespace fs = std::filesystem;
using namespace stpatch;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::uint32_t worker_count_from_env() {
    if (const char* env = std::getenv("STPATCH_WORKERS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n < 1) {
            throw std::runtime_error("STPATCH_WORKERS must be a positive integer");
        }
        return static_cast<std::uint32_t>(n);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return std::clamp(hw ? hw : 1u, 1u, 8u);
}

// synthetic corpus spec: "synthetic:n=20,h=64,w=64,k=256,domains=4,signal=5,noise=1,holes=0.1,seed=0"
std::vector<SliceSpec> expand_synthetic(const std::string& arg) {
    SyntheticConfig cfg;
    std::uint32_t count = 1;
    std::uint64_t seed = 0;
    std::stringstream body(arg.substr(std::string("synthetic:").size()));
    std::string pair;
    while (std::getline(body, pair, ',')) {
        const auto eq = pair.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("synthetic spec entry '" + pair + "' is not key=value");
        }
        const std::string key = pair.substr(0, eq);
        const std::string value = pair.substr(eq + 1);
        try {
            if (key == "n") count = static_cast<std::uint32_t>(std::stoul(value));
            else if (key == "h") cfg.height = static_cast<std::uint32_t>(std::stoul(value));
            else if (key == "w") cfg.width = static_cast<std::uint32_t>(std::stoul(value));
            else if (key == "k") cfg.genes = static_cast<std::uint32_t>(std::stoul(value));
            else if (key == "domains") cfg.n_domains = static_cast<std::uint32_t>(std::stoul(value));
            else if (key == "signal") cfg.signal = std::stod(value);
            else if (key == "noise") cfg.noise_sd = std::stod(value);
            else if (key == "holes") cfg.hole_rate = std::stod(value);
            else if (key == "baseline") cfg.baseline = std::stod(value);
            else if (key == "seed") seed = std::stoull(value);
            else throw std::runtime_error("unknown synthetic spec key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw std::runtime_error("synthetic spec value for '" + key + "' is not numeric");
        }
    }
    std::vector<SliceSpec> specs;
    specs.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        SyntheticConfig one = cfg;
        one.seed = derive_stream(seed, "synthetic-gen", i);
        char id[32];
        std::snprintf(id, sizeof(id), "synthetic-%05u", i);
        specs.push_back(SliceSpec::synthetic(one, id));
    }
    return specs;
}

std::vector<SliceSpec> parse_inputs(const std::vector<std::string>& inputs) {
    std::vector<SliceSpec> specs;
    for (const auto& input : inputs) {
        if (input.rfind("synthetic:", 0) == 0) {
            auto expanded = expand_synthetic(input);
            specs.insert(specs.end(), expanded.begin(), expanded.end());
        } else if (fs::is_directory(input)) {
            const fs::path dir(input);
            const auto genes = dir / "genes.txt";
            const auto spots = dir / "spots.tsv";
            const auto matrix = dir / "matrix.mtx";
            if (!fs::exists(genes) || !fs::exists(spots) || !fs::exists(matrix)) {
                throw std::runtime_error("triplet directory '" + input +
                                         "' must hold genes.txt, spots.tsv and matrix.mtx");
            }
            specs.push_back(SliceSpec::triplet(genes.string(), spots.string(), matrix.string(),
                                               dir.filename().string()));
        } else if (input.size() > 4 && input.substr(input.size() - 4) == ".csv") {
            specs.push_back(SliceSpec::csv(input));
        } else {
            throw std::runtime_error("input '" + input +
                                     "' is neither a .csv file, a triplet directory, nor a "
                                     "synthetic: spec");
        }
    }
    return specs;
}

// shared option block for build / build-spot
struct BuildCli {
    std::vector<std::string> inputs;
    std::string out_dir;
    std::string config_path;
    std::uint32_t h = 16, w = 16, m = 512, n_s = 64;
    std::string select = "weighted";
    double epsilon = 1e-8;
    std::uint64_t seed = 0;
    std::uint64_t records_per_shard = 1024;
    double mask_ratio = 0.3;
    bool loss_on_holes = false;
    bool log1p = false;

    void attach(CLI::App* cmd, bool patch_mode) {
        cmd->set_help_flag("--help", "print this help and exit"); // frees -h for --h
        cmd->add_option("inputs", inputs,
                        "slice inputs: .csv files, triplet directories, or synthetic: specs");
        cmd->add_option("--out", out_dir, "output dataset directory");
        if (patch_mode) {
            cmd->add_option("--h", h, "window height");
            cmd->add_option("--w", w, "window width");
            cmd->add_option("--n-s", n_s, "samples per slice");
        }
        cmd->add_option("--m", m, "selected gene channels per sample");
        cmd->add_option("--select", select, "gene selection mode")
            ->check(CLI::IsMember({"weighted", "hvg", "random"}));
        cmd->add_option("--epsilon", epsilon, "variance smoothing for weighted selection");
        cmd->add_option("--seed", seed, "global RNG seed");
        cmd->add_option("--records-per-shard", records_per_shard, "records per shard file");
        cmd->add_option("--mask-ratio", mask_ratio, "default masking ratio recorded in the manifest");
        cmd->add_flag("--loss-on-holes", loss_on_holes, "include unoccupied cells in losses");
        cmd->add_flag("--log1p", log1p, "apply log1p to expression values at ingestion");
        cmd->add_option("--config", config_path,
                        "config file with key=value lines mirroring these flags; flags override");
    }

    // applied before CLI11 parses argv, so explicit flags win over file values
    void load_config(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            line = stpatch::detail::chomp(line);
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                         ": expected key=value");
            }
            const std::string key = line.substr(0, eq);
            const std::string value = line.substr(eq + 1);
            try {
                if (key == "inputs") {
                    inputs.clear();
                    std::stringstream items(value);
                    std::string item;
                    while (std::getline(items, item, ',')) {
                        if (!item.empty()) inputs.push_back(item);
                    }
                } else if (key == "out") out_dir = value;
                else if (key == "h") h = static_cast<std::uint32_t>(std::stoul(value));
                else if (key == "w") w = static_cast<std::uint32_t>(std::stoul(value));
                else if (key == "m") m = static_cast<std::uint32_t>(std::stoul(value));
                else if (key == "n-s") n_s = static_cast<std::uint32_t>(std::stoul(value));
                else if (key == "select") select = value;
                else if (key == "epsilon") epsilon = std::stod(value);
                else if (key == "seed") seed = std::stoull(value);
                else if (key == "records-per-shard") records_per_shard = std::stoull(value);
                else if (key == "mask-ratio") mask_ratio = std::stod(value);
                else if (key == "loss-on-holes") loss_on_holes = value == "true" || value == "1";
                else if (key == "log1p") log1p = value == "true" || value == "1";
                else throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                              ": unknown key '" + key + "'");
            } catch (const std::invalid_argument&) {
                throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                         ": bad value for '" + key + "'");
            }
        }
    }

    void finalize() const {
        if (inputs.empty()) throw UsageError("no inputs given (flag or config)");
        if (out_dir.empty()) throw UsageError("--out is required (flag or config)");
    }

    BuildConfig to_config() const {
        BuildConfig config;
        config.h = h;
        config.w = w;
        config.m = m;
        config.n_s = n_s;
        config.selection = SelectionMode::parse(select, epsilon);
        config.seed = seed;
        config.records_per_shard = records_per_shard;
        config.mask_ratio = mask_ratio;
        config.loss_on_holes = loss_on_holes;
        config.log1p = log1p;
        config.workers = worker_count_from_env();
        config.out_dir = out_dir;
        return config;
    }
};

void print_manifest_summary(const Manifest& manifest, const std::string& out_dir) {
    std::printf("dataset    %s\n", out_dir.c_str());
    std::printf("mode       %s\n", manifest.mode.c_str());
    std::printf("records    %llu\n", static_cast<unsigned long long>(manifest.record_count));
    std::printf("shards     %zu\n", manifest.shards.size());
    std::printf("shape      %ux%ux%u (K=%u)\n", manifest.h, manifest.w, manifest.m, manifest.K);
    std::printf("selection  %s (epsilon %.3g)\n", manifest.selection_mode.c_str(), manifest.epsilon);
    std::printf("seed       %llu\n", static_cast<unsigned long long>(manifest.seed));
    if (manifest.skipped_slices > 0) {
        std::printf("skipped    %llu slice(s) smaller than the window\n",
                    static_cast<unsigned long long>(manifest.skipped_slices));
    }
}

int cmd_stats(const std::string& manifest_path) {
    auto stats = dataset_stats(manifest_path);
    std::printf("records          %llu\n", static_cast<unsigned long long>(stats.records));
    for (std::size_t i = 0; i < stats.shards.size(); ++i) {
        std::printf("shard %-24s records %-8llu bytes %-10llu sha256 %s\n",
                    stats.shards[i].file.c_str(),
                    static_cast<unsigned long long>(stats.shards[i].records),
                    static_cast<unsigned long long>(stats.shard_bytes[i]),
                    stats.shards[i].sha256.c_str());
    }
    std::printf("occupancy histogram (rate decile: records)\n");
    for (std::size_t bin = 0; bin < stats.occupancy_hist.size(); ++bin) {
        std::printf("  [%.1f,%.1f%c %llu\n", bin / 10.0, (bin + 1) / 10.0, bin == 9 ? ']' : ')',
                    static_cast<unsigned long long>(stats.occupancy_hist[bin]));
    }
    std::printf("value mean %.6g  variance %.6g\n", stats.value_mean, stats.value_variance);
    if (!stats.channel_mean.empty() && stats.records > 0) {
        auto means = stats.channel_mean;
        auto vars = stats.channel_variance;
        std::sort(means.begin(), means.end());
        std::sort(vars.begin(), vars.end());
        std::printf("channel mean      min %.6g  median %.6g  max %.6g\n", means.front(),
                    means[means.size() / 2], means.back());
        std::printf("channel variance  min %.6g  median %.6g  max %.6g\n", vars.front(),
                    vars[vars.size() / 2], vars.back());
    }
    return 0;
}

PatchSample nth_record(const std::string& manifest_path, std::uint64_t index) {
    ShardReader reader(manifest_path);
    std::uint64_t at = 0;
    while (auto sample = reader.next()) {
        if (at == index) return *sample;
        ++at;
    }
    throw std::runtime_error("record " + std::to_string(index) + " out of range (" +
                             std::to_string(at) + " records)");
}

// one slice (anything parse_inputs accepts, but exactly one), remapped to its
// own vocabulary
struct SingleSlice {
    RawSlice slice;
    GeneVocabulary vocab;
    std::vector<std::uint32_t> labels; // synthetic only; empty otherwise
};

SingleSlice load_single_slice(const std::string& input, bool log1p) {
    auto specs = parse_inputs({input});
    if (specs.size() != 1) {
        throw std::runtime_error("expected exactly one slice, got " + std::to_string(specs.size()));
    }
    SingleSlice out;
    if (specs[0].kind == SliceSpec::Kind::synthetic) {
        auto synth = generate_synthetic_slice(specs[0].synth, specs[0].id);
        out.labels = synth.labels;
        out.slice = std::move(synth.slice);
        out.vocab = build_vocabulary(synthetic_gene_names(specs[0].synth.genes));
    } else {
        LoadedSlice loaded = load_slice(specs[0]);
        out.vocab = build_vocabulary(loaded.gene_names);
        remap_to_vocabulary(loaded, out.vocab);
        out.slice = std::move(loaded.slice);
    }
    if (log1p) {
        apply_log1p(out.slice);
    }
    return out;
}

std::vector<int> read_labels_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open labels file '" + path + "'");
    std::vector<int> labels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = stpatch::detail::chomp(line);
        if (line.empty()) continue;
        try {
            labels.push_back(std::stoi(line));
        } catch (const std::exception&) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": non-integer label '" +
                                     line + "'");
        }
    }
    if (labels.empty()) throw std::runtime_error(path + ": no labels");
    return labels;
}

// masks file: line i lists the masked gene indices of spot i, comma-separated
std::vector<std::vector<std::uint32_t>> read_masks_file(const std::string& path, std::size_t spots) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open masks file '" + path + "'");
    std::vector<std::vector<std::uint32_t>> masks;
    std::string line;
    while (std::getline(in, line) && masks.size() < spots) {
        line = stpatch::detail::chomp(line);
        std::vector<std::uint32_t> row;
        std::stringstream fields(line);
        std::string cell;
        while (std::getline(fields, cell, ',')) {
            if (cell.empty()) continue;
            try {
                row.push_back(static_cast<std::uint32_t>(std::stoul(cell)));
            } catch (const std::exception&) {
                throw std::runtime_error(path + ": non-integer gene index '" + cell + "'");
            }
        }
        masks.push_back(std::move(row));
    }
    masks.resize(spots);
    return masks;
}

std::vector<std::vector<float>> targets_from_values(
    const Matrix& values, const std::vector<std::vector<std::uint32_t>>& masks) {
    std::vector<std::vector<float>> targets(masks.size());
    for (std::size_t i = 0; i < masks.size(); ++i) {
        for (auto g : masks[i]) {
            if (g >= values.cols) {
                throw std::runtime_error("masked gene index " + std::to_string(g) +
                                         " out of range for values matrix");
            }
            targets[i].push_back(values.at(static_cast<std::uint32_t>(i), g));
        }
    }
    return targets;
}

Matrix raw_expression_matrix(const SingleSlice& single) {
    Matrix emb(static_cast<std::uint32_t>(single.slice.spots.size()), single.vocab.size());
    for (std::uint32_t i = 0; i < single.slice.spots.size(); ++i) {
        auto dense = single.slice.spots[i].densify(single.vocab.size());
        std::copy(dense.begin(), dense.end(),
                  emb.data.begin() + static_cast<std::size_t>(i) * emb.cols);
    }
    return emb;
}

void print_domain_report(const DomainDetectionReport& report) {
    std::printf("split  acc      ari\n");
    for (std::size_t s = 0; s < report.splits.size(); ++s) {
        std::printf("%-5zu  %.4f   %.4f\n", s, report.splits[s].acc, report.splits[s].ari);
    }
    std::printf("mean   %.4f   %.4f\n", report.mean_acc, report.mean_ari);
    if (!report.stratified) {
        std::fprintf(stderr, "warning: a class has too few members; splits are unstratified\n");
    }
}

int cmd_eval_recon(const std::string& input, bool log1p, std::uint32_t region_s, std::uint32_t m,
                   std::uint32_t replications, std::uint64_t seed, const std::string& pred_path,
                   bool loss_on_holes) {
    SingleSlice single = load_single_slice(input, log1p);
    const CompactGrid grid = rasterize(single.slice, single.vocab);
    if (region_s == 0 || region_s > std::min(grid.height, grid.width)) {
        throw std::runtime_error("region side must lie in [1, " +
                                 std::to_string(std::min(grid.height, grid.width)) +
                                 "] for this slice");
    }
    m = std::min(m, grid.genes);
    // dataset-level HVGs over the whole compacted grid
    const auto variances =
        per_gene_variance(grid.expr, grid.occupied, grid.height, grid.width, grid.genes);
    auto hvgs = hvg_topk(variances, m);
    std::sort(hvgs.begin(), hvgs.end());

    std::optional<Matrix> pred;
    if (!pred_path.empty()) {
        pred = load_matrix(pred_path);
        if (pred->rows != static_cast<std::size_t>(grid.height) * grid.width || pred->cols != m) {
            throw std::runtime_error(
                "prediction matrix must be (H'*W') x m = " +
                std::to_string(static_cast<std::size_t>(grid.height) * grid.width) + " x " +
                std::to_string(m));
        }
    }

    std::printf("rep    mse        mae        region\n");
    double mse_sum = 0.0, mae_sum = 0.0;
    std::uint32_t scored = 0;
    for (std::uint32_t rep = 0; rep < replications; ++rep) {
        Rng rng(derive_stream(seed, "recon", rep));
        const auto spec = sample_region_mask(grid.height, grid.width, 1, region_s, rng);
        std::vector<float> truth, predicted;
        std::vector<double> gene_mean(m, 0.0);
        if (!pred) {
            // baseline: per-gene mean over occupied cells outside the masked block
            std::vector<std::size_t> n(m, 0);
            for (std::uint32_t row = 0; row < grid.height; ++row) {
                for (std::uint32_t col = 0; col < grid.width; ++col) {
                    const bool in_block = row >= spec.region_u && row < spec.region_u + region_s &&
                                          col >= spec.region_v && col < spec.region_v + region_s;
                    if (in_block || !grid.is_occupied(row, col)) continue;
                    const float* cell = grid.at(row, col);
                    for (std::uint32_t k = 0; k < m; ++k) {
                        gene_mean[k] += cell[hvgs[k]];
                        ++n[k];
                    }
                }
            }
            for (std::uint32_t k = 0; k < m; ++k) {
                if (n[k] > 0) gene_mean[k] /= static_cast<double>(n[k]);
            }
        }
        for (std::uint32_t row = spec.region_u; row < spec.region_u + region_s; ++row) {
            for (std::uint32_t col = spec.region_v; col < spec.region_v + region_s; ++col) {
                if (!loss_on_holes && !grid.is_occupied(row, col)) continue;
                const float* cell = grid.at(row, col);
                for (std::uint32_t k = 0; k < m; ++k) {
                    truth.push_back(cell[hvgs[k]]);
                    predicted.push_back(pred ? pred->at(row * grid.width + col, k)
                                             : static_cast<float>(gene_mean[k]));
                }
            }
        }
        if (truth.empty()) {
            std::printf("%-5u  (region entirely unobserved; skipped)\n", rep);
            continue;
        }
        const auto score = reconstruction_score(truth, predicted);
        std::printf("%-5u  %-9.6f  %-9.6f  (%u,%u)+%u\n", rep, score.mse, score.mae, spec.region_u,
                    spec.region_v, region_s);
        mse_sum += score.mse;
        mae_sum += score.mae;
        ++scored;
    }
    if (scored == 0) {
        throw std::runtime_error("no replication produced a scorable region");
    }
    std::printf("mean   %-9.6f  %-9.6f\n", mse_sum / scored, mae_sum / scored);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"stpatch: patch-based dataset construction for spatial transcriptomics"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolkitVersion);

    BuildCli build_cli, spot_cli;
    auto* build_cmd = app.add_subcommand("build", "build a patch dataset");
    build_cli.attach(build_cmd, true);
    auto* spot_cmd = app.add_subcommand("build-spot", "build the spot-level baseline dataset");
    spot_cli.attach(spot_cmd, false);

    std::string stats_manifest;
    auto* stats_cmd = app.add_subcommand("stats", "summarize a dataset (verifies digests)");
    stats_cmd->add_option("--manifest", stats_manifest, "manifest.json path")->required();

    std::string render_manifest, render_input, render_out, render_gene;
    std::uint64_t render_record = 0;
    std::uint32_t render_channel_idx = 0;
    bool render_log1p = false;
    auto* render_cmd = app.add_subcommand("render", "render one gene channel as a PGM image");
    auto* rm = render_cmd->add_option("--manifest", render_manifest, "render from a dataset record");
    render_cmd->add_option("--record", render_record, "record index within the dataset");
    render_cmd->add_option("--channel", render_channel_idx, "channel index within the record");
    auto* ri = render_cmd->add_option("--input", render_input, "render from a slice input");
    render_cmd->add_option("--gene", render_gene, "gene name or index (with --input)");
    render_cmd->add_flag("--log1p", render_log1p, "apply log1p at ingestion");
    render_cmd->add_option("--out", render_out, "output .pgm path")->required();
    rm->excludes(ri);

    std::string ed_embeddings, ed_input, ed_labels;
    std::uint32_t ed_k = 10, ed_splits = 10;
    double ed_train_frac = 0.2;
    std::uint64_t ed_seed = 0;
    bool ed_log1p = false;
    auto* ed_cmd =
        app.add_subcommand("eval-domain", "kNN spatial-domain detection (acc + ARI over splits)");
    auto* ed_e = ed_cmd->add_option("--embeddings", ed_embeddings, "embedding matrix file");
    auto* ed_i =
        ed_cmd->add_option("--input", ed_input, "slice input; raw expressions become embeddings");
    ed_cmd->add_option("--labels", ed_labels, "labels file, one integer per row");
    ed_cmd->add_option("--k", ed_k, "kNN neighbor count");
    ed_cmd->add_option("--train-frac", ed_train_frac, "training fraction");
    ed_cmd->add_option("--splits", ed_splits, "number of random splits");
    ed_cmd->add_option("--seed", ed_seed, "split RNG seed");
    ed_cmd->add_flag("--log1p", ed_log1p, "apply log1p at ingestion");
    ed_e->excludes(ed_i);

    std::string er_input, er_pred;
    std::uint32_t er_region = 4, er_m = 512, er_reps = 20;
    std::uint64_t er_seed = 0;
    bool er_log1p = false, er_holes = false;
    auto* er_cmd =
        app.add_subcommand("eval-recon", "masked-region reconstruction scoring (MSE/MAE)");
    er_cmd->add_option("--input", er_input, "slice input (exactly one slice)")->required();
    er_cmd->add_option("--region-s", er_region, "masked region side S")->required();
    er_cmd->add_option("--m", er_m, "number of top HVG channels to score");
    er_cmd->add_option("--replications", er_reps, "number of masked replications");
    er_cmd->add_option("--seed", er_seed, "region RNG seed");
    er_cmd->add_option("--pred", er_pred, "(H'*W') x m prediction matrix; default: mean baseline");
    er_cmd->add_flag("--loss-on-holes", er_holes, "score unoccupied cells too");
    er_cmd->add_flag("--log1p", er_log1p, "apply log1p at ingestion");

    std::string lo_kind, lo_targets, lo_preds, lo_values, lo_masks, lo_gene_emb, lo_spot_emb;
    std::string lo_coords, lo_manifest, lo_site, lo_fuse = "mean";
    std::uint32_t lo_knn = 16, lo_domains = 1, lo_region = 0;
    std::uint64_t lo_record = 0, lo_mask_seed = 0;
    double lo_ratio = 0.0;
    bool lo_self_fallback = false, lo_holes = false;
    auto* lo_cmd =
        app.add_subcommand("loss-oracle", "reference losses from externally supplied predictions");
    lo_cmd->add_option("--loss", lo_kind, "one of spot, mspot, slice, patch")
        ->required()
        ->check(CLI::IsMember({"spot", "mspot", "slice", "patch"}));
    lo_cmd->add_option("--targets", lo_targets, "spot: N x |M| target matrix");
    lo_cmd->add_option("--preds", lo_preds, "spot: N x |M| prediction matrix");
    lo_cmd->add_option("--values", lo_values, "mspot/slice: N x K expression matrix");
    lo_cmd->add_option("--masks", lo_masks, "mspot/slice: masked gene indices per spot (csv lines)");
    lo_cmd->add_option("--gene-emb", lo_gene_emb, "K x d gene embedding matrix");
    lo_cmd->add_option("--spot-emb", lo_spot_emb, "N x d spot embedding matrix");
    lo_cmd->add_option("--coords", lo_coords, "N x 2 coordinate matrix");
    lo_cmd->add_option("--knn", lo_knn, "mspot: neighbors per spot");
    lo_cmd->add_flag("--self-fallback", lo_self_fallback, "mspot: isolated spots use own embedding");
    lo_cmd->add_option("--domains", lo_domains, "slice: macro-domain count for grid tiling");
    lo_cmd->add_option("--fuse", lo_fuse, "slice: fusion rule")
        ->check(CLI::IsMember({"mean", "spot", "domain"}));
    lo_cmd->add_option("--manifest", lo_manifest, "patch: dataset manifest");
    lo_cmd->add_option("--record", lo_record, "patch: record index");
    lo_cmd->add_option("--site-features", lo_site, "patch: (h*w) x d site feature matrix");
    lo_cmd->add_option("--mask-ratio", lo_ratio, "patch: uniform mask ratio");
    lo_cmd->add_option("--region-s", lo_region, "patch: region mask side");
    lo_cmd->add_option("--mask-seed", lo_mask_seed, "patch: mask RNG seed");
    lo_cmd->add_flag("--loss-on-holes", lo_holes, "patch: include unoccupied sites");

    // pre-scan for --config so file values load first and explicit flags override
    try {
        std::string sub, config_path;
        for (int i = 1; i < argc; ++i) {
            const std::string arg = argv[i];
            if (sub.empty() && (arg == "build" || arg == "build-spot")) {
                sub = arg;
            } else if (arg == "--config" && i + 1 < argc) {
                config_path = argv[i + 1];
            } else if (arg.rfind("--config=", 0) == 0) {
                config_path = arg.substr(std::string("--config=").size());
            }
        }
        if (!config_path.empty()) {
            if (sub == "build") build_cli.load_config(config_path);
            if (sub == "build-spot") spot_cli.load_config(config_path);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*build_cmd) {
            build_cli.finalize();
            auto manifest = build_dataset(parse_inputs(build_cli.inputs), build_cli.to_config());
            print_manifest_summary(manifest, build_cli.out_dir);
            return 0;
        }
        if (*spot_cmd) {
            spot_cli.finalize();
            auto manifest = build_spot_dataset(parse_inputs(spot_cli.inputs), spot_cli.to_config());
            print_manifest_summary(manifest, spot_cli.out_dir);
            return 0;
        }
        if (*stats_cmd) {
            return cmd_stats(stats_manifest);
        }
        if (*render_cmd) {
            if (!render_manifest.empty()) {
                auto sample = nth_record(render_manifest, render_record);
                render_channel(sample, render_channel_idx, render_out);
            } else if (!render_input.empty()) {
                SingleSlice single = load_single_slice(render_input, render_log1p);
                const CompactGrid grid = rasterize(single.slice, single.vocab);
                std::uint32_t gene = 0;
                auto it = single.vocab.index.find(render_gene);
                if (it != single.vocab.index.end()) {
                    gene = it->second;
                } else if (!render_gene.empty() &&
                           render_gene.find_first_not_of("0123456789") == std::string::npos) {
                    gene = static_cast<std::uint32_t>(std::stoul(render_gene));
                } else {
                    throw std::runtime_error("gene '" + render_gene + "' not found in the slice");
                }
                render_channel(grid, gene, render_out);
            } else {
                std::fprintf(stderr, "error: render needs either --manifest or --input\n");
                return 1;
            }
            std::printf("wrote %s\n", render_out.c_str());
            return 0;
        }
        if (*ed_cmd) {
            Matrix embeddings;
            std::vector<int> labels;
            if (!ed_input.empty()) {
                SingleSlice single = load_single_slice(ed_input, ed_log1p);
                embeddings = raw_expression_matrix(single);
                if (!ed_labels.empty()) {
                    labels = read_labels_file(ed_labels);
                } else if (!single.labels.empty()) {
                    labels.assign(single.labels.begin(), single.labels.end());
                } else {
                    throw std::runtime_error("--labels is required for file-based slices");
                }
            } else if (!ed_embeddings.empty()) {
                embeddings = load_matrix(ed_embeddings);
                if (ed_labels.empty()) {
                    throw std::runtime_error("--labels is required with --embeddings");
                }
                labels = read_labels_file(ed_labels);
            } else {
                std::fprintf(stderr, "error: eval-domain needs either --embeddings or --input\n");
                return 1;
            }
            if (labels.size() != embeddings.rows) {
                throw std::runtime_error("label count " + std::to_string(labels.size()) +
                                         " does not match " + std::to_string(embeddings.rows) +
                                         " embedding rows");
            }
            DomainDetectionParams params;
            params.k = ed_k;
            params.train_frac = ed_train_frac;
            params.n_splits = ed_splits;
            params.seed = ed_seed;
            print_domain_report(domain_detection_report(embeddings, labels, params));
            return 0;
        }
        if (*er_cmd) {
            return cmd_eval_recon(er_input, er_log1p, er_region, er_m, er_reps, er_seed, er_pred,
                                  er_holes);
        }
        if (*lo_cmd) {
            double loss = 0.0;
            if (lo_kind == "spot") {
                if (lo_targets.empty() || lo_preds.empty()) {
                    throw std::runtime_error("spot loss needs --targets and --preds");
                }
                const Matrix targets = load_matrix(lo_targets);
                const Matrix preds = load_matrix(lo_preds);
                if (targets.rows != preds.rows || targets.cols != preds.cols) {
                    throw std::runtime_error("target and prediction shapes differ");
                }
                std::vector<std::vector<float>> t(targets.rows), p(targets.rows);
                for (std::uint32_t i = 0; i < targets.rows; ++i) {
                    t[i].assign(targets.row(i), targets.row(i) + targets.cols);
                    p[i].assign(preds.row(i), preds.row(i) + preds.cols);
                }
                loss = loss_spot(t, p);
            } else if (lo_kind == "mspot" || lo_kind == "slice") {
                if (lo_values.empty() || lo_masks.empty() || lo_gene_emb.empty() ||
                    lo_spot_emb.empty() || lo_coords.empty()) {
                    throw std::runtime_error(
                        lo_kind + " loss needs --values --masks --gene-emb --spot-emb --coords");
                }
                const Matrix values = load_matrix(lo_values);
                const Matrix gene_emb = load_matrix(lo_gene_emb);
                const Matrix spot_emb = load_matrix(lo_spot_emb);
                const Matrix coord_mat = load_matrix(lo_coords);
                if (coord_mat.cols != 2 || coord_mat.rows != values.rows) {
                    throw std::runtime_error("--coords must be an N x 2 matrix");
                }
                const auto masks = read_masks_file(lo_masks, values.rows);
                const auto targets = targets_from_values(values, masks);
                std::vector<std::pair<double, double>> coords;
                for (std::uint32_t i = 0; i < coord_mat.rows; ++i) {
                    coords.emplace_back(coord_mat.at(i, 0), coord_mat.at(i, 1));
                }
                if (lo_kind == "mspot") {
                    const auto graph = build_knn_graph(coords, lo_knn);
                    loss = loss_mspot(targets, gene_emb, spot_emb, graph, masks, lo_self_fallback);
                } else {
                    const auto partition = grid_macro_partition(coords, lo_domains);
                    Fusion fuse = Fusion::mean();
                    if (lo_fuse == "spot") fuse = Fusion::spot_only();
                    if (lo_fuse == "domain") fuse = Fusion::domain_only();
                    loss = loss_slice(targets, gene_emb, spot_emb, partition, fuse, masks);
                }
            } else { // patch
                if (lo_manifest.empty() || lo_gene_emb.empty() || lo_site.empty()) {
                    throw std::runtime_error(
                        "patch loss needs --manifest --record --gene-emb --site-features");
                }
                if ((lo_ratio > 0.0) == (lo_region > 0)) {
                    throw std::runtime_error("choose exactly one of --mask-ratio or --region-s");
                }
                const auto sample = nth_record(lo_manifest, lo_record);
                const Matrix gene_emb = load_matrix(lo_gene_emb);
                const Matrix site = load_matrix(lo_site);
                Rng rng(lo_mask_seed);
                const MaskSpec spec =
                    lo_ratio > 0.0
                        ? sample_uniform_mask(sample.h, sample.w, sample.m, lo_ratio, rng)
                        : sample_region_mask(sample.h, sample.w, sample.m, lo_region, rng);
                loss = loss_patch(sample, spec, gene_emb, site, lo_holes);
            }
            std::printf("%.17g\n", loss);
            return 0;
        }
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}
