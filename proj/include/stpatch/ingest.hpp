#ifndef STPATCH_INGEST_HPP
#define STPATCH_INGEST_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "core.hpp"
#include "rng.hpp"

/**
 * @file ingest.hpp
 * @brief Slice readers for the two on-disk formats plus a synthetic-slice
 * generator with planted spatial domains.
 *
 * Triplet format: a genes file (one name per line), a spots file
 * (tab-separated spot_id, x, y per line) and a MatrixMarket coordinate
 * matrix whose rows are spots in spots-file line order and whose columns are
 * genes. Dense CSV format: header "x,y,<gene1>,..." with one row per spot.
 * All text is UTF-8 and newline-delimited.
 */

namespace stpatch {

/// A slice together with the gene names its sparse indices refer to.
struct LoadedSlice {
    RawSlice slice;
    std::vector<std::string> gene_names;
};

namespace detail {

inline std::string chomp(std::string line) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) {
        line.pop_back();
    }
    return line;
}

inline double parse_double(const std::string& text, const std::string& where) {
    try {
        std::size_t used = 0;
        double v = std::stod(text, &used);
        while (used < text.size() && std::isspace(static_cast<unsigned char>(text[used]))) ++used;
        if (used != text.size()) throw std::invalid_argument(text);
        if (!std::isfinite(v)) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error(where + ": non-numeric value '" + text + "'");
    }
}

inline std::string default_slice_id(const std::string& path) {
    return std::filesystem::path(path).stem().string();
}

// exact-coordinate duplicate detection across a slice
struct CoordKey {
    double x, y;
    bool operator==(const CoordKey&) const = default;
};
struct CoordKeyHash {
    std::size_t operator()(const CoordKey& c) const {
        std::uint64_t a, b;
        std::memcpy(&a, &c.x, 8);
        std::memcpy(&b, &c.y, 8);
        return std::hash<std::uint64_t>()(a ^ (b * 0x9e3779b97f4a7c15ULL));
    }
};

} // namespace detail

/**
 * Read a slice from (genes, spots, MatrixMarket matrix) files. Every parse
 * problem — bad header, out-of-range index, negative value, duplicate
 * (row,col) entry, duplicate spot coordinate, entry-count mismatch — raises
 * a runtime_error naming the file and line.
 */
inline LoadedSlice read_triplet_slice(const std::string& genes_path, const std::string& spots_path,
                                      const std::string& matrix_path, std::string slice_id = "") {
    LoadedSlice out;
    out.slice.id = slice_id.empty() ? detail::default_slice_id(spots_path) : std::move(slice_id);

    {
        std::ifstream in(genes_path);
        if (!in) throw std::runtime_error("cannot open genes file '" + genes_path + "'");
        std::string line;
        while (std::getline(in, line)) {
            line = detail::chomp(line);
            if (!line.empty()) out.gene_names.push_back(line);
        }
        if (out.gene_names.empty()) {
            throw std::runtime_error(genes_path + ": no gene names");
        }
    }

    {
        std::ifstream in(spots_path);
        if (!in) throw std::runtime_error("cannot open spots file '" + spots_path + "'");
        std::string line;
        std::size_t lineno = 0;
        std::unordered_set<detail::CoordKey, detail::CoordKeyHash> seen;
        while (std::getline(in, line)) {
            ++lineno;
            line = detail::chomp(line);
            if (line.empty()) continue;
            const std::string where = spots_path + ":" + std::to_string(lineno);
            std::istringstream fields(line);
            std::string spot_id, xs, ys;
            if (!std::getline(fields, spot_id, '\t') || !std::getline(fields, xs, '\t') ||
                !std::getline(fields, ys, '\t')) {
                throw std::runtime_error(where + ": expected tab-separated spot_id, x, y");
            }
            Spot spot;
            spot.x = detail::parse_double(xs, where);
            spot.y = detail::parse_double(ys, where);
            if (!seen.insert({spot.x, spot.y}).second) {
                throw std::runtime_error(where + ": duplicate spot coordinate (" + xs + ", " + ys + ")");
            }
            out.slice.spots.push_back(std::move(spot));
        }
        if (out.slice.spots.empty()) {
            throw std::runtime_error(spots_path + ": no spots");
        }
    }

    {
        std::ifstream in(matrix_path);
        if (!in) throw std::runtime_error("cannot open matrix file '" + matrix_path + "'");
        std::string line;
        std::size_t lineno = 0;
        if (!std::getline(in, line)) {
            throw std::runtime_error(matrix_path + ": empty file");
        }
        ++lineno;
        line = detail::chomp(line);
        if (line.rfind("%%MatrixMarket", 0) != 0 || line.find("matrix") == std::string::npos ||
            line.find("coordinate") == std::string::npos ||
            (line.find("real") == std::string::npos && line.find("integer") == std::string::npos) ||
            line.find("general") == std::string::npos) {
            throw std::runtime_error(matrix_path + ":1: expected MatrixMarket header "
                                     "'%%MatrixMarket matrix coordinate real general'");
        }
        std::size_t rows = 0, cols = 0, declared = 0;
        for (;;) {
            if (!std::getline(in, line)) {
                throw std::runtime_error(matrix_path + ": missing dimensions line");
            }
            ++lineno;
            line = detail::chomp(line);
            if (line.empty() || line[0] == '%') continue;
            std::istringstream dims(line);
            if (!(dims >> rows >> cols >> declared)) {
                throw std::runtime_error(matrix_path + ":" + std::to_string(lineno) +
                                         ": malformed dimensions line '" + line + "'");
            }
            break;
        }
        if (rows != out.slice.spots.size()) {
            throw std::runtime_error(matrix_path + ": row count " + std::to_string(rows) +
                                     " does not match spot count " +
                                     std::to_string(out.slice.spots.size()));
        }
        if (cols != out.gene_names.size()) {
            throw std::runtime_error(matrix_path + ": column count " + std::to_string(cols) +
                                     " does not match gene count " +
                                     std::to_string(out.gene_names.size()));
        }
        std::unordered_set<std::uint64_t> filled;
        filled.reserve(declared * 2);
        std::size_t parsed = 0;
        while (std::getline(in, line)) {
            ++lineno;
            line = detail::chomp(line);
            if (line.empty()) continue;
            const std::string where = matrix_path + ":" + std::to_string(lineno);
            std::istringstream entry(line);
            long long r = 0, c = 0;
            std::string value_text;
            if (!(entry >> r >> c >> value_text)) {
                throw std::runtime_error(where + ": malformed entry '" + line + "'");
            }
            if (r < 1 || static_cast<std::size_t>(r) > rows || c < 1 ||
                static_cast<std::size_t>(c) > cols) {
                throw std::runtime_error(where + ": index (" + std::to_string(r) + ", " +
                                         std::to_string(c) + ") out of range");
            }
            const double value = detail::parse_double(value_text, where);
            if (value < 0.0) {
                throw std::runtime_error(where + ": negative expression value " + value_text);
            }
            const std::uint64_t key = (static_cast<std::uint64_t>(r) << 32) |
                                      static_cast<std::uint64_t>(c);
            if (!filled.insert(key).second) {
                throw std::runtime_error(where + ": duplicate entry for (row, col) = (" +
                                         std::to_string(r) + ", " + std::to_string(c) + ")");
            }
            ++parsed;
            if (value != 0.0) {
                out.slice.spots[static_cast<std::size_t>(r - 1)].values.emplace_back(
                    static_cast<std::uint32_t>(c - 1), static_cast<float>(value));
            }
        }
        if (parsed != declared) {
            throw std::runtime_error(matrix_path + ": header declares " + std::to_string(declared) +
                                     " entries but file holds " + std::to_string(parsed));
        }
    }

    for (auto& spot : out.slice.spots) {
        std::sort(spot.values.begin(), spot.values.end());
    }
    return out;
}

/**
 * Read a dense CSV slice with header "x,y,<gene1>,...". Zeros are dropped
 * from the sparse storage. Parse errors name the file and line.
 */
inline LoadedSlice read_dense_csv_slice(const std::string& path, std::string slice_id = "") {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open slice file '" + path + "'");
    LoadedSlice out;
    out.slice.id = slice_id.empty() ? detail::default_slice_id(path) : std::move(slice_id);

    std::string line;
    if (!std::getline(in, line)) {
        throw std::runtime_error(path + ": empty file");
    }
    line = detail::chomp(line);
    {
        std::stringstream header(line);
        std::string cell;
        std::vector<std::string> names;
        while (std::getline(header, cell, ',')) names.push_back(cell);
        if (names.size() < 3 || names[0] != "x" || names[1] != "y") {
            throw std::runtime_error(path + ":1: header must start with 'x,y' followed by gene names");
        }
        out.gene_names.assign(names.begin() + 2, names.end());
    }

    std::size_t lineno = 1;
    std::unordered_set<detail::CoordKey, detail::CoordKeyHash> seen;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::chomp(line);
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        std::stringstream fields(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(fields, cell, ',')) cells.push_back(cell);
        if (cells.size() != out.gene_names.size() + 2) {
            throw std::runtime_error(where + ": ragged row (" + std::to_string(cells.size()) +
                                     " cells, expected " + std::to_string(out.gene_names.size() + 2) + ")");
        }
        Spot spot;
        spot.x = detail::parse_double(cells[0], where);
        spot.y = detail::parse_double(cells[1], where);
        if (!seen.insert({spot.x, spot.y}).second) {
            throw std::runtime_error(where + ": duplicate spot coordinate (" + cells[0] + ", " +
                                     cells[1] + ")");
        }
        for (std::size_t g = 0; g < out.gene_names.size(); ++g) {
            const double value = detail::parse_double(cells[g + 2], where);
            if (value < 0.0) {
                throw std::runtime_error(where + ": negative expression value " + cells[g + 2]);
            }
            if (value != 0.0) {
                spot.values.emplace_back(static_cast<std::uint32_t>(g), static_cast<float>(value));
            }
        }
        out.slice.spots.push_back(std::move(spot));
    }
    if (out.slice.spots.empty()) {
        throw std::runtime_error(path + ": no spots");
    }
    return out;
}

/// Write a slice as dense CSV, the inverse of read_dense_csv_slice.
inline void write_dense_csv_slice(const RawSlice& slice, const std::vector<std::string>& gene_names,
                                  const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out.precision(9);
    out << "x,y";
    for (const auto& name : gene_names) out << ',' << name;
    out << '\n';
    const auto gene_count = static_cast<std::uint32_t>(gene_names.size());
    for (const auto& spot : slice.spots) {
        std::vector<float> dense = spot.densify(gene_count);
        out << spot.x << ',' << spot.y;
        for (float v : dense) out << ',' << v;
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

/// Apply log1p to every stored expression value.
inline void apply_log1p(RawSlice& slice) {
    for (auto& spot : slice.spots) {
        for (auto& [g, v] : spot.values) {
            v = std::log1p(v);
        }
    }
}

/**
 * @brief Configuration of the synthetic generator.
 *
 * The grid is split into `n_domains` rectangular bands along its longer
 * axis; each domain owns a disjoint contiguous block of signature genes
 * whose in-domain mean exceeds the out-of-domain mean by `signal`. Every
 * value is baseline + signal (on signature genes, in domain) + Gaussian
 * noise, clamped at zero; the default baseline keeps the clamp inactive for
 * moderate noise levels. A `hole_rate` fraction of grid cells is left
 * unobserved uniformly at random.
 */
struct SyntheticConfig {
    std::uint32_t height = 32;   // H
    std::uint32_t width = 32;    // W
    std::uint32_t genes = 64;    // K
    std::uint32_t n_domains = 4;
    double signal = 5.0;
    double noise_sd = 1.0;
    double hole_rate = 0.0;
    std::uint64_t seed = 0;
    double baseline = 10.0;
};

struct SyntheticSlice {
    RawSlice slice;
    std::vector<std::uint32_t> labels; // one domain id per emitted spot
};

inline std::vector<std::string> synthetic_gene_names(std::uint32_t count) {
    std::vector<std::string> names;
    names.reserve(count);
    char buf[24];
    for (std::uint32_t g = 0; g < count; ++g) {
        std::snprintf(buf, sizeof(buf), "g%05u", g);
        names.emplace_back(buf);
    }
    return names;
}

namespace detail {

inline double gaussian(Rng& rng) {
    const double u1 = uniform_real_open0(rng);
    const double u2 = uniform_real01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

} // namespace detail

/**
 * Generate a slice with planted domains. Deterministic for a fixed config:
 * two calls with the same seed produce bit-identical slices and labels.
 */
inline SyntheticSlice generate_synthetic_slice(const SyntheticConfig& cfg, std::string slice_id = "") {
    if (cfg.height == 0 || cfg.width == 0 || cfg.genes == 0) {
        throw std::invalid_argument("synthetic grid extents and gene count must be positive");
    }
    if (cfg.n_domains == 0) {
        throw std::invalid_argument("need at least one domain");
    }
    if (static_cast<std::uint64_t>(cfg.n_domains) >
        static_cast<std::uint64_t>(cfg.height) * cfg.width) {
        throw std::invalid_argument("more domains than grid cells");
    }
    if (cfg.n_domains > cfg.genes) {
        throw std::invalid_argument("need at least one signature gene per domain");
    }
    if (!(cfg.signal > 0.0)) {
        throw std::invalid_argument("signal must be positive");
    }
    if (cfg.noise_sd < 0.0 || cfg.hole_rate < 0.0 || cfg.hole_rate >= 1.0) {
        throw std::invalid_argument("noise_sd must be >= 0 and hole_rate in [0, 1)");
    }

    SyntheticSlice out;
    out.slice.id = slice_id.empty() ? "synthetic" : std::move(slice_id);

    const bool bands_over_rows = cfg.height >= cfg.width;
    const std::uint32_t band_extent = bands_over_rows ? cfg.height : cfg.width;
    auto domain_of = [&](std::uint32_t row, std::uint32_t col) {
        const std::uint64_t level = bands_over_rows ? row : col;
        return static_cast<std::uint32_t>(level * cfg.n_domains / band_extent);
    };
    auto signature_range = [&](std::uint32_t dom) {
        const std::uint32_t lo = static_cast<std::uint32_t>(
            static_cast<std::uint64_t>(dom) * cfg.genes / cfg.n_domains);
        const std::uint32_t hi = static_cast<std::uint32_t>(
            static_cast<std::uint64_t>(dom + 1) * cfg.genes / cfg.n_domains);
        return std::pair<std::uint32_t, std::uint32_t>{lo, hi};
    };

    Rng rng(cfg.seed);
    std::vector<float> dense(cfg.genes);
    for (std::uint32_t row = 0; row < cfg.height; ++row) {
        for (std::uint32_t col = 0; col < cfg.width; ++col) {
            if (cfg.hole_rate > 0.0 && uniform_real01(rng) < cfg.hole_rate) {
                continue;
            }
            const std::uint32_t dom = domain_of(row, col);
            const auto [sig_lo, sig_hi] = signature_range(dom);
            for (std::uint32_t g = 0; g < cfg.genes; ++g) {
                double v = cfg.baseline + (g >= sig_lo && g < sig_hi ? cfg.signal : 0.0);
                if (cfg.noise_sd > 0.0) {
                    v += cfg.noise_sd * detail::gaussian(rng);
                }
                dense[g] = static_cast<float>(std::max(v, 0.0));
            }
            out.slice.spots.push_back(Spot::from_dense(static_cast<double>(col),
                                                       static_cast<double>(row), dense));
            out.labels.push_back(dom);
        }
    }
    if (out.slice.spots.empty()) {
        throw std::runtime_error("synthetic slice has no spots (hole rate too aggressive)");
    }
    return out;
}

} // namespace stpatch

#endif
