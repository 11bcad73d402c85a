#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include <unistd.h>

#include <stpatch/ingest.hpp>

using namespace stpatch;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = fs::temp_directory_path() /
                ("stpatch-ingest-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    std::string file(const std::string& name, const std::string& content) const {
        const auto p = path_ / name;
        std::ofstream out(p);
        out << content;
        return p.string();
    }
    fs::path path() const { return path_; }

private:
    fs::path path_;
};

bool slices_equal(const RawSlice& a, const RawSlice& b) {
    if (a.spots.size() != b.spots.size()) return false;
    for (std::size_t i = 0; i < a.spots.size(); ++i) {
        if (a.spots[i].x != b.spots[i].x || a.spots[i].y != b.spots[i].y ||
            a.spots[i].values != b.spots[i].values) {
            return false;
        }
    }
    return true;
}

} // namespace

TEST(TripletReader, DirectMapping) {
    TempDir dir;
    auto genes = dir.file("genes.txt", "GA\nGB\n");
    auto spots = dir.file("spots.tsv", "s1\t0\t0\ns2\t1\t0\n");
    auto matrix = dir.file("matrix.mtx",
                           "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 3.0\n2 2 1.5\n");
    auto loaded = read_triplet_slice(genes, spots, matrix);
    ASSERT_EQ(loaded.slice.spots.size(), 2u);
    EXPECT_EQ(loaded.gene_names, (std::vector<std::string>{"GA", "GB"}));
    EXPECT_EQ(loaded.slice.spots[0].values,
              (std::vector<std::pair<std::uint32_t, float>>{{0, 3.0f}}));
    EXPECT_EQ(loaded.slice.spots[1].values,
              (std::vector<std::pair<std::uint32_t, float>>{{1, 1.5f}}));
}

TEST(TripletReader, EntryCountMismatchIsAnError) {
    TempDir dir;
    auto genes = dir.file("genes.txt", "GA\n");
    auto spots = dir.file("spots.tsv", "s1\t0\t0\n");
    auto matrix = dir.file("matrix.mtx",
                           "%%MatrixMarket matrix coordinate real general\n1 1 2\n1 1 3.0\n");
    EXPECT_THROW(read_triplet_slice(genes, spots, matrix), std::runtime_error);
}

TEST(TripletReader, LymphNodeScaleSpotCount) {
    TempDir dir;
    auto genes = dir.file("genes.txt", "GA\nGB\nGC\n");
    std::string spot_lines;
    for (int i = 0; i < 3484; ++i) {
        spot_lines += "s" + std::to_string(i) + "\t" + std::to_string(i % 60) + "\t" +
                      std::to_string(i / 60) + "\n";
    }
    auto spots = dir.file("spots.tsv", spot_lines);
    auto matrix = dir.file("matrix.mtx",
                           "%%MatrixMarket matrix coordinate real general\n3484 3 1\n17 2 4.0\n");
    auto loaded = read_triplet_slice(genes, spots, matrix);
    EXPECT_EQ(loaded.slice.spots.size(), 3484u);
}

TEST(TripletReader, DescriptiveErrorsCarryLineNumbers) {
    TempDir dir;
    auto genes = dir.file("genes.txt", "GA\nGB\n");
    auto spots = dir.file("spots.tsv", "s1\t0\t0\ns2\t1\t0\n");

    auto out_of_range = dir.file("m1.mtx",
                                 "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n");
    try {
        read_triplet_slice(genes, spots, out_of_range);
        FAIL() << "expected parse error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("m1.mtx:3"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("out of range"), std::string::npos);
    }

    auto negative = dir.file("m2.mtx",
                             "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 -2.0\n");
    try {
        read_triplet_slice(genes, spots, negative);
        FAIL() << "expected parse error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("negative"), std::string::npos);
    }

    auto duplicate = dir.file("m3.mtx",
                              "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n1 1 2.0\n");
    try {
        read_triplet_slice(genes, spots, duplicate);
        FAIL() << "expected parse error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("duplicate"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("m3.mtx:4"), std::string::npos);
    }

    auto dup_spots = dir.file("spots2.tsv", "s1\t0\t0\ns2\t0\t0\n");
    auto ok_matrix = dir.file("m4.mtx",
                              "%%MatrixMarket matrix coordinate real general\n2 2 0\n");
    try {
        read_triplet_slice(genes, dup_spots, ok_matrix);
        FAIL() << "expected parse error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("spots2.tsv:2"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("duplicate"), std::string::npos);
    }
}

TEST(CsvReader, SingleRow) {
    TempDir dir;
    auto path = dir.file("slice.csv", "x,y,A,B\n0,0,1.0,0.0\n");
    auto loaded = read_dense_csv_slice(path);
    ASSERT_EQ(loaded.slice.spots.size(), 1u);
    EXPECT_EQ(loaded.gene_names, (std::vector<std::string>{"A", "B"}));
    EXPECT_EQ(loaded.slice.spots[0].values,
              (std::vector<std::pair<std::uint32_t, float>>{{0, 1.0f}})); // zero dropped
    EXPECT_EQ(loaded.slice.id, "slice");
}

TEST(CsvReader, EmptyBodyIsAnError) {
    TempDir dir;
    auto path = dir.file("empty.csv", "x,y,A\n");
    try {
        read_dense_csv_slice(path);
        FAIL() << "expected error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("no spots"), std::string::npos);
    }
}

TEST(CsvReader, RaggedAndNonNumericRowsAreErrors) {
    TempDir dir;
    auto ragged = dir.file("ragged.csv", "x,y,A,B\n0,0,1.0\n");
    EXPECT_THROW(read_dense_csv_slice(ragged), std::runtime_error);
    auto bad = dir.file("bad.csv", "x,y,A\n0,0,abc\n");
    EXPECT_THROW(read_dense_csv_slice(bad), std::runtime_error);
}

TEST(Readers, TripletAndCsvAgreeOnEquivalentContent) {
    TempDir dir;
    auto genes = dir.file("genes.txt", "GA\nGB\nGC\n");
    auto spots = dir.file("spots.tsv", "s1\t0.5\t-1\ns2\t2\t-1\ns3\t0.5\t4\n");
    auto matrix = dir.file("matrix.mtx",
                           "%%MatrixMarket matrix coordinate real general\n"
                           "3 3 4\n1 1 2.0\n1 3 0.5\n2 2 1.25\n3 1 7.0\n");
    auto triplet = read_triplet_slice(genes, spots, matrix);

    auto csv = dir.file("slice.csv",
                        "x,y,GA,GB,GC\n0.5,-1,2.0,0,0.5\n2,-1,0,1.25,0\n0.5,4,7.0,0,0\n");
    auto dense = read_dense_csv_slice(csv);
    EXPECT_TRUE(slices_equal(triplet.slice, dense.slice));
    EXPECT_EQ(triplet.gene_names, dense.gene_names);
}

TEST(Readers, CsvWriteReadRoundTrip) {
    TempDir dir;
    auto genes = dir.file("genes.txt", "GA\nGB\n");
    auto spots = dir.file("spots.tsv", "s1\t1.5\t0\ns2\t3.5\t0\n");
    auto matrix = dir.file("matrix.mtx",
                           "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 2 0.75\n2 1 4\n");
    auto loaded = read_triplet_slice(genes, spots, matrix);
    const auto out = (dir.path() / "round.csv").string();
    write_dense_csv_slice(loaded.slice, loaded.gene_names, out);
    auto round = read_dense_csv_slice(out);
    EXPECT_TRUE(slices_equal(loaded.slice, round.slice));
}

TEST(Log1p, TransformsValuesInPlace) {
    RawSlice slice;
    slice.id = "t";
    Spot spot;
    spot.values = {{0, 1.0f}, {3, 9.0f}};
    slice.spots.push_back(spot);
    apply_log1p(slice);
    EXPECT_FLOAT_EQ(slice.spots[0].values[0].second, std::log1p(1.0f));
    EXPECT_FLOAT_EQ(slice.spots[0].values[1].second, std::log1p(9.0f));
}

TEST(Synthetic, NoiselessSingleDomainIsConstant) {
    SyntheticConfig cfg;
    cfg.height = 4;
    cfg.width = 4;
    cfg.genes = 6;
    cfg.n_domains = 1;
    cfg.signal = 5.0;
    cfg.noise_sd = 0.0;
    cfg.hole_rate = 0.0;
    cfg.seed = 1;
    auto synth = generate_synthetic_slice(cfg);
    ASSERT_EQ(synth.slice.spots.size(), 16u);
    for (const auto& spot : synth.slice.spots) {
        EXPECT_EQ(spot.values, synth.slice.spots[0].values);
    }
    for (auto label : synth.labels) EXPECT_EQ(label, 0u);
}

TEST(Synthetic, DeterministicForFixedSeed) {
    SyntheticConfig cfg;
    cfg.height = 9;
    cfg.width = 7;
    cfg.genes = 12;
    cfg.n_domains = 3;
    cfg.hole_rate = 0.2;
    cfg.seed = 77;
    auto a = generate_synthetic_slice(cfg);
    auto b = generate_synthetic_slice(cfg);
    ASSERT_EQ(a.slice.spots.size(), b.slice.spots.size());
    EXPECT_EQ(a.labels, b.labels);
    for (std::size_t i = 0; i < a.slice.spots.size(); ++i) {
        EXPECT_EQ(a.slice.spots[i].values, b.slice.spots[i].values);
        EXPECT_EQ(a.slice.spots[i].x, b.slice.spots[i].x);
        EXPECT_EQ(a.slice.spots[i].y, b.slice.spots[i].y);
    }
}

TEST(Synthetic, SignatureGeneMeansCarryTheSignal) {
    SyntheticConfig cfg;
    cfg.height = 40;
    cfg.width = 40;
    cfg.genes = 16;
    cfg.n_domains = 4;
    cfg.signal = 5.0;
    cfg.noise_sd = 1.0;
    cfg.hole_rate = 0.0;
    cfg.seed = 5;
    auto synth = generate_synthetic_slice(cfg);
    // Monte Carlo: per-domain signature-gene mean within 3*sd/sqrt(n) of baseline+signal
    const std::uint32_t genes_per_domain = cfg.genes / cfg.n_domains;
    for (std::uint32_t dom = 0; dom < cfg.n_domains; ++dom) {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < synth.slice.spots.size(); ++i) {
            if (synth.labels[i] != dom) continue;
            auto dense = synth.slice.spots[i].densify(cfg.genes);
            for (std::uint32_t g = dom * genes_per_domain; g < (dom + 1) * genes_per_domain; ++g) {
                sum += dense[g];
                ++n;
            }
        }
        const double mean = sum / static_cast<double>(n);
        const double tol = 3.0 * cfg.noise_sd / std::sqrt(static_cast<double>(n));
        EXPECT_NEAR(mean, cfg.baseline + cfg.signal, tol);
        // out-of-domain mean of the same genes sits at baseline
        double out_sum = 0.0;
        std::size_t out_n = 0;
        for (std::size_t i = 0; i < synth.slice.spots.size(); ++i) {
            if (synth.labels[i] == dom) continue;
            auto dense = synth.slice.spots[i].densify(cfg.genes);
            for (std::uint32_t g = dom * genes_per_domain; g < (dom + 1) * genes_per_domain; ++g) {
                out_sum += dense[g];
                ++out_n;
            }
        }
        EXPECT_NEAR(out_sum / static_cast<double>(out_n), cfg.baseline,
                    3.0 * cfg.noise_sd / std::sqrt(static_cast<double>(out_n)));
    }
}

TEST(Synthetic, LabelsMatchEmittedSpots) {
    SyntheticConfig cfg;
    cfg.height = 10;
    cfg.width = 10;
    cfg.genes = 8;
    cfg.n_domains = 2;
    cfg.hole_rate = 0.35;
    cfg.seed = 9;
    auto synth = generate_synthetic_slice(cfg);
    EXPECT_EQ(synth.labels.size(), synth.slice.spots.size());
    EXPECT_LT(synth.slice.spots.size(), 100u);
}

TEST(Synthetic, TooManyDomainsIsAnError) {
    SyntheticConfig cfg;
    cfg.height = 2;
    cfg.width = 2;
    cfg.genes = 8;
    cfg.n_domains = 5;
    EXPECT_THROW(generate_synthetic_slice(cfg), std::invalid_argument);
}
