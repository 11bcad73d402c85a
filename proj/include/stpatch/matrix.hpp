#ifndef STPATCH_MATRIX_HPP
#define STPATCH_MATRIX_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

/**
 * @file matrix.hpp
 * @brief Row-major float matrix plus the two on-disk encodings accepted for
 * embedding and prediction matrices: raw little-endian 32-bit reals behind a
 * one-line "rows cols" text header, or CSV (chosen by the .csv extension).
 */

namespace stpatch {

struct Matrix {
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<float> data; // rows*cols, row-major

    Matrix() = default;
    Matrix(std::uint32_t r, std::uint32_t c, float fill = 0.0f)
        : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

    float& at(std::uint32_t r, std::uint32_t c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    float at(std::uint32_t r, std::uint32_t c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
    const float* row(std::uint32_t r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
};

namespace detail {

inline void put_f32_le(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    char b[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                 static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
    out.write(b, 4);
}

inline float get_f32_le(const unsigned char* b) {
    std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                         (static_cast<std::uint32_t>(b[2]) << 16) |
                         (static_cast<std::uint32_t>(b[3]) << 24);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline bool has_suffix(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

} // namespace detail

inline void save_matrix_binary(const Matrix& mat, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    out << mat.rows << ' ' << mat.cols << '\n';
    for (float v : mat.data) {
        detail::put_f32_le(out, v);
    }
    if (!out) {
        throw std::runtime_error("write failed for '" + path + "'");
    }
}

inline void save_matrix_csv(const Matrix& mat, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    out.precision(9);
    for (std::uint32_t r = 0; r < mat.rows; ++r) {
        for (std::uint32_t c = 0; c < mat.cols; ++c) {
            if (c) out << ',';
            out << mat.at(r, c);
        }
        out << '\n';
    }
    if (!out) {
        throw std::runtime_error("write failed for '" + path + "'");
    }
}

inline Matrix load_matrix_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open matrix file '" + path + "'");
    }
    std::string header;
    if (!std::getline(in, header)) {
        throw std::runtime_error("missing 'rows cols' header in '" + path + "'");
    }
    std::istringstream hs(header);
    long long rows = -1, cols = -1;
    if (!(hs >> rows >> cols) || rows < 0 || cols < 0) {
        throw std::runtime_error("malformed 'rows cols' header in '" + path + "'");
    }
    Matrix mat(static_cast<std::uint32_t>(rows), static_cast<std::uint32_t>(cols));
    std::vector<unsigned char> raw(mat.data.size() * 4);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
        throw std::runtime_error("matrix file '" + path + "' truncated");
    }
    for (std::size_t i = 0; i < mat.data.size(); ++i) {
        mat.data[i] = detail::get_f32_le(raw.data() + i * 4);
    }
    return mat;
}

inline Matrix load_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open matrix file '" + path + "'");
    }
    Matrix mat;
    std::vector<float> values;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::uint32_t cols = 0;
        std::stringstream row(line);
        std::string cell;
        while (std::getline(row, cell, ',')) {
            try {
                std::size_t used = 0;
                float v = std::stof(cell, &used);
                while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
                if (used != cell.size()) throw std::invalid_argument(cell);
                values.push_back(v);
            } catch (const std::exception&) {
                throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                         ": non-numeric cell '" + cell + "'");
            }
            ++cols;
        }
        if (mat.cols == 0) {
            mat.cols = cols;
        } else if (cols != mat.cols) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": ragged row (" +
                                     std::to_string(cols) + " cells, expected " +
                                     std::to_string(mat.cols) + ")");
        }
        ++mat.rows;
    }
    mat.data = std::move(values);
    return mat;
}

/// Load by extension: .csv reads CSV, anything else the binary encoding.
inline Matrix load_matrix(const std::string& path) {
    return detail::has_suffix(path, ".csv") ? load_matrix_csv(path) : load_matrix_binary(path);
}

} // namespace stpatch

#endif
