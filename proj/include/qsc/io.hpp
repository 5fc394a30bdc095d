#pragma once

// Dense matrix ingestion (csv, Matrix Market), instance generation and
// atomic file output.

#include <qsc/error.hpp>
#include <qsc/linalg.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace qsc {

enum class MatrixFormat { Auto, Csv, MatrixMarket };

struct LoadedMatrix {
    Matrix A;
    std::optional<Vector> rhs;
};

namespace detail {

inline std::string_view trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double parse_number(std::string_view tok, std::size_t line)
{
    tok = trim(tok);
    if (!tok.empty() && tok.front() == '+')
        tok.remove_prefix(1);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size())
        fail(ErrorKind::ParseError,
             "line " + std::to_string(line) + ": cannot parse '" + std::string(tok) + "'");
    if (!std::isfinite(value))
        fail(ErrorKind::NonFinite, "line " + std::to_string(line) + ": non-finite entry");
    return value;
}

inline std::vector<std::string_view> split_fields(std::string_view s)
{
    std::vector<std::string_view> out;
    const char sep = s.find(',') != std::string_view::npos ? ',' : ' ';
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto pos = s.find(sep, start);
        const auto field = s.substr(start, pos == std::string_view::npos ? s.npos : pos - start);
        if (sep == ',' || !trim(field).empty())
            out.push_back(field);
        if (pos == std::string_view::npos)
            break;
        start = pos + 1;
    }
    return out;
}

inline Matrix read_csv(std::istream& in)
{
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto body = trim(line);
        if (body.empty() || body.front() == '#')
            continue;
        std::vector<double> row;
        for (auto field : split_fields(body))
            row.push_back(parse_number(field, lineno));
        if (!rows.empty() && row.size() != rows.front().size())
            fail(ErrorKind::DimensionMismatch,
                 "line " + std::to_string(lineno) + ": expected " +
                     std::to_string(rows.front().size()) + " fields, found " +
                     std::to_string(row.size()));
        rows.push_back(std::move(row));
    }
    require(!rows.empty(), ErrorKind::ParseError, "csv input holds no data rows");
    Matrix M(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
    for (Index i = 0; i < M.rows(); ++i)
        for (Index j = 0; j < M.cols(); ++j)
            M(i, j) = rows[i][j];
    return M;
}

inline Matrix read_matrix_market(std::istream& in)
{
    std::string line;
    std::size_t lineno = 0;
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::ParseError,
            "line 1: empty Matrix Market file");
    ++lineno;
    std::istringstream banner(line);
    std::string tag, object, layout, field, symmetry;
    banner >> tag >> object >> layout >> field >> symmetry;
    for (auto* s : {&object, &layout, &field, &symmetry})
        for (auto& c : *s)
            c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (tag != "%%MatrixMarket" || object != "matrix")
        fail(ErrorKind::ParseError, "line 1: missing %%MatrixMarket matrix banner");
    if (layout != "coordinate" && layout != "array")
        fail(ErrorKind::ParseError, "line 1: unsupported layout '" + layout + "'");
    if (field != "real" && field != "integer" && field != "double")
        fail(ErrorKind::ParseError, "line 1: unsupported field '" + field + "'");
    if (symmetry != "general" && symmetry != "symmetric")
        fail(ErrorKind::ParseError, "line 1: unsupported symmetry '" + symmetry + "'");
    const bool symmetric = symmetry == "symmetric";

    auto next_data = [&](std::vector<std::string_view>& fields) -> bool {
        while (std::getline(in, line)) {
            ++lineno;
            const auto body = trim(line);
            if (body.empty() || body.front() == '%')
                continue;
            fields = split_fields(body);
            return true;
        }
        return false;
    };
    auto as_index = [&](std::string_view tok) {
        const double v = parse_number(tok, lineno);
        if (v < 0.0 || v != std::floor(v))
            fail(ErrorKind::ParseError, "line " + std::to_string(lineno) + ": bad index");
        return static_cast<Index>(v);
    };

    std::vector<std::string_view> fields;
    require(next_data(fields), ErrorKind::ParseError, "Matrix Market size line missing");
    const std::size_t want = layout == "coordinate" ? 3 : 2;
    if (fields.size() != want)
        fail(ErrorKind::ParseError, "line " + std::to_string(lineno) + ": malformed size line");
    const Index rows = as_index(fields[0]);
    const Index cols = as_index(fields[1]);
    require(rows >= 1 && cols >= 1, ErrorKind::ParseError, "Matrix Market dimensions must be positive");
    Matrix M = Matrix::Zero(rows, cols);

    if (layout == "coordinate") {
        const Index nnz = as_index(fields[2]);
        for (Index k = 0; k < nnz; ++k) {
            if (!next_data(fields))
                fail(ErrorKind::ParseError, "line " + std::to_string(lineno) +
                                                ": expected " + std::to_string(nnz) + " entries");
            if (fields.size() != 3)
                fail(ErrorKind::ParseError, "line " + std::to_string(lineno) + ": malformed entry");
            const Index i = as_index(fields[0]);
            const Index j = as_index(fields[1]);
            if (i < 1 || i > rows || j < 1 || j > cols)
                fail(ErrorKind::DimensionMismatch,
                     "line " + std::to_string(lineno) + ": index out of range");
            const double v = parse_number(fields[2], lineno);
            M(i - 1, j - 1) = v;
            if (symmetric)
                M(j - 1, i - 1) = v;
        }
    } else {
        for (Index j = 0; j < cols; ++j)
            for (Index i = symmetric ? j : 0; i < rows; ++i) {
                if (!next_data(fields) || fields.size() != 1)
                    fail(ErrorKind::ParseError,
                         "line " + std::to_string(lineno) + ": expected one array entry");
                M(i, j) = parse_number(fields[0], lineno);
                if (symmetric)
                    M(j, i) = M(i, j);
            }
    }
    return M;
}

} // namespace detail

inline MatrixFormat guess_format(const std::filesystem::path& path)
{
    const auto ext = path.extension().string();
    return ext == ".mtx" || ext == ".mm" ? MatrixFormat::MatrixMarket : MatrixFormat::Csv;
}

/// Reads a dense matrix; with `rhs_last` the final column is split off as the rhs.
inline LoadedMatrix load_matrix(const std::filesystem::path& path,
                                MatrixFormat format = MatrixFormat::Auto, bool rhs_last = false)
{
    std::ifstream in(path);
    if (!in)
        fail(ErrorKind::IoError, "cannot open " + path.string());
    if (format == MatrixFormat::Auto)
        format = guess_format(path);
    Matrix M = format == MatrixFormat::Csv ? detail::read_csv(in) : detail::read_matrix_market(in);
    LoadedMatrix out;
    if (rhs_last) {
        require(M.cols() >= 2, ErrorKind::DimensionMismatch,
                "rhs column requested but the matrix has a single column");
        out.rhs = M.col(M.cols() - 1);
        out.A = M.leftCols(M.cols() - 1);
    } else {
        out.A = std::move(M);
    }
    return out;
}

inline std::string format_double(double v)
{
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

/// Writes `content` next to `path` and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content)
{
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            fail(ErrorKind::IoError, "cannot open " + tmp.string() + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out)
            fail(ErrorKind::IoError, "write to " + tmp.string() + " failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        fail(ErrorKind::IoError, "cannot rename into " + path.string());
    }
}

/// Shortest round-trip representation of every entry.
inline std::string to_csv(const Matrix& M)
{
    std::string s;
    for (Index i = 0; i < M.rows(); ++i) {
        for (Index j = 0; j < M.cols(); ++j) {
            if (j)
                s += ',';
            s += format_double(M(i, j));
        }
        s += '\n';
    }
    return s;
}

inline std::string to_matrix_market(const Matrix& M)
{
    std::string s = "%%MatrixMarket matrix coordinate real general\n";
    Index nnz = 0;
    for (Index j = 0; j < M.cols(); ++j)
        for (Index i = 0; i < M.rows(); ++i)
            nnz += M(i, j) != 0.0;
    s += std::to_string(M.rows()) + ' ' + std::to_string(M.cols()) + ' ' + std::to_string(nnz) + '\n';
    for (Index j = 0; j < M.cols(); ++j)
        for (Index i = 0; i < M.rows(); ++i)
            if (M(i, j) != 0.0)
                s += std::to_string(i + 1) + ' ' + std::to_string(j + 1) + ' ' +
                     format_double(M(i, j)) + '\n';
    return s;
}

inline void write_matrix(const std::filesystem::path& path, const Matrix& M,
                         MatrixFormat format = MatrixFormat::Auto)
{
    if (format == MatrixFormat::Auto)
        format = guess_format(path);
    write_file_atomic(path, format == MatrixFormat::Csv ? to_csv(M) : to_matrix_market(M));
}

struct Instance {
    Matrix A;
    Vector b;
};

/// Entries of A and b i.i.d. uniform on [0, 1), fully determined by `seed`.
inline Instance generate_instance(Index rows, Index cols, std::uint64_t seed)
{
    require(cols >= 1 && rows >= cols, ErrorKind::InvalidArgument,
            "generator needs rows >= cols >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double below_one = std::nextafter(1.0, 0.0);
    auto draw = [&] { return std::min(unit(rng), below_one); };
    Instance inst{Matrix(rows, cols), Vector(rows)};
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j)
            inst.A(i, j) = draw();
        inst.b[i] = draw();
    }
    return inst;
}

} // namespace qsc
