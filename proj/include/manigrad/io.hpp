#pragma once
// File formats: .ntf tensors, .pgm images, .csv tables. All whole-file
// writes are atomic (temp + rename); all binary payloads little-endian f64.
#include "manigrad/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace manigrad {

using Json = nlohmann::json;

// Error taxonomy; the CLI maps each kind to a distinct exit code.
class IoError : public Error {
public:
    using Error::Error;
};
class FileMissingError : public IoError {
public:
    using IoError::IoError;
};
class CorruptionError : public IoError {
public:
    using IoError::IoError;
};
class FormatVersionError : public IoError {
public:
    using IoError::IoError;
};

namespace detail {

inline void append_f64_le(std::string& out, const double* p, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        out.append(reinterpret_cast<const char*>(p), n * sizeof(double));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const auto u = std::bit_cast<std::uint64_t>(p[i]);
            for (int k = 0; k < 8; ++k)
                out.push_back(static_cast<char>((u >> (8 * k)) & 0xff));
        }
    }
}

inline void load_f64_le(double* dst, const char* src, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(dst, src, n * sizeof(double));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            std::uint64_t u = 0;
            for (int k = 7; k >= 0; --k)
                u = (u << 8) | static_cast<unsigned char>(src[8 * i + k]);
            dst[i] = std::bit_cast<double>(u);
        }
    }
}

} // namespace detail

inline std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FileMissingError("cannot open '" + path + "' for reading");
    std::string bytes((std::istreambuf_iterator<char>(is)),
                      std::istreambuf_iterator<char>());
    if (is.bad()) throw IoError("read failed on '" + path + "'");
    return bytes;
}

// Write-temp-then-rename so readers never observe a partial file.
inline void write_file_atomic(const std::string& path, std::string_view bytes) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open '" + tmp.string() + "' for writing");
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        os.flush();
        if (!os) throw IoError("write failed on '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("rename '" + tmp.string() + "' -> '" + path +
                      "' failed: " + ec.message());
    }
}

// ---------------------------------------------------------------------------
// NTF: "NTF1\n" + JSON header {dtype:"f64", shape:[...]} + "\n" + LE payload,
// row-major. Round trips are bit-exact.
// ---------------------------------------------------------------------------

inline constexpr std::int64_t kNtfMaxNumel = std::int64_t{1} << 28; // 2 GiB cap

inline std::string ntf_bytes(const Tensor& t) {
    if (t.shape.empty()) fail("ntf_write: empty shape rejected");
    const Json header{{"dtype", "f64"}, {"shape", t.shape}};
    std::string out = "NTF1\n";
    out += header.dump();
    out += '\n';
    detail::append_f64_le(out, t.data.data(), t.data.size());
    return out;
}

inline void ntf_write(const std::string& path, const Tensor& t) {
    write_file_atomic(path, ntf_bytes(t));
}

inline Tensor ntf_parse(const std::string& bytes, const std::string& what) {
    if (bytes.size() < 5 || bytes.compare(0, 5, "NTF1\n") != 0)
        throw CorruptionError(what + ": bad magic, want NTF1");
    const std::size_t nl = bytes.find('\n', 5);
    if (nl == std::string::npos)
        throw CorruptionError(what + ": unterminated header");
    Json header;
    try {
        header = Json::parse(bytes.substr(5, nl - 5));
    } catch (const Json::exception& e) {
        throw CorruptionError(what + ": header is not valid JSON: " + e.what());
    }
    if (!header.contains("dtype") || header["dtype"] != "f64")
        throw CorruptionError(what + ": dtype must be \"f64\"");
    if (!header.contains("shape") || !header["shape"].is_array() ||
        header["shape"].empty())
        throw CorruptionError(what + ": missing or empty shape");
    Shape shape;
    std::int64_t numel = 1;
    for (const auto& e : header["shape"]) {
        if (!e.is_number_integer() || e.get<std::int64_t>() <= 0)
            throw CorruptionError(what + ": non-positive shape extent");
        shape.push_back(e.get<std::int64_t>());
        numel *= shape.back();
        if (numel > kNtfMaxNumel)
            throw CorruptionError(what + ": shape " + shape_str(shape) +
                                  "... exceeds element cap");
    }
    const std::size_t want = static_cast<std::size_t>(numel) * sizeof(double);
    const std::size_t have = bytes.size() - (nl + 1);
    if (want != have)
        throw CorruptionError(what + ": payload is " + std::to_string(have) +
                              " bytes, header shape " + shape_str(shape) +
                              " implies " + std::to_string(want));
    Tensor t(shape);
    detail::load_f64_le(t.data.data(), bytes.data() + nl + 1,
                        static_cast<std::size_t>(numel));
    return t;
}

inline Tensor ntf_read(const std::string& path) {
    return ntf_parse(read_file(path), path);
}

// ---------------------------------------------------------------------------
// PGM: binary P5, maxval 255, row-major. Values are mapped linearly from
// [lo, hi] to 0..255 and clamped.
// ---------------------------------------------------------------------------

inline void pgm_write(const std::string& path, const Tensor& img,
                      double lo = 0.0, double hi = 1.0) {
    if (img.shape.size() != 2)
        fail("pgm_write: image must be 2-D, got " + shape_str(img.shape));
    if (!(hi > lo)) fail("pgm_write: need hi > lo");
    std::string out = "P5\n" + std::to_string(img.shape[1]) + " " +
                      std::to_string(img.shape[0]) + "\n255\n";
    out.reserve(out.size() + img.data.size());
    for (double v : img.data) {
        const double s = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
        out.push_back(static_cast<char>(
            static_cast<unsigned char>(std::lround(s * 255.0))));
    }
    write_file_atomic(path, out);
}

// ---------------------------------------------------------------------------
// CSV: header + rows, no quoting (fields may not contain comma/quote/newline).
// ---------------------------------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

namespace detail {

inline void check_csv_field(const std::string& f) {
    if (f.find_first_of(",\"\r\n") != std::string::npos)
        fail("csv: field may not contain comma/quote/newline: '" + f + "'");
}

} // namespace detail

inline std::string csv_line(const std::vector<std::string>& fields) {
    if (fields.empty()) fail("csv: empty row");
    std::string line;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        detail::check_csv_field(fields[i]);
        if (i) line += ',';
        line += fields[i];
    }
    line += '\n';
    return line;
}

inline void csv_write(const std::string& path, const CsvTable& t) {
    std::string out = csv_line(t.header);
    for (const auto& row : t.rows) {
        if (row.size() != t.header.size())
            fail("csv: row arity " + std::to_string(row.size()) +
                 " != header arity " + std::to_string(t.header.size()));
        out += csv_line(row);
    }
    write_file_atomic(path, out);
}

// Appends one row, creating the file with the given header first. Appends are
// inherently not atomic; callers keep to one writer per path.
inline void csv_append(const std::string& path,
                       const std::vector<std::string>& row,
                       const std::vector<std::string>& header = {}) {
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream os(path, std::ios::binary | std::ios::app);
    if (!os) throw IoError("cannot open '" + path + "' for appending");
    if (fresh && !header.empty()) os << csv_line(header);
    os << csv_line(row);
    os.flush();
    if (!os) throw IoError("append failed on '" + path + "'");
}

inline CsvTable csv_read(const std::string& path) {
    const std::string bytes = read_file(path);
    CsvTable t;
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        std::size_t nl = bytes.find('\n', pos);
        if (nl == std::string::npos) nl = bytes.size();
        std::string line = bytes.substr(pos, nl - pos);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        pos = nl + 1;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t f = 0;
        while (true) {
            const std::size_t c = line.find(',', f);
            fields.push_back(line.substr(f, c - f));
            if (c == std::string::npos) break;
            f = c + 1;
        }
        if (t.header.empty())
            t.header = std::move(fields);
        else if (fields.size() != t.header.size())
            throw CorruptionError(path + ": row arity " +
                                  std::to_string(fields.size()) +
                                  " != header arity " +
                                  std::to_string(t.header.size()));
        else
            t.rows.push_back(std::move(fields));
    }
    if (t.header.empty()) throw CorruptionError(path + ": empty csv");
    return t;
}

// ---------------------------------------------------------------------------
// Small shared helpers for deterministic text output.
// ---------------------------------------------------------------------------

// Shortest-round-trip would also do, but a fixed %.17g is simple and stable.
inline std::string fmt_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(v));
    return buf;
}

} // namespace manigrad
