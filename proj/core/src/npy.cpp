// NPY v1.0 reader/writer. The on-disk payload is always little-endian and
// C-ordered, regardless of host byte order.

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "oodkit/store.hpp"

namespace oodkit {
namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;
constexpr std::size_t kAlign = 64;

std::size_t item_size(const std::string& descr) {
    if (descr == "<f4") return 4;
    if (descr == "<f8" || descr == "<i8") return 8;
    throw IoError("unsupported dtype '" + descr + "'");
}

template <typename U>
void put_le(std::string& out, U bits) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
    }
}

template <typename U>
U get_le(const unsigned char* p) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
    return v;
}

template <typename T>
void encode(std::string& out, std::span<const T> values) {
    out.reserve(out.size() + values.size() * sizeof(T));
    for (T v : values) {
        if constexpr (sizeof(T) == 4) {
            put_le(out, std::bit_cast<std::uint32_t>(v));
        } else {
            put_le(out, std::bit_cast<std::uint64_t>(v));
        }
    }
}

template <typename T>
std::vector<T> decode(const std::string& bytes, std::size_t offset, std::size_t count) {
    std::vector<T> out(count);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + offset;
    for (std::size_t i = 0; i < count; ++i, p += sizeof(T)) {
        if constexpr (sizeof(T) == 4) {
            out[i] = std::bit_cast<T>(get_le<std::uint32_t>(p));
        } else {
            out[i] = std::bit_cast<T>(get_le<std::uint64_t>(p));
        }
    }
    return out;
}

std::string shape_tuple(const std::vector<std::size_t>& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    if (shape.size() == 1) s += ",";
    return s + ")";
}

std::string make_header(const std::string& descr, const std::vector<std::size_t>& shape) {
    std::string dict = "{'descr': '" + descr + "', 'fortran_order': False, 'shape': " +
                       shape_tuple(shape) + ", }";
    // magic + version(2) + header_len(2) + dict + padding + '\n'
    std::size_t total = kMagicLen + 4 + dict.size() + 1;
    dict.append((kAlign - total % kAlign) % kAlign, ' ');
    dict.push_back('\n');
    if (dict.size() > 0xFFFF) throw IoError("NPY header too long");

    std::string out(kMagic, kMagicLen);
    out.push_back('\x01');
    out.push_back('\x00');
    put_le(out, static_cast<std::uint16_t>(dict.size()));
    out += dict;
    return out;
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

// Value of a key in the header dict, up to the next top-level ',' or '}'.
std::string dict_value(const std::string& dict, const std::string& key) {
    auto pos = dict.find("'" + key + "'");
    if (pos == std::string::npos) throw IoError("NPY header missing '" + key + "'");
    pos = dict.find(':', pos);
    if (pos == std::string::npos) throw IoError("malformed NPY header");
    ++pos;
    while (pos < dict.size() && dict[pos] == ' ') ++pos;
    std::size_t end = pos;
    if (end < dict.size() && dict[end] == '(') {
        end = dict.find(')', end);
        if (end == std::string::npos) throw IoError("malformed NPY shape");
        return dict.substr(pos, end - pos + 1);
    }
    while (end < dict.size() && dict[end] != ',' && dict[end] != '}') ++end;
    return dict.substr(pos, end - pos);
}

std::string unquote(std::string s) {
    while (!s.empty() && s.back() == ' ') s.pop_back();
    if (s.size() < 2 || (s.front() != '\'' && s.front() != '"') || s.back() != s.front()) {
        throw IoError("malformed NPY descr");
    }
    return s.substr(1, s.size() - 2);
}

std::vector<std::size_t> parse_shape(const std::string& tuple) {
    std::vector<std::size_t> shape;
    std::string inner = tuple.substr(1, tuple.size() - 2);
    std::stringstream ss(inner);
    std::string item;
    while (std::getline(ss, item, ',')) {
        auto first = item.find_first_not_of(' ');
        if (first == std::string::npos) continue;
        auto last = item.find_last_not_of(' ');
        item = item.substr(first, last - first + 1);
        if (item.find_first_not_of("0123456789") != std::string::npos) {
            throw IoError("malformed NPY shape " + tuple);
        }
        shape.push_back(static_cast<std::size_t>(std::stoull(item)));
    }
    return shape;
}

// Parses the header from raw bytes; returns the payload offset.
std::size_t parse_header(const std::string& bytes, NpyHeader& header) {
    if (bytes.size() < kMagicLen + 4 || bytes.compare(0, kMagicLen, kMagic, kMagicLen) != 0) {
        throw IoError("bad magic: not an NPY file");
    }
    const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
    std::size_t header_len = 0;
    std::size_t prefix = 0;
    if (u[6] == 1) {
        header_len = get_le<std::uint16_t>(u + 8);
        prefix = 10;
    } else if (u[6] == 2 || u[6] == 3) {
        if (bytes.size() < 12) throw IoError("truncated NPY header");
        header_len = get_le<std::uint32_t>(u + 8);
        prefix = 12;
    } else {
        throw IoError("unsupported NPY version " + std::to_string(u[6]));
    }
    if (bytes.size() < prefix + header_len) throw IoError("truncated NPY header");
    std::string dict = bytes.substr(prefix, header_len);

    header.descr = unquote(dict_value(dict, "descr"));
    std::string fortran = dict_value(dict, "fortran_order");
    while (!fortran.empty() && fortran.back() == ' ') fortran.pop_back();
    if (fortran == "True") {
        header.fortran_order = true;
    } else if (fortran == "False") {
        header.fortran_order = false;
    } else {
        throw IoError("malformed fortran_order");
    }
    header.shape = parse_shape(dict_value(dict, "shape"));
    return prefix + header_len;
}

struct RawArray {
    NpyHeader header;
    std::string bytes;
    std::size_t offset = 0;
};

RawArray load_raw(const std::filesystem::path& path, const std::string& expected_descr,
                  std::size_t expected_ndim) {
    RawArray raw;
    raw.bytes = slurp(path);
    raw.offset = parse_header(raw.bytes, raw.header);
    const NpyHeader& h = raw.header;
    if (h.fortran_order) throw IoError(path.string() + ": fortran_order arrays are not supported");
    if (h.shape.size() != expected_ndim) {
        throw IoError(path.string() + ": expected " + std::to_string(expected_ndim) +
                      "-D array, got " + std::to_string(h.shape.size()) + "-D");
    }
    if (h.descr != expected_descr) {
        throw IoError(path.string() + ": expected dtype " + expected_descr + ", got " + h.descr);
    }
    if (raw.bytes.size() - raw.offset != h.element_count() * item_size(h.descr)) {
        throw IoError(path.string() + ": payload length mismatch");
    }
    return raw;
}

template <typename T>
void check_finite_values(std::span<const T> values, std::size_t cols) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            throw Error("non-finite value at (" + std::to_string(i / cols) + "," +
                        std::to_string(i % cols) + ")");
        }
    }
}

}  // namespace

std::size_t NpyHeader::element_count() const {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
}

NpyHeader read_npy_header(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string prefix(12, '\0');
    in.read(prefix.data(), 12);
    prefix.resize(static_cast<std::size_t>(in.gcount()));
    if (prefix.size() < 10 || prefix.compare(0, kMagicLen, kMagic, kMagicLen) != 0) {
        throw IoError("bad magic: not an NPY file");
    }
    const auto* u = reinterpret_cast<const unsigned char*>(prefix.data());
    std::size_t need = u[6] == 1 ? 10 + get_le<std::uint16_t>(u + 8)
                                 : 12 + get_le<std::uint32_t>(u + 8);
    std::string bytes(need, '\0');
    in.seekg(0);
    in.read(bytes.data(), static_cast<std::streamsize>(need));
    bytes.resize(static_cast<std::size_t>(in.gcount()));
    NpyHeader h;
    parse_header(bytes, h);
    return h;
}

void write_matrix(const std::filesystem::path& path, const EmbeddingMatrix& m) {
    if (m.rows() == 0 || m.cols() == 0) throw Error("matrix must have at least one row and column");
    check_finite(m);
    std::string bytes = make_header("<f4", {m.rows(), m.cols()});
    encode<float>(bytes, m.data());
    dump(path, bytes);
}

EmbeddingMatrix read_matrix(const std::filesystem::path& path) {
    RawArray raw = load_raw(path, "<f4", 2);
    std::size_t rows = raw.header.shape[0], cols = raw.header.shape[1];
    if (rows == 0 || cols == 0) throw IoError(path.string() + ": empty matrix");
    auto values = decode<float>(raw.bytes, raw.offset, rows * cols);
    check_finite_values<float>(values, cols);
    return EmbeddingMatrix(rows, cols, std::move(values));
}

void write_matrix_f64(const std::filesystem::path& path, const Matrix<double>& m) {
    check_finite_values<double>(m.data(), std::max<std::size_t>(m.cols(), 1));
    std::string bytes = make_header("<f8", {m.rows(), m.cols()});
    encode<double>(bytes, m.data());
    dump(path, bytes);
}

Matrix<double> read_matrix_f64(const std::filesystem::path& path) {
    RawArray raw = load_raw(path, "<f8", 2);
    std::size_t rows = raw.header.shape[0], cols = raw.header.shape[1];
    auto values = decode<double>(raw.bytes, raw.offset, rows * cols);
    check_finite_values<double>(values, std::max<std::size_t>(cols, 1));
    return Matrix<double>(rows, cols, std::move(values));
}

void write_vector_f64(const std::filesystem::path& path, std::span<const double> v) {
    check_finite_values<double>(v, 1);
    std::string bytes = make_header("<f8", {v.size()});
    encode<double>(bytes, v);
    dump(path, bytes);
}

std::vector<double> read_vector_f64(const std::filesystem::path& path) {
    RawArray raw = load_raw(path, "<f8", 1);
    auto values = decode<double>(raw.bytes, raw.offset, raw.header.shape[0]);
    check_finite_values<double>(values, 1);
    return values;
}

void write_labels(const std::filesystem::path& path, const LabelVector& labels) {
    std::string bytes = make_header("<i8", {labels.values.size()});
    bytes.reserve(bytes.size() + labels.values.size() * 8);
    for (std::int64_t v : labels.values) put_le(bytes, static_cast<std::uint64_t>(v));
    dump(path, bytes);
}

LabelVector read_labels(const std::filesystem::path& path, std::size_t n_classes) {
    RawArray raw = load_raw(path, "<i8", 1);
    auto bits = decode<std::uint64_t>(raw.bytes, raw.offset, raw.header.shape[0]);
    std::vector<std::int64_t> values(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) values[i] = static_cast<std::int64_t>(bits[i]);
    return make_labels(std::move(values), n_classes);
}

std::vector<std::string> class_coverage_warnings(const LabelVector& labels) {
    std::vector<bool> seen(labels.n_classes, false);
    for (auto v : labels.values) seen[static_cast<std::size_t>(v)] = true;
    std::vector<std::string> out;
    for (std::size_t c = 0; c < seen.size(); ++c) {
        if (!seen[c]) out.push_back("class " + std::to_string(c) + " absent");
    }
    return out;
}

}  // namespace oodkit
