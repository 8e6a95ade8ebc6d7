#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <openssl/evp.h>

#include "drnn/errors.hpp"

namespace drnn {

namespace fs = std::filesystem;

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
    std::array<char, 32> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    if (ec != std::errc{}) throw std::runtime_error("format_double failed");
    return std::string(buf.data(), end);
}

inline double parse_double(std::string_view text) {
    double v = 0.0;
    const char* first = text.data();
    const char* last = first + text.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last) throw ConfigError("not a number: '" + std::string(text) + "'");
    return v;
}

inline std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("SHA-256 digest failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xF]);
    }
    return out;
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

/// Writes bytes to `path`, creating parent directories.
inline void write_file(const fs::path& path, std::string_view bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

/// Minimal RFC-4180 writer: fields containing ',', '"' or newlines are quoted.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) : columns_(header.size()) { row(header); }

    CsvWriter& row(const std::vector<std::string>& fields) {
        if (fields.size() != columns_) throw std::logic_error("CSV row has the wrong number of fields");
        for (std::size_t k = 0; k < fields.size(); ++k) {
            if (k) out_ << ',';
            put(fields[k]);
        }
        out_ << '\n';
        return *this;
    }

    std::string str() const { return out_.str(); }

private:
    void put(const std::string& f) {
        if (f.find_first_of(",\"\n\r") == std::string::npos) {
            out_ << f;
            return;
        }
        out_ << '"';
        for (char ch : f) {
            if (ch == '"') out_ << '"';
            out_ << ch;
        }
        out_ << '"';
    }

    std::size_t columns_;
    std::ostringstream out_;
};

/// Reads an unquoted numeric CSV (the payloads this library writes).
/// Returns the header and the rows as text fields.
inline std::pair<std::vector<std::string>, std::vector<std::vector<std::string>>> read_simple_csv(
    std::string_view text) {
    std::vector<std::vector<std::string>> rows;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        std::string_view line = text.substr(pos, eol - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (!line.empty()) {
            std::vector<std::string> fields;
            std::size_t start = 0;
            while (true) {
                const std::size_t comma = line.find(',', start);
                fields.emplace_back(line.substr(start, comma - start));
                if (comma == std::string_view::npos) break;
                start = comma + 1;
            }
            rows.push_back(std::move(fields));
        }
        pos = eol + 1;
    }
    if (rows.empty()) throw ConfigError("empty CSV");
    std::vector<std::string> header = std::move(rows.front());
    rows.erase(rows.begin());
    return {std::move(header), std::move(rows)};
}

}  // namespace drnn
