#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace softarm::io {

// Shortest decimal form that parses back to the same double (to_chars).
std::string fmt(double v);
std::string fmt(std::int64_t v);
std::string fmt(std::uint64_t v);

double parse_double(std::string_view s, const std::string& what = "number");
std::int64_t parse_int(std::string_view s, const std::string& what = "integer");

std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, char sep);
std::string trim(std::string_view s);

std::vector<double> parse_double_list(std::string_view s, const std::string& what);
std::string fmt_double_list(const std::vector<double>& v);

constexpr std::string_view kFormatTag = "softarm/1";

// Ordered key-value block: insertion order is preserved so serialized headers
// are byte-stable.
class KvBlock {
public:
    void set(const std::string& key, const std::string& value);
    void set(const std::string& key, double v) { set(key, fmt(v)); }
    void set(const std::string& key, std::int64_t v) { set(key, fmt(v)); }
    void set(const std::string& key, std::uint64_t v) { set(key, fmt(v)); }

    bool has(const std::string& key) const;
    const std::string& get(const std::string& key) const;  // throws ParseError-style on missing
    double get_double(const std::string& key) const;
    std::int64_t get_int(const std::string& key) const;

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

    // "key = value" per line.
    std::string serialize() const;
    // Parses lines until end-of-input; line_base offsets reported line numbers.
    static KvBlock parse(std::istream& in, const std::string& file, int& line_no);
    static KvBlock parse_string(const std::string& text);

private:
    std::vector<std::pair<std::string, std::string>> entries_;
    std::map<std::string, std::size_t> index_;
};

// Line reader that tracks position for parse errors.
class LineReader {
public:
    LineReader(std::istream& in, std::string file) : in_(in), file_(std::move(file)) {}
    bool next(std::string& line);
    int line_no() const { return line_no_; }
    const std::string& file() const { return file_; }
    [[noreturn]] void fail(const std::string& msg) const;

private:
    std::istream& in_;
    std::string file_;
    int line_no_ = 0;
};

// Reads "format = softarm/1" (first header entry) and rejects other versions.
void check_format(const KvBlock& header, const std::string& file);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t v);

}  // namespace softarm::io
