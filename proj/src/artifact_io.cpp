#include "softarm/artifact_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <system_error>

#include "softarm/errors.hpp"

namespace softarm::io {

std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string fmt(std::int64_t v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }

double parse_double(std::string_view s, const std::string& what) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw std::invalid_argument("invalid " + what + ": '" + std::string(s) + "'");
    }
    return v;
}

std::int64_t parse_int(std::string_view s, const std::string& what) {
    std::int64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw std::invalid_argument("invalid " + what + ": '" + std::string(s) + "'");
    }
    return v;
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(s.substr(start));
            break;
        }
        out.emplace_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::string join(const std::vector<std::string>& parts, char sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out.push_back(sep);
        out += parts[i];
    }
    return out;
}

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<double> parse_double_list(std::string_view s, const std::string& what) {
    std::vector<double> out;
    if (trim(s).empty()) return out;
    for (const auto& part : split(s, ',')) out.push_back(parse_double(trim(part), what));
    return out;
}

std::string fmt_double_list(const std::vector<double>& v) {
    std::vector<std::string> parts;
    parts.reserve(v.size());
    for (double x : v) parts.push_back(fmt(x));
    return join(parts, ',');
}

void KvBlock::set(const std::string& key, const std::string& value) {
    auto it = index_.find(key);
    if (it != index_.end()) {
        entries_[it->second].second = value;
        return;
    }
    index_[key] = entries_.size();
    entries_.emplace_back(key, value);
}

bool KvBlock::has(const std::string& key) const { return index_.count(key) != 0; }

const std::string& KvBlock::get(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) throw std::invalid_argument("missing header key '" + key + "'");
    return entries_[it->second].second;
}

double KvBlock::get_double(const std::string& key) const { return parse_double(get(key), key); }
std::int64_t KvBlock::get_int(const std::string& key) const { return parse_int(get(key), key); }

std::string KvBlock::serialize() const {
    std::string out;
    for (const auto& [k, v] : entries_) {
        out += k;
        out += " = ";
        out += v;
        out += '\n';
    }
    return out;
}

KvBlock KvBlock::parse(std::istream& in, const std::string& file, int& line_no) {
    KvBlock block;
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty()) continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ParseError(file, line_no, "expected 'key = value', got '" + t + "'");
        }
        block.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return block;
}

KvBlock KvBlock::parse_string(const std::string& text) {
    std::istringstream in(text);
    int line_no = 0;
    return parse(in, "<string>", line_no);
}

bool LineReader::next(std::string& line) {
    if (!std::getline(in_, line)) return false;
    ++line_no_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
}

void LineReader::fail(const std::string& msg) const { throw ParseError(file_, line_no_, msg); }

void check_format(const KvBlock& header, const std::string& file) {
    if (!header.has("format")) throw ParseError(file, 1, "missing 'format' header");
    const std::string& tag = header.get("format");
    if (tag != kFormatTag) {
        throw VersionError("unsupported format version '" + tag + "' in " + file +
                           " (this build reads '" + std::string(kFormatTag) + "')");
    }
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << content;
    if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

}  // namespace softarm::io
