#include "profact/config.hpp"

#include "profact/error.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace profact {

namespace {

std::string trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

// Tracks basic ("...", with escapes) and literal ('...') strings.
struct QuoteState {
    char open = 0;
    char prev = 0;
    void feed(char c) {
        if (open == 0 && (c == '"' || c == '\'')) {
            open = c;
        } else if (c == open && !(open == '"' && prev == '\\')) {
            open = 0;
        }
        prev = c;
    }
    bool inside() const { return open != 0; }
};

// Drops a trailing comment, ignoring '#' inside quoted strings.
std::string strip_comment(const std::string& line) {
    QuoteState q;
    for (size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '#' && !q.inside()) {
            return line.substr(0, i);
        }
        q.feed(line[i]);
    }
    return line;
}

std::vector<std::string> split_top_level(const std::string& s) {
    std::vector<std::string> parts;
    std::string cur;
    QuoteState q;
    for (char c : s) {
        q.feed(c);
        if (c == ',' && !q.inside()) {
            parts.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!trim(cur).empty()) {
        parts.push_back(trim(cur));
    }
    return parts;
}

nlohmann::json parse_scalar(const std::string& raw, size_t line_no) {
    const std::string v = trim(raw);
    auto fail = [&] { throw ConfigError("line " + std::to_string(line_no) + ": cannot parse value '" + v + "'"); };
    if (v.empty()) {
        fail();
    }
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"') {
            fail();
        }
        try {
            return nlohmann::json::parse(v);
        } catch (const nlohmann::json::exception&) {
            fail();
        }
    }
    if (v.front() == '\'') {
        if (v.size() < 2 || v.back() != '\'' || v.find('\'', 1) != v.size() - 1) {
            fail();
        }
        return v.substr(1, v.size() - 2);
    }
    if (v == "true") return true;
    if (v == "false") return false;
    std::string num;
    std::copy_if(v.begin(), v.end(), std::back_inserter(num), [](char c) { return c != '_'; });
    const bool is_float = num.find_first_of(".eE") != std::string::npos;
    try {
        size_t used = 0;
        if (is_float) {
            double d = std::stod(num, &used);
            if (used == num.size()) return d;
        } else {
            long long i = std::stoll(num, &used);
            if (used == num.size()) return i;
        }
    } catch (const std::exception&) {
    }
    fail();
    return nullptr;
}

nlohmann::json parse_value(const std::string& raw, size_t line_no) {
    const std::string v = trim(raw);
    if (!v.empty() && v.front() == '[') {
        if (v.back() != ']') {
            throw ConfigError("line " + std::to_string(line_no) + ": unterminated array");
        }
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& part : split_top_level(v.substr(1, v.size() - 2))) {
            arr.push_back(parse_scalar(part, line_no));
        }
        return arr;
    }
    return parse_scalar(v, line_no);
}

std::vector<std::string> split_dotted(const std::string& key) {
    std::vector<std::string> parts;
    std::stringstream ss(key);
    std::string p;
    while (std::getline(ss, p, '.')) {
        parts.push_back(trim(p));
    }
    return parts;
}

} // namespace

nlohmann::json parse_toml(const std::string& text) {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* table = &root;
    std::istringstream in(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string s = trim(strip_comment(line));
        if (s.empty()) {
            continue;
        }
        if (s.front() == '[') {
            if (s.back() != ']' || s.size() < 3 || s[1] == '[') {
                throw ConfigError("line " + std::to_string(line_no) + ": unsupported table header '" + s + "'");
            }
            table = &root;
            for (const auto& part : split_dotted(s.substr(1, s.size() - 2))) {
                if (part.empty()) {
                    throw ConfigError("line " + std::to_string(line_no) + ": empty table name");
                }
                nlohmann::json& next = (*table)[part];
                if (next.is_null()) {
                    next = nlohmann::json::object();
                } else if (!next.is_object()) {
                    throw ConfigError("line " + std::to_string(line_no) + ": '" + part + "' is not a table");
                }
                table = &next;
            }
            continue;
        }
        const size_t eq = s.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        }
        std::string key = trim(s.substr(0, eq));
        if (key.size() >= 2 && key.front() == '"' && key.back() == '"') {
            key = key.substr(1, key.size() - 2);
        }
        if (key.empty()) {
            throw ConfigError("line " + std::to_string(line_no) + ": empty key");
        }
        if (table->contains(key)) {
            throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
        }
        (*table)[key] = parse_value(s.substr(eq + 1), line_no);
    }
    return root;
}

nlohmann::json read_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FileNotFound("no such config file: " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    if (path.extension() == ".toml") {
        try {
            return parse_toml(buf.str());
        } catch (const ConfigError& e) {
            throw ConfigError(path.string() + ": " + e.what());
        }
    }
    try {
        return nlohmann::json::parse(buf.str());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                         const std::string& where) {
    if (!j.is_object()) {
        throw ConfigError(where + ": expected a table");
    }
    for (const auto& item : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
            throw ConfigError("unknown config key '" + item.key() + "' in " + where);
        }
    }
}

} // namespace profact
