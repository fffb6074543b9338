#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fastslow/errors.hpp"

namespace fastslow {

using Json = nlohmann::json;

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// RFC-4180 quoting: wrap in quotes when the field contains comma, quote, or
// newline; embedded quotes are doubled.
inline std::string csv_quote(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

using CsvField = std::variant<std::string, double, long, std::uint64_t>;

class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {
        write_row_strings(header_);
    }

    void row(const std::vector<CsvField>& fields) {
        if (fields.size() != header_.size())
            throw interface_error("csv row width does not match the header");
        std::vector<std::string> cells;
        cells.reserve(fields.size());
        for (const auto& f : fields) {
            if (std::holds_alternative<std::string>(f))
                cells.push_back(std::get<std::string>(f));
            else if (std::holds_alternative<double>(f))
                cells.push_back(format_double(std::get<double>(f)));
            else if (std::holds_alternative<long>(f))
                cells.push_back(std::to_string(std::get<long>(f)));
            else
                cells.push_back(std::to_string(std::get<std::uint64_t>(f)));
        }
        write_row_strings(cells);
    }

    const std::string& str() const { return buf_; }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw config_error("cannot open output file: " + path);
        out << buf_;
    }

private:
    void write_row_strings(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) buf_ += ',';
            buf_ += csv_quote(cells[i]);
        }
        buf_ += '\n';
    }

    std::vector<std::string> header_;
    std::string buf_;
};

inline void save_json(const Json& j, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot open output file: " + path);
    out << j.dump(2) << '\n';
}

inline Json load_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot open config file: " + path);
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw config_error(std::string("config is not valid JSON: ") + e.what());
    }
}

}  // namespace fastslow
