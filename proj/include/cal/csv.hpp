#pragma once

// Minimal RFC-4180 reader and writer.

#include "error.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace cal::csv {

struct Row {
    std::size_t line = 0; // 1-based physical line where the record starts
    std::vector<std::string> fields;
};

inline std::vector<Row> parse(std::string_view text) {
    std::vector<Row> rows;
    Row current;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    std::size_t line = 1;
    current.line = 1;

    auto end_field = [&] {
        current.fields.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        // a lone unquoted empty field means a blank line; "" is a real record
        const bool blank = current.fields.empty() && field.empty() && !field_started;
        end_field();
        if (!blank) {
            rows.push_back(std::move(current));
        }
        current = Row{};
        current.line = line;
    };

    if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") {
        text.remove_prefix(3);
    }

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') {
                    ++line;
                }
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
        case '"':
            if (field_started || !field.empty()) {
                throw Error(ErrorCode::parse, "stray quote on line " + std::to_string(line));
            }
            in_quotes = true;
            field_started = true;
            break;
        case ',':
            end_field();
            break;
        case '\r':
            if (i + 1 < text.size() && text[i + 1] == '\n') {
                break;
            }
            ++line;
            end_record();
            break;
        case '\n':
            ++line;
            end_record();
            break;
        default:
            field.push_back(c);
            field_started = true;
        }
    }
    if (in_quotes) {
        throw Error(ErrorCode::parse, "unterminated quoted field starting before line " + std::to_string(line));
    }
    if (field_started || !field.empty() || !current.fields.empty()) {
        end_record();
    }
    return rows;
}

inline std::string quote(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) {
        return std::string(field);
    }
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') {
            out.push_back('"');
        }
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

inline void append_row(std::string& out, std::initializer_list<std::string_view> fields) {
    bool first = true;
    for (auto f : fields) {
        if (!first) {
            out.push_back(',');
        }
        out += quote(f);
        first = false;
    }
    out += "\r\n";
}

} // namespace cal::csv
