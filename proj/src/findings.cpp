#include "cxrlm/findings.hpp"

#include "cxrlm/kg.hpp"

#include <algorithm>
#include <set>
#include <unordered_set>

namespace cxrlm::findings {

namespace {

struct LineCursor {
    const std::string& s;
    size_t pos = 0;
    size_t line;
    size_t line_start;

    LineCursor(const std::string& str, size_t start, size_t line_no)
        : s(str), pos(start), line(line_no), line_start(start) {}

    size_t col() const { return pos - line_start + 1; }

    [[noreturn]] void fail(const std::string& msg, ParseErrorKind kind = ParseErrorKind::syntax) const {
        throw ParseError(kind, line, col(), msg);
    }

    bool at_eol() const { return pos >= s.size() || s[pos] == '\n'; }
    char peek() const { return s[pos]; }

    void skip_spaces() {
        while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
    }

    bool try_consume(char c) {
        if (!at_eol() && s[pos] == c) {
            ++pos;
            return true;
        }
        return false;
    }

    void expect(char c, const std::string& what) {
        if (at_eol() || s[pos] != c) fail("expected '" + std::string(1, c) + "' " + what);
        ++pos;
    }

    int64_t parse_int() {
        if (at_eol() || s[pos] < '1' || s[pos] > '9') fail("expected integer (must start 1-9)");
        int64_t v = 0;
        while (!at_eol() && s[pos] >= '0' && s[pos] <= '9') {
            v = v * 10 + (s[pos] - '0');
            if (v > (int64_t(1) << 40)) fail("integer out of range");
            ++pos;
        }
        return v;
    }

    std::string parse_ident() {
        if (at_eol() || !(s[pos] == '_' || (s[pos] >= 'a' && s[pos] <= 'z')))
            fail("expected identifier");
        size_t start = pos;
        while (!at_eol() &&
               (s[pos] == '_' || (s[pos] >= 'a' && s[pos] <= 'z') || (s[pos] >= '0' && s[pos] <= '9')))
            ++pos;
        return s.substr(start, pos - start);
    }
};

Finding parse_line(LineCursor& c) {
    Finding f;
    c.skip_spaces();
    f.id = c.parse_int();
    c.skip_spaces();
    c.expect(':', "after finding id");
    c.skip_spaces();
    f.entity = c.parse_ident();
    c.skip_spaces();

    if (c.try_consume('@')) {
        c.skip_spaces();
        f.location.push_back(c.parse_ident());
        c.skip_spaces();
        while (c.try_consume('/')) {
            c.skip_spaces();
            f.location.push_back(c.parse_ident());
            c.skip_spaces();
        }
    }

    if (c.try_consume('{')) {
        std::unordered_set<std::string> seen;
        while (true) {
            c.skip_spaces();
            size_t key_col = c.col();
            std::string key = c.parse_ident();
            if (!seen.insert(key).second)
                throw ParseError(ParseErrorKind::duplicate_attribute, c.line, key_col,
                                 "duplicate attribute key '" + key + "'");
            c.skip_spaces();
            c.expect('=', "in attribute pair");
            c.skip_spaces();
            std::string value = c.parse_ident();
            f.attributes.emplace_back(std::move(key), std::move(value));
            c.skip_spaces();
            if (c.try_consume(',')) continue;
            c.expect('}', "to close attribute list");
            break;
        }
        c.skip_spaces();
    }

    while (!c.at_eol() && c.peek() == '-') {
        ++c.pos;
        c.expect('>', "in '->' relation arrow");
        c.skip_spaces();
        std::string rel = c.parse_ident();
        c.skip_spaces();
        c.expect('#', "before relation target id");
        c.skip_spaces();
        int64_t target = c.parse_int();
        f.relations.emplace_back(std::move(rel), target);
        c.skip_spaces();
    }

    if (!c.at_eol()) c.fail("unexpected character");
    return f;
}

} // namespace

StructuredImageRepr parse_findings(const std::string& text) {
    StructuredImageRepr doc;
    std::unordered_set<int64_t> ids;
    int64_t last_id = 0;

    size_t pos = 0;
    size_t line_no = 1;
    while (pos < text.size()) {
        size_t eol = text.find('\n', pos);
        size_t line_end = (eol == std::string::npos) ? text.size() : eol;

        // skip blank lines
        bool blank = true;
        for (size_t i = pos; i < line_end; ++i)
            if (text[i] != ' ' && text[i] != '\t') {
                blank = false;
                break;
            }
        if (!blank) {
            LineCursor c(text, pos, line_no);
            Finding f = parse_line(c);
            if (ids.count(f.id))
                throw ParseError(ParseErrorKind::duplicate_id, line_no, 1,
                                 "duplicate finding id " + std::to_string(f.id));
            if (f.id < last_id)
                throw ParseError(ParseErrorKind::non_monotonic_id, line_no, 1,
                                 "finding id " + std::to_string(f.id) + " not increasing");
            ids.insert(f.id);
            last_id = f.id;
            doc.findings.push_back(std::move(f));
        }
        if (eol == std::string::npos) break;
        pos = eol + 1;
        ++line_no;
    }

    // relation targets must exist somewhere in the document
    size_t ln = 1;
    for (const auto& f : doc.findings) {
        for (const auto& [rel, target] : f.relations)
            if (!ids.count(target))
                throw ParseError(ParseErrorKind::dangling_relation, ln, 1,
                                 "relation '" + rel + "' targets missing finding id " +
                                     std::to_string(target));
        ++ln;
    }
    return doc;
}

std::string serialize_findings(const StructuredImageRepr& doc) {
    std::string out;
    for (const auto& f : doc.findings) {
        out += std::to_string(f.id);
        out += ": ";
        out += f.entity;
        if (!f.location.empty()) {
            out += " @";
            for (size_t i = 0; i < f.location.size(); ++i) {
                if (i) out += '/';
                out += f.location[i];
            }
        }
        if (!f.attributes.empty()) {
            out += " {";
            for (size_t i = 0; i < f.attributes.size(); ++i) {
                if (i) out += ',';
                out += f.attributes[i].first;
                out += '=';
                out += f.attributes[i].second;
            }
            out += '}';
        }
        for (const auto& [rel, target] : f.relations) {
            out += " ->";
            out += rel;
            out += '#';
            out += std::to_string(target);
        }
        out += '\n';
    }
    return out;
}

std::vector<std::string> validate_against_kg(const StructuredImageRepr& doc,
                                             const kg::KnowledgeGraph& graph) {
    std::set<std::string> identifiers;
    for (const auto& f : doc.findings) {
        identifiers.insert(f.entity);
        for (const auto& step : f.location) identifiers.insert(step);
        for (const auto& [rel, target] : f.relations) identifiers.insert(rel);
    }
    std::vector<std::string> warnings;
    for (const auto& ident : identifiers)
        if (!graph.has_surface_form(ident))
            warnings.push_back("identifier '" + ident + "' not covered by knowledge graph");
    return warnings;
}

} // namespace cxrlm::findings
