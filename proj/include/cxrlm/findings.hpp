#pragma once

#include "cxrlm/errors.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cxrlm::kg {
struct KnowledgeGraph;
}

namespace cxrlm::findings {

// One structured finding: entity plus optional location path, attributes and
// relations to other findings in the same document.
struct Finding {
    int64_t id = 0;
    std::string entity;
    std::vector<std::string> location; // coarse-to-fine path, may be empty
    std::vector<std::pair<std::string, std::string>> attributes;
    std::vector<std::pair<std::string, int64_t>> relations; // (relation, target id)

    bool operator==(const Finding&) const = default;
};

struct StructuredImageRepr {
    std::vector<Finding> findings;

    bool operator==(const StructuredImageRepr&) const = default;
};

enum class ParseErrorKind {
    syntax,
    dangling_relation,
    duplicate_id,
    duplicate_attribute,
    non_monotonic_id,
};

struct ParseError : DataError {
    ParseErrorKind kind;
    size_t line; // 1-based
    size_t col;  // 1-based

    ParseError(ParseErrorKind k, size_t ln, size_t cl, const std::string& msg)
        : DataError("findings:" + std::to_string(ln) + ":" + std::to_string(cl) + ": " + msg),
          kind(k), line(ln), col(cl) {}
};

// Parses one finding per line. Tolerates extra spaces between elements.
StructuredImageRepr parse_findings(const std::string& text);

// Canonical text: findings in id order, single spaces between top-level
// elements, every line newline-terminated. parse(serialize(d)) == d.
std::string serialize_findings(const StructuredImageRepr& doc);

// One warning per distinct entity / location-step / relation identifier that
// the KG surface-form index does not cover, sorted by identifier.
std::vector<std::string> validate_against_kg(const StructuredImageRepr& doc,
                                             const kg::KnowledgeGraph& graph);

} // namespace cxrlm::findings
