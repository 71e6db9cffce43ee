#pragma once

#include "entropy/core/types.hpp"

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace entropy::fusion {

inline constexpr std::string_view kEnergyPrefix = "entropy";
inline constexpr std::string_view kEnergyIri = "https://entropy-project.eu/ns/energy#";
inline constexpr std::string_view kBehaviourPrefix = "ebio";
inline constexpr std::string_view kBehaviourIri = "https://entropy-project.eu/ns/ebio#";

enum class TermKind { Class, Property };
enum class Range { Number, String, Boolean, DateTime, Node, Any };

std::string_view to_string(Range r);

struct Term {
    /// Compact form, "prefix:local".
    std::string curie;
    TermKind kind = TermKind::Class;
    /// Literal range for properties.
    Range range = Range::Any;
    /// Direct superclass for classes.
    std::optional<std::string> parent;
};

/// Prefix map plus the closed set of class and property terms documents may use.
class Vocabulary {
public:
    Vocabulary() = default;
    Vocabulary(std::string version, std::map<std::string, std::string> prefixes);

    /// The energy-management and behavioural-intervention terms shipped with the platform.
    static const Vocabulary& standard();

    void add(Term term);
    const Term* find(std::string_view curie) const;
    bool is_class(std::string_view curie) const;
    bool is_property(std::string_view curie) const;
    /// Reflexive, transitive subclass test; false for unknown terms.
    bool is_subclass_of(std::string_view sub, std::string_view super) const;
    /// Every declared class that is a subclass of `super`, including itself.
    std::vector<std::string> subclasses_of(std::string_view super) const;

    /// Absolute IRI for a curie; nullopt for an unknown prefix.
    std::optional<std::string> expand(std::string_view curie) const;
    /// The JSON-LD @context object: prefix -> namespace IRI.
    json context() const;

    const std::string& version() const { return version_; }
    const std::map<std::string, std::string>& prefixes() const { return prefixes_; }
    const std::map<std::string, Term, std::less<>>& terms() const { return terms_; }

private:
    std::string version_;
    std::map<std::string, std::string> prefixes_;
    std::map<std::string, Term, std::less<>> terms_;
};

} // namespace entropy::fusion
