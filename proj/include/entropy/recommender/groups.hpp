#pragma once

#include "entropy/core/types.hpp"
#include "entropy/fusion/vocabulary.hpp"

#include <map>
#include <set>
#include <string>
#include <vector>

namespace entropy::recommender {

/// NamedClass and (hasPreference some C1) and ... and (hasPreference some Cn), n >= 0.
struct ClassExpression {
    std::string named_class = "Person";
    /// Preference classes, local names within the behavioural prefix ("Reward").
    std::vector<std::string> some_preferences;

    bool operator==(const ClassExpression&) const = default;
};

struct GroupDefinition {
    std::string name;
    ClassExpression expression;
};

/// Manchester syntax restricted to the conjunctive shape:
/// "[Name equivalentTo] Person [that|and] hasPreference some Reward and hasPreference some Competition".
/// Raises unsupported-expression-shape for anything else.
GroupDefinition parse_group_definition(std::string_view text);
std::string to_manchester(const GroupDefinition& def);

/// {"name": ..., "expression": "<manchester>"} or {"name": ..., "class": "Person", "some": [..]}.
void to_json(json& j, const GroupDefinition& d);
void from_json(const json& j, GroupDefinition& d);

/// Normalizes "Free Spirit", "free-spirit" to the local class name "FreeSpirit".
std::string normalize_term(std::string_view name);

/// Closed-world membership: every existential conjunct has a witness among the preferences.
/// A preference witnesses C when it is C or a declared subclass of C.
bool satisfies(const ClassExpression& e, const std::set<std::string>& preferences,
               const fusion::Vocabulary& vocab = fusion::Vocabulary::standard());

/// Checks named class and preference classes against the vocabulary.
void check_definition(const GroupDefinition& def, const fusion::Vocabulary& vocab = fusion::Vocabulary::standard());

std::set<std::string> infer_groups(const std::set<std::string>& preferences, const std::vector<GroupDefinition>& defs,
                                   const fusion::Vocabulary& vocab = fusion::Vocabulary::standard());

/// Player needs Reward and Competition; Socialiser, Humanitarian and FreeSpirit need
/// SocialInteraction, Altruism and Autonomy respectively.
std::vector<GroupDefinition> default_group_definitions();

/// Highest precedence first.
std::vector<std::string> default_gamer_type_precedence();

} // namespace entropy::recommender
