#ifndef SP_TAS_HPP
#define SP_TAS_HPP

#include <functional>
#include <string>
#include <vector>

#include "adm_types.hpp"
#include "types.hpp"

namespace sp {
namespace tas {

enum class DecomposeMode { pooled_per_token, flattened };

DecomposeMode decompose_mode_from_name(const std::string& name);

struct AttributeMatch {
    std::vector<std::string> matched_words;
    std::string category;          // empty when nothing matched
    std::string eliminate_prompt;  // nonempty iff matched_words is

    bool empty() const { return matched_words.empty(); }
};

// built-in category keyword lexicon used by the deterministic matcher and by
// the benchmark prompt validator
const std::vector<std::string>& category_lexicon(const std::string& category);
const std::vector<std::string>& category_order();  // color > material > texture > shape > accessory
bool is_attribute_word(const std::string& word);

// Deterministic fallback matcher: the prompt edits a category when it contains
// a lexicon word of that category that is not already in the dictionary; the
// match returns the dictionary's words for that category (the attributes to
// suppress). Ties broken by category_order().
AttributeMatch match_attributes_keyword(const std::string& user_prompt,
                                        const AttributeDictionary& dictionary,
                                        const std::string& eliminate_template);

// remove the p_eli direction from p_raw by orthogonal projection
TextEmbedding decompose(const TextEmbedding& p_raw, const TextEmbedding& p_eli,
                        DecomposeMode mode);

using TextEncoder = std::function<TextEmbedding(const std::string&)>;
using Matcher = std::function<AttributeMatch(const std::string&, const AttributeDictionary&)>;

struct SubstituteResult {
    Conditioning conditioning;
    AttributeMatch match;
    bool decomposed = false;
};

// encode the user prompt, and when the matcher finds an attribute to suppress,
// encode the eliminate prompt and project it out
SubstituteResult substitute(const std::string& user_prompt, const AttributeDictionary& dictionary,
                            const TextEncoder& encoder, const Matcher& matcher,
                            DecomposeMode mode = DecomposeMode::pooled_per_token,
                            float guidance_scale = 1.f);

std::string render_eliminate_prompt(const std::string& tmpl,
                                    const std::vector<std::string>& attributes,
                                    const std::string& subject_class);

inline constexpr const char* kDefaultEliminateTemplate = "a {attributes} [class]";

}  // namespace tas
}  // namespace sp

#endif
