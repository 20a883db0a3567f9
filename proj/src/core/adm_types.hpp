#ifndef SP_ADM_TYPES_HPP
#define SP_ADM_TYPES_HPP

#include <map>
#include <string>
#include <vector>

namespace sp {

// category -> attribute words for one subject, lowercase, deduplicated
struct AttributeDictionary {
    std::string subject_class;
    std::map<std::string, std::vector<std::string>> categories;
    std::string vlm_model;    // provenance
    std::string prompt_hash;  // provenance

    const std::vector<std::string>* words(const std::string& category) const {
        auto it = categories.find(category);
        return it == categories.end() ? nullptr : &it->second;
    }
    bool has_word(const std::string& category, const std::string& word) const;
    bool empty() const;
};

struct PromptRecord {
    std::string text;
    bool has_identity_token = false;
    std::vector<std::pair<std::string, std::string>> attributes_used;  // (category, word)
};

inline constexpr const char* kIdentityToken = "sks";

// string-level identity-token check on whole tokens
bool contains_identity_token(const std::string& text);

const std::vector<std::string>& dictionary_categories();  // the five fixed categories

}  // namespace sp

#endif
