#include "adm_types.hpp"

#include <algorithm>
#include <cctype>

namespace sp {

bool AttributeDictionary::has_word(const std::string& category, const std::string& word) const {
    const auto* ws = words(category);
    return ws && std::find(ws->begin(), ws->end(), word) != ws->end();
}

bool AttributeDictionary::empty() const {
    for (const auto& [_, ws] : categories)
        if (!ws.empty()) return false;
    return true;
}

bool contains_identity_token(const std::string& text) {
    const std::string needle = kIdentityToken;
    size_t pos = 0;
    while ((pos = text.find(needle, pos)) != std::string::npos) {
        bool left_ok = pos == 0 || !std::isalnum(static_cast<unsigned char>(text[pos - 1]));
        size_t end = pos + needle.size();
        bool right_ok = end >= text.size() || !std::isalnum(static_cast<unsigned char>(text[end]));
        if (left_ok && right_ok) return true;
        pos = end;
    }
    return false;
}

const std::vector<std::string>& dictionary_categories() {
    static const std::vector<std::string> cats = {"color", "material", "texture", "shape",
                                                  "accessory"};
    return cats;
}

}  // namespace sp
