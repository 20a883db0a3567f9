#include "tas.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "error.hpp"

namespace sp {
namespace tas {

DecomposeMode decompose_mode_from_name(const std::string& name) {
    if (name == "pooled-per-token") return DecomposeMode::pooled_per_token;
    if (name == "flattened") return DecomposeMode::flattened;
    fail(ErrorCode::config, "unknown tas mode: " + name);
}

const std::vector<std::string>& category_order() {
    static const std::vector<std::string> order = {"color", "material", "texture", "shape",
                                                   "accessory"};
    return order;
}

const std::vector<std::string>& category_lexicon(const std::string& category) {
    static const std::map<std::string, std::vector<std::string>> lex = {
        {"color",
         {"red", "blue", "green", "brown", "black", "white", "yellow", "orange", "purple",
          "pink", "gray", "grey", "golden", "silver", "beige", "teal", "cyan", "magenta"}},
        {"material",
         {"clay", "glass", "metal", "metallic", "wood", "wooden", "plastic", "leather",
          "ceramic", "steel", "stone", "paper", "rubber", "fabric", "wool", "porcelain"}},
        {"texture",
         {"furry", "smooth", "rough", "shiny", "matte", "glossy", "striped", "dotted",
          "spotted", "fluffy", "soft", "bumpy", "woven", "knitted", "polished"}},
        {"shape",
         {"round", "square", "tall", "short", "small", "large", "cubic", "oval", "flat",
          "curved", "slim", "wide", "thin", "chubby", "angular"}},
        {"accessory",
         {"hat", "scarf", "glasses", "sunglasses", "bow", "ribbon", "collar", "necklace",
          "crown", "cape", "backpack", "helmet", "bandana"}},
    };
    static const std::vector<std::string> none;
    auto it = lex.find(category);
    return it == lex.end() ? none : it->second;
}

bool is_attribute_word(const std::string& word) {
    for (const auto& cat : category_order()) {
        const auto& ws = category_lexicon(cat);
        if (std::find(ws.begin(), ws.end(), word) != ws.end()) return true;
    }
    return false;
}

namespace {

std::vector<std::string> lower_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
    size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

}  // namespace

std::string render_eliminate_prompt(const std::string& tmpl,
                                    const std::vector<std::string>& attributes,
                                    const std::string& subject_class) {
    std::string joined;
    for (size_t i = 0; i < attributes.size(); i++) {
        if (i) joined += " ";
        joined += attributes[i];
    }
    std::string out = replace_all(tmpl, "{attributes}", joined);
    out = replace_all(out, "[class]", subject_class);
    out = replace_all(out, "{class}", subject_class);
    return out;
}

AttributeMatch match_attributes_keyword(const std::string& user_prompt,
                                        const AttributeDictionary& dictionary,
                                        const std::string& eliminate_template) {
    std::vector<std::string> words = lower_words(user_prompt);
    for (const auto& cat : category_order()) {
        const auto* dict_words = dictionary.words(cat);
        if (!dict_words || dict_words->empty()) continue;
        const auto& lex = category_lexicon(cat);
        bool editing = false;
        for (const auto& w : words) {
            bool in_lexicon = std::find(lex.begin(), lex.end(), w) != lex.end();
            bool in_dict = std::find(dict_words->begin(), dict_words->end(), w) != dict_words->end();
            if (in_lexicon && !in_dict) {
                editing = true;
                break;
            }
        }
        if (editing) {
            AttributeMatch m;
            m.matched_words = *dict_words;
            m.category = cat;
            m.eliminate_prompt =
                render_eliminate_prompt(eliminate_template, m.matched_words,
                                        dictionary.subject_class);
            return m;
        }
    }
    return {};
}

namespace {

// unit direction of v; returns false when the norm is below the degeneracy threshold
bool unit_direction(const std::vector<double>& v, std::vector<double>& u) {
    double norm2 = 0.0;
    for (double x : v) norm2 += x * x;
    double norm = std::sqrt(norm2);
    if (norm < 1e-12) return false;
    u.resize(v.size());
    for (size_t i = 0; i < v.size(); i++) u[i] = v[i] / norm;
    return true;
}

}  // namespace

TextEmbedding decompose(const TextEmbedding& p_raw, const TextEmbedding& p_eli,
                        DecomposeMode mode) {
    if (p_raw.dim != p_eli.dim)
        fail(ErrorCode::shape_mismatch, "decompose: embedding dims differ");

    TextEmbedding out = p_raw;
    if (mode == DecomposeMode::pooled_per_token) {
        std::vector<double> u;
        if (!unit_direction(p_eli.pooled, u))
            fail(ErrorCode::zero_eliminate_direction,
                 "decompose: eliminate direction has near-zero norm");
        for (int i = 0; i < out.toks; i++) {
            double dot = 0.0;
            for (int j = 0; j < out.dim; j++) dot += out.tok(i, j) * u[j];
            for (int j = 0; j < out.dim; j++) out.tok(i, j) -= dot * u[j];
        }
        out.repool();
    } else {
        if (p_raw.toks != p_eli.toks)
            fail(ErrorCode::shape_mismatch, "decompose: flattened mode requires equal token counts");
        std::vector<double> u;
        if (!unit_direction(p_eli.tokens, u))
            fail(ErrorCode::zero_eliminate_direction,
                 "decompose: eliminate direction has near-zero norm");
        double dot = 0.0;
        for (size_t i = 0; i < out.tokens.size(); i++) dot += out.tokens[i] * u[i];
        for (size_t i = 0; i < out.tokens.size(); i++) out.tokens[i] -= dot * u[i];
        out.repool();
    }
    return out;
}

SubstituteResult substitute(const std::string& user_prompt, const AttributeDictionary& dictionary,
                            const TextEncoder& encoder, const Matcher& matcher,
                            DecomposeMode mode, float guidance_scale) {
    SubstituteResult r;
    r.conditioning.guidance_scale = guidance_scale;
    r.conditioning.embedding = encoder(user_prompt);
    r.match = matcher(user_prompt, dictionary);
    if (r.match.empty()) return r;
    TextEmbedding p_eli = encoder(r.match.eliminate_prompt);
    r.conditioning.embedding = decompose(r.conditioning.embedding, p_eli, mode);
    r.decomposed = true;
    return r;
}

}  // namespace tas
}  // namespace sp
