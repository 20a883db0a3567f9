#ifndef SP_HASH_HPP
#define SP_HASH_HPP

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace sp {

struct Fnv1a64 {
    uint64_t state = 0xcbf29ce484222325ULL;

    void update(const void* data, size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; i++) {
            state ^= p[i];
            state *= 0x100000001b3ULL;
        }
    }

    void update(const std::string& s) { update(s.data(), s.size()); }

    void update(const std::vector<float>& v) {
        update(v.data(), v.size() * sizeof(float));
    }

    uint64_t digest() const { return state; }

    std::string hex() const {
        static const char* k = "0123456789abcdef";
        std::string out(16, '0');
        uint64_t h = state;
        for (int i = 15; i >= 0; i--) {
            out[i] = k[h & 0xf];
            h >>= 4;
        }
        return out;
    }
};

inline std::string hash_hex(const std::string& s) {
    Fnv1a64 h;
    h.update(s);
    return h.hex();
}

}  // namespace sp

#endif
