#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace blockdiff {

/// Arbitrary-precision unsigned integer with 32-bit limbs (little-endian).
/// Provides only what weighted-degree bookkeeping needs: exact addition,
/// multiplication by a machine word, and total ordering.
class BigUint {
public:
    BigUint() = default;

    BigUint(std::uint64_t v) {  // NOLINT: implicit by design
        if (v != 0) {
            limbs_.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
            if (v >> 32) limbs_.push_back(static_cast<std::uint32_t>(v >> 32));
        }
    }

    bool is_zero() const { return limbs_.empty(); }

    BigUint& operator+=(const BigUint& o) {
        if (o.limbs_.size() > limbs_.size()) limbs_.resize(o.limbs_.size(), 0);
        std::uint64_t carry = 0;
        for (std::size_t i = 0; i < limbs_.size(); ++i) {
            std::uint64_t s = carry + limbs_[i];
            if (i < o.limbs_.size()) s += o.limbs_[i];
            limbs_[i] = static_cast<std::uint32_t>(s & 0xffffffffu);
            carry = s >> 32;
        }
        if (carry) limbs_.push_back(static_cast<std::uint32_t>(carry));
        return *this;
    }

    friend BigUint operator+(BigUint a, const BigUint& b) {
        a += b;
        return a;
    }

    BigUint& mul_u32(std::uint32_t f) {
        if (f == 0) {
            limbs_.clear();
            return *this;
        }
        std::uint64_t carry = 0;
        for (auto& limb : limbs_) {
            std::uint64_t p = static_cast<std::uint64_t>(limb) * f + carry;
            limb = static_cast<std::uint32_t>(p & 0xffffffffu);
            carry = p >> 32;
        }
        if (carry) limbs_.push_back(static_cast<std::uint32_t>(carry));
        return *this;
    }

    friend BigUint operator*(BigUint a, std::uint32_t f) {
        a.mul_u32(f);
        return a;
    }

    friend bool operator==(const BigUint& a, const BigUint& b) { return a.limbs_ == b.limbs_; }

    friend bool operator<(const BigUint& a, const BigUint& b) {
        if (a.limbs_.size() != b.limbs_.size()) return a.limbs_.size() < b.limbs_.size();
        for (std::size_t i = a.limbs_.size(); i-- > 0;) {
            if (a.limbs_[i] != b.limbs_[i]) return a.limbs_[i] < b.limbs_[i];
        }
        return false;
    }
    friend bool operator!=(const BigUint& a, const BigUint& b) { return !(a == b); }
    friend bool operator>(const BigUint& a, const BigUint& b) { return b < a; }
    friend bool operator<=(const BigUint& a, const BigUint& b) { return !(b < a); }
    friend bool operator>=(const BigUint& a, const BigUint& b) { return !(a < b); }

    /// Exact conversion; throws if the value does not fit in 64 bits.
    std::uint64_t to_u64() const {
        if (limbs_.size() > 2) throw std::overflow_error("BigUint::to_u64: value exceeds 64 bits");
        std::uint64_t v = 0;
        if (limbs_.size() > 1) v = static_cast<std::uint64_t>(limbs_[1]) << 32;
        if (!limbs_.empty()) v |= limbs_[0];
        return v;
    }

    std::string to_string() const {
        if (limbs_.empty()) return "0";
        // Repeated division by 1e9 over a scratch copy.
        std::vector<std::uint32_t> scratch = limbs_;
        std::string out;
        while (!scratch.empty()) {
            std::uint64_t rem = 0;
            for (std::size_t i = scratch.size(); i-- > 0;) {
                std::uint64_t cur = (rem << 32) | scratch[i];
                scratch[i] = static_cast<std::uint32_t>(cur / 1000000000u);
                rem = cur % 1000000000u;
            }
            while (!scratch.empty() && scratch.back() == 0) scratch.pop_back();
            std::string chunk = std::to_string(rem);
            if (!scratch.empty()) chunk.insert(0, 9 - chunk.size(), '0');
            out.insert(0, chunk);
        }
        return out;
    }

private:
    std::vector<std::uint32_t> limbs_;  // no trailing zero limbs
};

}  // namespace blockdiff
