#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <utility>

namespace flr {

/// Philox4x64-10 counter-based generator (Salmon et al., SC'11).
///
/// The key is (seed, stream); a 256-bit counter is encrypted block by block,
/// so streams with different keys are independent and any position is
/// reproducible. Satisfies std::uniform_random_bit_generator.
class Philox4x64 {
public:
    using result_type = std::uint64_t;
    using Block = std::array<std::uint64_t, 4>;
    using Key = std::array<std::uint64_t, 2>;

    explicit Philox4x64(std::uint64_t seed = 0, std::uint64_t stream = 0) : key_{seed, stream} {}
    /// Starts from an explicit counter; the first block encrypts counter + 1.
    Philox4x64(Key key, Block counter) : key_(key), counter_(counter) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        if (used_ == 4) {
            increment();
            block_ = encrypt(counter_, key_);
            used_ = 0;
        }
        return block_[used_++];
    }

    /// The raw bijection: ten rounds over `counter` under `key`.
    static Block encrypt(Block counter, Key key) {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += kWeyl0;
                key[1] += kWeyl1;
            }
            const auto [hi0, lo0] = mulhilo(kMul0, counter[0]);
            const auto [hi1, lo1] = mulhilo(kMul1, counter[2]);
            counter = {hi1 ^ counter[1] ^ key[0], lo1, hi0 ^ counter[3] ^ key[1], lo0};
        }
        return counter;
    }

    const Block& counter() const noexcept { return counter_; }

private:
    static constexpr std::uint64_t kMul0 = 0xD2E7470EE14C6C93ULL;
    static constexpr std::uint64_t kMul1 = 0xCA5A826395121157ULL;
    static constexpr std::uint64_t kWeyl0 = 0x9E3779B97F4A7C15ULL;
    static constexpr std::uint64_t kWeyl1 = 0xBB67AE8584CAA73BULL;

    __extension__ using u128 = unsigned __int128;

    static std::pair<std::uint64_t, std::uint64_t> mulhilo(std::uint64_t a, std::uint64_t b) {
        const u128 p = static_cast<u128>(a) * b;
        return {static_cast<std::uint64_t>(p >> 64), static_cast<std::uint64_t>(p)};
    }

    void increment() {
        for (auto& word : counter_) {
            if (++word != 0) break;
        }
    }

    Key key_;
    Block counter_{};
    Block block_{};
    int used_ = 4;
};

}  // namespace flr
