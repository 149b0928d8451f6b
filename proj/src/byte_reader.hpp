#pragma once

#include <cstdint>
#include <optional>
#include <span>

namespace bindwatch::detail {

// Bounds-checked big-endian cursor. Every accessor returns nullopt/false
// instead of reading past the end.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) noexcept : data_(data) {}

    std::size_t pos() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }

    std::optional<std::uint8_t> u8() noexcept {
        if (remaining() < 1) return std::nullopt;
        return data_[pos_++];
    }

    std::optional<std::uint16_t> u16() noexcept {
        if (remaining() < 2) return std::nullopt;
        auto v = static_cast<std::uint16_t>((data_[pos_] << 8) | data_[pos_ + 1]);
        pos_ += 2;
        return v;
    }

    std::optional<std::uint32_t> u24() noexcept {
        if (remaining() < 3) return std::nullopt;
        std::uint32_t v = (std::uint32_t{data_[pos_]} << 16) | (std::uint32_t{data_[pos_ + 1]} << 8) |
                          data_[pos_ + 2];
        pos_ += 3;
        return v;
    }

    std::optional<std::uint32_t> u32() noexcept {
        if (remaining() < 4) return std::nullopt;
        std::uint32_t v = (std::uint32_t{data_[pos_]} << 24) | (std::uint32_t{data_[pos_ + 1]} << 16) |
                          (std::uint32_t{data_[pos_ + 2]} << 8) | data_[pos_ + 3];
        pos_ += 4;
        return v;
    }

    std::optional<std::span<const std::uint8_t>> take(std::size_t n) noexcept {
        if (remaining() < n) return std::nullopt;
        auto out = data_.subspan(pos_, n);
        pos_ += n;
        return out;
    }

    bool skip(std::size_t n) noexcept {
        if (remaining() < n) return false;
        pos_ += n;
        return true;
    }

private:
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

}  // namespace bindwatch::detail
