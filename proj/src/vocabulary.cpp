#include "mghand/vocabulary.hpp"

#include <algorithm>
#include <cctype>

#include "mghand/error.hpp"

namespace mghand {

const std::vector<Token>& vocabulary() {
    static const std::vector<Token> kTokens = {
        {0, "<null>", TokenRole::kNull},
        {1, "hands", TokenRole::kNeutral},
        {2, "realistic hands", TokenRole::kPositive},
        {3, "five fingers", TokenRole::kPositive},
        {4, "8K", TokenRole::kPositive},
        {5, "correct anatomy", TokenRole::kPositive},
        {6, "distorted hands", TokenRole::kNegative},
        {7, "clumsy hands", TokenRole::kNegative},
        {8, "poorly drawn hands", TokenRole::kNegative},
        {9, "blurry hands", TokenRole::kNegative},
    };
    return kTokens;
}

int vocab_size() { return static_cast<int>(vocabulary().size()); }

const Token& token(int id) {
    require(id >= 0 && id < vocab_size(), "token id " + std::to_string(id) + " outside vocabulary");
    return vocabulary()[static_cast<std::size_t>(id)];
}

int token_id(std::string_view phrase) {
    for (const auto& t : vocabulary()) {
        if (t.phrase == phrase) return t.id;
    }
    fail(ErrorCode::kInvalidArgument, "unknown prompt token '" + std::string(phrase) + "'");
}

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

}  // namespace

std::optional<int> match_token(std::string_view text) {
    const std::string hay = lower(text);
    std::optional<int> best;
    std::size_t best_len = 0;
    for (const auto& t : vocabulary()) {
        if (t.role == TokenRole::kNull) continue;
        const std::string needle = lower(t.phrase);
        if (needle.size() > best_len && hay.find(needle) != std::string::npos) {
            best = t.id;
            best_len = needle.size();
        }
    }
    return best;
}

std::vector<int> tokens_with_role(TokenRole role) {
    std::vector<int> ids;
    for (const auto& t : vocabulary()) {
        if (t.role == role) ids.push_back(t.id);
    }
    return ids;
}

}  // namespace mghand
