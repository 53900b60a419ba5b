#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mghand {

enum class TokenRole { kNull, kNeutral, kPositive, kNegative };

struct Token {
    int id;
    std::string phrase;
    TokenRole role;
};

inline constexpr int kNullToken = 0;
inline constexpr int kNeutralToken = 1;

/// Closed conditioning vocabulary shared by every backbone. Phrases follow the
/// hand-quality prompt sets; the role decides what the synthetic data looks like.
const std::vector<Token>& vocabulary();
int vocab_size();
const Token& token(int id);

/// Exact phrase lookup; throws invalid-argument for unknown phrases.
int token_id(std::string_view phrase);

/// Longest vocabulary phrase contained in free text (case-insensitive), if any.
std::optional<int> match_token(std::string_view text);

std::vector<int> tokens_with_role(TokenRole role);

}  // namespace mghand
