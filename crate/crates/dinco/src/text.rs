//! Text normalization shared by deduplication and mock scoring.

/// Lowercases, drops punctuation and collapses whitespace.
pub fn normalize(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn same_claim(a: &str, b: &str) -> bool {
    normalize(a) == normalize(b)
}
