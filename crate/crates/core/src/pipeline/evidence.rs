use crate::corpus::Post;

use super::ScaleResponse;

/// Collapses whitespace runs to one space, trims, and lowercases.
pub fn normalize_for_match(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Whether `quote` occurs in `post_text` after normalization. Empty quotes never match.
pub fn quote_in_post(quote: &str, post_text: &str) -> bool {
    let q = normalize_for_match(quote);
    !q.is_empty() && normalize_for_match(post_text).contains(&q)
}

/// Recomputes every `evidence_verified` flag against the post. Rationales are untouched.
pub fn verify_evidence(mut response: ScaleResponse, post: &Post) -> ScaleResponse {
    let text = normalize_for_match(&post.text);
    for item in &mut response.items {
        item.evidence_verified = item
            .evidence_quotes
            .iter()
            .map(|q| {
                let q = normalize_for_match(q);
                !q.is_empty() && text.contains(&q)
            })
            .collect();
    }
    response
}
