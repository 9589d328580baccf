pub const SENTENCE_TERMINATORS: [&str; 3] = [".", "!", "?"];

/// Splits after every terminator token, then chunks any run longer than
/// `max_len` into `max_len`-token pieces. Never yields an empty sentence.
pub fn segment_sentences<S: AsRef<str> + Clone>(tokens: &[S], max_len: usize) -> Vec<Vec<S>> {
    assert!(max_len > 0, "max_len must be positive");
    let mut out = Vec::new();
    let mut current = Vec::new();
    for t in tokens {
        current.push(t.clone());
        if SENTENCE_TERMINATORS.contains(&t.as_ref()) {
            push_chunked(&mut out, std::mem::take(&mut current), max_len);
        }
    }
    if !current.is_empty() {
        push_chunked(&mut out, current, max_len);
    }
    out
}

fn push_chunked<S: Clone>(out: &mut Vec<Vec<S>>, sentence: Vec<S>, max_len: usize) {
    for chunk in sentence.chunks(max_len) {
        out.push(chunk.to_vec());
    }
}
