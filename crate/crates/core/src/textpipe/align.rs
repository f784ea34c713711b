use super::PAD;

/// Fits a sequence to exactly `max_len` entries, working at the front:
/// long sequences lose their first tokens, short ones get `pad` prepended.
/// The tail of the sequence is always kept.
pub fn align<T: Clone>(tokens: &[T], max_len: usize, pad: T) -> Vec<T> {
    assert!(max_len >= 1, "max_len must be at least 1");
    if tokens.len() >= max_len {
        tokens[tokens.len() - max_len..].to_vec()
    } else {
        let mut out = vec![pad; max_len - tokens.len()];
        out.extend_from_slice(tokens);
        out
    }
}

pub fn align_indices(indices: &[usize], max_len: usize) -> Vec<usize> {
    align(indices, max_len, PAD)
}
