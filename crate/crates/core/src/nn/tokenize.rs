/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lowercases, splits on whitespace and hashes each word into `0..vocab_size`.
pub fn tokenize(text: &str, vocab_size: usize) -> Vec<usize> {
    assert!(vocab_size >= 2, "vocabulary needs at least two ids");
    text.split_whitespace()
        .map(|w| (fnv1a(w.to_lowercase().as_bytes()) % vocab_size as u64) as usize)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_folding_and_empty_text() {
        assert_eq!(tokenize("Go Left", 8192), tokenize("go left", 8192));
        assert!(tokenize("", 8192).is_empty());
        assert!(tokenize("   \n", 8192).is_empty());
    }

    #[test]
    fn golden_ids() {
        // FNV-1a("take") = 0xd94551ef0792aff6; frozen so checkpoints stay valid across releases
        assert_eq!(tokenize("take key", 8192), GOLDEN_TAKE_KEY);
        assert!(tokenize("take key", 8192).iter().all(|&t| t < 8192));
    }

    const GOLDEN_TAKE_KEY: [usize; 2] = [4086, 4332];

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }
}
