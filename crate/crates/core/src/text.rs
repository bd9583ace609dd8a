//! Length-preserving case folding and character-offset helpers.
//!
//! Folding maps every scalar value to exactly one scalar value, so a span
//! found in folded text is also a valid span of the original text.

/// Unicode simple case folding of a single character.
pub fn fold_char(c: char) -> char {
    if c.is_ascii() {
        return c.to_ascii_lowercase();
    }
    // Simple-folding targets that differ from the one-to-one lowercase mapping.
    match c {
        '\u{00B5}' => return '\u{03BC}', // micro sign
        '\u{017F}' => return 's',        // long s
        '\u{03C2}' => return '\u{03C3}', // final sigma
        '\u{03D0}' => return '\u{03B2}',
        '\u{03D1}' => return '\u{03B8}',
        '\u{03D5}' => return '\u{03C6}',
        '\u{03D6}' => return '\u{03C0}',
        '\u{03F0}' => return '\u{03BA}',
        '\u{03F1}' => return '\u{03C1}',
        '\u{03F5}' => return '\u{03B5}',
        '\u{1E9B}' => return '\u{1E61}',
        '\u{1FBE}' => return '\u{03B9}',
        _ => {}
    }
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

pub fn case_fold(s: &str) -> String {
    s.chars().map(fold_char).collect()
}

pub fn folded_chars(s: &str) -> Vec<char> {
    s.chars().map(fold_char).collect()
}

pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Substring by character offsets `[start, end)`.
pub fn char_slice(s: &str, start: usize, end: usize) -> &str {
    let mut indices = s.char_indices().map(|(i, _)| i).chain(std::iter::once(s.len()));
    let from = indices.nth(start).unwrap_or(s.len());
    let to = if end > start {
        indices.nth(end - start - 1).unwrap_or(s.len())
    } else {
        from
    };
    &s[from..to]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folding_preserves_length() {
        for s in ["Übergabe", "STRAẞE", "İstanbul", "ΣΊΣΥΦΟΣ", "ﬁx"] {
            assert_eq!(char_len(s), char_len(&case_fold(s)), "{s}");
        }
        assert_eq!(case_fold("Übergabe"), "übergabe");
        assert_eq!(case_fold("ς"), "σ");
    }

    #[test]
    fn slicing_by_chars() {
        let s = "Die Übergaben";
        assert_eq!(char_slice(s, 4, 12), "Übergabe");
        assert_eq!(char_slice(s, 4, 4), "");
        assert_eq!(char_slice(s, 0, 13), s);
    }
}
