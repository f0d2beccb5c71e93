use crate::error::{Error, Result};

pub const BLANK: usize = 0;

/// Character vocabulary: id 0 is the blank, then space, then `a`–`z`.
pub const ALPHABET: &str = " abcdefghijklmnopqrstuvwxyz";

pub fn vocab_size() -> usize {
    ALPHABET.chars().count() + 1
}

/// Blank-interspersed token ids: `[blank, c₁, blank, c₂, …, blank]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let v = vocab_size();
        if let Some(&bad) = self.ids.iter().find(|&&id| id >= v) {
            return Err(Error::UnknownToken(bad));
        }
        Ok(())
    }

    /// Whether token `i` is a letter (as opposed to blank or space).
    pub fn is_letter(&self, i: usize) -> bool {
        self.ids[i] > 1
    }
}

/// Lowercases, drops characters outside `a–z` and space, collapses runs of
/// whitespace and trims.
pub fn normalize_text(text: &str) -> String {
    let mut out = String::new();
    let mut pending_space = false;
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
        } else if ch.is_ascii_lowercase() {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(ch);
        }
    }
    out
}

pub fn char_id(ch: char) -> Option<usize> {
    ALPHABET.chars().position(|c| c == ch).map(|p| p + 1)
}

pub fn tokenize(text: &str) -> Result<TokenSequence> {
    let norm = normalize_text(text);
    if norm.is_empty() {
        return Err(Error::EmptyText(text.to_string()));
    }
    let mut ids = vec![BLANK];
    for ch in norm.chars() {
        ids.push(char_id(ch).expect("normalized text is whitelisted"));
        ids.push(BLANK);
    }
    Ok(TokenSequence { ids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn blank_interspersed() {
        let a = char_id('a').unwrap();
        let b = char_id('b').unwrap();
        assert_eq!(tokenize("ab").unwrap().ids, vec![BLANK, a, BLANK, b, BLANK]);
        assert_eq!(tokenize("a").unwrap().ids, vec![BLANK, a, BLANK]);
        let sp = char_id(' ').unwrap();
        assert_eq!(
            tokenize("A  b!").unwrap().ids,
            vec![BLANK, a, BLANK, sp, BLANK, b, BLANK]
        );
    }

    #[test]
    fn empty_after_normalization() {
        assert!(matches!(tokenize("!!  ?"), Err(Error::EmptyText(_))));
        assert!(tokenize("").is_err());
    }

    proptest! {
        #[test]
        fn blanks_at_even_positions(s in "[a-z]{1,8}( [a-z]{1,8}){0,3}") {
            let t = tokenize(&s).unwrap();
            let n = s.chars().count();
            prop_assert_eq!(t.len(), 2 * n + 1);
            for (i, &id) in t.ids.iter().enumerate() {
                prop_assert_eq!(id == BLANK, i % 2 == 0);
            }
        }

        #[test]
        fn injective_on_whitelisted(a in "[a-z]{1,6}( [a-z]{1,6}){0,2}", b in "[a-z]{1,6}( [a-z]{1,6}){0,2}") {
            let (ta, tb) = (tokenize(&a).unwrap(), tokenize(&b).unwrap());
            prop_assert_eq!(ta == tb, a == b);
        }
    }
}
