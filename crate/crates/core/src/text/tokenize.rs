use alloc::string::String;
use alloc::vec::Vec;

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Lowercases, splits on whitespace and emits every punctuation character
/// as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_whitespace() || is_punct(c) {
            if !current.is_empty() {
                tokens.push(core::mem::take(&mut current));
            }
            if is_punct(c) {
                tokens.extend(c.to_lowercase().map(String::from));
            }
        } else {
            current.extend(c.to_lowercase());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(
            tokenize("I got wet during the day"),
            ["i", "got", "wet", "during", "the", "day"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("co-operate."), ["co", "-", "operate", "."]);
    }

    #[test]
    fn unicode_whitespace_and_case() {
        assert_eq!(tokenize("Über\u{00A0}Straße\t\n(x)"), ["über", "straße", "(", "x", ")"]);
    }
}
