/// Splits text into tokens.
///
/// Rules, applied to each whitespace-separated chunk:
/// - every character that is neither alphanumeric nor whitespace is emitted as
///   its own token,
/// - except `-` and `'` with an alphanumeric character on both sides, which stay
///   inside the word (`well-known`, `don't`).
///
/// Case is preserved.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut word = String::new();
        for (i, &c) in chars.iter().enumerate() {
            let joiner = (c == '-' || c == '\'')
                && i > 0
                && i + 1 < chars.len()
                && chars[i - 1].is_alphanumeric()
                && chars[i + 1].is_alphanumeric();
            if c.is_alphanumeric() || joiner {
                word.push(c);
            } else {
                if !word.is_empty() {
                    tokens.push(std::mem::take(&mut word));
                }
                tokens.push(c.to_string());
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
    }
    tokens
}
