/// Lowercases, splits on whitespace, strips punctuation and emits a word's
/// trailing period as its own `.` token.
pub fn tokenize(sentence: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in sentence.split_whitespace() {
        let word: String = chunk
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        if !word.is_empty() {
            tokens.push(word);
        }
        if chunk.ends_with('.') {
            tokens.push(".".to_string());
        }
    }
    tokens
}
