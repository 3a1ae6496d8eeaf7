//! Character-offset helpers.
//!
//! All spans in this crate index Unicode scalar values, not bytes. These
//! helpers convert between the two coordinate systems.

/// Number of Unicode scalar values in `text`.
pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Byte offset of every char boundary in `text`, including the end.
///
/// `offsets[i]` is the byte offset of char `i`; `offsets[char_len]` is `text.len()`.
#[derive(Debug, Clone)]
pub struct CharOffsets {
    offsets: Vec<usize>,
}

impl CharOffsets {
    pub fn new(text: &str) -> Self {
        let mut offsets: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        offsets.push(text.len());
        Self { offsets }
    }

    pub fn char_len(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Char index of a byte offset that lies on a char boundary.
    pub fn char_at_byte(&self, byte: usize) -> usize {
        match self.offsets.binary_search(&byte) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
    }

    pub fn byte_at_char(&self, ch: usize) -> usize {
        self.offsets[ch.min(self.offsets.len() - 1)]
    }

    /// Slice `text` by char range.
    pub fn slice<'a>(&self, text: &'a str, start: usize, end: usize) -> &'a str {
        &text[self.byte_at_char(start)..self.byte_at_char(end)]
    }
}

/// Lowercase then collapse whitespace runs to single spaces.
pub fn normalize_key(text: &str) -> String {
    text.split_whitespace().map(|w| w.to_lowercase()).collect::<Vec<_>>().join(" ")
}
