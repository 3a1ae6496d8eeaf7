//! Rule-based sentence segmentation.
//!
//! Boundaries fall on terminal punctuation (`.`, `!`, `?`, `。`, `؟`, `।`)
//! and on line breaks. A period is not a boundary inside a number, before a
//! non-space character, after a known abbreviation, or before a lowercase
//! continuation.

use std::ops::Range;

const TERMINATORS: &[char] = &['.', '!', '?', '。', '؟', '।', '！', '？'];
const CLOSERS: &[char] = &['"', '\'', '”', '’', ')', ']', '»', '」', '』', '）'];

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "vs", "fig", "gen", "col", "lt", "sgt", "capt", "rev",
    "hon", "inc", "ltd", "co", "corp", "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov",
    "dec", "approx", "e.g", "i.e", "cf", "al", "ca", "nr", "bzw", "z.b", "usw", "sra",
];

fn is_abbreviation(word: &str) -> bool {
    let w = word.trim_start_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
    ABBREVIATIONS.contains(&w.as_str())
}

/// Byte ranges of each sentence, trimmed of surrounding whitespace.
pub fn sentence_spans(text: &str) -> Vec<Range<usize>> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut seg_start = 0usize;
    let mut i = 0usize;
    let push = |out: &mut Vec<Range<usize>>, start: usize, end: usize| {
        let seg = &text[start..end];
        let lead = seg.len() - seg.trim_start().len();
        let trimmed = seg.trim();
        if !trimmed.is_empty() {
            out.push(start + lead..start + lead + trimmed.len());
        }
    };
    while i < chars.len() {
        let (b, c) = chars[i];
        if c == '\n' {
            push(&mut out, seg_start, b);
            seg_start = b + 1;
            i += 1;
            continue;
        }
        if !TERMINATORS.contains(&c) {
            i += 1;
            continue;
        }
        // absorb runs like "?!" or "..." and closing quotes/brackets
        let mut j = i + 1;
        while j < chars.len() && TERMINATORS.contains(&chars[j].1) {
            j += 1;
        }
        while j < chars.len() && CLOSERS.contains(&chars[j].1) {
            j += 1;
        }
        let end = chars.get(j).map(|&(b, _)| b).unwrap_or(text.len());
        let next = chars.get(j).map(|&(_, c)| c);
        let boundary = if c == '。' || c == '！' || c == '？' {
            true
        } else if next.is_some_and(|n| !n.is_whitespace()) {
            false
        } else if c == '.' && j == i + 1 {
            let word_start =
                text[seg_start..b].rfind(char::is_whitespace).map(|p| seg_start + p + 1).unwrap_or(seg_start);
            let word = &text[word_start..b];
            let next_visible = chars[j..].iter().map(|&(_, c)| c).find(|c| !c.is_whitespace() || *c == '\n');
            !is_abbreviation(word) && !next_visible.is_some_and(|n| n.is_lowercase())
        } else {
            true
        };
        if boundary {
            push(&mut out, seg_start, end);
            seg_start = end;
        }
        i = j;
    }
    push(&mut out, seg_start, text.len());
    out
}

pub fn split_sentences(text: &str) -> Vec<String> {
    sentence_spans(text).into_iter().map(|r| text[r].to_string()).collect()
}
