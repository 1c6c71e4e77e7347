use alloc::string::{String, ToString};
use alloc::vec::Vec;

/// An ordered list of sentences from one paragraph.
pub type Document = Vec<String>;

/// Parse blank-line separated paragraphs with one sentence per line.
pub fn parse_corpus(text: &str) -> Vec<Document> {
    let mut docs = Vec::new();
    let mut current: Document = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            if !current.is_empty() {
                docs.push(core::mem::take(&mut current));
            }
        } else {
            current.push(line.to_string());
        }
    }
    if !current.is_empty() {
        docs.push(current);
    }
    docs
}

/// Inverse of [`parse_corpus`] for trimmed, non-empty sentences.
pub fn format_corpus(docs: &[Document]) -> String {
    let mut out = String::new();
    for (i, doc) in docs.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for s in doc {
            out.push_str(s);
            out.push('\n');
        }
    }
    out
}
