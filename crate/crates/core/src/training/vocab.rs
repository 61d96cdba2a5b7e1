use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

/// Index of the end-of-step token.
pub const EOS: usize = 0;

const FIXED: &[&str] = &[
    "<eos>",
    "<think>",
    "</think>",
    "<tool>",
    "</tool>",
    "<answer>",
    "</answer>",
    "{\"region\":[",
    "{\"index\":",
    ",\"bbox_2d\":[",
    "]}",
    "],\"query\":\"",
    "\"}",
    ",",
    " ",
    ".",
    "A",
    "B",
    "C",
    "D",
    "look",
    "zoom",
    "find",
    "the",
    "target",
    "red",
    "cell",
    "quadrant",
    "is",
    "in",
    "done",
    "count",
];

/// Largest integer with its own token.
pub const MAX_NUMBER_TOKEN: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("no token matches the text at byte {offset}")]
pub struct TokenizeError {
    pub offset: usize,
}

/// Closed vocabulary of the toy policy: step tags, JSON fragments of the
/// canonical tool payload, a few words, answer letters and the integers
/// `0..=64`. Text maps to tokens by greedy longest match.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        let mut tokens: Vec<String> = FIXED.iter().map(|s| String::from(*s)).collect();
        tokens.extend((0..=MAX_NUMBER_TOKEN).map(|n| format!("{n}")));
        Self { tokens }
    }
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>, TokenizeError> {
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < text.len() {
            let rest = &text[pos..];
            let best = self
                .tokens
                .iter()
                .enumerate()
                .skip(1)
                .filter(|(_, t)| rest.starts_with(t.as_str()))
                .max_by_key(|(i, t)| (t.len(), usize::MAX - i))
                .ok_or(TokenizeError { offset: pos })?;
            out.push(best.0);
            pos += best.1.len();
        }
        Ok(out)
    }

    /// Concatenates token strings, stopping at the first end-of-step token.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .map(|&i| self.tokens[i].as_str())
            .collect()
    }
}
