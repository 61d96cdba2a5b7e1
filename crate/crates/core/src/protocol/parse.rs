use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde_json::{Map, Value};

use super::{Region, Step};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const TOOL_OPEN: &str = "<tool>";
pub const TOOL_CLOSE: &str = "</tool>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

const TAGS: [&str; 6] = [THINK_OPEN, THINK_CLOSE, TOOL_OPEN, TOOL_CLOSE, ANSWER_OPEN, ANSWER_CLOSE];

/// First rule a raw step violates.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("missing tag {tag}")]
    MissingTag { tag: &'static str },
    #[error("tag {tag} appears more than once")]
    DuplicateTag { tag: &'static str },
    #[error("tag {tag} is out of order or nested")]
    MisplacedTag { tag: &'static str },
    #[error("both a tool call and an answer are present")]
    ConflictingActions,
    #[error("unexpected text outside tags at byte {offset}")]
    UnexpectedText { offset: usize },
    #[error("malformed tool JSON: {message}")]
    MalformedJson { message: String },
    #[error("tool JSON is missing field {field:?}")]
    MissingField { field: &'static str },
    #[error("tool JSON has unknown field {field:?}")]
    UnknownField { field: String },
    #[error("field {field:?} must be {expected}")]
    WrongType { field: &'static str, expected: &'static str },
    #[error("region list is empty")]
    EmptyRegionList,
    #[error("region {region}: bbox_2d has {len} entries, expected 4")]
    WrongArityBbox { region: usize, len: usize },
    #[error("region {region}: bbox_2d entry {position} is not an integer")]
    NonIntegerCoordinate { region: usize, position: usize },
    #[error("region {region}: index is not an integer")]
    NonIntegerIndex { region: usize },
    #[error("answer is empty")]
    EmptyAnswer,
}

impl ParseError {
    /// Stable kebab-case rule name, used in traces.
    pub fn rule(&self) -> &'static str {
        match self {
            ParseError::MissingTag { .. } => "missing-tag",
            ParseError::DuplicateTag { .. } => "duplicate-tag",
            ParseError::MisplacedTag { .. } => "misplaced-tag",
            ParseError::ConflictingActions => "conflicting-actions",
            ParseError::UnexpectedText { .. } => "unexpected-text",
            ParseError::MalformedJson { .. } => "malformed-json",
            ParseError::MissingField { .. } => "missing-field",
            ParseError::UnknownField { .. } => "unknown-field",
            ParseError::WrongType { .. } => "wrong-type",
            ParseError::EmptyRegionList => "empty-region-list",
            ParseError::WrongArityBbox { .. } => "wrong-arity-bbox",
            ParseError::NonIntegerCoordinate { .. } => "non-integer-coordinate",
            ParseError::NonIntegerIndex { .. } => "non-integer-index",
            ParseError::EmptyAnswer => "empty-answer",
        }
    }
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        let rest = self.rest();
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn at_end(&self) -> bool {
        self.pos == self.text.len()
    }

    fn eat(&mut self, tag: &str) -> bool {
        if self.rest().starts_with(tag) {
            self.pos += tag.len();
            true
        } else {
            false
        }
    }

    /// Fails at the current position: a tag sitting here is misplaced, anything else is stray text.
    fn stray(&self) -> ParseError {
        match TAGS.iter().find(|t| self.rest().starts_with(**t)) {
            Some(tag) => ParseError::MisplacedTag { tag },
            None => ParseError::UnexpectedText { offset: self.pos },
        }
    }

    fn expect(&mut self, tag: &'static str) -> Result<(), ParseError> {
        if self.eat(tag) {
            Ok(())
        } else {
            Err(self.stray())
        }
    }

    /// Content up to `close`, which is consumed. The content may not contain any tag.
    fn block(&mut self, close: &'static str) -> Result<&'a str, ParseError> {
        let rest = self.rest();
        let end = rest.find(close).ok_or(ParseError::MissingTag { tag: close })?;
        let content = &rest[..end];
        if let Some(tag) = TAGS.iter().find(|t| content.contains(**t)) {
            return Err(ParseError::MisplacedTag { tag });
        }
        self.pos += end + close.len();
        Ok(content)
    }
}

/// Parses one generated step.
///
/// Grammar: `<think>T</think>` then exactly one of `<tool>JSON</tool>` or
/// `<answer>A</answer>`; whitespace between blocks is ignored, anything
/// else is rejected. Thought and answer text are trimmed.
pub fn parse_step(raw: &str) -> Result<Step, ParseError> {
    for tag in TAGS {
        if raw.matches(tag).nth(1).is_some() {
            return Err(ParseError::DuplicateTag { tag });
        }
    }
    let has = |tag: &str| raw.contains(tag);
    for tag in [THINK_OPEN, THINK_CLOSE] {
        if !has(tag) {
            return Err(ParseError::MissingTag { tag });
        }
    }
    let tool = has(TOOL_OPEN) || has(TOOL_CLOSE);
    let answer = has(ANSWER_OPEN) || has(ANSWER_CLOSE);
    if tool && answer {
        return Err(ParseError::ConflictingActions);
    }
    let (open, close) = match (tool, answer) {
        (true, _) => (TOOL_OPEN, TOOL_CLOSE),
        (_, true) => (ANSWER_OPEN, ANSWER_CLOSE),
        _ => return Err(ParseError::MissingTag { tag: "<tool> or <answer>" }),
    };
    for tag in [open, close] {
        if !has(tag) {
            return Err(ParseError::MissingTag { tag });
        }
    }

    let mut cur = Cursor { text: raw, pos: 0 };
    cur.skip_ws();
    cur.expect(THINK_OPEN)?;
    let thought = cur.block(THINK_CLOSE)?.trim().to_string();
    cur.skip_ws();
    cur.expect(open)?;
    let body = cur.block(close)?;
    cur.skip_ws();
    if !cur.at_end() {
        return Err(cur.stray());
    }

    if answer {
        let answer = body.trim();
        if answer.is_empty() {
            return Err(ParseError::EmptyAnswer);
        }
        return Ok(Step::Answer {
            thought,
            answer: answer.to_string(),
        });
    }
    let (inquiry, regions) = parse_tool_payload(body)?;
    Ok(Step::Tool {
        thought,
        inquiry,
        regions,
    })
}

/// Parses the JSON object inside `<tool>...</tool>`.
pub fn parse_tool_payload(payload: &str) -> Result<(String, Vec<Region>), ParseError> {
    let value: Value = serde_json::from_str(payload).map_err(|e| ParseError::MalformedJson {
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or(ParseError::WrongType {
        field: "tool payload",
        expected: "a JSON object",
    })?;
    reject_unknown(obj, &["region", "query"])?;
    let list = obj
        .get("region")
        .ok_or(ParseError::MissingField { field: "region" })?
        .as_array()
        .ok_or(ParseError::WrongType {
            field: "region",
            expected: "an array",
        })?;
    if list.is_empty() {
        return Err(ParseError::EmptyRegionList);
    }
    let regions = list
        .iter()
        .enumerate()
        .map(|(i, v)| parse_region(i, v))
        .collect::<Result<Vec<_>, _>>()?;
    let inquiry = obj
        .get("query")
        .ok_or(ParseError::MissingField { field: "query" })?
        .as_str()
        .ok_or(ParseError::WrongType {
            field: "query",
            expected: "a string",
        })?;
    Ok((inquiry.to_string(), regions))
}

fn reject_unknown(obj: &Map<String, Value>, allowed: &[&str]) -> Result<(), ParseError> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(ParseError::UnknownField { field: k.clone() }),
        None => Ok(()),
    }
}

fn parse_region(i: usize, v: &Value) -> Result<Region, ParseError> {
    let obj = v.as_object().ok_or(ParseError::WrongType {
        field: "region entry",
        expected: "a JSON object",
    })?;
    reject_unknown(obj, &["index", "bbox_2d"])?;
    let index = obj
        .get("index")
        .ok_or(ParseError::MissingField { field: "index" })?
        .as_i64()
        .ok_or(ParseError::NonIntegerIndex { region: i })?;
    let coords = obj
        .get("bbox_2d")
        .ok_or(ParseError::MissingField { field: "bbox_2d" })?
        .as_array()
        .ok_or(ParseError::WrongType {
            field: "bbox_2d",
            expected: "an array",
        })?;
    if coords.len() != 4 {
        return Err(ParseError::WrongArityBbox {
            region: i,
            len: coords.len(),
        });
    }
    let mut bbox = [0i64; 4];
    for (position, (slot, c)) in bbox.iter_mut().zip(coords).enumerate() {
        *slot = c
            .as_i64()
            .ok_or(ParseError::NonIntegerCoordinate { region: i, position })?;
    }
    Ok(Region { index, bbox })
}
