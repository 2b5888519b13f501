//! Parsers for model replies.
//!
//! Frozen models decorate their answers (chatter, code fences, stray
//! quoting), so the default parsers are lenient. The `*_strict` variants
//! accept only the exact format requested by the prompt.

use alloc::string::String;
use alloc::vec::Vec;

use serde_json::Value;

use crate::geometry::BoundingBox;
use crate::prompt::TagList;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no bracketed score from the allowed set found in reply")]
    MalformedScore,
    #[error("no bracketed list found in reply")]
    NoList,
    #[error("reply is not a well-formed list of quoted phrases")]
    MalformedList,
    #[error("no well-formed bounding-box array found in reply")]
    MalformedBoxes,
}

/// The eleven admissible scores `0, 0.1, ..., 1.0`.
pub fn allowed_scores() -> impl Iterator<Item = f64> {
    (0..=10).map(|k| k as f64 / 10.0)
}

/// Renders an allowed score the way a model is asked to (`0.0` .. `1.0`).
pub fn render_score(value: f64) -> String {
    alloc::format!("{value:.1}")
}

fn allowed_member(token: &str) -> Option<f64> {
    if token.is_empty() || !token.chars().all(|c| c.is_ascii_digit() || c == '.') {
        return None;
    }
    let v: f64 = token.parse().ok()?;
    allowed_scores().find(|&a| a == v)
}

/// First `[x]` in the reply whose content is one of the allowed scores.
pub fn parse_score_token(text: &str) -> Result<f64, ParseError> {
    let mut rest = text;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        let Some(close) = after.find(']') else {
            break;
        };
        if let Some(v) = allowed_member(after[..close].trim()) {
            return Ok(v);
        }
        rest = &after[close + 1..];
    }
    Err(ParseError::MalformedScore)
}

/// Splits on commas that are not inside a quoted string.
fn split_top_level(inner: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut quote: Option<char> = None;
    let mut start = 0;
    for (i, c) in inner.char_indices() {
        match (quote, c) {
            (None, '\'' | '"') => quote = Some(c),
            (Some(q), c) if c == q => quote = None,
            (None, ',') => {
                parts.push(&inner[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&inner[start..]);
    parts
}

fn strip_quotes(s: &str) -> &str {
    s.trim().trim_matches(|c| matches!(c, '\'' | '"')).trim()
}

/// Lenient tag-list parse; reports whether a list was found at all.
pub fn try_parse_tag_list(text: &str, cap: usize) -> Result<TagList, ParseError> {
    let open = text.find('[').ok_or(ParseError::NoList)?;
    let close = text.rfind(']').filter(|&c| c > open).ok_or(ParseError::NoList)?;
    let inner = &text[open + 1..close];
    Ok(TagList::from_phrases(
        split_top_level(inner).into_iter().map(strip_quotes),
        cap,
    ))
}

/// Lenient tag-list parse; an unparseable reply yields an empty list.
pub fn parse_tag_list(text: &str, cap: usize) -> TagList {
    try_parse_tag_list(text, cap).unwrap_or_default()
}

/// Accepts only a bare `['a', "b", ...]` list of quoted phrases.
pub fn parse_tag_list_strict(text: &str, cap: usize) -> Result<TagList, ParseError> {
    let t = text.trim();
    let inner = t
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or(ParseError::MalformedList)?;
    if inner.trim().is_empty() {
        return Ok(TagList::empty());
    }
    let mut phrases = Vec::new();
    for part in split_top_level(inner) {
        let p = part.trim();
        let quoted = p.len() >= 2
            && ((p.starts_with('\'') && p.ends_with('\'')) || (p.starts_with('"') && p.ends_with('"')));
        if !quoted {
            return Err(ParseError::MalformedList);
        }
        phrases.push(&p[1..p.len() - 1]);
    }
    Ok(TagList::from_phrases(phrases, cap))
}

fn strip_fences(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn box_from_value(v: &Value) -> Option<BoundingBox> {
    let obj = v.as_object()?;
    let coords = obj.get("bbox_2d")?.as_array()?;
    if coords.len() != 4 {
        return None;
    }
    let mut c = [0.0; 4];
    for (slot, val) in c.iter_mut().zip(coords) {
        *slot = val.as_f64()?;
    }
    let confidence = match obj.get("confidence") {
        None | Some(Value::Null) => 1.0,
        Some(v) => v.as_f64()?,
    };
    Some(BoundingBox::from_corners(c[0], c[1], c[2], c[3], confidence))
}

fn boxes_from_array(v: &Value, width: f64, height: f64) -> Option<Vec<BoundingBox>> {
    v.as_array()?
        .iter()
        .map(|item| box_from_value(item).map(|b| b.clamped(width, height)))
        .collect()
}

/// First well-formed JSON array of `{"bbox_2d": [..4..], "confidence": c}`
/// objects anywhere in the reply (code fences removed).
pub fn try_parse_bbox_list(
    text: &str,
    width: f64,
    height: f64,
) -> Result<Vec<BoundingBox>, ParseError> {
    let cleaned = strip_fences(text);
    for (i, _) in cleaned.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&cleaned[i..]).into_iter::<Value>();
        if let Some(Ok(value)) = stream.next() {
            if let Some(boxes) = boxes_from_array(&value, width, height) {
                return Ok(boxes);
            }
        }
    }
    Err(ParseError::MalformedBoxes)
}

pub fn parse_bbox_list(text: &str, width: f64, height: f64) -> Vec<BoundingBox> {
    try_parse_bbox_list(text, width, height).unwrap_or_default()
}

/// The reply must be exactly one JSON array of box objects.
pub fn parse_bbox_list_strict(
    text: &str,
    width: f64,
    height: f64,
) -> Result<Vec<BoundingBox>, ParseError> {
    let value: Value = serde_json::from_str(text.trim()).map_err(|_| ParseError::MalformedBoxes)?;
    boxes_from_array(&value, width, height).ok_or(ParseError::MalformedBoxes)
}

/// Renders boxes in the reply format requested by the localization prompt.
pub fn render_bbox_list(boxes: &[BoundingBox]) -> String {
    let items: Vec<Value> = boxes
        .iter()
        .map(|b| {
            serde_json::json!({
                "bbox_2d": [b.x1, b.y1, b.x2, b.y2],
                "confidence": b.confidence,
            })
        })
        .collect();
    serde_json::to_string(&Value::Array(items)).unwrap_or_default()
}
