use serde_json::Value;

use super::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractStrategy {
    WholeText,
    FencedBlock,
    BalancedSpan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extracted {
    pub value: Value,
    pub strategy: ExtractStrategy,
}

/// Pulls a JSON value out of model output.
///
/// Tries the whole text, then the first fenced code block, then each balanced
/// `{...}`/`[...]` span in order of appearance.
pub fn extract_json_payload(text: &str) -> Result<Extracted, LlmError> {
    let trimmed = text.trim();
    if let Ok(value) = serde_json::from_str::<Value>(trimmed) {
        return Ok(Extracted {
            value,
            strategy: ExtractStrategy::WholeText,
        });
    }
    if let Some(block) = first_fenced_block(text) {
        if let Ok(value) = serde_json::from_str::<Value>(block.trim()) {
            return Ok(Extracted {
                value,
                strategy: ExtractStrategy::FencedBlock,
            });
        }
    }
    for (start, c) in text.char_indices() {
        if c != '{' && c != '[' {
            continue;
        }
        if let Some(end) = balanced_end(text, start) {
            if let Ok(value) = serde_json::from_str::<Value>(&text[start..end]) {
                return Ok(Extracted {
                    value,
                    strategy: ExtractStrategy::BalancedSpan,
                });
            }
        }
    }
    Err(LlmError::Parse {
        raw: text.to_string(),
    })
}

fn first_fenced_block(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let after = &text[open + 3..];
    // Skip an optional language tag on the opening fence line.
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after[body_start..];
    let close = body.find("```")?;
    Some(&body[..close])
}

/// Byte offset just past the bracket closing the one at `start`, honoring strings.
fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' | '[' => depth += 1,
            '}' | ']' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(start + i + c.len_utf8());
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whole_text() {
        let e = extract_json_payload(r#"{"prediction": ["A"]}"#).unwrap();
        assert_eq!(e.strategy, ExtractStrategy::WholeText);
        assert_eq!(e.value["prediction"][0], "A");
    }

    #[test]
    fn fenced_block_inside_prose() {
        let text = "Sure! Here you go:\n```json\n{\"prediction\": [\"B\"], \"reason\": \"r\"}\n```\nHope it helps.";
        let e = extract_json_payload(text).unwrap();
        assert_eq!(e.strategy, ExtractStrategy::FencedBlock);
        assert_eq!(e.value["prediction"][0], "B");
    }

    #[test]
    fn balanced_span_skips_braces_in_strings() {
        let text = r#"I think {"reason": "close to } home", "prediction": ["C"]} is right"#;
        let e = extract_json_payload(text).unwrap();
        assert_eq!(e.strategy, ExtractStrategy::BalancedSpan);
        assert_eq!(e.value["prediction"][0], "C");
    }

    #[test]
    fn later_span_when_first_is_invalid() {
        let text = "{not json} then [1, 2]";
        assert_eq!(extract_json_payload(text).unwrap().value, serde_json::json!([1, 2]));
    }

    #[test]
    fn failure_carries_raw_text() {
        match extract_json_payload("no json here {") {
            Err(LlmError::Parse { raw }) => assert_eq!(raw, "no json here {"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
