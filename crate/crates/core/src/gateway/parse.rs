use serde::{Deserialize, Serialize};

use super::GatewayError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub explanation: Option<String>,
    pub code: String,
    pub raw: String,
}

struct Block {
    /// Byte offset of the opening fence line.
    start: usize,
    body: String,
}

/// Collects fenced blocks. An unterminated final fence runs to the end of
/// the text, since truncated completions are common.
fn fenced_blocks(raw: &str) -> Vec<Block> {
    let mut blocks = Vec::new();
    let mut open: Option<(usize, Vec<&str>)> = None;
    let mut offset = 0;
    for line in raw.split_inclusive('\n') {
        let bare = line.trim_end_matches(['\n', '\r']);
        let is_fence = bare.trim_start().starts_with("```");
        match &mut open {
            None if is_fence => open = Some((offset, Vec::new())),
            Some((start, body)) if is_fence && bare.trim() == "```" => {
                blocks.push(Block {
                    start: *start,
                    body: body.join("\n"),
                });
                open = None;
            }
            Some((_, body)) => body.push(bare),
            None => {}
        }
        offset += line.len();
    }
    if let Some((start, body)) = open {
        blocks.push(Block {
            start,
            body: body.join("\n"),
        });
    }
    blocks
}

fn looks_like_code(text: &str) -> bool {
    let first = match text.lines().find(|l| !l.trim().is_empty()) {
        Some(l) => l.trim_start(),
        None => return false,
    };
    ["def ", "class ", "import ", "from ", "@", "async def "]
        .iter()
        .any(|p| first.starts_with(p))
}

/// Extracts the last fenced code block and the text before it.
pub fn parse_response(raw: &str) -> Result<ParsedResponse, GatewayError> {
    if let Some(block) = fenced_blocks(raw).pop() {
        if block.body.trim().is_empty() {
            return Err(GatewayError::NoCodeFound);
        }
        let before = raw[..block.start].trim();
        return Ok(ParsedResponse {
            explanation: (!before.is_empty()).then(|| before.to_string()),
            code: block.body,
            raw: raw.to_string(),
        });
    }
    if looks_like_code(raw) {
        return Ok(ParsedResponse {
            explanation: None,
            code: raw.trim().to_string(),
            raw: raw.to_string(),
        });
    }
    Err(GatewayError::NoCodeFound)
}
