//! Comment and docstring removal for Python source.
//!
//! The result mirrors what a round trip through Python's `tokenize` module
//! produces when comment tokens and statement-leading string tokens are
//! dropped: surviving tokens keep their columns, lines that end up blank are
//! removed, and a backslash continuation joins its two physical lines.

const TABSIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Indent,
    Dedent,
    Newline,
    Nl,
    Comment,
    Str,
    Other,
}

#[derive(Debug)]
struct Token {
    kind: Kind,
    text: String,
    start: (usize, usize),
    end: (usize, usize),
}

/// The source could not be tokenized (unterminated multi-line construct or
/// inconsistent dedent). Callers fall back to the unmodified text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizeError(pub &'static str);

/// Removes comments and docstrings. Returns `Err` when the tokenizer gives
/// up, in which case the caller is expected to keep the original text.
pub fn remove_comments_and_docstrings(source: &str) -> Result<String, TokenizeError> {
    let tokens = tokenize(source)?;
    let mut out = String::new();
    let mut prev = Kind::Indent;
    let mut last_line = 0usize;
    let mut last_col = 0usize;
    let mut first = true;
    for tok in tokens {
        let (start_line, start_col) = tok.start;
        if first || start_line > last_line {
            last_col = 0;
        }
        first = false;
        if start_col > last_col {
            out.extend(std::iter::repeat_n(' ', start_col - last_col));
        }
        match tok.kind {
            Kind::Comment => {}
            Kind::Str => {
                if prev != Kind::Indent && prev != Kind::Newline && start_col > 0 {
                    out.push_str(&tok.text);
                }
            }
            _ => out.push_str(&tok.text),
        }
        prev = tok.kind;
        last_col = tok.end.1;
        last_line = tok.end.0;
    }
    let kept: Vec<&str> = out
        .split('\n')
        .filter(|line| !line.trim().is_empty())
        .collect();
    Ok(kept.join("\n"))
}

fn split_lines(source: &str) -> Vec<Vec<char>> {
    let mut lines = Vec::new();
    let mut cur = Vec::new();
    for ch in source.chars() {
        cur.push(ch);
        if ch == '\n' {
            lines.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        lines.push(cur);
    }
    lines
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn is_string_prefix(p: &[char]) -> bool {
    let lower: String = p.iter().map(|c| c.to_ascii_lowercase()).collect();
    matches!(
        lower.as_str(),
        "" | "r" | "u" | "b" | "f" | "br" | "rb" | "fr" | "rf"
    )
}

/// If a (possibly prefixed) string literal opens at `pos`, returns the prefix
/// length and the quote character.
fn string_opening(line: &[char], pos: usize) -> Option<(usize, char)> {
    for plen in 0..=2 {
        let q = pos + plen;
        if q >= line.len() {
            break;
        }
        if (line[q] == '\'' || line[q] == '"') && is_string_prefix(&line[pos..q]) {
            return Some((plen, line[q]));
        }
    }
    None
}

fn is_triple(line: &[char], at: usize, quote: char) -> bool {
    at + 2 < line.len() && line[at] == quote && line[at + 1] == quote && line[at + 2] == quote
}

/// Scans a triple-quoted body starting at `from`; returns the index just past
/// the closing quotes. A backslash before a newline ends the scan on this line.
fn scan_triple_end(line: &[char], from: usize, quote: char) -> Option<usize> {
    let mut i = from;
    while i < line.len() {
        let c = line[i];
        if c == '\\' {
            if i + 1 < line.len() && line[i + 1] != '\n' {
                i += 2;
                continue;
            }
            return None;
        }
        if c == quote && is_triple(line, i, quote) {
            return Some(i + 3);
        }
        i += 1;
    }
    None
}

enum SingleScan {
    Closed(usize),
    Continued,
    Unterminated,
}

fn scan_single(line: &[char], from: usize, quote: char) -> SingleScan {
    let mut i = from;
    while i < line.len() {
        let c = line[i];
        if c == '\n' {
            return SingleScan::Unterminated;
        }
        if c == '\\' {
            match (line.get(i + 1), line.get(i + 2)) {
                (Some('\n'), _) | (Some('\r'), Some('\n')) => return SingleScan::Continued,
                (Some(_), _) => {
                    i += 2;
                    continue;
                }
                (None, _) => return SingleScan::Unterminated,
            }
        }
        if c == quote {
            return SingleScan::Closed(i + 1);
        }
        i += 1;
    }
    SingleScan::Unterminated
}

/// Continuation-line scan for a single-quoted string: newlines are allowed in
/// the body, a backslash-newline stops the match.
fn scan_single_cont(line: &[char], quote: char) -> Option<usize> {
    let mut i = 0;
    while i < line.len() {
        let c = line[i];
        if c == '\\' {
            if i + 1 < line.len() && line[i + 1] != '\n' {
                i += 2;
                continue;
            }
            return None;
        }
        if c == quote {
            return Some(i + 1);
        }
        i += 1;
    }
    None
}

fn ends_with_backslash_newline(line: &[char]) -> bool {
    let n = line.len();
    (n >= 2 && line[n - 2] == '\\' && line[n - 1] == '\n')
        || (n >= 3 && line[n - 3] == '\\' && line[n - 2] == '\r' && line[n - 1] == '\n')
}

const OPERATORS: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "...", "->", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=",
    "@=", "**", "//", ">>", "<<", "<=", ">=", "==", "!=", ":=", "~", "}", "|", "{", "^", "]",
    "[", "@", ">", "=", "<", ";", ":", "/", ".", "-", ",", "+", "*", ")", "(", "&", "%",
];

fn match_operator(line: &[char], pos: usize) -> Option<usize> {
    for op in OPERATORS {
        let n = op.chars().count();
        if pos + n <= line.len() && line[pos..pos + n].iter().copied().eq(op.chars()) {
            return Some(n);
        }
    }
    None
}

fn number_len(line: &[char], pos: usize) -> usize {
    let mut i = pos;
    while i < line.len() {
        let c = line[i];
        let exp_sign = (c == '+' || c == '-')
            && i > pos
            && matches!(line[i - 1], 'e' | 'E')
            && !line[pos..i].iter().any(|d| matches!(d, 'x' | 'X'));
        if c.is_ascii_alphanumeric() || c == '_' || c == '.' || exp_sign {
            i += 1;
        } else {
            break;
        }
    }
    i - pos
}

struct ContStr {
    text: String,
    start: (usize, usize),
    quote: char,
    triple: bool,
    needcont: bool,
}

fn tokenize(source: &str) -> Result<Vec<Token>, TokenizeError> {
    let lines = split_lines(source);
    let mut toks = Vec::new();
    let mut indents = vec![0usize];
    let mut parenlev: i64 = 0;
    let mut continued = false;
    let mut contstr: Option<ContStr> = None;
    let mut lnum = 0usize;
    let mut last_line: Vec<char> = Vec::new();
    let mut line_iter = lines.into_iter();

    loop {
        let line = line_iter.next().unwrap_or_default();
        lnum += 1;
        let max = line.len();
        let mut pos = 0usize;

        if let Some(mut cs) = contstr.take() {
            if line.is_empty() {
                return Err(TokenizeError("EOF in multi-line string"));
            }
            let end = if cs.triple {
                scan_triple_end(&line, 0, cs.quote)
            } else {
                scan_single_cont(&line, cs.quote)
            };
            if let Some(end) = end {
                cs.text.extend(&line[..end]);
                toks.push(Token {
                    kind: Kind::Str,
                    text: cs.text,
                    start: cs.start,
                    end: (lnum, end),
                });
                pos = end;
            } else if cs.needcont && !ends_with_backslash_newline(&line) {
                cs.text.extend(&line);
                toks.push(Token {
                    kind: Kind::Other,
                    text: cs.text,
                    start: cs.start,
                    end: (lnum, line.len()),
                });
                last_line = line;
                continue;
            } else {
                cs.text.extend(&line);
                contstr = Some(cs);
                last_line = line;
                continue;
            }
        } else if parenlev == 0 && !continued {
            if line.is_empty() {
                break;
            }
            let mut column = 0usize;
            while pos < max {
                match line[pos] {
                    ' ' => column += 1,
                    '\t' => column = (column / TABSIZE + 1) * TABSIZE,
                    '\x0c' => column = 0,
                    _ => break,
                }
                pos += 1;
            }
            if pos == max {
                break;
            }
            if matches!(line[pos], '#' | '\r' | '\n') {
                if line[pos] == '#' {
                    let mut end = max;
                    while end > pos && matches!(line[end - 1], '\r' | '\n') {
                        end -= 1;
                    }
                    toks.push(Token {
                        kind: Kind::Comment,
                        text: line[pos..end].iter().collect(),
                        start: (lnum, pos),
                        end: (lnum, end),
                    });
                    pos = end;
                }
                toks.push(Token {
                    kind: Kind::Nl,
                    text: line[pos..].iter().collect(),
                    start: (lnum, pos),
                    end: (lnum, max),
                });
                last_line = line;
                continue;
            }
            if column > *indents.last().unwrap() {
                indents.push(column);
                toks.push(Token {
                    kind: Kind::Indent,
                    text: line[..pos].iter().collect(),
                    start: (lnum, 0),
                    end: (lnum, pos),
                });
            }
            while column < *indents.last().unwrap() {
                if !indents.contains(&column) {
                    return Err(TokenizeError(
                        "unindent does not match any outer indentation level",
                    ));
                }
                indents.pop();
                toks.push(Token {
                    kind: Kind::Dedent,
                    text: String::new(),
                    start: (lnum, pos),
                    end: (lnum, pos),
                });
            }
        } else {
            if line.is_empty() {
                return Err(TokenizeError("EOF in multi-line statement"));
            }
            continued = false;
        }

        while pos < max {
            // leading whitespace of the pseudo-token
            let mut start = pos;
            while start < max && matches!(line[start], ' ' | '\x0c' | '\t') {
                start += 1;
            }
            if start == max {
                break;
            }
            let c = line[start];
            let tok = |kind: Kind, end: usize| Token {
                kind,
                text: line[start..end].iter().collect(),
                start: (lnum, start),
                end: (lnum, end),
            };

            if c == '\\' {
                let rest: String = line[start..].iter().take(3).collect();
                if rest.starts_with("\\\n") || rest.starts_with("\\\r\n") {
                    continued = true;
                    pos = max;
                    continue;
                }
                toks.push(tok(Kind::Other, start + 1));
                pos = start + 1;
                continue;
            }
            if c == '#' {
                let mut end = start;
                while end < max && !matches!(line[end], '\r' | '\n') {
                    end += 1;
                }
                toks.push(tok(Kind::Comment, end));
                pos = end;
                continue;
            }
            if let Some((plen, quote)) = string_opening(&line, start) {
                let q = start + plen;
                if is_triple(&line, q, quote) {
                    match scan_triple_end(&line, q + 3, quote) {
                        Some(end) => {
                            toks.push(tok(Kind::Str, end));
                            pos = end;
                        }
                        None => {
                            contstr = Some(ContStr {
                                text: line[start..].iter().collect(),
                                start: (lnum, start),
                                quote,
                                triple: true,
                                needcont: false,
                            });
                            pos = max;
                        }
                    }
                    continue;
                }
            }
            if c.is_ascii_digit()
                || (c == '.' && line.get(start + 1).is_some_and(|d| d.is_ascii_digit()))
            {
                let end = start + number_len(&line, start);
                toks.push(tok(Kind::Other, end));
                pos = end;
                continue;
            }
            if c == '\n' || (c == '\r' && line.get(start + 1) == Some(&'\n')) {
                let end = if c == '\r' { start + 2 } else { start + 1 };
                let kind = if parenlev > 0 { Kind::Nl } else { Kind::Newline };
                toks.push(tok(kind, end));
                pos = end;
                continue;
            }
            if let Some(n) = match_operator(&line, start) {
                match c {
                    '(' | '[' | '{' => parenlev += 1,
                    ')' | ']' | '}' => parenlev -= 1,
                    _ => {}
                }
                toks.push(tok(Kind::Other, start + n));
                pos = start + n;
                continue;
            }
            if let Some((plen, quote)) = string_opening(&line, start) {
                match scan_single(&line, start + plen + 1, quote) {
                    SingleScan::Closed(end) => {
                        toks.push(tok(Kind::Str, end));
                        pos = end;
                        continue;
                    }
                    SingleScan::Continued => {
                        contstr = Some(ContStr {
                            text: line[start..].iter().collect(),
                            start: (lnum, start),
                            quote,
                            triple: false,
                            needcont: true,
                        });
                        pos = max;
                        continue;
                    }
                    SingleScan::Unterminated => {}
                }
            }
            if is_word(c) {
                let mut end = start;
                while end < max && is_word(line[end]) {
                    end += 1;
                }
                toks.push(tok(Kind::Other, end));
                pos = end;
                continue;
            }
            toks.push(tok(Kind::Other, start + 1));
            pos = start + 1;
        }
        last_line = line;
    }

    if let Some(&last) = last_line.last() {
        let stripped: String = last_line.iter().collect();
        if last != '\r' && last != '\n' && !stripped.trim().starts_with('#') {
            toks.push(Token {
                kind: Kind::Newline,
                text: String::new(),
                start: (lnum - 1, last_line.len()),
                end: (lnum - 1, last_line.len() + 1),
            });
        }
    }
    Ok(toks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drops_line_and_trailing_comments() {
        let src = "x = 1  # set x\n# whole line\ny = x";
        assert_eq!(remove_comments_and_docstrings(src).unwrap(), "x = 1  \ny = x");
    }

    #[test]
    fn drops_function_docstring() {
        let src = "def f(a):\n    \"\"\"Doc\n    more.\"\"\"\n    return a";
        assert_eq!(
            remove_comments_and_docstrings(src).unwrap(),
            "def f(a):\n    return a"
        );
    }

    #[test]
    fn keeps_string_arguments() {
        let src = "print('a # not a comment')";
        assert_eq!(remove_comments_and_docstrings(src).unwrap(), src);
    }

    #[test]
    fn joins_backslash_continuation() {
        let src = "x = 1 + \\\n    2";
        assert_eq!(remove_comments_and_docstrings(src).unwrap(), "x = 1 +    2");
    }

    #[test]
    fn unterminated_triple_quote_is_an_error() {
        assert!(remove_comments_and_docstrings("x = '''abc\ny").is_err());
    }

    #[test]
    fn open_paren_at_eof_is_an_error() {
        assert!(remove_comments_and_docstrings("f(1,\n2").is_err());
    }

    #[test]
    fn bad_dedent_is_an_error() {
        assert!(remove_comments_and_docstrings("if x:\n        a\n    b").is_err());
    }

    #[test]
    fn string_after_dedent_in_nested_block_survives() {
        let src = "class A:\n    def f(self):\n        pass\n    'x'";
        assert_eq!(remove_comments_and_docstrings(src).unwrap(), src);
    }
}
