//! Dedup keys for sampled solutions.

/// Drops `#` comments outside string literals and collapses every run of
/// whitespace outside them to one space. String contents are kept as is.
/// Indentation is lost, which only matters for code that differs solely in
/// nesting; such pairs are rare enough to merge.
pub fn normalize_code(code: &str) -> String {
    let mut out = String::with_capacity(code.len());
    let chars: Vec<char> = code.chars().collect();
    let mut i = 0;
    let mut quote: Option<(char, bool)> = None;
    let mut gap = false;
    while i < chars.len() {
        let c = chars[i];
        match quote {
            Some((q, triple)) => {
                out.push(c);
                if c == '\\' && i + 1 < chars.len() {
                    out.push(chars[i + 1]);
                    i += 2;
                    continue;
                }
                if c == q {
                    if !triple {
                        quote = None;
                    } else if chars.get(i + 1) == Some(&q) && chars.get(i + 2) == Some(&q) {
                        out.push(q);
                        out.push(q);
                        i += 2;
                        quote = None;
                    }
                } else if c == '\n' && !triple {
                    quote = None;
                }
            }
            None if c.is_whitespace() => gap = true,
            None if c == '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            None => {
                if gap && !out.is_empty() {
                    out.push(' ');
                }
                gap = false;
                out.push(c);
                if c == '\'' || c == '"' {
                    let triple = chars.get(i + 1) == Some(&c) && chars.get(i + 2) == Some(&c);
                    if triple {
                        out.push(c);
                        out.push(c);
                        i += 2;
                    }
                    quote = Some((c, triple));
                }
            }
        }
        i += 1;
    }
    out
}
