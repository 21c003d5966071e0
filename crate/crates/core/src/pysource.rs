//! Best-effort lexical cleanup of Python cell source.
//!
//! Static scans (import extraction, non-determinism patterns) must not see
//! text inside comments or string literals. [`code_only`] blanks those out
//! while keeping line structure, so the scanners can work line by line even
//! on cells that do not parse as Python.

/// Cell magics whose body is still executed as Python.
const PYTHON_CELL_MAGICS: &[&str] = &["time", "timeit", "capture", "prun", "debug"];

/// Removes IPython syntax: shell escapes (`!cmd`), line magics (`%magic`),
/// help queries (`obj?`) and whole cells under a non-Python cell magic.
pub fn strip_ipython(source: &str) -> String {
    let first = source.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim_start();
    if let Some(magic) = first.strip_prefix("%%") {
        let name = magic.split_whitespace().next().unwrap_or("");
        if !PYTHON_CELL_MAGICS.contains(&name) {
            return source.lines().map(|_| "").collect::<Vec<_>>().join("\n");
        }
    }
    source
        .split('\n')
        .map(|line| {
            let trimmed = line.trim_start();
            if trimmed.starts_with('!') || trimmed.starts_with('%') || trimmed.ends_with('?') {
                ""
            } else {
                line
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Replaces comments and string-literal contents with spaces. Newlines are
/// preserved, and expressions inside f-string braces are kept as code.
pub fn code_only(source: &str) -> String {
    let chars: Vec<char> = source.chars().collect();
    let mut out = String::with_capacity(source.len());
    let mut pos = 0;
    scan_code(&chars, &mut pos, &mut out, false);
    // Anything left over after an unbalanced f-string expression is code.
    while pos < chars.len() {
        out.push(chars[pos]);
        pos += 1;
    }
    out
}

fn blank(out: &mut String, c: char) {
    out.push(if c == '\n' { '\n' } else { ' ' });
}

struct StringStart {
    prefix_len: usize,
    quote: char,
    triple: bool,
    formatted: bool,
}

fn string_start(chars: &[char], pos: usize) -> Option<StringStart> {
    let mut prefix_len = 0;
    while prefix_len < 2 {
        match chars.get(pos + prefix_len) {
            Some(c) if "rRbBuUfF".contains(*c) => prefix_len += 1,
            _ => break,
        }
    }
    let quote = *chars.get(pos + prefix_len)?;
    if quote != '\'' && quote != '"' {
        // `rb` may have matched two identifier chars where only one was a prefix
        return None;
    }
    if prefix_len > 0 {
        if let Some(prev) = pos.checked_sub(1).and_then(|p| chars.get(p)) {
            if prev.is_alphanumeric() || *prev == '_' {
                return None;
            }
        }
    }
    let prefix: String = chars[pos..pos + prefix_len].iter().collect::<String>().to_ascii_lowercase();
    let triple = chars.get(pos + prefix_len + 1) == Some(&quote) && chars.get(pos + prefix_len + 2) == Some(&quote);
    Some(StringStart {
        prefix_len,
        quote,
        triple,
        formatted: prefix.contains('f'),
    })
}

/// Scans code until end of input, or (inside an f-string replacement field)
/// until the `}`, `:` or `!` that ends the expression. Returns true when it
/// stopped at such a terminator without consuming it.
fn scan_code(chars: &[char], pos: &mut usize, out: &mut String, in_field: bool) -> bool {
    let mut depth = 0usize;
    while *pos < chars.len() {
        let c = chars[*pos];
        if c == '#' {
            while *pos < chars.len() && chars[*pos] != '\n' {
                out.push(' ');
                *pos += 1;
            }
            continue;
        }
        if c == '\'' || c == '"' || "rRbBuUfF".contains(c) {
            if let Some(start) = string_start(chars, *pos) {
                scan_string(chars, pos, out, start);
                continue;
            }
        }
        if in_field {
            match c {
                '(' | '[' | '{' => depth += 1,
                ')' | ']' => depth = depth.saturating_sub(1),
                '}' if depth == 0 => return true,
                '}' => depth -= 1,
                ':' if depth == 0 => return true,
                '!' if depth == 0 && chars.get(*pos + 1) != Some(&'=') => return true,
                _ => {}
            }
        }
        out.push(c);
        *pos += 1;
    }
    false
}

fn scan_string(chars: &[char], pos: &mut usize, out: &mut String, start: StringStart) {
    let quote_len = if start.triple { 3 } else { 1 };
    for _ in 0..start.prefix_len + quote_len {
        out.push(' ');
    }
    *pos += start.prefix_len + quote_len;
    while *pos < chars.len() {
        let c = chars[*pos];
        // a backslash keeps the next char out of play, raw strings included
        if c == '\\' {
            blank(out, c);
            *pos += 1;
            if let Some(&next) = chars.get(*pos) {
                blank(out, next);
                *pos += 1;
            }
            continue;
        }
        if c == start.quote {
            let closes = !start.triple
                || (chars.get(*pos + 1) == Some(&start.quote) && chars.get(*pos + 2) == Some(&start.quote));
            if closes {
                for _ in 0..quote_len {
                    out.push(' ');
                }
                *pos += quote_len;
                return;
            }
        }
        if c == '\n' && !start.triple {
            // unterminated single-quoted literal; give the line back to code
            return;
        }
        if start.formatted && c == '{' {
            if chars.get(*pos + 1) == Some(&'{') {
                out.push_str("  ");
                *pos += 2;
                continue;
            }
            out.push(' ');
            *pos += 1;
            replacement_field(chars, pos, out);
            continue;
        }
        blank(out, c);
        *pos += 1;
    }
}

/// Handles `{expr!conv:spec}` after the opening brace has been consumed.
fn replacement_field(chars: &[char], pos: &mut usize, out: &mut String) {
    if !scan_code(chars, pos, out, true) {
        return;
    }
    // Conversion and format spec are literal text, possibly with nested fields.
    while *pos < chars.len() {
        let c = chars[*pos];
        match c {
            '}' => {
                out.push(' ');
                *pos += 1;
                return;
            }
            '{' => {
                out.push(' ');
                *pos += 1;
                replacement_field(chars, pos, out);
            }
            _ => {
                blank(out, c);
                *pos += 1;
            }
        }
    }
}

/// Joins backslash continuations and splits on `;`, yielding simple statements.
pub fn statements(code: &str) -> Vec<String> {
    let mut logical = Vec::new();
    let mut current = String::new();
    for line in code.split('\n') {
        let trimmed = line.trim_end();
        if let Some(head) = trimmed.strip_suffix('\\') {
            current.push_str(head);
            current.push(' ');
            continue;
        }
        current.push_str(line);
        logical.push(std::mem::take(&mut current));
    }
    if !current.is_empty() {
        logical.push(current);
    }
    logical
        .iter()
        .flat_map(|l| l.split(';'))
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}
