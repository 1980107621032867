//! Strict literal grammar for the goal matrix returned by a language model.
//!
//! ```text
//! matrix := ws '[' ws row (ws ',' ws row)* ws ']' ws
//! row    := '[' ws number (ws ',' ws number)* ws ']'
//! number := sign? (digits ('.' digits?)? | '.' digits) (('e'|'E') sign? digits)?
//! ```
//!
//! Nothing else is accepted: no markdown, prose, trailing commas, expressions
//! or nesting. `nan`/`inf` literals and overflowing numbers are reported as
//! non-finite rather than malformed.

use crate::geometry::Vec3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("malformed output at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("expected {expected} rows of 3 numbers: {detail}")]
    CountMismatch { expected: usize, detail: String },
    #[error("non-finite value in row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
}

struct Cursor<'a> {
    src: &'a [u8],
    pos: usize,
}

enum Number {
    Finite(f64),
    NonFinite,
}

impl<'a> Cursor<'a> {
    fn new(s: &'a str) -> Self {
        Self { src: s.as_bytes(), pos: 0 }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b) if b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn fail<T>(&self, reason: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Malformed { offset: self.pos, reason: reason.into() })
    }

    fn expect(&mut self, b: u8) -> Result<(), ParseError> {
        if self.peek() == Some(b) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(format!("expected '{}'", b as char))
        }
    }

    fn digits(&mut self) -> usize {
        let start = self.pos;
        while matches!(self.peek(), Some(b) if b.is_ascii_digit()) {
            self.pos += 1;
        }
        self.pos - start
    }

    fn number(&mut self) -> Result<Number, ParseError> {
        let start = self.pos;
        if matches!(self.peek(), Some(b'+') | Some(b'-')) {
            self.pos += 1;
        }
        if matches!(self.peek(), Some(b) if b.is_ascii_alphabetic()) {
            let word_start = self.pos;
            while matches!(self.peek(), Some(b) if b.is_ascii_alphabetic()) {
                self.pos += 1;
            }
            let word = std::str::from_utf8(&self.src[word_start..self.pos]).unwrap_or("").to_ascii_lowercase();
            return match word.as_str() {
                "nan" | "inf" | "infinity" => Ok(Number::NonFinite),
                _ => {
                    self.pos = start;
                    self.fail("expected a numeric literal")
                }
            };
        }
        let int = self.digits();
        let mut frac = 0;
        if self.peek() == Some(b'.') {
            self.pos += 1;
            frac = self.digits();
        }
        if int == 0 && frac == 0 {
            self.pos = start;
            return self.fail("expected a numeric literal");
        }
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            self.pos += 1;
            if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            if self.digits() == 0 {
                return self.fail("exponent without digits");
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice");
        let value: f64 = match text.parse() {
            Ok(v) => v,
            Err(_) => {
                self.pos = start;
                return self.fail("unparseable number");
            }
        };
        Ok(if value.is_finite() { Number::Finite(value) } else { Number::NonFinite })
    }

    fn row(&mut self, row_index: usize, non_finite: &mut Option<(usize, usize)>) -> Result<Vec<f64>, ParseError> {
        self.expect(b'[')?;
        self.skip_ws();
        let mut values = Vec::new();
        if self.peek() == Some(b']') {
            self.pos += 1;
            return Ok(values);
        }
        loop {
            match self.number()? {
                Number::Finite(v) => values.push(v),
                Number::NonFinite => {
                    non_finite.get_or_insert((row_index, values.len()));
                    values.push(f64::NAN);
                }
            }
            self.skip_ws();
            match self.peek() {
                Some(b',') => {
                    self.pos += 1;
                    self.skip_ws();
                }
                Some(b']') => {
                    self.pos += 1;
                    return Ok(values);
                }
                _ => return self.fail("expected ',' or ']' in row"),
            }
        }
    }
}

/// Rows as parsed, plus the (row, column) of the first non-finite entry.
type Rows = (Vec<Vec<f64>>, Option<(usize, usize)>);

/// Parses `raw` against the strict grammar, without checking dimensions.
fn parse_rows(raw: &str) -> Result<Rows, ParseError> {
    let mut c = Cursor::new(raw);
    let mut non_finite = None;
    c.skip_ws();
    c.expect(b'[')?;
    c.skip_ws();
    let mut rows = Vec::new();
    if c.peek() == Some(b']') {
        c.pos += 1;
    } else {
        loop {
            rows.push(c.row(rows.len(), &mut non_finite)?);
            c.skip_ws();
            match c.peek() {
                Some(b',') => {
                    c.pos += 1;
                    c.skip_ws();
                }
                Some(b']') => {
                    c.pos += 1;
                    break;
                }
                _ => return c.fail("expected ',' or ']' after row"),
            }
        }
    }
    c.skip_ws();
    if c.pos != c.src.len() {
        return c.fail("unexpected trailing content");
    }
    Ok((rows, non_finite))
}

/// Removes one surrounding code-fence block and any prose lines before the
/// first line starting with `[` or after the last line ending with `]`.
pub fn strip_wrapping(raw: &str) -> String {
    let mut text = raw.trim();
    if let Some(open) = text.find("```") {
        let after = &text[open + 3..];
        // Skip an optional language tag on the fence line.
        let body = after.split_once('\n').map_or(after, |(_, rest)| rest);
        if let Some(close) = body.find("```") {
            text = body[..close].trim();
        }
    }
    let lines: Vec<&str> = text.lines().collect();
    let first = lines.iter().position(|l| l.trim_start().starts_with('['));
    let last = lines.iter().rposition(|l| l.trim_end().ends_with(']'));
    match (first, last) {
        (Some(a), Some(b)) if a <= b => lines[a..=b].join("\n"),
        _ => text.to_string(),
    }
}

/// Parses an `n × 3` goal matrix.
///
/// With `lenient`, one code-fence block and surrounding prose lines are
/// stripped first; the grammar itself is the same.
pub fn parse_waypoint_matrix(raw: &str, n: usize, lenient: bool) -> Result<Vec<Vec3>, ParseError> {
    let (rows, non_finite) = if lenient { parse_rows(&strip_wrapping(raw))? } else { parse_rows(raw)? };
    if rows.len() != n {
        return Err(ParseError::CountMismatch { expected: n, detail: format!("got {} rows", rows.len()) });
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != 3) {
        return Err(ParseError::CountMismatch { expected: n, detail: format!("row {i} has {} values", r.len()) });
    }
    if let Some((row, col)) = non_finite {
        return Err(ParseError::NonFinite { row, col });
    }
    Ok(rows.iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect())
}

/// Renders goals in the same literal form the parser accepts.
pub fn render_matrix(goals: &[Vec3]) -> String {
    let rows: Vec<String> = goals.iter().map(|g| format!("[{:?}, {:?}, {:?}]", g.x, g.y, g.z)).collect();
    format!("[{}]", rows.join(", "))
}
