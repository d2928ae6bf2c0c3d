use crate::error::{Error, Result};

/// One parsed row and the line it starts on (1-based).
pub type Row = (usize, Vec<String>);

/// Strict RFC 4180 parsing: quotes may only open a field, `""` escapes a
/// quote, and a closing quote must be followed by a delimiter or line end.
/// Blank lines are skipped.
pub fn parse(text: &str, delimiter: char) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    let mut fields = Vec::new();
    let mut field = String::new();
    let mut line = 1;
    let mut row_start = 1;
    let mut chars = text.chars().peekable();
    let mut at_field_start = true;

    while let Some(c) = chars.next() {
        if at_field_start && c == '"' {
            let open_line = line;
            loop {
                match chars.next() {
                    None => {
                        return Err(Error::Parse {
                            line: open_line,
                            msg: "unterminated quoted field".into(),
                        })
                    }
                    Some('"') if chars.peek() == Some(&'"') => {
                        chars.next();
                        field.push('"');
                    }
                    Some('"') => break,
                    Some(ch) => {
                        if ch == '\n' {
                            line += 1;
                        }
                        field.push(ch);
                    }
                }
            }
            match chars.peek() {
                None | Some('\n') | Some('\r') => {}
                Some(&d) if d == delimiter => {}
                Some(other) => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unexpected {other:?} after closing quote"),
                    })
                }
            }
            at_field_start = false;
            continue;
        }
        at_field_start = false;
        if c == delimiter {
            fields.push(std::mem::take(&mut field));
            at_field_start = true;
        } else if c == '\n' || c == '\r' {
            if c == '\r' && chars.peek() == Some(&'\n') {
                chars.next();
            }
            fields.push(std::mem::take(&mut field));
            if !(fields.len() == 1 && fields[0].is_empty()) {
                rows.push((row_start, std::mem::take(&mut fields)));
            }
            fields.clear();
            line += 1;
            row_start = line;
            at_field_start = true;
        } else if c == '"' {
            return Err(Error::Parse {
                line,
                msg: "quote inside an unquoted field".into(),
            });
        } else {
            field.push(c);
        }
    }
    if !at_field_start || !fields.is_empty() {
        fields.push(field);
        rows.push((row_start, fields));
    }
    Ok(rows)
}
