//! Reader for the indentation-based agent/task document format.
//!
//! A document is a sequence of top-level entries. Each entry is a bare key
//! followed by a colon, and owns a block of indented `key: value` fields.
//! Field values may be inline scalars or `>` (folded) / `|` (literal) blocks
//! whose lines are indented deeper than the field key.
//!
//! ```text
//! formal_verification_lead:
//!   role: >
//!     Formal Verification Lead
//!   allow_delegation: false
//! ```

use super::ConfigError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Field {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub name: String,
    pub line: usize,
    pub fields: Vec<Field>,
}

impl Entry {
    pub fn get(&self, key: &str) -> Option<&Field> {
        self.fields.iter().find(|f| f.key == key)
    }
}

fn indent_of(line: &str) -> usize {
    line.len() - line.trim_start_matches(' ').len()
}

fn is_skippable(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

fn unquote(value: &str) -> &str {
    let v = value.trim();
    if v.len() >= 2
        && ((v.starts_with('"') && v.ends_with('"')) || (v.starts_with('\'') && v.ends_with('\'')))
    {
        &v[1..v.len() - 1]
    } else {
        v
    }
}

/// Splits `key: rest` into its parts. The key may be followed by spaces
/// before the colon (`vplan_gen :`).
fn split_key(text: &str) -> Option<(&str, &str)> {
    let colon = text.find(':')?;
    let key = text[..colon].trim_end();
    if key.is_empty()
        || !key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
    {
        return None;
    }
    Some((key, text[colon + 1..].trim()))
}

pub fn parse(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut entries: Vec<Entry> = Vec::new();
    let mut i = 0;

    while i < lines.len() {
        let raw = lines[i];
        let lineno = i + 1;
        if is_skippable(raw) {
            i += 1;
            continue;
        }
        if raw.contains('\t') {
            return Err(ConfigError::Parse {
                line: lineno,
                message: "tabs are not allowed for indentation".into(),
            });
        }
        let indent = indent_of(raw);
        let body = raw.trim();

        if indent == 0 {
            let (key, rest) = split_key(body).ok_or_else(|| ConfigError::Parse {
                line: lineno,
                message: format!("expected `name:` but found `{body}`"),
            })?;
            if !rest.is_empty() {
                return Err(ConfigError::Parse {
                    line: lineno,
                    message: format!("top-level entry `{key}` must not carry an inline value"),
                });
            }
            entries.push(Entry {
                name: key.to_string(),
                line: lineno,
                fields: Vec::new(),
            });
            i += 1;
            continue;
        }

        let entry = entries.last_mut().ok_or_else(|| ConfigError::Parse {
            line: lineno,
            message: "indented field outside of any entry".into(),
        })?;
        let (key, rest) = split_key(body).ok_or_else(|| ConfigError::Parse {
            line: lineno,
            message: format!("expected `key: value` but found `{body}`"),
        })?;
        if entry.get(key).is_some() {
            return Err(ConfigError::Parse {
                line: lineno,
                message: format!("duplicate key `{key}` in entry `{}`", entry.name),
            });
        }

        i += 1;
        let value = match rest {
            ">" | ">-" | "|" | "|-" => {
                let folded = rest.starts_with('>');
                let mut parts: Vec<String> = Vec::new();
                while i < lines.len() {
                    let next = lines[i];
                    if next.trim().is_empty() {
                        if folded {
                            i += 1;
                            continue;
                        }
                        parts.push(String::new());
                        i += 1;
                        continue;
                    }
                    if indent_of(next) <= indent {
                        break;
                    }
                    parts.push(next.trim().to_string());
                    i += 1;
                }
                while parts.last().is_some_and(|p| p.is_empty()) {
                    parts.pop();
                }
                if folded {
                    parts.join(" ")
                } else {
                    parts.join("\n")
                }
            }
            other => unquote(other).to_string(),
        };

        entry.fields.push(Field {
            key: key.to_string(),
            value,
            line: lineno,
        });
    }

    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folded_blocks_join_lines() {
        let doc = "a:\n  role: >\n    Formal\n    Lead\n  verbose: true\n";
        let entries = parse(doc).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].get("role").unwrap().value, "Formal Lead");
        assert_eq!(entries[0].get("verbose").unwrap().value, "true");
        assert_eq!(entries[0].get("verbose").unwrap().line, 5);
    }

    #[test]
    fn literal_blocks_keep_newlines() {
        let doc = "a:\n  description: |\n    one\n    two\n";
        let entries = parse(doc).unwrap();
        assert_eq!(entries[0].get("description").unwrap().value, "one\ntwo");
    }

    #[test]
    fn space_before_colon_is_accepted() {
        let entries = parse("vplan_gen :\n  description: x\n").unwrap();
        assert_eq!(entries[0].name, "vplan_gen");
    }

    #[test]
    fn comments_and_quotes() {
        let entries = parse("# header\nx:\n  goal: \"quoted: value\"\n").unwrap();
        assert_eq!(entries[0].get("goal").unwrap().value, "quoted: value");
    }

    #[test]
    fn orphan_field_is_an_error() {
        let err = parse("  role: x\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 1, .. }));
    }

    #[test]
    fn duplicate_field_reports_line() {
        let err = parse("x:\n  role: a\n  role: b\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 3, .. }));
    }
}
