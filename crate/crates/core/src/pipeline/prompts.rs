//! Fixed prompt templates. Any wording change must bump `PROMPT_VERSION`,
//! since recorded cassettes are keyed by exact request text.

pub const PROMPT_VERSION: &str = "1";

pub const SYSTEM: &str = include_str!("../../assets/prompts/system.txt");
pub const VPLAN: &str = include_str!("../../assets/prompts/vplan.txt");
pub const PROPERTY: &str = include_str!("../../assets/prompts/property.txt");
pub const REVISE: &str = include_str!("../../assets/prompts/revise.txt");
pub const REVIEW: &str = include_str!("../../assets/prompts/review.txt");
pub const CEX: &str = include_str!("../../assets/prompts/cex.txt");
pub const COVERAGE: &str = include_str!("../../assets/prompts/coverage.txt");

/// Substitutes `{{key}}` placeholders. Values are inserted verbatim, so a
/// value containing `{{...}}` is never re-expanded.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        match after.find("}}") {
            Some(close) => {
                let key = &after[..close];
                match vars.iter().find(|(k, _)| *k == key) {
                    Some((_, v)) => out.push_str(v.trim_end()),
                    None => panic!("prompt template uses unknown placeholder `{key}`"),
                }
                rest = &after[close + 2..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out.trim_end().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fills_without_reexpansion() {
        assert_eq!(fill("a {{x}} b", &[("x", "{{x}}\n")]), "a {{x}} b");
    }

    #[test]
    #[should_panic(expected = "unknown placeholder")]
    fn unknown_placeholder_panics() {
        fill("{{nope}}", &[]);
    }
}
