//! SystemVerilog assertion blocks: extraction from agent replies, lexical
//! linting against a design's port list, and header port scanning.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::lexer::{is_keyword, lex, Token, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SvaKind {
    Assert,
    Assume,
    Cover,
}

impl SvaKind {
    fn from_keyword(word: &str) -> Option<Self> {
        match word {
            "assert" => Some(SvaKind::Assert),
            "assume" | "restrict" => Some(SvaKind::Assume),
            "cover" => Some(SvaKind::Cover),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SvaBlock {
    pub code: String,
    /// Signals the block references that it does not declare itself.
    pub declared_names: Vec<String>,
    pub kind: SvaKind,
}

impl SvaBlock {
    pub fn new(code: impl Into<String>) -> Self {
        let code = code.into().trim().to_string();
        let scan = Scan::run(&code);
        SvaBlock {
            kind: scan
                .statements
                .first()
                .map(|s| s.kind)
                .unwrap_or(SvaKind::Assert),
            declared_names: scan.external_refs(),
            code,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LintCode {
    Lexical,
    UnbalancedParens,
    UnbalancedBeginEnd,
    UnbalancedProperty,
    UnbalancedSequence,
    UnterminatedStatement,
    NoAssertion,
    MultipleAssertions,
    UnknownSignal,
    MissingClock,
    MixedClocks,
}

impl fmt::Display for LintCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("lint code serializes");
        f.write_str(s.as_str().unwrap_or("UNKNOWN"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: LintCode,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintReport {
    pub ok: bool,
    pub diagnostics: Vec<Diagnostic>,
}

impl LintReport {
    pub fn has(&self, code: LintCode) -> bool {
        self.diagnostics.iter().any(|d| d.code == code)
    }

    /// Diagnostics as one line each, for feeding back to an agent.
    pub fn summary(&self) -> String {
        self.diagnostics
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone)]
struct Statement {
    kind: SvaKind,
    concurrent: bool,
    top_level: bool,
    /// Byte offset just past the statement terminator.
    end: usize,
}

#[derive(Debug, Default)]
struct Scan<'a> {
    tokens: Vec<Token<'a>>,
    statements: Vec<Statement>,
    diagnostics: Vec<Diagnostic>,
    locals: BTreeSet<&'a str>,
    clocks: BTreeSet<String>,
    default_clocking: bool,
}

const DATA_TYPES: &[&str] = &[
    "bit", "byte", "int", "integer", "logic", "longint", "reg", "shortint",
];

impl<'a> Scan<'a> {
    fn run(src: &'a str) -> Scan<'a> {
        let lexed = lex(src);
        let mut scan = Scan {
            tokens: lexed.tokens,
            ..Scan::default()
        };
        for e in lexed.errors {
            scan.diag(LintCode::Lexical, format!("line {}: {}", e.line, e.message));
        }
        scan.walk_structure();
        scan.collect_locals();
        scan.collect_clocks();
        scan
    }

    fn diag(&mut self, code: LintCode, message: impl Into<String>) {
        self.diagnostics.push(Diagnostic {
            code,
            message: message.into(),
        });
    }

    fn text(&self, i: usize) -> Option<&'a str> {
        self.tokens.get(i).map(|t| t.text)
    }

    fn walk_structure(&mut self) {
        struct Open {
            kind: SvaKind,
            concurrent: bool,
            top_level: bool,
            brackets: usize,
            begins: usize,
        }

        let mut brackets: Vec<(char, usize)> = Vec::new();
        let mut begins = 0usize;
        let mut decls: Vec<&str> = Vec::new();
        let mut open: Option<Open> = None;
        let mut bracket_error = false;
        let mut begin_error = false;
        let mut decl_errors: Vec<(LintCode, String)> = Vec::new();

        for i in 0..self.tokens.len() {
            let tok = self.tokens[i].clone();
            let prev = if i > 0 { self.text(i - 1) } else { None };
            let next = self.text(i + 1);
            match tok.text {
                "(" | "{" => brackets.push((tok.text.chars().next().unwrap(), tok.line)),
                t if t.starts_with('[') => brackets.push(('[', tok.line)),
                ")" | "]" | "}" => {
                    let want = match tok.text {
                        ")" => '(',
                        "]" => '[',
                        _ => '{',
                    };
                    match brackets.pop() {
                        Some((c, _)) if c == want => {}
                        _ => {
                            if !bracket_error {
                                self.diag(
                                    LintCode::UnbalancedParens,
                                    format!("line {}: unexpected `{}`", tok.line, tok.text),
                                );
                            }
                            bracket_error = true;
                        }
                    }
                }
                _ => {}
            }
            if tok.kind != TokenKind::Ident && tok.kind != TokenKind::Punct {
                continue;
            }
            match tok.text {
                "begin" => begins += 1,
                "end" => {
                    if begins == 0 {
                        if !begin_error {
                            self.diag(
                                LintCode::UnbalancedBeginEnd,
                                format!("line {}: `end` without `begin`", tok.line),
                            );
                        }
                        begin_error = true;
                    } else {
                        begins -= 1;
                    }
                    if let Some(o) = &open {
                        if begins == o.begins && brackets.len() == o.brackets && next != Some("else") {
                            let o = open.take().unwrap();
                            self.statements.push(Statement {
                                kind: o.kind,
                                concurrent: o.concurrent,
                                top_level: o.top_level,
                                end: tok.end,
                            });
                        }
                    }
                }
                "property" | "sequence"
                    if !matches!(prev, Some("assert" | "assume" | "cover" | "restrict" | "expect")) =>
                {
                    decls.push(tok.text);
                }
                "endproperty" | "endsequence" => {
                    let opener = if tok.text == "endproperty" { "property" } else { "sequence" };
                    if decls.last() == Some(&opener) {
                        decls.pop();
                    } else {
                        let code = if opener == "property" {
                            LintCode::UnbalancedProperty
                        } else {
                            LintCode::UnbalancedSequence
                        };
                        decl_errors.push((
                            code,
                            format!("line {}: `{}` without matching `{opener}`", tok.line, tok.text),
                        ));
                    }
                }
                ";" => {
                    if let Some(o) = &open {
                        if brackets.len() == o.brackets && begins == o.begins && next != Some("else") {
                            let o = open.take().unwrap();
                            self.statements.push(Statement {
                                kind: o.kind,
                                concurrent: o.concurrent,
                                top_level: o.top_level,
                                end: tok.end,
                            });
                        }
                    }
                }
                word => {
                    if let Some(kind) = SvaKind::from_keyword(word) {
                        if open.is_none() && decls.is_empty() && prev != Some("default") {
                            open = Some(Open {
                                kind,
                                concurrent: matches!(next, Some("property" | "sequence")),
                                top_level: brackets.is_empty() && begins == 0,
                                brackets: brackets.len(),
                                begins,
                            });
                        }
                    }
                }
            }
        }

        if let Some(o) = open {
            self.diag(
                LintCode::UnterminatedStatement,
                "assertion statement is missing its terminating `;`",
            );
            self.statements.push(Statement {
                kind: o.kind,
                concurrent: o.concurrent,
                top_level: o.top_level,
                end: self.tokens.last().map_or(0, |t| t.end),
            });
        }
        if let Some((c, line)) = brackets.first() {
            if !bracket_error {
                self.diag(
                    LintCode::UnbalancedParens,
                    format!("line {line}: `{c}` is never closed"),
                );
            }
        }
        if begins > 0 && !begin_error {
            self.diag(LintCode::UnbalancedBeginEnd, "`begin` without `end`");
        }
        for d in decls {
            let code = if d == "property" {
                LintCode::UnbalancedProperty
            } else {
                LintCode::UnbalancedSequence
            };
            decl_errors.push((code, format!("`{d}` without matching `end{d}`")));
        }
        for (code, message) in decl_errors {
            self.diag(code, message);
        }
    }

    fn collect_locals(&mut self) {
        let toks = &self.tokens;
        let mut locals = BTreeSet::new();
        for i in 0..toks.len() {
            let t = &toks[i];
            let prev = if i > 0 { Some(toks[i - 1].text) } else { None };
            let next = toks.get(i + 1).map(|t| t.text);
            match t.text {
                "property" | "sequence"
                    if !matches!(prev, Some("assert" | "assume" | "cover" | "restrict" | "expect")) =>
                {
                    if let Some(name) = toks.get(i + 1).filter(|n| n.is_ident()) {
                        locals.insert(name.text);
                        // formal arguments
                        if toks.get(i + 2).is_some_and(|p| p.is("(")) {
                            let mut depth = 0;
                            for a in &toks[i + 2..] {
                                match a.text {
                                    "(" => depth += 1,
                                    ")" => {
                                        depth -= 1;
                                        if depth == 0 {
                                            break;
                                        }
                                    }
                                    _ if a.is_ident() && !is_keyword(a.text) => {
                                        locals.insert(a.text);
                                    }
                                    _ => {}
                                }
                            }
                        }
                    }
                }
                "let" | "genvar" | "clocking" => {
                    if let Some(name) = toks.get(i + 1).filter(|n| n.is_ident() && !is_keyword(n.text)) {
                        locals.insert(name.text);
                    }
                }
                "localparam" | "parameter" => {
                    if let Some(eq) = toks[i..].iter().position(|x| x.is("=")) {
                        if let Some(name) = toks.get(i + eq - 1).filter(|n| n.is_ident()) {
                            locals.insert(name.text);
                        }
                    }
                }
                w if DATA_TYPES.contains(&w) => {
                    // skip packed dimensions, then take the declared name
                    let mut j = i + 1;
                    while toks.get(j).is_some_and(|x| x.is("signed") || x.is("unsigned")) {
                        j += 1;
                    }
                    while toks.get(j).is_some_and(|x| x.is("[")) {
                        while toks.get(j).is_some_and(|x| !x.is("]")) {
                            j += 1;
                        }
                        j += 1;
                    }
                    if let Some(name) = toks.get(j).filter(|n| n.is_ident() && !is_keyword(n.text)) {
                        locals.insert(name.text);
                    }
                }
                _ if t.is_ident()
                    && next == Some(":")
                    && toks
                        .get(i + 2)
                        .is_some_and(|k| SvaKind::from_keyword(k.text).is_some()) =>
                {
                    locals.insert(t.text);
                }
                _ => {}
            }
        }
        self.locals = locals;
    }

    fn collect_clocks(&mut self) {
        let toks = &self.tokens;
        for i in 0..toks.len() {
            if toks[i].is("default") && toks.get(i + 1).is_some_and(|t| t.is("clocking")) {
                self.default_clocking = true;
            }
            if !toks[i].is("@") {
                continue;
            }
            let mut parts = Vec::new();
            if toks.get(i + 1).is_some_and(|t| t.is("(")) {
                let mut depth = 0;
                for t in &toks[i + 1..] {
                    match t.text {
                        "(" => depth += 1,
                        ")" => {
                            depth -= 1;
                            if depth == 0 {
                                break;
                            }
                        }
                        _ => {}
                    }
                    if depth > 0 && !(depth == 1 && t.is("(")) {
                        parts.push(t.text);
                    }
                }
            } else {
                parts.extend(toks.get(i + 1).map(|t| t.text));
                if matches!(parts.first(), Some(&("posedge" | "negedge" | "edge"))) {
                    parts.extend(toks.get(i + 2).map(|t| t.text));
                }
            }
            if !parts.is_empty() {
                self.clocks.insert(parts.join(" "));
            }
        }
    }

    /// Identifiers referenced but not declared inside the code, in first-use
    /// order.
    fn external_refs(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for (i, t) in self.tokens.iter().enumerate() {
            if !t.is_ident() || is_keyword(t.text) || self.locals.contains(t.text) {
                continue;
            }
            let prev = if i > 0 { Some(self.tokens[i - 1].text) } else { None };
            let next = self.tokens.get(i + 1).map(|n| n.text);
            if matches!(prev, Some("." | "::" | "'")) || matches!(next, Some("::" | "'")) {
                continue;
            }
            if seen.insert(t.text) {
                out.push(t.text.to_string());
            }
        }
        out
    }

    fn top_level_ends(&self) -> Vec<usize> {
        self.statements
            .iter()
            .filter(|s| s.top_level)
            .map(|s| s.end)
            .collect()
    }
}

/// Lexical checks of one block against the design's port list.
pub fn lint_sva(block: &SvaBlock, port_list: &[String]) -> LintReport {
    let scan = Scan::run(&block.code);
    let mut diagnostics = scan.diagnostics.clone();
    let mut push = |code, message: String| diagnostics.push(Diagnostic { code, message });

    match scan.statements.len() {
        0 => push(
            LintCode::NoAssertion,
            "block contains no assert, assume or cover statement".into(),
        ),
        1 => {}
        n => push(
            LintCode::MultipleAssertions,
            format!("block contains {n} assertion statements; expected exactly one"),
        ),
    }

    let ports: BTreeSet<&str> = port_list.iter().map(String::as_str).collect();
    for name in scan.external_refs() {
        if !ports.contains(name.as_str()) {
            push(
                LintCode::UnknownSignal,
                format!("UNKNOWN_SIGNAL({name}): `{name}` is not a port of the design"),
            );
        }
    }

    let concurrent = scan.statements.iter().any(|s| s.concurrent);
    if concurrent && scan.clocks.is_empty() && !scan.default_clocking {
        push(
            LintCode::MissingClock,
            "concurrent assertion has no clocking event; add @(posedge <clk>)".into(),
        );
    }
    if scan.clocks.len() > 1 {
        let list: Vec<&str> = scan.clocks.iter().map(String::as_str).collect();
        push(
            LintCode::MixedClocks,
            format!("block mixes clocking events: {}", list.join(", ")),
        );
    }

    LintReport {
        ok: diagnostics.is_empty(),
        diagnostics,
    }
}

/// Splits code into blocks, one per top-level assertion statement. Text
/// before a statement (property declarations, labels, comments) belongs to
/// it; a trailing line comment after the terminator stays with it too.
pub fn split_blocks(code: &str) -> Vec<SvaBlock> {
    let scan = Scan::run(code);
    let ends = scan.top_level_ends();
    if ends.is_empty() {
        return if code.trim().is_empty() {
            Vec::new()
        } else {
            vec![SvaBlock::new(code)]
        };
    }
    let mut cuts = Vec::with_capacity(ends.len());
    for end in ends {
        let rest = &code[end..];
        let eol = rest.find('\n').unwrap_or(rest.len());
        let tail = rest[..eol].trim();
        cuts.push(if tail.is_empty() || tail.starts_with("//") {
            end + eol
        } else {
            end
        });
    }
    let mut blocks = Vec::new();
    let mut start = 0;
    for cut in cuts {
        let piece = code[start..cut].trim();
        if !piece.is_empty() {
            blocks.push(SvaBlock::new(piece));
        }
        start = cut;
    }
    // whatever follows the last statement stays with it, so lint sees it
    let trailer = code[start..].trim();
    if !trailer.is_empty() {
        if let Some(last) = blocks.last_mut() {
            *last = SvaBlock::new(format!("{}\n{}", last.code, trailer));
        }
    }
    blocks
}

const SV_TAGS: &[&str] = &["systemverilog", "system-verilog", "verilog", "sv", "sva"];

struct Fence<'a> {
    tag: String,
    body: &'a str,
}

fn fences(reply: &str) -> Vec<Fence<'_>> {
    let mut out = Vec::new();
    let mut offset = 0;
    let mut open: Option<(String, usize)> = None;
    for line in reply.split_inclusive('\n') {
        let trimmed = line.trim_start();
        let indent = line.len() - trimmed.len();
        if indent <= 3 && trimmed.starts_with("```") {
            match open.take() {
                None => {
                    let tag = trimmed
                        .trim_start_matches('`')
                        .split_whitespace()
                        .next()
                        .unwrap_or("")
                        .to_ascii_lowercase();
                    open = Some((tag, offset + line.len()));
                }
                Some((tag, start)) => out.push(Fence {
                    tag,
                    body: &reply[start..offset],
                }),
            }
        }
        offset += line.len();
    }
    if let Some((tag, start)) = open {
        out.push(Fence {
            tag,
            body: &reply[start.min(reply.len())..],
        });
    }
    out
}

fn starts_code_line(line: &str) -> bool {
    let toks = lex(line).tokens;
    match toks.first().map(|t| t.text) {
        Some("property" | "sequence" | "assert" | "assume" | "cover" | "default") => true,
        Some(_) => {
            toks.get(1).is_some_and(|t| t.is(":"))
                && toks
                    .get(2)
                    .is_some_and(|t| SvaKind::from_keyword(t.text).is_some())
        }
        None => false,
    }
}

/// Pulls assertion code out of free-form prose when no fences are present.
fn unfenced_code(reply: &str) -> Vec<String> {
    let lines: Vec<&str> = reply.lines().collect();
    let mut chunks = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if !starts_code_line(lines[i]) {
            i += 1;
            continue;
        }
        let mut chunk = String::new();
        while i < lines.len() {
            chunk.push_str(lines[i]);
            chunk.push('\n');
            i += 1;
            let scan = Scan::run(&chunk);
            if !scan.top_level_ends().is_empty() && chunk.trim_end().ends_with(';') {
                break;
            }
        }
        chunks.push(chunk);
    }
    chunks
}

/// Extracts assertion blocks from an agent reply.
///
/// Code fences tagged as SystemVerilog win; otherwise the first fence is
/// used; otherwise code-looking lines are scraped from the prose. Each chunk
/// is split into one block per top-level assertion statement.
pub fn extract_sva_blocks(reply: &str) -> Vec<SvaBlock> {
    let fenced = fences(reply);
    let chunks: Vec<String> = if fenced.iter().any(|f| SV_TAGS.contains(&f.tag.as_str())) {
        fenced
            .iter()
            .filter(|f| SV_TAGS.contains(&f.tag.as_str()))
            .map(|f| f.body.to_string())
            .collect()
    } else if let Some(first) = fenced.first() {
        vec![first.body.to_string()]
    } else {
        unfenced_code(reply)
    };
    chunks.iter().flat_map(|c| split_blocks(c)).collect()
}

/// Renders blocks as one `systemverilog` fence each.
pub fn render_blocks(blocks: &[SvaBlock]) -> String {
    blocks
        .iter()
        .map(|b| format!("```systemverilog\n{}\n```", b.code))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Port and parameter names found in module headers.
pub fn extract_port_list(rtl: &str) -> Vec<String> {
    let toks = lex(rtl).tokens;
    let mut names: Vec<String> = Vec::new();
    let push = |n: &str, names: &mut Vec<String>| {
        if !names.iter().any(|x| x == n) {
            names.push(n.to_string());
        }
    };
    let mut i = 0;
    while i < toks.len() {
        if !(toks[i].is("module") || toks[i].is("interface")) {
            i += 1;
            continue;
        }
        i += 2; // keyword and module name
        if toks.get(i).is_some_and(|t| t.is("#")) && toks.get(i + 1).is_some_and(|t| t.is("(")) {
            let (group_end, group) = paren_group(&toks, i + 1);
            for (k, t) in group.iter().enumerate() {
                if t.is_ident() && !is_keyword(t.text) && group.get(k + 1).is_some_and(|n| n.is("=")) {
                    push(t.text, &mut names);
                }
            }
            i = group_end;
        }
        if toks.get(i).is_some_and(|t| t.is("(")) {
            let (group_end, group) = paren_group(&toks, i);
            let mut depth = 0;
            for (k, t) in group.iter().enumerate() {
                match t.text {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" => depth -= 1,
                    _ => {}
                }
                if depth == 0
                    && t.is_ident()
                    && !is_keyword(t.text)
                    && group
                        .get(k + 1)
                        .is_none_or(|n| n.is(",") || n.is("[") || n.is("="))
                {
                    push(t.text, &mut names);
                }
            }
            i = group_end;
        }
    }
    names
}

/// Tokens strictly inside the parenthesised group opening at `open`, and the
/// index just past its closing paren.
fn paren_group<'t, 'a>(toks: &'t [Token<'a>], open: usize) -> (usize, &'t [Token<'a>]) {
    let mut depth = 0;
    for (k, t) in toks.iter().enumerate().skip(open) {
        match t.text {
            "(" => depth += 1,
            ")" => {
                depth -= 1;
                if depth == 0 {
                    return (k + 1, &toks[open + 1..k]);
                }
            }
            _ => {}
        }
    }
    (toks.len(), &toks[(open + 1).min(toks.len())..])
}
