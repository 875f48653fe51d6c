//! A small SystemVerilog tokenizer: enough to balance brackets, find
//! statements and collect identifiers. Comments and whitespace are dropped.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Ident,
    /// `$rose`, `$past`, ...
    SystemIdent,
    /// `` `define `` style compiler directives.
    Directive,
    Number,
    Str,
    Punct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token<'a> {
    pub kind: TokenKind,
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
    pub line: usize,
}

impl Token<'_> {
    pub fn is(&self, text: &str) -> bool {
        self.text == text
    }

    pub fn is_ident(&self) -> bool {
        self.kind == TokenKind::Ident
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexError {
    pub line: usize,
    pub message: String,
}

pub struct Lexed<'a> {
    pub tokens: Vec<Token<'a>>,
    pub errors: Vec<LexError>,
}

fn is_ident_start(c: u8) -> bool {
    c.is_ascii_alphabetic() || c == b'_'
}

fn is_ident_char(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_' || c == b'$'
}

const MULTI_PUNCT: &[&str] = &[
    "|->", "|=>", "<->", "===", "!==", "==?", "!=?", "<<<", ">>>", "##", "->", "==", "!=", "<=",
    ">=", "&&", "||", "<<", ">>", "**", "::", "[*", "[=", "[->", "+:", "-:",
];

pub fn lex(src: &str) -> Lexed<'_> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut errors = Vec::new();
    let mut i = 0;
    let mut line = 1;

    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\n' {
            line += 1;
            i += 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'*') {
            let open_line = line;
            i += 2;
            loop {
                if i + 1 >= bytes.len() {
                    errors.push(LexError {
                        line: open_line,
                        message: "unterminated block comment".into(),
                    });
                    i = bytes.len();
                    break;
                }
                if bytes[i] == b'\n' {
                    line += 1;
                }
                if bytes[i] == b'*' && bytes[i + 1] == b'/' {
                    i += 2;
                    break;
                }
                i += 1;
            }
            continue;
        }

        let start = i;
        let tok_line = line;
        let kind;
        if c == b'"' {
            i += 1;
            let mut closed = false;
            while i < bytes.len() {
                match bytes[i] {
                    b'\\' => i += 2,
                    b'"' => {
                        i += 1;
                        closed = true;
                        break;
                    }
                    b'\n' => break,
                    _ => i += 1,
                }
            }
            if !closed {
                errors.push(LexError {
                    line: tok_line,
                    message: "unterminated string literal".into(),
                });
            }
            i = i.min(bytes.len());
            kind = TokenKind::Str;
        } else if is_ident_start(c) {
            while i < bytes.len() && is_ident_char(bytes[i]) {
                i += 1;
            }
            kind = TokenKind::Ident;
        } else if c == b'\\' {
            // escaped identifier runs to whitespace
            i += 1;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            kind = TokenKind::Ident;
        } else if c == b'$' && bytes.get(i + 1).is_some_and(|b| is_ident_start(*b)) {
            i += 1;
            while i < bytes.len() && is_ident_char(bytes[i]) {
                i += 1;
            }
            kind = TokenKind::SystemIdent;
        } else if c == b'`' {
            i += 1;
            while i < bytes.len() && is_ident_char(bytes[i]) {
                i += 1;
            }
            kind = TokenKind::Directive;
        } else if c.is_ascii_digit() || (c == b'\'' && based_literal_follows(bytes, i + 1)) {
            i = lex_number(bytes, i);
            kind = TokenKind::Number;
        } else {
            let rest = &src[i..];
            let len = MULTI_PUNCT
                .iter()
                .filter(|p| rest.starts_with(**p))
                .map(|p| p.len())
                .max()
                .unwrap_or_else(|| rest.chars().next().map_or(1, char::len_utf8));
            i += len;
            kind = TokenKind::Punct;
        }
        tokens.push(Token {
            kind,
            text: &src[start..i],
            start,
            end: i,
            line: tok_line,
        });
    }

    Lexed { tokens, errors }
}

fn based_literal_follows(bytes: &[u8], i: usize) -> bool {
    match bytes.get(i) {
        Some(b's' | b'S') => matches!(
            bytes.get(i + 1),
            Some(b'b' | b'B' | b'o' | b'O' | b'd' | b'D' | b'h' | b'H')
        ),
        Some(b'b' | b'B' | b'o' | b'O' | b'd' | b'D' | b'h' | b'H') => true,
        Some(b'0' | b'1' | b'x' | b'X' | b'z' | b'Z') => true,
        _ => false,
    }
}

fn lex_number(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'_') {
        i += 1;
    }
    // fraction / exponent
    if i < bytes.len() && bytes[i] == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit) {
        i += 1;
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'_') {
            i += 1;
        }
    }
    // time unit suffix such as 10ns
    for unit in ["ns", "ps", "us", "ms", "fs", "s"] {
        if bytes[i..].starts_with(unit.as_bytes())
            && !bytes.get(i + unit.len()).is_some_and(|b| is_ident_char(*b))
        {
            return i + unit.len();
        }
    }
    if i < bytes.len() && bytes[i] == b'\'' && based_literal_follows(bytes, i + 1) {
        i += 1;
        if matches!(bytes[i], b's' | b'S') {
            i += 1;
        }
        if matches!(
            bytes[i],
            b'b' | b'B' | b'o' | b'O' | b'd' | b'D' | b'h' | b'H'
        ) {
            i += 1;
            while i < bytes.len() && bytes[i] == b' ' {
                i += 1;
            }
        }
        while i < bytes.len() && (bytes[i].is_ascii_hexdigit() || b"xXzZ?_".contains(&bytes[i])) {
            i += 1;
        }
    }
    i
}

/// IEEE 1800-2017 reserved words.
pub const KEYWORDS: &[&str] = &[
    "accept_on", "alias", "always", "always_comb", "always_ff", "always_latch", "and", "assert",
    "assign", "assume", "automatic", "before", "begin", "bind", "bins", "binsof", "bit",
    "break", "buf", "bufif0", "bufif1", "byte", "case", "casex", "casez", "cell", "chandle",
    "checker", "class", "clocking", "cmos", "config", "const", "constraint", "context",
    "continue", "cover", "covergroup", "coverpoint", "cross", "deassign", "default", "defparam",
    "design", "disable", "dist", "do", "edge", "else", "end", "endcase", "endchecker",
    "endclass", "endclocking", "endconfig", "endfunction", "endgenerate", "endgroup",
    "endinterface", "endmodule", "endpackage", "endprimitive", "endprogram", "endproperty",
    "endsequence", "endspecify", "endtable", "endtask", "enum", "event", "eventually", "expect",
    "export", "extends", "extern", "final", "first_match", "for", "force", "foreach", "forever",
    "fork", "forkjoin", "function", "generate", "genvar", "global", "highz0", "highz1", "if",
    "iff", "ifnone", "ignore_bins", "illegal_bins", "implements", "implies", "import", "incdir",
    "include", "initial", "inout", "input", "inside", "instance", "int", "integer",
    "interconnect", "interface", "intersect", "join", "join_any", "join_none", "large", "let",
    "liblist", "library", "local", "localparam", "logic", "longint", "macromodule", "matches",
    "medium", "modport", "module", "nand", "negedge", "nettype", "new", "nexttime", "nmos",
    "nor", "noshowcancelled", "not", "notif0", "notif1", "null", "or", "output", "package",
    "packed", "parameter", "pmos", "posedge", "primitive", "priority", "program", "property",
    "protected", "pull0", "pull1", "pulldown", "pullup", "pulsestyle_ondetect",
    "pulsestyle_onevent", "pure", "rand", "randc", "randcase", "randsequence", "rcmos", "real",
    "realtime", "ref", "reg", "reject_on", "release", "repeat", "restrict", "return", "rnmos",
    "rpmos", "rtran", "rtranif0", "rtranif1", "s_always", "s_eventually", "s_nexttime",
    "s_until", "s_until_with", "scalared", "sequence", "shortint", "shortreal", "showcancelled",
    "signed", "small", "soft", "solve", "specify", "specparam", "static", "string", "strong",
    "strong0", "strong1", "struct", "super", "supply0", "supply1", "sync_accept_on",
    "sync_reject_on", "table", "tagged", "task", "this", "throughout", "time", "timeprecision",
    "timeunit", "tran", "tranif0", "tranif1", "tri", "tri0", "tri1", "triand", "trior",
    "trireg", "type", "typedef", "union", "unique", "unique0", "unsigned", "until",
    "until_with", "untyped", "use", "uwire", "var", "vectored", "virtual", "void", "wait",
    "wait_order", "wand", "weak", "weak0", "weak1", "while", "wildcard", "wire", "with",
    "within", "wor", "xnor", "xor",
];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.binary_search(&word).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(src: &str) -> Vec<&str> {
        lex(src).tokens.iter().map(|t| t.text).collect()
    }

    #[test]
    fn keywords_are_sorted() {
        assert!(KEYWORDS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn operators_and_literals() {
        assert_eq!(
            texts("req |-> ##[1:3] gnt == 4'b10_10;"),
            ["req", "|->", "##", "[", "1", ":", "3", "]", "gnt", "==", "4'b10_10", ";"]
        );
        assert_eq!(texts("x == '0 && $past(y)"), ["x", "==", "'0", "&&", "$past", "(", "y", ")"]);
        assert_eq!(texts("8'h FF"), ["8'h FF"]);
    }

    #[test]
    fn comments_skipped_lines_tracked() {
        let l = lex("a // c\n/* b\n */ d \"s\"");
        let t: Vec<(&str, usize)> = l.tokens.iter().map(|t| (t.text, t.line)).collect();
        assert_eq!(t, [("a", 1), ("d", 3), ("\"s\"", 3)]);
        assert!(l.errors.is_empty());
    }

    #[test]
    fn unterminated_comment_reported() {
        let l = lex("a /* never closed");
        assert_eq!(l.errors.len(), 1);
    }
}
