//! A human at the terminal answering escalations.

use std::io::{BufRead, Write};
use std::sync::Mutex;

use saarthi_core::conversation::HilDecision;
use saarthi_core::pipeline::{HumanInput, InterventionRequest};

/// Shows the escalation context on `out` and reads the decision from
/// `input`: `t`, `s` or `i`, the latter followed by replacement SVA lines
/// ended by a line holding a single `.`.
pub struct PromptHuman<R, W> {
    io: Mutex<(R, W)>,
}

impl<R, W> PromptHuman<R, W> {
    pub fn new(input: R, out: W) -> Self {
        PromptHuman {
            io: Mutex::new((input, out)),
        }
    }
}

fn read_line(input: &mut impl BufRead) -> Result<Option<String>, String> {
    let mut line = String::new();
    match input.read_line(&mut line) {
        Ok(0) => Ok(None),
        Ok(_) => Ok(Some(line.trim_end_matches(['\n', '\r']).to_string())),
        Err(e) => Err(format!("reading the human's answer: {e}")),
    }
}

fn show(out: &mut impl Write, request: &InterventionRequest) -> std::io::Result<()> {
    writeln!(
        out,
        "\n=== Human input needed: run {}, plan item {}{} ===",
        request.run_id,
        request.plan_item_id,
        request
            .property_id
            .as_deref()
            .map(|p| format!(", property {p}"))
            .unwrap_or_default()
    )?;
    for m in &request.prompt_context {
        writeln!(out, "[{}] {} -> {}:\n{}\n", m.seq, m.sender, m.recipient, m.content.trim_end())?;
    }
    if let Some(draft) = &request.latest_draft {
        writeln!(out, "Latest draft:\n{draft}\n")?;
    }
    Ok(())
}

impl<R: BufRead + Send, W: Write + Send> HumanInput for PromptHuman<R, W> {
    fn decide(&self, request: &InterventionRequest) -> Result<HilDecision, String> {
        let mut guard = self.io.lock().unwrap_or_else(|p| p.into_inner());
        let (input, out) = &mut *guard;
        let io_err = |e: std::io::Error| e.to_string();
        show(out, request).map_err(io_err)?;
        loop {
            write!(out, "Choose [t]erminate, [s]kip or [i]ntercept: ").map_err(io_err)?;
            out.flush().map_err(io_err)?;
            let Some(answer) = read_line(input)? else {
                return Err("input closed before a decision was made".into());
            };
            match answer.trim().to_ascii_lowercase().as_str() {
                "t" | "terminate" => return Ok(HilDecision::terminate()),
                "s" | "skip" => return Ok(HilDecision::skip()),
                "i" | "intercept" => {
                    writeln!(out, "Enter the replacement SVA; end with a line holding only '.':")
                        .map_err(io_err)?;
                    let mut lines = Vec::new();
                    while let Some(line) = read_line(input)? {
                        if line.trim() == "." {
                            break;
                        }
                        lines.push(line);
                    }
                    let decision = HilDecision::intercept(lines.join("\n"));
                    match decision.validate() {
                        Ok(()) => return Ok(decision),
                        Err(e) => writeln!(out, "{e}").map_err(io_err)?,
                    }
                }
                other => writeln!(out, "unrecognized choice {other:?}").map_err(io_err)?,
            }
        }
    }
}
