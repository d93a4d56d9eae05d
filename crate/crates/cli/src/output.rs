//! CSV tables with a metadata preamble.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::CliError;

/// Shortest representation that parses back to the same `f64`.
pub fn float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:?}")
    }
}

pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(model_hash: &str) -> Self {
        let mut text = String::new();
        writeln!(text, "#version {}", env!("CARGO_PKG_VERSION")).expect("string write");
        writeln!(text, "#model-hash sha256:{model_hash}").expect("string write");
        Self { text }
    }

    /// `#key value` metadata line.
    pub fn meta(&mut self, key: &str, value: impl std::fmt::Display) {
        writeln!(self.text, "#{key} {value}").expect("string write");
    }

    pub fn header(&mut self, cols: &[String]) {
        self.text.push_str(&cols.join(","));
        self.text.push('\n');
    }

    pub fn row(&mut self, values: &[f64]) {
        let cells: Vec<String> = values.iter().map(|v| float(*v)).collect();
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    /// Two blank lines start a new data block (gnuplot `index`).
    pub fn block(&mut self, title: &str) {
        self.text.push_str("\n\n");
        writeln!(self.text, "#block {title}").expect("string write");
    }

    #[cfg(test)]
    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn emit(&self, out: Option<&Path>) -> Result<(), CliError> {
        match out {
            Some(p) => std::fs::write(p, &self.text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
            None => write_stdout(&self.text),
        }
    }
}

/// Writes to stdout; a reader that closed the pipe early is not an error.
pub fn write_stdout(text: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Io(e.to_string())),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1 + 0.2, 1e-300, -2.5, 1.0, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(float(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(float(1.0), "1.0");
        assert_eq!(float(f64::INFINITY), "inf");
    }

    #[test]
    fn preamble_then_rows() {
        let mut c = Csv::new("ab");
        c.header(&["t".into(), "x".into()]);
        c.row(&[0.5, -1.0]);
        assert!(c.as_str().ends_with("#model-hash sha256:ab\nt,x\n0.5,-1.0\n"));
    }
}
