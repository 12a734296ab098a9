//! Deterministic CSV text and checksums.

use sha2::{Digest, Sha256};

/// Round-trippable scientific notation used for every float we write.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes).as_slice())
}

/// LF-terminated CSV accumulated in memory.
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = header.join(",");
        buf.push('\n');
        Self { buf }
    }

    pub fn line(&mut self, line: &str) {
        self.buf.push_str(line);
        self.buf.push('\n');
    }

    pub fn reals(&mut self, values: &[f64]) {
        let row: Vec<String> = values.iter().map(|&v| fmt_f64(v)).collect();
        self.line(&row.join(","));
    }

    /// One `t,j,value` row.
    pub fn field_row(&mut self, t: f64, j: usize, value: f64) {
        use std::fmt::Write;
        let _ = writeln!(self.buf, "{t:.16e},{j},{value:.16e}");
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.buf.as_bytes()
    }
}
