//! Stage dump files: a `#` header carrying the producer kind, the content
//! hashes of the inputs, free-form metadata and the hash of the body.

use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub fn content_hash(body: &str) -> String {
    hex::encode(Sha256::digest(body.as_bytes()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub kind: String,
    pub inputs: Vec<(String, String)>,
    pub meta: Vec<(String, String)>,
    pub body: String,
    pub hash: String,
}

impl Artifact {
    pub fn new(kind: &str, body: String) -> Self {
        Artifact {
            kind: kind.to_string(),
            inputs: Vec::new(),
            meta: Vec::new(),
            hash: content_hash(&body),
            body,
        }
    }

    pub fn with_input(mut self, name: &str, hash: &str) -> Self {
        self.inputs.push((name.to_string(), hash.to_string()));
        self
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        let value = value.to_string();
        assert!(!key.contains(char::is_whitespace) && !value.contains('\n'));
        self.meta.push((key.to_string(), value));
        self
    }

    pub fn render(&self) -> String {
        let mut out = format!("# bctomo {}\n", self.kind);
        for (name, hash) in &self.inputs {
            let _ = writeln!(out, "# input {name} {hash}");
        }
        for (key, value) in &self.meta {
            let _ = writeln!(out, "# meta {key} {value}");
        }
        let _ = writeln!(out, "# content {}", self.hash);
        out.push_str(&self.body);
        out
    }

    /// Parses and checks the body against its recorded hash.
    pub fn parse(text: &str, file: &str) -> CliResult<Self> {
        let mut kind = None;
        let mut inputs = Vec::new();
        let mut meta = Vec::new();
        let mut hash = None;
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let Some(rest) = line.strip_prefix("# ") else { break };
            offset += line.len();
            let rest = rest.trim_end();
            let (key, value) = rest.split_once(' ').unwrap_or((rest, ""));
            match key {
                "bctomo" => kind = Some(value.to_string()),
                "input" | "meta" => {
                    let (a, b) = value
                        .split_once(' ')
                        .ok_or_else(|| CliError::artifact(file, format!("malformed header line '{rest}'")))?;
                    let target = if key == "input" { &mut inputs } else { &mut meta };
                    target.push((a.to_string(), b.to_string()));
                }
                "content" => {
                    hash = Some(value.to_string());
                    break;
                }
                _ => return Err(CliError::artifact(file, format!("unknown header line '{rest}'"))),
            }
        }
        let kind = kind.ok_or_else(|| CliError::artifact(file, "not a bctomo dump"))?;
        let hash = hash.ok_or_else(|| CliError::artifact(file, "header has no content hash"))?;
        let body = text[offset..].to_string();
        let actual = content_hash(&body);
        if actual != hash {
            return Err(CliError::artifact(
                file,
                format!("content hash mismatch (header {hash}, body {actual}); the file was modified"),
            ));
        }
        Ok(Artifact { kind, inputs, meta, body, hash })
    }

    pub fn expect_kind(&self, kind: &str, file: &str) -> CliResult<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(CliError::artifact(file, format!("expected a '{kind}' dump, found '{}'", self.kind)))
        }
    }

    pub fn input(&self, name: &str) -> Option<&str> {
        self.inputs.iter().find(|(n, _)| n == name).map(|(_, h)| h.as_str())
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn meta_value<T: FromStr>(&self, key: &str, file: &str) -> CliResult<T> {
        let raw = self
            .meta(key)
            .ok_or_else(|| CliError::artifact(file, format!("header lacks '{key}'")))?;
        raw.parse()
            .map_err(|_| CliError::artifact(file, format!("bad value '{raw}' for '{key}'")))
    }
}
