//! Model file format:
//!
//! ```text
//! coalfed-model 1
//! arch {"kind":{"type":"linear"},"input_dim":1,"output":"regression"}
//! fingerprint <32 hex chars>
//! weights <count>
//! <one decimal value per line>
//! ```
//!
//! Values use the shortest decimal that parses back to the same `f64`, so
//! identical models always serialize to identical bytes.

use std::path::Path;

use super::{Model, ModelArch};
use crate::error::{Error, Result};

const MAGIC: &str = "coalfed-model 1";

impl Model {
    pub fn to_text(&self) -> String {
        let arch = serde_json::to_string(&self.arch).expect("arch serializes");
        let mut out = format!(
            "{MAGIC}\narch {arch}\nfingerprint {}\nweights {}\n",
            self.arch.fingerprint(),
            self.weights.len()
        );
        for w in &self.weights {
            out.push_str(&w.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Model> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::parse(text.len(), format!("missing {what}")))
        };
        let (_, magic) = next("header")?;
        if magic.trim() != MAGIC {
            return Err(Error::parse(0, "not a coalfed model file"));
        }
        let (i, arch_line) = next("arch line")?;
        let arch_json = arch_line
            .strip_prefix("arch ")
            .ok_or_else(|| Error::parse(i, "expected `arch <json>`"))?;
        let arch: ModelArch = serde_json::from_str(arch_json)?;
        let (i, fp_line) = next("fingerprint line")?;
        let fingerprint = fp_line
            .strip_prefix("fingerprint ")
            .ok_or_else(|| Error::parse(i, "expected `fingerprint <hex>`"))?;
        if fingerprint != arch.fingerprint() {
            return Err(Error::ArchMismatch {
                expected: arch.fingerprint(),
                actual: fingerprint.to_string(),
            });
        }
        let (i, count_line) = next("weights line")?;
        let count: usize = count_line
            .strip_prefix("weights ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::parse(i, "expected `weights <count>`"))?;
        let mut weights = Vec::with_capacity(count);
        for _ in 0..count {
            let (i, line) = next("weight value")?;
            weights.push(
                line.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(i, format!("bad weight `{line}`")))?,
            );
        }
        Model::new(arch, weights)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        Model::from_text(&std::fs::read_to_string(path)?)
    }
}
