//! Run manifest: config hash, emitted artifacts, warnings, and stage
//! timings. Timing lines are wall-clock and therefore the only
//! non-deterministic content in a run directory.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub config_hash: String,
    pub version: String,
    pub artifacts: BTreeSet<String>,
    pub warnings: Vec<String>,
    pub timings: Vec<(String, f64)>,
}

impl Manifest {
    pub fn new(config_hash: &str) -> Self {
        Self {
            config_hash: config_hash.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            ..Default::default()
        }
    }

    /// Loads the manifest in `dir`, or starts fresh when absent or written
    /// for a different config.
    pub fn load_or_new(dir: &Path, config_hash: &str) -> io::Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::new(config_hash));
        }
        let text = fs::read_to_string(&path)?;
        let parsed = Self::parse(&text);
        if parsed.config_hash != config_hash {
            return Ok(Self::new(config_hash));
        }
        Ok(parsed)
    }

    pub fn parse(text: &str) -> Self {
        let mut m = Self::default();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("config_hash ") {
                m.config_hash = rest.trim().to_string();
            } else if let Some(rest) = line.strip_prefix("version ") {
                m.version = rest.trim().to_string();
            } else if let Some(rest) = line.strip_prefix("artifact ") {
                m.artifacts.insert(rest.trim().to_string());
            } else if let Some(rest) = line.strip_prefix("warning ") {
                m.warnings.push(rest.trim().to_string());
            } else if let Some(rest) = line.strip_prefix("timing ") {
                if let Some((stage, secs)) = rest.trim().rsplit_once(' ') {
                    if let Ok(secs) = secs.parse() {
                        m.timings.push((stage.to_string(), secs));
                    }
                }
            }
        }
        m
    }

    pub fn add_artifact(&mut self, rel_path: &str) {
        self.artifacts.insert(rel_path.to_string());
    }

    pub fn add_warning(&mut self, text: String) {
        if !self.warnings.contains(&text) {
            self.warnings.push(text);
        }
    }

    pub fn add_timing(&mut self, stage: &str, secs: f64) {
        self.timings.push((stage.to_string(), secs));
    }

    pub fn render(&self) -> String {
        let mut out = String::from("# quditqec run manifest v1\n");
        out.push_str(&format!("config_hash {}\n", self.config_hash));
        out.push_str(&format!("version {}\n", self.version));
        for a in &self.artifacts {
            out.push_str(&format!("artifact {a}\n"));
        }
        for w in &self.warnings {
            out.push_str(&format!("warning {w}\n"));
        }
        for (stage, secs) in &self.timings {
            out.push_str(&format!("timing {stage} {secs:.3}\n"));
        }
        out
    }

    pub fn save(&self, dir: &Path) -> io::Result<()> {
        fs::write(dir.join(MANIFEST_FILE), self.render())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let mut m = Manifest::new("abc");
        m.add_artifact("decay/s3_echo.csv");
        m.add_artifact("bath/config_000.txt");
        m.add_warning("guarded divisions: 2".into());
        m.add_timing("decay", 1.25);
        let back = Manifest::parse(&m.render());
        assert_eq!(back.config_hash, "abc");
        assert_eq!(back.artifacts, m.artifacts);
        assert_eq!(back.warnings, m.warnings);
        assert_eq!(back.timings.len(), 1);
        // Artifacts render sorted.
        let text = m.render();
        let bath_pos = text.find("bath/").unwrap();
        let decay_pos = text.find("decay/").unwrap();
        assert!(bath_pos < decay_pos);
    }

    #[test]
    fn hash_mismatch_starts_fresh() {
        let dir = std::env::temp_dir().join(format!("qdq-manifest-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut m = Manifest::new("one");
        m.add_artifact("x.txt");
        m.save(&dir).unwrap();
        let same = Manifest::load_or_new(&dir, "one").unwrap();
        assert_eq!(same.artifacts.len(), 1);
        let fresh = Manifest::load_or_new(&dir, "two").unwrap();
        assert!(fresh.artifacts.is_empty());
        std::fs::remove_dir_all(&dir).ok();
    }
}
