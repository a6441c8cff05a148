//! `key = value` configuration files. Blank lines and `#` comments are
//! ignored; keys use the command-line flag names without dashes.

use std::path::{Path, PathBuf};

use mrsm_core::engine::EngineConfig;

use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub run: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub s: Option<usize>,
    pub sigma: Option<f64>,
    pub u_ratio: Option<f64>,
    pub omega: Option<usize>,
    pub r: Option<usize>,
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub t: Option<usize>,
    pub keywords: Option<Vec<String>>,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("bad value for {key}: {value:?}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "corpus" => c.corpus = Some(value.into()),
                "run" => c.run = Some(value.into()),
                "out" => c.out = Some(value.into()),
                "s" => c.s = Some(parse(key, value)?),
                "sigma" => c.sigma = Some(parse(key, value)?),
                "U-ratio" | "u_ratio" => c.u_ratio = Some(parse(key, value)?),
                "omega" => c.omega = Some(parse(key, value)?),
                "R" => c.r = Some(parse(key, value)?),
                "seed" => c.seed = Some(parse(key, value)?),
                "k" => c.k = Some(parse(key, value)?),
                "t" => c.t = Some(parse(key, value)?),
                "keywords" => c.keywords = Some(split_keywords(value)),
                _ => return Err(Error::Config(format!("line {}: unknown key {key:?}", n + 1))),
            }
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Fields set in `self` win over `base`.
    pub fn or(self, base: Self) -> Self {
        Self {
            corpus: self.corpus.or(base.corpus),
            run: self.run.or(base.run),
            out: self.out.or(base.out),
            s: self.s.or(base.s),
            sigma: self.sigma.or(base.sigma),
            u_ratio: self.u_ratio.or(base.u_ratio),
            omega: self.omega.or(base.omega),
            r: self.r.or(base.r),
            seed: self.seed.or(base.seed),
            k: self.k.or(base.k),
            t: self.t.or(base.t),
            keywords: self.keywords.or(base.keywords),
        }
    }

    pub fn engine(&self) -> Result<EngineConfig> {
        let mut c = EngineConfig::default();
        c.s = self.s.or(c.s);
        if let Some(sigma) = self.sigma {
            c = c.with_sigma(sigma);
        }
        c.u_ratio = self.u_ratio.unwrap_or(c.u_ratio);
        c.omega = self.omega.or(c.omega);
        c.probes = self.r.unwrap_or(c.probes);
        c.seed = self.seed.unwrap_or(c.seed);
        if !(c.u_ratio >= 0.0) {
            return Err(Error::Config("U-ratio must be >= 0".into()));
        }
        Ok(c)
    }
}

/// Comma-separated keyword list.
pub fn split_keywords(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|w| !w.is_empty()).map(String::from).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_merges() {
        let file = RunConfig::parse("# demo\ns = 4\nsigma=0.05\nU-ratio = 0.2\nkeywords = a, b\n").unwrap();
        assert_eq!(file.s, Some(4));
        assert_eq!(file.keywords, Some(vec!["a".to_string(), "b".to_string()]));
        let flags = RunConfig { s: Some(2), ..Default::default() };
        let merged = flags.or(file);
        assert_eq!(merged.s, Some(2));
        assert_eq!(merged.sigma, Some(0.05));
        let e = merged.engine().unwrap();
        assert_eq!(e.u_ratio, 0.2);
    }

    #[test]
    fn rejects_junk() {
        assert!(RunConfig::parse("s 4").is_err());
        assert!(RunConfig::parse("colour = red").is_err());
        assert!(RunConfig::parse("k = many").is_err());
    }
}
