//! Flat `key = value` configuration with bracketed sections. Every key
//! has a default, a file may override any subset, and command-line flags
//! override the file. Unknown sections or keys are hard errors carrying
//! the offending line number, as are duplicate keys and unparsable
//! values. The resolved configuration has a canonical text rendering
//! whose SHA-256 digest is stamped into every CSV artifact.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cellwave::Medium;
use sha2::{Digest, Sha256};

#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        ConfigError { line: Some(line), message: message.into() }
    }

    pub fn general(message: impl Into<String>) -> Self {
        ConfigError { line: None, message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(n) => write!(f, "config error at line {n}: {}", self.message),
            None => write!(f, "config error: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Resolved configuration: defaults, overlaid by an optional file,
/// overlaid by flags.
#[derive(Debug, Clone)]
pub struct Config {
    // [medium]
    pub a_minus: f64,
    pub a_plus: f64,
    pub interface: f64,
    // [grid]
    pub n_cell: usize,
    pub n_norm: usize,
    pub n_dense: usize,
    pub mode_count: usize,
    pub band_count: usize,
    // [sweep]
    pub eps: Vec<f64>,
    pub alphas_first: Vec<f64>,
    pub alphas_second: Vec<f64>,
    pub chi_uniform: usize,
    pub chi_geometric: usize,
    pub refine_rounds: usize,
    pub refine_fan: usize,
    pub z_re: f64,
    pub z_im: f64,
    pub chi_min: f64,
    pub chi_max: f64,
    pub chi_count: usize,
    pub calibration_eps: Vec<f64>,
    pub validation_eps: Vec<f64>,
    pub calibration_multipliers: Vec<f64>,
    pub validation_multipliers: Vec<f64>,
    pub beta_cal: usize,
    pub beta_val: usize,
    pub timescale_alphas: Vec<f64>,
    pub timescale_eps: Vec<f64>,
    pub multiplier: f64,
    pub envelope_alpha: f64,
    pub three_way_chi: usize,
    pub evolve_eps: f64,
    pub evolve_alpha: f64,
    pub evolve_betas: usize,
    pub evolve_multipliers: Vec<f64>,
    // [tolerances]
    pub gap_tol: f64,
    pub saturation: f64,
    pub target_fraction: f64,
    // [output]
    pub dir: PathBuf,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            a_minus: 1.0,
            a_plus: 4.0,
            interface: 0.5,
            n_cell: 512,
            n_norm: 256,
            n_dense: 2048,
            mode_count: 64,
            band_count: 8,
            eps: vec![0.125, 0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625],
            alphas_first: vec![1.0, 1.5, 1.9],
            alphas_second: vec![1.0, 2.0, 3.0],
            chi_uniform: 129,
            chi_geometric: 128,
            refine_rounds: 2,
            refine_fan: 9,
            z_re: -1.0,
            z_im: 0.0,
            chi_min: 0.05,
            chi_max: 3.09,
            chi_count: 33,
            calibration_eps: vec![0.125, 0.03125, 0.0078125],
            validation_eps: vec![0.0625, 0.015625],
            calibration_multipliers: vec![0.15, 0.4, 0.65, 0.98, 1.02, 1.3, 1.8, 2.6],
            validation_multipliers: vec![0.3, 0.55, 0.8, 0.95, 1.1, 1.5, 2.2, 3.0],
            beta_cal: 17,
            beta_val: 16,
            timescale_alphas: vec![1.25, 1.5, 1.75],
            timescale_eps: vec![0.0625, 0.03125, 0.015625],
            multiplier: 0.3,
            envelope_alpha: 1.5,
            three_way_chi: 9,
            evolve_eps: 0.125,
            evolve_alpha: 1.5,
            evolve_betas: 9,
            evolve_multipliers: vec![0.5, 1.0, 2.0],
            gap_tol: 0.15,
            saturation: 1.0,
            target_fraction: 0.4,
            dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl Config {
    /// Defaults overlaid with the file at `path`, when given.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| {
                ConfigError::general(format!("cannot read {}: {e}", path.display()))
            })?;
            cfg.apply_file(&text)?;
        }
        Ok(cfg)
    }

    fn apply_file(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut section = String::new();
        let mut seen: Vec<String> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::at(line_no, "unterminated section header"))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(ConfigError::at(line_no, format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::at(line_no, "expected key = value"))?;
            let key = key.trim();
            let value = value.trim();
            if section.is_empty() {
                return Err(ConfigError::at(line_no, format!("key {key} appears before any [section]")));
            }
            let full = format!("{section}.{key}");
            if seen.contains(&full) {
                return Err(ConfigError::at(line_no, format!("duplicate key {full}")));
            }
            self.apply(&section, key, value, line_no)?;
            seen.push(full);
        }
        Ok(())
    }

    fn apply(&mut self, section: &str, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        match (section, key) {
            ("medium", "a_minus") => self.a_minus = float(value, line)?,
            ("medium", "a_plus") => self.a_plus = float(value, line)?,
            ("medium", "interface") => self.interface = float(value, line)?,
            ("grid", "n_cell") => self.n_cell = count(value, line)?,
            ("grid", "n_norm") => self.n_norm = count(value, line)?,
            ("grid", "n_dense") => self.n_dense = count(value, line)?,
            ("grid", "mode_count") => self.mode_count = count(value, line)?,
            ("grid", "band_count") => self.band_count = count(value, line)?,
            ("sweep", "eps") => self.eps = float_list(value, line)?,
            ("sweep", "alphas_first") => self.alphas_first = float_list(value, line)?,
            ("sweep", "alphas_second") => self.alphas_second = float_list(value, line)?,
            ("sweep", "chi_uniform") => self.chi_uniform = count(value, line)?,
            ("sweep", "chi_geometric") => self.chi_geometric = count(value, line)?,
            ("sweep", "refine_rounds") => self.refine_rounds = count(value, line)?,
            ("sweep", "refine_fan") => self.refine_fan = count(value, line)?,
            ("sweep", "z_re") => self.z_re = float(value, line)?,
            ("sweep", "z_im") => self.z_im = float(value, line)?,
            ("sweep", "chi_min") => self.chi_min = float(value, line)?,
            ("sweep", "chi_max") => self.chi_max = float(value, line)?,
            ("sweep", "chi_count") => self.chi_count = count(value, line)?,
            ("sweep", "calibration_eps") => self.calibration_eps = float_list(value, line)?,
            ("sweep", "validation_eps") => self.validation_eps = float_list(value, line)?,
            ("sweep", "calibration_multipliers") => {
                self.calibration_multipliers = float_list(value, line)?
            }
            ("sweep", "validation_multipliers") => {
                self.validation_multipliers = float_list(value, line)?
            }
            ("sweep", "beta_cal") => self.beta_cal = count(value, line)?,
            ("sweep", "beta_val") => self.beta_val = count(value, line)?,
            ("sweep", "timescale_alphas") => self.timescale_alphas = float_list(value, line)?,
            ("sweep", "timescale_eps") => self.timescale_eps = float_list(value, line)?,
            ("sweep", "multiplier") => self.multiplier = float(value, line)?,
            ("sweep", "envelope_alpha") => self.envelope_alpha = float(value, line)?,
            ("sweep", "three_way_chi") => self.three_way_chi = count(value, line)?,
            ("sweep", "evolve_eps") => self.evolve_eps = float(value, line)?,
            ("sweep", "evolve_alpha") => self.evolve_alpha = float(value, line)?,
            ("sweep", "evolve_betas") => self.evolve_betas = count(value, line)?,
            ("sweep", "evolve_multipliers") => self.evolve_multipliers = float_list(value, line)?,
            ("tolerances", "gap_tol") => self.gap_tol = float(value, line)?,
            ("tolerances", "saturation") => self.saturation = float(value, line)?,
            ("tolerances", "target_fraction") => self.target_fraction = float(value, line)?,
            ("output", "dir") => self.dir = PathBuf::from(value),
            ("output", "seed") => {
                self.seed = value
                    .parse::<u64>()
                    .map_err(|_| ConfigError::at(line, format!("invalid seed {value:?}")))?
            }
            _ => {
                return Err(ConfigError::at(line, format!("unknown key {key} in section [{section}]")));
            }
        }
        Ok(())
    }

    /// Range and shape checks; normalises ε grids to descending order.
    pub fn validate(&mut self) -> Result<(), ConfigError> {
        let positive = [
            ("medium.a_minus", self.a_minus),
            ("medium.a_plus", self.a_plus),
            ("sweep.multiplier", self.multiplier),
            ("sweep.envelope_alpha", self.envelope_alpha),
            ("sweep.evolve_eps", self.evolve_eps),
            ("sweep.evolve_alpha", self.evolve_alpha),
            ("tolerances.gap_tol", self.gap_tol),
            ("tolerances.saturation", self.saturation),
            ("tolerances.target_fraction", self.target_fraction),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(ConfigError::general(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.interface > 0.0 && self.interface < 1.0) {
            return Err(ConfigError::general(format!(
                "medium.interface must lie strictly inside (0, 1), got {}",
                self.interface
            )));
        }
        let lists: [(&str, &mut Vec<f64>); 7] = [
            ("sweep.eps", &mut self.eps),
            ("sweep.calibration_eps", &mut self.calibration_eps),
            ("sweep.validation_eps", &mut self.validation_eps),
            ("sweep.timescale_eps", &mut self.timescale_eps),
            ("sweep.alphas_first", &mut self.alphas_first),
            ("sweep.alphas_second", &mut self.alphas_second),
            ("sweep.timescale_alphas", &mut self.timescale_alphas),
        ];
        for (name, list) in lists {
            if list.is_empty() {
                return Err(ConfigError::general(format!("{name} must not be empty")));
            }
            if list.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(ConfigError::general(format!("{name} entries must be positive")));
            }
        }
        for (name, list) in [
            ("sweep.eps", &mut self.eps),
            ("sweep.calibration_eps", &mut self.calibration_eps),
            ("sweep.validation_eps", &mut self.validation_eps),
            ("sweep.timescale_eps", &mut self.timescale_eps),
        ] {
            list.sort_by(|a, b| b.total_cmp(a));
            list.dedup();
            if list.iter().any(|v| *v >= 1.0) {
                return Err(ConfigError::general(format!("{name} entries must be below 1")));
            }
        }
        if self.chi_count < 2 || self.chi_uniform < 2 || self.chi_geometric < 2 || self.three_way_chi < 2 {
            return Err(ConfigError::general("quasimomentum grids need at least 2 points"));
        }
        if !(self.chi_min > 0.0 && self.chi_max > self.chi_min) {
            return Err(ConfigError::general("sweep.chi_min/chi_max must satisfy 0 < min < max"));
        }
        if self.chi_max > std::f64::consts::PI {
            return Err(ConfigError::general("sweep.chi_max must not exceed pi"));
        }
        if self.timescale_alphas.iter().any(|a| *a >= 2.0) {
            return Err(ConfigError::general("sweep.timescale_alphas entries must lie below 2"));
        }
        if self.beta_cal < 2 || self.beta_val < 1 || self.evolve_betas < 2 {
            return Err(ConfigError::general("exponent grids need at least 2 calibration points"));
        }
        if self.mode_count < 2 || self.band_count < 1 {
            return Err(ConfigError::general("grid.mode_count needs >= 2 and grid.band_count >= 1"));
        }
        Ok(())
    }

    /// The configured cell medium.
    pub fn medium(&self) -> Result<Medium, ConfigError> {
        Medium::new(self.a_minus, self.a_plus, self.interface)
            .map_err(|e| ConfigError::general(e.to_string()))
    }

    /// Canonical rendering of every resolved key; hashing this text
    /// yields the digest stamped into CSV artifacts.
    pub fn canonical_text(&self) -> String {
        fn f(v: f64) -> String {
            format!("{v:.16e}")
        }
        fn fl(vs: &[f64]) -> String {
            vs.iter().map(|v| f(*v)).collect::<Vec<_>>().join(",")
        }
        let mut s = String::new();
        let _ = writeln!(s, "[medium]");
        let _ = writeln!(s, "a_minus = {}", f(self.a_minus));
        let _ = writeln!(s, "a_plus = {}", f(self.a_plus));
        let _ = writeln!(s, "interface = {}", f(self.interface));
        let _ = writeln!(s, "[grid]");
        let _ = writeln!(s, "n_cell = {}", self.n_cell);
        let _ = writeln!(s, "n_norm = {}", self.n_norm);
        let _ = writeln!(s, "n_dense = {}", self.n_dense);
        let _ = writeln!(s, "mode_count = {}", self.mode_count);
        let _ = writeln!(s, "band_count = {}", self.band_count);
        let _ = writeln!(s, "[sweep]");
        let _ = writeln!(s, "eps = {}", fl(&self.eps));
        let _ = writeln!(s, "alphas_first = {}", fl(&self.alphas_first));
        let _ = writeln!(s, "alphas_second = {}", fl(&self.alphas_second));
        let _ = writeln!(s, "chi_uniform = {}", self.chi_uniform);
        let _ = writeln!(s, "chi_geometric = {}", self.chi_geometric);
        let _ = writeln!(s, "refine_rounds = {}", self.refine_rounds);
        let _ = writeln!(s, "refine_fan = {}", self.refine_fan);
        let _ = writeln!(s, "z_re = {}", f(self.z_re));
        let _ = writeln!(s, "z_im = {}", f(self.z_im));
        let _ = writeln!(s, "chi_min = {}", f(self.chi_min));
        let _ = writeln!(s, "chi_max = {}", f(self.chi_max));
        let _ = writeln!(s, "chi_count = {}", self.chi_count);
        let _ = writeln!(s, "calibration_eps = {}", fl(&self.calibration_eps));
        let _ = writeln!(s, "validation_eps = {}", fl(&self.validation_eps));
        let _ = writeln!(s, "calibration_multipliers = {}", fl(&self.calibration_multipliers));
        let _ = writeln!(s, "validation_multipliers = {}", fl(&self.validation_multipliers));
        let _ = writeln!(s, "beta_cal = {}", self.beta_cal);
        let _ = writeln!(s, "beta_val = {}", self.beta_val);
        let _ = writeln!(s, "timescale_alphas = {}", fl(&self.timescale_alphas));
        let _ = writeln!(s, "timescale_eps = {}", fl(&self.timescale_eps));
        let _ = writeln!(s, "multiplier = {}", f(self.multiplier));
        let _ = writeln!(s, "evolve_eps = {}", f(self.evolve_eps));
        let _ = writeln!(s, "evolve_alpha = {}", f(self.evolve_alpha));
        let _ = writeln!(s, "evolve_betas = {}", self.evolve_betas);
        let _ = writeln!(s, "evolve_multipliers = {}", fl(&self.evolve_multipliers));
        let _ = writeln!(s, "[tolerances]");
        let _ = writeln!(s, "gap_tol = {}", f(self.gap_tol));
        let _ = writeln!(s, "saturation = {}", f(self.saturation));
        let _ = writeln!(s, "target_fraction = {}", f(self.target_fraction));
        let _ = writeln!(s, "[output]");
        let _ = writeln!(s, "dir = {}", self.dir.display());
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    pub fn sha256(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

const SECTIONS: [&str; 5] = ["medium", "grid", "sweep", "tolerances", "output"];

fn float(value: &str, line: usize) -> Result<f64, ConfigError> {
    value
        .parse::<f64>()
        .map_err(|_| ConfigError::at(line, format!("invalid number {value:?}")))
}

fn count(value: &str, line: usize) -> Result<usize, ConfigError> {
    value
        .parse::<usize>()
        .map_err(|_| ConfigError::at(line, format!("invalid count {value:?}")))
}

fn float_list(value: &str, line: usize) -> Result<Vec<f64>, ConfigError> {
    value.split(',').map(|part| float(part.trim(), line)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let mut cfg = Config::default();
        cfg.validate().unwrap();
        assert!(cfg.medium().is_ok());
    }

    #[test]
    fn file_overrides_and_hash_changes() {
        let mut base = Config::default();
        base.validate().unwrap();
        let mut cfg = Config::default();
        cfg.apply_file("[medium]\na_plus = 9.0\n\n[grid]\nn_cell = 128\n").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.a_plus, 9.0);
        assert_eq!(cfg.n_cell, 128);
        assert_ne!(cfg.sha256(), base.sha256());
    }

    #[test]
    fn unknown_key_reports_line_number() {
        let mut cfg = Config::default();
        let err = cfg.apply_file("[medium]\na_minus = 1.0\nbogus = 3\n").unwrap_err();
        assert_eq!(err.line, Some(3));
        assert!(err.message.contains("bogus"));
    }

    #[test]
    fn duplicate_and_orphan_keys_are_rejected() {
        let mut cfg = Config::default();
        let err = cfg.apply_file("[grid]\nn_cell = 64\nn_cell = 128\n").unwrap_err();
        assert_eq!(err.line, Some(3));
        let mut cfg = Config::default();
        let err = cfg.apply_file("n_cell = 64\n").unwrap_err();
        assert_eq!(err.line, Some(1));
    }

    #[test]
    fn eps_grids_are_normalised_descending() {
        let mut cfg = Config::default();
        cfg.apply_file("[sweep]\neps = 0.03125, 0.125, 0.0625\n").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.eps, vec![0.125, 0.0625, 0.03125]);
    }
}
