//! Experiment configuration: a plain `key = value` file with section
//! headers, overridable by command-line flags.

use std::path::PathBuf;

use forecache_core::{Error, PipelineConfig, PolicySpec, Result, SchedulerSpec};

/// Everything one experiment needs.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub pipeline: PipelineConfig,
    pub policy: PolicySpec,
    pub scheduler: SchedulerSpec,
    pub seeds: Vec<u64>,
    pub ghost_reference: bool,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            policy: PolicySpec::Taylor { m: 1 },
            scheduler: SchedulerSpec::FixedInterval { n: 4 },
            seeds: vec![0],
            ghost_reference: false,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Parses the config file format: `[pipeline]` and `[run]` sections of
    /// `key = value` lines, `#` comments, blank lines ignored.
    pub fn from_file_text(text: &str) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                if section != "pipeline" && section != "run" {
                    return Err(Error::InvalidConfig(format!(
                        "line {}: unknown section [{}]",
                        lineno + 1,
                        section
                    )));
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match section.as_str() {
                "pipeline" => config.pipeline.apply_key_value(key, value)?,
                "run" => config.apply_run_key(key, value)?,
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "line {}: key outside a section",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(config)
    }

    fn apply_run_key(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "policy" => self.policy = PolicySpec::parse(value)?,
            "scheduler" => self.scheduler = SchedulerSpec::parse(value)?,
            "seeds" => self.seeds = parse_seed_list(value)?,
            "ghost_reference" => {
                self.ghost_reference = value.parse().map_err(|_| {
                    Error::InvalidConfig(format!(
                        "ghost_reference must be true/false, got '{}'",
                        value
                    ))
                })?
            }
            "out" => self.out_dir = PathBuf::from(value),
            _ => {
                return Err(Error::InvalidConfig(format!("unknown run key '{}'", key)));
            }
        }
        Ok(())
    }
}

/// Comma-separated non-empty list of seeds.
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = s
        .split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad seed '{}'", part)))
        })
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("need at least one seed".into()));
    }
    Ok(seeds)
}

/// Comma-separated list of floats (thresholds).
pub fn parse_float_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad number '{}'", part)))
        })
        .collect()
}
