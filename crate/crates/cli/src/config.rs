//! Run configuration: a flat `key = value` file overlaid with command-line
//! flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use mrap_core::propagation::PropagationConfig;
use mrap_core::regression::{AdmissionConfig, ExclusionRule};
use mrap_core::{Split, SplitSpec};

use crate::CliError;

/// Flags shared by every subcommand. Each overrides the config-file value of
/// the same name (dashes become underscores).
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Flat `key = value` config file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub triples: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub attrs: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Train/dev/test proportions, e.g. `80/10/10` or `0.8/0.1/0.1`.
    #[arg(long, global = true, value_name = "A/B/C")]
    pub split: Option<String>,
    #[arg(long, global = true, value_name = "F")]
    pub observed_fraction: Option<f64>,
    #[arg(long, global = true, value_name = "X")]
    pub damping: Option<f64>,
    #[arg(long, global = true, value_name = "X")]
    pub conv_frac: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    pub max_iters: Option<usize>,
    #[arg(long, global = true)]
    pub no_cross: bool,
    #[arg(long, global = true)]
    pub no_inner: bool,
    #[arg(long, global = true, value_name = "N")]
    pub min_support: Option<usize>,
    #[arg(long, global = true, value_name = "X")]
    pub r2_min: Option<f64>,
    /// `attrA,attrB[,relation]`; relation `INNER` restricts to inner models.
    /// Repeatable.
    #[arg(long, global = true, value_name = "RULE")]
    pub exclude: Vec<String>,
    /// Reverse-model slope threshold factor (times dep/indep range ratio).
    #[arg(long, global = true, value_name = "X")]
    pub eta_min: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_name = "dev|test")]
    pub eval_split: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub triples: Option<PathBuf>,
    pub attrs: Option<PathBuf>,
    pub out: PathBuf,
    pub split: SplitSpec,
    pub observed_fraction: f64,
    pub propagation: PropagationConfig,
    pub admission: AdmissionConfig,
    pub threads: Option<usize>,
    pub eval_split: Split,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            triples: None,
            attrs: None,
            out: PathBuf::from("mrap-out"),
            split: SplitSpec::default(),
            observed_fraction: 1.0,
            propagation: PropagationConfig::default(),
            admission: AdmissionConfig::default(),
            threads: None,
            eval_split: Split::Test,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| usage(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        v => Err(usage(format!("`{key}`: expected a boolean, got `{v}`"))),
    }
}

/// `80/10/10` (percent) or `0.8/0.1/0.1` (fractions).
pub fn parse_split(text: &str, seed: u64) -> Result<SplitSpec, CliError> {
    let parts: Vec<f64> = text
        .split('/')
        .map(|p| parse_num::<f64>("split", p))
        .collect::<Result<_, _>>()?;
    if parts.len() != 3 {
        return Err(usage(format!("split `{text}` must have three parts")));
    }
    let total: f64 = parts.iter().sum();
    let scale = if (total - 100.0).abs() < 1e-6 { 100.0 } else { 1.0 };
    SplitSpec::new(parts[0] / scale, parts[1] / scale, parts[2] / scale, seed).map_err(|e| usage(e.to_string()))
}

fn parse_eval_split(text: &str) -> Result<Split, CliError> {
    match text.trim() {
        "dev" => Ok(Split::Dev),
        "test" => Ok(Split::Test),
        v => Err(usage(format!("eval split must be `dev` or `test`, got `{v}`"))),
    }
}

impl RunConfig {
    /// Loads the config file (if any) and applies flag overrides, then
    /// validates numeric ranges and input paths.
    pub fn resolve(flags: &Overrides) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut split_text: Option<String> = None;
        if let Some(path) = &flags.config {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply_file(&text, path.parent().unwrap_or(Path::new(".")), &mut split_text)?;
        }

        if let Some(p) = &flags.triples {
            cfg.triples = Some(p.clone());
        }
        if let Some(p) = &flags.attrs {
            cfg.attrs = Some(p.clone());
        }
        if let Some(p) = &flags.out {
            cfg.out = p.clone();
        }
        if let Some(s) = flags.seed {
            cfg.split.seed = s;
        }
        if let Some(s) = &flags.split {
            split_text = Some(s.clone());
        }
        if let Some(f) = flags.observed_fraction {
            cfg.observed_fraction = f;
        }
        let prop = &mut cfg.propagation;
        if let Some(x) = flags.damping {
            prop.damping = x;
        }
        if let Some(x) = flags.conv_frac {
            prop.conv_frac = x;
        }
        if let Some(n) = flags.max_iters {
            prop.max_iters = n;
        }
        prop.no_cross |= flags.no_cross;
        prop.no_inner |= flags.no_inner;
        let adm = &mut cfg.admission;
        if let Some(n) = flags.min_support {
            adm.min_support = n;
        }
        if let Some(x) = flags.r2_min {
            adm.r2_min = x;
        }
        if let Some(x) = flags.eta_min {
            adm.eta_min_factor = x;
        }
        for rule in &flags.exclude {
            adm.exclusions.push(rule.parse().map_err(usage)?);
        }
        if let Some(n) = flags.threads {
            cfg.threads = Some(n);
        }
        if let Some(s) = &flags.eval_split {
            cfg.eval_split = parse_eval_split(s)?;
        }

        if let Some(text) = split_text {
            cfg.split = parse_split(&text, cfg.split.seed)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_file(&mut self, text: &str, base: &Path, split_text: &mut Option<String>) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("config line {}: expected key = value", i + 1)))?;
            let (key, value) = (key.trim().replace('-', "_"), value.trim());
            let path = || {
                let p = PathBuf::from(value);
                if p.is_relative() {
                    base.join(p)
                } else {
                    p
                }
            };
            match key.as_str() {
                "triples" => self.triples = Some(path()),
                "attrs" => self.attrs = Some(path()),
                "out" => self.out = path(),
                "seed" => self.split.seed = parse_num(&key, value)?,
                "split" => *split_text = Some(value.to_owned()),
                "observed_fraction" => self.observed_fraction = parse_num(&key, value)?,
                "damping" => self.propagation.damping = parse_num(&key, value)?,
                "conv_frac" => self.propagation.conv_frac = parse_num(&key, value)?,
                "max_iters" => self.propagation.max_iters = parse_num(&key, value)?,
                "no_cross" => self.propagation.no_cross = parse_bool(&key, value)?,
                "no_inner" => self.propagation.no_inner = parse_bool(&key, value)?,
                "min_support" => self.admission.min_support = parse_num(&key, value)?,
                "r2_min" => self.admission.r2_min = parse_num(&key, value)?,
                "eta_min" => self.admission.eta_min_factor = parse_num(&key, value)?,
                "exclude" => self
                    .admission
                    .exclusions
                    .push(value.parse::<ExclusionRule>().map_err(usage)?),
                "threads" => self.threads = Some(parse_num(&key, value)?),
                "eval_split" => self.eval_split = parse_eval_split(value)?,
                _ => return Err(usage(format!("config line {}: unknown key `{key}`", i + 1))),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.split.validate().map_err(|e| usage(e.to_string()))?;
        if !(self.observed_fraction > 0.0 && self.observed_fraction <= 1.0) {
            return Err(usage(format!("observed fraction {} must lie in (0, 1]", self.observed_fraction)));
        }
        self.propagation.validate().map_err(|e| usage(e.to_string()))?;
        if !(self.admission.r2_min.is_finite() && (0.0..=1.0).contains(&self.admission.r2_min)) {
            return Err(usage(format!("r2-min {} must lie in [0, 1]", self.admission.r2_min)));
        }
        if self.admission.eta_min_factor.is_nan() || self.admission.eta_min_factor < 0.0 {
            return Err(usage("eta-min must be non-negative"));
        }
        if self.threads == Some(0) {
            return Err(usage("threads must be at least 1"));
        }
        for p in [&self.triples, &self.attrs].into_iter().flatten() {
            if !p.exists() {
                return Err(usage(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Label for reports, e.g. `100%` or `50%`.
    pub fn setup_label(&self) -> String {
        let pct = self.observed_fraction * 100.0;
        if (pct - pct.round()).abs() < 1e-9 {
            format!("{}%", pct.round() as i64)
        } else {
            format!("{pct}%")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn split_forms() {
        let s = parse_split("80/10/10", 3).unwrap();
        assert_eq!((s.train_frac, s.dev_frac, s.test_frac, s.seed), (0.8, 0.1, 0.1, 3));
        let s = parse_split("0.5/0.25/0.25", 0).unwrap();
        assert_eq!(s.dev_frac, 0.25);
        assert!(parse_split("80/20", 0).is_err());
        assert!(parse_split("80/30/10", 0).is_err());
    }

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(
            f,
            "# comment\nout = results\nseed = 9\nsplit = 60/20/20\ndamping = 0.7\nno-inner = true\nexclude = latitude,longitude,INNER\nmin_support = 3"
        )
        .unwrap();
        let flags = Overrides {
            config: Some(path),
            damping: Some(0.4),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(&flags).unwrap();
        assert_eq!(cfg.out, dir.path().join("results"));
        assert_eq!(cfg.split.seed, 9);
        assert_eq!(cfg.split.train_frac, 0.6);
        assert_eq!(cfg.propagation.damping, 0.4);
        assert!(cfg.propagation.no_inner);
        assert_eq!(cfg.admission.min_support, 3);
        assert_eq!(cfg.admission.exclusions.len(), 1);
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let bad = [
            Overrides { damping: Some(0.0), ..Default::default() },
            Overrides { observed_fraction: Some(1.5), ..Default::default() },
            Overrides { max_iters: Some(0), ..Default::default() },
            Overrides { eval_split: Some("train".into()), ..Default::default() },
            Overrides { triples: Some("/definitely/not/here".into()), ..Default::default() },
            Overrides { exclude: vec!["lonely".into()], ..Default::default() },
        ];
        for flags in bad {
            assert!(matches!(RunConfig::resolve(&flags), Err(CliError::Usage(_))), "{flags:?}");
        }
    }

    #[test]
    fn setup_labels() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.setup_label(), "100%");
        cfg.observed_fraction = 0.5;
        assert_eq!(cfg.setup_label(), "50%");
    }
}
