//! Flag definitions and the `key = value` config-file merge.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use adasize::driver::DEFAULT_PASS_CAP;
use adasize::{BudgetMode, LossModel, Method, SmoothnessMode};
use clap::{Args, Parser, Subcommand};

use crate::UsageError;

#[derive(Debug, Parser)]
#[command(name = "adasize", version, about = "Adaptive sample size first-order methods for regularized ERM")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic logistic dataset in sparse text format.
    Gen(Flags),
    /// Run one method (adaptive or fixed) and write its trace.
    Run(Flags),
    /// Run every method adaptive and fixed, and write traces plus a summary.
    Compare(Flags),
    /// Print per-stage parameters, iteration bounds and total complexities.
    Bounds(Flags),
    /// Run the numerical verification checks.
    Verify(Flags),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Run(_) => "run",
            Command::Compare(_) => "compare",
            Command::Bounds(_) => "bounds",
            Command::Verify(_) => "verify",
        }
    }

    pub fn flags(&self) -> &Flags {
        match self {
            Command::Gen(f) | Command::Run(f) | Command::Compare(f) | Command::Bounds(f) | Command::Verify(f) => f,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Flat `key = value` config file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training data in sparse text format.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Held-out data in sparse text format.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Synthetic data instead of a file: `n,dim,sparsity`.
    #[arg(long)]
    pub gen: Option<String>,
    /// Shuffle the data once and keep this many samples for training, the rest for testing.
    #[arg(long)]
    pub train_count: Option<usize>,
    /// Raw label mapping such as `0:-1,1:1`.
    #[arg(long)]
    pub label_map: Option<String>,
    /// Keep feature vectors as read instead of scaling them to unit norm.
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub adaptive: bool,
    #[arg(long)]
    pub m0: Option<usize>,
    /// Total training-set size.
    #[arg(long = "N")]
    pub n_total: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// `logistic` or `squared`.
    #[arg(long)]
    pub loss: Option<String>,
    /// `paper` (M = 1) or `tight`.
    #[arg(long)]
    pub m_mode: Option<String>,
    /// `threshold` or `theory`.
    #[arg(long)]
    pub budget: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub pass_cap: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Squared norm of the population minimizer for the theoretical bounds.
    #[arg(long)]
    pub wstar_sq: Option<f64>,
    /// Linear rate for the generic iteration bound.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Monte-Carlo draws for the verification checks.
    #[arg(long)]
    pub draws: Option<usize>,
    /// Trials for the gradient and SVRG direction checks.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Comma-separated subset of `fd,svrg,lemma1,lemma2,prop1,theorem`.
    #[arg(long)]
    pub checks: Option<String>,
    /// Emit CSV instead of aligned text on stdout.
    #[arg(long)]
    pub csv: bool,
    /// Output directory (default: `$ADASIZE_OUT`, else the current directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Manifest entries that describe a run but are not settings.
const INFORMATIONAL_KEYS: &[&str] = &["version", "command", "dataset_name", "dataset_sha256"];

/// Fully resolved settings after merging the config file and flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub dataset: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub gen: Option<(usize, usize, f64)>,
    pub train_count: Option<usize>,
    pub label_map: Option<String>,
    pub normalize: bool,
    pub method: Option<Method>,
    pub adaptive: bool,
    pub m0: Option<usize>,
    pub n_total: Option<usize>,
    pub alpha: f64,
    pub c: f64,
    pub gamma: f64,
    pub loss: LossModel,
    pub m_mode: SmoothnessMode,
    pub budget: BudgetMode,
    pub seed: u64,
    pub pass_cap: usize,
    pub eval_every: usize,
    pub wstar_sq: Option<f64>,
    pub rho: Option<f64>,
    pub draws: Option<usize>,
    pub trials: Option<usize>,
    pub checks: Option<String>,
    pub csv: bool,
    pub out: PathBuf,
}

/// Parses a flat `key = value` file. Blank lines and `#` comments are skipped;
/// keys may use `-` or `_`.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, UsageError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("config line {}: expected `key = value`", i + 1)))?;
        let key = key.trim().replace('-', "_").to_ascii_lowercase();
        if key.is_empty() {
            return Err(UsageError(format!("config line {}: empty key", i + 1)));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

struct Merge {
    file: BTreeMap<String, String>,
}

impl Merge {
    fn take(&mut self, key: &str) -> Option<String> {
        self.file.remove(key).filter(|v| !v.is_empty())
    }

    fn value<T: FromStr>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, UsageError>
    where
        T::Err: std::fmt::Display,
    {
        let from_file = match self.take(key) {
            Some(v) => Some(v.parse::<T>().map_err(|e| UsageError(format!("config key `{key}`: {e}")))?),
            None => None,
        };
        Ok(flag.or(from_file))
    }

    fn flag(&mut self, key: &str, flag: bool) -> Result<bool, UsageError> {
        let from_file = self.value::<bool>(key, None)?.unwrap_or(false);
        Ok(flag || from_file)
    }
}

fn parse_enum<T: FromStr>(key: &str, value: Option<String>) -> Result<Option<T>, UsageError>
where
    T::Err: std::fmt::Display,
{
    value.map(|v| v.parse::<T>().map_err(|e| UsageError(format!("--{key}: {e}")))).transpose()
}

pub fn parse_gen(spec: &str) -> Result<(usize, usize, f64), UsageError> {
    let bad = || UsageError(format!("--gen expects `n,dim,sparsity`, got `{spec}`"));
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    Ok((parts[0].parse().map_err(|_| bad())?, parts[1].parse().map_err(|_| bad())?, parts[2].parse().map_err(|_| bad())?))
}

impl Settings {
    pub fn resolve(flags: &Flags, env_out: Option<PathBuf>) -> Result<Self, UsageError> {
        let file = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        let base_dir = flags.config.as_deref().and_then(Path::parent).map(Path::to_path_buf);
        let mut m = Merge { file };
        let relative = |p: PathBuf| match (&base_dir, p.is_relative()) {
            (Some(dir), true) => dir.join(p),
            _ => p,
        };

        let dataset = match flags.dataset.clone() {
            Some(p) => Some(p),
            None => m.take("dataset").map(PathBuf::from).map(relative),
        };
        let test = match flags.test.clone() {
            Some(p) => Some(p),
            None => m.take("test").map(PathBuf::from).map(relative),
        };
        let gen = m.value::<String>("gen", flags.gen.clone())?.map(|g| parse_gen(&g)).transpose()?;
        if dataset.is_some() && gen.is_some() {
            return Err(UsageError("--dataset and --gen are mutually exclusive".into()));
        }
        let method = m.value::<String>("method", flags.method.clone())?;
        let loss = m.value::<String>("loss", flags.loss.clone())?;
        let m_mode = m.value::<String>("m_mode", flags.m_mode.clone())?;
        let budget = m.value::<String>("budget", flags.budget.clone())?;
        let out = match flags.out.clone() {
            Some(p) => p,
            None => m.take("out").map(PathBuf::from).or(env_out).unwrap_or_else(|| PathBuf::from(".")),
        };
        let settings = Settings {
            dataset,
            test,
            gen,
            train_count: m.value("train_count", flags.train_count)?,
            label_map: m.value("label_map", flags.label_map.clone())?,
            normalize: !m.flag("no_normalize", flags.no_normalize)?,
            method: parse_enum("method", method)?,
            adaptive: m.flag("adaptive", flags.adaptive)?,
            m0: m.value("m0", flags.m0)?,
            n_total: m.value("n", flags.n_total)?.or(m.value("n_total", None)?),
            alpha: m.value("alpha", flags.alpha)?.unwrap_or(0.5),
            c: m.value("c", flags.c)?.unwrap_or(1.0),
            gamma: m.value("gamma", flags.gamma)?.unwrap_or(1.0),
            loss: parse_enum("loss", loss)?.unwrap_or(LossModel::Logistic),
            m_mode: parse_enum("m-mode", m_mode)?.unwrap_or(SmoothnessMode::PaperConservative),
            budget: parse_enum("budget", budget)?.unwrap_or(BudgetMode::UntilThreshold),
            seed: m.value("seed", flags.seed)?.unwrap_or(0),
            pass_cap: m.value("pass_cap", flags.pass_cap)?.unwrap_or(DEFAULT_PASS_CAP),
            eval_every: m.value("eval_every", flags.eval_every)?.unwrap_or(1),
            wstar_sq: m.value("wstar_sq", flags.wstar_sq)?,
            rho: m.value("rho", flags.rho)?,
            draws: m.value("draws", flags.draws)?,
            trials: m.value("trials", flags.trials)?,
            checks: m.value("checks", flags.checks.clone())?,
            csv: m.flag("csv", flags.csv)?,
            out,
        };
        let leftover: Vec<&String> = m
            .file
            .keys()
            .filter(|k| !INFORMATIONAL_KEYS.contains(&k.as_str()) && !k.starts_with("output."))
            .collect();
        if let Some(k) = leftover.first() {
            return Err(UsageError(format!("unknown config key `{k}`")));
        }
        if settings.eval_every == 0 {
            return Err(UsageError("--eval-every must be at least 1".into()));
        }
        Ok(settings)
    }

    /// `key = value` lines that reproduce these settings through `--config`.
    pub fn to_config_lines(&self) -> Vec<(String, String)> {
        let mut v: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, val: String| v.push((k.to_string(), val));
        let absolute = |p: &PathBuf| std::fs::canonicalize(p).unwrap_or_else(|_| p.clone()).display().to_string();
        if let Some(p) = &self.dataset {
            put("dataset", absolute(p));
        }
        if let Some(p) = &self.test {
            put("test", absolute(p));
        }
        if let Some((n, d, s)) = self.gen {
            put("gen", format!("{n},{d},{s}"));
        }
        if let Some(t) = self.train_count {
            put("train_count", t.to_string());
        }
        if let Some(l) = &self.label_map {
            put("label_map", l.clone());
        }
        put("no_normalize", (!self.normalize).to_string());
        if let Some(m) = self.method {
            put("method", m.to_string());
        }
        put("adaptive", self.adaptive.to_string());
        if let Some(m0) = self.m0 {
            put("m0", m0.to_string());
        }
        if let Some(n) = self.n_total {
            put("n", n.to_string());
        }
        put("alpha", format!("{:?}", self.alpha));
        put("c", format!("{:?}", self.c));
        put("gamma", format!("{:?}", self.gamma));
        put("loss", self.loss.as_str().to_string());
        put(
            "m_mode",
            match self.m_mode {
                SmoothnessMode::PaperConservative => "paper",
                SmoothnessMode::Tight => "tight",
            }
            .to_string(),
        );
        put("budget", self.budget.as_str().to_string());
        put("seed", self.seed.to_string());
        put("pass_cap", self.pass_cap.to_string());
        put("eval_every", self.eval_every.to_string());
        if let Some(w) = self.wstar_sq {
            put("wstar_sq", format!("{w:?}"));
        }
        if let Some(r) = self.rho {
            put("rho", format!("{r:?}"));
        }
        if let Some(d) = self.draws {
            put("draws", d.to_string());
        }
        if let Some(t) = self.trials {
            put("trials", t.to_string());
        }
        if let Some(c) = &self.checks {
            put("checks", c.clone());
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let map = parse_config("# comment\nm0 = 400\n\npass-cap=20 # trailing\n").unwrap();
        assert_eq!(map.get("m0").unwrap(), "400");
        assert_eq!(map.get("pass_cap").unwrap(), "20");
        assert!(parse_config("no equals sign").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "m0 = 100\nalpha = 1\nmethod = svrg\nadaptive = true\n").unwrap();
        let flags = Flags { config: Some(cfg), m0: Some(50), ..Flags::default() };
        let s = Settings::resolve(&flags, None).unwrap();
        assert_eq!(s.m0, Some(50));
        assert_eq!(s.alpha, 1.0);
        assert_eq!(s.method, Some(Method::Svrg));
        assert!(s.adaptive);
        assert_eq!(s.out, PathBuf::from("."));
    }

    #[test]
    fn unknown_keys_and_conflicts_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.cfg");
        std::fs::write(&cfg, "colour = blue\n").unwrap();
        assert!(Settings::resolve(&Flags { config: Some(cfg), ..Flags::default() }, None).is_err());
        let flags = Flags { dataset: Some("a.svm".into()), gen: Some("10,2,1".into()), ..Flags::default() };
        assert!(Settings::resolve(&flags, None).is_err());
        let flags = Flags { method: Some("sgd".into()), ..Flags::default() };
        assert!(Settings::resolve(&flags, None).is_err());
    }

    #[test]
    fn settings_round_trip_through_config_lines() {
        let flags = Flags {
            gen: Some("100,5,0.5".into()),
            method: Some("agd".into()),
            adaptive: true,
            m0: Some(10),
            gamma: Some(2.0),
            m_mode: Some("tight".into()),
            ..Flags::default()
        };
        let s = Settings::resolve(&flags, Some(PathBuf::from("out"))).unwrap();
        let text: String = s.to_config_lines().iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("m.cfg");
        std::fs::write(&cfg, text + "version = 0.1.0\n").unwrap();
        let again = Settings::resolve(&Flags { config: Some(cfg), ..Flags::default() }, Some(PathBuf::from("out"))).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn gen_spec() {
        assert_eq!(parse_gen("10, 4, 0.5").unwrap(), (10, 4, 0.5));
        assert!(parse_gen("10,4").is_err());
    }
}
