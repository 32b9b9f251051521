//! Run configuration: a sectioned `key = value` file, overridden by flags,
//! overridden in turn by the `EEE_SEED` / `EEE_WORKERS` environment variables.

use std::collections::BTreeMap;
use std::path::PathBuf;

use eee_core::baselines::Algorithm;
use eee_core::orchestrator::{EeeConfig, FocusPolicy};
use eee_core::search::KernelKind;
use eee_core::{Error, Result};

/// Every accepted key with the section it lives in.
pub const KEYS: &[(&str, &str)] = &[
    ("run", "problem"),
    ("run", "external-cmd"),
    ("run", "external-dim"),
    ("run", "external-implicit"),
    ("run", "external-threshold"),
    ("run", "external-timeout"),
    ("run", "algo"),
    ("run", "runs"),
    ("run", "budget"),
    ("run", "init"),
    ("run", "seed"),
    ("run", "workers"),
    ("run", "output"),
    ("eee", "kernel"),
    ("eee", "ensemble"),
    ("eee", "seeds"),
    ("eee", "estimator-hidden"),
    ("eee", "kernel-hidden"),
    ("eee", "r-t"),
    ("eee", "r-max"),
    ("eee", "focus"),
    ("eee", "focus-policy"),
    ("eee", "collapse-penalty"),
    ("eee", "candidates"),
];

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Builtin(String),
    External {
        command: String,
        state_dim: usize,
        implicit_dim: usize,
        threshold: f64,
        timeout_secs: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub target: Target,
    pub algo: Algorithm,
    pub eee: EeeConfig,
    pub runs: usize,
    pub budget: u64,
    pub init: usize,
    pub master_seed: u64,
    pub workers: usize,
    pub output: PathBuf,
}

impl RunConfig {
    pub fn target_name(&self) -> String {
        match &self.target {
            Target::Builtin(p) => p.clone(),
            Target::External { .. } => "external".to_string(),
        }
    }
}

/// Raw settings keyed by name; later layers overwrite earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn section_of(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(_, k)| *k == key).map(|(s, _)| *s)
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if section_of(key).is_none() {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn merge(&mut self, other: &Settings) {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
    }

    /// Parses the file format: `[section]` headers, `key = value` lines,
    /// `#` or `;` comments.
    pub fn parse_file(text: &str) -> Result<Self> {
        let mut out = Settings::default();
        let mut section: Option<String> = None;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !KEYS.iter().any(|(s, _)| *s == name) {
                    return Err(Error::Config(format!("line {}: unknown section `[{name}]`", no + 1)));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
            let key = key.trim();
            match (section_of(key), section.as_deref()) {
                (None, _) => return Err(Error::Config(format!("line {}: unknown key `{key}`", no + 1))),
                (Some(want), Some(have)) if want != have => {
                    return Err(Error::Config(format!(
                        "line {}: key `{key}` belongs in section [{want}], not [{have}]",
                        no + 1
                    )))
                }
                _ => {}
            }
            out.set(key, value)?;
        }
        Ok(out)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`"))),
        }
    }

    fn positive<T: std::str::FromStr + PartialOrd + Default + Copy>(&self, key: &str, default: T) -> Result<T> {
        let v = self.parse(key)?.unwrap_or(default);
        if v <= T::default() {
            return Err(Error::Config(format!("`{key}` must be positive")));
        }
        Ok(v)
    }

    /// Validates and resolves the settings into a run configuration.
    pub fn resolve(&self) -> Result<RunConfig> {
        let algo = Algorithm::parse(self.get("algo").unwrap_or("eee"))?;
        if algo != Algorithm::Eee {
            if let Some((_, key)) = KEYS.iter().find(|(s, k)| *s == "eee" && self.get(k).is_some()) {
                return Err(Error::Config(format!(
                    "`{key}` is only valid with `algo = eee`, but `algo = {}`",
                    algo.as_str()
                )));
            }
        }
        let external_keys = ["external-dim", "external-implicit", "external-threshold", "external-timeout"];
        let target = match (self.get("problem"), self.get("external-cmd")) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("`problem` and `external-cmd` are mutually exclusive".into()))
            }
            (None, None) => return Err(Error::Config("one of `problem` or `external-cmd` is required".into())),
            (Some(p), None) => {
                if let Some(k) = external_keys.iter().find(|k| self.get(k).is_some()) {
                    return Err(Error::Config(format!("`{k}` requires `external-cmd`, not `problem`")));
                }
                eee_core::validation::problem_spec(p)?;
                Target::Builtin(p.to_string())
            }
            (None, Some(cmd)) => {
                if cmd.trim().is_empty() {
                    return Err(Error::Config("`external-cmd` is empty".into()));
                }
                let threshold: f64 = self
                    .parse("external-threshold")?
                    .ok_or_else(|| Error::Config("`external-cmd` requires `external-threshold`".into()))?;
                if !(threshold > 0.0) {
                    return Err(Error::Config("`external-threshold` must be positive".into()));
                }
                Target::External {
                    command: cmd.to_string(),
                    state_dim: self
                        .parse("external-dim")?
                        .ok_or_else(|| Error::Config("`external-cmd` requires `external-dim`".into()))?,
                    implicit_dim: self.positive("external-implicit", 1)?,
                    threshold,
                    timeout_secs: self.positive("external-timeout", 60)?,
                }
            }
        };
        if let Target::External { state_dim: 0, .. } = target {
            return Err(Error::Config("`external-dim` must be positive".into()));
        }

        let init = self.positive("init", 64usize)?;
        let budget: u64 = self.parse("budget")?.unwrap_or(1000);
        let mut eee = EeeConfig {
            initial_samples: init,
            budget,
            ..EeeConfig::default()
        };
        if let Some(k) = self.get("kernel") {
            eee.kernel = KernelKind::parse(k)?;
        }
        eee.estimator.ensemble_size = self.parse("ensemble")?.unwrap_or(eee.estimator.ensemble_size);
        eee.seeds = self.positive("seeds", eee.seeds)?;
        eee.estimator.hidden = self.positive("estimator-hidden", eee.estimator.hidden)?;
        eee.kernel_hidden = self.parse("kernel-hidden")?;
        eee.r_t = self.positive("r-t", eee.r_t)?;
        eee.r_max = self.parse("r-max")?.unwrap_or(eee.r_max);
        eee.candidates = self.positive("candidates", eee.candidates)?;
        let focus: Option<f64> = self.parse("focus")?;
        eee.focus = match self.get("focus-policy").unwrap_or("constant") {
            "constant" => FocusPolicy::Constant(focus),
            "inverse" => FocusPolicy::InverseConverged {
                base: focus.unwrap_or(1.5),
            },
            other => return Err(Error::Config(format!("invalid value `{other}` for `focus-policy`"))),
        };
        eee.collapse_penalty = match self.get("collapse-penalty").unwrap_or("auto") {
            "auto" => None,
            "on" => Some(true),
            "off" => Some(false),
            other => return Err(Error::Config(format!("invalid value `{other}` for `collapse-penalty`"))),
        };
        eee.keep_trace = false;
        eee.validate()?;
        if algo != Algorithm::Eee && algo != Algorithm::Random && (budget as usize) < init {
            return Err(Error::Config(format!(
                "`budget` ({budget}) must cover one population of `init` ({init}) for {}",
                algo.as_str()
            )));
        }

        let workers = match self.parse::<usize>("workers")? {
            Some(0) => return Err(Error::Config("`workers` must be positive".into())),
            Some(w) => w,
            None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        };
        Ok(RunConfig {
            target,
            algo,
            eee,
            runs: self.positive("runs", 1)?,
            budget,
            init,
            master_seed: self.parse("seed")?.unwrap_or(0),
            workers,
            output: PathBuf::from(self.get("output").unwrap_or("eee-out")),
        })
    }
}

/// Applies `EEE_SEED` and `EEE_WORKERS` from the given lookup.
pub fn apply_env(settings: &mut Settings, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
    if let Some(v) = lookup("EEE_SEED") {
        settings.set("seed", &v)?;
    }
    if let Some(v) = lookup("EEE_WORKERS") {
        settings.set("workers", &v)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(pairs: &[(&str, &str)]) -> Settings {
        let mut s = Settings::default();
        for (k, v) in pairs {
            s.set(k, v).unwrap();
        }
        s
    }

    #[test]
    fn table_row_setup() {
        let c = settings(&[
            ("problem", "p2-cycle11"),
            ("algo", "eee"),
            ("kernel", "identity"),
            ("runs", "100"),
            ("init", "64"),
        ])
        .resolve()
        .unwrap();
        assert_eq!(c.runs, 100);
        assert_eq!(c.eee.initial_samples, 64);
        assert_eq!(c.eee.kernel, KernelKind::Identity);
        assert_eq!(c.budget, 1000);
        assert_eq!(c.target, Target::Builtin("p2-cycle11".into()));
    }

    #[test]
    fn kernel_only_with_eee() {
        let e = settings(&[("problem", "p1-spectra2"), ("algo", "random"), ("kernel", "mlp")])
            .resolve()
            .unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("kernel") && msg.contains("algo"), "{msg}");
    }

    #[test]
    fn target_required() {
        assert!(settings(&[("algo", "eee")]).resolve().is_err());
        let e = settings(&[("problem", "p1-spectra2"), ("external-cmd", "x")]).resolve().unwrap_err();
        assert!(e.to_string().contains("problem") && e.to_string().contains("external-cmd"));
        assert!(settings(&[("problem", "p9")]).resolve().is_err());
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = Settings::parse_file("[run]\nproblme = p1-spectra2\n").unwrap_err();
        assert!(e.to_string().contains("problme"));
        assert!(Settings::default().set("bogus", "1").unwrap_err().to_string().contains("bogus"));
        let e = Settings::parse_file("[eee]\nruns = 3\n").unwrap_err();
        assert!(e.to_string().contains("runs"));
    }

    #[test]
    fn file_then_flags_then_env() {
        let mut s = Settings::parse_file("# demo\n[run]\nproblem = p1-spectra2\nruns = 4\nseed = 9\n\n[eee]\nseeds = 8\n").unwrap();
        s.merge(&settings(&[("runs", "2")]));
        apply_env(&mut s, |k| (k == "EEE_SEED").then(|| "77".to_string())).unwrap();
        let c = s.resolve().unwrap();
        assert_eq!((c.runs, c.master_seed, c.eee.seeds), (2, 77, 8));
    }

    #[test]
    fn bad_values() {
        assert!(settings(&[("problem", "p1-spectra2"), ("runs", "0")]).resolve().is_err());
        assert!(settings(&[("problem", "p1-spectra2"), ("runs", "x")]).resolve().is_err());
        assert!(settings(&[("problem", "p1-spectra2"), ("focus", "0.9")]).resolve().is_err());
        assert!(settings(&[("problem", "p1-spectra2"), ("ensemble", "1")]).resolve().is_err());
        assert!(settings(&[("problem", "p1-spectra2"), ("algo", "pso"), ("budget", "10")]).resolve().is_err());
        assert!(settings(&[("external-cmd", "v"), ("external-dim", "3")]).resolve().is_err());
    }
}
