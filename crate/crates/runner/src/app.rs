//! Command-line front end of the `eee` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::Parser;

use crate::config::{apply_env, Settings};
use crate::matrix::{run_matrix, write_outputs};

/// Benchmark runner: repeated seeded runs of one algorithm on one problem,
/// written to `runs.csv` and `aggregate.csv` in the output directory.
///
/// Settings come from `--config` (sectioned key = value file), then flags,
/// then the EEE_SEED and EEE_WORKERS environment variables.
#[derive(Parser, Debug)]
#[command(name = "eee", version)]
struct Cli {
    /// Configuration file with [run] and [eee] sections.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Built-in problem: p1-spectra2, p2-cycle11, p3-actuator20, p4-pwm30.
    #[arg(long)]
    problem: Option<String>,
    /// Command line of an external validator speaking line-delimited JSON.
    #[arg(long = "external-cmd")]
    external_cmd: Option<String>,
    /// State dimension of the external problem.
    #[arg(long = "external-dim")]
    external_dim: Option<String>,
    /// Number of implicit error entries returned by the external validator [default: 1].
    #[arg(long = "external-implicit")]
    external_implicit: Option<String>,
    /// Acceptance threshold for the external problem.
    #[arg(long = "external-threshold")]
    external_threshold: Option<String>,
    /// Seconds to wait for one external reply [default: 60].
    #[arg(long = "external-timeout")]
    external_timeout: Option<String>,
    /// eee, random, pso or ga [default: eee].
    #[arg(long)]
    algo: Option<String>,
    /// Number of independent runs [default: 1].
    #[arg(long)]
    runs: Option<String>,
    /// Validation queries per run after the initial samples [default: 1000].
    #[arg(long)]
    budget: Option<String>,
    /// Initial samples (eee) or population size (pso, ga) [default: 64].
    #[arg(long)]
    init: Option<String>,
    /// Master seed [default: 0].
    #[arg(long)]
    seed: Option<String>,
    /// Worker threads [default: logical cores].
    #[arg(long)]
    workers: Option<String>,
    /// Output directory [default: eee-out].
    #[arg(long)]
    output: Option<String>,

    /// Search kernel: identity, perceptron or mlp [default: identity].
    #[arg(long)]
    kernel: Option<String>,
    /// Estimator ensemble size [default: 4].
    #[arg(long)]
    ensemble: Option<String>,
    /// Number of search seeds [default: 64].
    #[arg(long)]
    seeds: Option<String>,
    /// Estimator hidden width h (layers h, 2h, h) [default: 64].
    #[arg(long = "estimator-hidden")]
    estimator_hidden: Option<String>,
    /// Hidden width of the mlp kernel [default: 20, or 256 on p4-pwm30].
    #[arg(long = "kernel-hidden")]
    kernel_hidden: Option<String>,
    /// Estimator epochs per round before division by r_b [default: 5].
    #[arg(long = "r-t")]
    r_t: Option<String>,
    /// Maximum number of rounds [default: 400].
    #[arg(long = "r-max")]
    r_max: Option<String>,
    /// Focus coefficient c_f [default: per problem].
    #[arg(long)]
    focus: Option<String>,
    /// constant or inverse (c_f * L / max(l, 1)) [default: constant].
    #[arg(long = "focus-policy")]
    focus_policy: Option<String>,
    /// auto, on or off [default: auto, on only for mlp kernels on p4-pwm30].
    #[arg(long = "collapse-penalty")]
    collapse_penalty: Option<String>,
    /// Exploration candidates per round [default: 256].
    #[arg(long)]
    candidates: Option<String>,
}

impl Cli {
    fn flag_settings(&self) -> eee_core::Result<Settings> {
        let pairs = [
            ("problem", &self.problem),
            ("external-cmd", &self.external_cmd),
            ("external-dim", &self.external_dim),
            ("external-implicit", &self.external_implicit),
            ("external-threshold", &self.external_threshold),
            ("external-timeout", &self.external_timeout),
            ("algo", &self.algo),
            ("runs", &self.runs),
            ("budget", &self.budget),
            ("init", &self.init),
            ("seed", &self.seed),
            ("workers", &self.workers),
            ("output", &self.output),
            ("kernel", &self.kernel),
            ("ensemble", &self.ensemble),
            ("seeds", &self.seeds),
            ("estimator-hidden", &self.estimator_hidden),
            ("kernel-hidden", &self.kernel_hidden),
            ("r-t", &self.r_t),
            ("r-max", &self.r_max),
            ("focus", &self.focus),
            ("focus-policy", &self.focus_policy),
            ("collapse-penalty", &self.collapse_penalty),
            ("candidates", &self.candidates),
        ];
        let mut s = Settings::default();
        for (k, v) in pairs {
            if let Some(v) = v {
                s.set(k, v)?;
            }
        }
        Ok(s)
    }
}

/// Parses `args` (program name first), runs the matrix and returns the exit
/// code: 0 on success, 1 when every run aborted, 2 on configuration errors.
pub fn run_cli<I, T>(args: I, env: impl Fn(&str) -> Option<String>, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code.clamp(0, 255) as u8;
        }
    };
    let cfg = (|| {
        let mut settings = match &cli.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| eee_core::Error::Config(format!("cannot read {}: {e}", path.display())))?;
                Settings::parse_file(&text)?
            }
            None => Settings::default(),
        };
        settings.merge(&cli.flag_settings()?);
        apply_env(&mut settings, &env)?;
        settings.resolve()
    })();
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "eee: {e}");
            return 2;
        }
    };
    let outcome = match run_matrix(&cfg) {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(err, "eee: {e}");
            return 2;
        }
    };
    for (i, r) in outcome.records.iter().enumerate() {
        if let Some(msg) = &r.aborted {
            let _ = writeln!(err, "eee: run {i} aborted: {msg}");
        }
    }
    if let Err(e) = write_outputs(&cfg, &outcome, &cfg.output) {
        let _ = writeln!(err, "eee: {e}");
        return 2;
    }
    let a = &outcome.aggregate;
    let _ = writeln!(
        out,
        "{} {} runs={} t_0.5={} t_mean={:.2} t_sigma={:.2} t_max={} r_f={}",
        cfg.target_name(),
        cfg.algo.as_str(),
        a.runs,
        a.t_median,
        a.t_mean,
        a.t_sigma,
        a.t_max,
        a.r_f
    );
    if outcome.aborted == outcome.records.len() {
        let _ = writeln!(err, "eee: every run aborted");
        return 1;
    }
    0
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;
    use std::path::Path;

    // runs the front end with no environment; returns (code, stdout, stderr)
    fn eee(args: &[&str], env: &[(&str, &str)]) -> (u8, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let argv = std::iter::once("eee").chain(args.iter().copied());
        let lookup = |k: &str| env.iter().find(|(name, _)| *name == k).map(|(_, v)| v.to_string());
        let code = run_cli(argv, lookup, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    fn rows(path: &Path) -> Vec<csv::StringRecord> {
        let mut r = csv::Reader::from_path(path).unwrap();
        r.records().map(|x| x.unwrap()).collect()
    }

    fn headers(path: &Path) -> Vec<String> {
        let mut r = csv::Reader::from_path(path).unwrap();
        r.headers().unwrap().iter().map(String::from).collect()
    }

    #[test]
    fn random_runs_write_one_row_each() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let (code, stdout, stderr) = eee(
            &[
                "--problem", "p2-cycle11", "--algo", "random", "--runs", "3", "--budget", "40", "--seed", "11",
                "--output", out.to_str().unwrap(),
            ],
            &[],
        );
        assert_eq!(code, 0, "{stderr}");
        assert!(stdout.starts_with("p2-cycle11 random runs=3"), "{stdout}");
        assert_eq!(rows(&out.join("runs.csv")).len(), 3);
        assert_eq!(
            headers(&out.join("runs.csv")),
            ["run_id", "seed", "success", "queries", "final_e_o", "rounds", "gate_fires", "explore_queries"]
        );
        assert_eq!(
            headers(&out.join("aggregate.csv")),
            ["problem", "algo", "kernel", "init", "runs", "t_0.5", "t_mean", "t_sigma", "t_max", "r_f"]
        );
        let agg = rows(&out.join("aggregate.csv"));
        assert_eq!(agg.len(), 1);
        assert_eq!((&agg[0][0], &agg[0][1], &agg[0][2], &agg[0][4]), ("p2-cycle11", "random", "-", "3"));
    }

    #[test]
    fn same_master_seed_gives_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bench.conf");
        fs::write(
            &cfg,
            "[run]\nproblem = p3-actuator20\nruns = 2\nbudget = 6\ninit = 8\nseed = 5\n\n[eee]\nseeds = 4\nestimator-hidden = 8\ncandidates = 16\n",
        )
        .unwrap();
        let mut outs = Vec::new();
        for (i, workers) in ["1", "2"].iter().enumerate() {
            let out = dir.path().join(format!("o{i}"));
            let (code, _, stderr) = eee(
                &["--config", cfg.to_str().unwrap(), "--workers", workers, "--output", out.to_str().unwrap()],
                &[],
            );
            assert_eq!(code, 0, "{stderr}");
            outs.push(out);
        }
        for f in ["runs.csv", "aggregate.csv"] {
            assert_eq!(fs::read(outs[0].join(f)).unwrap(), fs::read(outs[1].join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn config_errors_exit_with_two() {
        let (code, _, err) = eee(&["--problem", "p2-cycle11", "--algo", "pso", "--kernel", "mlp"], &[]);
        assert_eq!(code, 2);
        assert!(err.contains("kernel") && err.contains("pso"), "{err}");
        assert_eq!(eee(&["--algo", "random"], &[]).0, 2);
        assert_eq!(eee(&["--problem", "p9-none", "--algo", "random"], &[]).0, 2);
        assert_eq!(eee(&["--no-such-flag"], &[]).0, 2);
        let (code, out, _) = eee(&["--help"], &[]);
        assert_eq!(code, 0);
        assert!(out.contains("--external-cmd"));
    }

    #[test]
    fn aborted_runs_exit_with_one() {
        let dir = tempfile::tempdir().unwrap();
        let (code, _, err) = eee(
            &[
                "--external-cmd", "true", "--external-dim", "3", "--external-threshold", "0.1", "--runs", "2",
                "--init", "4", "--budget", "2", "--output", dir.path().join("o").to_str().unwrap(),
            ],
            &[],
        );
        assert_eq!(code, 1, "{err}");
        assert!(err.contains("every run aborted"));
    }

    #[test]
    fn environment_overrides_the_flag_seed() {
        let dir = tempfile::tempdir().unwrap();
        let run = |seed_flag: &str, env: &[(&str, &str)], name: &str| {
            let out = dir.path().join(name);
            let args = [
                "--problem", "p1-spectra2", "--algo", "random", "--runs", "2", "--budget", "5", "--seed", seed_flag,
                "--output", out.to_str().unwrap(),
            ];
            assert_eq!(eee(&args, env).0, 0);
            fs::read(out.join("runs.csv")).unwrap()
        };
        let a = run("1", &[("EEE_SEED", "9")], "a");
        let b = run("9", &[], "b");
        let c = run("1", &[], "c");
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn readme_config_example_parses() {
        let readme = include_str!("../../../README.md");
        let start = readme.find("# bench.conf").expect("example present");
        let block = &readme[start..start + readme[start..].find("```").unwrap()];
        let cfg = Settings::parse_file(block).unwrap().resolve().unwrap();
        assert_eq!((cfg.runs, cfg.budget, cfg.eee.seeds), (20, 1000, 64));
    }
}
