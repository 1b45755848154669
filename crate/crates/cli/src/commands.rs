use std::fmt::Write as _;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use adasize::bench::{self, reference_optimum, CompareTable, DEFAULT_REFERENCE_TOLERANCE};
use adasize::data::{generate_synthetic, normalize, parse_sparse_text, shuffle_and_split, write_sparse_text};
use adasize::erm::smoothness_constant;
use adasize::schedule::{BoundsReport, WstarEstimate};
use adasize::verify::{self, CheckReport, REPORT_HEADER};
use adasize::{Dataset, LabelMap, Method, RiskSpec, RunConfig, SmoothnessMode};
use anyhow::{Context, Result};

use crate::args::Settings;
use crate::output::{sha256_hex, write_atomic, Manifest};
use crate::UsageError;

/// Training data, optional held-out data and the bytes the manifest hashes.
struct Loaded {
    train: Dataset,
    test: Option<Dataset>,
    sha256: String,
}

fn read_dataset(path: &Path, labels: &LabelMap, name: &str) -> Result<(Dataset, Vec<u8>)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let d = parse_sparse_text(BufReader::new(bytes.as_slice()), labels, name, None)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok((d, bytes))
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "data".into())
}

fn load(s: &Settings) -> Result<Loaded> {
    let labels = match &s.label_map {
        Some(spec) => LabelMap::parse(spec).map_err(|e| UsageError(format!("--label-map: {e}")))?,
        None => LabelMap::signed(),
    };
    let (all, mut hashed) = match (&s.dataset, s.gen) {
        (Some(path), _) => read_dataset(path, &labels, &file_stem(path))?,
        (None, Some((n, dim, sparsity))) => {
            let (d, _) = generate_synthetic(n, dim, sparsity, s.seed).map_err(|e| UsageError(format!("--gen: {e}")))?;
            let mut bytes = Vec::new();
            write_sparse_text(&d, &mut bytes)?;
            (d, bytes)
        }
        (None, None) => return Err(UsageError("a dataset is required: pass --dataset or --gen".into()).into()),
    };
    let (train, mut test) = match s.train_count {
        Some(k) => {
            let (a, b) = shuffle_and_split(&all, k, s.seed).map_err(|e| UsageError(format!("--train-count: {e}")))?;
            (a, if b.is_empty() { None } else { Some(b) })
        }
        None => (all, None),
    };
    if let Some(path) = &s.test {
        let (t, bytes) = read_dataset(path, &labels, &file_stem(path))?;
        hashed.extend_from_slice(&bytes);
        test = Some(t);
    }
    let (train, test) = if s.normalize { (normalize(&train), test.as_ref().map(normalize)) } else { (train, test) };
    Ok(Loaded { train, test, sha256: sha256_hex(&hashed) })
}

fn risk_spec(s: &Settings, train: Option<&Dataset>) -> Result<(RiskSpec, Option<String>)> {
    let (m, note) = match (s.m_mode, train) {
        (SmoothnessMode::PaperConservative, _) => (1.0, None),
        (SmoothnessMode::Tight, Some(d)) => (smoothness_constant(s.loss, d, SmoothnessMode::Tight), None),
        (SmoothnessMode::Tight, None) => {
            let m = match s.loss {
                adasize::LossModel::Logistic => 0.25,
                adasize::LossModel::Squared => 1.0,
            };
            (m, Some(format!("note: no dataset given; tight M assumes unit-norm samples (M = {m})")))
        }
    };
    let spec = RiskSpec::new(s.loss, s.c, s.alpha, s.gamma, m).map_err(|e| UsageError(e.to_string()))?;
    Ok((spec, note))
}

fn wstar(s: &Settings) -> Result<WstarEstimate> {
    Ok(match s.wstar_sq {
        Some(v) => WstarEstimate::user(v).map_err(|e| UsageError(format!("--wstar-sq: {e}")))?,
        None => WstarEstimate::zero(),
    })
}

fn sizes(s: &Settings, available: usize) -> Result<(usize, usize)> {
    let n_total = s.n_total.unwrap_or(available);
    if n_total == 0 || n_total > available {
        return Err(UsageError(format!("--N must lie in 1..={available}, got {n_total}")).into());
    }
    let m0 = s.m0.unwrap_or(400.min(n_total));
    if m0 == 0 || m0 > n_total {
        return Err(UsageError(format!("--m0 must lie in 1..={n_total}, got {m0}")).into());
    }
    Ok((m0, n_total))
}

fn run_config(s: &Settings, method: Method, adaptive: bool, m0: usize, n_total: usize) -> Result<RunConfig> {
    let mut c = RunConfig::new(method, adaptive, if adaptive { m0 } else { n_total }, n_total);
    c.budget_mode = s.budget;
    c.seed = s.seed;
    c.eval_every = s.eval_every;
    c.pass_cap = s.pass_cap;
    c.wstar = wstar(s)?;
    Ok(c)
}

pub fn trace_file_name(config: &RunConfig) -> String {
    format!("trace_{}_{}_seed{}.csv", config.method, if config.adaptive { "ada" } else { "fixed" }, config.seed)
}

fn manifest_for(command: &str, s: &Settings, loaded: &Loaded) -> Manifest {
    let mut m = Manifest::new(command);
    for (k, v) in s.to_config_lines() {
        m.set(&k, v);
    }
    m.set("dataset_name", loaded.train.name().to_string());
    m.set("dataset_sha256", loaded.sha256.clone());
    m
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn gen(s: &Settings) -> Result<String> {
    let (n, dim, sparsity) = s.gen.ok_or_else(|| UsageError("gen needs --gen n,dim,sparsity".into()))?;
    let (d, w_true) = generate_synthetic(n, dim, sparsity, s.seed).map_err(|e| UsageError(format!("--gen: {e}")))?;
    prepare_out(&s.out)?;
    let mut bytes = Vec::new();
    write_sparse_text(&d, &mut bytes)?;
    let data_path = s.out.join(format!("synthetic_n{n}_d{dim}_seed{}.svm", s.seed));
    let w_path = s.out.join(format!("synthetic_n{n}_d{dim}_seed{}_wtrue.txt", s.seed));
    let w_text: String = w_true.iter().map(|v| format!("{v:?}\n")).collect();
    write_atomic(&data_path, &bytes)?;
    write_atomic(&w_path, w_text.as_bytes())?;
    Ok(format!("wrote {} ({} samples, dim {dim})\nwrote {}\n", data_path.display(), d.len(), w_path.display()))
}

pub fn bounds(s: &Settings) -> Result<String> {
    let n_total = s.n_total.ok_or_else(|| UsageError("bounds needs --N".into()))?;
    let m0 = s.m0.ok_or_else(|| UsageError("bounds needs --m0".into()))?;
    let train = match (&s.dataset, s.gen) {
        (None, None) => None,
        _ => Some(load(s)?.train),
    };
    let (spec, note) = risk_spec(s, train.as_ref())?;
    let report = BoundsReport::new(&spec, m0, n_total, &wstar(s)?, s.rho).map_err(|e| UsageError(e.to_string()))?;
    let mut out = String::new();
    if let Some(n) = note {
        out.push_str(&n);
        out.push('\n');
    }
    out.push_str(&if s.csv { report.render_csv() } else { report.render_text() });
    Ok(out)
}

fn stage_table(stages: &[adasize::StageReport], n_total: usize) -> String {
    let mut out = format!("{:>8} {:>10} {:>10} {:>14} {:>14} {:>9}\n", "n", "iterations", "passes", "grad_norm", "threshold", "exhausted");
    for st in stages {
        let _ = writeln!(
            out,
            "{:>8} {:>10} {:>10.3} {:>14.6e} {:>14.6e} {:>9}",
            st.n,
            st.iterations,
            bench::effective_passes(st.grad_evals_at_exit, n_total),
            st.exit_grad_norm,
            st.threshold,
            st.budget_exhausted
        );
    }
    out
}

pub fn run(s: &Settings) -> Result<String> {
    let method = s.method.ok_or_else(|| UsageError("run needs --method {gd|agd|svrg}".into()))?;
    let loaded = load(s)?;
    let (m0, n_total) = sizes(s, loaded.train.len())?;
    let (spec, _) = risk_spec(s, Some(&loaded.train))?;
    let config = run_config(s, method, s.adaptive, m0, n_total)?;
    let output = adasize::driver::run(&config, &spec, &loaded.train, loaded.test.as_ref())?;
    let reference = reference_optimum(&spec, &loaded.train.prefix(n_total)?, DEFAULT_REFERENCE_TOLERANCE)?;
    let mut csv = Vec::new();
    bench::emit_csv(&output.trace, &reference, &mut csv)?;

    prepare_out(&s.out)?;
    let trace_name = trace_file_name(&config);
    let mut manifest = manifest_for("run", s, &loaded);
    manifest.output(&trace_name, &csv);
    let manifest_name = format!("manifest_{}_seed{}.txt", config.label(), config.seed);
    write_atomic(&s.out.join(&trace_name), &csv)?;
    write_atomic(&s.out.join(&manifest_name), manifest.render().as_bytes())?;

    let mut out = stage_table(&output.stages, n_total);
    let _ = writeln!(out, "wrote {}", s.out.join(&trace_name).display());
    Ok(out)
}

fn compare_configs(s: &Settings, m0: usize, n_total: usize) -> Result<Vec<RunConfig>> {
    let methods: Vec<Method> = match s.method {
        Some(m) => vec![m],
        None => Method::ALL.to_vec(),
    };
    let mut configs = Vec::new();
    for m in methods {
        configs.push(run_config(s, m, true, m0, n_total)?);
        configs.push(run_config(s, m, false, m0, n_total)?);
    }
    Ok(configs)
}

pub fn compare(s: &Settings) -> Result<String> {
    let loaded = load(s)?;
    let (m0, n_total) = sizes(s, loaded.train.len())?;
    let (spec, _) = risk_spec(s, Some(&loaded.train))?;
    let configs = compare_configs(s, m0, n_total)?;
    let table: CompareTable = bench::compare_matrix(&configs, &spec, &loaded.train, loaded.test.as_ref())?;

    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    for (config, run) in configs.iter().zip(&table.runs) {
        if let Ok(out) = run {
            let mut csv = Vec::new();
            bench::emit_csv(&out.trace, &table.reference, &mut csv)?;
            files.push((trace_file_name(config), csv));
        }
    }
    files.push(("summary.csv".into(), table.render_csv().into_bytes()));
    let mut manifest = manifest_for("compare", s, &loaded);
    for (name, bytes) in &files {
        manifest.output(name, bytes);
    }
    files.push(("manifest.txt".into(), manifest.render().into_bytes()));

    prepare_out(&s.out)?;
    for (name, bytes) in &files {
        write_atomic(&s.out.join(name), bytes)?;
    }
    let mut out = if s.csv { table.render_csv() } else { table.render_text() };
    let _ = writeln!(out, "wrote {} files to {}", files.len(), s.out.display());
    Ok(out)
}

const ALL_CHECKS: &[&str] = &["fd", "svrg", "lemma1", "lemma2", "prop1", "theorem"];

fn selected_checks(s: &Settings) -> Result<Vec<String>> {
    let list: Vec<String> = match &s.checks {
        Some(c) => c.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect(),
        None => ALL_CHECKS.iter().map(|x| x.to_string()).collect(),
    };
    if let Some(bad) = list.iter().find(|c| !ALL_CHECKS.contains(&c.as_str())) {
        return Err(UsageError(format!("unknown check `{bad}`; expected one of {}", ALL_CHECKS.join(","))).into());
    }
    Ok(list)
}

pub fn verify(s: &Settings) -> Result<String> {
    let checks = selected_checks(s)?;
    let loaded = load(s)?;
    let base = &loaded.train;
    let (m0, n_total) = sizes(s, base.len())?;
    let (spec, _) = risk_spec(s, Some(base))?;
    let trials = s.trials.unwrap_or(200);
    let draws = s.draws.unwrap_or(100);
    let mut reports: Vec<CheckReport> = Vec::new();
    for check in &checks {
        match check.as_str() {
            "fd" => {
                let view = base.prefix(n_total.min(1000))?;
                for loss in [adasize::LossModel::Logistic, adasize::LossModel::Squared] {
                    let sp = RiskSpec { loss, m: smoothness_constant(loss, base, SmoothnessMode::Tight).max(1e-12), ..spec };
                    reports.push(verify::fd_gradient_check(&sp, &view, trials, s.seed)?);
                }
            }
            "svrg" => {
                for n in [1, 5, 17, 50].into_iter().filter(|&n| n <= base.len()) {
                    reports.push(verify::svrg_direction_check(&spec, &base.prefix(n)?, trials, s.seed)?);
                }
            }
            "lemma1" => reports.push(verify::lemma1_check(&spec, base, m0, (2 * m0).min(base.len()), draws, s.seed)?),
            "lemma2" => reports.push(verify::lemma2_check(&spec, base, m0.min(base.len() / 4).max(1), draws, s.seed)?),
            "prop1" => reports.push(verify::proposition1_check(&spec, base, m0.min(base.len() / 2), draws, s.seed)?),
            "theorem" => {
                for method in [Method::Agd, Method::Svrg] {
                    let (r, _) = verify::theorem_sn_sufficiency_check(method, &spec, base, m0, n_total, draws, s.seed)?;
                    reports.push(r);
                }
            }
            _ => unreachable!("validated above"),
        }
    }
    let mut csv = format!("{REPORT_HEADER}\n");
    for r in &reports {
        csv.push_str(&r.csv_line());
        csv.push('\n');
    }
    prepare_out(&s.out)?;
    let path: PathBuf = s.out.join("checks.csv");
    write_atomic(&path, csv.as_bytes())?;
    let mut out = csv;
    if !s.csv {
        for r in &reports {
            let _ = writeln!(out, "# {}: {}", r.name, r.notes);
        }
    }
    let _ = writeln!(out, "wrote {}", path.display());
    Ok(out)
}
