//! The subcommands, callable in-process.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use funmix_core::basis::{linspace, BasisSystem};
use funmix_core::model::FunctionalDataset;
use funmix_core::posterior::{elbow_select, information_criteria, pool_chains, summarize, ContrastSpec, IcTable};
use funmix_core::sampler::{run_chain, ChainOutput, SamplerConfig};
use funmix_core::simulate::simulate_dataset;
use funmix_core::validation::{
    conjugate_checks, geweke_test, marginalization_check, ConjugateCase, GewekeConfig, LoglikFn, MarginalCase,
};

use crate::config::RunConfig;
use crate::error::{io_err, CliError, Result};
use crate::io::{
    chain_dir_name, load_long_table, read_fit, write_chain, write_ic_table, write_long_table, write_summary, ChainEntry,
    Manifest,
};

/// Geweke z-scores beyond this bound fail the validation suite.
pub const GEWEKE_LIMIT: f64 = 4.0;

/// Simulate the default truth, writing the long table and the truth JSON.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<(PathBuf, PathBuf)> {
    let (data, truth) = simulate_dataset(&cfg.simulate, None)?;
    let data_path = cfg.data_path();
    let truth_path = cfg.truth_path();
    for p in [&data_path, &truth_path] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    write_long_table(&data, &data_path)?;
    let json = serde_json::to_string_pretty(&truth).map_err(|e| CliError::Data(format!("serializing truth: {e}")))?;
    fs::write(&truth_path, json).map_err(io_err(&truth_path))?;
    Ok((data_path, truth_path))
}

fn fit_chains(data: &FunctionalDataset, basis: &BasisSystem, cfg: &RunConfig, k: usize) -> Result<Vec<ChainOutput>> {
    let prior = cfg.prior.for_k(k)?;
    cfg.sampler.validate()?;
    if cfg.fit.chains == 0 {
        return Err(CliError::Data("fit.chains must be at least 1".into()));
    }
    let configs: Vec<SamplerConfig> = (0..cfg.fit.chains)
        .map(|c| SamplerConfig {
            seed: cfg.sampler.seed + c as u64,
            ..cfg.sampler.clone()
        })
        .collect();
    let m = cfg.dims.m;
    // chains are independent; results are collected in chain order
    std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|sc| scope.spawn(|| run_chain(data, basis, &prior, sc, k, m)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked").map_err(CliError::from))
            .collect()
    })
}

fn hex(v: u64) -> String {
    format!("{v:016x}")
}

/// Fit the model and write one draws directory per chain plus a manifest.
pub fn cmd_fit(cfg: &RunConfig) -> Result<PathBuf> {
    let data = load_long_table(&cfg.data_path())?;
    let basis = cfg.basis.build()?;
    let k = cfg.dims.k;
    if k == 1 {
        eprintln!("warning: K = 1 makes every membership equal to 1; the mixed-membership structure is vacuous");
    }
    let chains = fit_chains(&data, &basis, cfg, k)?;
    let out = cfg.output_dir();
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let mut entries = Vec::with_capacity(chains.len());
    for (c, chain) in chains.iter().enumerate() {
        let dir = chain_dir_name(c);
        write_chain(chain, &out.join(&dir))?;
        entries.push(ChainEntry {
            dir,
            seed: chain.seed,
            n_draws: chain.draws.len(),
            acceptance: chain.acceptance,
            final_scales: chain.final_scales,
        });
    }
    let dims = chains[0].draws[0].dims();
    let manifest = Manifest {
        format: 1,
        data: cfg.io.data.display().to_string(),
        data_fingerprint: hex(data.fingerprint()),
        n_subjects: dims.n_subjects,
        n_channels: dims.n_channels,
        n_features: dims.n_features,
        n_eigen: dims.n_eigen,
        n_basis: dims.n_basis,
        basis: cfg.basis.clone(),
        sampler: cfg.sampler.clone(),
        chains: entries,
    };
    manifest.write(&out)?;
    Ok(out)
}

/// Summaries of a previous fit, written to `<output>/summary`.
pub fn cmd_summarize(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = load_long_table(&cfg.data_path())?;
    let out = cfg.output_dir();
    let (manifest, chains) = read_fit(&out)?;
    if manifest.fingerprint()? != data.fingerprint() {
        return Err(CliError::Data(format!(
            "{} differs from the data the fit in {} was run on",
            cfg.data_path().display(),
            out.display()
        )));
    }
    let basis = manifest.basis.build()?;
    let [lo, hi] = basis.boundary();
    if cfg.summarize.grid_len < 2 {
        return Err(CliError::Data("summarize.grid_len must be at least 2".into()));
    }
    let grid = linspace(lo, hi, cfg.summarize.grid_len);
    let pooled = pool_chains(&chains, &basis, &grid)?;
    let contrast = match cfg.summarize.contrast_groups.as_slice() {
        [] => None,
        [a, b] => {
            if cfg.summarize.contrast_feature == 0 {
                return Err(CliError::Data("summarize.contrast_feature counts from 1".into()));
            }
            Some(ContrastSpec {
                labels: data.subjects().iter().map(|s| s.group.clone()).collect(),
                group_a: a.clone(),
                group_b: b.clone(),
                feature: cfg.summarize.contrast_feature - 1,
            })
        }
        other => {
            return Err(CliError::Data(format!(
                "summarize.contrast_groups needs exactly two labels, got {}",
                other.len()
            )))
        }
    };
    let summary = summarize(&pooled, &basis, &grid, contrast.as_ref())?;
    write_summary(&summary, &data, &out.join("summary"))
}

/// Outcome of `select-k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub table: IcTable,
    pub elbow: std::result::Result<usize, String>,
    pub table_path: PathBuf,
}

/// Fit every candidate `K` and write the criterion table and the choices.
pub fn cmd_select_k(cfg: &RunConfig, k_list: &[usize]) -> Result<Selection> {
    if k_list.is_empty() || k_list.contains(&0) {
        return Err(CliError::Data("the K list must hold positive values".into()));
    }
    let data = load_long_table(&cfg.data_path())?;
    let basis = cfg.basis.build()?;
    let single = RunConfig {
        fit: crate::config::FitSection { chains: 1 },
        ..cfg.clone()
    };
    let mut chains = Vec::with_capacity(k_list.len());
    for &k in k_list {
        chains.extend(fit_chains(&data, &basis, &single, k)?);
    }
    let table = information_criteria(&data, &basis, &chains)?;
    let elbow = elbow_select(&table).map_err(|e| e.to_string());
    let dir = cfg.output_dir().join("select_k");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let table_path = dir.join("ic_table.csv");
    write_ic_table(&table, &table_path)?;
    let mut choice = String::new();
    match &elbow {
        Ok(k) => writeln!(choice, "elbow = {k}").unwrap(),
        Err(e) => writeln!(choice, "# elbow unavailable: {e}").unwrap(),
    }
    if let Some(k) = table.best_aic() {
        writeln!(choice, "aic = {k}").unwrap();
    }
    if let Some(k) = table.best_bic() {
        writeln!(choice, "bic = {k}").unwrap();
    }
    let choice_path = dir.join("selection.toml");
    fs::write(&choice_path, choice).map_err(io_err(&choice_path))?;
    Ok(Selection {
        table,
        elbow,
        table_path,
    })
}

/// Text report of the oracle suite.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub text: String,
    pub passed: bool,
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Marginalization, conjugate-update and Geweke checks. `marginal` is the
/// marginal log-likelihood under test.
pub fn cmd_validate(cfg: &RunConfig, marginal: LoglikFn) -> Result<ValidationReport> {
    let v = &cfg.validate;
    let mut text = String::new();

    let cases: Vec<MarginalCase> = marginalization_check(v.marginal_instances, v.marginal_draws, v.seed, marginal)?;
    let ok_count = cases.iter().filter(|c| c.passed()).count();
    let needed = v.marginal_instances - v.marginal_instances / 20;
    let marginal_ok = ok_count >= needed;
    for (i, c) in cases.iter().enumerate() {
        writeln!(
            text,
            "  marginalization {:>3}: exact {:.6} monte-carlo {:.6} se {:.2e} z {:+.2}",
            i + 1,
            c.marginal,
            c.monte_carlo,
            c.std_error,
            c.z
        )
        .unwrap();
    }
    writeln!(
        text,
        "{} marginalization: {ok_count}/{} instances within 3 standard errors (need {needed})",
        verdict(marginal_ok),
        cases.len()
    )
    .unwrap();

    let conj: Vec<ConjugateCase> = conjugate_checks(v.conjugate_sets, v.conjugate_draws, v.seed + 1)?;
    for c in &conj {
        writeln!(
            text,
            "  conjugate {:<6} set {}: sample {:.6} quadrature {:.6} z {:+.2}",
            c.block.name(),
            c.set + 1,
            c.sample_mean,
            c.quadrature_mean,
            c.z
        )
        .unwrap();
    }
    let conj_ok = conj.iter().all(ConjugateCase::passed);
    writeln!(
        text,
        "{} conjugate updates: {}/{} posterior means within 3 standard errors",
        verdict(conj_ok),
        conj.iter().filter(|c| c.passed()).count(),
        conj.len()
    )
    .unwrap();

    let gcfg = GewekeConfig {
        rounds: v.geweke_rounds,
        seed: v.seed + 2,
        ..GewekeConfig::default()
    };
    let stats = geweke_test(&gcfg)?;
    for s in &stats {
        writeln!(
            text,
            "  geweke {:<22} prior {:+.5} chain {:+.5} z {:+.2}",
            s.name, s.prior_mean, s.chain_mean, s.z
        )
        .unwrap();
    }
    let geweke_ok = stats.iter().all(|s| s.passed(GEWEKE_LIMIT));
    writeln!(
        text,
        "{} geweke: {}/{} summaries with |z| < {GEWEKE_LIMIT} over {} rounds",
        verdict(geweke_ok),
        stats.iter().filter(|s| s.passed(GEWEKE_LIMIT)).count(),
        stats.len(),
        v.geweke_rounds
    )
    .unwrap();

    Ok(ValidationReport {
        text,
        passed: marginal_ok && conj_ok && geweke_ok,
    })
}

/// Parse a comma-separated list of positive integers.
pub fn parse_k_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .ok()
                .filter(|&k| k > 0)
                .ok_or_else(|| CliError::Data(format!("'{p}' is not a positive integer")))
        })
        .collect()
}
