//! File formats: the long data table, chain directories with their
//! manifest, and the summary and criterion tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use funmix_core::model::{FunctionalDataset, ModelDims, ModelState, SubjectData};
use funmix_core::posterior::{IcTable, PosteriorSummary};
use funmix_core::sampler::{Acceptance, ChainOutput, ProposalScales, SamplerConfig};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::BasisSection;
use crate::error::{csv_err, io_err, CliError, Result};

pub const LONG_HEADER: [&str; 5] = ["subject", "channel", "group", "t", "y"];

/// Fixed-format float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(csv_err(path))
}

fn write_rows<I, R>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = writer(path)?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn parse_f64(path: &Path, line: u64, field: &str, what: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| CliError::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("{what} value '{field}' is not a number"),
    })
}

struct SubjectRecords {
    group: Option<String>,
    channels: BTreeMap<String, Vec<(f64, f64)>>,
}

/// Read a long table with header `subject,channel,group,t,y`.
///
/// Channels are ordered lexicographically, subjects by first appearance, and
/// every subject's grid is sorted ascending.
pub fn load_long_table(path: &Path) -> Result<FunctionalDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err(path))?;
    let header = reader.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(LONG_HEADER.iter().copied()) {
        return Err(CliError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header '{}', found '{}'", LONG_HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut order: Vec<String> = Vec::new();
    let mut subjects: BTreeMap<String, SubjectRecords> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(csv_err(path))?;
        let line = record.position().map_or(0, |p| p.line());
        let (subject, channel, group) = (&record[0], &record[1], &record[2]);
        if subject.is_empty() || channel.is_empty() {
            return Err(CliError::Parse {
                path: path.to_path_buf(),
                line,
                message: "subject and channel must be non-empty".into(),
            });
        }
        let t = parse_f64(path, line, &record[3], "t")?;
        let y = parse_f64(path, line, &record[4], "y")?;
        if !t.is_finite() || !y.is_finite() {
            return Err(CliError::Parse {
                path: path.to_path_buf(),
                line,
                message: "t and y must be finite".into(),
            });
        }
        let group = (!group.is_empty()).then(|| group.to_string());
        let entry = subjects.entry(subject.to_string()).or_insert_with(|| {
            order.push(subject.to_string());
            SubjectRecords {
                group: group.clone(),
                channels: BTreeMap::new(),
            }
        });
        if entry.group != group {
            return Err(CliError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("subject {subject} has conflicting group labels"),
            });
        }
        let points = entry.channels.entry(channel.to_string()).or_default();
        if points.iter().any(|&(s, _)| s == t) {
            return Err(CliError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("duplicate record for subject {subject}, channel {channel}, t = {t}"),
            });
        }
        points.push((t, y));
    }
    if order.is_empty() {
        return Err(CliError::Data(format!("{}: no data rows", path.display())));
    }

    let channels: Vec<String> = subjects
        .values()
        .flat_map(|s| s.channels.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut out = Vec::with_capacity(order.len());
    for id in &order {
        let mut rec = subjects.remove(id).expect("subject recorded");
        for c in &channels {
            if !rec.channels.contains_key(c) {
                return Err(CliError::Data(format!("subject {id} has no observations for channel {c}")));
            }
        }
        for points in rec.channels.values_mut() {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        let reference = &channels[0];
        let grid: Vec<f64> = rec.channels[reference].iter().map(|p| p.0).collect();
        for c in &channels[1..] {
            let other: Vec<f64> = rec.channels[c].iter().map(|p| p.0).collect();
            if other != grid {
                return Err(CliError::Data(format!(
                    "subject {id}: grid of channel {c} differs from the grid of channel {reference}"
                )));
            }
        }
        let y = DMatrix::from_fn(grid.len(), channels.len(), |r, j| rec.channels[&channels[j]][r].1);
        out.push(SubjectData {
            id: id.clone(),
            group: rec.group,
            grid,
            y,
        });
    }
    Ok(FunctionalDataset::new(channels, out)?)
}

pub fn write_long_table(data: &FunctionalDataset, path: &Path) -> Result<()> {
    let mut rows = Vec::with_capacity(data.n_obs());
    for s in data.subjects() {
        for (j, c) in data.channels().iter().enumerate() {
            for (r, &t) in s.grid.iter().enumerate() {
                rows.push(vec![
                    s.id.clone(),
                    c.clone(),
                    s.group.clone().unwrap_or_default(),
                    fmt_f64(t),
                    fmt_f64(s.y[(r, j)]),
                ]);
            }
        }
    }
    write_rows(path, &strings(&LONG_HEADER), rows)
}

/// Parameter blocks stored as one CSV each inside a chain's `draws/`
/// directory. Column indices in headers start at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    Scalars,
    Nu,
    Phi,
    Chi,
    Z,
    Pi,
    Sigma2,
    Shrinkage,
}

impl Block {
    const ALL: [Block; 8] = [
        Block::Scalars,
        Block::Nu,
        Block::Phi,
        Block::Chi,
        Block::Z,
        Block::Pi,
        Block::Sigma2,
        Block::Shrinkage,
    ];

    fn file(self) -> &'static str {
        match self {
            Block::Scalars => "scalars.csv",
            Block::Nu => "nu.csv",
            Block::Phi => "phi.csv",
            Block::Chi => "chi.csv",
            Block::Z => "z.csv",
            Block::Pi => "pi.csv",
            Block::Sigma2 => "sigma2.csv",
            Block::Shrinkage => "shrinkage.csv",
        }
    }

    fn columns(self, d: &ModelDims) -> Vec<String> {
        let (n, j, k, m, p) = (d.n_subjects, d.n_channels, d.n_features, d.n_eigen, d.n_basis);
        let mut cols = Vec::new();
        match self {
            Block::Scalars => cols.extend(strings(&["log_posterior", "eta", "lambda_nu", "lambda_phi"])),
            Block::Nu => {
                for a in 1..=k {
                    for b in 1..=p {
                        cols.push(format!("nu_k{a}_p{b}"));
                    }
                }
            }
            Block::Phi => {
                for a in 1..=k {
                    for b in 1..=m {
                        for c in 1..=p {
                            cols.push(format!("phi_k{a}_m{b}_p{c}"));
                        }
                    }
                }
            }
            Block::Chi => {
                for a in 1..=n {
                    for b in 1..=j {
                        for c in 1..=m {
                            cols.push(format!("chi_i{a}_j{b}_m{c}"));
                        }
                    }
                }
            }
            Block::Z => {
                for a in 1..=n {
                    for b in 1..=j {
                        for c in 1..=k {
                            cols.push(format!("z_i{a}_j{b}_k{c}"));
                        }
                    }
                }
            }
            Block::Pi => {
                for a in 1..=n {
                    for b in 1..=k {
                        cols.push(format!("pi_i{a}_k{b}"));
                    }
                }
            }
            Block::Sigma2 => {
                for a in 1..=j {
                    cols.push(format!("sigma2_j{a}"));
                }
            }
            Block::Shrinkage => {
                for a in 1..=k {
                    cols.push(format!("a1_k{a}"));
                }
                for a in 1..=k {
                    cols.push(format!("a2_k{a}"));
                }
                for a in 1..=m {
                    for b in 1..=k {
                        cols.push(format!("delta_m{a}_k{b}"));
                    }
                }
                for a in 1..=k {
                    for b in 1..=p {
                        for c in 1..=m {
                            cols.push(format!("gamma_k{a}_p{b}_m{c}"));
                        }
                    }
                }
            }
        }
        cols
    }

    fn values(self, s: &ModelState, log_posterior: f64) -> Vec<f64> {
        let mut v = Vec::new();
        match self {
            Block::Scalars => v.extend([log_posterior, s.allocations.eta, s.lambda_nu, s.lambda_phi]),
            Block::Nu => s.features.nu.iter().for_each(|nu| v.extend(nu.iter())),
            Block::Phi => s.features.phi.iter().flatten().for_each(|phi| v.extend(phi.iter())),
            Block::Chi => {
                for chi in &s.scores.chi {
                    for r in 0..chi.nrows() {
                        v.extend(chi.row(r).iter());
                    }
                }
            }
            Block::Z => {
                for z in &s.allocations.z {
                    for r in 0..z.nrows() {
                        v.extend(z.row(r).iter());
                    }
                }
            }
            Block::Pi => {
                let pi = &s.allocations.pi;
                for r in 0..pi.nrows() {
                    v.extend(pi.row(r).iter());
                }
            }
            Block::Sigma2 => v.extend(s.noise.sigma2.iter()),
            Block::Shrinkage => {
                let sh = &s.shrinkage;
                v.extend(sh.a1.iter());
                v.extend(sh.a2.iter());
                for r in 0..sh.delta.nrows() {
                    v.extend(sh.delta.row(r).iter());
                }
                for g in &sh.gamma {
                    for r in 0..g.nrows() {
                        v.extend(g.row(r).iter());
                    }
                }
            }
        }
        v
    }

    /// Fill `s` from `v`; returns the log posterior for the scalar block.
    fn fill(self, s: &mut ModelState, v: &[f64]) -> Option<f64> {
        let mut it = v.iter().copied();
        let mut next = || it.next().expect("row length checked against the header");
        match self {
            Block::Scalars => {
                let lp = next();
                s.allocations.eta = next();
                s.lambda_nu = next();
                s.lambda_phi = next();
                return Some(lp);
            }
            Block::Nu => s.features.nu.iter_mut().flat_map(|nu| nu.iter_mut()).for_each(|x| *x = next()),
            Block::Phi => s
                .features
                .phi
                .iter_mut()
                .flatten()
                .flat_map(|phi| phi.iter_mut())
                .for_each(|x| *x = next()),
            Block::Chi => {
                for chi in s.scores.chi.iter_mut() {
                    fill_row_major(chi, &mut next);
                }
            }
            Block::Z => {
                for z in s.allocations.z.iter_mut() {
                    fill_row_major(z, &mut next);
                }
            }
            Block::Pi => fill_row_major(&mut s.allocations.pi, &mut next),
            Block::Sigma2 => s.noise.sigma2.iter_mut().for_each(|x| *x = next()),
            Block::Shrinkage => {
                let sh = &mut s.shrinkage;
                sh.a1.iter_mut().for_each(|x| *x = next());
                sh.a2.iter_mut().for_each(|x| *x = next());
                fill_row_major(&mut sh.delta, &mut next);
                for g in sh.gamma.iter_mut() {
                    fill_row_major(g, &mut next);
                }
            }
        }
        None
    }
}

fn fill_row_major(m: &mut DMatrix<f64>, next: &mut impl FnMut() -> f64) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            m[(r, c)] = next();
        }
    }
}

/// One chain's entry in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainEntry {
    pub dir: String,
    pub seed: u64,
    pub n_draws: usize,
    pub acceptance: Acceptance,
    pub final_scales: ProposalScales,
}

/// Description of a fit output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: u32,
    pub data: String,
    /// Hexadecimal fingerprint of the fitted data.
    pub data_fingerprint: String,
    pub n_subjects: usize,
    pub n_channels: usize,
    pub n_features: usize,
    pub n_eigen: usize,
    pub n_basis: usize,
    pub basis: BasisSection,
    pub sampler: SamplerConfig,
    pub chains: Vec<ChainEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.toml";

impl Manifest {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            n_subjects: self.n_subjects,
            n_channels: self.n_channels,
            n_features: self.n_features,
            n_eigen: self.n_eigen,
            n_basis: self.n_basis,
        }
    }

    pub fn fingerprint(&self) -> Result<u64> {
        u64::from_str_radix(&self.data_fingerprint, 16)
            .map_err(|_| CliError::Data(format!("manifest fingerprint '{}' is not hexadecimal", self.data_fingerprint)))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = toml::to_string(self).map_err(|e| CliError::Data(format!("serializing manifest: {e}")))?;
        fs::write(&path, text).map_err(io_err(&path))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        toml::from_str(&text).map_err(|source| CliError::Config { path, source })
    }
}

pub fn chain_dir_name(index: usize) -> String {
    format!("chain_{}", index + 1)
}

/// Write every draw of `chain` into `dir/draws/`.
pub fn write_chain(chain: &ChainOutput, dir: &Path) -> Result<()> {
    let draws_dir = dir.join("draws");
    create_dir(&draws_dir)?;
    let first = chain.draws.first().ok_or(funmix_core::FunmixError::EmptyChain)?;
    let dims = first.dims();
    for block in Block::ALL {
        let mut header = vec!["iteration".to_string()];
        header.extend(block.columns(&dims));
        let rows = chain.draws.iter().enumerate().map(|(d, s)| {
            let mut row = vec![chain.iterations[d].to_string()];
            row.extend(block.values(s, chain.log_posterior_trace[d]).into_iter().map(fmt_f64));
            row
        });
        write_rows(&draws_dir.join(block.file()), &header, rows)?;
    }
    Ok(())
}

/// Read a chain written by [`write_chain`].
pub fn read_chain(dir: &Path, dims: &ModelDims, entry: &ChainEntry, sampler: &SamplerConfig, fingerprint: u64) -> Result<ChainOutput> {
    let draws_dir = dir.join("draws");
    let mut states: Vec<ModelState> = Vec::new();
    let mut iterations: Vec<usize> = Vec::new();
    let mut trace: Vec<f64> = Vec::new();
    for block in Block::ALL {
        let path = draws_dir.join(block.file());
        let mut reader = csv::Reader::from_path(&path).map_err(csv_err(&path))?;
        let mut expected = vec!["iteration".to_string()];
        expected.extend(block.columns(dims));
        let header = reader.headers().map_err(csv_err(&path))?.clone();
        if header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(CliError::Parse {
                path: path.clone(),
                line: 1,
                message: "header does not match the manifest dimensions".into(),
            });
        }
        for (d, record) in reader.records().enumerate() {
            let record = record.map_err(csv_err(&path))?;
            let line = record.position().map_or(0, |p| p.line());
            let iteration: usize = record[0].parse().map_err(|_| CliError::Parse {
                path: path.clone(),
                line,
                message: format!("iteration '{}' is not an integer", &record[0]),
            })?;
            let values = record
                .iter()
                .skip(1)
                .map(|f| parse_f64(&path, line, f, "draw"))
                .collect::<Result<Vec<f64>>>()?;
            if block == Block::Scalars {
                states.push(ModelState::zeros(dims));
                iterations.push(iteration);
            } else if d >= states.len() || iterations[d] != iteration {
                return Err(CliError::Parse {
                    path: path.clone(),
                    line,
                    message: "draw does not match the iterations in scalars.csv".into(),
                });
            }
            if let Some(lp) = block.fill(&mut states[d], &values) {
                trace.push(lp);
            }
        }
    }
    if states.len() != entry.n_draws {
        return Err(CliError::Data(format!(
            "{}: found {} draws, manifest lists {}",
            dir.display(),
            states.len(),
            entry.n_draws
        )));
    }
    let mut config = sampler.clone();
    config.seed = entry.seed;
    Ok(ChainOutput {
        draws: states,
        iterations,
        accept_rates: entry.acceptance.rates(),
        acceptance: entry.acceptance,
        log_posterior_trace: trace,
        seed: entry.seed,
        config,
        final_scales: entry.final_scales,
        data_fingerprint: fingerprint,
    })
}

/// Read every chain listed in the manifest of `dir`.
pub fn read_fit(dir: &Path) -> Result<(Manifest, Vec<ChainOutput>)> {
    let manifest = Manifest::read(dir)?;
    let dims = manifest.dims();
    let fingerprint = manifest.fingerprint()?;
    let chains = manifest
        .chains
        .iter()
        .map(|e| read_chain(&dir.join(&e.dir), &dims, e, &manifest.sampler, fingerprint))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, chains))
}

/// Plot-ready summary tables in `dir`.
pub fn write_summary(summary: &PosteriorSummary, data: &FunctionalDataset, dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut written = Vec::new();
    let grid = &summary.grid;

    let path = dir.join("feature_means.csv");
    let rows = summary.feature_means.iter().enumerate().flat_map(|(k, b)| {
        grid.iter().enumerate().map(move |(t, &g)| {
            vec![(k + 1).to_string(), fmt_f64(g), fmt_f64(b.lo[t]), fmt_f64(b.median[t]), fmt_f64(b.hi[t])]
        })
    });
    write_rows(&path, &strings(&["feature", "t", "lo", "median", "hi"]), rows)?;
    written.push(path);

    let path = dir.join("covariance.csv");
    let rows = summary.cov_surfaces.iter().enumerate().flat_map(|(k, c)| {
        (0..grid.len()).flat_map(move |a| {
            (0..grid.len()).map(move |b| vec![(k + 1).to_string(), fmt_f64(grid[a]), fmt_f64(grid[b]), fmt_f64(c[(a, b)])])
        })
    });
    write_rows(&path, &strings(&["feature", "s", "t", "value"]), rows)?;
    written.push(path);

    let path = dir.join("eigenvalues.csv");
    let rows = summary.eigenpairs.iter().enumerate().flat_map(|(k, e)| {
        e.values.iter().enumerate().map(move |(m, &v)| vec![(k + 1).to_string(), (m + 1).to_string(), fmt_f64(v)])
    });
    write_rows(&path, &strings(&["feature", "m", "eigenvalue"]), rows)?;
    written.push(path);

    let path = dir.join("eigenfunctions.csv");
    let rows = summary.eigenpairs.iter().enumerate().flat_map(|(k, e)| {
        (0..e.functions.ncols()).flat_map(move |m| {
            grid.iter()
                .enumerate()
                .map(move |(t, &g)| vec![(k + 1).to_string(), (m + 1).to_string(), fmt_f64(g), fmt_f64(e.functions[(t, m)])])
        })
    });
    write_rows(&path, &strings(&["feature", "m", "t", "value"]), rows)?;
    written.push(path);

    let k_count = summary.membership_subject.ncols();
    let feature_cols = || (1..=k_count).map(|k| format!("feature_{k}"));

    let path = dir.join("membership_subject.csv");
    let mut header = strings(&["subject", "group"]);
    header.extend(feature_cols());
    let rows = data.subjects().iter().enumerate().map(|(i, s)| {
        let mut row = vec![s.id.clone(), s.group.clone().unwrap_or_default()];
        row.extend(summary.membership_subject.row(i).iter().map(|&v| fmt_f64(v)));
        row
    });
    write_rows(&path, &header, rows)?;
    written.push(path);

    let path = dir.join("membership_channel.csv");
    let mut header = strings(&["subject", "channel"]);
    header.extend(feature_cols());
    let rows = data.subjects().iter().enumerate().flat_map(|(i, s)| {
        data.channels().iter().enumerate().map(move |(j, c)| {
            let mut row = vec![s.id.clone(), c.clone()];
            row.extend(summary.membership_channel[i].row(j).iter().map(|&v| fmt_f64(v)));
            row
        })
    });
    write_rows(&path, &header, rows)?;
    written.push(path);

    if let Some(g) = &summary.group_contrast {
        let path = dir.join("contrast.csv");
        let header = vec![
            "channel".to_string(),
            "feature".into(),
            format!("mean_{}", g.group_a),
            format!("mean_{}", g.group_b),
            "difference_draw_then_subject".into(),
            "difference_subject_then_draw".into(),
            "lo".into(),
            "hi".into(),
        ];
        let rows = data.channels().iter().enumerate().map(|(j, c)| {
            vec![
                c.clone(),
                (g.feature + 1).to_string(),
                fmt_f64(g.mean_a[j]),
                fmt_f64(g.mean_b[j]),
                fmt_f64(g.draw_then_subject[j]),
                fmt_f64(g.subject_then_draw[j]),
                fmt_f64(g.lo[j]),
                fmt_f64(g.hi[j]),
            ]
        });
        write_rows(&path, &header, rows)?;
        written.push(path);
    }
    Ok(written)
}

/// The criterion table, one row per candidate `K`.
pub fn write_ic_table(table: &IcTable, path: &Path) -> Result<()> {
    let header = strings(&["k", "loglik", "n_params", "aic", "bic", "mean_deviance"]);
    let rows = table.rows.iter().map(|r| {
        vec![
            r.k.to_string(),
            fmt_f64(r.loglik),
            r.n_params.to_string(),
            fmt_f64(r.aic),
            fmt_f64(r.bic),
            fmt_f64(r.mean_deviance),
        ]
    });
    write_rows(path, &header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use funmix_core::simulate::{simulate_dataset, SimulationConfig};

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn small_table_dims() {
        let tmp = tempfile::tempdir().unwrap();
        let p = write(
            tmp.path(),
            "d.csv",
            "subject,channel,group,t,y\ns1,b,g,0.5,2\ns1,a,g,0.0,1\ns1,a,g,0.5,3\ns1,b,g,0.0,4\ns1,a,g,1.0,5\ns1,b,g,1.0,6\n",
        );
        let d = load_long_table(&p).unwrap();
        assert_eq!((d.n_subjects(), d.n_channels(), d.grid_len(0)), (1, 2, 3));
        assert_eq!(d.channels(), &["a".to_string(), "b".to_string()]);
        assert_eq!(d.subject(0).grid, vec![0.0, 0.5, 1.0]);
        assert_eq!(d.curve(0, 0).as_slice(), &[1.0, 3.0, 5.0]);
        assert_eq!(d.curve(0, 1).as_slice(), &[4.0, 2.0, 6.0]);
        assert_eq!(d.subject(0).group.as_deref(), Some("g"));
    }

    #[test]
    fn misaligned_grids_name_the_subject_and_channels() {
        let tmp = tempfile::tempdir().unwrap();
        let p = write(tmp.path(), "d.csv", "subject,channel,group,t,y\ns1,a,,0,1\ns1,a,,1,1\ns1,b,,0,1\ns1,b,,2,1\n");
        let msg = load_long_table(&p).unwrap_err().to_string();
        assert!(msg.contains("s1") && msg.contains("channel b") && msg.contains("channel a"), "{msg}");
    }

    #[test]
    fn bad_records() {
        let tmp = tempfile::tempdir().unwrap();
        let p = write(tmp.path(), "d.csv", "subject,channel,group,t,y\ns1,a,,0,1\ns1,a,,0,2\n");
        assert!(load_long_table(&p).unwrap_err().to_string().contains("duplicate"));
        let p = write(tmp.path(), "d.csv", "subject,channel,group,t,y\ns1,a,,0,1\ns1,a,,x,2\n");
        let msg = load_long_table(&p).unwrap_err().to_string();
        assert!(msg.contains("line 3") && msg.contains("'x'"), "{msg}");
        let p = write(tmp.path(), "d.csv", "subject,chan,group,t,y\n");
        assert!(load_long_table(&p).is_err());
        let p = write(tmp.path(), "d.csv", "subject,channel,group,t,y\ns1,a,,0,1\ns2,b,,0,1\n");
        assert!(load_long_table(&p).unwrap_err().to_string().contains("no observations"));
        let p = write(tmp.path(), "d.csv", "subject,channel,group,t,y\ns1,a,x,0,1\ns1,a,y,1,1\n");
        assert!(load_long_table(&p).unwrap_err().to_string().contains("conflicting"));
    }

    #[test]
    fn simulated_data_round_trip() {
        let cfg = SimulationConfig {
            n_subjects: 3,
            grid_len: 7,
            ..SimulationConfig::default()
        };
        let (data, _) = simulate_dataset(&cfg, None).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("d.csv");
        write_long_table(&data, &p).unwrap();
        assert_eq!(load_long_table(&p).unwrap(), data);
    }

    #[test]
    fn formatting_has_17_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-2.0), "-2.0000000000000000e0");
        let x = 1.0 / 3.0;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }
}
