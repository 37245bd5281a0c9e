//! Config-driven experiments: gap sweeps, cutoff profiles, Averaging
//! profiles, the complete-graph L1 experiment, Nash fits and the
//! verification battery, with CSV and SVG output.

use crate::averaging::{l2_drop, l2_sq, SimplexPoint};
use crate::distance::{
    classify_nash, h_eta, nt_decomposition, tv_bound_multinomial, tv_profile_from, tv_upper_bound_bin, w2_sq_sup,
    wasserstein_profile, wilson_report, Estimate, NashVerdict,
};
use crate::duality::{
    annihilate, create, duality_tensor, f_psi_eval, intertwining_residual_with, jk_intertwining_check,
    moment_duality, multicolored_intertwining_residual, orthogonal_duality, selfduality_residual, standard_edge_update,
    EdgeUpdateFn, TensorFunction,
};
use crate::error::{Error, Result};
use crate::exact::{
    dirichlet_form, f_bin2_form, generator_bin1, generator_bin_labeled, generator_product2, multinomial_measure,
    product_measure, spectral_gap, unlabeled_size, LabeledSpace, UnlabeledModel, UnlabeledSpace, DEFAULT_STATE_CAP,
    DEFAULT_TRANSIENT_CAP,
};
use crate::graphs::{
    build_graph, load_edge_list, load_site_weights, random_conductances, random_elliptic_weights, uniform_weights,
    Conductance, GraphKind, SiteWeights, WeightedGraph,
};
use crate::sim::{replica_rng, run_replicas, CouplingMode, SimOptions, Simulator};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Largest unlabeled state space profiled exactly; larger ones fall back to bounds.
pub const EXACT_MODE_MAX_STATES: usize = 200_000;
/// Above this many vertices the worst Dirac start is searched on a sample.
pub const ALL_STARTS_MAX_N: usize = 16;

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Process {
    #[default]
    Bin,
    Avg,
    Multicolored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphShape {
    Path { n: usize },
    Cycle { n: usize },
    Torus { dims: Vec<usize> },
    Complete { n: usize },
    Sierpinski { level: u32 },
    Percolation { dims: Vec<usize>, p_open: f64, seed: u64 },
    Custom { edges: Vec<(usize, usize)> },
    /// `x y c` lines; conductances come from the file.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConductanceSpec {
    Constant(f64),
    Random { lo: f64, hi: f64, seed: u64 },
}

impl Default for ConductanceSpec {
    fn default() -> Self {
        ConductanceSpec::Constant(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    #[serde(flatten)]
    pub shape: GraphShape,
    #[serde(default)]
    pub conductance: ConductanceSpec,
}

impl GraphSpec {
    pub fn new(shape: GraphShape) -> Self {
        GraphSpec { shape, conductance: ConductanceSpec::default() }
    }

    pub fn label(&self) -> String {
        let base = match &self.shape {
            GraphShape::Path { n } => format!("path({n})"),
            GraphShape::Cycle { n } => format!("cycle({n})"),
            GraphShape::Torus { dims } => format!("torus({dims:?})"),
            GraphShape::Complete { n } => format!("complete({n})"),
            GraphShape::Sierpinski { level } => format!("sierpinski({level})"),
            GraphShape::Percolation { dims, p_open, seed } => format!("percolation({dims:?},{p_open},{seed})"),
            GraphShape::Custom { edges } => format!("custom({} edges)", edges.len()),
            GraphShape::File { path } => format!("file({})", path.display()),
        };
        match &self.conductance {
            ConductanceSpec::Constant(c) if *c == 1.0 => base,
            ConductanceSpec::Constant(c) => format!("{base}[c={c}]"),
            ConductanceSpec::Random { lo, hi, seed } => format!("{base}[c~U({lo},{hi}),seed={seed}]"),
        }
    }

    pub fn build(&self) -> Result<WeightedGraph<f64>> {
        let kind = match &self.shape {
            GraphShape::Path { n } => GraphKind::Path(*n),
            GraphShape::Cycle { n } => GraphKind::Cycle(*n),
            GraphShape::Torus { dims } => GraphKind::Torus(dims.clone()),
            GraphShape::Complete { n } => GraphKind::Complete(*n),
            GraphShape::Sierpinski { level } => GraphKind::Sierpinski(*level),
            GraphShape::Percolation { dims, p_open, seed } => {
                GraphKind::PercolationBox { dims: dims.clone(), p_open: *p_open, seed: *seed }
            }
            GraphShape::Custom { edges } => GraphKind::Custom(edges.clone()),
            GraphShape::File { path } => return load_edge_list(path),
        };
        let g = build_graph(&kind, &Conductance::Uniform(1.0))?;
        match &self.conductance {
            ConductanceSpec::Constant(c) => g.with_conductances(&Conductance::Uniform(*c)),
            ConductanceSpec::Random { lo, hi, seed } => {
                if !(0.0 < *lo && lo <= hi) {
                    return Err(Error::Config(format!("conductance range [{lo}, {hi}] is not positive")));
                }
                let mut rng = replica_rng(*seed, 0);
                g.with_conductances(&Conductance::PerEdge(random_conductances(g.edges().len(), *lo, *hi, &mut rng)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightsSpec {
    #[default]
    Uniform,
    /// Positive masses, normalized on load.
    Values { values: Vec<f64> },
    Random { max_ratio: f64, seed: u64 },
    /// One weight per line.
    File { path: PathBuf },
}

impl WeightsSpec {
    pub fn build(&self, n: usize) -> Result<SiteWeights<f64>> {
        let pi = match self {
            WeightsSpec::Uniform => uniform_weights(n)?,
            WeightsSpec::Values { values } => SiteWeights::from_masses(values.clone())?,
            WeightsSpec::Random { max_ratio, seed } => {
                random_elliptic_weights(n, *max_ratio, &mut replica_rng(*seed, 1))?
            }
            WeightsSpec::File { path } => load_site_weights(path)?,
        };
        if pi.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: pi.len() });
        }
        Ok(pi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    Absolute,
    #[default]
    TRel,
}

/// Time grid specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TimeSpec {
    Absolute { values: Vec<f64> },
    /// Multiples of `t_rel`.
    TRel { values: Vec<f64> },
    Range {
        start: f64,
        stop: f64,
        points: usize,
        #[serde(default)]
        unit: TimeUnit,
        #[serde(default)]
        log: bool,
    },
    /// `t_mix(k) + C t_rel` for each window multiple `C`; negative times dropped.
    TMix { windows: Vec<f64> },
}

impl TimeSpec {
    pub fn resolve(&self, t_rel: f64, k: usize) -> Result<Vec<f64>> {
        let t_mix = t_mix(t_rel, k);
        let times: Vec<f64> = match self {
            TimeSpec::Absolute { values } => values.clone(),
            TimeSpec::TRel { values } => values.iter().map(|v| v * t_rel).collect(),
            TimeSpec::Range { start, stop, points, unit, log } => {
                if *points < 2 || !(stop > start) || (*log && !(*start > 0.0)) {
                    return Err(Error::Config(format!("bad range [{start}, {stop}] with {points} points")));
                }
                let scale = match unit {
                    TimeUnit::Absolute => 1.0,
                    TimeUnit::TRel => t_rel,
                };
                let m = (*points - 1) as f64;
                (0..*points)
                    .map(|i| {
                        let s = i as f64 / m;
                        let v = if *log { start * (stop / start).powf(s) } else { start + (stop - start) * s };
                        v * scale
                    })
                    .collect()
            }
            TimeSpec::TMix { windows } => {
                windows.iter().map(|c| t_mix + c * t_rel).filter(|t| *t >= 0.0).collect()
            }
        };
        if times.is_empty() {
            return Err(Error::Config("time grid is empty".into()));
        }
        if times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(Error::Config("time grid has negative or non-finite entries".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("time grid must be strictly increasing".into()));
        }
        Ok(times)
    }
}

fn default_name() -> String {
    "experiment".into()
}
fn default_k() -> Vec<usize> {
    vec![1]
}
fn default_replicas() -> usize {
    200
}
fn default_tol() -> f64 {
    1e-10
}
fn default_p() -> Vec<f64> {
    vec![2.0]
}
fn default_windows() -> Vec<f64> {
    vec![1.0, 2.0, 3.0]
}

/// One experiment, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub process: Process,
    #[serde(default)]
    pub graph: Option<GraphSpec>,
    /// Extra graphs; sweeps run over `graph` followed by these.
    #[serde(default)]
    pub graphs: Vec<GraphSpec>,
    #[serde(default)]
    pub weights: WeightsSpec,
    #[serde(default = "default_k")]
    pub k: Vec<usize>,
    #[serde(default)]
    pub time: Option<TimeSpec>,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
    /// Transport exponents for Averaging profiles.
    #[serde(default = "default_p")]
    pub p: Vec<f64>,
    /// Start vertex for Averaging profiles; the worst vertex when absent.
    #[serde(default)]
    pub start: Option<usize>,
    /// Window multiples `C` annotated as `t^±(C)`.
    #[serde(default = "default_windows")]
    pub windows: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults parse")
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn graph_specs(&self) -> Vec<GraphSpec> {
        self.graph.iter().cloned().chain(self.graphs.iter().cloned()).collect()
    }

    fn primary(&self) -> Result<(GraphSpec, WeightedGraph<f64>, SiteWeights<f64>)> {
        let spec = self.graph_specs().into_iter().next().ok_or_else(|| Error::Config("no graph given".into()))?;
        let g = spec.build()?;
        let pi = self.weights.build(g.n())?;
        Ok((spec, g, pi))
    }

    fn check(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol <= 1e-6) {
            return Err(Error::Config(format!("tol {} outside (0, 1e-6]", self.tol)));
        }
        if self.k.is_empty() {
            return Err(Error::Config("k list is empty".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- annotations

/// `(t_rel/2) ln k`.
pub fn t_mix(t_rel: f64, k: usize) -> f64 {
    0.5 * t_rel * (k.max(1) as f64).ln()
}

/// Exponents `a = 2 ln(k/n)/ln k` and `b = 2 ln n/ln k` of the high-density
/// pre-cutoff window.
pub fn precutoff_exponents(n: usize, k: usize) -> (f64, f64) {
    let (n, k) = (n as f64, k as f64);
    (2.0 * (k / n).ln() / k.ln(), 2.0 * n.ln() / k.ln())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Annotation {
    pub k: usize,
    pub n: usize,
    pub t_rel: f64,
    pub t_mix: f64,
    pub c: f64,
    pub t_w: f64,
    pub t_minus: f64,
    pub t_plus: f64,
    /// Pre-cutoff `a`, `b`, `T^+` and `T^-` when `k > n^2`.
    pub pre_a: Option<f64>,
    pub pre_b: Option<f64>,
    pub pre_t_plus: Option<f64>,
    pub pre_t_minus: Option<f64>,
}

pub fn annotate(n: usize, k: usize, t_rel: f64, c: f64) -> Annotation {
    let tm = t_mix(t_rel, k);
    let t_w = c * t_rel;
    let (mut pre_a, mut pre_b, mut pre_t_plus, mut pre_t_minus) = (None, None, None, None);
    if k > n * n {
        let (a, b) = precutoff_exponents(n, k);
        pre_a = Some(a);
        pre_b = Some(b);
        pre_t_plus = Some(a * tm + t_w);
        pre_t_minus = Some(b * tm - t_w);
    }
    Annotation { k, n, t_rel, t_mix: tm, c, t_w, t_minus: tm - t_w, t_plus: tm + t_w, pre_a, pre_b, pre_t_plus, pre_t_minus }
}

// ---------------------------------------------------------------- CSV records

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    ExactTv,
    Upper,
    Lower,
    Wasserstein,
}

/// One row of a profile CSV; `experiment` and `k` live in the comment header.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRecord {
    pub experiment: String,
    pub k: usize,
    pub t: f64,
    pub t_normalized: f64,
    pub value: f64,
    pub stderr: f64,
    pub kind: ProfileKind,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileRow {
    t: f64,
    t_over_trel: f64,
    value: f64,
    stderr: f64,
    kind: ProfileKind,
}

fn unix_now() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Writes `# experiment=.. k=.. generated_unix=..` followed by the CSV table.
/// All rows must share one experiment id and `k`.
pub fn write_profile_csv<W: Write>(mut w: W, records: &[ProfileRecord]) -> Result<()> {
    let (exp, k) = records.first().map(|r| (r.experiment.clone(), r.k)).unwrap_or_default();
    if records.iter().any(|r| r.experiment != exp || r.k != k) {
        return Err(Error::InvalidArgument("profile file mixes experiments or k".into()));
    }
    if exp.contains(char::is_whitespace) {
        return Err(Error::InvalidArgument(format!("experiment id `{exp}` contains whitespace")));
    }
    writeln!(w, "# experiment={exp} k={k} generated_unix={}", unix_now())?;
    let mut csv = csv::Writer::from_writer(w);
    for r in records {
        csv.serialize(ProfileRow { t: r.t, t_over_trel: r.t_normalized, value: r.value, stderr: r.stderr, kind: r.kind })?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_profile_csv<R: std::io::Read>(mut r: R) -> Result<Vec<ProfileRecord>> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut experiment = String::new();
    let mut k = 0;
    if let Some(first) = text.lines().next().and_then(|l| l.strip_prefix('#')) {
        for field in first.split_whitespace() {
            match field.split_once('=') {
                Some(("experiment", v)) => experiment = v.to_string(),
                Some(("k", v)) => k = v.parse().map_err(|e| Error::Parse { line: 1, msg: format!("k: {e}") })?,
                _ => {}
            }
        }
    }
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in rdr.deserialize::<ProfileRow>() {
        let row = row?;
        out.push(ProfileRecord {
            experiment: experiment.clone(),
            k,
            t: row.t,
            t_normalized: row.t_over_trel,
            value: row.value,
            stderr: row.stderr,
            kind: row.kind,
        });
    }
    Ok(out)
}

/// Single-series line chart.
pub fn svg_line_chart(title: &str, x_label: &str, y_label: &str, pts: &[(f64, f64)]) -> String {
    let (w, h, m) = (640.0, 400.0, 60.0);
    let finite: Vec<(f64, f64)> = pts.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in &finite {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if finite.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let esc = |s: &str| s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#, w / 2.0, esc(title));
    let _ = writeln!(
        s,
        r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#,
        h - m,
        w - m,
        h - m,
        h - m
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, w / 2.0, h - 20.0, esc(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        esc(y_label)
    );
    for (v, anchor, x, y) in [
        (x0, "start", m, h - m + 16.0),
        (x1, "end", w - m, h - m + 16.0),
        (y0, "end", m - 4.0, h - m),
        (y1, "end", m - 4.0, m + 4.0),
    ] {
        let _ = writeln!(s, r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-size="10">{v:.4}</text>"#);
    }
    let path: Vec<String> = finite.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
    let _ = writeln!(s, r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#, path.join(" "));
    s.push_str("</svg>\n");
    s
}

fn emit_profile(dir: &Path, stem: &str, records: &[ProfileRecord]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{stem}.csv"));
    write_profile_csv(std::fs::File::create(&path)?, records)?;
    if let Some(first) = records.first() {
        let pts: Vec<(f64, f64)> =
            records.iter().filter(|r| r.kind == first.kind).map(|r| (r.t_normalized, r.value)).collect();
        let kind = serde_json::to_value(first.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        let title = format!("{} k={} ({kind})", first.experiment, first.k);
        std::fs::write(dir.join(format!("{stem}.svg")), svg_line_chart(&title, "t / t_rel", &kind, &pts))?;
    }
    Ok(path)
}

fn emit_table<S: Serialize>(dir: &Path, file: &str, rows: &[S]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(file);
    let mut w = csv::Writer::from_path(&path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(path)
}

// ---------------------------------------------------------------- helpers

/// First time the profile drops to `level`, linearly interpolated between grid points.
pub fn crossing_time(profile: &[(f64, f64)], level: f64) -> Option<f64> {
    let i = profile.iter().position(|(_, v)| *v <= level)?;
    if i == 0 {
        return Some(profile[0].0);
    }
    let ((ta, va), (tb, vb)) = (profile[i - 1], profile[i]);
    Some(ta + (va - level) / (va - vb) * (tb - ta))
}

/// Linear interpolation of the profile at `t`.
pub fn value_at(profile: &[(f64, f64)], t: f64) -> Option<f64> {
    let i = profile.iter().position(|(s, _)| *s >= t)?;
    if i == 0 || profile[i].0 == t {
        return Some(profile[i].1);
    }
    let ((ta, va), (tb, vb)) = (profile[i - 1], profile[i]);
    Some(va + (t - ta) / (tb - ta) * (vb - va))
}

/// Least-squares `(slope, intercept, r2)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Some((slope, my - slope * mx, r2))
}

/// Vertices tried as pile starts: all of them for small graphs, otherwise a
/// seeded sample.
pub fn start_vertices(n: usize, seed: u64) -> Vec<usize> {
    if n <= ALL_STARTS_MAX_N {
        return (0..n).collect();
    }
    let mut v: Vec<usize> = rand::seq::index::sample(&mut replica_rng(seed, 2), n, ALL_STARTS_MAX_N).into_vec();
    v.sort_unstable();
    v
}

fn bin1_t_rel(g: &WeightedGraph<f64>, pi: &SiteWeights<f64>) -> Result<f64> {
    Ok(spectral_gap(&generator_bin1(g, pi)?, pi.as_slice())?.t_rel)
}

fn random_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|a| a / s).collect()
}

fn random_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

// ---------------------------------------------------------------- gap sweep

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub graph: String,
    pub n: usize,
    pub k: usize,
    pub states: usize,
    pub gap: f64,
    pub gap_ratio: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapSweep {
    pub rows: Vec<GapRow>,
    /// Instances skipped because the state space exceeded the cap.
    pub skipped: Vec<String>,
}

impl GapSweep {
    pub fn flagged(&self) -> impl Iterator<Item = &GapRow> {
        self.rows.iter().filter(|r| r.flagged)
    }
}

/// `gap_k` for every graph and `k`, flagging `|gap_k/gap_1 - 1| > 1e-8`.
pub fn run_gap_sweep(config: &ExperimentConfig, out: Option<&Path>) -> Result<GapSweep> {
    config.check()?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let specs = config.graph_specs();
    if specs.is_empty() {
        return Err(Error::Config("no graph given".into()));
    }
    for spec in specs {
        let g = spec.build()?;
        let pi = config.weights.build(g.n())?;
        let gap1 = spectral_gap(&generator_bin1(&g, &pi)?, pi.as_slice())?.gap;
        for &k in &config.k {
            let size = unlabeled_size(g.n(), k);
            if size > DEFAULT_STATE_CAP as u128 {
                skipped.push(format!("{} k={k}: {size} states exceed {DEFAULT_STATE_CAP}", spec.label()));
                continue;
            }
            let model = UnlabeledModel::build(&g, &pi, k, DEFAULT_STATE_CAP)?;
            let gap = model.spectrum()?.gap;
            let ratio = gap / gap1;
            rows.push(GapRow {
                graph: spec.label(),
                n: g.n(),
                k,
                states: model.space.len(),
                gap,
                gap_ratio: ratio,
                flagged: (ratio - 1.0).abs() > 1e-8,
            });
        }
    }
    if let Some(dir) = out {
        emit_table(dir, &format!("{}_gaps.csv", config.name), &rows)?;
    }
    Ok(GapSweep { rows, skipped })
}

// ---------------------------------------------------------------- cutoff

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffMode {
    Exact,
    Bounds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutoffProfile {
    pub k: usize,
    pub mode: CutoffMode,
    pub t_rel: f64,
    pub states: u128,
    pub times: Vec<f64>,
    /// Worst-start exact TV (exact mode).
    pub exact: Vec<f64>,
    /// Upper and lower bounds (bounds mode).
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    pub annotations: Vec<Annotation>,
}

impl CutoffProfile {
    pub fn exact_profile(&self) -> Vec<(f64, f64)> {
        self.times.iter().copied().zip(self.exact.iter().copied()).collect()
    }

    /// First time with `d <= 1/2`.
    pub fn t_half(&self) -> Option<f64> {
        crossing_time(&self.exact_profile(), 0.5)
    }

    /// Time from `d = 0.9` to `d = 0.1`.
    pub fn width(&self) -> Option<f64> {
        Some(crossing_time(&self.exact_profile(), 0.1)? - crossing_time(&self.exact_profile(), 0.9)?)
    }

    pub fn records(&self, experiment: &str) -> Vec<ProfileRecord> {
        let mut out = Vec::new();
        let mut push = |kind, vals: &[f64]| {
            for (t, v) in self.times.iter().zip(vals) {
                out.push(ProfileRecord {
                    experiment: experiment.to_string(),
                    k: self.k,
                    t: *t,
                    t_normalized: t / self.t_rel,
                    value: *v,
                    stderr: 0.0,
                    kind,
                });
            }
        };
        push(ProfileKind::ExactTv, &self.exact);
        push(ProfileKind::Upper, &self.upper);
        push(ProfileKind::Lower, &self.lower);
        out
    }
}

fn default_cutoff_grid(t_rel: f64, k: usize) -> Vec<f64> {
    let stop = (t_mix(t_rel, k) + 6.0 * t_rel).max(6.0 * t_rel);
    (0..=240).map(|i| stop * i as f64 / 240.0).collect()
}

/// Worst-Dirac-start TV profiles of Bin(k), exact when `|Omega_k| <= 200000`,
/// otherwise bracketed by the Wilson lower bound and `sqrt(e k w2)` upper bound.
pub fn run_cutoff_bin(config: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<CutoffProfile>> {
    config.check()?;
    let (_, g, pi) = config.primary()?;
    let t_rel = bin1_t_rel(&g, &pi)?;
    let starts = start_vertices(g.n(), config.seed);
    let mut profiles = Vec::new();
    for &k in &config.k {
        let times = match &config.time {
            Some(spec) => spec.resolve(t_rel, k)?,
            None => default_cutoff_grid(t_rel, k),
        };
        let states = unlabeled_size(g.n(), k);
        let annotations = config.windows.iter().map(|&c| annotate(g.n(), k, t_rel, c)).collect();
        let mut p = CutoffProfile {
            k,
            mode: CutoffMode::Exact,
            t_rel,
            states,
            times: times.clone(),
            exact: Vec::new(),
            upper: Vec::new(),
            lower: Vec::new(),
            annotations,
        };
        if states <= EXACT_MODE_MAX_STATES as u128 {
            let model = UnlabeledModel::build(&g, &pi, k, EXACT_MODE_MAX_STATES)?;
            let runs = run_replicas(starts.len(), config.threads, |i| -> Result<Vec<f64>> {
                let init = model.dirac(&model.space.pile(starts[i as usize]))?;
                Ok(tv_profile_from(&model, &init, &times, config.tol)?.into_iter().map(|(_, d)| d).collect())
            })?;
            let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
            p.exact = (0..times.len()).map(|j| runs.iter().map(|r| r[j]).fold(0.0, f64::max)).collect();
        } else {
            eprintln!("k={k}: {states} configurations, using the bound bracket");
            p.mode = CutoffMode::Bounds;
            for &t in &times {
                p.upper.push(tv_upper_bound_bin(k, w2_sq_sup(&g, &pi, t, config.tol)?));
                let mut low = 0.0f64;
                for &x in &starts {
                    let mut eta = vec![0.0; g.n()];
                    eta[x] = 1.0;
                    low = low.max(wilson_report(&g, &pi, k, &eta, t)?.bound);
                }
                p.lower.push(low);
            }
        }
        if let Some(dir) = out {
            emit_profile(dir, &format!("{}_k{k}", config.name), &p.records(&config.name))?;
        }
        profiles.push(p);
    }
    if let Some(dir) = out {
        let ann: Vec<Annotation> = profiles.iter().flat_map(|p| p.annotations.clone()).collect();
        emit_table(dir, &format!("{}_annotations.csv", config.name), &ann)?;
    }
    Ok(profiles)
}

// ---------------------------------------------------------------- averaging

#[derive(Debug, Clone, PartialEq)]
pub struct AvgProfile {
    pub k: usize,
    pub p: f64,
    pub t_rel: f64,
    pub start: usize,
    pub times: Vec<f64>,
    pub estimates: Vec<Estimate>,
    /// `||h_t^eta - 1||_p`.
    pub lower: Vec<f64>,
    pub annotations: Vec<Annotation>,
}

impl AvgProfile {
    /// `(min, max)` of `mean e^{t/t_rel}` over grid times `>= t_min`.
    pub fn band(&self, t_min: f64, t_max: f64) -> (f64, f64) {
        let vals = self
            .times
            .iter()
            .zip(&self.estimates)
            .filter(|(t, _)| **t >= t_min && **t <= t_max)
            .map(|(t, e)| e.mean * (t / self.t_rel).exp());
        vals.fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(v), b.max(v)))
    }

    pub fn records(&self, experiment: &str, scale: f64) -> Vec<ProfileRecord> {
        let rec = |t: f64, value: f64, stderr: f64, kind| ProfileRecord {
            experiment: experiment.to_string(),
            k: self.k,
            t,
            t_normalized: t / self.t_rel,
            value: value * scale,
            stderr: stderr * scale,
            kind,
        };
        let mut out: Vec<ProfileRecord> = self
            .times
            .iter()
            .zip(&self.estimates)
            .map(|(t, e)| rec(*t, e.mean, e.stderr, ProfileKind::Wasserstein))
            .collect();
        out.extend(self.times.iter().zip(&self.lower).map(|(t, v)| rec(*t, *v, 0.0, ProfileKind::Lower)));
        out
    }
}

fn lp_dev(h: &[f64], pi: &SiteWeights<f64>, p: f64) -> f64 {
    if p.is_infinite() {
        return h.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    }
    h.iter().zip(pi.as_slice()).map(|(v, w)| w * (v - 1.0).abs().powf(p)).sum::<f64>().powf(1.0 / p)
}

/// Monte Carlo `E ||eta_t/pi - 1||_p` from a Dirac start, with the exact
/// lower curve `||h_t^eta - 1||_p`, unscaled and scaled by `sqrt(k)`.
pub fn run_avg_profile(config: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<AvgProfile>> {
    config.check()?;
    if config.replicas < 2 {
        return Err(Error::Config("replicas must be at least 2".into()));
    }
    let (_, g, pi) = config.primary()?;
    let t_rel = bin1_t_rel(&g, &pi)?;
    let sim = Simulator::new(&g, &pi)?;
    let start = match config.start {
        Some(x) if x < g.n() => x,
        Some(x) => return Err(Error::Config(format!("start vertex {x} out of range"))),
        None => {
            // largest single-particle L2 distance at t_rel
            let mut best = (0, f64::MIN);
            for x in start_vertices(g.n(), config.seed) {
                let mut eta = vec![0.0; g.n()];
                eta[x] = 1.0;
                let v = lp_dev(&h_eta(&g, &pi, &eta, t_rel, config.tol)?, &pi, 2.0);
                if v > best.1 + 1e-12 {
                    best = (x, v);
                }
            }
            best.0
        }
    };
    let eta0 = SimplexPoint::dirac(g.n(), start)?;
    let mut out_profiles = Vec::new();
    for &k in &config.k {
        let times = match &config.time {
            Some(spec) => spec.resolve(t_rel, k)?,
            None => TimeSpec::TMix { windows: (-12..=12).map(|c| c as f64 * 0.5).collect() }.resolve(t_rel, k)?,
        };
        let table = wasserstein_profile(&sim, &eta0, &times, &config.p, config.replicas, config.seed, config.threads)?;
        let hs: Vec<Vec<f64>> =
            times.iter().map(|&t| h_eta(&g, &pi, eta0.as_slice(), t, config.tol)).collect::<Result<_>>()?;
        for (j, &p) in config.p.iter().enumerate() {
            let prof = AvgProfile {
                k,
                p,
                t_rel,
                start,
                times: times.clone(),
                estimates: table.iter().map(|row| row[j]).collect(),
                lower: hs.iter().map(|h| lp_dev(h, &pi, p)).collect(),
                annotations: config.windows.iter().map(|&c| annotate(g.n(), k, t_rel, c)).collect(),
            };
            if let Some(dir) = out {
                let stem = format!("{}_k{k}_p{p}", config.name);
                emit_profile(dir, &stem, &prof.records(&config.name, 1.0))?;
                emit_profile(dir, &format!("{stem}_scaled"), &prof.records(&config.name, (k as f64).sqrt()))?;
            }
            out_profiles.push(prof);
        }
    }
    Ok(out_profiles)
}

// ---------------------------------------------------------------- complete graph

#[derive(Debug, Clone, PartialEq)]
pub struct CdszReport {
    pub n: usize,
    pub t_cdsz: f64,
    pub t_rel: f64,
    pub times: Vec<f64>,
    pub estimates: Vec<Estimate>,
    pub crossing: Option<f64>,
}

impl CdszReport {
    pub fn profile(&self) -> Vec<(f64, f64)> {
        self.times.iter().zip(&self.estimates).map(|(t, e)| (*t, e.mean)).collect()
    }

    pub fn ratio(&self) -> Option<f64> {
        self.crossing.map(|c| c / self.t_cdsz)
    }
}

/// `ln n / (n ln 2)`.
pub fn t_cdsz(n: usize) -> f64 {
    (n as f64).ln() / (n as f64 * std::f64::consts::LN_2)
}

/// L1 profile of the Averaging process on the complete graph from a Dirac start.
pub fn run_complete_cdsz(config: &ExperimentConfig, out: Option<&Path>) -> Result<CdszReport> {
    config.check()?;
    let (_, g, pi) = config.primary()?;
    let n = g.n();
    if n < 64 || g.edges().len() != n * (n - 1) / 2 {
        return Err(Error::Config(format!("needs a complete graph on at least 64 vertices, got n={n}")));
    }
    let t_rel = bin1_t_rel(&g, &pi)?;
    let tc = t_cdsz(n);
    let times = match &config.time {
        Some(spec) => spec.resolve(t_rel, 1)?,
        None => (0..=80).map(|j| tc * j as f64 / 40.0).collect(),
    };
    let sim = Simulator::new(&g, &pi)?;
    let eta0 = SimplexPoint::dirac(n, config.start.unwrap_or(0))?;
    let table = wasserstein_profile(&sim, &eta0, &times, &[1.0], config.replicas, config.seed, config.threads)?;
    let estimates: Vec<Estimate> = table.iter().map(|r| r[0]).collect();
    let mut report = CdszReport { n, t_cdsz: tc, t_rel, times, estimates, crossing: None };
    report.crossing = crossing_time(&report.profile(), 1.0);
    if let Some(dir) = out {
        let records: Vec<ProfileRecord> = report
            .times
            .iter()
            .zip(&report.estimates)
            .map(|(t, e)| ProfileRecord {
                experiment: config.name.clone(),
                k: 1,
                t: *t,
                t_normalized: t / t_rel,
                value: e.mean,
                stderr: e.stderr,
                kind: ProfileKind::Wasserstein,
            })
            .collect();
        emit_profile(dir, &config.name, &records)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------- nash

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NashRow {
    pub graph: String,
    pub n: usize,
    pub finite_dimensional: bool,
    pub d_hat: Option<f64>,
    pub t_nash_hat: Option<f64>,
    pub t_lo: Option<f64>,
    pub t_hi: Option<f64>,
    pub r2: Option<f64>,
    pub reason: String,
}

/// Nash-dimension diagnostic for every configured graph.
pub fn run_nash(config: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<NashRow>> {
    let mut rows = Vec::new();
    for spec in config.graph_specs() {
        let g = spec.build()?;
        let pi = config.weights.build(g.n())?;
        let verdict = classify_nash(&g, &pi, 40)?;
        let (fit, reason) = match &verdict {
            NashVerdict::FiniteDimensional(f) => (Some(f.clone()), String::new()),
            NashVerdict::NotFiniteDimensional { reason, fit } => (fit.clone(), reason.clone()),
        };
        rows.push(NashRow {
            graph: spec.label(),
            n: g.n(),
            finite_dimensional: verdict.is_finite_dimensional(),
            d_hat: fit.as_ref().map(|f| f.d_hat),
            t_nash_hat: fit.as_ref().map(|f| f.t_nash_hat),
            t_lo: fit.as_ref().map(|f| f.t_lo),
            t_hi: fit.as_ref().map(|f| f.t_hi),
            r2: fit.as_ref().map(|f| f.r2),
            reason,
        });
    }
    if let Some(dir) = out {
        emit_table(dir, &format!("{}_nash.csv", config.name), &rows)?;
    }
    Ok(rows)
}

// ---------------------------------------------------------------- verify

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for c in &self.checks {
            serde_json::to_writer(&mut w, c).map_err(|e| Error::Io(e.into()))?;
            writeln!(w)?;
        }
        Ok(())
    }
}

type Instance = (String, WeightedGraph<f64>, SiteWeights<f64>);

fn verify_suite(seed: u64) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for (label, kind) in [
        ("path(2)", GraphKind::Path(2)),
        ("path(4)", GraphKind::Path(4)),
        ("cycle(3)", GraphKind::Cycle(3)),
        ("complete(4)", GraphKind::Complete(4)),
    ] {
        let g = build_graph(&kind, &Conductance::Uniform(1.0))?;
        let pi = uniform_weights(g.n())?;
        out.push((label.to_string(), g, pi));
    }
    for (i, kind) in [GraphKind::Cycle(4), GraphKind::Path(3)].into_iter().enumerate() {
        let mut rng = replica_rng(seed, 100 + i as u64);
        let g0 = build_graph::<f64>(&kind, &Conductance::Uniform(1.0))?;
        let cs = random_conductances(g0.edges().len(), 0.5, 2.0, &mut rng);
        let g = g0.with_conductances(&Conductance::PerEdge(cs))?;
        let pi = random_elliptic_weights(g.n(), 4.0, &mut rng)?;
        out.push((format!("{kind:?}-disordered").to_lowercase(), g, pi));
    }
    Ok(out)
}

/// Names of the checks run by [`run_verify`], in report order.
pub const VERIFY_CHECKS: &[&str] = &[
    "gap_identity",
    "complete_graph_gap",
    "intertwining",
    "moment_duality",
    "orthogonal_duality",
    "self_duality",
    "jk_intertwining",
    "jk_injective",
    "annihilation_adjoint",
    "f_psi_eigen_relation",
    "dirichlet_identity",
    "dirichlet_ordering",
    "aldous_lanoue_drop",
    "aldous_lanoue_contraction",
    "multinomial_tv_bound",
    "chi2_enumeration",
    "nt_decomposition",
    "multicolored_intertwining",
    "multicolored_projection",
];

fn check_tolerance(name: &str) -> f64 {
    match name {
        "gap_identity" => 1e-9,
        "complete_graph_gap" => 1e-10,
        "intertwining" | "annihilation_adjoint" | "dirichlet_ordering" | "aldous_lanoue_drop" => 1e-12,
        "moment_duality" | "orthogonal_duality" | "dirichlet_identity" | "chi2_enumeration" => 1e-10,
        "self_duality" => 1e-7,
        "jk_intertwining" | "multicolored_intertwining" => 1e-11,
        "f_psi_eigen_relation" | "aldous_lanoue_contraction" | "nt_decomposition" => 1e-9,
        _ => 0.0,
    }
}

/// Runs the full battery with the exact edge update.
pub fn run_verify(config: &ExperimentConfig, out: Option<&Path>) -> Result<VerifyReport> {
    run_verify_with(config, out, &standard_edge_update::<f64>)
}

/// Runs the battery with `update` standing in for the Averaging edge map.
pub fn run_verify_with(config: &ExperimentConfig, out: Option<&Path>, update: &EdgeUpdateFn<f64>) -> Result<VerifyReport> {
    let suite = verify_suite(config.seed)?;
    let mut checks = Vec::new();
    for &name in VERIFY_CHECKS {
        let tol = check_tolerance(name);
        let result = run_check(name, &suite, config.seed, update);
        checks.push(match result {
            Ok(residual) => CheckResult {
                check: name.to_string(),
                residual,
                tolerance: tol,
                passed: residual.is_finite() && residual <= tol,
                error: None,
            },
            Err(e) => CheckResult {
                check: name.to_string(),
                residual: f64::NAN,
                tolerance: tol,
                passed: false,
                error: Some(e.to_string()),
            },
        });
    }
    let report = VerifyReport { checks };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        report.write_jsonl(std::fs::File::create(dir.join(format!("{}_verify.jsonl", config.name)))?)?;
    }
    Ok(report)
}

fn run_check(name: &str, suite: &[Instance], seed: u64, update: &EdgeUpdateFn<f64>) -> Result<f64> {
    let mut rng = replica_rng(seed, 1000 + VERIFY_CHECKS.iter().position(|c| *c == name).unwrap_or(0) as u64);
    let mut worst = 0.0f64;
    match name {
        "gap_identity" => {
            for (_, g, pi) in suite {
                let g1 = spectral_gap(&generator_bin1(g, pi)?, pi.as_slice())?.gap;
                for k in 2..=3 {
                    let gk = UnlabeledModel::build(g, pi, k, DEFAULT_STATE_CAP)?.spectrum()?.gap;
                    worst = worst.max((gk - g1).abs() / g1);
                }
            }
        }
        "complete_graph_gap" => {
            for n in 3..=8 {
                let g = build_graph::<f64>(&GraphKind::Complete(n), &Conductance::Uniform(1.0))?;
                let gap = bin1_t_rel(&g, &uniform_weights(n)?)?.recip();
                worst = worst.max((gap - n as f64 / 2.0).abs());
            }
        }
        "intertwining" => {
            for n in 2..=4 {
                let (g, pi) = disordered_cycle(n, &mut rng)?;
                for k in 1..=3 {
                    let sp = UnlabeledSpace::with_cap(n, k, 1000)?;
                    for _ in 0..10 {
                        let f = random_vec(sp.len(), &mut rng);
                        let eta = random_simplex(n, &mut rng);
                        worst = worst.max(intertwining_residual_with(&g, &pi, &sp, &f, &eta, update)?);
                    }
                }
            }
        }
        "moment_duality" | "orthogonal_duality" => {
            let orthogonal = name == "orthogonal_duality";
            for (_, g, pi) in suite {
                let n = g.n();
                for k in 1..=3 {
                    let sp = LabeledSpace::new(n, k, 1000)?;
                    let q = generator_bin_labeled(g, pi, &sp)?;
                    for _ in 0..5 {
                        let eta = random_simplex(n, &mut rng);
                        let d = duality_tensor(n, k, &eta, pi.as_slice(), orthogonal);
                        let ld = q.apply(d.values());
                        let dual = |xs: &[usize], e: &[f64]| {
                            if orthogonal {
                                orthogonal_duality(xs, e, pi.as_slice())
                            } else {
                                moment_duality(xs, e, pi.as_slice())
                            }
                        };
                        let updated: Vec<Vec<f64>> = g.edges().iter().map(|e| update(&eta, e.x, e.y, pi)).collect();
                        for (s, target) in ld.iter().enumerate() {
                            let xs = sp.decode(s);
                            let base = dual(&xs, &eta);
                            let lhs: f64 =
                                g.edges().iter().zip(&updated).map(|(e, u)| e.c * (dual(&xs, u) - base)).sum();
                            worst = worst.max((lhs - target).abs());
                        }
                    }
                }
            }
        }
        "self_duality" => {
            let (g, pi) = unit(GraphKind::Cycle(3))?;
            for k in 1..=2 {
                for l in 2..=3 {
                    for t in [0.3, 1.0, 3.0] {
                        worst = worst.max(selfduality_residual(&g, &pi, k, l, t, 1e-9)?);
                    }
                }
            }
        }
        "jk_intertwining" | "jk_injective" => {
            let (g, pi) = unit(GraphKind::Cycle(3))?;
            for k in 2..=3 {
                let (res, rank, cols) = jk_intertwining_check(&g, &pi, k)?;
                worst = worst.max(if name == "jk_injective" { (cols - rank) as f64 } else { res });
            }
        }
        "annihilation_adjoint" => {
            let (g, pi) = disordered_cycle(3, &mut rng)?;
            let n = g.n();
            for k in 1..=3usize {
                for i in 0..k {
                    let psi = TensorFunction::new(n, k - 1, random_vec(n.pow(k as u32 - 1), &mut rng))?;
                    let phi = TensorFunction::new(n, k, random_vec(n.pow(k as u32), &mut rng))?;
                    let lhs = annihilate(&psi, i)?.inner(&phi, pi.as_slice())?;
                    let rhs = psi.inner(&create(&phi, i, pi.as_slice())?, pi.as_slice())?;
                    worst = worst.max((lhs - rhs).abs());
                }
            }
        }
        "f_psi_eigen_relation" => {
            for (_, g, pi) in suite.iter().filter(|(_, g, _)| g.n() == 3) {
                let n = g.n();
                let sp = LabeledSpace::new(n, 2, 100)?;
                let q = generator_bin_labeled(g, pi, &sp)?;
                let spec = spectral_gap(&q, &product_measure(pi.as_slice(), &sp))?;
                let funcs = spec.eigenfunctions.as_ref().expect("dense");
                for c in 1..sp.len() {
                    let psi = TensorFunction::new(n, 2, funcs.column(c).iter().copied().collect())?;
                    for _ in 0..5 {
                        let eta = random_simplex(n, &mut rng);
                        let f = |e: &[f64]| f_psi_eval(&psi, e, pi.as_slice());
                        let base = f(&eta);
                        let lhs: f64 = g.edges().iter().map(|e| e.c * (f(&update(&eta, e.x, e.y, pi)) - base)).sum();
                        worst = worst.max((lhs + spec.eigenvalues[c] * base).abs());
                    }
                }
            }
        }
        "dirichlet_identity" | "dirichlet_ordering" => {
            for (_, g, pi) in suite {
                let n = g.n();
                let sp = LabeledSpace::new(n, 2, 1000)?;
                let q2 = generator_bin_labeled(g, pi, &sp)?;
                let qp = generator_product2(g, pi, 1000)?;
                let w = product_measure(pi.as_slice(), &sp);
                for _ in 0..50 {
                    let psi = random_vec(n * n, &mut rng);
                    let e2 = dirichlet_form(&q2, &w, &psi)?;
                    let e11 = dirichlet_form(&qp, &w, &psi)?;
                    worst = worst.max(if name == "dirichlet_identity" {
                        (e2 - (e11 - f_bin2_form(g, pi, &psi)?)).abs()
                    } else {
                        (0.5 * e11 - e2).max(e2 - e11).max(0.0)
                    });
                }
            }
        }
        "aldous_lanoue_drop" => {
            for (_, g, pi) in suite {
                for _ in 0..100 {
                    let eta = SimplexPoint::new(random_simplex(g.n(), &mut rng))?;
                    let e = g.edges()[rng.random_range(0..g.edges().len())];
                    let after = update(eta.as_slice(), e.x, e.y, pi);
                    let direct: f64 = after.iter().zip(pi.as_slice()).map(|(a, p)| p * (a / p - 1.0).powi(2)).sum();
                    worst = worst.max((direct - l2_sq(&eta, pi) - l2_drop(&eta, e.x, e.y, pi)).abs());
                }
            }
        }
        "aldous_lanoue_contraction" => {
            for (_, g, pi) in suite {
                let t_rel = bin1_t_rel(g, pi)?;
                let eta = random_simplex(g.n(), &mut rng);
                let start = l2_sq(&SimplexPoint::new(eta.clone())?, pi);
                for j in 0..=8 {
                    let t = j as f64 * 0.5 * t_rel;
                    let nt = nt_decomposition(g, pi, &eta, t, 1e-12)?;
                    worst = worst.max(nt.exact - (-t / t_rel).exp() * start);
                }
            }
        }
        "multinomial_tv_bound" | "chi2_enumeration" => {
            for n in 2..=3 {
                let pi = random_elliptic_weights(n, 3.0, &mut rng)?;
                for k in 1..=6 {
                    let space = UnlabeledSpace::with_cap(n, k, 1000)?;
                    let mu = multinomial_measure(pi.as_slice(), &space)?;
                    for _ in 0..10 {
                        let eta = random_simplex(n, &mut rng);
                        let nu = multinomial_measure(&eta, &space)?;
                        if name == "chi2_enumeration" {
                            let enumerated: f64 = nu.iter().zip(&mu).map(|(a, b)| a * a / b).sum::<f64>() - 1.0;
                            let formula = crate::distance::chi2_multinomial(&eta, &pi, k)?;
                            worst = worst.max((enumerated - formula).abs() / formula.abs().max(1.0));
                        } else {
                            let tv = 0.5 * nu.iter().zip(&mu).map(|(a, b)| (a - b).abs()).sum::<f64>();
                            worst = worst.max(tv - tv_bound_multinomial(&eta, &pi, k)? - 1e-12);
                        }
                    }
                }
            }
        }
        "nt_decomposition" => {
            for (_, g, pi) in suite {
                let eta = random_simplex(g.n(), &mut rng);
                for t in [0.0, 0.4, 1.5] {
                    let r = nt_decomposition(g, pi, &eta, t, 1e-11)?;
                    worst = worst.max((r.total() - r.exact).abs());
                }
            }
        }
        "multicolored_intertwining" => {
            let (g, pi) = disordered_cycle(3, &mut rng)?;
            for xi in [[1u32, 1, 1], [2, 0, 1], [0, 3, 0]] {
                let fs: Vec<Vec<f64>> = xi
                    .iter()
                    .map(|&m| Ok(random_vec(UnlabeledSpace::with_cap(3, m as usize, 100)?.len(), &mut rng)))
                    .collect::<Result<_>>()?;
                let etas: Vec<SimplexPoint<f64>> =
                    (0..3).map(|_| SimplexPoint::new(random_simplex(3, &mut rng))).collect::<Result<_>>()?;
                worst = worst.max(multicolored_intertwining_residual(&g, &pi, &xi, &fs, &etas)?);
            }
        }
        "multicolored_projection" => {
            let (g, pi) = disordered_cycle(3, &mut rng)?;
            let sim = Simulator::new(&g, &pi)?;
            let xi0 = [2u32, 1, 3];
            let times = [0.5, 1.0, 2.0];
            let mut mismatches = 0usize;
            for r in 0..50 {
                let opts = SimOptions {
                    t_end: 2.0,
                    record_times: times.to_vec(),
                    seed,
                    replica_id: r,
                    coupling_mode: CouplingMode::PerParticleBernoulli,
                };
                let colored = sim.multicolored(&xi0, &opts)?;
                let plain = sim.bin(&xi0, &opts)?;
                mismatches += colored.iter().zip(&plain).filter(|(c, p)| c.color_blind() != **p).count();
            }
            worst = mismatches as f64;
        }
        other => return Err(Error::InvalidArgument(format!("unknown check {other}"))),
    }
    Ok(worst)
}

fn unit(kind: GraphKind) -> Result<(WeightedGraph<f64>, SiteWeights<f64>)> {
    let g = build_graph(&kind, &Conductance::Uniform(1.0))?;
    let pi = uniform_weights(g.n())?;
    Ok((g, pi))
}

fn disordered_cycle<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<(WeightedGraph<f64>, SiteWeights<f64>)> {
    let g0 = build_graph::<f64>(&GraphKind::Cycle(n), &Conductance::Uniform(1.0))?;
    let cs = random_conductances(g0.edges().len(), 0.5, 2.0, rng);
    let g = g0.with_conductances(&Conductance::PerEdge(cs))?;
    let pi = random_elliptic_weights(n, 4.0, rng)?;
    Ok((g, pi))
}

/// Cap check for exact profiling of `n` vertices and `k` particles.
pub fn exact_mode_feasible(n: usize, k: usize) -> bool {
    unlabeled_size(n, k) <= EXACT_MODE_MAX_STATES as u128 && n * n <= DEFAULT_TRANSIENT_CAP
}
