//! Dataset generation: initial-condition sampling, single and paired
//! (variational) trajectory rollouts with rejection, numerical time
//! differentiation, and dataset persistence.
//!
//! Paired generation draws a base point x1 and a perturbation dx uniform in
//! a ball of radius `eps_pert` (resampled until x1 + dx stays inside the
//! region), rolls out both initial conditions, and accepts the pair only if
//! the trajectory difference stays within `overshoot` at every grid time.
//! The difference trajectory then stands in for the variational dynamics.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::dynamics::{integrate, SystemConfig, SystemSpec, Trajectory};
use crate::error::{Error, Result};
use crate::special::unit_ball_volume;

pub const DATASET_VERSION: &str = "certkit-ds-1";

/// Region of state space that initial conditions are drawn from,
/// uniformly.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SampleRegion {
    Box {
        center: Vec<f64>,
        half_widths: Vec<f64>,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
}

impl SampleRegion {
    /// Axis-aligned box [-w, w]^p around the origin.
    pub fn centered_box(half_widths: Vec<f64>) -> Self {
        let center = vec![0.0; half_widths.len()];
        SampleRegion::Box {
            center,
            half_widths,
        }
    }

    pub fn origin_ball(dim: usize, radius: f64) -> Self {
        SampleRegion::Ball {
            center: vec![0.0; dim],
            radius,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SampleRegion::Box { center, .. } | SampleRegion::Ball { center, .. } => center.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SampleRegion::Box {
                center,
                half_widths,
            } => {
                if center.len() != half_widths.len() {
                    return Err(Error::Config(
                        "box center and half_widths lengths differ".into(),
                    ));
                }
                if half_widths.iter().any(|w| *w < 0.0) {
                    return Err(Error::Config("box half_widths must be nonnegative".into()));
                }
            }
            SampleRegion::Ball { radius, .. } => {
                if *radius < 0.0 {
                    return Err(Error::Config("ball radius must be nonnegative".into()));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            SampleRegion::Box {
                center,
                half_widths,
            } => x
                .iter()
                .zip(center)
                .zip(half_widths)
                .all(|((xi, ci), wi)| (xi - ci).abs() <= *wi),
            SampleRegion::Ball { center, radius } => {
                let d2: f64 = x.iter().zip(center).map(|(xi, ci)| (xi - ci).powi(2)).sum();
                d2.sqrt() <= *radius
            }
        }
    }

    /// Lebesgue volume of the region.
    pub fn volume(&self) -> f64 {
        match self {
            SampleRegion::Box { half_widths, .. } => {
                half_widths.iter().map(|w| 2.0 * w).product()
            }
            SampleRegion::Ball { center, radius } => {
                unit_ball_volume(center.len()) * radius.powi(center.len() as i32)
            }
        }
    }

    pub fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self {
            SampleRegion::Box {
                center,
                half_widths,
            } => {
                for i in 0..center.len() {
                    let u: f64 = rng.gen::<f64>() * 2.0 - 1.0;
                    out[i] = center[i] + u * half_widths[i];
                }
            }
            SampleRegion::Ball { center, radius } => {
                sample_ball(rng, *radius, out);
                for i in 0..center.len() {
                    out[i] += center[i];
                }
            }
        }
    }
}

/// Uniform sample from the solid ball of the given radius around the
/// origin: normalized Gaussian direction scaled by radius * U^{1/p}.
fn sample_ball(rng: &mut ChaCha8Rng, radius: f64, out: &mut [f64]) {
    let p = out.len();
    loop {
        let mut norm2 = 0.0;
        for o in out.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *o = g;
            norm2 += g * g;
        }
        if norm2 > 0.0 {
            let u: f64 = rng.gen::<f64>();
            let scale = radius * u.powf(1.0 / p as f64) / norm2.sqrt();
            for o in out.iter_mut() {
                *o *= scale;
            }
            return;
        }
    }
}

/// n i.i.d. uniform draws from the region; deterministic given seed.
pub fn sample_initial(region: &SampleRegion, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    region.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = region.dim();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x = vec![0.0; p];
        region.sample_into(&mut rng, &mut x);
        out.push(x);
    }
    Ok(out)
}

/// Numerical differentiation method for trajectories.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum DiffMethod {
    /// Per-point least-squares polynomial fit over a centered window
    /// (truncated one-sided at the trajectory ends).
    Savgol { window: usize, polyorder: usize },
    /// Natural cubic spline, differentiated analytically at the knots.
    Spline,
}

/// Fill `traj.derivs` from its states.
pub fn differentiate(traj: &mut Trajectory, method: DiffMethod) -> Result<()> {
    let n = traj.len();
    let p = traj.state_dim();
    let dt = traj.dt();
    let derivs = match method {
        DiffMethod::Savgol { window, polyorder } => {
            if window % 2 == 0 {
                return Err(Error::Config(format!(
                    "savgol window must be odd, got {window}"
                )));
            }
            if polyorder >= window {
                return Err(Error::Config(format!(
                    "savgol polyorder ({polyorder}) must be less than window ({window})"
                )));
            }
            if n < window.max(polyorder + 1) {
                return Err(Error::TooShort {
                    need: window.max(polyorder + 1),
                    got: n,
                });
            }
            savgol_derivative(traj.states_flat(), n, p, dt, window, polyorder)
        }
        DiffMethod::Spline => {
            if n < 4 {
                return Err(Error::TooShort { need: 4, got: n });
            }
            spline_derivative(traj.states_flat(), n, p, dt)
        }
    };
    traj.set_derivs(derivs);
    Ok(())
}

/// Derivative weights for one window shape: the fitted polynomial's linear
/// coefficient as a linear functional of the window values, in index units.
fn savgol_weights(left: usize, right: usize, polyorder: usize) -> Vec<f64> {
    let m = left + right + 1;
    let nc = polyorder + 1;
    // normal equations G a = Vt y with V[j][k] = u_j^k, u_j = j - left
    let mut v = vec![0.0; m * nc];
    for j in 0..m {
        let u = j as f64 - left as f64;
        let mut pw = 1.0;
        for k in 0..nc {
            v[j * nc + k] = pw;
            pw *= u;
        }
    }
    let mut g = vec![0.0; nc * nc];
    for a in 0..nc {
        for b in 0..nc {
            let mut acc = 0.0;
            for j in 0..m {
                acc += v[j * nc + a] * v[j * nc + b];
            }
            g[a * nc + b] = acc;
        }
    }
    // solve G w_row = e1 (selecting the linear coefficient), then
    // weights_j = sum_k w_row[k] V[j][k]
    let mut rhs = vec![0.0; nc];
    rhs[1] = 1.0;
    let row = crate::linalg::solve_dense(&mut g, &mut rhs, nc)
        .expect("savgol normal equations are nonsingular for polyorder < window");
    (0..m)
        .map(|j| (0..nc).map(|k| row[k] * v[j * nc + k]).sum())
        .collect()
}

fn savgol_derivative(
    states: &[f64],
    n: usize,
    p: usize,
    dt: f64,
    window: usize,
    polyorder: usize,
) -> Vec<f64> {
    let hw = window / 2;
    let mut cache: std::collections::HashMap<(usize, usize), Vec<f64>> =
        std::collections::HashMap::new();
    let mut out = vec![0.0; n * p];
    for i in 0..n {
        let mut lo = i.saturating_sub(hw);
        let mut hi = (i + hw).min(n - 1);
        // keep at least polyorder + 1 points when truncated at the ends
        while hi - lo < polyorder {
            if lo > 0 {
                lo -= 1;
            } else {
                hi += 1;
            }
        }
        let key = (i - lo, hi - i);
        let w = cache
            .entry(key)
            .or_insert_with(|| savgol_weights(key.0, key.1, polyorder));
        for c in 0..p {
            let mut acc = 0.0;
            for (j, wj) in w.iter().enumerate() {
                acc += wj * states[(lo + j) * p + c];
            }
            out[i * p + c] = acc / dt;
        }
    }
    out
}

/// Natural cubic spline derivative at the knots (second derivative zero at
/// both ends), per channel, via the standard tridiagonal system.
fn spline_derivative(states: &[f64], n: usize, p: usize, dt: f64) -> Vec<f64> {
    let mut out = vec![0.0; n * p];
    let mut rhs = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut m2 = vec![0.0; n]; // second derivatives at knots
    for c in 0..p {
        let y = |i: usize| states[i * p + c];
        // interior equations: (1/6) m_{i-1} + (2/3) m_i + (1/6) m_{i+1}
        //  = (y_{i+1} - 2 y_i + y_{i-1}) / dt^2
        for i in 1..n - 1 {
            rhs[i] = (y(i + 1) - 2.0 * y(i) + y(i - 1)) / (dt * dt);
        }
        // Thomas algorithm with natural end conditions m_0 = m_{n-1} = 0
        diag[1] = 2.0 / 3.0;
        for i in 2..n - 1 {
            let w = (1.0 / 6.0) / diag[i - 1];
            diag[i] = 2.0 / 3.0 - w * (1.0 / 6.0);
            rhs[i] -= w * rhs[i - 1];
        }
        m2[0] = 0.0;
        m2[n - 1] = 0.0;
        if n > 2 {
            m2[n - 2] = rhs[n - 2] / diag[n - 2];
            for i in (1..n - 2).rev() {
                m2[i] = (rhs[i] - (1.0 / 6.0) * m2[i + 1]) / diag[i];
            }
        }
        for i in 0..n - 1 {
            out[i * p + c] = (y(i + 1) - y(i)) / dt - dt * (2.0 * m2[i] + m2[i + 1]) / 6.0;
        }
        out[(n - 1) * p + c] =
            (y(n - 1) - y(n - 2)) / dt + dt * (2.0 * m2[n - 1] + m2[n - 2]) / 6.0;
    }
    out
}

/// A base trajectory together with its variational difference trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedTrajectory {
    /// x1(t) with derivative estimates.
    pub base: Trajectory,
    /// delta_x(t) = x1(t) - x2(t), with d/dt estimates.
    pub delta: Trajectory,
    /// |delta_x(0)|.
    pub perturbation_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetEntries {
    Singles(Vec<Trajectory>),
    Paired(Vec<PairedTrajectory>),
}

/// A generated dataset plus the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub system: SystemConfig,
    pub region: SampleRegion,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub method: Option<DiffMethod>,
    pub entries: DatasetEntries,
}

impl Dataset {
    pub fn len(&self) -> usize {
        match &self.entries {
            DatasetEntries::Singles(v) => v.len(),
            DatasetEntries::Paired(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_paired(&self) -> bool {
        matches!(self.entries, DatasetEntries::Paired(_))
    }

    pub fn singles(&self) -> Result<&[Trajectory]> {
        match &self.entries {
            DatasetEntries::Singles(v) => Ok(v),
            DatasetEntries::Paired(_) => Err(Error::Config(
                "expected a single-trajectory dataset, found paired".into(),
            )),
        }
    }

    pub fn paired(&self) -> Result<&[PairedTrajectory]> {
        match &self.entries {
            DatasetEntries::Paired(v) => Ok(v),
            DatasetEntries::Singles(_) => Err(Error::Config(
                "expected a paired dataset, found single trajectories".into(),
            )),
        }
    }

    pub fn state_dim(&self) -> usize {
        match &self.entries {
            DatasetEntries::Singles(v) => v.first().map(|t| t.state_dim()).unwrap_or(0),
            DatasetEntries::Paired(v) => v.first().map(|t| t.base.state_dim()).unwrap_or(0),
        }
    }

    /// Keep only the entries at the given indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let entries = match &self.entries {
            DatasetEntries::Singles(v) => {
                DatasetEntries::Singles(indices.iter().map(|&i| v[i].clone()).collect())
            }
            DatasetEntries::Paired(v) => {
                DatasetEntries::Paired(indices.iter().map(|&i| v[i].clone()).collect())
            }
        };
        Dataset {
            system: self.system.clone(),
            region: self.region.clone(),
            dt: self.dt,
            horizon: self.horizon,
            seed: self.seed,
            method: self.method,
            entries,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent RNG stream for one accepted-slot index, so that results do
/// not depend on the thread schedule.
fn slot_rng(seed: u64, slot: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(slot.wrapping_add(0x5851_F42D))))
}

const ACCEPTANCE_BURN_IN: usize = 1000;

/// Generate n single trajectories from uniform initial conditions, with
/// derivative estimates when a method is given. The `system_config` is
/// recorded in the dataset so it can be persisted and reloaded.
pub fn generate_singles(
    sys: &SystemSpec,
    system_config: &SystemConfig,
    region: &SampleRegion,
    n: usize,
    t_final: f64,
    dt: f64,
    method: Option<DiffMethod>,
    seed: u64,
) -> Result<Dataset> {
    region.validate()?;
    if region.dim() != sys.state_dim() {
        return Err(Error::Dimension {
            expected: sys.state_dim(),
            got: region.dim(),
        });
    }
    let inits = sample_initial(region, n, seed)?;
    let trajs: Vec<Result<Trajectory>> = inits
        .par_iter()
        .map(|x0| {
            let mut traj = integrate(sys, x0, t_final, dt)?;
            if let Some(m) = method {
                differentiate(&mut traj, m)?;
            }
            Ok(traj)
        })
        .collect();
    let trajs = trajs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        system: system_config.clone(),
        region: region.clone(),
        dt,
        horizon: t_final,
        seed,
        method,
        entries: DatasetEntries::Singles(trajs),
    })
}

/// Algorithm parameters for paired (variational) trajectory generation.
#[derive(Debug, Clone, Copy)]
pub struct PairConfig {
    pub n: usize,
    pub eps_pert: f64,
    pub overshoot: f64,
    pub t_final: f64,
    pub dt: f64,
    pub seed: u64,
    pub method: DiffMethod,
}

/// Rejection-sampled paired trajectories for differential Lyapunov
/// (contraction) learning.
pub fn generate_pairs(
    sys: &SystemSpec,
    region: &SampleRegion,
    cfg: &PairConfig,
    system_config: &SystemConfig,
) -> Result<Dataset> {
    region.validate()?;
    if !(cfg.eps_pert > 0.0) {
        return Err(Error::Config("eps_pert must be positive".into()));
    }
    if cfg.overshoot < cfg.eps_pert {
        return Err(Error::Config(format!(
            "overshoot ({}) must be at least eps_pert ({})",
            cfg.overshoot, cfg.eps_pert
        )));
    }
    if region.dim() != sys.state_dim() {
        return Err(Error::Dimension {
            expected: sys.state_dim(),
            got: region.dim(),
        });
    }
    let p = sys.state_dim();
    let pairs: Vec<Result<PairedTrajectory>> = (0..cfg.n)
        .into_par_iter()
        .map(|slot| {
            let mut rng = slot_rng(cfg.seed, slot as u64);
            let mut x1 = vec![0.0; p];
            let mut dx = vec![0.0; p];
            let mut x2 = vec![0.0; p];
            let mut attempts = 0usize;
            loop {
                attempts += 1;
                if attempts > ACCEPTANCE_BURN_IN {
                    return Err(Error::AcceptanceRate {
                        rate: 1.0 / attempts as f64,
                        attempts,
                        slot,
                    });
                }
                region.sample_into(&mut rng, &mut x1);
                // resample dx (keeping x1) until the perturbed point stays
                // inside the sampling region
                let mut inner = 0usize;
                loop {
                    sample_ball(&mut rng, cfg.eps_pert, &mut dx);
                    for i in 0..p {
                        x2[i] = x1[i] + dx[i];
                    }
                    if region.contains(&x2) {
                        break;
                    }
                    inner += 1;
                    if inner > 10_000 {
                        return Err(Error::Config(format!(
                            "could not place perturbation inside the region after {inner} draws \
                             (eps_pert {} vs region extents)",
                            cfg.eps_pert
                        )));
                    }
                }
                let base = integrate(sys, &x1, cfg.t_final, cfg.dt)?;
                let pert = integrate(sys, &x2, cfg.t_final, cfg.dt)?;
                let n_t = base.len();
                let mut delta_flat = vec![0.0; n_t * p];
                let mut ok = true;
                for k in 0..n_t {
                    let bs = base.state(k);
                    let ps = pert.state(k);
                    let mut norm2 = 0.0;
                    for i in 0..p {
                        let d = bs[i] - ps[i];
                        delta_flat[k * p + i] = d;
                        norm2 += d * d;
                    }
                    if norm2.sqrt() > cfg.overshoot {
                        ok = false;
                        break;
                    }
                }
                if !ok {
                    continue;
                }
                let mut base = base;
                let mut delta = Trajectory::new(cfg.dt, p, delta_flat);
                differentiate(&mut base, cfg.method)?;
                differentiate(&mut delta, cfg.method)?;
                let pn = crate::linalg::norm(delta.state(0));
                return Ok(PairedTrajectory {
                    base,
                    delta,
                    perturbation_norm: pn,
                });
            }
        })
        .collect();
    let pairs = pairs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        system: system_config.clone(),
        region: region.clone(),
        dt: cfg.dt,
        horizon: cfg.t_final,
        seed: cfg.seed,
        method: Some(cfg.method),
        entries: DatasetEntries::Paired(pairs),
    })
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    version: String,
    system: SystemConfig,
    region: SampleRegion,
    dt: f64,
    horizon: f64,
    seed: u64,
    method: Option<DiffMethod>,
    paired: bool,
    n_entries: usize,
    n_steps: usize,
    state_dim: usize,
    has_derivs: bool,
}

/// Write the dataset: one JSON header line, then the numeric payload as
/// little-endian f64 in row-major [entry][time][channel] order with
/// channels = states || derivs (|| delta || delta-derivs when paired).
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let (n_steps, has_derivs) = match &ds.entries {
        DatasetEntries::Singles(v) => {
            let n_steps = v.first().map(|t| t.len()).unwrap_or(0);
            (n_steps, v.first().map(|t| t.has_derivs()).unwrap_or(false))
        }
        DatasetEntries::Paired(v) => (v.first().map(|t| t.base.len()).unwrap_or(0), true),
    };
    let header = DatasetHeader {
        version: DATASET_VERSION.to_string(),
        system: ds.system.clone(),
        region: ds.region.clone(),
        dt: ds.dt,
        horizon: ds.horizon,
        seed: ds.seed,
        method: ds.method,
        paired: ds.is_paired(),
        n_entries: ds.len(),
        n_steps,
        state_dim: ds.state_dim(),
        has_derivs,
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut file, &header)?;
    file.write_all(b"\n")?;
    let p = header.state_dim;
    let write_f64 = |v: f64, file: &mut std::io::BufWriter<std::fs::File>| -> Result<()> {
        file.write_all(&v.to_le_bytes())?;
        Ok(())
    };
    match &ds.entries {
        DatasetEntries::Singles(v) => {
            for traj in v {
                for k in 0..traj.len() {
                    for i in 0..p {
                        write_f64(traj.state(k)[i], &mut file)?;
                    }
                    if has_derivs {
                        let d = traj.deriv(k).ok_or(Error::MissingDerivs)?;
                        for i in 0..p {
                            write_f64(d[i], &mut file)?;
                        }
                    }
                }
            }
        }
        DatasetEntries::Paired(v) => {
            for pt in v {
                for k in 0..pt.base.len() {
                    for i in 0..p {
                        write_f64(pt.base.state(k)[i], &mut file)?;
                    }
                    let bd = pt.base.deriv(k).ok_or(Error::MissingDerivs)?;
                    for i in 0..p {
                        write_f64(bd[i], &mut file)?;
                    }
                    for i in 0..p {
                        write_f64(pt.delta.state(k)[i], &mut file)?;
                    }
                    let dd = pt.delta.deriv(k).ok_or(Error::MissingDerivs)?;
                    for i in 0..p {
                        write_f64(dd[i], &mut file)?;
                    }
                }
            }
        }
    }
    file.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut raw = Vec::new();
    file.read_to_end(&mut raw)?;
    let newline = raw
        .iter()
        .position(|&b| b == b'\n')
        .ok_or(Error::Malformed {
            offset: raw.len() as u64,
            reason: "missing header line".into(),
        })?;
    let header: DatasetHeader = serde_json::from_slice(&raw[..newline])?;
    if header.version != DATASET_VERSION {
        return Err(Error::Version {
            expected: DATASET_VERSION.to_string(),
            found: header.version,
        });
    }
    let payload = &raw[newline + 1..];
    let p = header.state_dim;
    let channels = if header.paired {
        4 * p
    } else if header.has_derivs {
        2 * p
    } else {
        p
    };
    let expected = header.n_entries * header.n_steps * channels * 8;
    if payload.len() != expected {
        return Err(Error::Malformed {
            offset: (newline + 1 + payload.len()) as u64,
            reason: format!(
                "payload has {} bytes, expected {expected} \
                 ({} entries x {} steps x {channels} channels x 8)",
                payload.len(),
                header.n_entries,
                header.n_steps
            ),
        });
    }
    let mut values = Vec::with_capacity(payload.len() / 8);
    for chunk in payload.chunks_exact(8) {
        values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let n_steps = header.n_steps;
    let entries = if header.paired {
        let mut pairs = Vec::with_capacity(header.n_entries);
        for e in 0..header.n_entries {
            let base_off = e * n_steps * channels;
            let mut states = vec![0.0; n_steps * p];
            let mut derivs = vec![0.0; n_steps * p];
            let mut dstates = vec![0.0; n_steps * p];
            let mut dderivs = vec![0.0; n_steps * p];
            for k in 0..n_steps {
                let off = base_off + k * channels;
                states[k * p..(k + 1) * p].copy_from_slice(&values[off..off + p]);
                derivs[k * p..(k + 1) * p].copy_from_slice(&values[off + p..off + 2 * p]);
                dstates[k * p..(k + 1) * p].copy_from_slice(&values[off + 2 * p..off + 3 * p]);
                dderivs[k * p..(k + 1) * p].copy_from_slice(&values[off + 3 * p..off + 4 * p]);
            }
            let mut base = Trajectory::new(header.dt, p, states);
            base.set_derivs(derivs);
            let mut delta = Trajectory::new(header.dt, p, dstates);
            delta.set_derivs(dderivs);
            let pn = crate::linalg::norm(delta.state(0));
            pairs.push(PairedTrajectory {
                base,
                delta,
                perturbation_norm: pn,
            });
        }
        DatasetEntries::Paired(pairs)
    } else {
        let mut trajs = Vec::with_capacity(header.n_entries);
        for e in 0..header.n_entries {
            let base_off = e * n_steps * channels;
            let mut states = vec![0.0; n_steps * p];
            let mut derivs = vec![0.0; n_steps * p];
            for k in 0..n_steps {
                let off = base_off + k * channels;
                states[k * p..(k + 1) * p].copy_from_slice(&values[off..off + p]);
                if header.has_derivs {
                    derivs[k * p..(k + 1) * p].copy_from_slice(&values[off + p..off + 2 * p]);
                }
            }
            let mut traj = Trajectory::new(header.dt, p, states);
            if header.has_derivs {
                traj.set_derivs(derivs);
            }
            trajs.push(traj);
        }
        DatasetEntries::Singles(trajs)
    };
    Ok(Dataset {
        system: header.system,
        region: header.region,
        dt: header.dt,
        horizon: header.horizon,
        seed: header.seed,
        method: header.method,
        entries,
    })
}
