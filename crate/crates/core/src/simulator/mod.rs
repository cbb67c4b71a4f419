//! Ground-truth CC-CV charging simulator and dataset generator.
//!
//! A session is integrated with explicit Euler steps in time. The delivered
//! power is the physics acceptance law ([`physics::actual_power`]) combined
//! with a voltage-dependent CV current taper; whichever is lower wins. The
//! resulting trajectory is resampled onto a uniform SoC grid so that every
//! trace lines up with the quadrature nodes used by the predictors.

mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{self, ChargingScenario, PhysicsParams, VehicleSpec};

pub use io::{load_dataset, save_dataset, DATASET_CSV, DATASET_JSON, CSV_HEADER};

/// Sessions are aborted when delivered power drops below this (kW).
pub const MIN_POWER_KW: f64 = 0.1;
const MAX_STEPS: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatorConfig {
    /// Euler time step (s).
    pub dt: f64,
    /// CV current-taper constant, per percent of nominal overvoltage.
    pub cv_k: f64,
    /// CV threshold voltage (V). `None` uses the pack voltage at `s_cv`.
    pub v_cv: Option<f64>,
    /// Standard deviation of the multiplicative log-normal power noise.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Number of SoC intervals in the stored trace grid.
    pub grid_points: usize,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            dt: 10.0,
            cv_k: 0.5,
            v_cv: None,
            noise_sigma: 0.01,
            seed: 42,
            grid_points: 100,
        }
    }
}

impl SimulatorConfig {
    pub fn noiseless() -> Self {
        SimulatorConfig {
            noise_sigma: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.cv_k.is_finite() && self.cv_k > 0.0) {
            return Err(Error::Config(format!("cv_k must be > 0, got {}", self.cv_k)));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if self.grid_points < 2 {
            return Err(Error::Config("grid_points must be >= 2".into()));
        }
        Ok(())
    }

    fn v_cv_for(&self, spec: &VehicleSpec, phys: &PhysicsParams) -> f64 {
        self.v_cv
            .unwrap_or_else(|| physics::pack_voltage(phys.s_cv, spec))
    }
}

/// Noise-free delivered power (kW) at SoC `s`.
///
/// The CV current taper `I = I_max exp(-k (V - V_cv))` measures the
/// overvoltage in percent of `v_nom` and starts from the CC current that is
/// actually delivered, so slow stations taper too. Power is taken at the
/// held terminal voltage `V_cv`.
pub fn ground_truth_power(
    s: f64,
    scenario: &ChargingScenario,
    phys: &PhysicsParams,
    cfg: &SimulatorConfig,
) -> Result<f64> {
    let law = physics::actual_power(s, scenario, phys)?;
    let spec = &scenario.vehicle;
    let v_cv = cfg.v_cv_for(spec, phys);
    let v = physics::pack_voltage(s, spec);
    if v <= v_cv {
        return Ok(law);
    }
    let p_cc = physics::actual_power(0.0, scenario, phys)?;
    let i_max = p_cc * 1000.0 / v_cv;
    let overvoltage_pct = 100.0 * (v - v_cv) / spec.v_nom;
    let i_cv = i_max * (-cfg.cv_k * overvoltage_pct).exp();
    Ok(law.min(i_cv * v_cv / 1000.0))
}

/// Simulated charging session resampled onto a uniform SoC grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub scenario: ChargingScenario,
    /// Hidden per-session physics (the taper constant is never a feature).
    pub physics: PhysicsParams,
    pub soc_grid: Vec<f64>,
    pub power_kw: Vec<f64>,
    pub current_a: Vec<f64>,
    /// Total charging time (min).
    pub t_c_true: f64,
    pub energy_kwh: f64,
}

impl SessionTrace {
    pub fn len(&self) -> usize {
        self.soc_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.soc_grid.is_empty()
    }
}

/// Integrates one session.
pub fn simulate_session(
    scenario: &ChargingScenario,
    phys: &PhysicsParams,
    cfg: &SimulatorConfig,
    rng: &mut impl Rng,
) -> Result<SessionTrace> {
    scenario.validate()?;
    phys.validate()?;
    cfg.validate()?;
    let c_eff = scenario.limits()?.c_bat_eff;
    let sigma = cfg.noise_sigma;

    // Step samples: SoC at the start of each step and the power applied over it.
    let mut step_soc = Vec::new();
    let mut step_power = Vec::new();
    let mut s = scenario.s_ini;
    let mut seconds = 0.0;
    let mut energy = 0.0;
    loop {
        let clean = ground_truth_power(s, scenario, phys, cfg)?;
        if clean < MIN_POWER_KW {
            return Err(Error::NonConvergence(format!(
                "power fell to {clean:.4} kW at s = {s:.4} before reaching {}",
                scenario.s_final
            )));
        }
        let p = if sigma > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            clean * (sigma * z - 0.5 * sigma * sigma).exp()
        } else {
            clean
        };
        step_soc.push(s);
        step_power.push(p);
        let ds = p * cfg.dt / (3600.0 * c_eff);
        if s + ds >= scenario.s_final {
            let rest = (scenario.s_final - s) * 3600.0 * c_eff / p;
            seconds += rest;
            energy += p * rest / 3600.0;
            break;
        }
        s += ds;
        seconds += cfg.dt;
        energy += p * cfg.dt / 3600.0;
        if step_soc.len() > MAX_STEPS {
            return Err(Error::NonConvergence("step budget exhausted".into()));
        }
    }

    let n = cfg.grid_points;
    let ds = (scenario.s_final - scenario.s_ini) / n as f64;
    let mut soc_grid = Vec::with_capacity(n + 1);
    let mut power_kw = Vec::with_capacity(n + 1);
    let mut current_a = Vec::with_capacity(n + 1);
    let mut j = 0;
    for k in 0..=n {
        let sk = if k == n {
            scenario.s_final
        } else {
            scenario.s_ini + k as f64 * ds
        };
        while j + 1 < step_soc.len() && step_soc[j + 1] <= sk {
            j += 1;
        }
        let pk = if j + 1 < step_soc.len() {
            let (s0, s1) = (step_soc[j], step_soc[j + 1]);
            let w = (sk - s0) / (s1 - s0);
            step_power[j] * (1.0 - w) + step_power[j + 1] * w
        } else {
            step_power[j]
        };
        soc_grid.push(sk);
        power_kw.push(pk);
        current_a.push(pk * 1000.0 / physics::pack_voltage(sk, &scenario.vehicle));
    }

    Ok(SessionTrace {
        scenario: *scenario,
        physics: *phys,
        soc_grid,
        power_kw,
        current_a,
        t_c_true: seconds / 60.0,
        energy_kwh: energy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VehicleCategory {
    Compact,
    MidSize,
    Luxury,
    Performance,
}

impl VehicleCategory {
    pub const ALL: [VehicleCategory; 4] = [
        VehicleCategory::Compact,
        VehicleCategory::MidSize,
        VehicleCategory::Luxury,
        VehicleCategory::Performance,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            VehicleCategory::Compact => "compact",
            VehicleCategory::MidSize => "mid-size",
            VehicleCategory::Luxury => "luxury",
            VehicleCategory::Performance => "performance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Platform {
    pub category: VehicleCategory,
    pub c_bat_nom: f64,
    pub p_max_nom: f64,
    pub v_nom: f64,
    pub p_cable: f64,
}

impl Platform {
    pub fn spec(&self) -> VehicleSpec {
        VehicleSpec::new(self.c_bat_nom, self.p_max_nom, self.v_nom, self.p_cable)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleCatalog {
    pub platforms: Vec<Platform>,
}

impl Default for VehicleCatalog {
    fn default() -> Self {
        serde_json::from_str(include_str!("../../data/vehicle_catalog.json"))
            .expect("bundled vehicle catalog is valid JSON")
    }
}

impl VehicleCatalog {
    pub fn validate(&self) -> Result<()> {
        if self.platforms.is_empty() {
            return Err(Error::Config("vehicle catalog is empty".into()));
        }
        for p in &self.platforms {
            p.spec().validate()?;
        }
        Ok(())
    }
}

/// Sampling ranges for generated sessions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetRanges {
    pub s_ini: (f64, f64),
    /// Target SoC as a fraction of the remaining headroom `1 - s_ini`.
    pub headroom_fraction: (f64, f64),
    pub p_station: (f64, f64),
    pub t_amb: (f64, f64),
    pub soh: (f64, f64),
    pub k_taper: (f64, f64),
}

impl Default for DatasetRanges {
    fn default() -> Self {
        DatasetRanges {
            s_ini: (0.05, 0.95),
            headroom_fraction: (0.2, 1.0),
            p_station: (7.0, 150.0),
            t_amb: (-10.0, 40.0),
            soh: (0.7, 1.0),
            k_taper: (physics::K_TAPER_MIN, physics::K_TAPER_MAX),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: usize,
    pub category: VehicleCategory,
    pub split: Option<Split>,
    pub trace: SessionTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub sessions: Vec<Session>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn traces(&self) -> impl Iterator<Item = &SessionTrace> {
        self.sessions.iter().map(|s| &s.trace)
    }

    /// First `n` sessions (in stored order).
    pub fn head(&self, n: usize) -> Dataset {
        Dataset {
            sessions: self.sessions.iter().take(n).cloned().collect(),
        }
    }

    pub fn filter(&self, mut keep: impl FnMut(&Session) -> bool) -> Dataset {
        Dataset {
            sessions: self.sessions.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }
}

/// RNG stream for session `index`, independent of every other session.
pub fn session_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws the scenario and hidden physics of session `index`.
pub fn sample_scenario(
    rng: &mut impl Rng,
    catalog: &VehicleCatalog,
    ranges: &DatasetRanges,
) -> (VehicleCategory, ChargingScenario, PhysicsParams) {
    let platform = catalog.platforms[rng.random_range(0..catalog.platforms.len())];
    let s_ini = uniform(rng, ranges.s_ini);
    let frac = uniform(rng, ranges.headroom_fraction);
    let s_final = (s_ini + (1.0 - s_ini) * frac).min(1.0);
    let scenario = ChargingScenario {
        s_ini,
        s_final,
        p_station: uniform(rng, ranges.p_station),
        soh: uniform(rng, ranges.soh),
        t_amb: uniform(rng, ranges.t_amb),
        vehicle: platform.spec(),
    };
    let phys = PhysicsParams::with_k_taper(uniform(rng, ranges.k_taper));
    (platform.category, scenario, phys)
}

/// Generates `n` sessions; session `i` depends only on `(cfg.seed, i)`.
pub fn generate_dataset(
    n: usize,
    cfg: &SimulatorConfig,
    catalog: &VehicleCatalog,
    ranges: &DatasetRanges,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Precondition("dataset size must be >= 1".into()));
    }
    cfg.validate()?;
    catalog.validate()?;
    let sessions = (0..n)
        .map(|id| {
            let mut rng = session_rng(cfg.seed, id as u64);
            let (category, scenario, phys) = sample_scenario(&mut rng, catalog, ranges);
            let trace = simulate_session(&scenario, &phys, cfg, &mut rng)?;
            Ok(Session {
                id,
                category,
                split: None,
                trace,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { sessions })
}

/// Per-category shuffled split into train/validation/test.
pub fn stratified_split(
    ds: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(0.0..=1.0).contains(f))
        || ((ft + fv + fs) - 1.0).abs() > 1e-9
    {
        return Err(Error::Precondition(format!(
            "split fractions must be in [0, 1] and sum to 1, got {fractions:?}"
        )));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut groups: Vec<Vec<&Session>> = Vec::new();
    for (ci, cat) in VehicleCategory::ALL.iter().enumerate() {
        let mut members: Vec<&Session> =
            ds.sessions.iter().filter(|s| s.category == *cat).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < 3 {
            return Err(Error::Precondition(format!(
                "category {} has only {} sessions; at least 3 required",
                cat.as_str(),
                members.len()
            )));
        }
        let mut rng = session_rng(seed, ci as u64);
        // Fisher-Yates; rand's shuffle is avoided so the order is pinned to
        // this file rather than to the rand version.
        for i in (1..members.len()).rev() {
            let j = rng.random_range(0..=i);
            members.swap(i, j);
        }
        groups.push(members);
    }
    // Overall counts are rounded once and then shared out between
    // categories, so the split sizes do not drift with the category count.
    let n = ds.len() as f64;
    let total_train = (n * ft).round() as usize;
    let total_val = ((n * (ft + fv)).round() as usize).saturating_sub(total_train);
    let sizes: Vec<usize> = groups.iter().map(|g| g.len()).collect();
    let n_train = apportion(&sizes, ft, total_train, &sizes);
    let room: Vec<usize> = sizes.iter().zip(&n_train).map(|(s, t)| s - t).collect();
    let n_val = apportion(&sizes, fv, total_val, &room);
    for ((members, nt), nv) in groups.into_iter().zip(n_train).zip(n_val) {
        for (i, s) in members.into_iter().enumerate() {
            let (bucket, tag) = if i < nt {
                (&mut train, Split::Train)
            } else if i < nt + nv {
                (&mut val, Split::Val)
            } else {
                (&mut test, Split::Test)
            };
            let mut s = s.clone();
            s.split = Some(tag);
            bucket.push(s);
        }
    }
    for part in [&mut train, &mut val, &mut test] {
        part.sort_by_key(|s| s.id);
    }
    Ok((
        Dataset { sessions: train },
        Dataset { sessions: val },
        Dataset { sessions: test },
    ))
}

/// Largest-remainder allocation of `total` items across groups in
/// proportion to `sizes[i] * frac`, never exceeding `caps[i]`.
fn apportion(sizes: &[usize], frac: f64, total: usize, caps: &[usize]) -> Vec<usize> {
    let quotas: Vec<f64> = sizes.iter().map(|&s| s as f64 * frac).collect();
    let mut out: Vec<usize> = quotas
        .iter()
        .zip(caps)
        .map(|(q, &c)| (q.floor() as usize).min(c))
        .collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(out.iter().sum());
    while left > 0 {
        let before = left;
        for &i in &order {
            if left > 0 && out[i] < caps[i] {
                out[i] += 1;
                left -= 1;
            }
        }
        if left == before {
            break;
        }
    }
    out
}
