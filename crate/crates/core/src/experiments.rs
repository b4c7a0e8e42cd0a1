//! Falsifiable experiments assembled from the solver, oracles and harness.
//!
//! A [`Session`] owns one operator setup and caches its trajectories per
//! refinement level; every experiment returns an [`EstimateReport`].

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coefficient::CoefficientField;
use crate::error::{contract, Result};
use crate::families::{builtin_family, InitialData, OperatorFamily};
use crate::forms::{garding_probe, hardy_check, random_probe};
use crate::geometry::{CornerBox, ParabolicCylinder};
use crate::grid::{Field, TensorGrid};
use crate::harness::{
    carleson_constant, derivative_bound, elliptic_harnack, envelope_bound, grid_signature,
    holder_alpha, hopf_oleinik_constant, maximum_principle, quotient_bounds, refinement_verdict,
    sobolev_sup, vanishing_exponent, EstimateReport, RatioFlag, SeriesRow, Verdict,
};
use crate::measure::{integrate_fn, IntegralOutcome, QuadratureSpec, WeightedMeasure};
use crate::operator::{Jet, KimuraOperator};
use crate::oracles::{
    density_compare, exact_eigen_solution, model_bins, pde_pairings, pde_survival, sample_em,
    sample_model_exact, Diffusion1d, PathEnsemble,
};
use crate::poly::Polynomial;
use crate::solver::{convergence_study, energy_check, solve_ivp, DtRule, Scheme, Trajectory};
use crate::stats::ks_distance;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Base cells per axis of the primary grid.
    pub cells: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    /// Base cells of the refinement series; defaults to `[cells, 2 cells]`.
    #[serde(default)]
    pub refinements: Vec<usize>,
}

fn default_layers() -> usize {
    crate::grid::DEFAULT_LAYERS
}

impl GridSpec {
    pub fn levels(&self) -> Vec<usize> {
        if self.refinements.is_empty() {
            vec![self.cells, 2 * self.cells]
        } else {
            self.refinements.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_save_every")]
    pub save_every: usize,
}

fn default_scheme() -> Scheme {
    Scheme::CrankNicolson
}

fn default_save_every() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setup {
    pub operator: OperatorFamily,
    pub grid: GridSpec,
    pub scheme: SchemeSpec,
    #[serde(default = "default_initial")]
    pub initial: InitialData,
    /// Second, independent positive data for quotient experiments.
    #[serde(default = "default_initial_alt")]
    pub initial_alt: InitialData,
}

fn default_initial() -> InitialData {
    InitialData::Profile { tilt: 0.0 }
}

fn default_initial_alt() -> InitialData {
    InitialData::BesselMode
}

pub struct Session {
    pub setup: Setup,
    pub op: KimuraOperator,
    pub config_hash: String,
    pub seed: u64,
    cache: Mutex<HashMap<(u8, usize), Arc<Trajectory>>>,
    ensembles: Mutex<Vec<(String, PathEnsemble)>>,
}

impl Session {
    pub fn new(setup: Setup, config_hash: impl Into<String>, seed: u64) -> Result<Self> {
        let op = setup.operator.build()?;
        Ok(Self {
            setup,
            op,
            config_hash: config_hash.into(),
            seed,
            cache: Mutex::new(HashMap::new()),
            ensembles: Mutex::new(Vec::new()),
        })
    }

    pub fn grid(&self, cells: usize) -> Result<Arc<TensorGrid>> {
        Ok(Arc::new(TensorGrid::graded(
            self.op.domain.clone(),
            &vec![cells; self.op.dim()],
            self.setup.grid.layers,
        )?))
    }

    pub fn initial_field(&self, which: u8, grid: Arc<TensorGrid>) -> Result<Field> {
        let data = if which == 0 {
            &self.setup.initial
        } else {
            &self.setup.initial_alt
        };
        let domain = self.op.domain.clone();
        let n0 = self.op.n0;
        let mut u0 = Field::from_fn(grid.clone(), |z| data.eval(&domain, z))?;
        for p in 0..grid.len() {
            if grid.on_tangent_face(&grid.multi_index(p), n0) {
                u0.values[p] = 0.0;
            }
        }
        Ok(u0)
    }

    /// Trajectory of initial data `which` (0 primary, 1 alternate) on the
    /// grid with `cells` base cells, solved once and cached.
    pub fn trajectory(&self, which: u8, cells: usize) -> Result<Arc<Trajectory>> {
        if let Some(t) = self.cache.lock().expect("cache lock").get(&(which, cells)) {
            return Ok(t.clone());
        }
        let grid = self.grid(cells)?;
        let u0 = self.initial_field(which, grid.clone())?;
        let s = &self.setup.scheme;
        let traj = Arc::new(solve_ivp(
            &self.op,
            grid,
            &u0,
            s.t_end,
            s.dt,
            s.scheme,
            s.save_every,
        )?);
        self.cache
            .lock()
            .expect("cache lock")
            .insert((which, cells), traj.clone());
        Ok(traj)
    }

    /// Seed a cached trajectory, e.g. one loaded from disk.
    pub fn insert_trajectory(&self, which: u8, cells: usize, traj: Trajectory) {
        self.cache
            .lock()
            .expect("cache lock")
            .insert((which, cells), Arc::new(traj));
    }

    pub fn cached(&self) -> Vec<((u8, usize), Arc<Trajectory>)> {
        let mut v: Vec<_> = self
            .cache
            .lock()
            .expect("cache lock")
            .iter()
            .map(|(k, t)| (*k, t.clone()))
            .collect();
        v.sort_by_key(|(k, _)| *k);
        v
    }

    /// Path ensembles drawn so far, by name.
    pub fn ensembles(&self) -> Vec<(String, PathEnsemble)> {
        let mut v = self.ensembles.lock().expect("ensemble lock").clone();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    fn keep_ensemble(&self, name: String, e: PathEnsemble) {
        self.ensembles
            .lock()
            .expect("ensemble lock")
            .push((name, e));
    }

    fn report(&self, tag: &str, tol: f64) -> EstimateReport {
        let mut r = EstimateReport::new(tag, tol);
        r.config_hash = self.config_hash.clone();
        r
    }

    /// Default face point: tangent coordinates 0, transverse at mid-extent,
    /// `y` at the centre.
    fn face_point(&self) -> Vec<f64> {
        let d = &self.op.domain;
        let mut z = vec![0.0; self.op.dim()];
        for (i, zi) in z.iter_mut().enumerate().take(self.op.n).skip(self.op.n0) {
            *zi = 0.5 * d.x_extent[i];
        }
        for l in 0..self.op.m {
            z[self.op.n + l] = d.y_center[l];
        }
        z
    }

    pub fn run(&self, exp: &Experiment) -> Result<EstimateReport> {
        match exp {
            Experiment::Conjugation(p) => self.conjugation(p),
            Experiment::EigenBenchmark(p) => self.eigen_benchmark(p),
            Experiment::VanishingExponent(p) => self.vanishing(p),
            Experiment::DerivativeBound(p) => self.derivative_bounds(p),
            Experiment::BoundaryHarnack(p) => self.boundary_harnack(p),
            Experiment::Holder(p) => self.holder(p),
            Experiment::EllipticHarnack(p) => self.elliptic(p),
            Experiment::MonteCarlo(p) => self.monte_carlo(p),
            Experiment::SingularMeasure(p) => self.singular_measure(p),
            Experiment::Hardy(p) => self.hardy(p),
            Experiment::Garding(p) => self.garding(p),
            Experiment::Commutator(p) => self.commutator(p),
            Experiment::Energy(p) => self.energy(p),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    Conjugation(ConjugationParams),
    EigenBenchmark(EigenParams),
    VanishingExponent(VanishingParams),
    DerivativeBound(DerivativeParams),
    BoundaryHarnack(CylinderParams),
    Holder(HolderParams),
    EllipticHarnack(EllipticParams),
    MonteCarlo(MonteCarloParams),
    SingularMeasure(SingularParams),
    Hardy(HardyParams),
    Garding(GardingParams),
    Commutator(CommutatorParams),
    Energy(EnergyParams),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Conjugation(_) => "conjugation",
            Self::EigenBenchmark(_) => "eigen-benchmark",
            Self::VanishingExponent(_) => "vanishing-exponent",
            Self::DerivativeBound(_) => "derivative-bound",
            Self::BoundaryHarnack(_) => "boundary-harnack",
            Self::Holder(_) => "holder",
            Self::EllipticHarnack(_) => "elliptic-harnack",
            Self::MonteCarlo(_) => "monte-carlo",
            Self::SingularMeasure(_) => "singular-measure",
            Self::Hardy(_) => "hardy",
            Self::Garding(_) => "garding",
            Self::Commutator(_) => "commutator",
            Self::Energy(_) => "energy",
        }
    }

    /// Experiments that read trajectories of the session setup.
    pub fn uses_trajectories(&self) -> bool {
        matches!(
            self,
            Self::VanishingExponent(_)
                | Self::DerivativeBound(_)
                | Self::BoundaryHarnack(_)
                | Self::Holder(_)
                | Self::EllipticHarnack(_)
                | Self::Energy(_)
        )
    }

    /// The boundary-Harnack group run by the `harnack` subcommand.
    pub fn is_harnack(&self) -> bool {
        matches!(
            self,
            Self::BoundaryHarnack(_) | Self::Holder(_) | Self::EllipticHarnack(_)
        )
    }

    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err((field.to_string(), format!("must be positive, got {v}")))
            }
        };
        match self {
            Self::BoundaryHarnack(p) => {
                positive("r", p.r)?;
                positive("t", p.t)?;
                positive("tolerance", p.tolerance)
            }
            Self::Holder(p) => {
                positive("r", p.r)?;
                positive("t", p.t)
            }
            Self::EllipticHarnack(p) => {
                positive("r", p.r)?;
                positive("t", p.t)
            }
            Self::VanishingExponent(p) => {
                positive("window[0]", p.window[0])?;
                positive("t", p.t)?;
                if p.window[1] <= p.window[0] {
                    return Err(("window".into(), "upper end must exceed lower end".into()));
                }
                Ok(())
            }
            Self::MonteCarlo(p) => {
                positive("dt", p.dt)?;
                positive("t", p.t)?;
                positive("radius", p.radius)
            }
            Self::Energy(p) => {
                positive("r", p.r)?;
                if !(p.r0 > p.r) {
                    return Err(("r0".into(), "must exceed r".into()));
                }
                match p.envelope_p.iter().position(|&e| !(e > 2.0)) {
                    Some(k) => Err((format!("envelope_p[{k}]"), "exponent must exceed 2".into())),
                    None => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConjugationParams {
    pub functions: usize,
    pub probes: usize,
    pub tolerance: f64,
}

impl Default for ConjugationParams {
    fn default() -> Self {
        Self {
            functions: 20,
            probes: 16,
            tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigenParams {
    pub nodes: usize,
    pub layers: usize,
    pub dt: f64,
    pub t_end: f64,
    pub sup_tolerance: f64,
    pub refinements: Vec<usize>,
    pub min_order: f64,
    pub order_t_end: f64,
    pub order_dt: f64,
}

impl Default for EigenParams {
    fn default() -> Self {
        Self {
            nodes: 512,
            layers: 10,
            dt: 1e-3,
            t_end: 1.0,
            sup_tolerance: 1e-3,
            refinements: vec![64, 128, 256],
            min_order: 1.8,
            order_t_end: 0.1,
            order_dt: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VanishingParams {
    pub t: f64,
    pub window: [f64; 2],
    /// Expected slope; defaults to the number of tangent axes.
    pub expected: Option<f64>,
    pub tolerance: f64,
}

impl Default for VanishingParams {
    fn default() -> Self {
        Self {
            t: 0.5,
            window: [1e-3, 1e-2],
            expected: None,
            tolerance: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DerivativeParams {
    pub t: f64,
    /// Axes to check; all axes when empty.
    pub axes: Vec<usize>,
    /// The inner box is this fraction of the domain.
    pub fraction: f64,
    pub tolerance: f64,
}

impl Default for DerivativeParams {
    fn default() -> Self {
        Self {
            t: 0.5,
            axes: Vec::new(),
            fraction: 0.25,
            tolerance: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CylinderParams {
    pub t: f64,
    pub r: f64,
    /// Cylinder centre on the boundary; defaults to the face point.
    pub z: Option<Vec<f64>>,
    pub tolerance: f64,
}

impl Default for CylinderParams {
    fn default() -> Self {
        Self {
            t: 0.3,
            r: 0.2,
            z: None,
            tolerance: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HolderParams {
    pub t: f64,
    pub r: f64,
    pub z: Option<Vec<f64>>,
    pub max_points: usize,
    pub min_alpha: f64,
}

impl Default for HolderParams {
    fn default() -> Self {
        Self {
            t: 0.3,
            r: 0.2,
            z: None,
            max_points: 1500,
            min_alpha: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EllipticParams {
    pub t: f64,
    pub r: f64,
    /// The slab is taken over this fraction of the box.
    pub fraction: f64,
    pub tolerance: f64,
}

impl Default for EllipticParams {
    fn default() -> Self {
        Self {
            t: 0.3,
            r: 0.2,
            fraction: 0.5,
            tolerance: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloParams {
    pub b: f64,
    pub x0: f64,
    pub t: f64,
    pub paths: usize,
    pub dt: f64,
    pub ks_tolerance: f64,
    pub stderr_factor: f64,
    pub mass_tolerance: f64,
    /// Box `[0, radius]` of the PDE pairing solves.
    pub radius: f64,
    pub cells: usize,
    pub pde_dt: f64,
    pub bins: usize,
}

impl Default for MonteCarloParams {
    fn default() -> Self {
        Self {
            b: 0.5,
            x0: 0.3,
            t: 0.5,
            paths: 100_000,
            dt: 1e-4,
            ks_tolerance: 0.02,
            stderr_factor: 3.0,
            mass_tolerance: 0.02,
            radius: 8.0,
            cells: 800,
            pde_dt: 5e-4,
            bins: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SingularParams {
    pub slope_tolerance: f64,
    pub value_tolerance: f64,
}

impl Default for SingularParams {
    fn default() -> Self {
        Self {
            slope_tolerance: 0.02,
            value_tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardyParams {
    pub fields: usize,
    /// Positive-weight axis; defaults to the first one.
    pub axis: Option<usize>,
    pub tolerance: f64,
}

impl Default for HardyParams {
    fn default() -> Self {
        Self {
            fields: 50,
            axis: None,
            tolerance: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GardingParams {
    pub probes: usize,
    pub cells: usize,
}

impl Default for GardingParams {
    fn default() -> Self {
        Self {
            probes: 100,
            cells: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommutatorParams {
    pub degree: u32,
    pub points: usize,
    pub tolerance: f64,
}

impl Default for CommutatorParams {
    fn default() -> Self {
        Self {
            degree: 4,
            points: 3,
            tolerance: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyParams {
    pub tolerance: f64,
    pub max_principle_tolerance: f64,
    /// `(x multi-index, y multi-index)` pairs for the Sobolev check.
    pub sobolev: Vec<(Vec<u32>, Vec<u32>)>,
    pub t: f64,
    pub r: f64,
    /// Outer radius of the envelope rectangles; must exceed `r`.
    pub r0: f64,
    /// Exponents scanned by the pointwise envelope bound.
    pub envelope_p: Vec<f64>,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            tolerance: 0.25,
            max_principle_tolerance: 1e-9,
            sobolev: Vec::new(),
            t: 0.1,
            r: 0.5,
            r0: 0.75,
            envelope_p: vec![3.0, 4.0, 6.0],
        }
    }
}

fn series_row(grid: &TensorGrid, cells: usize, values: &[(&str, f64)]) -> SeriesRow {
    SeriesRow {
        grid: grid_signature(grid),
        cells,
        values: values.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

/// Random polynomial of total degree at most `deg` with normal coefficients.
fn random_poly(dim: usize, deg: u32, rng: &mut ChaCha8Rng) -> Polynomial {
    let mut p = Polynomial::zero(dim);
    for powers in monomial_powers(dim, deg) {
        let c: f64 = rng.sample(rand_distr::StandardNormal);
        let mut term = Polynomial::constant(dim, c);
        for (k, &e) in powers.iter().enumerate() {
            for _ in 0..e {
                term = term.mul_var(k);
            }
        }
        p = p + term;
    }
    p
}

fn monomial_powers(dim: usize, deg: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|e: Vec<u32>| {
                let used: u32 = e.iter().sum();
                (0..=(deg - used)).map(move |p| {
                    let mut f = e.clone();
                    f.push(p);
                    f
                })
            })
            .collect();
    }
    out
}

fn interior_points(domain: &CornerBox, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            (0..domain.dim())
                .map(|k| {
                    let s: f64 = rng.random_range(0.05..0.95);
                    domain.lower(k) + s * (domain.upper(k) - domain.lower(k))
                })
                .collect()
        })
        .collect()
}

/// Coupled operators on `S_{1,0}`, `S_{1,1}` and `S_{2,1}`.
fn coupled_boxes() -> Vec<(&'static str, KimuraOperator)> {
    let fams = [
        (
            "S10",
            OperatorFamily::Coupled {
                n: 1,
                m: 0,
                n0: 1,
                b: 0.0,
                coupling: 0.3,
                shift: -0.5,
                radius: 1.0,
            },
        ),
        (
            "S11",
            OperatorFamily::Coupled {
                n: 1,
                m: 1,
                n0: 1,
                b: 0.0,
                coupling: 0.3,
                shift: 0.4,
                radius: 1.0,
            },
        ),
        (
            "S21",
            OperatorFamily::Coupled {
                n: 2,
                m: 1,
                n0: 1,
                b: 0.7,
                coupling: 0.2,
                shift: -0.2,
                radius: 1.0,
            },
        ),
    ];
    fams.into_iter()
        .map(|(name, f)| {
            let mut op = f.build().expect("built-in operator");
            // position-dependent coefficients exercise the product rule
            let dim = op.dim();
            let tilt = Polynomial::constant(dim, 1.0) + Polynomial::var(dim, 0).scale(0.1);
            op.abar[0] = CoefficientField::Poly(tilt);
            op.c0 = CoefficientField::Poly(
                Polynomial::var(dim, dim - 1).scale(0.3) + Polynomial::constant(dim, -0.1),
            );
            (name, op)
        })
        .collect()
}

impl Session {
    fn conjugation(&self, p: &ConjugationParams) -> Result<EstimateReport> {
        let mut rep = self.report("conjugation", p.tolerance);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut worst: f64 = 0.0;
        for (name, op) in coupled_boxes() {
            let probes = interior_points(&op.domain, p.probes, &mut rng);
            let mut box_worst: f64 = 0.0;
            for _ in 0..p.functions {
                let mut u = random_poly(op.dim(), 3, &mut rng);
                for i in 0..op.n0 {
                    u = u.mul_var(i);
                }
                box_worst = box_worst.max(op.conjugation_residual(&u, &probes)?);
            }
            rep.constants.insert(format!("residual_{name}"), box_worst);
            worst = worst.max(box_worst);
        }
        rep.constants.insert("max_residual".into(), worst);
        rep.verdict = if worst <= p.tolerance {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        Ok(rep)
    }

    fn eigen_benchmark(&self, p: &EigenParams) -> Result<EstimateReport> {
        let mut rep = self.report("eigen-benchmark", p.sup_tolerance);
        let op = OperatorFamily::ClassicalKimura { radius: 1.0 }.build()?;
        if p.nodes < p.layers + 3 {
            return contract("eigen benchmark needs more nodes than layers");
        }
        let cells = p.nodes - 1 - p.layers;
        let grid = Arc::new(TensorGrid::graded(op.domain.clone(), &[cells], p.layers)?);
        let u0 = Field::from_fn(grid.clone(), |z| exact_eigen_solution(0.0, z[0]))?;
        let traj = solve_ivp(
            &op,
            grid.clone(),
            &u0,
            p.t_end,
            p.dt,
            Scheme::CrankNicolson,
            usize::MAX,
        )?;
        let err = Field::from_fn(grid.clone(), |z| exact_eigen_solution(p.t_end, z[0]))?
            .zip_with(traj.last(), |a, b| a - b)?
            .sup_abs();
        rep.constants.insert("sup_error".into(), err);
        rep.constants.insert("grid_nodes".into(), grid.len() as f64);
        // x(1-x) is reproduced exactly by 3-point stencils, so the spatial
        // order is measured on the next symmetric eigenmode
        let second =
            |t: f64, z: &[f64]| (-12.0 * t).exp() * InitialData::EigenSecond.eval(&op.domain, z);
        let study = convergence_study(
            &op,
            &second,
            &p.refinements,
            p.layers,
            p.order_t_end,
            DtRule::Fixed { dt: p.order_dt },
            Scheme::CrankNicolson,
        )?;
        for row in &study.rows {
            let g = TensorGrid::graded(op.domain.clone(), &[row.cells], p.layers)?;
            rep.series.push(series_row(
                &g,
                row.cells,
                &[
                    ("sup_error", row.sup_error),
                    ("l2_error", row.l2_error),
                    ("h", row.h),
                ],
            ));
        }
        rep.constants.insert("order_sup".into(), study.order_sup);
        rep.constants.insert("order_l2".into(), study.order_l2);
        rep.verdict = Verdict::Pass;
        rep.require(err <= p.sup_tolerance, "sup error above tolerance");
        rep.require(
            study.order_sup >= p.min_order,
            "spatial order below minimum",
        );
        Ok(rep)
    }

    fn vanishing(&self, p: &VanishingParams) -> Result<EstimateReport> {
        let mut rep = self.report("vanishing-exponent", p.tolerance);
        let n0 = self.op.n0;
        if n0 == 0 {
            return contract("vanishing exponent needs a tangent axis");
        }
        let expected = p.expected.unwrap_or(n0 as f64);
        let axes: Vec<usize> = (0..n0).collect();
        let base = self.face_point();
        let mut slopes = Vec::new();
        for cells in self.setup.grid.levels() {
            let traj = self.trajectory(0, cells)?;
            let fit =
                vanishing_exponent(traj.nearest(p.t), &axes, &base, (p.window[0], p.window[1]))?;
            if fit.degenerate {
                rep.flags.push(format!("degenerate fit on {cells} cells"));
            }
            rep.series.push(series_row(
                &traj.grid,
                cells,
                &[("slope", fit.slope), ("points", fit.points as f64)],
            ));
            slopes.push(fit.slope);
        }
        let finest = *slopes.last().unwrap_or(&f64::NAN);
        rep.constants.insert("slope".into(), finest);
        rep.constants.insert("expected".into(), expected);
        rep.verdict = if (finest - expected).abs() <= p.tolerance {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        if slopes.len() < 2 {
            rep.verdict = Verdict::Insufficient;
        }
        Ok(rep)
    }

    fn derivative_bounds(&self, p: &DerivativeParams) -> Result<EstimateReport> {
        let mut rep = self.report("derivative-bound", p.tolerance);
        let axes: Vec<usize> = if p.axes.is_empty() {
            (0..self.op.dim()).collect()
        } else {
            p.axes.clone()
        };
        let region = self.op.domain.shrink(p.fraction);
        let levels = self.setup.grid.levels();
        let mut per_axis: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for &cells in &levels {
            let traj = self.trajectory(0, cells)?;
            let u = traj.nearest(p.t);
            let mut vals = Vec::new();
            for &k in &axes {
                let s = derivative_bound(u, self.op.n0, k, &region)?;
                per_axis.entry(k).or_default().push(s);
                vals.push((format!("sup_d{k}"), s));
            }
            let refs: Vec<(&str, f64)> = vals.iter().map(|(k, v)| (k.as_str(), *v)).collect();
            rep.series.push(series_row(&traj.grid, cells, &refs));
        }
        rep.verdict = Verdict::Pass;
        for (k, vals) in &per_axis {
            let (v, flags) = refinement_verdict(vals, p.tolerance);
            rep.constants
                .insert(format!("sup_d{k}"), *vals.last().unwrap_or(&f64::NAN));
            if !v.passed() {
                rep.verdict = v;
                rep.flags
                    .extend(flags.into_iter().map(|f| format!("axis {k}: {f}")));
            }
            if vals.iter().any(|&s| s == 0.0) && *k < self.op.n0 {
                rep.flags
                    .push(format!("axis {k}: scaled derivative vanishes"));
            }
        }
        Ok(rep)
    }

    fn cylinder(&self, t: f64, r: f64, z: &Option<Vec<f64>>) -> Result<ParabolicCylinder> {
        let z = z.clone().unwrap_or_else(|| self.face_point());
        ParabolicCylinder::centered(t, z, r, self.op.n)
    }

    fn boundary_harnack(&self, p: &CylinderParams) -> Result<EstimateReport> {
        let mut rep = self.report("boundary-harnack", p.tolerance);
        let cyl = self.cylinder(p.t, p.r, &p.z)?;
        let n0 = self.op.n0;
        let mut cols: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        let mut vacuous = true;
        rep.verdict = Verdict::Pass;
        for cells in self.setup.grid.levels() {
            let t1 = self.trajectory(0, cells)?;
            let t2 = self.trajectory(1, cells)?;
            let c1 = carleson_constant(&t1, &cyl, n0)?;
            let c2 = carleson_constant(&t2, &cyl, n0)?;
            let h1 = hopf_oleinik_constant(&t1, &cyl, n0)?;
            let h2 = hopf_oleinik_constant(&t2, &cyl, n0)?;
            let q = quotient_bounds(&t1, &t2, &cyl, n0)?;
            for c in [&c1, &c2, &h1, &h2] {
                if c.flag != RatioFlag::Vacuous {
                    vacuous = false;
                }
                rep.require(
                    c.flag != RatioFlag::MaximumPrincipleViolation,
                    "zero anchor under a nonzero numerator",
                );
            }
            // homogeneity: scale the first solution by 5
            let mut scaled = (*t1).clone();
            scaled
                .fields
                .iter_mut()
                .for_each(|f| f.values.iter_mut().for_each(|v| *v *= 5.0));
            let c5 = carleson_constant(&scaled, &cyl, n0)?;
            let h5 = hopf_oleinik_constant(&scaled, &cyl, n0)?;
            let q5 = quotient_bounds(&scaled, &t2, &cyl, n0)?;
            let rel = |a: f64, b: f64| {
                if a == b {
                    0.0
                } else {
                    (a - b).abs() / a.abs().max(b.abs())
                }
            };
            let scale_err = rel(c5.value, c1.value)
                .max(rel(h5.value, h1.value))
                .max(rel(q5.global_ratio, q.global_ratio));
            rep.require(scale_err <= 1e-12, "constants not invariant under scaling");
            rep.require(
                c1.numerator >= h1.numerator && c2.numerator >= h2.numerator,
                "sup below inf on the cylinder",
            );
            rep.require(q.consistent, "quotient bounds inconsistent");
            let row = [
                ("carleson_1", c1.value),
                ("carleson_2", c2.value),
                ("hopf_1", h1.value),
                ("hopf_2", h2.value),
                ("quotient_sup", q.sup_form),
                ("quotient_inf", q.inf_form),
                ("global_ratio", q.global_ratio),
                ("scaling_error", scale_err),
            ];
            for (k, v) in row {
                cols.entry(k).or_default().push(v);
            }
            rep.series.push(series_row(&t1.grid, cells, &row));
        }
        if vacuous {
            rep.verdict = Verdict::VacuousPass;
            rep.flags.push("zero solutions: 0/0 ratios".into());
            return Ok(rep);
        }
        for key in [
            "carleson_1",
            "carleson_2",
            "hopf_1",
            "hopf_2",
            "quotient_sup",
            "quotient_inf",
            "global_ratio",
        ] {
            let vals = &cols[key];
            rep.constants
                .insert(key.into(), *vals.last().unwrap_or(&f64::NAN));
            let (v, flags) = refinement_verdict(vals, p.tolerance);
            if !v.passed() {
                rep.verdict = v;
                rep.flags
                    .extend(flags.into_iter().map(|f| format!("{key}: {f}")));
            }
        }
        for key in ["hopf_1", "hopf_2"] {
            rep.require(
                cols[key].iter().all(|&v| v > 0.0),
                "Hopf-Oleinik constant not bounded away from zero",
            );
        }
        rep.require(
            cols["quotient_sup"].iter().all(|&v| v >= 1.0),
            "quotient sup-form below 1",
        );
        rep.require(
            cols["global_ratio"].iter().all(|&v| v >= 1.0),
            "global ratio below 1",
        );
        Ok(rep)
    }

    fn holder(&self, p: &HolderParams) -> Result<EstimateReport> {
        let mut rep = self.report("holder", p.min_alpha);
        let cyl = self.cylinder(p.t, p.r, &p.z)?;
        let n0 = self.op.n0;
        let levels = self.setup.grid.levels();
        let cells = *levels.last().unwrap_or(&self.setup.grid.cells);
        let t1 = self.trajectory(0, cells)?;
        let t2 = self.trajectory(1, cells)?;
        let scan = crate::harness::holder_quotient_alpha(&t1, &t2, &cyl, n0, p.max_points)?;
        // negative control: a unit jump across the median first coordinate
        let grid = &t1.grid;
        let mut samples: Vec<(f64, Vec<f64>, f64)> = Vec::new();
        for s in t1.times.iter().filter(|s| cyl.contains_time_closed(**s)) {
            for q in 0..grid.len() {
                let z = grid.point(q);
                if cyl.contains_space(&z) {
                    samples.push((*s, z, 0.0));
                }
            }
        }
        let mut xs: Vec<f64> = samples.iter().map(|s| s.1[0]).collect();
        xs.sort_by(f64::total_cmp);
        let cut = xs.get(xs.len() / 2).copied().unwrap_or(0.0);
        samples
            .iter_mut()
            .for_each(|s| s.2 = if s.1[0] > cut { 1.0 } else { 0.0 });
        let control = holder_alpha(&samples, cyl.r, cyl.n, p.max_points)?;
        rep.constants
            .insert("alpha".into(), scan.alpha.unwrap_or(0.0));
        rep.constants.insert("decay_slope".into(), scan.decay_slope);
        rep.constants
            .insert("control_alpha".into(), control.alpha.unwrap_or(0.0));
        rep.constants
            .insert("shells".into(), scan.shells.len() as f64);
        for (k, sh) in scan.shells.iter().enumerate() {
            rep.series.push(SeriesRow {
                grid: grid_signature(grid),
                cells: k,
                values: [
                    ("shell_hi".to_string(), sh.hi),
                    ("oscillation".to_string(), sh.oscillation),
                    ("pairs".to_string(), sh.pairs as f64),
                ]
                .into_iter()
                .collect(),
            });
        }
        if scan.insufficient {
            rep.verdict = Verdict::Insufficient;
            rep.flags.push("fewer than 4 resolvable shells".into());
            return Ok(rep);
        }
        rep.verdict = Verdict::Pass;
        rep.require(
            scan.alpha.is_some_and(|a| a >= p.min_alpha),
            "no alpha passes on the quotient",
        );
        rep.require(
            control.alpha.is_none(),
            "discontinuous control was not rejected",
        );
        Ok(rep)
    }

    fn elliptic(&self, p: &EllipticParams) -> Result<EstimateReport> {
        let mut rep = self.report("elliptic-harnack", p.tolerance);
        let region = self.op.domain.shrink(p.fraction);
        let mut vals = Vec::new();
        for cells in self.setup.grid.levels() {
            let traj = self.trajectory(0, cells)?;
            let h = elliptic_harnack(&traj, self.op.n0, p.t, p.r, &region)?;
            rep.series.push(series_row(
                &traj.grid,
                cells,
                &[("ratio", h.ratio), ("sup", h.sup), ("inf", h.inf)],
            ));
            vals.push(h.ratio);
        }
        let (v, flags) = refinement_verdict(&vals, p.tolerance);
        rep.verdict = v;
        rep.flags = flags;
        rep.require(vals.iter().all(|&r| r >= 1.0), "ratio below 1");
        rep.constants
            .insert("ratio".into(), *vals.last().unwrap_or(&f64::NAN));
        Ok(rep)
    }

    fn monte_carlo(&self, p: &MonteCarloParams) -> Result<EstimateReport> {
        let mut rep = self.report("monte-carlo", p.ks_tolerance);
        let exact = sample_model_exact(p.b, p.x0, p.t, p.paths, self.seed)?;
        let em = sample_em(
            &Diffusion1d::model(p.b),
            p.x0,
            p.t,
            p.dt,
            p.paths,
            self.seed.wrapping_add(1),
        )?;
        let ks = ks_distance(&mut exact.terminal.clone(), &mut em.terminal.clone());
        rep.constants.insert("ks".into(), ks);
        rep.constants
            .insert("em_bias_scale".into(), em.meta.bias_scale);

        let model = |b: f64, n0: usize| {
            OperatorFamily::Model {
                n: 1,
                m: 0,
                n0,
                b,
                radius: p.radius,
            }
            .build()
        };
        let positive = model(p.b, if p.b > 0.0 { 0 } else { 1 })?;
        let grid = Arc::new(TensorGrid::graded(positive.domain.clone(), &[p.cells], 10)?);
        let fields = pde_pairings(
            &positive,
            grid.clone(),
            p.t,
            p.pde_dt,
            Scheme::CrankNicolson,
        )?;
        let upper = 4.0;
        let edges: Vec<f64> = (0..=p.bins)
            .map(|i| upper * i as f64 / p.bins as f64)
            .collect();
        let reference = model_bins(p.b, p.x0, p.t, &edges);
        let cmp = density_compare(&fields, &exact, p.bins, upper, Some(&reference))?;
        for row in &cmp.rows {
            rep.series.push(SeriesRow {
                grid: grid_signature(&grid),
                cells: row.index,
                values: [
                    ("mc_mean".to_string(), row.mc_mean),
                    ("mc_stderr".to_string(), row.mc_stderr),
                    ("pde".to_string(), row.pde),
                    ("z_score".to_string(), row.z_score),
                ]
                .into_iter()
                .collect(),
            });
        }
        rep.constants.insert("max_z_score".into(), cmp.max_z_score);
        rep.constants
            .insert("max_abs_diff".into(), cmp.max_abs_diff);
        rep.constants
            .insert("binned_l1".into(), cmp.binned_l1.unwrap_or(f64::NAN));

        // absorbed mass for b = 0
        let absorbing = model(0.0, 1)?;
        let agrid = Arc::new(TensorGrid::graded(
            absorbing.domain.clone(),
            &[p.cells],
            10,
        )?);
        let survival = pde_survival(
            &absorbing,
            agrid,
            p.x0,
            p.t,
            p.pde_dt,
            Scheme::CrankNicolson,
        )?;
        let pde_loss = 1.0 - survival;
        let ex0 = sample_model_exact(0.0, p.x0, p.t, p.paths, self.seed.wrapping_add(2))?;
        let em0 = sample_em(
            &Diffusion1d::model(0.0),
            p.x0,
            p.t,
            p.dt,
            p.paths,
            self.seed.wrapping_add(3),
        )?;
        let rel = |a: f64| (a - pde_loss).abs() / pde_loss;
        rep.constants.insert("pde_mass_loss".into(), pde_loss);
        rep.constants
            .insert("exact_absorbed".into(), ex0.absorbed_fraction());
        rep.constants
            .insert("em_absorbed".into(), em0.absorbed_fraction());
        rep.constants
            .insert("closed_form_absorbed".into(), (-p.x0 / p.t).exp());

        let label = format!("b{}-x{}-t{}", p.b, p.x0, p.t);
        self.keep_ensemble(format!("exact-{label}"), exact);
        self.keep_ensemble(format!("em-{label}"), em);
        self.keep_ensemble(format!("exact-b0-x{}-t{}", p.x0, p.t), ex0.clone());
        self.keep_ensemble(format!("em-b0-x{}-t{}", p.x0, p.t), em0.clone());
        rep.verdict = Verdict::Pass;
        rep.require(ks <= p.ks_tolerance, "EM and exact laws differ (KS)");
        rep.require(
            cmp.max_z_score <= p.stderr_factor,
            "PDE pairing outside the standard-error band",
        );
        rep.require(
            rel(ex0.absorbed_fraction()) <= p.mass_tolerance,
            "exact absorbed mass differs from PDE mass loss",
        );
        rep.require(
            rel(em0.absorbed_fraction()) <= p.mass_tolerance,
            "EM absorbed mass differs from PDE mass loss",
        );
        Ok(rep)
    }

    fn singular_measure(&self, p: &SingularParams) -> Result<EstimateReport> {
        let mut rep = self.report("singular-measure", p.slope_tolerance);
        let spec = QuadratureSpec::default();
        let zero = OperatorFamily::Model {
            n: 1,
            m: 0,
            n0: 1,
            b: 0.0,
            radius: 1.0,
        }
        .build()?;
        let dmu = WeightedMeasure::dmu(&zero);
        let one = integrate_fn(&|_| 1.0, &dmu, &zero.domain, &spec)?;
        let slope = match &one.outcome {
            IntegralOutcome::Divergent { slope, .. } => *slope,
            IntegralOutcome::Convergent { .. } => f64::NAN,
        };
        let sq = integrate_fn(&|z| z[0] * z[0], &dmu, &zero.domain, &spec)?;
        let value = sq.value().unwrap_or(f64::NAN);
        rep.constants.insert("log_slope".into(), slope);
        rep.constants.insert("x2_integral".into(), value);
        rep.notes.push(format!("quadrature spec {}", one.spec_hash));
        rep.verdict = Verdict::Pass;
        rep.require(one.is_divergent(), "constant integrand did not diverge");
        rep.require(
            (slope - 1.0).abs() <= p.slope_tolerance,
            "log slope outside tolerance",
        );
        rep.require(
            (value - 0.5).abs() <= p.value_tolerance,
            "x^2 integral outside tolerance",
        );
        Ok(rep)
    }

    fn hardy(&self, p: &HardyParams) -> Result<EstimateReport> {
        let mut rep = self.report("hardy", p.tolerance);
        let op = &self.op;
        let axis = match p.axis {
            Some(a) => a,
            None if op.n0 < op.n => op.n0,
            None => return contract("hardy check needs a positive-weight axis"),
        };
        let mut constants = Vec::new();
        for cells in self.setup.grid.levels() {
            let grid = self.grid(cells)?;
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let mut worst: f64 = 0.0;
            let mut lhs_max: f64 = 0.0;
            let domain = op.domain.clone();
            let phi = Field::from_fn(grid.clone(), |z| {
                crate::forms::outer_bump(&domain, z).sqrt()
            })?;
            for _ in 0..p.fields {
                let u = random_probe(op, grid.clone(), &mut rng)?;
                let h = hardy_check(op, &u, &phi, axis)?;
                worst = worst.max(h.constant);
                lhs_max =
                    lhs_max.max(h.lhs / (h.gradient_term + h.zeroth_term).max(f64::MIN_POSITIVE));
            }
            rep.series.push(series_row(
                &grid,
                cells,
                &[("constant", worst), ("max_lhs_ratio", lhs_max)],
            ));
            constants.push(worst);
        }
        let (v, flags) = refinement_verdict(&constants, p.tolerance);
        rep.verdict = v;
        rep.flags = flags;
        rep.constants
            .insert("constant".into(), *constants.last().unwrap_or(&f64::NAN));
        Ok(rep)
    }

    fn garding(&self, p: &GardingParams) -> Result<EstimateReport> {
        let mut rep = self.report("garding", 0.0);
        rep.verdict = Verdict::Pass;
        for (name, fam) in builtin_family() {
            let op = fam.build()?;
            let grid = Arc::new(TensorGrid::graded(
                op.domain.clone(),
                &vec![p.cells; op.dim()],
                6,
            )?);
            let shift = grid
                .points()
                .map(|z| op.c0.value(&z).max(0.0))
                .fold(0.0, f64::max);
            let g = garding_probe(&op, grid.clone(), p.probes, self.seed, Some(1.0 + shift))?;
            rep.constants.insert(format!("c2_{name}"), g.c2);
            rep.constants.insert(format!("c3_{name}"), g.c3);
            rep.require(g.feasible && g.c2 > 0.0, &format!("{name}: no positive c2"));
        }
        Ok(rep)
    }

    fn commutator(&self, p: &CommutatorParams) -> Result<EstimateReport> {
        let mut rep = self.report("commutator", p.tolerance);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut worst: f64 = 0.0;
        let mut pairs = 0usize;
        for (name, op) in coupled_boxes() {
            let dim = op.dim();
            let monos: Vec<Polynomial> = monomial_powers(dim, p.degree)
                .into_iter()
                .map(|e| {
                    let mut t = Polynomial::constant(dim, 1.0);
                    for (k, &pw) in e.iter().enumerate() {
                        for _ in 0..pw {
                            t = t.mul_var(k);
                        }
                    }
                    t
                })
                .collect();
            let points = interior_points(&op.domain, p.points, &mut rng);
            let mut box_worst: f64 = 0.0;
            for phi in &monos {
                for u in &monos {
                    let prod = phi * u;
                    for z in &points {
                        let jp = Jet::from_poly(phi, z);
                        let ju = Jet::from_poly(u, z);
                        let direct = op.apply_pointwise(&Jet::from_poly(&prod, z), z)?
                            - jp.value * op.apply_pointwise(&ju, z)?;
                        let c = op.commutator_apply(&jp, &ju, z)?;
                        box_worst = box_worst.max((direct - c).abs());
                    }
                    pairs += 1;
                }
            }
            rep.constants.insert(format!("residual_{name}"), box_worst);
            worst = worst.max(box_worst);
        }
        rep.constants.insert("max_residual".into(), worst);
        rep.constants.insert("pairs".into(), pairs as f64);
        rep.verdict = if worst <= p.tolerance {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        Ok(rep)
    }

    fn energy(&self, p: &EnergyParams) -> Result<EstimateReport> {
        let mut rep = self.report("energy", p.tolerance);
        let mut energy_c = Vec::new();
        let mut sob: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut vacuous_envelope = std::collections::BTreeSet::new();
        let mut sobolev = p.sobolev.clone();
        if sobolev.is_empty() {
            sobolev.push((vec![0; self.op.n], vec![0; self.op.m]));
        }
        rep.verdict = Verdict::Pass;
        for cells in self.setup.grid.levels() {
            let traj = self.trajectory(0, cells)?;
            let f = &traj.fields[0];
            let e = energy_check(&traj, &self.op, f, None)?;
            rep.require(
                !e.dirichlet_violation,
                "trajectory leaves the Dirichlet class",
            );
            let mp = maximum_principle(&traj, self.op.n0);
            let c0_nonpositive = traj.grid.points().all(|z| self.op.c0.value(&z) <= 0.0);
            if c0_nonpositive {
                rep.require(
                    mp.holds(p.max_principle_tolerance),
                    "maximum principle or tangent-face zeros violated",
                );
            } else {
                rep.require(
                    mp.face_max <= p.max_principle_tolerance,
                    "tangent-face zeros violated",
                );
            }
            let mut row = vec![
                ("energy_constant".to_string(), e.constant),
                ("overshoot".to_string(), mp.overshoot),
                ("undershoot".to_string(), mp.undershoot),
                ("face_max".to_string(), mp.face_max),
            ];
            energy_c.push(e.constant);
            for (a, b) in &sobolev {
                let s = sobolev_sup(&traj, &self.op, a, b, p.t, p.r, f, None)?;
                let key = format!("sobolev_{}_{}", join(a), join(b));
                rep.require(!s.divergent, &format!("{key}: divergent left side"));
                row.push((key.clone(), s.constant));
                sob.entry(key).or_default().push(s.constant);
            }
            for &pe in &p.envelope_p {
                let env = envelope_bound(&traj, &self.op, f, p.t, p.r, p.r0, pe)?;
                let key = format!("envelope_p{pe}");
                if env.divergent {
                    vacuous_envelope.insert(key.clone());
                }
                row.push((key.clone(), env.constant));
                sob.entry(key).or_default().push(env.constant);
            }
            let refs: Vec<(&str, f64)> = row.iter().map(|(k, v)| (k.as_str(), *v)).collect();
            rep.series.push(series_row(&traj.grid, cells, &refs));
        }
        let check = |key: &str, vals: &[f64], rep: &mut EstimateReport| {
            rep.constants
                .insert(key.to_string(), *vals.last().unwrap_or(&f64::NAN));
            let (v, flags) = refinement_verdict(vals, p.tolerance);
            if !v.passed() {
                rep.verdict = v;
                rep.flags
                    .extend(flags.into_iter().map(|f| format!("{key}: {f}")));
            }
        };
        check("energy_constant", &energy_c, &mut rep);
        for (k, v) in &sob {
            if vacuous_envelope.contains(k) {
                rep.flags
                    .push(format!("{k}: envelope integral diverges, bound is vacuous"));
                continue;
            }
            check(k, v, &mut rep);
        }
        Ok(rep)
    }
}

fn join(v: &[u32]) -> String {
    if v.is_empty() {
        "none".into()
    } else {
        v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(op: OperatorFamily, cells: usize) -> Session {
        let setup = Setup {
            operator: op,
            grid: GridSpec {
                cells,
                layers: 8,
                refinements: vec![],
            },
            scheme: SchemeSpec {
                scheme: Scheme::CrankNicolson,
                dt: 0.01,
                t_end: 0.6,
                save_every: 1,
            },
            initial: default_initial(),
            initial_alt: default_initial_alt(),
        };
        Session::new(setup, "test", 1).unwrap()
    }

    #[test]
    fn experiments_round_trip_through_toml() {
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct W {
            experiments: Vec<Experiment>,
        }
        let w = W {
            experiments: vec![
                Experiment::Conjugation(Default::default()),
                Experiment::MonteCarlo(Default::default()),
                Experiment::Energy(EnergyParams {
                    sobolev: vec![(vec![1], vec![])],
                    ..Default::default()
                }),
            ],
        };
        let text = toml::to_string(&w).unwrap();
        assert_eq!(toml::from_str::<W>(&text).unwrap(), w);
    }

    #[test]
    fn conjugation_and_commutator_pass() {
        let s = session(
            OperatorFamily::Model {
                n: 1,
                m: 0,
                n0: 1,
                b: 0.0,
                radius: 1.0,
            },
            8,
        );
        let r = s.run(&Experiment::Conjugation(Default::default())).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
        let c = s
            .run(&Experiment::Commutator(CommutatorParams {
                degree: 2,
                ..Default::default()
            }))
            .unwrap();
        assert_eq!(c.verdict, Verdict::Pass, "{c:?}");
    }

    #[test]
    fn trajectories_are_cached() {
        let s = session(
            OperatorFamily::Model {
                n: 1,
                m: 0,
                n0: 1,
                b: 0.0,
                radius: 1.0,
            },
            8,
        );
        let a = s.trajectory(0, 8).unwrap();
        let b = s.trajectory(0, 8).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
    }

    #[test]
    fn negative_radius_is_rejected() {
        let e = Experiment::BoundaryHarnack(CylinderParams {
            r: -0.2,
            ..Default::default()
        });
        assert_eq!(e.validate().unwrap_err().0, "r");
    }
}
