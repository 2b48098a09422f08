//! Partitioned (multirate) stepping with a P-ERK family.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, PerkError, Result};
use crate::tableau::PerkFamily;
use crate::testbed::{
    assemble_upwind_advection, burgers_godunov_flux, gradient_indicator, refine_coarsen,
    AmrThresholds, LinearOperator, Mesh1D,
};

/// Cell-to-member map. Partition `r` (zero-based) is advanced by
/// `family.members[r]`, so partitions are ordered by ascending `E`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionAssignment {
    pub n_partitions: usize,
    pub cell_to_partition: Vec<usize>,
    pub partition_cells: Vec<Vec<usize>>,
    /// `(level, member)` pairs for every level present, finest first.
    pub level_to_member: Vec<(u32, usize)>,
}

/// Member index for the level of rank `rank` counted from the finest level:
/// the finest `R - 1` levels take members `R-1, R-2, ..`, everything coarser
/// the lowest member.
pub fn member_for_rank(rank: usize, members: usize) -> usize {
    if rank + 1 < members {
        members - 1 - rank
    } else {
        0
    }
}

pub fn assign_partitions(mesh: &Mesh1D, family: &PerkFamily) -> Result<PartitionAssignment> {
    if mesh.is_empty() {
        return invalid("mesh has no cells");
    }
    let members = family.member_count();
    let mut levels = mesh.distinct_levels();
    levels.sort_unstable_by(|a, b| b.cmp(a));
    let level_to_member: Vec<(u32, usize)> = levels
        .iter()
        .enumerate()
        .map(|(rank, &l)| (l, member_for_rank(rank, members)))
        .collect();
    let lookup = |level: u32| {
        level_to_member
            .iter()
            .find(|(l, _)| *l == level)
            .map(|(_, m)| *m)
            .unwrap_or(0)
    };
    let cell_to_partition: Vec<usize> = mesh.levels.iter().map(|&l| lookup(l)).collect();
    PartitionAssignment::from_cells(members, cell_to_partition, level_to_member)
}

impl PartitionAssignment {
    /// Assignment from an explicit cell map; `level_to_member` is informational.
    pub fn from_cells(
        n_partitions: usize,
        cell_to_partition: Vec<usize>,
        level_to_member: Vec<(u32, usize)>,
    ) -> Result<Self> {
        if n_partitions == 0 {
            return invalid("need at least one partition");
        }
        let mut partition_cells = vec![Vec::new(); n_partitions];
        for (cell, &r) in cell_to_partition.iter().enumerate() {
            if r >= n_partitions {
                return invalid(format!("cell {cell} assigned to partition {r} of {n_partitions}"));
            }
            partition_cells[r].push(cell);
        }
        Ok(Self {
            n_partitions,
            cell_to_partition,
            partition_cells,
            level_to_member,
        })
    }

    pub fn uniform(n_partitions: usize, member: usize, cells: usize) -> Result<Self> {
        Self::from_cells(n_partitions, vec![member; cells], Vec::new())
    }

    pub fn cell_count(&self) -> usize {
        self.cell_to_partition.len()
    }
}

/// Semidiscrete right-hand side evaluated cell by cell.
pub trait Rhs {
    fn dim(&self) -> usize;

    /// Writes `F(y)_i` into `out[i]` for every `i` with `mask[i]`; other entries are untouched.
    fn eval_masked(&self, y: &[f64], mask: &[bool], out: &mut [f64]);

    fn eval(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_masked(y, &vec![true; self.dim()], &mut out);
        out
    }
}

pub struct LinearRhs<'a> {
    pub op: &'a LinearOperator,
}

impl Rhs for LinearRhs<'_> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn eval_masked(&self, y: &[f64], mask: &[bool], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            if mask[i] {
                *o = self.op.row_dot(i, y);
            }
        }
    }
}

pub struct BurgersRhs<'a> {
    pub mesh: &'a Mesh1D,
}

impl Rhs for BurgersRhs<'_> {
    fn dim(&self) -> usize {
        self.mesh.len()
    }

    fn eval_masked(&self, y: &[f64], mask: &[bool], out: &mut [f64]) {
        let n = y.len();
        for i in 0..n {
            if mask[i] {
                let left = burgers_godunov_flux(y[(i + n - 1) % n], y[i]);
                let right = burgers_godunov_flux(y[i], y[(i + 1) % n]);
                out[i] = -(right - left) / self.mesh.widths[i];
            }
        }
    }
}

/// Cells whose right-hand side was evaluated, per stage and per cell.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StageTally {
    pub per_stage: Vec<u64>,
    pub per_cell: Vec<u64>,
}

impl StageTally {
    pub fn new(stages: usize, cells: usize) -> Self {
        Self {
            per_stage: vec![0; stages],
            per_cell: vec![0; cells],
        }
    }

    pub fn total(&self) -> u64 {
        self.per_stage.iter().sum()
    }
}

/// One partitioned step with two stage registers: `A` keeps `K_1`, `B` the
/// most recent stage evaluated in each cell.
pub fn step(
    family: &PerkFamily,
    assignment: &PartitionAssignment,
    rhs: &dyn Rhs,
    u: &[f64],
    dt: f64,
    tally: Option<&mut StageTally>,
) -> Result<Vec<f64>> {
    let n = u.len();
    if rhs.dim() != n || assignment.cell_count() != n {
        return invalid(format!(
            "state has {n} cells, rhs {} and assignment {}",
            rhs.dim(),
            assignment.cell_count()
        ));
    }
    if assignment.n_partitions != family.member_count() {
        return invalid(format!(
            "assignment has {} partitions for a family of {} members",
            assignment.n_partitions,
            family.member_count()
        ));
    }
    if !(dt >= 0.0) || !dt.is_finite() {
        return invalid("timestep must be finite and non-negative");
    }
    if dt == 0.0 {
        return Ok(u.to_vec());
    }
    let stages = family.stage_count;
    let mut tally = tally;
    if let Some(t) = tally.as_deref_mut() {
        if t.per_stage.len() != stages || t.per_cell.len() != n {
            *t = StageTally::new(stages, n);
        }
    }
    let members: Vec<_> = assignment
        .cell_to_partition
        .iter()
        .map(|&r| &family.members[r])
        .collect();

    let all = vec![true; n];
    let mut reg_a = vec![0.0; n];
    rhs.eval_masked(u, &all, &mut reg_a);
    if let Some(t) = tally.as_deref_mut() {
        t.per_stage[0] += n as u64;
        t.per_cell.iter_mut().for_each(|c| *c += 1);
    }
    let mut reg_b = reg_a.clone();
    let mut acc: Vec<f64> = reg_a.iter().map(|k| family.b[0] * k).collect();
    let mut y = vec![0.0; n];
    let mut mask = vec![false; n];
    for i in 1..stages {
        for j in 0..n {
            let m = members[j];
            y[j] = u[j] + dt * (m.a_first[i] * reg_a[j] + m.a_sub[i] * reg_b[j]);
            mask[j] = m.active[i];
        }
        rhs.eval_masked(&y, &mask, &mut reg_b);
        let evaluated = mask.iter().filter(|&&a| a).count() as u64;
        if let Some(t) = tally.as_deref_mut() {
            t.per_stage[i] += evaluated;
            for (c, &a) in t.per_cell.iter_mut().zip(&mask) {
                *c += u64::from(a);
            }
        }
        let bi = family.b[i];
        if bi != 0.0 {
            for j in 0..n {
                if !mask[j] {
                    return Err(PerkError::Consistency(format!(
                        "stage {} carries weight but is inactive in cell {j}",
                        i + 1
                    )));
                }
                acc[j] += bi * reg_b[j];
            }
        }
    }
    Ok(u.iter().zip(&acc).map(|(ui, k)| ui + dt * k).collect())
}

/// `cfl * min_i h_i / ((k + 1) rho_i)`.
pub fn cfl_timestep(mesh: &Mesh1D, wavespeeds: &[f64], k: u32, cfl: f64) -> Result<f64> {
    if wavespeeds.len() != mesh.len() {
        return invalid("one wavespeed per cell required");
    }
    if !(cfl >= 0.0) {
        return invalid("CFL number must be non-negative");
    }
    if let Some(s) = wavespeeds.iter().find(|s| !(**s > 0.0)) {
        return invalid(format!("wavespeeds must be positive, got {s}"));
    }
    let ratio = mesh
        .widths
        .iter()
        .zip(wavespeeds)
        .map(|(h, s)| h / ((f64::from(k) + 1.0) * s))
        .fold(f64::INFINITY, f64::min);
    Ok(cfl * ratio)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Problem {
    Advection { speed: f64 },
    Burgers,
}

impl Problem {
    pub fn wavespeeds(&self, u: &[f64]) -> Vec<f64> {
        match self {
            Problem::Advection { speed } => vec![speed.abs(); u.len()],
            Problem::Burgers => u.iter().map(|v| v.abs().max(1e-12)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelTally {
    pub level: u32,
    /// Position counted from the finest level present.
    pub rank: usize,
    pub member: usize,
    pub eval_count: usize,
    pub cells: u64,
    /// Cell-wise right-hand-side evaluations counted while stepping.
    pub evaluations: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IntervalTally {
    pub steps: u64,
    pub levels: Vec<LevelTally>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhsCounters {
    pub intervals: Vec<IntervalTally>,
    pub amr_interval: u64,
    pub fields: u64,
    pub degree: u32,
    pub dims: u32,
    pub total_steps: u64,
}

impl RhsCounters {
    pub fn new(amr_interval: u64) -> Self {
        Self {
            intervals: Vec::new(),
            amr_interval,
            fields: 1,
            degree: 0,
            dims: 1,
            total_steps: 0,
        }
    }

    /// Scalar evaluations per cell evaluation: `N (k+1)^{N_D}`.
    pub fn scalar_factor(&self) -> u64 {
        self.fields * u64::from(self.degree + 1).pow(self.dims)
    }

    pub fn counted_evaluations(&self) -> u64 {
        self.scalar_factor()
            * self
                .intervals
                .iter()
                .flat_map(|i| &i.levels)
                .map(|l| l.evaluations)
                .sum::<u64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrateConfig {
    pub t0: f64,
    pub tf: f64,
    pub cfl: f64,
    #[serde(default)]
    pub degree: u32,
    /// Steps between mesh adaptations; also the accounting interval.
    pub amr_interval: usize,
    #[serde(default)]
    pub amr: Option<AmrThresholds>,
    /// When false the timestep is only recomputed after adaptation.
    #[serde(default = "default_true")]
    pub recompute_every_step: bool,
    /// Record a snapshot every this many steps (plus initial and final states).
    #[serde(default)]
    pub snapshot_every: Option<usize>,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegrationResult {
    pub snapshots: Vec<Snapshot>,
    pub counters: RhsCounters,
    pub mesh: Mesh1D,
    pub values: Vec<f64>,
    pub steps: u64,
    /// `sum h_i U_i` after every step, starting with the initial state.
    pub mass_history: Vec<f64>,
}

fn level_tallies(mesh: &Mesh1D, family: &PerkFamily, assignment: &PartitionAssignment) -> Vec<LevelTally> {
    assignment
        .level_to_member
        .iter()
        .enumerate()
        .map(|(rank, &(level, member))| LevelTally {
            level,
            rank,
            member,
            eval_count: family.members[member].eval_count,
            cells: mesh.levels.iter().filter(|&&l| l == level).count() as u64,
            evaluations: 0,
        })
        .collect()
}

pub fn integrate(
    family: &PerkFamily,
    problem: Problem,
    mesh0: &Mesh1D,
    u0: &[f64],
    cfg: &IntegrateConfig,
) -> Result<IntegrationResult> {
    if u0.len() != mesh0.len() {
        return invalid("initial state does not match the mesh");
    }
    if !(cfg.tf >= cfg.t0) {
        return invalid("final time precedes the start time");
    }
    if cfg.amr_interval == 0 {
        return invalid("AMR interval must be at least one step");
    }
    let span = cfg.tf - cfg.t0;
    let mut counters = RhsCounters::new(cfg.amr_interval as u64);
    counters.degree = cfg.degree;
    let mut mesh = mesh0.clone();
    let mut u = u0.to_vec();
    let mut t = cfg.t0;
    let mut snapshots = vec![Snapshot { t, values: u.clone() }];
    let mut mass_history = vec![mesh.integral(&u)];
    let mut steps: u64 = 0;
    if span == 0.0 {
        return Ok(IntegrationResult {
            snapshots,
            counters,
            mesh,
            values: u,
            steps,
            mass_history,
        });
    }
    let finish_tol = 1e-14 * span;

    let mut assignment = assign_partitions(&mesh, family)?;
    let mut interval = IntervalTally {
        steps: 0,
        levels: level_tallies(&mesh, family, &assignment),
    };
    let mut op = match problem {
        Problem::Advection { speed } => Some(assemble_upwind_advection(&mesh, speed)?),
        Problem::Burgers => None,
    };
    let mut dt_cached: Option<f64> = None;
    let mut tally = StageTally::default();
    while cfg.tf - t > finish_tol {
        if steps > 0 && steps.is_multiple_of(cfg.amr_interval as u64) {
            counters.intervals.push(std::mem::take(&mut interval));
            if let Some(th) = cfg.amr {
                let indicator = gradient_indicator(&u)?;
                let (m, v) = refine_coarsen(&mesh, &u, &indicator, th)?;
                mesh = m;
                u = v;
                if let Problem::Advection { speed } = problem {
                    op = Some(assemble_upwind_advection(&mesh, speed)?);
                }
            }
            assignment = assign_partitions(&mesh, family)?;
            interval.levels = level_tallies(&mesh, family, &assignment);
            dt_cached = None;
        }
        let dt_cfl = match dt_cached {
            Some(dt) if !cfg.recompute_every_step => dt,
            _ => {
                let dt = cfl_timestep(&mesh, &problem.wavespeeds(&u), cfg.degree, cfg.cfl)?;
                dt_cached = Some(dt);
                dt
            }
        };
        if !(dt_cfl >= finish_tol) {
            return Err(PerkError::Abort(format!(
                "timestep {dt_cfl:e} underflows 1e-14 of the interval at t = {t} after {steps} steps"
            )));
        }
        let last = t + dt_cfl >= cfg.tf - finish_tol;
        let dt = if last { cfg.tf - t } else { dt_cfl };
        let rhs: Box<dyn Rhs + '_> = match &op {
            Some(op) => Box::new(LinearRhs { op }),
            None => Box::new(BurgersRhs { mesh: &mesh }),
        };
        u = step(family, &assignment, rhs.as_ref(), &u, dt, Some(&mut tally))?;
        drop(rhs);
        for (cell, &count) in tally.per_cell.iter().enumerate() {
            let level = mesh.levels[cell];
            if let Some(lt) = interval.levels.iter_mut().find(|l| l.level == level) {
                lt.evaluations += count;
            }
        }
        tally.per_cell.iter_mut().for_each(|c| *c = 0);
        tally.per_stage.iter_mut().for_each(|c| *c = 0);
        t = if last { cfg.tf } else { t + dt };
        steps += 1;
        interval.steps += 1;
        mass_history.push(mesh.integral(&u));
        if cfg.snapshot_every.is_some_and(|k| k > 0 && steps.is_multiple_of(k as u64)) && !last {
            snapshots.push(Snapshot { t, values: u.clone() });
        }
    }
    if interval.steps > 0 {
        counters.intervals.push(interval);
    }
    counters.total_steps = steps;
    snapshots.push(Snapshot { t, values: u.clone() });
    Ok(IntegrationResult {
        snapshots,
        counters,
        mesh,
        values: u,
        steps,
        mass_history,
    })
}

/// Snapshots as CSV rows `t,u_1,..,u_N`; row lengths follow the mesh.
pub fn snapshots_to_csv(snapshots: &[Snapshot]) -> String {
    let mut out = String::new();
    for s in snapshots {
        out.push_str(&format!("{:?}", s.t));
        for v in &s.values {
            out.push(',');
            out.push_str(&format!("{v:?}"));
        }
        out.push('\n');
    }
    out
}
