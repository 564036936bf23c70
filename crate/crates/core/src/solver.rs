//! Solving the compiled program, checking the result against the nets, and
//! pulling out per-entity time series.

use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::SystemModel;
use crate::petri::{check_duration, simulate, FiringSchedule, Marking};
use crate::qp::{Program, QPProblem, Var};
use crate::service::sync_residual;
use crate::sparse::{CsrMatrix, Triplets};
use crate::system::ProcessKind;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Absolute tolerance on primal feasibility of an accepted solution.
    pub tol: f64,
    pub max_iter: u32,
    /// Re-solve on the detected active set to sharpen the interior-point answer.
    pub polish: bool,
    /// Print the interior-point iteration log.
    pub verbose: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 200,
            polish: true,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    Infeasible,
    /// Stopped without a certificate (numerical trouble or stalled progress).
    NotConverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResiduals {
    /// Largest violation of `Ax = b`, `Dx <= e`, `x >= 0`.
    pub primal: f64,
    /// Scaled dual residual reported by the interior-point method.
    pub dual: f64,
    /// Relative duality gap reported by the interior-point method.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    #[serde(skip)]
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub kkt: KktResiduals,
    pub iterations: u32,
    pub polished: bool,
    pub solve_seconds: f64,
}

fn csc(m: &CsrMatrix) -> CscMatrix<f64> {
    let (colptr, rowval, nzval) = m.to_csc_parts();
    CscMatrix::new(m.nrows(), m.ncols(), colptr, rowval, nzval)
}

fn diag_csc(d: &[f64]) -> CscMatrix<f64> {
    let n = d.len();
    CscMatrix::new(n, n, (0..=n).collect(), (0..n).collect(), d.to_vec())
}

struct Raw {
    x: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
    status: SolverStatus,
    r_dual: f64,
    gap: f64,
    iterations: u32,
}

fn run_clarabel(
    p_diag: &[f64],
    q: &[f64],
    a: &CsrMatrix,
    b: &[f64],
    cones: &[SupportedConeT<f64>],
    opts: &SolveOptions,
) -> Result<Raw> {
    let settings = DefaultSettingsBuilder::default()
        .verbose(opts.verbose)
        .max_iter(opts.max_iter)
        .tol_feas((opts.tol * 1e-3).min(1e-9))
        .tol_gap_abs(opts.tol)
        .tol_gap_rel(opts.tol)
        .presolve_enable(false)
        .build()
        .map_err(|e| Error::Solver(format!("settings: {e:?}")))?;
    let mut solver = DefaultSolver::new(&diag_csc(p_diag), q, &csc(a), b, cones, settings)
        .map_err(|e| Error::Solver(format!("setup: {e:?}")))?;
    solver.solve();
    let sol = &solver.solution;
    Ok(Raw {
        x: sol.x.clone(),
        z: sol.z.clone(),
        s: sol.s.clone(),
        status: sol.status,
        r_dual: sol.r_dual,
        gap: solver.info.gap_rel,
        iterations: sol.iterations,
    })
}

/// Worst violation of the three constraint families at `x`.
pub fn primal_violation(qp: &QPProblem, x: &[f64]) -> (f64, f64, f64) {
    let eq = qp
        .a
        .mul_vec(x)
        .iter()
        .zip(&qp.b)
        .map(|(l, r)| (l - r).abs())
        .fold(0.0, f64::max);
    let ineq = qp
        .d
        .mul_vec(x)
        .iter()
        .zip(&qp.e)
        .map(|(l, r)| l - r)
        .fold(0.0, f64::max);
    let neg = x.iter().map(|&v| -v).fold(0.0, f64::max);
    (eq, ineq, neg)
}

/// Minimizes `x'Fx + f'x` subject to the program's constraints and `x >= 0`.
pub fn solve(qp: &QPProblem, opts: &SolveOptions) -> Result<Solution> {
    let started = Instant::now();
    let n = qp.layout.len();
    let (m_eq, m_in) = (qp.a.nrows(), qp.d.nrows());
    let mut t = Triplets::new(m_eq + m_in + n, n);
    for (r, c, v) in qp.a.iter() {
        t.push(r, c, v);
    }
    for (r, c, v) in qp.d.iter() {
        t.push(m_eq + r, c, v);
    }
    for j in 0..n {
        t.push(m_eq + m_in + j, j, -1.0);
    }
    let mut rhs = qp.b.clone();
    rhs.extend_from_slice(&qp.e);
    rhs.extend(std::iter::repeat_n(0.0, n));
    let cones = [SupportedConeT::ZeroConeT(m_eq), SupportedConeT::NonnegativeConeT(m_in + n)];
    let p_diag: Vec<f64> = qp.f_diag.iter().map(|v| 2.0 * v).collect();
    let raw = run_clarabel(&p_diag, &qp.f, &t.to_csr(), &rhs, &cones, opts)?;

    let mut status = match raw.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible
        | SolverStatus::AlmostPrimalInfeasible
        | SolverStatus::DualInfeasible
        | SolverStatus::AlmostDualInfeasible => SolveStatus::Infeasible,
        SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::MaxIterations,
        _ => SolveStatus::NotConverged,
    };
    // interior iterates can dip a hair below zero
    let mut x: Vec<f64> = raw.x.iter().map(|v| v.max(0.0)).collect();
    let mut polished = false;
    let mut dual = raw.r_dual;
    if status == SolveStatus::Optimal && opts.polish {
        if let Some((xp, r_dual)) = polish(qp, &raw, m_eq, m_in, opts)? {
            let before = qp.objective(&x);
            let after = qp.objective(&xp);
            if after <= before + 1e-7 * before.abs().max(1.0) {
                x = xp;
                polished = true;
                dual = r_dual;
            }
        }
    }
    if status == SolveStatus::Optimal {
        settle_unconstrained(qp, &mut x);
    }
    let (eq, ineq, neg) = primal_violation(qp, &x);
    let primal = eq.max(ineq).max(neg);
    if status == SolveStatus::Optimal && primal >= opts.tol {
        status = SolveStatus::NotConverged;
    }
    Ok(Solution {
        objective: qp.objective(&x),
        x,
        status,
        kkt: KktResiduals {
            primal,
            dual,
            gap: raw.gap,
        },
        iterations: raw.iterations,
        polished,
        solve_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Variables that appear in no constraint row (e.g. `U+` at `K+1`) only
/// carry their own cost `F x^2 + f x` over `x >= 0`; the interior-point
/// iterate leaves them slightly off their closed-form minimizer.
fn settle_unconstrained(qp: &QPProblem, x: &mut [f64]) {
    let mut used = vec![false; x.len()];
    for (_, c, _) in qp.a.iter().chain(qp.d.iter()) {
        used[c] = true;
    }
    for (j, v) in x.iter_mut().enumerate() {
        if !used[j] {
            *v = (-qp.f[j] / (2.0 * qp.f_diag[j])).max(0.0);
        }
    }
}

/// Re-solves with the interior-point active set eliminated: variables it
/// marks as active are pinned at zero, active capacity rows become
/// equalities, and the reduced problem is solved to tight tolerances. Flat
/// directions (regularization only) can still sit slightly off their bound,
/// so the result is refined once more with every near-zero variable pinned
/// and no bounds left, which is an exact equality-constrained solve. Returns
/// `None` when no feasible point comes out.
fn polish(qp: &QPProblem, raw: &Raw, m_eq: usize, m_in: usize, opts: &SolveOptions) -> Result<Option<(Vec<f64>, f64)>> {
    let n = qp.layout.len();
    let active = |r: usize| raw.z[r] > raw.s[r];
    let tight: Vec<usize> = (0..m_in).filter(|&r| active(m_eq + r)).collect();
    let slack: Vec<usize> = (0..m_in).filter(|&r| !active(m_eq + r)).collect();
    let pinned: Vec<bool> = (0..n).map(|j| active(m_eq + m_in + j)).collect();
    let Some((x, r_dual)) = reduced_solve(qp, &pinned, &tight, &slack, true, opts)? else {
        return Ok(None);
    };

    let pinned: Vec<bool> = x.iter().map(|&v| v < opts.tol).collect();
    let dx = qp.d.mul_vec(&x);
    let tight: Vec<usize> = (0..m_in).filter(|&r| qp.e[r] - dx[r] < opts.tol).collect();
    if let Some((xe, re)) = reduced_solve(qp, &pinned, &tight, &[], false, opts)? {
        if qp.objective(&xe) <= qp.objective(&x) + 1e-12 * qp.objective(&x).abs().max(1.0) {
            return Ok(Some((xe, re)));
        }
    }
    Ok(Some((x, r_dual)))
}

/// `min x'Fx + f'x` over the unpinned variables with `Ax = b` and the `tight`
/// rows of `D` as equalities, the `slack` rows as inequalities, and `x >= 0`
/// only when `bounded`.
fn reduced_solve(
    qp: &QPProblem,
    pinned: &[bool],
    tight: &[usize],
    slack: &[usize],
    bounded: bool,
    opts: &SolveOptions,
) -> Result<Option<(Vec<f64>, f64)>> {
    let n = qp.layout.len();
    let mut col = vec![usize::MAX; n];
    let free: Vec<usize> = (0..n).filter(|&j| !pinned[j]).collect();
    for (c, &j) in free.iter().enumerate() {
        col[j] = c;
    }
    let mut t = Triplets::new(0, free.len());
    let mut rhs = Vec::new();
    let rows = (0..qp.a.nrows())
        .map(|r| (qp.a.row(r).collect::<Vec<_>>(), qp.b[r]))
        .chain(tight.iter().chain(slack).map(|&r| (qp.d.row(r).collect(), qp.e[r])));
    for (entries, b) in rows {
        let r = t.add_rows(1);
        for (c, v) in entries {
            if col[c] != usize::MAX {
                t.push(r, col[c], v);
            }
        }
        rhs.push(b);
    }
    let mut n_bounds = 0;
    if bounded {
        for c in 0..free.len() {
            let r = t.add_rows(1);
            t.push(r, c, -1.0);
            rhs.push(0.0);
        }
        n_bounds = free.len();
    }
    let p: Vec<f64> = free.iter().map(|&j| 2.0 * qp.f_diag[j]).collect();
    let q: Vec<f64> = free.iter().map(|&j| qp.f[j]).collect();
    let cones = [
        SupportedConeT::ZeroConeT(qp.a.nrows() + tight.len()),
        SupportedConeT::NonnegativeConeT(slack.len() + n_bounds),
    ];
    let red = run_clarabel(&p, &q, &t.to_csr(), &rhs, &cones, &SolveOptions { tol: 1e-10, ..*opts })?;
    if !matches!(red.status, SolverStatus::Solved | SolverStatus::AlmostSolved) {
        return Ok(None);
    }
    let mut x = vec![0.0; n];
    for (c, &j) in free.iter().enumerate() {
        x[j] = red.x[c];
    }
    let (eq, ineq, neg) = primal_violation(qp, &x);
    if eq.max(ineq).max(neg) >= opts.tol {
        return Ok(None);
    }
    // round-off below zero is clamped so replays see a non-negative schedule
    x.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(Some((x, red.r_dual)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub equality_residual: f64,
    pub worst_equality_block: String,
    /// Largest equality residual of each constraint family.
    pub equality_blocks: Vec<(String, f64)>,
    pub inequality_violation: f64,
    pub nonnegativity_violation: f64,
    pub duration_violations: usize,
    pub duration_residual: f64,
    pub sync_residual: f64,
    /// Largest gap between the replayed markings and the program's `Q_B`, `Q_E`.
    pub replay_error_esn: f64,
    /// Same for the service block's `Q_SL`, `Q_EL`.
    pub replay_error_service: f64,
    pub replay_negative_marking: bool,
    pub tolerance: f64,
    pub passed: bool,
}

impl VerificationReport {
    pub fn simulator_error(&self) -> f64 {
        self.replay_error_esn.max(self.replay_error_service)
    }
}

fn schedule(program: &Program, x: &[f64], plus: Var, minus: Var, steps: usize) -> FiringSchedule {
    let l = program.layout();
    FiringSchedule {
        u_minus: (1..=steps).map(|k| l.slice(x, k, minus).to_vec()).collect(),
        u_plus: (1..=steps).map(|k| l.slice(x, k, plus).to_vec()).collect(),
    }
}

fn max_gap(traj: &[Marking], x: &[f64], program: &Program, qb: Var, qe: Var) -> f64 {
    let l = program.layout();
    traj.iter()
        .enumerate()
        .flat_map(|(k0, m)| {
            let k = k0 + 1;
            let a = l.slice(x, k, qb).iter().zip(&m.q_b);
            let b = l.slice(x, k, qe).iter().zip(&m.q_e);
            a.chain(b).map(|(p, q)| (p - q).abs()).collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

/// Replays the firing schedule through the converted Petri net and the
/// service block and checks every coupling the program imposes.
pub fn verify(program: &Program, x: &[f64], tol: f64) -> VerificationReport {
    let qp = &program.qp;
    let l = qp.layout;
    let k_max = l.horizon;

    let residual = qp.a.mul_vec(x);
    let (mut eq, mut worst_row) = (0.0, None);
    for (r, (lhs, rhs)) in residual.iter().zip(&qp.b).enumerate() {
        let d = (lhs - rhs).abs();
        if d > eq {
            eq = d;
            worst_row = Some(r);
        }
    }
    let equality_blocks = qp
        .eq_blocks
        .iter()
        .map(|b| {
            let worst = (b.start..b.start + b.rows).fold(0.0_f64, |a, r| a.max((residual[r] - qp.b[r]).abs()));
            (b.name.to_string(), worst)
        })
        .collect();
    let (_, ineq, neg) = primal_violation(qp, x);

    let esn = schedule(program, x, Var::UPlus, Var::UMinus, l.steps());
    let durations = &program.nets.ptn.durations;
    // duration rows stop at K; firings still in transit at K+1 are allowed
    let within = FiringSchedule {
        u_minus: esn.u_minus[..k_max].to_vec(),
        u_plus: esn.u_plus[..k_max].to_vec(),
    };
    let violations = check_duration(&within, durations, tol);
    let mut duration_residual: f64 = 0.0;
    for (j, &kd) in durations.iter().enumerate() {
        for k in 1..=l.steps() {
            let finished = esn.u_plus[k - 1][j];
            let started = if k > kd { esn.u_minus[k - kd - 1][j] } else { 0.0 };
            if k <= k_max {
                duration_residual = duration_residual.max((finished - started).abs());
            }
        }
    }

    let mut sync: f64 = 0.0;
    for k in 1..=k_max {
        let (rp, rm) = sync_residual(
            &program.nets.services,
            l.slice(x, k, Var::ULPlus),
            l.slice(x, k, Var::ULMinus),
            l.slice(x, k, Var::UPlus),
            l.slice(x, k, Var::UMinus),
        );
        sync = rp.iter().chain(&rm).fold(sync, |a, v| a.max(v.abs()));
    }

    let mut negative = false;
    let mut replay = |net, plus, minus, qb, qe| {
        let sched = schedule(program, x, plus, minus, k_max);
        let q0 = Marking {
            q_b: l.slice(x, 1, qb).to_vec(),
            q_e: l.slice(x, 1, qe).to_vec(),
        };
        let traj = simulate(net, &sched, &q0, f64::INFINITY).expect("replay dimensions match the layout");
        negative |= simulate(net, &sched, &q0, tol).is_err();
        max_gap(&traj, x, program, qb, qe)
    };
    let esn_err = replay(&program.nets.ptn, Var::UPlus, Var::UMinus, Var::QB, Var::QE);
    let service_net = program.nets.services.as_ptn();
    let svc_err = replay(&service_net, Var::ULPlus, Var::ULMinus, Var::QSL, Var::QEL);

    let passed = eq < tol
        && ineq < tol
        && neg < tol
        && violations.is_empty()
        && duration_residual < tol
        && sync < tol
        && esn_err < tol
        && svc_err < tol
        && !negative;
    VerificationReport {
        equality_residual: eq,
        worst_equality_block: worst_row.map_or("none", |r| qp.eq_block_of(r)).to_string(),
        equality_blocks,
        inequality_violation: ineq,
        nonnegativity_violation: neg,
        duration_violations: violations.len(),
        duration_residual,
        sync_residual: sync,
        replay_error_esn: esn_err,
        replay_error_service: svc_err,
        replay_negative_marking: negative,
        tolerance: tol,
        passed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub id: String,
    pub resource: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperandBalance {
    pub operand: String,
    /// Quantity ejected per step by each transformation capability.
    pub production: Vec<Series>,
    /// Quantity consumed per step by each transformation capability.
    pub consumption: Vec<Series>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostBreakdown {
    /// Linear plus quadratic cost of every capability over the horizon.
    pub by_capability: Vec<(String, f64)>,
    pub capabilities_total: f64,
    /// Contribution of the diagonal regularization of `F`.
    pub regularization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extract {
    pub horizon: usize,
    /// Start firings `U-` per capability for `k = 1..K`.
    pub firings: Vec<Series>,
    /// Stock per buffer and operand for `k = 1..K+1`, nonzero rows only.
    pub stocks: Vec<Series>,
    /// Emission exports per capability for `k = 1..K`.
    pub emissions: Vec<Series>,
    pub total_emissions: f64,
    pub balances: Vec<OperandBalance>,
    pub costs: CostBreakdown,
}

impl Extract {
    /// Emissions summed per resource.
    pub fn emissions_by_resource(&self) -> Vec<Series> {
        let mut out: Vec<Series> = Vec::new();
        for s in &self.emissions {
            match out.iter_mut().find(|o| o.resource == s.resource) {
                Some(o) => o.values.iter_mut().zip(&s.values).for_each(|(a, b)| *a += b),
                None => out.push(Series {
                    id: s.resource.clone(),
                    resource: s.resource.clone(),
                    values: s.values.clone(),
                }),
            }
        }
        out
    }

    pub fn emissions_at(&self, resource: &str) -> f64 {
        self.emissions
            .iter()
            .filter(|s| s.resource == resource)
            .flat_map(|s| &s.values)
            .sum()
    }

    pub fn firing(&self, capability: &str) -> Option<&Series> {
        self.firings.iter().find(|s| s.id == capability)
    }
}

/// Time series of the optimized flows.
pub fn extract(program: &Program, model: &SystemModel, x: &[f64]) -> Extract {
    let l = program.layout();
    let k_max = l.horizon;
    let u = |v: Var, j: usize| (1..=k_max).map(|k| l.slice(x, k, v)[j]).collect::<Vec<f64>>();
    let res = |psi: usize| model.resources[model.capabilities[psi].resource].id.clone();

    let firings = model
        .capabilities
        .iter()
        .map(|c| Series {
            id: c.id.clone(),
            resource: res(c.index),
            values: u(Var::UMinus, c.index),
        })
        .collect();

    let nb = model.buffers.len();
    let mut stocks = Vec::new();
    for (i, op) in model.operands.iter().enumerate() {
        for (y, &r) in model.buffers.iter().enumerate() {
            let values: Vec<f64> = (1..=l.steps()).map(|k| l.slice(x, k, Var::QB)[i * nb + y]).collect();
            if values.iter().any(|v| v.abs() > 0.0) {
                stocks.push(Series {
                    id: format!("{}@{}", op.id, model.resources[r].id),
                    resource: model.resources[r].id.clone(),
                    values,
                });
            }
        }
    }

    let emissions: Vec<Series> = model
        .emission_exports()
        .into_iter()
        .map(|(psi, ratio)| Series {
            id: model.capabilities[psi].id.clone(),
            resource: res(psi),
            values: u(Var::UMinus, psi).into_iter().map(|v| v * ratio).collect(),
        })
        .collect();
    // an empty float sum is -0.0
    let total_emissions = emissions.iter().flat_map(|s| &s.values).sum::<f64>() + 0.0;

    let balances = model
        .operands
        .iter()
        .enumerate()
        .map(|(i, op)| {
            let mut production = Vec::new();
            let mut consumption = Vec::new();
            for c in &model.capabilities {
                if !matches!(model.processes[c.process].kind, ProcessKind::Transformation) {
                    continue;
                }
                if let Some(r) = model.device.plus(i, c.process) {
                    production.push(Series {
                        id: c.id.clone(),
                        resource: res(c.index),
                        values: u(Var::UPlus, c.index).into_iter().map(|v| v * r).collect(),
                    });
                }
                if let Some(r) = model.device.minus(i, c.process) {
                    consumption.push(Series {
                        id: c.id.clone(),
                        resource: res(c.index),
                        values: u(Var::UMinus, c.index).into_iter().map(|v| v * r).collect(),
                    });
                }
            }
            OperandBalance {
                operand: op.id.clone(),
                production,
                consumption,
            }
        })
        .collect();

    let by_capability: Vec<(String, f64)> = model
        .capabilities
        .iter()
        .map(|c| {
            let total = u(Var::UMinus, c.index)
                .iter()
                .map(|&v| program.costs.linear[c.index] * v + program.costs.quadratic[c.index] * v * v)
                .sum();
            (c.id.clone(), total)
        })
        .collect();
    let capabilities_total = by_capability.iter().map(|c| c.1).sum();
    let regularization = (0..l.len())
        .map(|idx| {
            let (k, v, j) = l.locate(idx);
            let priced = if v == Var::UMinus && k <= k_max { program.costs.quadratic[j] } else { 0.0 };
            (program.qp.f_diag[idx] - priced) * x[idx] * x[idx]
        })
        .sum();

    Extract {
        horizon: k_max,
        firings,
        stocks,
        emissions,
        total_emissions,
        balances,
        costs: CostBreakdown {
            by_capability,
            capabilities_total,
            regularization,
        },
    }
}
