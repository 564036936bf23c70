//! Decision-vector layout and assembly of the canonical quadratic program
//!
//! ```text
//! minimize x'Fx + f'x  s.t.  Ax = b,  Dx <= e,  x >= 0
//! ```

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::incidence::{build_incidence_tensors, refine_with_device_models, signed_nnz, IncidenceTensor3};
use crate::model::{ScenarioDocument, Segment, SystemModel, When, ALL_RESOURCES};
use crate::petri::{accpn_to_ptn, ACColoredPetriNet, Bag, PlaceTransitionNet};
use crate::service::{build_sync_matrices, concat_services, ServiceBlock};
use crate::sparse::{CsrMatrix, Triplets};

pub const DEFAULT_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Var {
    #[serde(rename = "Q_B")]
    QB,
    #[serde(rename = "Q_E")]
    QE,
    #[serde(rename = "Q_SL")]
    QSL,
    #[serde(rename = "Q_EL")]
    QEL,
    #[serde(rename = "U+")]
    UPlus,
    #[serde(rename = "U-")]
    UMinus,
    #[serde(rename = "U_L+")]
    ULPlus,
    #[serde(rename = "U_L-")]
    ULMinus,
}

impl Var {
    pub const ALL: [Var; 8] = [
        Var::QB,
        Var::QE,
        Var::QSL,
        Var::QEL,
        Var::UPlus,
        Var::UMinus,
        Var::ULPlus,
        Var::ULMinus,
    ];
}

/// Per-step blocks `[Q_B; Q_E; Q_SL; Q_EL; U+; U-; U_L+; U_L-]` for
/// `k = 1..K+1`, steps stacked one after another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DecisionVectorLayout {
    pub horizon: usize,
    pub n_qb: usize,
    pub n_e: usize,
    pub n_sl: usize,
    pub n_el: usize,
}

impl DecisionVectorLayout {
    pub fn new(horizon: usize, n_qb: usize, n_e: usize, n_sl: usize, n_el: usize) -> Self {
        Self {
            horizon,
            n_qb,
            n_e,
            n_sl,
            n_el,
        }
    }

    pub fn segment_len(&self, v: Var) -> usize {
        match v {
            Var::QB => self.n_qb,
            Var::QE | Var::UPlus | Var::UMinus => self.n_e,
            Var::QSL => self.n_sl,
            Var::QEL | Var::ULPlus | Var::ULMinus => self.n_el,
        }
    }

    fn segment_offset(&self, v: Var) -> usize {
        Var::ALL
            .iter()
            .take_while(|&&s| s != v)
            .map(|&s| self.segment_len(s))
            .sum()
    }

    pub fn step_len(&self) -> usize {
        self.n_qb + 3 * self.n_e + self.n_sl + 3 * self.n_el
    }

    pub fn steps(&self) -> usize {
        self.horizon + 1
    }

    pub fn len(&self) -> usize {
        self.steps() * self.step_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of entry `j` of segment `v` at 1-based step `k`.
    pub fn index(&self, k: usize, v: Var, j: usize) -> usize {
        debug_assert!(k >= 1 && k <= self.steps() && j < self.segment_len(v));
        (k - 1) * self.step_len() + self.segment_offset(v) + j
    }

    /// Inverse of [`index`](Self::index).
    pub fn locate(&self, idx: usize) -> (usize, Var, usize) {
        let k = idx / self.step_len() + 1;
        let mut r = idx % self.step_len();
        for v in Var::ALL {
            let n = self.segment_len(v);
            if r < n {
                return (k, v, r);
            }
            r -= n;
        }
        unreachable!("index {idx} outside layout")
    }

    pub fn slice<'a>(&self, x: &'a [f64], k: usize, v: Var) -> &'a [f64] {
        let start = self.index(k, v, 0);
        &x[start..start + self.segment_len(v)]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundaryData {
    /// Supplied input transitions; `U+` pinned.
    pub supply: Vec<(usize, Vec<f64>)>,
    /// Demanded output transitions; `U-` pinned.
    pub demand: Vec<(usize, Vec<f64>)>,
}

impl BoundaryData {
    pub fn d_bp(&self, n_e: usize) -> CsrMatrix {
        selector(self.supply.iter().map(|s| s.0), n_e)
    }

    pub fn d_bn(&self, n_e: usize) -> CsrMatrix {
        selector(self.demand.iter().map(|s| s.0), n_e)
    }
}

fn selector(cols: impl Iterator<Item = usize>, n: usize) -> CsrMatrix {
    let cols: Vec<_> = cols.collect();
    let mut t = Triplets::new(cols.len(), n);
    for (r, c) in cols.into_iter().enumerate() {
        t.push(r, c, 1.0);
    }
    t.to_csr()
}

/// `None` leaves the entry free.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialFinalConditions {
    pub c_b1: Vec<Option<f64>>,
    pub c_e1: Vec<Option<f64>>,
    pub c_sl1: Vec<Option<f64>>,
    pub c_bk: Vec<Option<f64>>,
    pub c_ek: Vec<Option<f64>>,
    pub c_slk: Vec<Option<f64>>,
}

impl InitialFinalConditions {
    /// Empty at the start and drained at the end.
    pub fn cold(n_qb: usize, n_e: usize, n_sl: usize) -> Self {
        let z = |n| vec![Some(0.0); n];
        Self {
            c_b1: z(n_qb),
            c_e1: z(n_e),
            c_sl1: z(n_sl),
            c_bk: z(n_qb),
            c_ek: z(n_e),
            c_slk: z(n_sl),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityData {
    pub c_u: Vec<f64>,
    /// Input transitions whose `U+` is limited by capacity (unsupplied inputs).
    pub d_cp: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostData {
    pub linear: Vec<f64>,
    pub quadratic: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowBlock {
    pub name: &'static str,
    pub start: usize,
    pub rows: usize,
    /// Row count predicted by the dimension identity for this block.
    pub formula: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QPProblem {
    pub layout: DecisionVectorLayout,
    /// Diagonal of `F`.
    pub f_diag: Vec<f64>,
    pub f: Vec<f64>,
    pub a: CsrMatrix,
    pub b: Vec<f64>,
    pub d: CsrMatrix,
    pub e: Vec<f64>,
    pub eq_blocks: Vec<RowBlock>,
    pub ineq_blocks: Vec<RowBlock>,
}

impl QPProblem {
    pub fn objective(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.f_diag)
            .zip(&self.f)
            .map(|((&xi, &fq), &fl)| fq * xi * xi + fl * xi)
            .sum()
    }

    pub fn f_matrix(&self) -> CsrMatrix {
        let n = self.f_diag.len();
        let entries: Vec<_> = self.f_diag.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        CsrMatrix::from_triplets(n, n, &entries)
    }

    /// Equality block containing row `r`.
    pub fn eq_block_of(&self, r: usize) -> &'static str {
        self.eq_blocks
            .iter()
            .find(|b| r >= b.start && r < b.start + b.rows)
            .map_or("?", |b| b.name)
    }
}

/// Engineering system net pieces kept for verification and reporting.
#[derive(Debug, Clone)]
pub struct CompiledNets {
    pub colored: ACColoredPetriNet,
    pub ptn: PlaceTransitionNet,
    pub services: ServiceBlock,
    pub tensor_plus: IncidenceTensor3,
    pub tensor_minus: IncidenceTensor3,
    pub refined_plus: IncidenceTensor3,
    pub refined_minus: IncidenceTensor3,
}

pub fn compile_nets(model: &SystemModel) -> Result<CompiledNets> {
    let nl = model.operands.len();
    let nb = model.buffers.len();
    let (tp, tm) = build_incidence_tensors(nl, nb, &model.flows)?;
    let (rp, rm) = refine_with_device_models(&tp, &tm, &model.device, &model.pmap)?;
    let colored = ACColoredPetriNet {
        colors: model.operands.iter().map(|o| o.id.clone()).collect(),
        places: model.buffers.iter().map(|&r| model.resources[r].id.clone()).collect(),
        transitions: model.capabilities.iter().map(|c| c.id.clone()).collect(),
        plus: rp.clone(),
        minus: rm.clone(),
        durations: model.capabilities.iter().map(|c| c.duration).collect(),
        place_marking: vec![Bag::new(); nb],
        transition_marking: vec![0.0; model.capabilities.len()],
    };
    let (ptn, _) = accpn_to_ptn(&colored)?;
    let syncs = model
        .feasibility
        .iter()
        .enumerate()
        .map(|(i, f)| build_sync_matrices(i, f, &model.device, &model.pmap))
        .collect::<Result<Vec<_>>>()?;
    let services = concat_services(&model.service_nets, &syncs)?;
    Ok(CompiledNets {
        colored,
        ptn,
        services,
        tensor_plus: tp,
        tensor_minus: tm,
        refined_plus: rp,
        refined_minus: rm,
    })
}

/// Dimension and reconciliation summary of one compile.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompilationReport {
    pub scenario: String,
    pub horizon: usize,
    pub processes: usize,
    pub resources: usize,
    pub system_concept_nnz: usize,
    pub operands: usize,
    pub buffers: usize,
    pub capabilities: usize,
    pub tensor_plus_nnz: usize,
    pub tensor_minus_nnz: usize,
    pub tensor_joint_nnz: usize,
    pub tensor_signed_nnz: usize,
    pub q_b: usize,
    pub q_sl: usize,
    pub q_el: usize,
    pub e_in: usize,
    pub e_out: usize,
    pub d_cp: usize,
    pub x: usize,
    pub x_formula: usize,
    pub a_rows: usize,
    pub a_formula: usize,
    pub a_nnz: usize,
    pub d_rows: usize,
    pub d_formula: usize,
    pub d_nnz: usize,
    pub eq_blocks: Vec<RowBlock>,
    pub ineq_blocks: Vec<RowBlock>,
    pub notes: Vec<String>,
}

impl CompilationReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario            {}", self.scenario);
        let _ = writeln!(s, "horizon K           {}", self.horizon);
        let _ = writeln!(
            s,
            "system concept      {} x {} ({} filled)",
            self.processes, self.resources, self.system_concept_nnz
        );
        let _ = writeln!(s, "buffers             {}", self.buffers);
        let _ = writeln!(s, "capabilities        {}", self.capabilities);
        let _ = writeln!(
            s,
            "incidence tensors   {} x {} x {} (+{} / -{}; joint {}, signed {})",
            self.operands,
            self.buffers,
            self.capabilities,
            self.tensor_plus_nnz,
            self.tensor_minus_nnz,
            self.tensor_joint_nnz,
            self.tensor_signed_nnz
        );
        let _ = writeln!(
            s,
            "segments            Q_B {}  Q_E {}  Q_SL {}  Q_EL {}  E_in {}  E_out {}  D_Cp {}",
            self.q_b, self.capabilities, self.q_sl, self.q_el, self.e_in, self.e_out, self.d_cp
        );
        let _ = writeln!(s, "x                   {} (formula {})", self.x, self.x_formula);
        let _ = writeln!(s, "A                   {} x {} (formula {}, nnz {})", self.a_rows, self.x, self.a_formula, self.a_nnz);
        for b in &self.eq_blocks {
            let _ = writeln!(s, "  {:<18}{:>6} (formula {})", b.name, b.rows, b.formula);
        }
        let _ = writeln!(s, "D                   {} x {} (formula {}, nnz {})", self.d_rows, self.x, self.d_formula, self.d_nnz);
        for b in &self.ineq_blocks {
            let _ = writeln!(s, "  {:<18}{:>6} (formula {})", b.name, b.rows, b.formula);
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}

/// Everything produced by compiling one scenario against one model.
#[derive(Debug, Clone)]
pub struct Program {
    pub scenario_id: String,
    pub nets: CompiledNets,
    pub boundary: BoundaryData,
    pub conditions: InitialFinalConditions,
    pub capacity: CapacityData,
    pub costs: CostData,
    pub epsilon: f64,
    pub qp: QPProblem,
    pub report: CompilationReport,
}

impl Program {
    pub fn layout(&self) -> DecisionVectorLayout {
        self.qp.layout
    }
}

struct Rows {
    t: Triplets,
    b: Vec<f64>,
    blocks: Vec<RowBlock>,
}

impl Rows {
    fn new(ncols: usize) -> Self {
        Self {
            t: Triplets::new(0, ncols),
            b: Vec::new(),
            blocks: Vec::new(),
        }
    }

    fn row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>, rhs: f64) {
        let r = self.t.add_rows(1);
        for (c, v) in entries {
            self.t.push(r, c, v);
        }
        self.b.push(rhs);
    }

    fn block(&mut self, name: &'static str, formula: usize, fill: impl FnOnce(&mut Self)) {
        let start = self.b.len();
        fill(self);
        self.blocks.push(RowBlock {
            name,
            start,
            rows: self.b.len() - start,
            formula,
        });
    }

    fn finish(self) -> (CsrMatrix, Vec<f64>, Vec<RowBlock>) {
        (self.t.to_csr(), self.b, self.blocks)
    }
}

/// Per-block row counts of the equality identity.
fn eq_formula(l: &DecisionVectorLayout, e_in: usize, e_out: usize) -> [usize; 10] {
    let k = l.horizon;
    [
        k * l.n_qb,
        k * l.n_e,
        k * l.n_e,
        k * l.n_sl,
        k * l.n_el,
        k * l.n_el,
        k * l.n_el,
        k * (e_in + e_out),
        l.n_qb + l.n_e + l.n_sl,
        l.n_qb + 2 * l.n_e + l.n_sl + l.n_el,
    ]
}

/// Equality rows in the order: for each `k = 1..K` place dynamics, transition
/// dynamics, duration, service place dynamics, service transition dynamics,
/// sync+, sync-, boundary; then initial and final conditions.
///
/// Duration rows are anchored at the finish step: for every `k = 1..K`,
/// `U+[k] = U-[k - kd]` when `k > kd` and `U+[k] = 0` otherwise, so no firing
/// can finish before it started.
pub fn assemble_equalities(
    ptn: &PlaceTransitionNet,
    services: &ServiceBlock,
    boundary: &BoundaryData,
    icfc: &InitialFinalConditions,
    layout: &DecisionVectorLayout,
) -> Result<(CsrMatrix, Vec<f64>, Vec<RowBlock>)> {
    let l = *layout;
    if ptn.m_plus.shape() != (l.n_qb, l.n_e)
        || services.m_plus.shape() != (l.n_sl, l.n_el)
        || services.lambda_plus.shape() != (l.n_el, l.n_e)
    {
        return Err(Error::Dimension("nets do not match the decision-vector layout".into()));
    }
    for (cap, series) in boundary.supply.iter().chain(&boundary.demand) {
        if series.len() < l.horizon {
            return Err(Error::Dimension(format!(
                "boundary series of capability {cap} has {} steps, horizon is {}",
                series.len(),
                l.horizon
            )));
        }
    }
    let k_max = l.horizon;
    let f = eq_formula(&l, boundary.supply.len(), boundary.demand.len());
    let mut rows = Rows::new(l.len());
    let x = |k, v, j| l.index(k, v, j);
    let dyn_rows = |rows: &mut Rows, k: usize, q: Var, plus: &CsrMatrix, up: Var, minus: &CsrMatrix, um: Var, n: usize| {
        for s in 0..n {
            let mut e = vec![(x(k + 1, q, s), -1.0), (x(k, q, s), 1.0)];
            e.extend(plus.row(s).map(|(c, v)| (x(k, up, c), v)));
            e.extend(minus.row(s).map(|(c, v)| (x(k, um, c), -v)));
            rows.row(e, 0.0);
        }
    };
    let tdyn_rows = |rows: &mut Rows, k: usize, q: Var, up: Var, um: Var, n: usize| {
        for j in 0..n {
            rows.row(
                [(x(k + 1, q, j), -1.0), (x(k, q, j), 1.0), (x(k, up, j), -1.0), (x(k, um, j), 1.0)],
                0.0,
            );
        }
    };

    // Each family is built over all steps, then appended as one block.
    let mut per_family: Vec<Rows> = (0..8).map(|_| Rows::new(l.len())).collect();
    for k in 1..=k_max {
        dyn_rows(&mut per_family[0], k, Var::QB, &ptn.m_plus, Var::UPlus, &ptn.m_minus, Var::UMinus, l.n_qb);
        tdyn_rows(&mut per_family[1], k, Var::QE, Var::UPlus, Var::UMinus, l.n_e);
        for (j, &kd) in ptn.durations.iter().enumerate() {
            if k > kd {
                per_family[2].row([(x(k, Var::UPlus, j), 1.0), (x(k - kd, Var::UMinus, j), -1.0)], 0.0);
            } else {
                per_family[2].row([(x(k, Var::UPlus, j), 1.0)], 0.0);
            }
        }
        dyn_rows(
            &mut per_family[3],
            k,
            Var::QSL,
            &services.m_plus,
            Var::ULPlus,
            &services.m_minus,
            Var::ULMinus,
            l.n_sl,
        );
        tdyn_rows(&mut per_family[4], k, Var::QEL, Var::ULPlus, Var::ULMinus, l.n_el);
        for (fam, ul, u, lambda) in [
            (5, Var::ULPlus, Var::UPlus, &services.lambda_plus),
            (6, Var::ULMinus, Var::UMinus, &services.lambda_minus),
        ] {
            for r in 0..l.n_el {
                let mut e = vec![(x(k, ul, r), 1.0)];
                e.extend(lambda.row(r).map(|(c, v)| (x(k, u, c), -v)));
                per_family[fam].row(e, 0.0);
            }
        }
        for (cap, series) in &boundary.supply {
            per_family[7].row([(x(k, Var::UPlus, *cap), 1.0)], series[k - 1]);
        }
        for (cap, series) in &boundary.demand {
            per_family[7].row([(x(k, Var::UMinus, *cap), 1.0)], series[k - 1]);
        }
    }
    let names = [
        "place dynamics",
        "transition dynamics",
        "duration",
        "service places",
        "service transitions",
        "sync+",
        "sync-",
        "boundary",
    ];
    for (i, fam) in per_family.into_iter().enumerate() {
        let (m, b, _) = fam.finish();
        rows.block(names[i], f[i], |rows| {
            for r in 0..m.nrows() {
                rows.row(m.row(r).collect::<Vec<_>>(), b[r]);
            }
        });
    }

    let pin = |rows: &mut Rows, k: usize, v: Var, c: &[Option<f64>]| {
        for (j, val) in c.iter().enumerate() {
            if let Some(val) = val {
                rows.row([(x(k, v, j), 1.0)], *val);
            }
        }
    };
    rows.block("initial", f[8], |rows| {
        pin(rows, 1, Var::QB, &icfc.c_b1);
        pin(rows, 1, Var::QE, &icfc.c_e1);
        pin(rows, 1, Var::QSL, &icfc.c_sl1);
    });
    let last = k_max + 1;
    rows.block("final", f[9], |rows| {
        pin(rows, last, Var::QB, &icfc.c_bk);
        pin(rows, last, Var::QE, &icfc.c_ek);
        pin(rows, last, Var::QSL, &icfc.c_slk);
        for j in 0..l.n_e {
            rows.row([(x(last, Var::UMinus, j), 1.0)], 0.0);
        }
        for j in 0..l.n_el {
            rows.row([(x(last, Var::ULMinus, j), 1.0)], 0.0);
        }
    });
    Ok(rows.finish())
}

/// Capacity rows for `k = 1..K+1`: `U+` of unsupplied inputs, then `U-` of
/// every transition.
pub fn assemble_inequalities(
    capacity: &CapacityData,
    layout: &DecisionVectorLayout,
) -> Result<(CsrMatrix, Vec<f64>, Vec<RowBlock>)> {
    let l = *layout;
    if capacity.c_u.len() != l.n_e {
        return Err(Error::Dimension(format!(
            "{} capacities for {} transitions",
            capacity.c_u.len(),
            l.n_e
        )));
    }
    let mut inputs = Rows::new(l.len());
    let mut all = Rows::new(l.len());
    for k in 1..=l.steps() {
        for &j in &capacity.d_cp {
            inputs.row([(l.index(k, Var::UPlus, j), 1.0)], capacity.c_u[j]);
        }
        for j in 0..l.n_e {
            all.row([(l.index(k, Var::UMinus, j), 1.0)], capacity.c_u[j]);
        }
    }
    let mut rows = Rows::new(l.len());
    for (name, fam, formula) in [
        ("input capacity", inputs, l.steps() * capacity.d_cp.len()),
        ("capacity", all, l.steps() * l.n_e),
    ] {
        let (m, b, _) = fam.finish();
        rows.block(name, formula, |rows| {
            for r in 0..m.nrows() {
                rows.row(m.row(r).collect::<Vec<_>>(), b[r]);
            }
        });
    }
    Ok(rows.finish())
}

/// Costs sit on `U-` for `k = 1..K`; every diagonal entry of `F` below
/// `epsilon` is raised to `epsilon`.
pub fn assemble_objective(
    costs: &CostData,
    layout: &DecisionVectorLayout,
    epsilon: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let l = *layout;
    if costs.linear.len() != l.n_e || costs.quadratic.len() != l.n_e {
        return Err(Error::Dimension("cost vectors do not cover every transition".into()));
    }
    if let Some(j) = (0..l.n_e).find(|&j| costs.linear[j] < 0.0 || costs.quadratic[j] < 0.0) {
        return Err(Error::NegativeCost(j.to_string()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Model(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut fq = vec![0.0; l.len()];
    let mut fl = vec![0.0; l.len()];
    for k in 1..=l.horizon {
        for j in 0..l.n_e {
            let i = l.index(k, Var::UMinus, j);
            fq[i] = costs.quadratic[j];
            fl[i] = costs.linear[j];
        }
    }
    for v in &mut fq {
        if *v < epsilon {
            *v = epsilon;
        }
    }
    Ok((fq, fl))
}

fn resolve_scenario(
    model: &SystemModel,
    nets: &CompiledNets,
    scenario: &ScenarioDocument,
) -> Result<(BoundaryData, InitialFinalConditions, CostData)> {
    let cap = |id: &str| {
        model
            .capability_index(id)
            .ok_or_else(|| Error::Model(format!("scenario `{}`: unknown capability `{id}`", scenario.id)))
    };
    let mut boundary = BoundaryData::default();
    for s in &scenario.supply {
        boundary.supply.push((cap(s.capability.get_ref())?, s.values.clone()));
    }
    for s in &scenario.demand {
        boundary.demand.push((cap(s.capability.get_ref())?, s.values.clone()));
    }

    let mut costs = CostData {
        linear: model.capabilities.iter().map(|c| c.linear_cost).collect(),
        quadratic: model.capabilities.iter().map(|c| c.quadratic_cost).collect(),
    };
    if !scenario.carbon_price.is_empty() {
        let exports = model.emission_exports();
        if exports.is_empty() {
            return Err(Error::Model("carbon prices given but the model has no emission exports".into()));
        }
        for p in &scenario.carbon_price {
            let target = p.resource.get_ref();
            if target != ALL_RESOURCES && model.resource_index(target).is_none() {
                return Err(Error::Model(format!("carbon price for unknown resource `{target}`")));
            }
            for &(psi, ratio) in &exports {
                let c = &model.capabilities[psi];
                if target == ALL_RESOURCES || model.resources[c.resource].id == *target {
                    costs.linear[psi] += p.price * ratio;
                }
            }
        }
    }

    let n_qb = nets.ptn.places.len();
    let n_e = model.capabilities.len();
    let n_sl = nets.services.n_places();
    let mut icfc = InitialFinalConditions::cold(n_qb, n_e, n_sl);
    for c in &scenario.condition {
        let ent = c.entity.get_ref();
        let idx = match c.segment {
            Segment::QB => {
                let (op, res) = ent
                    .split_once('@')
                    .ok_or_else(|| Error::Model(format!("Q_B entity `{ent}` must be operand@resource")))?;
                let i = model
                    .operand_index(op)
                    .ok_or_else(|| Error::Model(format!("unknown operand `{op}`")))?;
                let y = model
                    .resource_index(res)
                    .and_then(|r| model.buffer_index(r))
                    .ok_or_else(|| Error::Model(format!("`{res}` is not a buffer")))?;
                i * model.buffers.len() + y
            }
            Segment::QE => cap(ent)?,
            Segment::QSL => nets
                .services
                .places
                .iter()
                .position(|p| p == ent)
                .ok_or_else(|| Error::Model(format!("unknown service place `{ent}`")))?,
        };
        let slot = match (c.at, c.segment) {
            (When::Initial, Segment::QB) => &mut icfc.c_b1,
            (When::Initial, Segment::QE) => &mut icfc.c_e1,
            (When::Initial, Segment::QSL) => &mut icfc.c_sl1,
            (When::Final, Segment::QB) => &mut icfc.c_bk,
            (When::Final, Segment::QE) => &mut icfc.c_ek,
            (When::Final, Segment::QSL) => &mut icfc.c_slk,
        };
        slot[idx] = if c.free { None } else { c.value };
    }
    Ok((boundary, icfc, costs))
}

/// Compiles `scenario` against `model` into a full program with report.
pub fn compile(model: &SystemModel, scenario: &ScenarioDocument) -> Result<Program> {
    let nets = compile_nets(model)?;
    let (boundary, conditions, costs) = resolve_scenario(model, &nets, scenario)?;
    let layout = DecisionVectorLayout::new(
        scenario.horizon,
        nets.ptn.places.len(),
        model.capabilities.len(),
        nets.services.n_places(),
        nets.services.n_transitions(),
    );
    let supplied: Vec<usize> = boundary.supply.iter().map(|s| s.0).collect();
    let capacity = CapacityData {
        c_u: model.capabilities.iter().map(|c| c.capacity).collect(),
        d_cp: model.inputs.iter().copied().filter(|j| !supplied.contains(j)).collect(),
    };
    let epsilon = scenario.epsilon.unwrap_or(DEFAULT_EPSILON);
    let (a, b, eq_blocks) = assemble_equalities(&nets.ptn, &nets.services, &boundary, &conditions, &layout)?;
    let (d, e, ineq_blocks) = assemble_inequalities(&capacity, &layout)?;
    let (f_diag, f) = assemble_objective(&costs, &layout, epsilon)?;
    let qp = QPProblem {
        layout,
        f_diag,
        f,
        a,
        b,
        d,
        e,
        eq_blocks,
        ineq_blocks,
    };
    let report = build_report(model, &nets, &boundary, &capacity, &qp, &scenario.id);
    Ok(Program {
        scenario_id: scenario.id.clone(),
        nets,
        boundary,
        conditions,
        capacity,
        costs,
        epsilon,
        qp,
        report,
    })
}

fn build_report(
    model: &SystemModel,
    nets: &CompiledNets,
    boundary: &BoundaryData,
    capacity: &CapacityData,
    qp: &QPProblem,
    scenario: &str,
) -> CompilationReport {
    let l = qp.layout;
    let (e_in, e_out) = (boundary.supply.len(), boundary.demand.len());
    let (np, nr) = model.concept.shape();
    let joint = nets.tensor_plus.nnz() + nets.tensor_minus.nnz();
    let signed = signed_nnz(&nets.tensor_plus, &nets.tensor_minus);
    let a_formula: usize = eq_formula(&l, e_in, e_out).iter().sum();
    let d_formula = l.steps() * (capacity.d_cp.len() + l.n_e);
    let x_formula = l.steps() * (l.n_qb + 3 * l.n_e + l.n_sl + 3 * l.n_el);
    let mut notes = vec![
        format!(
            "incidence count: M+ and M- hold {joint} nonzeros jointly; the signed tensor M+ - M- holds {signed} \
             because storage self-loops cancel"
        ),
        format!(
            "Q_B has sigma(L)*sigma(B_S) = {} entries; the per-step length uses it in place of sigma(B_S) = {}",
            l.n_qb,
            model.buffers.len()
        ),
        format!(
            "D_Cp selects {} unsupplied input transition(s); supplied inputs are pinned by boundary rows",
            capacity.d_cp.len()
        ),
        "the negative refined tensor is scaled by D- (consumed quantities)".to_string(),
    ];
    let start_anchored: usize = model
        .capabilities
        .iter()
        .map(|c| (1..=l.horizon).filter(|k| k + c.duration <= l.horizon + 1).count())
        .sum();
    notes.push(format!(
        "duration rows are finish-anchored over k = 1..K ({} rows); start-anchored rows dropped past K+1 would give {}",
        l.horizon * l.n_e,
        start_anchored
    ));
    for b in &qp.eq_blocks {
        if b.rows != b.formula {
            notes.push(format!("equality block `{}` has {} rows, identity predicts {}", b.name, b.rows, b.formula));
        }
    }
    CompilationReport {
        scenario: scenario.to_string(),
        horizon: l.horizon,
        processes: np,
        resources: nr,
        system_concept_nnz: model.concept.nnz(),
        operands: model.operands.len(),
        buffers: model.buffers.len(),
        capabilities: model.capabilities.len(),
        tensor_plus_nnz: nets.tensor_plus.nnz(),
        tensor_minus_nnz: nets.tensor_minus.nnz(),
        tensor_joint_nnz: joint,
        tensor_signed_nnz: signed,
        q_b: l.n_qb,
        q_sl: l.n_sl,
        q_el: l.n_el,
        e_in,
        e_out,
        d_cp: capacity.d_cp.len(),
        x: l.len(),
        x_formula,
        a_rows: qp.a.nrows(),
        a_formula,
        a_nnz: qp.a.nnz(),
        d_rows: qp.d.nrows(),
        d_formula,
        d_nnz: qp.d.nnz(),
        eq_blocks: qp.eq_blocks.clone(),
        ineq_blocks: qp.ineq_blocks.clone(),
        notes,
    }
}

/// Writes `F.coo`, `f.txt`, `A.coo`, `b.txt`, `D.coo`, `e.txt` and
/// `manifest.json` into `dir`.
pub fn export(program: &Program, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let qp = &program.qp;
    let vec_text = |v: &[f64]| v.iter().map(|x| format!("{x:e}\n")).collect::<String>();
    let coo = |m: &CsrMatrix| {
        let mut s = String::new();
        m.write_coo(&mut s).expect("writing to a String cannot fail");
        s
    };
    std::fs::write(dir.join("F.coo"), coo(&qp.f_matrix()))?;
    std::fs::write(dir.join("f.txt"), vec_text(&qp.f))?;
    std::fs::write(dir.join("A.coo"), coo(&qp.a))?;
    std::fs::write(dir.join("b.txt"), vec_text(&qp.b))?;
    std::fs::write(dir.join("D.coo"), coo(&qp.d))?;
    std::fs::write(dir.join("e.txt"), vec_text(&qp.e))?;
    #[derive(Serialize)]
    struct Manifest<'a> {
        format: &'static str,
        objective: &'static str,
        layout: &'a DecisionVectorLayout,
        step_segments: Vec<(Var, usize)>,
        report: &'a CompilationReport,
    }
    let manifest = Manifest {
        format: "coordinate lists, 0-based `row col value` after a `# rows cols nnz` header",
        objective: "minimize x'Fx + f'x subject to Ax = b, Dx <= e, x >= 0",
        layout: &qp.layout,
        step_segments: Var::ALL.iter().map(|&v| (v, qp.layout.segment_len(v))).collect(),
        report: &program.report,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
    std::fs::write(dir.join("manifest.json"), json + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_round_trips_every_index() {
        let l = DecisionVectorLayout::new(2, 3, 2, 1, 2);
        assert_eq!(l.step_len(), 3 + 6 + 1 + 6);
        assert_eq!(l.len(), 3 * 16);
        for idx in 0..l.len() {
            let (k, v, j) = l.locate(idx);
            assert_eq!(l.index(k, v, j), idx);
        }
    }

    #[test]
    fn degenerate_horizon_is_one_step() {
        let l = DecisionVectorLayout::new(0, 4, 2, 1, 1);
        assert_eq!(l.len(), 4 + 6 + 1 + 3);
    }

    #[test]
    fn toy_layout_has_24_variables() {
        assert_eq!(DecisionVectorLayout::new(1, 2, 2, 1, 1).len(), 24);
    }

    #[test]
    fn inequality_rows_include_unsupplied_inputs() {
        let l = DecisionVectorLayout::new(1, 2, 2, 1, 1);
        let cap = CapacityData {
            c_u: vec![1.0, 2.0],
            d_cp: vec![0],
        };
        let (d, e, _) = assemble_inequalities(&cap, &l).unwrap();
        assert_eq!(d.nrows(), 6);
        assert_eq!(e, vec![1.0, 1.0, 1.0, 2.0, 1.0, 2.0]);
        let none = CapacityData {
            c_u: vec![1.0, 2.0],
            d_cp: vec![],
        };
        assert_eq!(assemble_inequalities(&none, &l).unwrap().0.nrows(), 4);
    }

    #[test]
    fn objective_rejects_negative_costs_and_regularizes() {
        let l = DecisionVectorLayout::new(1, 1, 1, 1, 1);
        let bad = CostData {
            linear: vec![-1.0],
            quadratic: vec![0.0],
        };
        assert!(matches!(assemble_objective(&bad, &l, 1e-9), Err(Error::NegativeCost(_))));
        let ok = CostData {
            linear: vec![3.0],
            quadratic: vec![0.5],
        };
        let (fq, fl) = assemble_objective(&ok, &l, 1e-9).unwrap();
        let u = l.index(1, Var::UMinus, 0);
        assert_eq!((fq[u], fl[u]), (0.5, 3.0));
        assert_eq!(fq[l.index(2, Var::UMinus, 0)], 1e-9);
        assert!(fq.iter().all(|&v| v >= 1e-9));
    }
}
