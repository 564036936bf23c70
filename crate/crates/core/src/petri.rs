//! Timed place-transition nets, arc-constant colored nets, and the
//! simulator used to replay optimized firing schedules.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::incidence::{matricize, IncidenceTensor3};
use crate::sparse::CsrMatrix;

/// Default tolerance below zero before a marking counts as negative.
pub const MARKING_TOL: f64 = 1e-9;

/// Relaxed multiset: color -> non-negative real multiplicity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Bag(BTreeMap<String, f64>);

impl Bag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, color: &str, count: f64) -> Self {
        self.insert(color, count);
        self
    }

    pub fn insert(&mut self, color: &str, count: f64) {
        assert!(count >= 0.0, "bag multiplicity must be non-negative");
        if count == 0.0 {
            self.0.remove(color);
        } else {
            self.0.insert(color.to_string(), count);
        }
    }

    pub fn get(&self, color: &str) -> f64 {
        self.0.get(color).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn add(&self, other: &Bag) -> Bag {
        let mut out = self.clone();
        for (c, v) in other.iter() {
            out.insert(c, out.get(c) + v);
        }
        out
    }

    /// `None` when some multiplicity would drop below zero.
    pub fn sub(&self, other: &Bag) -> Option<Bag> {
        let mut out = self.clone();
        for (c, v) in other.iter() {
            let left = out.get(c) - v;
            if left < 0.0 {
                return None;
            }
            out.insert(c, left);
        }
        Some(out)
    }

    pub fn scale(&self, factor: f64) -> Bag {
        assert!(factor >= 0.0, "bags scale by non-negative factors only");
        let mut out = Bag::new();
        for (c, v) in self.iter() {
            out.insert(c, v * factor);
        }
        out
    }

    /// `self >= other` in every color.
    pub fn covers(&self, other: &Bag) -> bool {
        other.iter().all(|(c, v)| self.get(c) >= v)
    }
}

/// Marking of a timed net: tokens in places and tokens inside transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Marking {
    pub q_b: Vec<f64>,
    pub q_e: Vec<f64>,
}

impl Marking {
    pub fn zeros(places: usize, transitions: usize) -> Self {
        Self {
            q_b: vec![0.0; places],
            q_e: vec![0.0; transitions],
        }
    }

    fn first_negative(&self, tol: f64) -> Option<(usize, f64)> {
        self.q_b
            .iter()
            .chain(&self.q_e)
            .enumerate()
            .find(|(_, &v)| v < -tol)
            .map(|(i, &v)| (i, v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceTransitionNet {
    pub places: Vec<String>,
    pub transitions: Vec<String>,
    pub m_plus: CsrMatrix,
    pub m_minus: CsrMatrix,
    pub durations: Vec<usize>,
}

impl PlaceTransitionNet {
    pub fn new(
        places: Vec<String>,
        transitions: Vec<String>,
        m_plus: CsrMatrix,
        m_minus: CsrMatrix,
        durations: Vec<usize>,
    ) -> Result<Self> {
        let shape = (places.len(), transitions.len());
        if m_plus.shape() != shape || m_minus.shape() != shape || durations.len() != shape.1 {
            return Err(Error::Dimension(format!(
                "net with {} places and {} transitions has incidence {:?}/{:?} and {} durations",
                shape.0,
                shape.1,
                m_plus.shape(),
                m_minus.shape(),
                durations.len()
            )));
        }
        Ok(Self {
            places,
            transitions,
            m_plus,
            m_minus,
            durations,
        })
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph ptn {\n  rankdir=LR;\n");
        for (i, p) in self.places.iter().enumerate() {
            let _ = writeln!(s, "  p{i} [shape=circle,label=\"{p}\"];");
        }
        for (j, t) in self.transitions.iter().enumerate() {
            let _ = writeln!(s, "  t{j} [shape=box,label=\"{t}\\nkd={}\"];", self.durations[j]);
        }
        for (i, j, w) in self.m_minus.iter() {
            let _ = writeln!(s, "  p{i} -> t{j} [label=\"{w}\"];");
        }
        for (i, j, w) in self.m_plus.iter() {
            let _ = writeln!(s, "  t{j} -> p{i} [label=\"{w}\"];");
        }
        s.push_str("}\n");
        s
    }
}

/// Applies one step of the state equations without any sign check.
pub fn apply_step(
    q: &Marking,
    u_minus: &[f64],
    u_plus: &[f64],
    m_plus: &CsrMatrix,
    m_minus: &CsrMatrix,
) -> Marking {
    let inject = m_plus.mul_vec(u_plus);
    let pull = m_minus.mul_vec(u_minus);
    Marking {
        q_b: (0..q.q_b.len()).map(|s| q.q_b[s] + inject[s] - pull[s]).collect(),
        q_e: (0..q.q_e.len())
            .map(|e| q.q_e[e] - u_plus[e] + u_minus[e])
            .collect(),
    }
}

/// One transition of the timed net. Fails when a component of the new marking
/// is negative beyond [`MARKING_TOL`].
pub fn step_ptn(
    q: &Marking,
    u_minus: &[f64],
    u_plus: &[f64],
    m_plus: &CsrMatrix,
    m_minus: &CsrMatrix,
) -> Result<Marking> {
    if m_plus.shape() != m_minus.shape()
        || m_plus.nrows() != q.q_b.len()
        || m_plus.ncols() != q.q_e.len()
        || u_minus.len() != q.q_e.len()
        || u_plus.len() != q.q_e.len()
    {
        return Err(Error::Dimension("step_ptn operands disagree in size".into()));
    }
    let next = apply_step(q, u_minus, u_plus, m_plus, m_minus);
    match next.first_negative(MARKING_TOL) {
        Some((index, value)) => Err(Error::NegativeMarking {
            step: 1,
            index,
            value,
        }),
        None => Ok(next),
    }
}

/// `u_minus[k]` / `u_plus[k]` hold the firing vectors of step `k + 1`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FiringSchedule {
    pub u_minus: Vec<Vec<f64>>,
    pub u_plus: Vec<Vec<f64>>,
}

impl FiringSchedule {
    pub fn zeros(steps: usize, transitions: usize) -> Self {
        Self {
            u_minus: vec![vec![0.0; transitions]; steps],
            u_plus: vec![vec![0.0; transitions]; steps],
        }
    }

    pub fn steps(&self) -> usize {
        self.u_minus.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DurationViolation {
    pub transition: usize,
    /// 1-based step of the start firing.
    pub step: usize,
    pub started: f64,
    pub finished: f64,
}

/// Reports every `(transition, k)` where `U+[k + kd] != U-[k]` beyond `tol`,
/// over the steps the schedule covers.
pub fn check_duration(schedule: &FiringSchedule, durations: &[usize], tol: f64) -> Vec<DurationViolation> {
    let n = schedule.steps();
    let mut out = Vec::new();
    for (psi, &kd) in durations.iter().enumerate() {
        for k in 1..=n {
            if k + kd > n {
                break;
            }
            let started = schedule.u_minus[k - 1][psi];
            let finished = schedule.u_plus[k + kd - 1][psi];
            if (started - finished).abs() > tol {
                out.push(DurationViolation {
                    transition: psi,
                    step: k,
                    started,
                    finished,
                });
            }
        }
    }
    out
}

/// Replays the schedule from `q0`. Entry `k` of the result is the marking at
/// step `k + 1`, so a schedule of `K` steps yields `K + 1` markings.
pub fn simulate(
    net: &PlaceTransitionNet,
    schedule: &FiringSchedule,
    q0: &Marking,
    tol: f64,
) -> Result<Vec<Marking>> {
    let mut traj = vec![q0.clone()];
    for k in 0..schedule.steps() {
        let last = traj.last().unwrap();
        if schedule.u_minus[k].len() != net.transitions.len() || schedule.u_plus[k].len() != net.transitions.len() {
            return Err(Error::Dimension(format!("firing vectors at step {} have wrong length", k + 1)));
        }
        let next = apply_step(last, &schedule.u_minus[k], &schedule.u_plus[k], &net.m_plus, &net.m_minus);
        if let Some((index, value)) = next.first_negative(tol) {
            return Err(Error::NegativeMarking {
                step: k + 2,
                index,
                value,
            });
        }
        traj.push(next);
    }
    Ok(traj)
}

/// `step,kind,name,value` rows; `kind` is `place` or `transition`.
pub fn trajectory_csv(net: &PlaceTransitionNet, trajectory: &[Marking]) -> String {
    let mut s = String::from("step,kind,name,value\n");
    for (k, m) in trajectory.iter().enumerate() {
        for (p, v) in net.places.iter().zip(&m.q_b) {
            let _ = writeln!(s, "{},place,{p},{v}", k + 1);
        }
        for (t, v) in net.transitions.iter().zip(&m.q_e) {
            let _ = writeln!(s, "{},transition,{t},{v}", k + 1);
        }
    }
    s
}

/// Arc-constant colored net: places carry bags over the color set and each
/// colored arc weight is a constant bag, stored here as tensors indexed by
/// (color, place, transition).
#[derive(Debug, Clone, PartialEq)]
pub struct ACColoredPetriNet {
    pub colors: Vec<String>,
    pub places: Vec<String>,
    pub transitions: Vec<String>,
    pub plus: IncidenceTensor3,
    pub minus: IncidenceTensor3,
    pub durations: Vec<usize>,
    pub place_marking: Vec<Bag>,
    pub transition_marking: Vec<f64>,
}

impl ACColoredPetriNet {
    /// Colored arc weight from `place` into `transition`.
    pub fn pre_bag(&self, place: usize, transition: usize) -> Bag {
        self.arc_bag(&self.minus, place, transition)
    }

    pub fn post_bag(&self, place: usize, transition: usize) -> Bag {
        self.arc_bag(&self.plus, place, transition)
    }

    fn arc_bag(&self, tensor: &IncidenceTensor3, place: usize, transition: usize) -> Bag {
        let mut b = Bag::new();
        for (i, c) in self.colors.iter().enumerate() {
            b.insert(c, tensor.get(i, place, transition));
        }
        b
    }
}

/// Splits every place per color (color-major ordering, matching the
/// flattened incidence rows) and keeps transitions and durations as they are.
pub fn accpn_to_ptn(net: &ACColoredPetriNet) -> Result<(PlaceTransitionNet, Marking)> {
    let (l, s, e) = net.plus.dims();
    if net.minus.dims() != (l, s, e)
        || l != net.colors.len()
        || s != net.places.len()
        || e != net.transitions.len()
        || net.place_marking.len() != s
        || net.transition_marking.len() != e
    {
        return Err(Error::Dimension("colored net components disagree in size".into()));
    }
    let places = net
        .colors
        .iter()
        .flat_map(|c| net.places.iter().map(move |p| format!("{c}@{p}")))
        .collect();
    let q_b = net
        .colors
        .iter()
        .flat_map(|c| net.place_marking.iter().map(move |bag| bag.get(c)))
        .collect();
    let ptn = PlaceTransitionNet::new(
        places,
        net.transitions.clone(),
        matricize(&net.plus),
        matricize(&net.minus),
        net.durations.clone(),
    )?;
    Ok((
        ptn,
        Marking {
            q_b,
            q_e: net.transition_marking.clone(),
        },
    ))
}
