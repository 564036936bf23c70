//! Per-operand service nets and their synchronization with the engineering
//! system net.

use crate::error::{Error, Result};
use crate::incidence::DeviceModelMatrices;
use crate::petri::PlaceTransitionNet;
use crate::sparse::{CsrMatrix, Triplets};
use crate::system::ProcessCapabilityMap;

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceNet {
    pub operand: usize,
    pub places: Vec<String>,
    pub transitions: Vec<String>,
    pub m_plus: CsrMatrix,
    pub m_minus: CsrMatrix,
    pub initial: Vec<f64>,
}

impl ServiceNet {
    pub fn new(
        operand: usize,
        places: Vec<String>,
        transitions: Vec<String>,
        m_plus: CsrMatrix,
        m_minus: CsrMatrix,
    ) -> Result<Self> {
        let shape = (places.len(), transitions.len());
        if m_plus.shape() != shape || m_minus.shape() != shape {
            return Err(Error::Dimension(format!(
                "service net for operand {operand}: incidence {:?} vs {shape:?}",
                m_plus.shape()
            )));
        }
        let initial = vec![0.0; places.len()];
        Ok(Self {
            operand,
            places,
            transitions,
            m_plus,
            m_minus,
            initial,
        })
    }
}

/// Binary `Λ̃±` of one operand: rows are service transitions, columns are
/// capabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceFeasibility {
    pub plus: CsrMatrix,
    pub minus: CsrMatrix,
}

/// Device-scaled `Λ̂±`, same shape as the feasibility matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SynchronizationMatrix {
    pub plus: CsrMatrix,
    pub minus: CsrMatrix,
}

fn scale_feasibility(
    operand: usize,
    m: &CsrMatrix,
    ratio: impl Fn(usize, usize) -> Option<f64>,
    pmap: &ProcessCapabilityMap,
) -> Result<CsrMatrix> {
    let mut t = Triplets::new(m.nrows(), m.ncols());
    for (x, psi, v) in m.iter() {
        if v != 1.0 {
            return Err(Error::Model(format!(
                "feasibility entry ({x}, {psi}) of operand {operand} is {v}, expected 1"
            )));
        }
        let w = pmap.process_of(psi);
        let r = ratio(operand, w).ok_or_else(|| Error::UndeclaredRatio {
            operand: operand.to_string(),
            process: w.to_string(),
        })?;
        t.push(x, psi, r);
    }
    Ok(t.to_csr())
}

/// `Λ̂±(x, ψ) = Λ̃±(x, ψ) · D±(i, pmap(ψ))`.
pub fn build_sync_matrices(
    operand: usize,
    feasibility: &ServiceFeasibility,
    device: &DeviceModelMatrices,
    pmap: &ProcessCapabilityMap,
) -> Result<SynchronizationMatrix> {
    if feasibility.plus.ncols() != pmap.len() || feasibility.minus.ncols() != pmap.len() {
        return Err(Error::Dimension(format!(
            "feasibility of operand {operand} has {} columns, expected {}",
            feasibility.plus.ncols(),
            pmap.len()
        )));
    }
    Ok(SynchronizationMatrix {
        plus: scale_feasibility(operand, &feasibility.plus, |i, w| device.plus(i, w), pmap)?,
        minus: scale_feasibility(operand, &feasibility.minus, |i, w| device.minus(i, w), pmap)?,
    })
}

/// All service nets side by side: block-diagonal incidence and stacked
/// synchronization matrices, in operand order.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceBlock {
    pub place_offsets: Vec<usize>,
    pub transition_offsets: Vec<usize>,
    pub places: Vec<String>,
    pub transitions: Vec<String>,
    pub m_plus: CsrMatrix,
    pub m_minus: CsrMatrix,
    pub lambda_plus: CsrMatrix,
    pub lambda_minus: CsrMatrix,
    pub initial: Vec<f64>,
}

impl ServiceBlock {
    pub fn n_places(&self) -> usize {
        self.places.len()
    }

    pub fn n_transitions(&self) -> usize {
        self.transitions.len()
    }

    /// Operand owning service transition `x`.
    pub fn operand_of_transition(&self, x: usize) -> usize {
        self.transition_offsets.partition_point(|&o| o <= x) - 1
    }

    pub fn operand_of_place(&self, s: usize) -> usize {
        self.place_offsets.partition_point(|&o| o <= s) - 1
    }

    /// The block as one untimed place-transition net.
    pub fn as_ptn(&self) -> PlaceTransitionNet {
        PlaceTransitionNet::new(
            self.places.clone(),
            self.transitions.clone(),
            self.m_plus.clone(),
            self.m_minus.clone(),
            vec![0; self.transitions.len()],
        )
        .expect("service block is dimensionally consistent by construction")
    }
}

pub fn concat_services(nets: &[ServiceNet], syncs: &[SynchronizationMatrix]) -> Result<ServiceBlock> {
    if nets.len() != syncs.len() {
        return Err(Error::Dimension(format!(
            "{} service nets but {} synchronization matrices",
            nets.len(),
            syncs.len()
        )));
    }
    for (i, net) in nets.iter().enumerate() {
        if net.operand != i {
            return Err(Error::Model(format!("missing service net for operand {i}")));
        }
    }
    let n_caps = syncs.first().map_or(0, |s| s.plus.ncols());
    let n_places: usize = nets.iter().map(|n| n.places.len()).sum();
    let n_trans: usize = nets.iter().map(|n| n.transitions.len()).sum();

    let mut place_offsets = Vec::with_capacity(nets.len() + 1);
    let mut transition_offsets = Vec::with_capacity(nets.len() + 1);
    let (mut mp, mut mm) = (Triplets::new(n_places, n_trans), Triplets::new(n_places, n_trans));
    let (mut lp, mut lm) = (Triplets::new(n_trans, n_caps), Triplets::new(n_trans, n_caps));
    let (mut places, mut transitions, mut initial) = (Vec::new(), Vec::new(), Vec::new());
    let (mut ps, mut ts) = (0, 0);
    for (net, sync) in nets.iter().zip(syncs) {
        if sync.plus.shape() != (net.transitions.len(), n_caps) || sync.minus.shape() != sync.plus.shape() {
            return Err(Error::Dimension(format!(
                "synchronization matrix of operand {} has shape {:?}",
                net.operand,
                sync.plus.shape()
            )));
        }
        place_offsets.push(ps);
        transition_offsets.push(ts);
        for (r, c, v) in net.m_plus.iter() {
            mp.push(ps + r, ts + c, v);
        }
        for (r, c, v) in net.m_minus.iter() {
            mm.push(ps + r, ts + c, v);
        }
        for (r, c, v) in sync.plus.iter() {
            lp.push(ts + r, c, v);
        }
        for (r, c, v) in sync.minus.iter() {
            lm.push(ts + r, c, v);
        }
        places.extend(net.places.iter().cloned());
        transitions.extend(net.transitions.iter().cloned());
        initial.extend_from_slice(&net.initial);
        ps += net.places.len();
        ts += net.transitions.len();
    }
    place_offsets.push(ps);
    transition_offsets.push(ts);
    Ok(ServiceBlock {
        place_offsets,
        transition_offsets,
        places,
        transitions,
        m_plus: mp.to_csr(),
        m_minus: mm.to_csr(),
        lambda_plus: lp.to_csr(),
        lambda_minus: lm.to_csr(),
        initial,
    })
}

/// `(U_L+ - Λ̂+ U+, U_L- - Λ̂- U-)` for one step.
pub fn sync_residual(
    block: &ServiceBlock,
    u_l_plus: &[f64],
    u_l_minus: &[f64],
    u_plus: &[f64],
    u_minus: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let sub = |a: &[f64], b: Vec<f64>| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
    (
        sub(u_l_plus, block.lambda_plus.mul_vec(u_plus)),
        sub(u_l_minus, block.lambda_minus.mul_vec(u_minus)),
    )
}
