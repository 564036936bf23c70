//! Hetero-functional incidence tensors and device-model refinement.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, Triplets};
use crate::system::ProcessCapabilityMap;

/// Sparse third-order tensor over (operand, buffer, capability).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IncidenceTensor3 {
    dims: (usize, usize, usize),
    entries: BTreeMap<(usize, usize, usize), f64>,
}

impl IncidenceTensor3 {
    pub fn new(operands: usize, buffers: usize, capabilities: usize) -> Self {
        Self {
            dims: (operands, buffers, capabilities),
            entries: BTreeMap::new(),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn set(&mut self, i: usize, y: usize, psi: usize, value: f64) {
        let (l, b, e) = self.dims;
        assert!(i < l && y < b && psi < e, "tensor index ({i}, {y}, {psi}) outside {l}x{b}x{e}");
        if value == 0.0 {
            self.entries.remove(&(i, y, psi));
        } else {
            self.entries.insert((i, y, psi), value);
        }
    }

    pub fn get(&self, i: usize, y: usize, psi: usize) -> f64 {
        self.entries.get(&(i, y, psi)).copied().unwrap_or(0.0)
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize, usize), f64)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.values().sum()
    }

    /// Coordinate-list dump, one `i y psi weight` line per nonzero.
    pub fn write_coo(&self, out: &mut impl std::fmt::Write) -> std::fmt::Result {
        let (l, b, e) = self.dims;
        writeln!(out, "# {l} {b} {e} {}", self.nnz())?;
        for ((i, y, psi), v) in self.iter() {
            writeln!(out, "{i} {y} {psi} {v}")?;
        }
        Ok(())
    }
}

/// Where a capability pulls operands from and injects them into. Pairs are
/// `(operand, buffer)` indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowDeclaration {
    pub pulls: Vec<(usize, usize)>,
    pub injects: Vec<(usize, usize)>,
}

/// Returns `(M+, M-)` as binary tensors.
pub fn build_incidence_tensors(
    n_operands: usize,
    n_buffers: usize,
    flows: &[FlowDeclaration],
) -> Result<(IncidenceTensor3, IncidenceTensor3)> {
    let mut plus = IncidenceTensor3::new(n_operands, n_buffers, flows.len());
    let mut minus = IncidenceTensor3::new(n_operands, n_buffers, flows.len());
    let check = |psi: usize, i: usize, y: usize| {
        if i >= n_operands {
            return Err(Error::Dimension(format!("capability {psi} references operand {i}")));
        }
        if y >= n_buffers {
            return Err(Error::Dimension(format!("capability {psi} references buffer {y}")));
        }
        Ok(())
    };
    for (psi, flow) in flows.iter().enumerate() {
        for &(i, y) in &flow.pulls {
            check(psi, i, y)?;
            minus.set(i, y, psi, 1.0);
        }
        for &(i, y) in &flow.injects {
            check(psi, i, y)?;
            plus.set(i, y, psi, 1.0);
        }
    }
    Ok((plus, minus))
}

/// Number of nonzeros of the signed tensor `M+ - M-`; storage self-loops
/// cancel and drop out.
pub fn signed_nnz(plus: &IncidenceTensor3, minus: &IncidenceTensor3) -> usize {
    let mut keys: Vec<_> = plus.entries.keys().chain(minus.entries.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter(|&&(i, y, psi)| plus.get(i, y, psi) - minus.get(i, y, psi) != 0.0)
        .count()
}

/// Row index of `(operand, buffer)` in the flattened form.
pub fn vec_index(i: usize, y: usize, n_buffers: usize) -> usize {
    i * n_buffers + y
}

/// Flattens along the first two dimensions, operand-major.
pub fn matricize(tensor: &IncidenceTensor3) -> CsrMatrix {
    let (l, b, e) = tensor.dims;
    let mut t = Triplets::new(l * b, e);
    for ((i, y, psi), v) in tensor.iter() {
        t.push(vec_index(i, y, b), psi, v);
    }
    t.to_csr()
}

/// Stoichiometric ratios per (operand, process). `plus` holds ejected
/// quantities, `minus` consumed ones. An absent entry means undeclared.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeviceModelMatrices {
    pub n_operands: usize,
    pub n_processes: usize,
    pub plus: BTreeMap<(usize, usize), f64>,
    pub minus: BTreeMap<(usize, usize), f64>,
}

impl DeviceModelMatrices {
    pub fn new(n_operands: usize, n_processes: usize) -> Self {
        Self {
            n_operands,
            n_processes,
            ..Default::default()
        }
    }

    /// Every (operand, process) pair set to one in both matrices.
    pub fn ones(n_operands: usize, n_processes: usize) -> Self {
        let all: BTreeMap<_, _> = (0..n_operands)
            .flat_map(|i| (0..n_processes).map(move |w| ((i, w), 1.0)))
            .collect();
        Self {
            n_operands,
            n_processes,
            plus: all.clone(),
            minus: all,
        }
    }

    pub fn plus(&self, i: usize, w: usize) -> Option<f64> {
        self.plus.get(&(i, w)).copied()
    }

    pub fn minus(&self, i: usize, w: usize) -> Option<f64> {
        self.minus.get(&(i, w)).copied()
    }
}

fn refine(
    tensor: &IncidenceTensor3,
    ratios: &BTreeMap<(usize, usize), f64>,
    pmap: &ProcessCapabilityMap,
) -> Result<IncidenceTensor3> {
    let mut out = IncidenceTensor3::new(tensor.dims.0, tensor.dims.1, tensor.dims.2);
    for ((i, y, psi), v) in tensor.iter() {
        let w = pmap.process_of(psi);
        let ratio = ratios.get(&(i, w)).ok_or_else(|| Error::UndeclaredRatio {
            operand: i.to_string(),
            process: w.to_string(),
        })?;
        out.set(i, y, psi, ratio * v);
    }
    Ok(out)
}

/// Scales each binary entry by the device ratio of the capability's process:
/// `D+` for the positive tensor and `D-` for the negative one.
pub fn refine_with_device_models(
    plus: &IncidenceTensor3,
    minus: &IncidenceTensor3,
    device: &DeviceModelMatrices,
    pmap: &ProcessCapabilityMap,
) -> Result<(IncidenceTensor3, IncidenceTensor3)> {
    if pmap.len() != plus.dims.2 || pmap.len() != minus.dims.2 {
        return Err(Error::Dimension(format!(
            "process map covers {} capabilities, tensors have {}",
            pmap.len(),
            plus.dims.2
        )));
    }
    Ok((refine(plus, &device.plus, pmap)?, refine(minus, &device.minus, pmap)?))
}
