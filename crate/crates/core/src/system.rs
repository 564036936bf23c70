//! Structural vocabulary: operands, resources, processes, the system concept
//! and the capabilities it admits.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Operand {
    pub id: String,
    pub name: String,
    pub unit: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResourceKind {
    Transformation,
    IndependentBuffer,
    Transportation,
}

impl ResourceKind {
    pub fn is_buffer(self) -> bool {
        !matches!(self, ResourceKind::Transportation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resource {
    pub id: String,
    pub name: String,
    pub kind: ResourceKind,
    pub node: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessKind {
    Transformation,
    /// Holding `operand` while moving it from buffer `origin` to buffer
    /// `destination` (both indices into the buffer list). Storage is the
    /// case `origin == destination`.
    RefinedTransportation {
        operand: usize,
        origin: usize,
        destination: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Process {
    pub id: String,
    pub name: String,
    pub kind: ProcessKind,
}

/// Binary process-by-resource matrix `A_S`; `(w, v)` present means process
/// `w` can be executed by resource `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConcept {
    n_processes: usize,
    n_resources: usize,
    filled: BTreeSet<(usize, usize)>,
}

impl SystemConcept {
    pub fn new(
        n_processes: usize,
        n_resources: usize,
        filled: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let filled: BTreeSet<_> = filled.into_iter().collect();
        if let Some(&(w, v)) = filled.iter().find(|&&(w, v)| w >= n_processes || v >= n_resources) {
            return Err(Error::Dimension(format!(
                "system concept entry ({w}, {v}) outside {n_processes}x{n_resources}"
            )));
        }
        Ok(Self {
            n_processes,
            n_resources,
            filled,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_processes, self.n_resources)
    }

    pub fn nnz(&self) -> usize {
        self.filled.len()
    }

    pub fn get(&self, process: usize, resource: usize) -> bool {
        self.filled.contains(&(process, resource))
    }
}

/// One degree of freedom: a process executed by a resource, with the
/// attributes the flow program needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Capability {
    pub index: usize,
    pub id: String,
    pub process: usize,
    pub resource: usize,
    /// Whole time steps between a firing start and its finish.
    pub duration: usize,
    pub capacity: f64,
    pub linear_cost: f64,
    pub quadratic_cost: f64,
}

/// Projection from capability index to the index of its process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessCapabilityMap(Vec<usize>);

impl ProcessCapabilityMap {
    pub fn new(processes: Vec<usize>) -> Self {
        Self(processes)
    }

    pub fn from_capabilities(capabilities: &[Capability]) -> Self {
        Self(capabilities.iter().map(|c| c.process).collect())
    }

    pub fn process_of(&self, capability: usize) -> usize {
        self.0[capability]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Enumerates the filled entries of `A_S` as `(process, resource)` pairs in
/// capability order: column-major, i.e. resources outer and processes inner.
/// The list length is `DOF_S`.
pub fn enumerate_capabilities(concept: &SystemConcept) -> Vec<(usize, usize)> {
    let mut pairs: Vec<_> = concept.filled.iter().copied().collect();
    pairs.sort_by_key(|&(w, v)| (v, w));
    pairs
}

/// Returns the buffer resources `B_S`: transformation resources followed by
/// independent buffers, each group in declaration order.
pub fn classify_buffers(resources: &[Resource]) -> Vec<usize> {
    let of_kind = |kind| {
        resources
            .iter()
            .enumerate()
            .filter(move |(_, r)| r.kind == kind)
            .map(|(i, _)| i)
    };
    of_kind(ResourceKind::Transformation)
        .chain(of_kind(ResourceKind::IndependentBuffer))
        .collect()
}
