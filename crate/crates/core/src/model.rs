//! Model and scenario documents (TOML), their validation, and lowering to a
//! [`SystemModel`].
//!
//! Model schema (version 1):
//!
//! ```toml
//! schema = 1
//! name = "..."
//! emission_operand = "co2"          # optional; target of carbon prices
//! holding_operands = ["h2", "ch4"]  # operands with refined transportation processes
//!
//! [[operand]]    id, name, unit
//! [[resource]]   id, name, kind = "transformation" | "independent-buffer" | "transportation", node?
//! [[process]]    id, name, inputs = { operand = ratio, .. }, outputs = { .. }
//! [[capability]] id, resource, process | transport = { operand, from, to },
//!                duration, capacity, linear_cost?, quadratic_cost?, input?
//! [[service]]    operand, places = [..]
//!   [[service.transition]] id, pre = [..], post = [..], realizes = [process ids], transport?
//! ```
//!
//! Refined transportation processes are generated for every holding operand
//! and every ordered pair of buffers; a transport capability names one of
//! them by `(operand, from, to)`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{Diagnostic, Error, Result};
use crate::incidence::{DeviceModelMatrices, FlowDeclaration};
use crate::service::{ServiceFeasibility, ServiceNet};
use crate::sparse::Triplets;
use crate::system::{
    classify_buffers, enumerate_capabilities, Capability, Operand, Process, ProcessCapabilityMap, ProcessKind,
    Resource, ResourceKind, SystemConcept,
};

pub const SCHEMA_VERSION: u32 = 1;

type Id = Spanned<String>;

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

fn is_false(v: &bool) -> bool {
    !*v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    #[serde(default)]
    pub schema: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emission_operand: Option<Id>,
    #[serde(default)]
    pub holding_operands: Vec<Id>,
    #[serde(default, rename = "operand")]
    pub operands: Vec<OperandDoc>,
    #[serde(default, rename = "resource")]
    pub resources: Vec<ResourceDoc>,
    #[serde(default, rename = "process")]
    pub processes: Vec<ProcessDoc>,
    #[serde(default, rename = "capability")]
    pub capabilities: Vec<CapabilityDoc>,
    #[serde(default, rename = "service")]
    pub services: Vec<ServiceDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperandDoc {
    pub id: Id,
    pub name: String,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceDoc {
    pub id: Id,
    pub name: String,
    pub kind: ResourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessDoc {
    pub id: Id,
    pub name: String,
    #[serde(default)]
    pub inputs: BTreeMap<String, f64>,
    #[serde(default)]
    pub outputs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportDoc {
    pub operand: Id,
    pub from: Id,
    pub to: Id,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapabilityDoc {
    pub id: Id,
    pub resource: Id,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<Id>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport: Option<TransportDoc>,
    pub duration: u32,
    pub capacity: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub linear_cost: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub quadratic_cost: f64,
    /// Input transition whose `U+` is capacity limited when no supply series pins it.
    #[serde(default, skip_serializing_if = "is_false")]
    pub input: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceDoc {
    pub operand: Id,
    pub places: Vec<Id>,
    #[serde(default, rename = "transition")]
    pub transitions: Vec<ServiceTransitionDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceTransitionDoc {
    pub id: Id,
    #[serde(default)]
    pub pre: Vec<Id>,
    #[serde(default)]
    pub post: Vec<Id>,
    #[serde(default)]
    pub realizes: Vec<Id>,
    /// Realizes every refined transportation process of the net's operand.
    #[serde(default, skip_serializing_if = "is_false")]
    pub transport: bool,
}

/// Maps byte offsets to 1-based line/column.
struct Locator<'a> {
    text: &'a str,
}

impl Locator<'_> {
    fn at(&self, span: Range<usize>, message: impl Into<String>) -> Diagnostic {
        if span.start == 0 && span.end == 0 && self.text.is_empty() {
            return Diagnostic::unanchored(message);
        }
        let before = &self.text[..span.start.min(self.text.len())];
        let line = before.matches('\n').count() + 1;
        let column = before.chars().rev().take_while(|&c| c != '\n').count() + 1;
        Diagnostic::new(line, column, message)
    }

    fn id(&self, id: &Id, message: impl Into<String>) -> Diagnostic {
        self.at(id.span(), message)
    }
}

fn syntax_error(text: &str, err: toml::de::Error) -> Error {
    let loc = Locator { text };
    let d = match err.span() {
        Some(span) => loc.at(span, err.message().trim()),
        None => Diagnostic::unanchored(err.message().trim()),
    };
    Error::Validation(vec![d])
}

pub fn parse_model(text: &str) -> Result<ModelDocument> {
    let doc: ModelDocument = toml::from_str(text).map_err(|e| syntax_error(text, e))?;
    let diags = validate_model(&doc, text);
    if diags.is_empty() {
        Ok(doc)
    } else {
        Err(Error::Validation(diags))
    }
}

pub fn serialize_model(doc: &ModelDocument) -> String {
    toml::to_string(doc).expect("model documents always serialize")
}

fn duplicates<'a>(loc: &Locator, what: &str, ids: impl Iterator<Item = &'a Id>, out: &mut Vec<Diagnostic>) {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.get_ref().as_str()) {
            out.push(loc.id(id, format!("duplicate {what} id `{}`", id.get_ref())));
        }
    }
}

fn validate_model(doc: &ModelDocument, text: &str) -> Vec<Diagnostic> {
    let loc = Locator { text };
    let mut out = Vec::new();
    if doc.schema != SCHEMA_VERSION {
        out.push(Diagnostic::new(
            1,
            1,
            format!("`schema = {SCHEMA_VERSION}` is required (found {})", doc.schema),
        ));
    }
    for (section, empty) in [
        ("operand", doc.operands.is_empty()),
        ("resource", doc.resources.is_empty()),
        ("capability", doc.capabilities.is_empty()),
        ("service", doc.services.is_empty()),
    ] {
        if empty {
            out.push(Diagnostic::unanchored(format!("missing required section [[{section}]]")));
        }
    }
    duplicates(&loc, "operand", doc.operands.iter().map(|o| &o.id), &mut out);
    duplicates(&loc, "resource", doc.resources.iter().map(|r| &r.id), &mut out);
    duplicates(&loc, "process", doc.processes.iter().map(|p| &p.id), &mut out);
    duplicates(&loc, "capability", doc.capabilities.iter().map(|c| &c.id), &mut out);

    let operands: HashSet<&str> = doc.operands.iter().map(|o| o.id.get_ref().as_str()).collect();
    let resources: HashMap<&str, ResourceKind> =
        doc.resources.iter().map(|r| (r.id.get_ref().as_str(), r.kind)).collect();
    let processes: HashMap<&str, &ProcessDoc> = doc.processes.iter().map(|p| (p.id.get_ref().as_str(), p)).collect();
    let holding: HashSet<&str> = doc.holding_operands.iter().map(|h| h.get_ref().as_str()).collect();

    let operand_ref = |id: &Id, out: &mut Vec<Diagnostic>| {
        if !operands.contains(id.get_ref().as_str()) {
            out.push(loc.id(id, format!("unknown operand `{}`", id.get_ref())));
        }
    };
    if let Some(e) = &doc.emission_operand {
        operand_ref(e, &mut out);
    }
    for h in &doc.holding_operands {
        operand_ref(h, &mut out);
    }

    for p in &doc.processes {
        if p.inputs.is_empty() && p.outputs.is_empty() {
            out.push(loc.id(&p.id, format!("process `{}` has neither inputs nor outputs", p.id.get_ref())));
        }
        for (op, &ratio) in p.inputs.iter().chain(&p.outputs) {
            if !operands.contains(op.as_str()) {
                out.push(loc.id(&p.id, format!("process `{}` references unknown operand `{op}`", p.id.get_ref())));
            }
            if !(ratio > 0.0 && ratio.is_finite()) {
                out.push(loc.id(
                    &p.id,
                    format!("process `{}`: ratio for `{op}` must be positive (found {ratio})", p.id.get_ref()),
                ));
            }
        }
    }

    let mut pairs = HashSet::new();
    for c in &doc.capabilities {
        let cid = c.id.get_ref();
        let host = resources.get(c.resource.get_ref().as_str()).copied();
        if host.is_none() {
            out.push(loc.id(&c.resource, format!("capability `{cid}`: unknown resource `{}`", c.resource.get_ref())));
        }
        for (field, v) in [("capacity", c.capacity), ("linear_cost", c.linear_cost), ("quadratic_cost", c.quadratic_cost)] {
            if !(v >= 0.0 && v.is_finite()) {
                out.push(loc.id(&c.id, format!("capability `{cid}`: {field} must be non-negative (found {v})")));
            }
        }
        let process_key = match (&c.process, &c.transport) {
            (Some(p), None) => {
                if !processes.contains_key(p.get_ref().as_str()) {
                    out.push(loc.id(p, format!("capability `{cid}`: unknown process `{}`", p.get_ref())));
                }
                if host == Some(ResourceKind::Transportation) {
                    out.push(loc.id(
                        &c.id,
                        format!("capability `{cid}`: transformation process on transportation resource"),
                    ));
                }
                p.get_ref().clone()
            }
            (None, Some(t)) => {
                operand_ref(&t.operand, &mut out);
                if !holding.contains(t.operand.get_ref().as_str()) {
                    out.push(loc.id(
                        &t.operand,
                        format!("capability `{cid}`: `{}` is not a holding operand", t.operand.get_ref()),
                    ));
                }
                for end in [&t.from, &t.to] {
                    match resources.get(end.get_ref().as_str()) {
                        None => out.push(loc.id(end, format!("capability `{cid}`: unknown buffer `{}`", end.get_ref()))),
                        Some(k) if !k.is_buffer() => out.push(loc.id(
                            end,
                            format!("capability `{cid}`: `{}` is a transportation resource, not a buffer", end.get_ref()),
                        )),
                        _ => {}
                    }
                }
                format!("{}|{}|{}", t.operand.get_ref(), t.from.get_ref(), t.to.get_ref())
            }
            _ => {
                out.push(loc.id(&c.id, format!("capability `{cid}`: exactly one of `process` or `transport` is required")));
                continue;
            }
        };
        if !pairs.insert((process_key, c.resource.get_ref().clone())) {
            out.push(loc.id(&c.id, format!("capability `{cid}` repeats a process-resource pair")));
        }
    }

    let mut nets = HashSet::new();
    for s in &doc.services {
        operand_ref(&s.operand, &mut out);
        if !nets.insert(s.operand.get_ref().as_str()) {
            out.push(loc.id(&s.operand, format!("second service net for operand `{}`", s.operand.get_ref())));
        }
        duplicates(&loc, "service place", s.places.iter(), &mut out);
        duplicates(&loc, "service transition", s.transitions.iter().map(|t| &t.id), &mut out);
        let places: HashSet<&str> = s.places.iter().map(|p| p.get_ref().as_str()).collect();
        for t in &s.transitions {
            for p in t.pre.iter().chain(&t.post) {
                if !places.contains(p.get_ref().as_str()) {
                    out.push(loc.id(p, format!("service transition `{}`: unknown place `{}`", t.id.get_ref(), p.get_ref())));
                }
            }
            for r in &t.realizes {
                if !processes.contains_key(r.get_ref().as_str()) {
                    out.push(loc.id(r, format!("service transition `{}`: unknown process `{}`", t.id.get_ref(), r.get_ref())));
                }
            }
        }
    }
    for o in &doc.operands {
        if !doc.services.is_empty() && !nets.contains(o.id.get_ref().as_str()) {
            out.push(loc.id(&o.id, format!("operand `{}` has no service net", o.id.get_ref())));
        }
    }
    out
}

/// Fully indexed structural model.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub name: String,
    pub operands: Vec<Operand>,
    pub resources: Vec<Resource>,
    pub processes: Vec<Process>,
    pub concept: SystemConcept,
    pub capabilities: Vec<Capability>,
    /// Resource index of each buffer.
    pub buffers: Vec<usize>,
    pub flows: Vec<FlowDeclaration>,
    pub device: DeviceModelMatrices,
    pub pmap: ProcessCapabilityMap,
    pub service_nets: Vec<ServiceNet>,
    pub feasibility: Vec<ServiceFeasibility>,
    pub emission_operand: Option<usize>,
    /// Capabilities flagged as system inputs.
    pub inputs: Vec<usize>,
}

impl SystemModel {
    pub fn operand_index(&self, id: &str) -> Option<usize> {
        self.operands.iter().position(|o| o.id == id)
    }

    pub fn resource_index(&self, id: &str) -> Option<usize> {
        self.resources.iter().position(|r| r.id == id)
    }

    pub fn capability_index(&self, id: &str) -> Option<usize> {
        self.capabilities.iter().position(|c| c.id == id)
    }

    pub fn buffer_index(&self, resource: usize) -> Option<usize> {
        self.buffers.iter().position(|&r| r == resource)
    }

    /// Capabilities that only consume the emission operand (emission exports),
    /// with the per-firing quantity released.
    pub fn emission_exports(&self) -> Vec<(usize, f64)> {
        let Some(e) = self.emission_operand else {
            return Vec::new();
        };
        self.capabilities
            .iter()
            .filter_map(|c| {
                let w = c.process;
                let only_input = (0..self.operands.len())
                    .all(|i| self.device.plus(i, w).is_none() && (i == e || self.device.minus(i, w).is_none()));
                match (only_input, self.device.minus(e, w)) {
                    (true, Some(r)) => Some((c.index, r)),
                    _ => None,
                }
            })
            .collect()
    }
}

pub fn load_model(text: &str) -> Result<SystemModel> {
    lower(&parse_model(text)?)
}

/// Builds the indexed model from a validated document.
pub fn lower(doc: &ModelDocument) -> Result<SystemModel> {
    let operands: Vec<Operand> = doc
        .operands
        .iter()
        .map(|o| Operand {
            id: o.id.get_ref().clone(),
            name: o.name.clone(),
            unit: o.unit.clone(),
        })
        .collect();
    let resources: Vec<Resource> = doc
        .resources
        .iter()
        .map(|r| Resource {
            id: r.id.get_ref().clone(),
            name: r.name.clone(),
            kind: r.kind,
            node: r.node.clone(),
        })
        .collect();
    let op_idx: HashMap<&str, usize> = operands.iter().enumerate().map(|(i, o)| (o.id.as_str(), i)).collect();
    let res_idx: HashMap<&str, usize> = resources.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    let buffers = classify_buffers(&resources);
    let nb = buffers.len();
    let buf_of_res: HashMap<usize, usize> = buffers.iter().enumerate().map(|(y, &r)| (r, y)).collect();
    let lookup = |map: &HashMap<&str, usize>, id: &str, what: &str| {
        map.get(id)
            .copied()
            .ok_or_else(|| Error::Model(format!("unknown {what} `{id}`")))
    };

    let mut processes: Vec<Process> = doc
        .processes
        .iter()
        .map(|p| Process {
            id: p.id.get_ref().clone(),
            name: p.name.clone(),
            kind: ProcessKind::Transformation,
        })
        .collect();
    let n_transform = processes.len();
    let mut holding = Vec::new();
    for h in &doc.holding_operands {
        let i = lookup(&op_idx, h.get_ref(), "operand")?;
        holding.push(i);
        for (a, &ra) in buffers.iter().enumerate() {
            for (b, &rb) in buffers.iter().enumerate() {
                processes.push(Process {
                    id: format!("hold:{}:{}:{}", operands[i].id, resources[ra].id, resources[rb].id),
                    name: format!("Hold {} from {} to {}", operands[i].name, resources[ra].name, resources[rb].name),
                    kind: ProcessKind::RefinedTransportation {
                        operand: i,
                        origin: a,
                        destination: b,
                    },
                });
            }
        }
    }
    let proc_idx: HashMap<&str, usize> = processes.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
    let transport_process = |op: usize, from: usize, to: usize| -> Option<usize> {
        let h = holding.iter().position(|&x| x == op)?;
        Some(n_transform + h * nb * nb + from * nb + to)
    };

    let mut device = DeviceModelMatrices::new(operands.len(), processes.len());
    for (w, p) in doc.processes.iter().enumerate() {
        for (op, &r) in &p.inputs {
            device.minus.insert((lookup(&op_idx, op, "operand")?, w), r);
        }
        for (op, &r) in &p.outputs {
            device.plus.insert((lookup(&op_idx, op, "operand")?, w), r);
        }
    }
    for (w, p) in processes.iter().enumerate() {
        if let ProcessKind::RefinedTransportation { operand, .. } = p.kind {
            device.plus.insert((operand, w), 1.0);
            device.minus.insert((operand, w), 1.0);
        }
    }

    // Resolve each capability to (process, resource) and gather attributes.
    struct Pending<'a> {
        doc: &'a CapabilityDoc,
        process: usize,
        resource: usize,
    }
    let mut pending = Vec::new();
    for c in &doc.capabilities {
        let resource = lookup(&res_idx, c.resource.get_ref(), "resource")?;
        let process = match (&c.process, &c.transport) {
            (Some(p), _) => lookup(&proc_idx, p.get_ref(), "process")?,
            (None, Some(t)) => {
                let op = lookup(&op_idx, t.operand.get_ref(), "operand")?;
                let from = buf_of_res
                    .get(&lookup(&res_idx, t.from.get_ref(), "resource")?)
                    .copied()
                    .ok_or_else(|| Error::Model(format!("`{}` is not a buffer", t.from.get_ref())))?;
                let to = buf_of_res
                    .get(&lookup(&res_idx, t.to.get_ref(), "resource")?)
                    .copied()
                    .ok_or_else(|| Error::Model(format!("`{}` is not a buffer", t.to.get_ref())))?;
                transport_process(op, from, to)
                    .ok_or_else(|| Error::Model(format!("`{}` is not a holding operand", t.operand.get_ref())))?
            }
            (None, None) => return Err(Error::Model(format!("capability `{}` names no process", c.id.get_ref()))),
        };
        pending.push(Pending {
            doc: c,
            process,
            resource,
        });
    }
    let concept = SystemConcept::new(processes.len(), resources.len(), pending.iter().map(|p| (p.process, p.resource)))?;
    if concept.nnz() != pending.len() {
        return Err(Error::Model("repeated process-resource pair".into()));
    }
    let order = enumerate_capabilities(&concept);
    let mut capabilities = Vec::with_capacity(order.len());
    let mut flows = Vec::with_capacity(order.len());
    let mut inputs = Vec::new();
    for (psi, &(w, v)) in order.iter().enumerate() {
        let p = pending.iter().find(|p| p.process == w && p.resource == v).unwrap();
        let c = p.doc;
        capabilities.push(Capability {
            index: psi,
            id: c.id.get_ref().clone(),
            process: w,
            resource: v,
            duration: c.duration as usize,
            capacity: c.capacity,
            linear_cost: c.linear_cost,
            quadratic_cost: c.quadratic_cost,
        });
        if c.input {
            inputs.push(psi);
        }
        let flow = match processes[w].kind {
            ProcessKind::RefinedTransportation {
                operand,
                origin,
                destination,
            } => FlowDeclaration {
                pulls: vec![(operand, origin)],
                injects: vec![(operand, destination)],
            },
            ProcessKind::Transformation => {
                let y = *buf_of_res.get(&v).ok_or_else(|| {
                    Error::Model(format!("capability `{}`: transformation on a non-buffer resource", c.id.get_ref()))
                })?;
                let touched = |m: &BTreeMap<(usize, usize), f64>| {
                    (0..operands.len())
                        .filter(|&i| m.contains_key(&(i, w)))
                        .map(|i| (i, y))
                        .collect::<Vec<_>>()
                };
                FlowDeclaration {
                    pulls: touched(&device.minus),
                    injects: touched(&device.plus),
                }
            }
        };
        flows.push(flow);
    }
    let pmap = ProcessCapabilityMap::from_capabilities(&capabilities);

    let (service_nets, feasibility) = lower_services(doc, &operands, &processes, &capabilities, &device)?;
    let emission_operand = match &doc.emission_operand {
        Some(e) => Some(lookup(&op_idx, e.get_ref(), "operand")?),
        None => None,
    };

    Ok(SystemModel {
        name: doc.name.clone(),
        operands,
        resources,
        processes,
        concept,
        capabilities,
        buffers,
        flows,
        device,
        pmap,
        service_nets,
        feasibility,
        emission_operand,
        inputs,
    })
}

fn lower_services(
    doc: &ModelDocument,
    operands: &[Operand],
    processes: &[Process],
    capabilities: &[Capability],
    device: &DeviceModelMatrices,
) -> Result<(Vec<ServiceNet>, Vec<ServiceFeasibility>)> {
    let mut nets = Vec::new();
    let mut feas = Vec::new();
    for (i, operand) in operands.iter().enumerate() {
        let s = doc
            .services
            .iter()
            .find(|s| s.operand.get_ref() == &operand.id)
            .ok_or_else(|| Error::Model(format!("operand `{}` has no service net", operand.id)))?;
        let places: Vec<String> = s.places.iter().map(|p| p.get_ref().clone()).collect();
        let place = |id: &Id| places.iter().position(|p| p == id.get_ref()).unwrap();
        let nt = s.transitions.len();
        let (mut mp, mut mm) = (Triplets::new(places.len(), nt), Triplets::new(places.len(), nt));
        let (mut fp, mut fm) = (Triplets::new(nt, capabilities.len()), Triplets::new(nt, capabilities.len()));
        let mut realized_by = vec![Vec::new(); capabilities.len()];
        for (x, t) in s.transitions.iter().enumerate() {
            for p in &t.pre {
                mm.push(place(p), x, 1.0);
            }
            for p in &t.post {
                mp.push(place(p), x, 1.0);
            }
            for c in capabilities {
                let w = c.process;
                let hit = match processes[w].kind {
                    ProcessKind::RefinedTransportation { operand, .. } => t.transport && operand == i,
                    ProcessKind::Transformation => t.realizes.iter().any(|r| r.get_ref() == &processes[w].id),
                };
                if !hit {
                    continue;
                }
                let (plus, minus) = (device.plus(i, w).is_some(), device.minus(i, w).is_some());
                if !plus && !minus {
                    return Err(Error::Model(format!(
                        "service transition `{}` realizes `{}`, which does not act on `{}`",
                        t.id.get_ref(),
                        c.id,
                        operand.id
                    )));
                }
                if plus {
                    fp.push(x, c.index, 1.0);
                }
                if minus {
                    fm.push(x, c.index, 1.0);
                }
                realized_by[c.index].push(t.id.get_ref().clone());
            }
        }
        for c in capabilities {
            let w = c.process;
            let acts = device.plus(i, w).is_some() || device.minus(i, w).is_some();
            match (acts, realized_by[c.index].len()) {
                (true, 0) => {
                    return Err(Error::Model(format!(
                        "capability `{}` acts on `{}` but no service transition realizes it",
                        c.id, operand.id
                    )))
                }
                (_, n) if n > 1 => {
                    return Err(Error::Model(format!(
                        "capability `{}` is realized by several `{}` service transitions: {}",
                        c.id,
                        operand.id,
                        realized_by[c.index].join(", ")
                    )))
                }
                _ => {}
            }
        }
        nets.push(ServiceNet::new(
            i,
            places,
            s.transitions.iter().map(|t| t.id.get_ref().clone()).collect(),
            mp.to_csr(),
            mm.to_csr(),
        )?);
        feas.push(ServiceFeasibility {
            plus: fp.to_csr(),
            minus: fm.to_csr(),
        });
    }
    Ok((nets, feas))
}

// ---------------------------------------------------------------------------
// Scenarios

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    #[serde(default)]
    pub schema: u32,
    pub id: String,
    #[serde(default)]
    pub name: String,
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub supply: Vec<SeriesDoc>,
    #[serde(default)]
    pub demand: Vec<SeriesDoc>,
    #[serde(default)]
    pub carbon_price: Vec<CarbonPriceDoc>,
    #[serde(default)]
    pub condition: Vec<ConditionDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesDoc {
    pub capability: Id,
    pub values: Vec<f64>,
}

/// `resource = "ALL"` prices every emission export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarbonPriceDoc {
    pub resource: Id,
    pub price: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum When {
    Initial,
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    #[serde(rename = "Q_B")]
    QB,
    #[serde(rename = "Q_E")]
    QE,
    #[serde(rename = "Q_SL")]
    QSL,
}

/// Overrides one initial or final marking entry. Entities are
/// `operand@resource` for `Q_B`, a capability id for `Q_E`, and a service
/// place id for `Q_SL`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionDoc {
    pub at: When,
    pub segment: Segment,
    pub entity: Id,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub free: bool,
}

pub const ALL_RESOURCES: &str = "ALL";

pub fn parse_scenario(text: &str) -> Result<ScenarioDocument> {
    let doc: ScenarioDocument = toml::from_str(text).map_err(|e| syntax_error(text, e))?;
    let loc = Locator { text };
    let mut out = Vec::new();
    if doc.schema != SCHEMA_VERSION {
        out.push(Diagnostic::new(1, 1, format!("`schema = {SCHEMA_VERSION}` is required (found {})", doc.schema)));
    }
    if let Some(eps) = doc.epsilon {
        if !(eps > 0.0) {
            out.push(Diagnostic::unanchored(format!("epsilon must be positive (found {eps})")));
        }
    }
    for (kind, series) in [("supply", &doc.supply), ("demand", &doc.demand)] {
        for s in series {
            if s.values.len() != doc.horizon {
                out.push(loc.id(
                    &s.capability,
                    format!(
                        "{kind} series for `{}` has {} values, horizon is {}",
                        s.capability.get_ref(),
                        s.values.len(),
                        doc.horizon
                    ),
                ));
            }
            if s.values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                out.push(loc.id(&s.capability, format!("{kind} series for `{}` has negative values", s.capability.get_ref())));
            }
        }
    }
    for p in &doc.carbon_price {
        if !(p.price >= 0.0 && p.price.is_finite()) {
            out.push(loc.id(&p.resource, format!("carbon price must be non-negative (found {})", p.price)));
        }
    }
    for c in &doc.condition {
        match (c.value, c.free) {
            (Some(v), false) if v >= 0.0 && v.is_finite() => {}
            (None, true) => {}
            _ => out.push(loc.id(&c.entity, "condition needs either a non-negative `value` or `free = true`")),
        }
    }
    if out.is_empty() {
        Ok(doc)
    } else {
        Err(Error::Validation(out))
    }
}

pub fn serialize_scenario(doc: &ScenarioDocument) -> String {
    toml::to_string(doc).expect("scenario documents always serialize")
}
