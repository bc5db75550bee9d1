//! Problem data: ESB types, the depot/shelter/station network, the slot
//! horizon, shelter demand and type-shelter compatibility.
//!
//! Slots are indexed internally from 0 (the first slot of the horizon) to
//! `slot_count() - 1`. Energies are kWh, times are slot counts and money is
//! in whole currency units.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum InstanceError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid `{path}`: {msg}")]
    Invalid { path: String, msg: String },
    #[error("uncoverable shelter {0}: no compatible ESB type")]
    Uncoverable(u32),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn invalid(path: impl Into<String>, msg: impl Into<String>) -> InstanceError {
    InstanceError::Invalid { path: path.into(), msg: msg.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsbType {
    pub id: u32,
    pub invest_cost: f64,
    pub cap_max: f64,
    pub cap_min: f64,
    pub discharge_min: f64,
    /// kWh per hour of driving.
    pub consumption_rate: f64,
    pub available_count: u32,
}

impl EsbType {
    pub fn usable(&self) -> f64 {
        self.cap_max - self.cap_min
    }
}

/// A network node. Shelters and stations are 0-based positions in the
/// instance's shelter and station lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Depot,
    Shelter(usize),
    Station(usize),
}

impl Node {
    pub fn is_shelter(self) -> bool {
        matches!(self, Node::Shelter(_))
    }

    pub fn is_station(self) -> bool {
        matches!(self, Node::Station(_))
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Depot => write!(f, "D"),
            Node::Shelter(i) => write!(f, "S{}", i + 1),
            Node::Station(j) => write!(f, "C{}", j + 1),
        }
    }
}

impl std::str::FromStr for Node {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("bad node label `{s}`");
        match s.chars().next() {
            Some('D') if s == "D" => Ok(Node::Depot),
            Some('S') => s[1..].parse::<usize>().ok().filter(|&n| n > 0).map(|n| Node::Shelter(n - 1)).ok_or_else(bad),
            Some('C') => s[1..].parse::<usize>().ok().filter(|&n| n > 0).map(|n| Node::Station(n - 1)).ok_or_else(bad),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Node {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Node {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub shelter_ids: Vec<u32>,
    pub station_ids: Vec<u32>,
    /// `[type][a][b]` over global node indices (depot, shelters, stations).
    pub travel_slots: Vec<Vec<Vec<u32>>>,
    /// `[type][a][b]` in kWh.
    pub travel_energy: Vec<Vec<Vec<f64>>>,
    pub energy_derived: bool,
    pub shelter_service: Vec<u32>,
    pub station_service: Vec<u32>,
}

impl Network {
    pub fn n_shelters(&self) -> usize {
        self.shelter_ids.len()
    }

    pub fn n_stations(&self) -> usize {
        self.station_ids.len()
    }

    pub fn n_nodes(&self) -> usize {
        1 + self.n_shelters() + self.n_stations()
    }

    pub fn index(&self, n: Node) -> usize {
        match n {
            Node::Depot => 0,
            Node::Shelter(i) => 1 + i,
            Node::Station(j) => 1 + self.n_shelters() + j,
        }
    }

    pub fn node(&self, idx: usize) -> Node {
        let ns = self.n_shelters();
        if idx == 0 {
            Node::Depot
        } else if idx <= ns {
            Node::Shelter(idx - 1)
        } else {
            Node::Station(idx - 1 - ns)
        }
    }

    pub fn travel(&self, k: usize, a: Node, b: Node) -> usize {
        self.travel_slots[k][self.index(a)][self.index(b)] as usize
    }

    pub fn energy(&self, k: usize, a: Node, b: Node) -> f64 {
        self.travel_energy[k][self.index(a)][self.index(b)]
    }

    /// Service slots at a shelter or station; zero for the depot.
    pub fn service(&self, n: Node) -> usize {
        match n {
            Node::Depot => 0,
            Node::Shelter(i) => self.shelter_service[i] as usize,
            Node::Station(j) => self.station_service[j] as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub slot_minutes: f64,
    pub first_slot: u32,
    pub last_slot: u32,
}

impl Horizon {
    pub fn slot_count(&self) -> usize {
        (self.last_slot - self.first_slot + 1) as usize
    }

    pub fn slot_hours(&self) -> f64 {
        self.slot_minutes / 60.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    /// `[shelter][slot]`, kWh deliverable within the slot.
    pub demand: Vec<Vec<f64>>,
    pub penalty: Vec<f64>,
    pub shift_fee: Option<Vec<Vec<f64>>>,
}

impl DemandProfile {
    pub fn total(&self, i: usize) -> f64 {
        self.demand[i].iter().sum()
    }

    pub fn grand_total(&self) -> f64 {
        self.demand.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityMatrix {
    /// `[type][shelter]`.
    pub im: Vec<Vec<bool>>,
}

impl CompatibilityMatrix {
    pub fn ok(&self, k: usize, i: usize) -> bool {
        self.im[k][i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub name: String,
    pub types: Vec<EsbType>,
    pub network: Network,
    pub horizon: Horizon,
    pub demands: DemandProfile,
    pub compat: CompatibilityMatrix,
    pub energy_cost: f64,
    pub big_m1: f64,
    pub big_m2: f64,
}

impl Instance {
    pub fn n_types(&self) -> usize {
        self.types.len()
    }

    pub fn n_shelters(&self) -> usize {
        self.network.n_shelters()
    }

    pub fn n_stations(&self) -> usize {
        self.network.n_stations()
    }

    pub fn slots(&self) -> usize {
        self.horizon.slot_count()
    }

    /// Last slot index T_2 in internal numbering.
    pub fn t_last(&self) -> usize {
        self.slots() - 1
    }

    /// I^k.
    pub fn shelters_of(&self, k: usize) -> Vec<usize> {
        (0..self.n_shelters()).filter(|&i| self.compat.ok(k, i)).collect()
    }

    /// K^i.
    pub fn types_of(&self, i: usize) -> Vec<usize> {
        (0..self.n_types()).filter(|&k| self.compat.ok(k, i)).collect()
    }

    pub fn shift_mode_available(&self) -> bool {
        self.demands.shift_fee.is_some()
    }

    pub fn type_index(&self, id: u32) -> Option<usize> {
        self.types.iter().position(|t| t.id == id)
    }

    /// Longest depot-to-shelter travel over all types.
    pub fn max_depot_travel(&self) -> usize {
        let mut m = 0;
        for k in 0..self.n_types() {
            for i in 0..self.n_shelters() {
                m = m.max(self.network.travel(k, Node::Depot, Node::Shelter(i)));
            }
        }
        m
    }

    pub fn derive_energy(&mut self) {
        let h = self.horizon.slot_hours();
        self.network.travel_energy = self
            .network
            .travel_slots
            .iter()
            .zip(&self.types)
            .map(|(tab, ty)| tab.iter().map(|row| row.iter().map(|&s| ty.consumption_rate * s as f64 * h).collect()).collect())
            .collect();
        self.network.energy_derived = true;
    }

    pub fn validate(&self) -> Result<(), InstanceError> {
        let hz = &self.horizon;
        if !(hz.slot_minutes > 0.0) {
            return Err(invalid("horizon.slot_minutes", "must be positive"));
        }
        if hz.first_slot >= hz.last_slot {
            return Err(invalid("horizon", "first_slot must be below last_slot"));
        }
        if self.types.is_empty() {
            return Err(invalid("esb_types", "at least one type is required"));
        }
        for (k, t) in self.types.iter().enumerate() {
            let p = |f: &str| format!("esb_types[{k}].{f}");
            if !(t.cap_min >= 0.0 && t.cap_min < t.cap_max) {
                return Err(invalid(p("cap_min"), "need 0 <= cap_min < cap_max"));
            }
            if !(t.discharge_min > 0.0) {
                return Err(invalid(p("discharge_min"), "must be positive"));
            }
            if !(t.invest_cost > 0.0) {
                return Err(invalid(p("invest_cost"), "must be positive"));
            }
            if !(t.consumption_rate > 0.0) {
                return Err(invalid(p("consumption_rate"), "must be positive"));
            }
        }
        let net = &self.network;
        let (ni, nj, nn) = (net.n_shelters(), net.n_stations(), net.n_nodes());
        if ni == 0 {
            return Err(invalid("network.shelters", "at least one shelter is required"));
        }
        if net.travel_slots.len() != self.n_types() || net.travel_energy.len() != self.n_types() {
            return Err(invalid("network.travel_slots", "one table per type expected"));
        }
        for k in 0..self.n_types() {
            let tab = &net.travel_slots[k];
            let en = &net.travel_energy[k];
            if tab.len() != nn || tab.iter().any(|r| r.len() != nn) || en.len() != nn || en.iter().any(|r| r.len() != nn) {
                return Err(invalid(format!("network.travel_slots[{k}]"), format!("expected a {nn}x{nn} table")));
            }
            for a in 0..nn {
                if tab[a][a] != 0 {
                    return Err(invalid(format!("network.travel_slots[{k}][{a}][{a}]"), "diagonal must be 0"));
                }
                for b in 0..nn {
                    if !(en[a][b] >= 0.0) || !en[a][b].is_finite() {
                        return Err(invalid(format!("network.travel_energy[{k}][{a}][{b}]"), "must be finite and >= 0"));
                    }
                    let (na, nb) = (net.node(a), net.node(b));
                    let arc = matches!(
                        (na, nb),
                        (Node::Depot, Node::Shelter(_))
                            | (Node::Shelter(_), Node::Depot)
                            | (Node::Shelter(_), Node::Shelter(_))
                            | (Node::Shelter(_), Node::Station(_))
                            | (Node::Station(_), Node::Shelter(_))
                    );
                    if arc && a != b && tab[a][b] == 0 {
                        return Err(invalid(format!("network.travel_slots[{k}][{a}][{b}]"), "travel between distinct nodes must take at least one slot"));
                    }
                }
            }
        }
        if net.shelter_service.len() != ni || net.station_service.len() != nj {
            return Err(invalid("network.service_slots", "length mismatch"));
        }
        if let Some(p) = net.shelter_service.iter().position(|&s| s == 0) {
            return Err(invalid(format!("network.service_slots.shelters[{p}]"), "must be >= 1"));
        }
        if let Some(p) = net.station_service.iter().position(|&s| s == 0) {
            return Err(invalid(format!("network.service_slots.stations[{p}]"), "must be >= 1"));
        }
        let n = self.slots();
        let d = &self.demands;
        if d.demand.len() != ni || d.demand.iter().any(|r| r.len() != n) {
            return Err(invalid("demand.matrix", format!("expected {ni}x{n}")));
        }
        for (i, row) in d.demand.iter().enumerate() {
            if let Some(t) = row.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(invalid(format!("demand.matrix[{i}][{t}]"), "must be finite and >= 0"));
            }
        }
        let lead = self.max_depot_travel().min(n);
        for (i, row) in d.demand.iter().enumerate() {
            if row[..lead].iter().any(|&v| v > 0.0) {
                log::warn!("shelter {} has demand within the first {lead} slots, which no bus can reach", i + 1);
            }
        }
        if d.penalty.len() != ni {
            return Err(invalid("costs.penalty", format!("expected {ni} entries")));
        }
        if let Some(p) = d.penalty.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(invalid(format!("costs.penalty[{p}]"), "must be finite and >= 0"));
        }
        if let Some(f) = &d.shift_fee {
            if f.len() != ni || f.iter().any(|r| r.len() != n) {
                return Err(invalid("costs.shift_fee", format!("expected {ni}x{n}")));
            }
            if f.iter().flatten().any(|v| !(*v >= 0.0)) {
                return Err(invalid("costs.shift_fee", "must be >= 0"));
            }
        }
        if self.compat.im.len() != self.n_types() || self.compat.im.iter().any(|r| r.len() != ni) {
            return Err(invalid("compat", format!("expected {}x{ni}", self.n_types())));
        }
        for i in 0..ni {
            if self.types_of(i).is_empty() {
                return Err(InstanceError::Uncoverable(net.shelter_ids[i]));
            }
        }
        if !(self.energy_cost >= 0.0) {
            return Err(invalid("costs.energy_cost", "must be >= 0"));
        }
        let cmax = self.types.iter().map(|t| t.cap_max).fold(0.0, f64::max);
        if !(self.big_m1 > cmax) {
            return Err(invalid("big_m.m1", "must exceed the largest cap_max"));
        }
        if !(self.big_m2 > d.grand_total()) {
            return Err(invalid("big_m.m2", "must exceed total demand"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Instance, InstanceError> {
        let file: InstanceFile = serde_json::from_str(text).map_err(|e| InstanceError::Parse(e.to_string()))?;
        let inst = file.into_instance()?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&InstanceFile::from_instance(self)).expect("instance serializes")
    }

    /// The bundled ten-shelter, three-station case study.
    pub fn case_study() -> Instance {
        Instance::from_json(CASE_JSON).expect("bundled case file is valid")
    }
}

pub const CASE_JSON: &str = include_str!("../data/case.json");

pub fn load_instance(path: impl AsRef<Path>) -> Result<Instance, InstanceError> {
    let text = std::fs::read_to_string(path)?;
    Instance::from_json(&text)
}

pub fn save_instance(inst: &Instance, path: impl AsRef<Path>) -> Result<(), InstanceError> {
    std::fs::write(path, inst.to_json())?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Normal,
    Moderate,
    Adverse,
}

impl std::str::FromStr for Severity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(Severity::Normal),
            "moderate" => Ok(Severity::Moderate),
            "adverse" => Ok(Severity::Adverse),
            _ => Err(format!("unknown severity `{s}`")),
        }
    }
}

pub fn apply_severity(inst: &Instance, level: Severity) -> Instance {
    let mut out = inst.clone();
    let (slot_fn, rate): (fn(u32) -> u32, f64) = match level {
        Severity::Normal => return out,
        Severity::Moderate => (|s| if s > 0 { s + 1 } else { 0 }, 1.2),
        Severity::Adverse => (|s| s * 2, 1.5),
    };
    for tab in &mut out.network.travel_slots {
        for row in tab.iter_mut() {
            for s in row.iter_mut() {
                *s = slot_fn(*s);
            }
        }
    }
    for t in &mut out.types {
        t.consumption_rate *= rate;
    }
    out.derive_energy();
    out
}

/// Compatibility incidence for sparsity levels 1 to 4 (types 1-3 by shelters 1-10).
pub const SPARSITY: [[[u8; 10]; 3]; 4] = [
    [[1; 10], [1; 10], [1; 10]],
    [[1, 1, 0, 1, 0, 1, 1, 1, 0, 1], [1, 1, 1, 1, 1, 0, 1, 1, 1, 0], [1, 0, 1, 0, 1, 1, 1, 0, 1, 1]],
    [[1, 1, 0, 1, 0, 1, 1, 0, 0, 1], [0, 1, 0, 1, 1, 0, 0, 1, 0, 0], [1, 0, 1, 0, 0, 1, 1, 0, 1, 1]],
    [[1, 0, 0, 1, 0, 0, 1, 0, 0, 1], [0, 1, 0, 0, 1, 0, 0, 1, 0, 0], [0, 0, 1, 0, 0, 1, 0, 0, 1, 0]],
];

pub fn sparsity_matrix(level: u8, types: usize, shelters: usize) -> Result<CompatibilityMatrix, InstanceError> {
    if !(1..=4).contains(&level) {
        return Err(InstanceError::Shape(format!("sparsity level {level} outside 1..=4")));
    }
    if types != 3 || shelters > 10 {
        return Err(InstanceError::Shape(format!("built-in sparsity matrices cover 3 types and at most 10 shelters, got {types}x{shelters}")));
    }
    let m = &SPARSITY[level as usize - 1];
    Ok(CompatibilityMatrix { im: m.iter().map(|row| row[..shelters].iter().map(|&v| v == 1).collect()).collect() })
}

pub fn apply_sparsity(inst: &Instance, level: u8) -> Result<Instance, InstanceError> {
    let mut out = inst.clone();
    out.compat = sparsity_matrix(level, inst.n_types(), inst.n_shelters())?;
    for i in 0..out.n_shelters() {
        if out.types_of(i).is_empty() {
            return Err(InstanceError::Uncoverable(out.network.shelter_ids[i]));
        }
    }
    Ok(out)
}

pub fn apply_compat(inst: &Instance, im: Vec<Vec<bool>>) -> Result<Instance, InstanceError> {
    let mut out = inst.clone();
    out.compat = CompatibilityMatrix { im };
    out.validate()?;
    Ok(out)
}

/// Multiplies every demand entry by `factor` and keeps M_2 at twice the new total.
pub fn scale_demand(inst: &Instance, factor: f64) -> Instance {
    let mut out = inst.clone();
    for v in out.demands.demand.iter_mut().flatten() {
        *v *= factor;
    }
    out.big_m2 = default_m2(out.demands.grand_total());
    out
}

pub fn cap_availability(inst: &Instance, caps: &[u32]) -> Instance {
    let mut out = inst.clone();
    for (t, &c) in out.types.iter_mut().zip(caps) {
        t.available_count = c;
    }
    out
}

pub fn override_service(inst: &Instance, shelters: Option<u32>, stations: Option<u32>) -> Instance {
    let mut out = inst.clone();
    if let Some(s) = shelters {
        out.network.shelter_service.iter_mut().for_each(|v| *v = s);
    }
    if let Some(s) = stations {
        out.network.station_service.iter_mut().for_each(|v| *v = s);
    }
    out
}

pub fn with_shift_fee(inst: &Instance, fee: f64) -> Instance {
    let mut out = inst.clone();
    out.demands.shift_fee = Some(vec![vec![fee; inst.slots()]; inst.n_shelters()]);
    out
}

pub fn default_m2(total_demand: f64) -> f64 {
    if total_demand > 0.0 {
        2.0 * total_demand
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandShape {
    /// Values drawn from the 100-250 kWh band, rescaled so the band mean equals `mean`.
    MegaShelter,
    /// `mean` ± 20 %.
    Uniform,
    Flat,
}

/// Deterministic demand rows for `shelters` shelters over `slots` slots. The
/// first `zero_prefix` slots are zero.
pub fn generate_demand(seed: u64, shelters: usize, slots: usize, mean: f64, shape: DemandShape, zero_prefix: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..shelters)
        .map(|_| {
            (0..slots)
                .map(|t| {
                    let v = match shape {
                        DemandShape::MegaShelter => rng.gen_range(100.0..=250.0) * mean / 175.0,
                        DemandShape::Uniform => mean * rng.gen_range(0.8..=1.2),
                        DemandShape::Flat => mean,
                    };
                    if t < zero_prefix {
                        0.0
                    } else {
                        (v * 1000.0).round() / 1000.0
                    }
                })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    #[serde(default)]
    name: String,
    horizon: Horizon,
    esb_types: Vec<EsbType>,
    network: NetworkFile,
    demand: DemandFile,
    compat: CompatFile,
    costs: CostsFile,
    #[serde(default)]
    big_m: BigMFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    shelters: Vec<u32>,
    stations: Vec<u32>,
    travel_slots: TravelSlots,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    travel_energy: Option<Vec<Vec<Vec<f64>>>>,
    service_slots: ServiceFile,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TravelSlots {
    Shared(Vec<Vec<u32>>),
    ByType(Vec<Vec<Vec<u32>>>),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServiceFile {
    shelters: Vec<u32>,
    stations: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemandFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<GeneratorFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorFile {
    seed: u64,
    mean: f64,
    shape: DemandShape,
    #[serde(default)]
    zero_prefix: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CompatFile {
    Matrix(Vec<Vec<u8>>),
    Level { sparsity_level: u8 },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostsFile {
    energy_cost: f64,
    penalty: Scalar1D,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shift_fee: Option<Scalar2D>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Scalar1D {
    One(f64),
    Each(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Scalar2D {
    One(f64),
    Each(Vec<Vec<f64>>),
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct BigMFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    m1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    m2: Option<f64>,
}

impl InstanceFile {
    fn into_instance(self) -> Result<Instance, InstanceError> {
        let nt = self.esb_types.len();
        let ni = self.network.shelters.len();
        let nj = self.network.stations.len();
        let slots = if self.horizon.last_slot > self.horizon.first_slot {
            (self.horizon.last_slot - self.horizon.first_slot + 1) as usize
        } else {
            return Err(invalid("horizon", "first_slot must be below last_slot"));
        };
        let travel_slots = match self.network.travel_slots {
            TravelSlots::Shared(t) => vec![t; nt],
            TravelSlots::ByType(t) => t,
        };
        let mut network = Network {
            shelter_ids: self.network.shelters,
            station_ids: self.network.stations,
            travel_slots,
            travel_energy: vec![],
            energy_derived: true,
            shelter_service: self.network.service_slots.shelters,
            station_service: self.network.service_slots.stations,
        };
        let explicit_energy = self.network.travel_energy;
        let compat = match self.compat {
            CompatFile::Matrix(m) => CompatibilityMatrix { im: m.iter().map(|r| r.iter().map(|&v| v != 0).collect()).collect() },
            CompatFile::Level { sparsity_level } => sparsity_matrix(sparsity_level, nt, ni)?,
        };
        let penalty = match self.costs.penalty {
            Scalar1D::One(v) => vec![v; ni],
            Scalar1D::Each(v) => v,
        };
        let shift_fee = self.costs.shift_fee.map(|s| match s {
            Scalar2D::One(v) => vec![vec![v; slots]; ni],
            Scalar2D::Each(v) => v,
        });
        network.travel_energy = vec![vec![vec![0.0; network.n_nodes()]; network.n_nodes()]; nt];
        let mut inst = Instance {
            name: self.name,
            types: self.esb_types,
            network,
            horizon: self.horizon,
            demands: DemandProfile { demand: vec![], penalty, shift_fee },
            compat,
            energy_cost: self.costs.energy_cost,
            big_m1: self.big_m.m1.unwrap_or(1000.0),
            big_m2: 0.0,
        };
        let shapes_ok = inst.network.travel_slots.len() == nt
            && inst.network.travel_slots.iter().all(|t| t.len() == inst.network.n_nodes() && t.iter().all(|r| r.len() == inst.network.n_nodes()));
        if !shapes_ok {
            let n = inst.network.n_nodes();
            return Err(invalid("network.travel_slots", format!("expected {n}x{n} tables ({nj} stations, {ni} shelters)")));
        }
        match explicit_energy {
            Some(e) => {
                inst.network.travel_energy = e;
                inst.network.energy_derived = false;
            }
            None => inst.derive_energy(),
        }
        inst.demands.demand = match (self.demand.matrix, self.demand.generator) {
            (Some(m), None) => m,
            (None, Some(g)) => {
                let lead = g.zero_prefix.unwrap_or_else(|| inst.max_depot_travel());
                generate_demand(g.seed, ni, slots, g.mean, g.shape, lead)
            }
            _ => return Err(invalid("demand", "exactly one of `matrix` or `generator` is required")),
        };
        inst.big_m2 = self.big_m.m2.unwrap_or_else(|| default_m2(inst.demands.grand_total()));
        Ok(inst)
    }

    fn from_instance(inst: &Instance) -> InstanceFile {
        let net = &inst.network;
        let shared = net.travel_slots.iter().all(|t| *t == net.travel_slots[0]);
        InstanceFile {
            name: inst.name.clone(),
            horizon: inst.horizon,
            esb_types: inst.types.clone(),
            network: NetworkFile {
                shelters: net.shelter_ids.clone(),
                stations: net.station_ids.clone(),
                travel_slots: if shared { TravelSlots::Shared(net.travel_slots[0].clone()) } else { TravelSlots::ByType(net.travel_slots.clone()) },
                travel_energy: if net.energy_derived { None } else { Some(net.travel_energy.clone()) },
                service_slots: ServiceFile { shelters: net.shelter_service.clone(), stations: net.station_service.clone() },
            },
            demand: DemandFile { matrix: Some(inst.demands.demand.clone()), generator: None },
            compat: CompatFile::Matrix(inst.compat.im.iter().map(|r| r.iter().map(|&b| b as u8).collect()).collect()),
            costs: CostsFile {
                energy_cost: inst.energy_cost,
                penalty: Scalar1D::Each(inst.demands.penalty.clone()),
                shift_fee: inst.demands.shift_fee.clone().map(Scalar2D::Each),
            },
            big_m: BigMFile { m1: Some(inst.big_m1), m2: Some(inst.big_m2) },
        }
    }
}

/// Parameters for small synthetic instances cut from the case network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeskSpec {
    pub shelters: usize,
    pub stations: usize,
    pub slots: usize,
    /// Buses available per type (types 1-3 of the case fleet).
    pub buses: [u32; 3],
    pub seed: u64,
    /// Mean demand per demand-bearing slot and shelter.
    pub mean_demand: f64,
    /// Number of demand-bearing slots after the zero prefix; `None` means all.
    pub demand_slots: Option<usize>,
    pub penalty: f64,
    pub shape: DemandShape,
}

impl Default for DeskSpec {
    fn default() -> Self {
        DeskSpec {
            shelters: 1,
            stations: 1,
            slots: 8,
            buses: [1, 1, 1],
            seed: 1,
            mean_demand: 20.0,
            demand_slots: None,
            penalty: 10_000.0,
            shape: DemandShape::Uniform,
        }
    }
}

/// Builds an S-C-T instance from the first `shelters` shelters and `stations`
/// stations of the case network.
pub fn desk_instance(spec: &DeskSpec) -> Instance {
    let case = Instance::case_study();
    let mut keep: Vec<usize> = vec![0];
    keep.extend((0..spec.shelters).map(|i| case.network.index(Node::Shelter(i))));
    keep.extend((0..spec.stations).map(|j| case.network.index(Node::Station(j))));
    let cut = |tab: &Vec<Vec<u32>>| -> Vec<Vec<u32>> { keep.iter().map(|&a| keep.iter().map(|&b| tab[a][b]).collect()).collect() };
    let travel: Vec<Vec<Vec<u32>>> = case.network.travel_slots.iter().map(cut).collect();
    let types: Vec<EsbType> = case.types.iter().zip(spec.buses).map(|(t, h)| EsbType { available_count: h, ..t.clone() }).collect();
    let mut inst = Instance {
        name: format!("{}-{}-{}", spec.shelters, spec.stations, spec.slots),
        types,
        network: Network {
            shelter_ids: (1..=spec.shelters as u32).collect(),
            station_ids: (1..=spec.stations as u32).collect(),
            travel_slots: travel,
            travel_energy: vec![],
            energy_derived: true,
            shelter_service: case.network.shelter_service[..spec.shelters].to_vec(),
            station_service: case.network.station_service[..spec.stations].to_vec(),
        },
        horizon: Horizon { slot_minutes: case.horizon.slot_minutes, first_slot: 0, last_slot: spec.slots as u32 - 1 },
        demands: DemandProfile { demand: vec![], penalty: vec![spec.penalty; spec.shelters], shift_fee: None },
        compat: CompatibilityMatrix { im: vec![vec![true; spec.shelters]; 3] },
        energy_cost: case.energy_cost,
        big_m1: case.big_m1,
        big_m2: 0.0,
    };
    inst.derive_energy();
    let lead = inst.max_depot_travel().min(spec.slots);
    let mut demand = generate_demand(spec.seed, spec.shelters, spec.slots, spec.mean_demand, spec.shape, lead);
    if let Some(n) = spec.demand_slots {
        for row in &mut demand {
            for v in row.iter_mut().skip(lead + n) {
                *v = 0.0;
            }
        }
    }
    inst.demands.demand = demand;
    inst.big_m2 = default_m2(inst.demands.grand_total());
    inst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_labels_round_trip() {
        for n in [Node::Depot, Node::Shelter(0), Node::Shelter(9), Node::Station(2)] {
            assert_eq!(n.to_string().parse::<Node>().unwrap(), n);
        }
        assert!("S0".parse::<Node>().is_err());
        assert!("X1".parse::<Node>().is_err());
    }

    #[test]
    fn generator_is_deterministic_and_zero_prefixed() {
        let a = generate_demand(7, 1, 16, 150.0, DemandShape::MegaShelter, 3);
        let b = generate_demand(7, 1, 16, 150.0, DemandShape::MegaShelter, 3);
        assert_eq!(a, b);
        assert!(a[0][..3].iter().all(|&v| v == 0.0));
        let lo = 100.0 * 150.0 / 175.0;
        let hi = 250.0 * 150.0 / 175.0;
        assert!(a[0][3..].iter().all(|&v| v >= lo - 1e-3 && v <= hi + 1e-3));
        let z = generate_demand(7, 2, 16, 0.0, DemandShape::MegaShelter, 3);
        assert!(z.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn sparsity_level_four_columns() {
        let m = sparsity_matrix(4, 3, 10).unwrap();
        assert_eq!((0..3).filter(|&k| m.ok(k, 1)).collect::<Vec<_>>(), vec![1]);
        let m4 = sparsity_matrix(4, 3, 4).unwrap();
        assert_eq!((0..3).filter(|&k| m4.ok(k, 2)).collect::<Vec<_>>(), vec![2]);
        assert!(sparsity_matrix(1, 3, 10).unwrap().im.iter().flatten().all(|&b| b));
        assert!(sparsity_matrix(2, 2, 10).is_err());
    }

    #[test]
    fn sparsity_levels_are_nested() {
        for l in 1..4 {
            for k in 0..3 {
                for i in 0..10 {
                    assert!(SPARSITY[l][k][i] <= SPARSITY[l - 1][k][i]);
                }
            }
        }
    }
}
