//! Three-phase network data model, admittance and incidence assembly.
//!
//! All quantities are per-unit on the network's `(s_base, v_base)`. Node-phases
//! are ordered bus-major, phases `a, b, c` within a bus; every matrix in this
//! crate indexed by node-phase uses that order.

use std::collections::{HashMap, HashSet, VecDeque};
use std::f64::consts::PI;
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Nominal angle of the phase in radians: 0, −120°, +120°.
    pub fn nominal_angle(self) -> f64 {
        match self {
            Phase::A => 0.0,
            Phase::B => -2.0 * PI / 3.0,
            Phase::C => 2.0 * PI / 3.0,
        }
    }

    /// Unit phasor at the nominal angle.
    pub fn rotation(self) -> Complex64 {
        Complex64::from_polar(1.0, self.nominal_angle())
    }

    pub fn letter(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Non-empty subset of `{a, b, c}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const ABC: PhaseSet = PhaseSet(0b111);

    pub fn from_phases(phases: &[Phase]) -> Option<Self> {
        let bits = phases.iter().fold(0u8, |b, p| b | (1 << p.index()));
        (bits != 0).then_some(PhaseSet(bits))
    }

    pub fn single(p: Phase) -> Self {
        PhaseSet(1 << p.index())
    }

    pub fn contains(self, p: Phase) -> bool {
        self.0 & (1 << p.index()) != 0
    }

    pub fn is_subset_of(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    /// Position of `p` within this set, if present.
    pub fn position(self, p: Phase) -> Option<usize> {
        self.iter().position(|q| q == p)
    }
}

impl std::str::FromStr for PhaseSet {
    type Err = NetworkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut phases = Vec::new();
        for ch in s.chars() {
            let p = match ch.to_ascii_lowercase() {
                'a' => Phase::A,
                'b' => Phase::B,
                'c' => Phase::C,
                _ => return Err(NetworkError::BadPhases(s.to_string())),
            };
            if phases.contains(&p) {
                return Err(NetworkError::BadPhases(s.to_string()));
            }
            phases.push(p);
        }
        PhaseSet::from_phases(&phases).ok_or_else(|| NetworkError::BadPhases(s.to_string()))
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Slack,
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: String,
    pub phases: PhaseSet,
    pub kind: BusKind,
    /// Per-phase nominal voltage indexed by [`Phase::index`].
    pub v_nominal: [Complex64; 3],
}

impl Bus {
    pub fn new(id: impl Into<String>, phases: PhaseSet, kind: BusKind) -> Self {
        Self {
            id: id.into(),
            phases,
            kind,
            v_nominal: Phase::ALL.map(Phase::rotation),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub id: String,
    pub from: String,
    pub to: String,
    pub phases: PhaseSet,
    /// Series impedance, `phases.len()` square, rows/columns in phase order.
    pub z: DMatrix<Complex64>,
    /// Ampacity per branch phase.
    pub i_max: Vec<f64>,
}

impl Branch {
    /// Branch with identical self impedance on every phase and no coupling.
    pub fn uncoupled(
        id: impl Into<String>,
        from: impl Into<String>,
        to: impl Into<String>,
        phases: PhaseSet,
        z_self: Complex64,
        i_max: f64,
    ) -> Self {
        let n = phases.len();
        Self {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            phases,
            z: DMatrix::from_diagonal_element(n, n, z_self),
            i_max: vec![i_max; n],
        }
    }

    /// Self resistance of a branch phase.
    pub fn resistance(&self, k: usize) -> f64 {
        self.z[(k, k)].re
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("invalid phase set `{0}`")]
    BadPhases(String),
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("network must have exactly one slack bus, found {0}")]
    SlackCount(usize),
    #[error("branch `{branch}` references unknown bus `{bus}`")]
    UnknownBus { branch: String, bus: String },
    #[error("branch `{0}` connects a bus to itself")]
    SelfLoop(String),
    #[error("branch `{branch}` phases {phases} are not present at bus `{bus}`")]
    PhaseMismatch { branch: String, phases: PhaseSet, bus: String },
    #[error("branch `{0}` impedance matrix has wrong shape")]
    ImpedanceShape(String),
    #[error("branch `{0}` impedance matrix is not symmetric")]
    ImpedanceAsymmetric(String),
    #[error("branch `{0}` has a zero self impedance")]
    ZeroSelfImpedance(String),
    #[error("branch `{0}` impedance matrix is singular")]
    SingularImpedance(String),
    #[error("branch `{0}` has non-positive ampacity")]
    BadAmpacity(String),
    #[error("network is disconnected: bus `{0}` is unreachable from the slack")]
    Disconnected(String),
    #[error("invalid base quantity {0}")]
    BadBase(f64),
}

/// One (bus, phase) coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodePhase {
    pub bus: usize,
    pub phase: Phase,
}

/// Validated, immutable three-phase network.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreePhaseNetwork {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    s_base: f64,
    v_base: f64,
    slack: usize,
    node_phases: Vec<NodePhase>,
    bus_index: HashMap<String, usize>,
}

impl ThreePhaseNetwork {
    pub fn new(
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        s_base: f64,
        v_base: f64,
    ) -> Result<Self, NetworkError> {
        for base in [s_base, v_base] {
            if !(base.is_finite() && base > 0.0) {
                return Err(NetworkError::BadBase(base));
            }
        }
        let mut bus_index = HashMap::new();
        for (k, b) in buses.iter().enumerate() {
            if bus_index.insert(b.id.clone(), k).is_some() {
                return Err(NetworkError::DuplicateId {
                    kind: "bus",
                    id: b.id.clone(),
                });
            }
        }
        let slacks: Vec<usize> = (0..buses.len())
            .filter(|&k| buses[k].kind == BusKind::Slack)
            .collect();
        if slacks.len() != 1 {
            return Err(NetworkError::SlackCount(slacks.len()));
        }
        let mut branch_ids = HashSet::new();
        for br in &branches {
            if !branch_ids.insert(br.id.as_str()) {
                return Err(NetworkError::DuplicateId {
                    kind: "branch",
                    id: br.id.clone(),
                });
            }
            for end in [&br.from, &br.to] {
                let Some(&k) = bus_index.get(end) else {
                    return Err(NetworkError::UnknownBus {
                        branch: br.id.clone(),
                        bus: end.clone(),
                    });
                };
                if !br.phases.is_subset_of(buses[k].phases) {
                    return Err(NetworkError::PhaseMismatch {
                        branch: br.id.clone(),
                        phases: br.phases,
                        bus: end.clone(),
                    });
                }
            }
            if br.from == br.to {
                return Err(NetworkError::SelfLoop(br.id.clone()));
            }
            let n = br.phases.len();
            if br.z.nrows() != n || br.z.ncols() != n || br.i_max.len() != n {
                return Err(NetworkError::ImpedanceShape(br.id.clone()));
            }
            for i in 0..n {
                if br.z[(i, i)] == Complex64::new(0.0, 0.0) {
                    return Err(NetworkError::ZeroSelfImpedance(br.id.clone()));
                }
                for j in 0..n {
                    if (br.z[(i, j)] - br.z[(j, i)]).norm() > 1e-12 * (1.0 + br.z[(i, j)].norm()) {
                        return Err(NetworkError::ImpedanceAsymmetric(br.id.clone()));
                    }
                }
            }
            if br.i_max.iter().any(|&i| !(i > 0.0)) {
                return Err(NetworkError::BadAmpacity(br.id.clone()));
            }
        }

        // Connectivity from the slack.
        let mut adj = vec![Vec::new(); buses.len()];
        for br in &branches {
            let (f, t) = (bus_index[&br.from], bus_index[&br.to]);
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; buses.len()];
        let mut queue = VecDeque::from([slacks[0]]);
        seen[slacks[0]] = true;
        while let Some(k) = queue.pop_front() {
            for &m in &adj[k] {
                if !seen[m] {
                    seen[m] = true;
                    queue.push_back(m);
                }
            }
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(NetworkError::Disconnected(buses[k].id.clone()));
        }

        let node_phases = buses
            .iter()
            .enumerate()
            .flat_map(|(k, b)| b.phases.iter().map(move |phase| NodePhase { bus: k, phase }))
            .collect();
        Ok(Self {
            buses,
            branches,
            s_base,
            v_base,
            slack: slacks[0],
            node_phases,
            bus_index,
        })
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn s_base(&self) -> f64 {
        self.s_base
    }

    pub fn v_base(&self) -> f64 {
        self.v_base
    }

    /// Impedance base in ohms.
    pub fn z_base(&self) -> f64 {
        self.v_base * self.v_base / self.s_base
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.bus_index.get(id).copied()
    }

    pub fn node_phases(&self) -> &[NodePhase] {
        &self.node_phases
    }

    pub fn num_node_phases(&self) -> usize {
        self.node_phases.len()
    }

    pub fn node_phase_index(&self, bus: usize, phase: Phase) -> Option<usize> {
        self.node_phases
            .iter()
            .position(|np| np.bus == bus && np.phase == phase)
    }

    pub fn is_slack(&self, np: NodePhase) -> bool {
        np.bus == self.slack
    }

    /// Nominal voltage of every node-phase in the network frame.
    pub fn nominal_voltages(&self) -> Vec<Complex64> {
        self.node_phases
            .iter()
            .map(|np| self.buses[np.bus].v_nominal[np.phase.index()])
            .collect()
    }

    /// Per-node-phase rotations taking phase-aligned quantities to the
    /// network frame: `V_network = rotation · V_aligned`.
    pub fn phase_rotations(&self) -> Vec<Complex64> {
        self.node_phases.iter().map(|np| np.phase.rotation()).collect()
    }

    /// Expresses network-frame phasors in the phase-aligned frame.
    pub fn align(&self, x: &[Complex64]) -> Vec<Complex64> {
        x.iter()
            .zip(&self.node_phases)
            .map(|(x, np)| x / np.phase.rotation())
            .collect()
    }

    /// Inverse of [`align`](Self::align).
    pub fn unalign(&self, x: &[Complex64]) -> Vec<Complex64> {
        x.iter()
            .zip(&self.node_phases)
            .map(|(x, np)| x * np.phase.rotation())
            .collect()
    }

    /// Node-phase indices of a branch's from and to ends, per branch phase.
    pub fn branch_terminals(&self, k: usize) -> Vec<(usize, usize)> {
        let br = &self.branches[k];
        let (f, t) = (self.bus_index[&br.from], self.bus_index[&br.to]);
        br.phases
            .iter()
            .map(|p| {
                (
                    self.node_phase_index(f, p).expect("validated"),
                    self.node_phase_index(t, p).expect("validated"),
                )
            })
            .collect()
    }

    /// Primitive series admittance `z⁻¹` of a branch.
    pub fn branch_admittance(&self, k: usize) -> Result<DMatrix<Complex64>, NetworkError> {
        let br = &self.branches[k];
        br.z
            .clone()
            .try_inverse()
            .filter(|y| y.iter().all(|v| v.re.is_finite() && v.im.is_finite()))
            .ok_or_else(|| NetworkError::SingularImpedance(br.id.clone()))
    }
}

/// Bus admittance matrix indexed by node-phase.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub y: DMatrix<Complex64>,
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.y.nrows()
    }

    /// `I = Y V`.
    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.y[(i, j)] * v[j]).sum())
            .collect()
    }

    /// `Yᵀ λ`.
    pub fn apply_transpose(&self, lambda: &[Complex64]) -> Vec<Complex64> {
        (0..self.dim())
            .map(|j| (0..self.dim()).map(|i| self.y[(i, j)] * lambda[i]).sum())
            .collect()
    }

    /// Same operator expressed in per-phase aligned coordinates, where every
    /// phase's nominal angle is rotated to zero: `T⁻¹ Y T` with
    /// `T = diag(rotations)`.
    pub fn rotated(&self, rotations: &[Complex64]) -> AdmittanceMatrix {
        let n = self.dim();
        let y = DMatrix::from_fn(n, n, |i, j| self.y[(i, j)] * rotations[j] / rotations[i]);
        AdmittanceMatrix { y }
    }
}

/// Stamps every branch's primitive admittance into the node-phase matrix.
pub fn build_admittance(net: &ThreePhaseNetwork) -> Result<AdmittanceMatrix, NetworkError> {
    let n = net.num_node_phases();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for k in 0..net.branches().len() {
        let yb = net.branch_admittance(k)?;
        let terms = net.branch_terminals(k);
        for (p, &(fp, tp)) in terms.iter().enumerate() {
            for (q, &(fq, tq)) in terms.iter().enumerate() {
                let v = yb[(p, q)];
                y[(fp, fq)] += v;
                y[(tp, tq)] += v;
                y[(fp, tq)] -= v;
                y[(tp, fq)] -= v;
            }
        }
    }
    Ok(AdmittanceMatrix { y })
}

/// Signed branch-phase × node-phase incidence, `+1` at the from end.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMatrix {
    pub a: DMatrix<f64>,
    /// `(branch index, phase)` for each row.
    pub rows: Vec<(usize, Phase)>,
}

impl IncidenceMatrix {
    /// Nodal injections `Aᵀ I_branch` from branch-phase flows.
    pub fn nodal_from_branch(&self, i_branch: &[Complex64]) -> Vec<Complex64> {
        let (m, n) = self.a.shape();
        (0..n)
            .map(|j| (0..m).map(|r| i_branch[r] * self.a[(r, j)]).sum())
            .collect()
    }
}

pub fn build_incidence(net: &ThreePhaseNetwork) -> IncidenceMatrix {
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    for k in 0..net.branches().len() {
        let phases: Vec<Phase> = net.branches()[k].phases.iter().collect();
        for (p, (f, t)) in net.branch_terminals(k).into_iter().enumerate() {
            rows.push((k, phases[p]));
            entries.push((f, t));
        }
    }
    let mut a = DMatrix::zeros(rows.len(), net.num_node_phases());
    for (r, (f, t)) in entries.into_iter().enumerate() {
        a[(r, f)] = 1.0;
        a[(r, t)] = -1.0;
    }
    IncidenceMatrix { a, rows }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn two_bus_admittance() {
        let net = two_bus(c(0.01, 0.02));
        let y = build_admittance(&net).unwrap().y;
        let expect = [[c(20.0, -40.0), c(-20.0, 40.0)], [c(-20.0, 40.0), c(20.0, -40.0)]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((y[(i, j)] - expect[i][j]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_branches_is_disconnected() {
        let a = PhaseSet::single(Phase::A);
        let err = ThreePhaseNetwork::new(
            vec![Bus::new("0", a, BusKind::Slack), Bus::new("1", a, BusKind::Pq)],
            vec![],
            1e6,
            2400.0,
        )
        .unwrap_err();
        assert_eq!(err, NetworkError::Disconnected("1".into()));
    }

    #[test]
    fn triangle_admittance_by_hand() {
        let z = c(0.02, 0.05);
        let yv = c(1.0, 0.0) / z;
        let net = triangle(z);
        let y = build_admittance(&net).unwrap().y;
        for i in 0..3 {
            let row: Complex64 = (0..3).map(|j| y[(i, j)]).sum();
            assert!(row.norm() < 1e-10);
            for j in 0..3 {
                let want = if i == j { yv * 2.0 } else { -yv };
                assert!((y[(i, j)] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn incidence_two_bus_and_laplacian() {
        let inc = build_incidence(&two_bus(c(0.01, 0.02)));
        assert_eq!(inc.a.as_slice(), &[1.0, -1.0]);

        let tri = build_incidence(&triangle(c(0.01, 0.02)));
        let lap = tri.a.transpose() * &tri.a;
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(lap[(i, j)], if i == j { 2.0 } else { -1.0 });
            }
        }
    }

    #[test]
    fn radial_chain_incidence() {
        let a = PhaseSet::single(Phase::A);
        let net = ThreePhaseNetwork::new(
            vec![
                Bus::new("0", a, BusKind::Slack),
                Bus::new("1", a, BusKind::Pq),
                Bus::new("2", a, BusKind::Pq),
            ],
            vec![
                Branch::uncoupled("l01", "0", "1", a, c(0.01, 0.02), 1.0),
                Branch::uncoupled("l12", "1", "2", a, c(0.01, 0.02), 1.0),
            ],
            1e6,
            2400.0,
        )
        .unwrap();
        let inc = build_incidence(&net);
        assert_eq!(inc.a.shape(), (2, 3));
        for r in 0..2 {
            let row: Vec<f64> = inc.a.row(r).iter().copied().collect();
            assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&v| v == -1.0).count(), 1);
        }
    }

    #[test]
    fn validation_errors() {
        let a = PhaseSet::single(Phase::A);
        let bus0 = Bus::new("0", a, BusKind::Slack);
        let bus1 = Bus::new("1", a, BusKind::Pq);
        let err = ThreePhaseNetwork::new(
            vec![bus0.clone(), bus1.clone()],
            vec![Branch::uncoupled("l", "0", "9", a, c(0.01, 0.02), 1.0)],
            1e6,
            2400.0,
        )
        .unwrap_err();
        assert!(matches!(err, NetworkError::UnknownBus { .. }));

        let err = ThreePhaseNetwork::new(
            vec![bus0.clone(), bus1.clone()],
            vec![Branch::uncoupled("l", "0", "1", PhaseSet::ABC, c(0.01, 0.02), 1.0)],
            1e6,
            2400.0,
        )
        .unwrap_err();
        assert!(matches!(err, NetworkError::PhaseMismatch { .. }));

        let err = ThreePhaseNetwork::new(
            vec![bus0.clone(), Bus::new("1", a, BusKind::Slack)],
            vec![Branch::uncoupled("l", "0", "1", a, c(0.01, 0.02), 1.0)],
            1e6,
            2400.0,
        )
        .unwrap_err();
        assert_eq!(err, NetworkError::SlackCount(2));

        let err = ThreePhaseNetwork::new(
            vec![bus0, bus1],
            vec![Branch::uncoupled("l", "0", "1", a, c(0.01, 0.02), 0.0)],
            1e6,
            2400.0,
        )
        .unwrap_err();
        assert_eq!(err, NetworkError::BadAmpacity("l".into()));

        assert!("abd".parse::<PhaseSet>().is_err());
        assert!("".parse::<PhaseSet>().is_err());
        assert_eq!("ca".parse::<PhaseSet>().unwrap().to_string(), "ac");
    }

    #[test]
    fn singular_coupled_impedance_rejected() {
        let abc = PhaseSet::ABC;
        let mut br = Branch::uncoupled("l", "0", "1", abc, c(0.01, 0.02), 1.0);
        // Rank one: every entry equal.
        br.z = DMatrix::from_element(3, 3, c(0.01, 0.02));
        let net = ThreePhaseNetwork::new(
            vec![Bus::new("0", abc, BusKind::Slack), Bus::new("1", abc, BusKind::Pq)],
            vec![br],
            1e6,
            2400.0,
        )
        .unwrap();
        assert_eq!(
            build_admittance(&net).unwrap_err(),
            NetworkError::SingularImpedance("l".into())
        );
    }

    #[test]
    fn rotation_preserves_nominal_kernel() {
        let abc = PhaseSet::ABC;
        let mut br = Branch::uncoupled("l", "0", "1", abc, c(0.02, 0.06), 2.0);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    br.z[(i, j)] = c(0.005, 0.02);
                }
            }
        }
        let net = ThreePhaseNetwork::new(
            vec![Bus::new("0", abc, BusKind::Slack), Bus::new("1", abc, BusKind::Pq)],
            vec![br],
            1e6,
            4160.0,
        )
        .unwrap();
        let y = build_admittance(&net).unwrap();
        let yr = y.rotated(&net.phase_rotations());
        let ones = vec![c(1.0, 0.0); 6];
        for v in yr.apply(&ones) {
            assert!(v.norm() < 1e-10);
        }
    }
}
