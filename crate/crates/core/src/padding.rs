//! Cover-traffic padding and segmentation.
//!
//! Padding is modelled at the cadence level: dummy layers are drawn from the
//! native gate set (single-qubit Clifford generators plus a CZ entangler on
//! nearest-neighbour pairs of a line coupling graph) and carry gate identities
//! and durations, but are never simulated as unitaries. Real workload layers
//! come from the same generator, so a padded circuit and a design-only
//! stream share their cadence statistics.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gate {
    H,
    S,
    Cz,
}

impl Gate {
    pub fn arity(self) -> usize {
        match self {
            Gate::H | Gate::S => 1,
            Gate::Cz => 2,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Gate::H => "H",
            Gate::S => "S",
            Gate::Cz => "CZ",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Op {
    pub gate: Gate,
    pub qubits: [u16; 2],
    /// Microseconds.
    pub duration: f64,
    pub dummy: bool,
}

impl Op {
    pub fn targets(&self) -> &[u16] {
        &self.qubits[..self.gate.arity()]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Layer {
    pub ops: Vec<Op>,
}

impl Layer {
    /// Wall time of the layer: ops run in parallel.
    pub fn duration(&self) -> f64 {
        self.ops.iter().map(|o| o.duration).fold(0.0, f64::max)
    }

    pub fn is_dummy(&self) -> bool {
        !self.ops.is_empty() && self.ops.iter().all(|o| o.dummy)
    }

    pub fn two_qubit_ops(&self) -> usize {
        self.ops.iter().filter(|o| o.gate.arity() == 2).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    pub n: u32,
    pub layers: Vec<Layer>,
}

/// A circuit after padding; dummy ops are flagged.
pub type PaddedCircuit = Circuit;

impl Circuit {
    pub fn new(n: u32, layers: Vec<Layer>) -> Result<Self> {
        let c = Self { n, layers };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Input("circuit needs at least one qubit".into()));
        }
        let mut used = vec![usize::MAX; self.n as usize];
        for (li, layer) in self.layers.iter().enumerate() {
            for op in &layer.ops {
                if !(op.duration > 0.0 && op.duration.is_finite()) {
                    return Err(Error::Input(format!("layer {li}: non-positive duration")));
                }
                for &q in op.targets() {
                    let slot = used.get_mut(q as usize).ok_or_else(|| {
                        Error::Input(format!("layer {li}: qubit {q} out of range"))
                    })?;
                    if *slot == li {
                        return Err(Error::Input(format!("layer {li}: qubit {q} used twice")));
                    }
                    *slot = li;
                }
            }
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.layers.iter().map(Layer::duration).sum()
    }

    /// Drop every dummy op and every layer left empty.
    pub fn strip_dummies(&self) -> Circuit {
        let layers = self
            .layers
            .iter()
            .filter_map(|l| {
                let ops: Vec<Op> = l.ops.iter().filter(|o| !o.dummy).copied().collect();
                (!ops.is_empty()).then_some(Layer { ops })
            })
            .collect();
        Circuit { n: self.n, layers }
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

/// Line format: a `# n=<qubits>` header, then one layer per line with ops
/// separated by spaces as `GATE@q[,q]:duration,flag` (`r` real, `d` dummy).
/// An empty layer is written as `-`.
impl fmt::Display for Circuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# n={}", self.n)?;
        for layer in &self.layers {
            if layer.ops.is_empty() {
                writeln!(f, "-")?;
                continue;
            }
            let ops: Vec<String> = layer
                .ops
                .iter()
                .map(|o| {
                    let qs: Vec<String> = o.targets().iter().map(u16::to_string).collect();
                    format!(
                        "{}@{}:{},{}",
                        o.gate.name(),
                        qs.join(","),
                        o.duration,
                        if o.dummy { 'd' } else { 'r' }
                    )
                })
                .collect();
            writeln!(f, "{}", ops.join(" "))?;
        }
        Ok(())
    }
}

impl FromStr for Circuit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad =
            |line: usize, msg: &str| Error::Input(format!("circuit line {}: {msg}", line + 1));
        let mut lines = s.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(0, "missing header"))?;
        let n: u32 = header
            .trim()
            .strip_prefix("# n=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(0, "expected '# n=<qubits>'"))?;
        let mut layers = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line == "-" {
                layers.push(Layer::default());
                continue;
            }
            let mut ops = Vec::new();
            for tok in line.split_whitespace() {
                let (gate, rest) = tok.split_once('@').ok_or_else(|| bad(i, "missing '@'"))?;
                let (qs, rest) = rest.split_once(':').ok_or_else(|| bad(i, "missing ':'"))?;
                let (dur, flag) = rest.split_once(',').ok_or_else(|| bad(i, "missing flag"))?;
                let gate = match gate {
                    "H" => Gate::H,
                    "S" => Gate::S,
                    "CZ" => Gate::Cz,
                    _ => return Err(bad(i, "unknown gate")),
                };
                let targets: Vec<u16> = qs
                    .split(',')
                    .map(|q| q.parse().map_err(|_| bad(i, "bad qubit")))
                    .collect::<Result<_>>()?;
                if targets.len() != gate.arity() {
                    return Err(bad(i, "wrong arity"));
                }
                let duration: f64 = dur.parse().map_err(|_| bad(i, "bad duration"))?;
                let dummy = match flag {
                    "d" => true,
                    "r" => false,
                    _ => return Err(bad(i, "flag must be r or d")),
                };
                ops.push(Op {
                    gate,
                    qubits: [targets[0], *targets.last().unwrap()],
                    duration,
                    dummy,
                });
            }
            layers.push(Layer { ops });
        }
        Circuit::new(n, layers)
    }
}

/// Native gate table and layer-density knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSet {
    pub h_us: f64,
    pub s_us: f64,
    pub cz_us: f64,
    /// Chance of placing a CZ on a free coupled pair.
    pub p_two_qubit: f64,
    /// Chance of placing a single-qubit gate on a free qubit.
    pub p_one_qubit: f64,
}

impl Default for GateSet {
    fn default() -> Self {
        Self {
            h_us: 0.05,
            s_us: 0.03,
            cz_us: 0.30,
            p_two_qubit: 0.25,
            p_one_qubit: 0.6,
        }
    }
}

impl GateSet {
    /// Draw one layer on a line coupling graph. Layers are never empty.
    pub fn random_layer<R: Rng + ?Sized>(&self, n: u32, dummy: bool, rng: &mut R) -> Layer {
        let n = n as usize;
        let mut ops = Vec::with_capacity(n);
        let mut q = 0;
        while q < n {
            if q + 1 < n && rng.random::<f64>() < self.p_two_qubit {
                ops.push(Op {
                    gate: Gate::Cz,
                    qubits: [q as u16, q as u16 + 1],
                    duration: self.cz_us,
                    dummy,
                });
                q += 2;
                continue;
            }
            if rng.random::<f64>() < self.p_one_qubit {
                let (gate, duration) = if rng.random::<bool>() {
                    (Gate::H, self.h_us)
                } else {
                    (Gate::S, self.s_us)
                };
                ops.push(Op {
                    gate,
                    qubits: [q as u16; 2],
                    duration,
                    dummy,
                });
            }
            q += 1;
        }
        if ops.is_empty() {
            let q = rng.random_range(0..n) as u16;
            ops.push(Op {
                gate: Gate::H,
                qubits: [q; 2],
                duration: self.h_us,
                dummy,
            });
        }
        Layer { ops }
    }

    /// Local-random workload circuit of the given depth.
    pub fn local_random_circuit<R: Rng + ?Sized>(
        &self,
        n: u32,
        depth: usize,
        rng: &mut R,
    ) -> Result<Circuit> {
        if n == 0 {
            return Err(Error::Input("circuit needs at least one qubit".into()));
        }
        let layers = (0..depth)
            .map(|_| self.random_layer(n, false, rng))
            .collect();
        Ok(Circuit { n, layers })
    }

    /// Pure cover traffic, as used for design-only calibration.
    pub fn design_circuit<R: Rng + ?Sized>(
        &self,
        n: u32,
        depth: usize,
        rng: &mut R,
    ) -> Result<Circuit> {
        if n == 0 {
            return Err(Error::Input("circuit needs at least one qubit".into()));
        }
        let layers = (0..depth)
            .map(|_| self.random_layer(n, true, rng))
            .collect();
        Ok(Circuit { n, layers })
    }
}

/// `ceil(log2 n)`, floored at 1.
pub fn design_order(n: u32) -> u32 {
    if n <= 2 {
        1
    } else {
        32 - (n - 1).leading_zeros()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaddingSpec {
    pub t: u32,
    pub eps_des: f64,
    pub c_pad: u32,
}

impl PaddingSpec {
    pub const EPS_DES: f64 = 0.02;

    pub fn for_qubits(n: u32, c_pad: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::Input("padding needs at least one qubit".into()));
        }
        Ok(Self {
            t: design_order(n),
            eps_des: Self::EPS_DES,
            c_pad,
        })
    }

    /// Dummy layer budget `c_pad * n * ceil(log2 n)`.
    pub fn depth_budget(&self, n: u32) -> usize {
        (self.c_pad * n * self.t) as usize
    }

    pub fn validate(&self, n: u32) -> Result<()> {
        if self.t < 1 || !(self.eps_des > 0.0 && self.eps_des < 1.0) {
            return Err(Error::Config(format!("invalid padding spec {self:?}")));
        }
        if self.t != design_order(n) {
            return Err(Error::Config(format!(
                "design order {} does not match ceil(log2 {n}) = {}",
                self.t,
                design_order(n)
            )));
        }
        Ok(())
    }
}

/// Interleave `depth_budget` dummy layers between the real layers at
/// seeded positions. Real layers keep their order and contents.
pub fn insert_tdesign(
    c: &Circuit,
    spec: &PaddingSpec,
    gates: &GateSet,
    seed: u64,
) -> Result<PaddedCircuit> {
    c.validate()?;
    spec.validate(c.n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = spec.depth_budget(c.n);
    let real = c.layers.len();
    // Gap g sits before real layer g; gap `real` is after the last one.
    let mut slots: Vec<usize> = (0..budget).map(|_| rng.random_range(0..=real)).collect();
    slots.sort_unstable();
    let mut layers = Vec::with_capacity(real + budget);
    let mut next = slots.iter().peekable();
    for gap in 0..=real {
        while next.peek().is_some_and(|&&s| s == gap) {
            next.next();
            layers.push(gates.random_layer(c.n, true, &mut rng));
        }
        if gap < real {
            layers.push(c.layers[gap].clone());
        }
    }
    Ok(Circuit { n: c.n, layers })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentClass {
    Short,
    Medium,
    Long,
}

impl SegmentClass {
    pub const ALL: [SegmentClass; 3] = [
        SegmentClass::Short,
        SegmentClass::Medium,
        SegmentClass::Long,
    ];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub index: usize,
    pub layers: Range<usize>,
    pub class: SegmentClass,
    /// Microseconds.
    pub duration: f64,
}

impl Segment {
    pub fn layers_of<'a>(&self, c: &'a Circuit) -> &'a [Layer] {
        &c.layers[self.layers.clone()]
    }
}

fn fits(durations: &[f64], cap: f64, k: usize) -> bool {
    let mut pieces = 1;
    let mut acc = 0.0;
    for &d in durations {
        if acc + d > cap {
            pieces += 1;
            acc = d;
            if pieces > k {
                return false;
            }
        } else {
            acc += d;
        }
    }
    true
}

/// Contiguous, duration-balanced split into `min(k_target, layers)` pieces
/// minimising the longest piece. Classes are assigned by duration tercile
/// (rank based, ties broken by position).
pub fn segment(pc: &PaddedCircuit, k_target: usize) -> Result<Vec<Segment>> {
    if k_target == 0 {
        return Err(Error::Input("segment count must be >= 1".into()));
    }
    let durs: Vec<f64> = pc.layers.iter().map(Layer::duration).collect();
    let total_layers = durs.len();
    if total_layers == 0 {
        return Ok(Vec::new());
    }
    let k = k_target.min(total_layers);

    let mut lo = durs.iter().copied().fold(0.0, f64::max);
    let mut hi: f64 = durs.iter().sum();
    if !fits(&durs, lo, k) {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if fits(&durs, mid, k) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    } else {
        hi = lo;
    }
    let cap = hi;

    // Greedy fill under `cap`, but never leave fewer layers than pieces.
    let mut bounds = Vec::with_capacity(k);
    let mut start = 0;
    let mut acc = 0.0;
    for (i, &d) in durs.iter().enumerate() {
        let pieces_left = k - bounds.len();
        let layers_left = total_layers - i;
        // Never leave fewer layers than pieces still to fill.
        let must_cut = layers_left < pieces_left;
        if i > start && pieces_left > 1 && (acc + d > cap || must_cut) {
            bounds.push(start..i);
            start = i;
            acc = 0.0;
        }
        acc += d;
    }
    bounds.push(start..total_layers);

    let mut segs: Vec<Segment> = bounds
        .into_iter()
        .enumerate()
        .map(|(index, layers)| Segment {
            index,
            duration: durs[layers.clone()].iter().sum(),
            layers,
            class: SegmentClass::Short,
        })
        .collect();
    let mut order: Vec<usize> = (0..segs.len()).collect();
    order.sort_by(|&a, &b| {
        segs[a]
            .duration
            .total_cmp(&segs[b].duration)
            .then(a.cmp(&b))
    });
    let count = segs.len();
    for (rank, &i) in order.iter().enumerate() {
        segs[i].class = SegmentClass::ALL[rank * 3 / count];
    }
    Ok(segs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layer_of(d: f64) -> Layer {
        Layer {
            ops: vec![Op {
                gate: Gate::H,
                qubits: [0; 2],
                duration: d,
                dummy: false,
            }],
        }
    }

    #[test]
    fn design_orders() {
        assert_eq!(design_order(4), 2);
        assert_eq!(design_order(8), 3);
        assert_eq!(design_order(16), 4);
        assert_eq!(design_order(5), 3);
        assert_eq!(design_order(1), 1);
    }

    #[test]
    fn empty_circuit_is_pure_padding() {
        let c = Circuit::new(4, vec![]).unwrap();
        let spec = PaddingSpec::for_qubits(4, 2).unwrap();
        let p = insert_tdesign(&c, &spec, &GateSet::default(), 1).unwrap();
        assert_eq!(p.layers.len(), spec.depth_budget(4));
        assert_eq!(spec.depth_budget(4), 16);
        assert!(p.layers.iter().all(Layer::is_dummy));
        p.validate().unwrap();
    }

    #[test]
    fn padding_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = GateSet::default();
        let c = g.local_random_circuit(8, 40, &mut rng).unwrap();
        let spec = PaddingSpec::for_qubits(8, 2).unwrap();
        assert_eq!(
            insert_tdesign(&c, &spec, &g, 5).unwrap(),
            insert_tdesign(&c, &spec, &g, 5).unwrap()
        );
        assert_ne!(
            insert_tdesign(&c, &spec, &g, 5).unwrap(),
            insert_tdesign(&c, &spec, &g, 6).unwrap()
        );
    }

    #[test]
    fn zero_qubits_rejected() {
        assert!(PaddingSpec::for_qubits(0, 2).is_err());
        assert!(Circuit::new(0, vec![]).is_err());
    }

    #[test]
    fn spec_must_match_size() {
        let c = Circuit::new(8, vec![]).unwrap();
        let spec = PaddingSpec::for_qubits(4, 2).unwrap();
        assert!(insert_tdesign(&c, &spec, &GateSet::default(), 0).is_err());
    }

    #[test]
    fn shared_qubit_rejected() {
        let mut l = layer_of(0.1);
        l.ops.push(l.ops[0]);
        assert!(Circuit::new(2, vec![l]).is_err());
    }

    #[test]
    fn single_segment_is_whole_circuit() {
        let c = Circuit::new(1, (0..7).map(|i| layer_of(0.1 + i as f64)).collect()).unwrap();
        let s = segment(&c, 1).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].layers, 0..7);
    }

    /// Brute force over all contiguous k-partitions: smallest achievable
    /// maximum piece duration.
    fn best_bottleneck(d: &[f64], k: usize) -> f64 {
        fn rec(d: &[f64], k: usize) -> f64 {
            if k == 1 {
                return d.iter().sum();
            }
            (1..=d.len() - (k - 1))
                .map(|cut| {
                    let head: f64 = d[..cut].iter().sum();
                    head.max(rec(&d[cut..], k - 1))
                })
                .fold(f64::INFINITY, f64::min)
        }
        rec(d, k)
    }

    #[test]
    fn nine_equal_layers_three_ways() {
        let c = Circuit::new(1, (0..9).map(|_| layer_of(1.0)).collect()).unwrap();
        let s = segment(&c, 3).unwrap();
        let ranges: Vec<_> = s.iter().map(|x| x.layers.clone()).collect();
        assert_eq!(ranges, vec![0..3, 3..6, 6..9]);
        assert_eq!(best_bottleneck(&[1.0; 9], 3), 3.0);
    }

    #[test]
    fn more_segments_than_layers() {
        let c = Circuit::new(1, (0..4).map(|_| layer_of(1.0)).collect()).unwrap();
        assert_eq!(segment(&c, 10).unwrap().len(), 4);
        assert!(segment(&c, 0).is_err());
    }

    #[test]
    fn text_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = GateSet::default();
        let c = g.local_random_circuit(5, 12, &mut rng).unwrap();
        let p = insert_tdesign(&c, &PaddingSpec::for_qubits(5, 2).unwrap(), &g, 2).unwrap();
        let back: Circuit = p.to_text().parse().unwrap();
        assert_eq!(back, p);
        assert!("# n=2\nX@0:1,r".parse::<Circuit>().is_err());
        assert!("n=2".parse::<Circuit>().is_err());
    }

    proptest! {
        #[test]
        fn padding_preserves_real_ops(n in 1u32..12, depth in 0usize..30, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = GateSet::default();
            let c = g.local_random_circuit(n, depth, &mut rng).unwrap();
            let spec = PaddingSpec::for_qubits(n, 2).unwrap();
            let p = insert_tdesign(&c, &spec, &g, seed).unwrap();
            prop_assert_eq!(p.strip_dummies(), c.clone());
            let dummies = p.layers.iter().filter(|l| l.is_dummy()).count();
            prop_assert!(dummies <= spec.depth_budget(n));
            prop_assert_eq!(p.layers.len(), depth + spec.depth_budget(n));
        }

        #[test]
        fn segmentation_is_balanced_partition(durs in proptest::collection::vec(0.01f64..2.0, 1..11), k in 1usize..6) {
            let c = Circuit::new(1, durs.iter().map(|&d| layer_of(d)).collect()).unwrap();
            let segs = segment(&c, k).unwrap();
            let kk = k.min(durs.len());
            prop_assert_eq!(segs.len(), kk);
            let mut next = 0;
            for s in &segs {
                prop_assert_eq!(s.layers.start, next);
                prop_assert!(!s.layers.is_empty());
                next = s.layers.end;
            }
            prop_assert_eq!(next, durs.len());
            let worst = segs.iter().map(|s| s.duration).fold(0.0, f64::max);
            let best = best_bottleneck(&durs, kk);
            prop_assert!(worst <= best * (1.0 + 1e-9), "worst {} best {}", worst, best);
        }
    }
}
