//! HMM parameter container, validation, and the ground-truth chain /
//! observation simulator.
//!
//! States are 1-indexed at every public surface (matching the usual
//! S = {1, …, N} convention) and 0-indexed internally.

use std::io::{Read, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::gaussian::RiemannianGaussian;
use crate::manifold::{ManifoldKind, ManifoldPoint};

const PROB_SUM_TOL: f64 = 1e-9;
const PROB_ENTRY_SLACK: f64 = 1e-12;

// One base generator is split into per-purpose streams so that chain draws
// and emission draws never interleave: extending the chain length appends
// draws instead of reshuffling earlier ones.
const STREAM_CHAIN: u64 = 0;
const STREAM_EMISSIONS: u64 = 1;

/// The parameter tuple λ = (A, π, components).
#[derive(Debug, Clone)]
pub struct HmmParams {
    transition: Vec<Vec<f64>>,
    initial: Vec<f64>,
    components: Vec<RiemannianGaussian>,
}

impl HmmParams {
    pub fn new(
        transition: Vec<Vec<f64>>,
        initial: Vec<f64>,
        components: Vec<RiemannianGaussian>,
    ) -> Result<Self> {
        let params = Self {
            transition,
            initial,
            components,
        };
        match params.validate() {
            Ok(()) => Ok(params),
            Err(violations) => Err(Error::InvalidModel { violations }),
        }
    }

    pub fn n_states(&self) -> usize {
        self.components.len()
    }

    pub fn kind(&self) -> ManifoldKind {
        self.components[0].kind()
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn components(&self) -> &[RiemannianGaussian] {
        &self.components
    }

    pub(crate) fn set_transition(&mut self, transition: Vec<Vec<f64>>) {
        self.transition = transition;
    }

    pub(crate) fn set_component(&mut self, i: usize, component: RiemannianGaussian) {
        self.components[i] = component;
    }

    /// Checks every structural invariant and reports all violations with
    /// their indices (rows and states named 1-based).
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut violations = Vec::new();
        let n = self.components.len();
        if n == 0 {
            violations.push("model has no states".to_string());
            return Err(violations);
        }
        if self.transition.len() != n {
            violations.push(format!(
                "transition matrix has {} rows for {} states",
                self.transition.len(),
                n
            ));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.len() != n {
                violations.push(format!("transition row {} has {} entries", i + 1, row.len()));
                continue;
            }
            for (j, &a) in row.iter().enumerate() {
                if !a.is_finite() || a < -PROB_ENTRY_SLACK || a > 1.0 + PROB_ENTRY_SLACK {
                    violations.push(format!("transition entry ({}, {}) = {a} outside [0, 1]", i + 1, j + 1));
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                violations.push(format!("transition row {} sums to {sum}", i + 1));
            }
        }
        if self.initial.len() != n {
            violations.push(format!(
                "initial distribution has {} entries for {} states",
                self.initial.len(),
                n
            ));
        } else {
            for (i, &p) in self.initial.iter().enumerate() {
                if !p.is_finite() || p < -PROB_ENTRY_SLACK || p > 1.0 + PROB_ENTRY_SLACK {
                    violations.push(format!("initial entry {} = {p} outside [0, 1]", i + 1));
                }
            }
            let sum: f64 = self.initial.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                violations.push(format!("initial distribution sums to {sum}"));
            }
        }
        let kind = self.components[0].kind();
        for (i, c) in self.components.iter().enumerate() {
            if c.kind() != kind {
                violations.push(format!(
                    "component {} lives on {} while component 1 lives on {kind}",
                    i + 1,
                    c.kind()
                ));
            }
            if !(c.sigma() > 0.0) {
                violations.push(format!("component {} has sigma {} <= 0", i + 1, c.sigma()));
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsRepr {
    n_states: usize,
    transition: Vec<Vec<f64>>,
    initial: Vec<f64>,
    components: Vec<RiemannianGaussian>,
}

impl Serialize for HmmParams {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ParamsRepr {
            n_states: self.n_states(),
            transition: self.transition.clone(),
            initial: self.initial.clone(),
            components: self.components.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for HmmParams {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = ParamsRepr::deserialize(deserializer)?;
        if repr.n_states != repr.components.len() {
            return Err(D::Error::custom(format!(
                "n_states = {} but {} components given",
                repr.n_states,
                repr.components.len()
            )));
        }
        HmmParams::new(repr.transition, repr.initial, repr.components).map_err(D::Error::custom)
    }
}

/// A simulated trajectory: hidden states (1-based) and their observations.
#[derive(Debug, Clone)]
pub struct ChainSample {
    pub states: Vec<usize>,
    pub observations: Vec<ManifoldPoint>,
}

impl ChainSample {
    pub fn new(states: Vec<usize>, observations: Vec<ManifoldPoint>) -> Result<Self> {
        if states.is_empty() || states.len() != observations.len() {
            return Err(Error::InvalidArgument(format!(
                "chain needs equal, non-zero lengths (got {} states, {} observations)",
                states.len(),
                observations.len()
            )));
        }
        Ok(Self {
            states,
            observations,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Hidden state sequence only: s₁ ~ π, s_{t+1} ~ row s_t of A.
pub fn simulate_states(params: &HmmParams, length: usize, seed: u64) -> Result<Vec<usize>> {
    if let Err(violations) = params.validate() {
        return Err(Error::InvalidModel { violations });
    }
    if length == 0 {
        return Err(Error::InvalidArgument("chain length must be >= 1".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_CHAIN);
    let mut states = Vec::with_capacity(length);
    let mut s = sample_categorical(&mut rng, params.initial());
    states.push(s + 1);
    for _ in 1..length {
        s = sample_categorical(&mut rng, &params.transition()[s]);
        states.push(s + 1);
    }
    Ok(states)
}

/// Observations for a given state sequence, one independent Gaussian draw
/// per step from component s_t.
pub fn emit_observations(
    params: &HmmParams,
    states: &[usize],
    seed: u64,
) -> Result<Vec<ManifoldPoint>> {
    let n = params.n_states();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_EMISSIONS);
    states
        .iter()
        .map(|&s| {
            if s == 0 || s > n {
                return Err(Error::InvalidArgument(format!(
                    "state {s} outside 1..={n}"
                )));
            }
            params.components()[s - 1].sample_with(&mut rng)
        })
        .collect()
}

/// Full simulation: states and observations from one 64-bit seed,
/// bit-identical across runs with the same seed.
pub fn simulate_chain(params: &HmmParams, length: usize, seed: u64) -> Result<ChainSample> {
    let states = simulate_states(params, length, seed)?;
    let observations = emit_observations(params, &states, seed)?;
    ChainSample::new(states, observations)
}

// ---------------------------------------------------------------------------
// Chain CSV format: header `t,state,<point columns>` with disk points as
// `re,im` and SPD(d) points as row-major `m00..m{d-1}{d-1}`.
// ---------------------------------------------------------------------------

pub fn write_chain_csv<W: Write>(chain: &ChainSample, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string(), "state".to_string()];
    match chain.observations[0].kind() {
        ManifoldKind::PoincareDisk => {
            header.push("re".into());
            header.push("im".into());
        }
        ManifoldKind::Spd(d) => {
            for i in 0..d {
                for j in 0..d {
                    header.push(format!("m{i}{j}"));
                }
            }
        }
    }
    w.write_record(&header)?;
    for (t, (s, y)) in chain.states.iter().zip(&chain.observations).enumerate() {
        let mut record = vec![(t + 1).to_string(), s.to_string()];
        record.extend(y.coords().iter().map(|v| format!("{v:.17e}")));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_chain_csv<R: Read>(reader: R) -> Result<ChainSample> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    let n_cols = header.len();
    if n_cols < 4 || &header[0] != "t" || &header[1] != "state" {
        return Err(Error::Config(format!(
            "chain CSV must start with columns t,state (got {:?})",
            header.iter().take(2).collect::<Vec<_>>()
        )));
    }
    let n_coords = n_cols - 2;
    let is_disk = n_coords == 2 && &header[2] == "re";
    let dim = (n_coords as f64).sqrt().round() as usize;
    if !is_disk && dim * dim != n_coords {
        return Err(Error::Config(format!(
            "chain CSV has {n_coords} point columns; expected re,im or a square count"
        )));
    }
    let mut states = Vec::new();
    let mut observations = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad number {:?}: {e}", &rec[i])))
        };
        states.push(
            rec[1]
                .parse::<usize>()
                .map_err(|e| Error::Config(format!("bad state {:?}: {e}", &rec[1])))?,
        );
        if is_disk {
            observations.push(ManifoldPoint::disk(parse(2)?, parse(3)?)?);
        } else {
            let mut mat = nalgebra::DMatrix::zeros(dim, dim);
            for i in 0..dim {
                for j in 0..dim {
                    mat[(i, j)] = parse(2 + i * dim + j)?;
                }
            }
            observations.push(ManifoldPoint::spd(mat)?);
        }
    }
    ChainSample::new(states, observations)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::manifold::squared_distance;

    /// The three-state disk model used throughout: A rows
    /// (.4,.3,.3)/(.2,.6,.2)/(.1,.1,.8), start certain in state 1, means
    /// 0 and ±0.29+0.82i, sigmas (0.2, 1, 1).
    pub(crate) fn three_state_disk_params() -> HmmParams {
        let transition = vec![
            vec![0.4, 0.3, 0.3],
            vec![0.2, 0.6, 0.2],
            vec![0.1, 0.1, 0.8],
        ];
        let initial = vec![1.0, 0.0, 0.0];
        let components = vec![
            RiemannianGaussian::new(ManifoldPoint::disk(0.0, 0.0).unwrap(), 0.2).unwrap(),
            RiemannianGaussian::new(ManifoldPoint::disk(0.29, 0.82).unwrap(), 1.0).unwrap(),
            RiemannianGaussian::new(ManifoldPoint::disk(-0.29, 0.82).unwrap(), 1.0).unwrap(),
        ];
        HmmParams::new(transition, initial, components).unwrap()
    }

    #[test]
    fn reference_params_validate() {
        assert!(three_state_disk_params().validate().is_ok());
    }

    #[test]
    fn validate_names_the_broken_row() {
        let mut p = three_state_disk_params();
        p.transition[1][1] = 0.5; // row 2 now sums to 0.9
        let violations = p.validate().unwrap_err();
        assert!(
            violations.iter().any(|v| v.contains("row 2")),
            "{violations:?}"
        );
    }

    #[test]
    fn validate_catches_bad_initial_and_entries() {
        let mut p = three_state_disk_params();
        p.initial = vec![0.5, 0.0, 0.0];
        p.transition[0] = vec![1.4, -0.2, -0.2];
        let violations = p.validate().unwrap_err();
        assert!(violations.iter().any(|v| v.contains("initial")));
        assert!(violations.iter().any(|v| v.contains("(1, 1)")));
    }

    #[test]
    fn certain_start_always_starts_in_state_one() {
        let p = three_state_disk_params();
        for seed in 0..20 {
            let states = simulate_states(&p, 5, seed).unwrap();
            assert_eq!(states[0], 1);
        }
    }

    #[test]
    fn identity_transition_freezes_the_chain() {
        let mut p = three_state_disk_params();
        p.transition = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        p.initial = vec![0.2, 0.3, 0.5];
        for seed in 0..10 {
            let states = simulate_states(&p, 50, seed).unwrap();
            assert!(states.iter().all(|&s| s == states[0]));
        }
    }

    #[test]
    fn empirical_frequencies_match_stationary_distribution() {
        // stationary vector of the reference A is (2/11, 3/11, 6/11),
        // obtained from pi A = pi by an independent linear solve
        let p = three_state_disk_params();
        let states = simulate_states(&p, 100_000, 12345).unwrap();
        let mut freq = [0.0f64; 3];
        for &s in &states {
            freq[s - 1] += 1.0;
        }
        for f in &mut freq {
            *f /= states.len() as f64;
        }
        let stationary = [2.0 / 11.0, 3.0 / 11.0, 6.0 / 11.0];
        for (f, s) in freq.iter().zip(stationary) {
            assert!((f - s).abs() < 0.01, "freq {freq:?} vs stationary {stationary:?}");
        }
    }

    #[test]
    fn simulation_is_bit_identical_per_seed() {
        let p = three_state_disk_params();
        let a = simulate_chain(&p, 500, 99).unwrap();
        let b = simulate_chain(&p, 500, 99).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.observations, b.observations);
    }

    #[test]
    fn extending_the_chain_preserves_the_prefix() {
        let p = three_state_disk_params();
        let short = simulate_chain(&p, 100, 7).unwrap();
        let long = simulate_chain(&p, 200, 7).unwrap();
        assert_eq!(short.states[..], long.states[..100]);
        assert_eq!(short.observations[..], long.observations[..100]);
    }

    #[test]
    fn observations_given_states_track_component_delta() {
        // fix the states, regenerate observations with a fresh seed, and
        // check per-state mean squared distances against delta
        let p = three_state_disk_params();
        let states = simulate_states(&p, 100_000, 3).unwrap();
        let obs = emit_observations(&p, &states, 1234).unwrap();
        let mut sums = vec![0.0f64; 3];
        let mut counts = vec![0usize; 3];
        for (s, y) in states.iter().zip(&obs) {
            let c = &p.components()[s - 1];
            sums[s - 1] += squared_distance(c.center(), y).unwrap();
            counts[s - 1] += 1;
        }
        for i in 0..3 {
            let mean = sums[i] / counts[i] as f64;
            let delta = p.components()[i].delta();
            assert!(
                (mean - delta).abs() / delta < 0.02,
                "state {}: mean d^2 {mean} vs delta {delta}",
                i + 1
            );
        }
    }

    #[test]
    fn params_json_round_trip() {
        let p = three_state_disk_params();
        let json = serde_json::to_string_pretty(&p).unwrap();
        let back: HmmParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back.transition(), p.transition());
        assert_eq!(back.initial(), p.initial());
        for (a, b) in back.components().iter().zip(p.components()) {
            assert_eq!(a.center(), b.center());
            assert_eq!(a.sigma(), b.sigma());
        }
        // a row-sum violation is rejected at parse time
        let bad = json.replace("0.8", "0.7");
        assert!(serde_json::from_str::<HmmParams>(&bad).is_err());
    }

    #[test]
    fn chain_csv_round_trip() {
        let p = three_state_disk_params();
        let chain = simulate_chain(&p, 50, 11).unwrap();
        let mut buf = Vec::new();
        write_chain_csv(&chain, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,state,re,im\n"));
        let back = read_chain_csv(buf.as_slice()).unwrap();
        assert_eq!(back.states, chain.states);
        for (a, b) in back.observations.iter().zip(&chain.observations) {
            assert!(squared_distance(a, b).unwrap() < 1e-28);
        }
    }
}
