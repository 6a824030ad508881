//! Initialization phase: Riemannian K-means on a data prefix, transition
//! counting and (c, σ, δ) estimation from the clusters, and seeding of the
//! online filter's conditional probabilities.

use std::collections::VecDeque;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::gaussian::{self, RiemannianGaussian};
use crate::manifold::{self, ManifoldPoint};
use crate::markov::HmmParams;
use crate::online::FilterState;

/// Labels are 1-based like states everywhere else.
#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centers: Vec<ManifoldPoint>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration (non-increasing).
    pub inertia_history: Vec<f64>,
}

fn nearest_center(point: &ManifoldPoint, centers: &[ManifoldPoint]) -> Result<(usize, f64)> {
    let mut best = (0usize, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = manifold::distance(point, c)?;
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best)
}

fn assign_all(data: &[ManifoldPoint], centers: &[ManifoldPoint]) -> Result<(Vec<usize>, f64)> {
    let mut labels = Vec::with_capacity(data.len());
    let mut inertia = 0.0;
    for p in data {
        let (i, d) = nearest_center(p, centers)?;
        labels.push(i);
        inertia += d * d;
    }
    Ok((labels, inertia))
}

/// Squared-distance ("D²") sampling from a uniform first point:
/// deterministic per seed. Farthest-point seeding was tried first and is
/// unusable here — on heavy-spread hyperbolic clusters it always seeds the
/// most extreme outliers once the sample is large, and Lloyd then settles
/// into a merged-cluster local optimum.
fn dsquared_seeding(
    data: &[ManifoldPoint],
    n_clusters: usize,
    rng: &mut impl Rng,
) -> Result<Vec<ManifoldPoint>> {
    let first = rng.random_range(0..data.len());
    let mut centers = vec![data[first].clone()];
    let mut min_sq: Vec<f64> = data
        .iter()
        .map(|p| manifold::squared_distance(p, &centers[0]))
        .collect::<Result<_>>()?;
    while centers.len() < n_clusters {
        let total: f64 = min_sq.iter().sum();
        if total == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "fewer than {n_clusters} distinct points in the data"
            )));
        }
        let mut target = rng.random::<f64>() * total;
        let mut chosen = data.len() - 1;
        for (i, &d2) in min_sq.iter().enumerate() {
            target -= d2;
            if target <= 0.0 {
                chosen = i;
                break;
            }
        }
        centers.push(data[chosen].clone());
        for (p, m) in data.iter().zip(min_sq.iter_mut()) {
            let d2 = manifold::squared_distance(p, centers.last().unwrap())?;
            if d2 < *m {
                *m = d2;
            }
        }
    }
    Ok(centers)
}

/// An empty cluster is reseeded at the point farthest from its assigned
/// center, keeping the cluster count fixed.
fn fix_empty_clusters(
    data: &[ManifoldPoint],
    centers: &mut [ManifoldPoint],
    labels: &mut Vec<usize>,
    inertia: &mut f64,
) -> Result<()> {
    for _ in 0..centers.len() + 1 {
        let mut counts = vec![0usize; centers.len()];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return Ok(());
        };
        let mut far = (0usize, -1.0f64);
        for (i, p) in data.iter().enumerate() {
            let d = manifold::distance(p, &centers[labels[i]])?;
            if d > far.1 {
                far = (i, d);
            }
        }
        if far.1 <= 0.0 {
            return Err(Error::InvalidArgument(
                "cannot reseed an empty cluster: all points coincide with their centers".into(),
            ));
        }
        centers[empty] = data[far.0].clone();
        let (new_labels, new_inertia) = assign_all(data, centers)?;
        *labels = new_labels;
        *inertia = new_inertia;
    }
    Err(Error::NoConvergence {
        what: "empty-cluster repair",
        iterations: centers.len() + 1,
    })
}

/// Lloyd's alternation under the manifold distance, with centers
/// recomputed as Karcher means and D²-sampled seeding. Stops when the
/// inertia improves by less than `tol` or after `max_iter` iterations.
pub fn kmeans_fit(
    data: &[ManifoldPoint],
    n_clusters: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<KMeansResult> {
    if n_clusters == 0 {
        return Err(Error::InvalidArgument("n_clusters must be >= 1".into()));
    }
    if data.len() < n_clusters {
        return Err(Error::InvalidArgument(format!(
            "{} points cannot fill {n_clusters} clusters",
            data.len()
        )));
    }
    for p in &data[1..] {
        if p.kind() != data[0].kind() {
            return Err(Error::KindMismatch {
                expected: data[0].kind(),
                found: p.kind(),
            });
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut centers = dsquared_seeding(data, n_clusters, &mut rng)?;
    let (mut labels, mut inertia) = assign_all(data, &centers)?;
    fix_empty_clusters(data, &mut centers, &mut labels, &mut inertia)?;

    let mut history = vec![inertia];
    for _ in 0..max_iter {
        let previous = inertia;
        for cluster in 0..n_clusters {
            let members: Vec<ManifoldPoint> = data
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == cluster)
                .map(|(p, _)| p.clone())
                .collect();
            if !members.is_empty() {
                centers[cluster] = manifold::karcher_mean_uniform(&members)?;
            }
        }
        let (new_labels, new_inertia) = assign_all(data, &centers)?;
        labels = new_labels;
        inertia = new_inertia;
        fix_empty_clusters(data, &mut centers, &mut labels, &mut inertia)?;
        debug_assert!(
            inertia <= previous + 1e-7 * (1.0 + previous),
            "inertia increased: {previous} -> {inertia}"
        );
        history.push(inertia);
        if previous - inertia < tol {
            break;
        }
    }

    Ok(KMeansResult {
        assignments: labels.iter().map(|l| l + 1).collect(),
        centers,
        inertia,
        inertia_history: history,
    })
}

/// Raw transition counts between consecutive labels (1-based labels,
/// 0-based matrix).
pub fn transition_counts(labels: &[usize], n_clusters: usize) -> Vec<Vec<f64>> {
    let mut counts = vec![vec![0.0; n_clusters]; n_clusters];
    for w in labels.windows(2) {
        counts[w[0] - 1][w[1] - 1] += 1.0;
    }
    counts
}

/// Turns a K-means run into initial HMM parameters: A from smoothed
/// transition counts, c from the cluster centers, δ from the in-cluster
/// mean squared distance (σ through the δ↔σ bridge), π from smoothed label
/// frequencies.
///
/// Counts get add-one-half (Jeffreys) pseudo-counts before normalization:
/// short prefixes can produce zero rows, and zeros are absorbing for the
/// later multiplicative updates. π uses smoothed frequencies instead of
/// the start indicator for the same reason — a zero π entry would zero α
/// permanently.
pub fn estimate_initial_params(
    data: &[ManifoldPoint],
    result: &KMeansResult,
) -> Result<HmmParams> {
    let n = result.centers.len();
    if data.len() != result.assignments.len() {
        return Err(Error::InvalidArgument(format!(
            "{} points but {} assignments",
            data.len(),
            result.assignments.len()
        )));
    }
    let mut counts = vec![0usize; n];
    for &l in &result.assignments {
        if l == 0 || l > n {
            return Err(Error::InvalidArgument(format!(
                "label {l} outside 1..={n}"
            )));
        }
        counts[l - 1] += 1;
    }
    let missing: Vec<usize> = (0..n).filter(|&i| counts[i] == 0).map(|i| i + 1).collect();
    if !missing.is_empty() {
        return Err(Error::MissingClusters { missing });
    }

    let mut transition = transition_counts(&result.assignments, n);
    for row in &mut transition {
        for v in row.iter_mut() {
            *v += 0.5;
        }
        let sum: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= sum;
        }
    }

    let total = data.len() as f64;
    let initial: Vec<f64> = counts
        .iter()
        .map(|&c| (c as f64 + 0.5) / (total + 0.5 * n as f64))
        .collect();

    let floor = gaussian::delta_floor();
    let mut components = Vec::with_capacity(n);
    for i in 0..n {
        let mut sum_sq = 0.0;
        for (p, &l) in data.iter().zip(&result.assignments) {
            if l == i + 1 {
                sum_sq += manifold::squared_distance(p, &result.centers[i])?;
            }
        }
        let delta = (sum_sq / counts[i] as f64).max(floor);
        components.push(RiemannianGaussian::from_delta(
            result.centers[i].clone(),
            delta,
        )?);
    }

    HmmParams::new(transition, initial, components)
}

/// Runs the forward recursion over the window with the estimated
/// parameters (normalized per step), then one backward pass to initialize
/// the cumulative γ sums, and returns a filter positioned at the end of
/// the initialization prefix.
pub fn seed_filter(params: &HmmParams, window: &[ManifoldPoint]) -> Result<FilterState> {
    if let Err(violations) = params.validate() {
        return Err(Error::InvalidModel { violations });
    }
    if window.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "seed window must hold at least 2 observations, got {}",
            window.len()
        )));
    }
    let n = params.n_states();
    let capacity = window.len();

    let mut state = FilterState {
        params: params.clone(),
        alpha: params.initial().to_vec(),
        window: VecDeque::with_capacity(capacity),
        alpha_window: VecDeque::with_capacity(capacity),
        alpha_pre_window: params.initial().to_vec(),
        gamma_cumsum: vec![0.0; n],
        k: 0,
        log_scale: 0.0,
        capacity,
        peak_retained: 0,
        step_exponent: crate::online::DEFAULT_STEP_EXPONENT,
    };

    // alpha_1(i) = pi_i p_i(y_1), then the standard forward recursion
    let first = &window[0];
    let mut alpha: Vec<f64> = params
        .components()
        .iter()
        .zip(params.initial())
        .map(|(c, &pi)| c.density(first).map(|p| pi * p))
        .collect::<Result<_>>()?;
    let norm: f64 = alpha.iter().sum();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::DegenerateEmission {
            step: 1,
            n_states: n,
        });
    }
    for v in &mut alpha {
        *v /= norm;
    }
    state.log_scale += norm.ln();
    state.alpha = alpha;
    state.slide_window(first.clone());
    for y in &window[1..] {
        state.forward_step(y)?;
        state.slide_window(y.clone());
    }
    state.k = capacity;

    let slice = state.backward_window()?;
    for row in &slice.gamma {
        for (acc, &g) in state.gamma_cumsum.iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::tests::three_state_disk_params;

    fn disk(re: f64, im: f64) -> ManifoldPoint {
        ManifoldPoint::disk(re, im).unwrap()
    }

    #[test]
    fn single_cluster_is_the_karcher_mean() {
        let pts = vec![disk(0.1, 0.0), disk(0.3, 0.2), disk(-0.2, 0.1), disk(0.0, -0.3)];
        let fit = kmeans_fit(&pts, 1, 0, 50, 1e-12).unwrap();
        let mean = manifold::karcher_mean_uniform(&pts).unwrap();
        assert!(manifold::distance(&fit.centers[0], &mean).unwrap() < 1e-8);
        assert!(fit.assignments.iter().all(|&l| l == 1));
    }

    #[test]
    fn well_separated_blobs_are_recovered() {
        // three tight blobs around the reference means
        let truth = three_state_disk_params();
        let mut data = Vec::new();
        for (i, c) in truth.components().iter().enumerate() {
            let tight = RiemannianGaussian::new(c.center().clone(), 0.05).unwrap();
            data.extend(tight.sample(100 + i as u64, 60).unwrap());
        }
        let fit = kmeans_fit(&data, 3, 1, 100, 1e-9).unwrap();
        // each true mean must have a center within 0.05
        for c in truth.components() {
            let best = fit
                .centers
                .iter()
                .map(|m| manifold::distance(m, c.center()).unwrap())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.05, "closest center at distance {best}");
        }
    }

    #[test]
    fn refit_from_returned_centers_is_a_fixed_point() {
        let truth = three_state_disk_params();
        let mut data = Vec::new();
        for (i, c) in truth.components().iter().enumerate() {
            let tight = RiemannianGaussian::new(c.center().clone(), 0.05).unwrap();
            data.extend(tight.sample(7 + i as u64, 40).unwrap());
        }
        let fit = kmeans_fit(&data, 3, 3, 100, 1e-9).unwrap();
        // one more Lloyd round starting from the returned centers changes
        // inertia by less than tol
        let (labels, _) = assign_all(&data, &fit.centers).unwrap();
        let mut centers = fit.centers.clone();
        for k in 0..3 {
            let members: Vec<_> = data
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == k)
                .map(|(p, _)| p.clone())
                .collect();
            centers[k] = manifold::karcher_mean_uniform(&members).unwrap();
        }
        let (_, inertia) = assign_all(&data, &centers).unwrap();
        assert!((inertia - fit.inertia).abs() < 1e-6);
    }

    #[test]
    fn inertia_history_never_increases() {
        let truth = three_state_disk_params();
        let mut data = Vec::new();
        for (i, c) in truth.components().iter().enumerate() {
            data.extend(
                RiemannianGaussian::new(c.center().clone(), 0.4)
                    .unwrap()
                    .sample(11 + i as u64, 80)
                    .unwrap(),
            );
        }
        let fit = kmeans_fit(&data, 3, 5, 100, 1e-12).unwrap();
        for w in fit.inertia_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-7 * (1.0 + w[0]), "{:?}", fit.inertia_history);
        }
    }

    #[test]
    fn degenerate_data_is_rejected() {
        let p = disk(0.1, 0.1);
        assert!(kmeans_fit(&[p.clone()], 2, 0, 10, 1e-9).is_err());
        // four copies of one point cannot seed two clusters
        let copies = vec![p.clone(), p.clone(), p.clone(), p];
        assert!(kmeans_fit(&copies, 2, 0, 10, 1e-9).is_err());
    }

    #[test]
    fn transition_counts_direct_example() {
        // labels (1,1,2,2): row 1 count (1,1), row 2 count (0,1);
        // normalized before smoothing: [[1/2, 1/2], [0, 1]]
        let counts = transition_counts(&[1, 1, 2, 2], 2);
        assert_eq!(counts, vec![vec![1.0, 1.0], vec![0.0, 1.0]]);
        let normalized: Vec<Vec<f64>> = counts
            .iter()
            .map(|row| {
                let s: f64 = row.iter().sum();
                row.iter().map(|v| v / s).collect()
            })
            .collect();
        assert_eq!(normalized, vec![vec![0.5, 0.5], vec![0.0, 1.0]]);
    }

    #[test]
    fn estimate_recovers_transition_structure_at_desk_scale() {
        let truth = three_state_disk_params();
        let chain = crate::markov::simulate_chain(&truth, 1000, 21).unwrap();
        let fit = kmeans_fit(&chain.observations, 3, 21, 100, 1e-9).unwrap();
        let est = estimate_initial_params(&chain.observations, &fit).unwrap();
        // align by matching centers to true means
        let mut perm = [0usize; 3];
        for (i, c) in est.components().iter().enumerate() {
            let mut best = (0usize, f64::INFINITY);
            for (j, t) in truth.components().iter().enumerate() {
                let d = manifold::distance(c.center(), t.center()).unwrap();
                if d < best.1 {
                    best = (j, d);
                }
            }
            perm[i] = best.0;
        }
        for i in 0..3 {
            for j in 0..3 {
                let a = est.transition()[i][j];
                let b = truth.transition()[perm[i]][perm[j]];
                assert!((a - b).abs() < 0.15, "A[{i}][{j}] = {a} vs true {b}");
            }
        }
    }

    #[test]
    fn estimate_rows_are_stochastic_and_deltas_positive() {
        let truth = three_state_disk_params();
        let chain = crate::markov::simulate_chain(&truth, 300, 2).unwrap();
        let fit = kmeans_fit(&chain.observations, 3, 2, 100, 1e-9).unwrap();
        let est = estimate_initial_params(&chain.observations, &fit).unwrap();
        for row in est.transition() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v > 0.0));
        }
        assert!((est.initial().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(est.components().iter().all(|c| c.delta() > 0.0));
    }

    #[test]
    fn missing_cluster_is_named() {
        let pts = vec![disk(0.0, 0.0), disk(0.1, 0.0), disk(0.2, 0.0)];
        let fake = KMeansResult {
            assignments: vec![1, 1, 1],
            centers: vec![disk(0.1, 0.0), disk(0.5, 0.5)],
            inertia: 0.0,
            inertia_history: vec![],
        };
        match estimate_initial_params(&pts, &fake).unwrap_err() {
            Error::MissingClusters { missing } => assert_eq!(missing, vec![2]),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn label_permutation_equivariance() {
        let truth = three_state_disk_params();
        let chain = crate::markov::simulate_chain(&truth, 400, 31).unwrap();
        let fit = kmeans_fit(&chain.observations, 3, 31, 100, 1e-9).unwrap();
        let est = estimate_initial_params(&chain.observations, &fit).unwrap();

        // permute labels (1,2,3) -> (2,3,1) and refit the estimates
        let perm = [2usize, 3, 1];
        let permuted = KMeansResult {
            assignments: fit.assignments.iter().map(|&l| perm[l - 1]).collect(),
            centers: vec![
                fit.centers[2].clone(),
                fit.centers[0].clone(),
                fit.centers[1].clone(),
            ],
            inertia: fit.inertia,
            inertia_history: vec![],
        };
        let est_p = estimate_initial_params(&chain.observations, &permuted).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let a = est.transition()[i][j];
                let b = est_p.transition()[perm[i] - 1][perm[j] - 1];
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(
                est.components()[i].center(),
                est_p.components()[perm[i] - 1].center()
            );
        }
    }

    #[test]
    fn seeded_filter_is_normalized_at_every_window_position() {
        let truth = three_state_disk_params();
        let chain = crate::markov::simulate_chain(&truth, 60, 17).unwrap();
        let state = seed_filter(&truth, &chain.observations).unwrap();
        for alpha in state.window_alphas() {
            assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(state.iteration(), 60);
        assert_eq!(state.window_len(), 60);
        // cumulative gammas hold exactly the window's worth of mass
        let total: f64 = state.gamma_cumsum().iter().sum();
        assert!((total - 60.0).abs() < 1e-6);
    }

    #[test]
    fn seeded_filter_single_state_is_all_ones() {
        let p = HmmParams::new(
            vec![vec![1.0]],
            vec![1.0],
            vec![RiemannianGaussian::new(disk(0.0, 0.0), 0.5).unwrap()],
        )
        .unwrap();
        let window = [disk(0.1, 0.0), disk(-0.1, 0.05), disk(0.0, -0.1)];
        let state = seed_filter(&p, &window).unwrap();
        for alpha in state.window_alphas() {
            assert_eq!(alpha, &[1.0]);
        }
        let slice = state.backward_window().unwrap();
        for row in slice.gamma {
            assert_eq!(row, vec![1.0]);
        }
    }

    #[test]
    fn seeded_alpha_matches_two_step_enumeration() {
        // N = 2, window = 2: compare against direct evaluation of the
        // two-step joint likelihood
        let p = HmmParams::new(
            vec![vec![0.7, 0.3], vec![0.4, 0.6]],
            vec![0.6, 0.4],
            vec![
                RiemannianGaussian::new(disk(-0.4, 0.0), 0.3).unwrap(),
                RiemannianGaussian::new(disk(0.4, 0.0), 0.3).unwrap(),
            ],
        )
        .unwrap();
        let window = [disk(-0.35, 0.05), disk(0.42, -0.03)];
        let state = seed_filter(&p, &window).unwrap();
        let (gamma_bf, _) = crate::online::tests::enumerate_posteriors(&p, &window);
        // final alpha is the filtered posterior gamma_{2|2}
        for i in 0..2 {
            assert!(
                (state.alpha()[i] - gamma_bf[1][i]).abs() < 1e-12,
                "alpha[{i}] = {} vs {}",
                state.alpha()[i],
                gamma_bf[1][i]
            );
        }
        // and the cumulative gamma sums are the smoothed window mass
        let slice = state.backward_window().unwrap();
        for t in 0..2 {
            for i in 0..2 {
                assert!((slice.gamma[t][i] - gamma_bf[t][i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn seed_filter_rejects_short_windows_and_bad_params() {
        let truth = three_state_disk_params();
        assert!(seed_filter(&truth, &[disk(0.0, 0.0)]).is_err());
        let mut bad = truth.clone();
        bad.set_transition(vec![
            vec![0.4, 0.3, 0.3],
            vec![0.2, 0.6, 0.2],
            vec![0.1, 0.1, 0.7],
        ]);
        let window = [disk(0.0, 0.0), disk(0.1, 0.0)];
        assert!(matches!(
            seed_filter(&bad, &window),
            Err(Error::InvalidModel { .. })
        ));
    }
}
