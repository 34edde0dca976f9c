//! Induced Markov chains: block decomposition, transience, the Green
//! (occupation) operator, occupation measures and hitting distributions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{induced_matrix, MdpModel, Policy, StatePartition, PROB_TOL};

/// Spectral radius threshold below which `Q` counts as transient.
pub const TRANSIENCE_MARGIN: f64 = 1e-10;
/// Power-iteration step cap for the spectral radius estimate.
pub const MAX_POWER_STEPS: usize = 10_000;

/// Blocks of `P(π)` in canonical `(H, U, E)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDecomposition {
    /// `H x H`
    pub q: DMatrix<f64>,
    /// `H x U`
    pub phu: DMatrix<f64>,
    /// `H x E`
    pub phe: DMatrix<f64>,
    /// The undecomposed matrix; the boundary rows are read from here.
    pub full: DMatrix<f64>,
    pub partition: StatePartition,
}

impl BlockDecomposition {
    /// `K = P_H^U 𝟙_U`
    pub fn forbidden_exit(&self) -> DVector<f64> {
        row_sums(&self.phu)
    }

    /// `L = P_H^E 𝟙_E`
    pub fn target_exit(&self) -> DVector<f64> {
        row_sums(&self.phe)
    }
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.sum()))
}

/// Splits `p` into the taboo, forbidden-exit and target-exit blocks.
pub fn decompose(p: &DMatrix<f64>, partition: &StatePartition) -> Result<BlockDecomposition> {
    if !partition.is_canonical() {
        return Err(Error::OrderingMismatch);
    }
    let n = partition.n_states();
    if p.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {:?}, partition covers {n} states",
            p.shape()
        )));
    }
    let h = partition.n_taboo();
    let u = partition.n_forbidden();
    let e = partition.n_target();
    Ok(BlockDecomposition {
        q: p.view((0, 0), (h, h)).into_owned(),
        phu: p.view((0, h), (h, u)).into_owned(),
        phe: p.view((0, h + u), (h, e)).into_owned(),
        full: p.clone(),
        partition: partition.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transience {
    pub transient: bool,
    pub spectral_radius: f64,
}

/// Estimates the spectral radius of the substochastic matrix `q` by power
/// iteration from `𝟙/|H|` and decides transience.
///
/// The estimate is the geometric mean of the per-step growth factors over the
/// second half of the run, which also handles periodic classes. The boolean
/// additionally requires every state to reach a leaking row in the support
/// graph, so a radius estimate that rounds below the margin cannot hide a
/// closed class.
pub fn check_transient(q: &DMatrix<f64>) -> Transience {
    let n = q.nrows();
    if n == 0 {
        return Transience {
            transient: true,
            spectral_radius: 0.0,
        };
    }
    let spectral_radius = power_radius(q);
    let transient = spectral_radius < 1.0 - TRANSIENCE_MARGIN && every_state_leaks(q);
    Transience {
        transient,
        spectral_radius,
    }
}

fn power_radius(q: &DMatrix<f64>) -> f64 {
    let n = q.nrows();
    // ∞-normalised copy of 𝟙/|H|
    let mut x = DVector::from_element(n, 1.0);
    let mut logs: Vec<f64> = Vec::new();
    let mut stable = 0;
    for _ in 0..MAX_POWER_STEPS {
        let y = q * &x;
        let norm = y.amax();
        if norm == 0.0 {
            return 0.0;
        }
        let log = norm.ln();
        if let Some(&prev) = logs.last() {
            if (log - prev).abs() <= 1e-15 {
                stable += 1;
            } else {
                stable = 0;
            }
        }
        logs.push(log);
        x = y / norm;
        if stable >= 20 {
            return norm;
        }
    }
    let tail = &logs[logs.len() / 2..];
    (tail.iter().sum::<f64>() / tail.len() as f64).exp()
}

fn every_state_leaks(q: &DMatrix<f64>) -> bool {
    let n = q.nrows();
    let mut reaches = vec![false; n];
    let mut frontier = Vec::new();
    for i in 0..n {
        if q.row(i).sum() < 1.0 - PROB_TOL {
            reaches[i] = true;
            frontier.push(i);
        }
    }
    // reverse reachability towards leaking rows
    while let Some(j) = frontier.pop() {
        for i in 0..n {
            if !reaches[i] && q[(i, j)] > 0.0 {
                reaches[i] = true;
                frontier.push(i);
            }
        }
    }
    reaches.into_iter().all(|r| r)
}

/// `G = Σ_k Q^k = (I − Q)^{-1}` over the taboo states.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenOperator {
    pub g: DMatrix<f64>,
}

/// Solves `(I − Q) G = I` by LU.
pub fn green(q: &DMatrix<f64>) -> Result<GreenOperator> {
    let t = check_transient(q);
    if !t.transient {
        return Err(Error::NotTransient {
            spectral_radius: t.spectral_radius,
        });
    }
    let n = q.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let lu = (&id - q).lu();
    let mut g = lu.solve(&id).ok_or(Error::NotTransient {
        spectral_radius: t.spectral_radius,
    })?;
    // rounding can leave entries a few ulps below zero
    g.iter_mut().for_each(|x| {
        if *x < 0.0 && *x > -1e-12 {
            *x = 0.0
        }
    });
    Ok(GreenOperator { g })
}

/// Truncated series `Σ_{k<K} Q^k`, stopping once `‖Q^K‖_∞ < tol`.
/// Returns the sum and `K`, or `None` if `max_terms` is reached first.
pub fn neumann_series(q: &DMatrix<f64>, tol: f64, max_terms: usize) -> Option<(DMatrix<f64>, usize)> {
    let n = q.nrows();
    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut power = DMatrix::<f64>::identity(n, n);
    for k in 1..=max_terms {
        power = &power * q;
        if inf_norm(&power) < tol {
            return Some((sum, k));
        }
        sum += &power;
    }
    None
}

/// Max absolute row sum.
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Everything derived from one `(model, policy)` pair that the evaluators
/// share.
#[derive(Debug, Clone)]
pub struct InducedChain {
    pub blocks: BlockDecomposition,
    pub green: GreenOperator,
}

impl InducedChain {
    pub fn new(model: &MdpModel, policy: &Policy) -> Result<Self> {
        let p = induced_matrix(model, policy)?;
        let blocks = decompose(&p, model.partition())?;
        let green = green(&blocks.q)?;
        Ok(Self { blocks, green })
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.blocks.full
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.blocks.q
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.green.g
    }
}

/// Expected visits to each taboo state before absorption, for a given
/// initial distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationMeasure {
    pub gamma: DVector<f64>,
}

/// Law of the absorbing state, over `U ∪ E` in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct HittingDistribution {
    pub lambda: DVector<f64>,
}

impl HittingDistribution {
    /// Probability mass on the forbidden states.
    pub fn forbidden_mass(&self, partition: &StatePartition) -> f64 {
        self.lambda.rows(0, partition.n_forbidden()).sum()
    }
}

fn check_initial(model: &MdpModel, initial: &DVector<f64>) -> Result<()> {
    if initial.len() != model.n_states() {
        return Err(Error::DimensionMismatch(format!(
            "initial distribution has {} entries, model has {} states",
            initial.len(),
            model.n_states()
        )));
    }
    if initial.iter().any(|&x| x < 0.0) || (initial.sum() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(
            "initial distribution must be nonnegative and sum to 1".into(),
        ));
    }
    Ok(())
}

/// `γ = μ|_H G`.
pub fn occupation(model: &MdpModel, policy: &Policy, initial: &DVector<f64>) -> Result<OccupationMeasure> {
    check_initial(model, initial)?;
    let chain = InducedChain::new(model, policy)?;
    Ok(occupation_from(&chain, initial))
}

pub fn occupation_from(chain: &InducedChain, initial: &DVector<f64>) -> OccupationMeasure {
    let h = chain.q().nrows();
    let mu_h = initial.rows(0, h);
    OccupationMeasure {
        gamma: chain.g().tr_mul(&mu_h),
    }
}

/// `λ = μ|_H G [P_H^U | P_H^E] + μ|_{U∪E}`.
pub fn hitting(model: &MdpModel, policy: &Policy, initial: &DVector<f64>) -> Result<HittingDistribution> {
    check_initial(model, initial)?;
    let chain = InducedChain::new(model, policy)?;
    Ok(hitting_from(&chain, initial))
}

pub fn hitting_from(chain: &InducedChain, initial: &DVector<f64>) -> HittingDistribution {
    let part = &chain.blocks.partition;
    let h = part.n_taboo();
    let b = part.n_states() - h;
    let gamma = occupation_from(chain, initial).gamma;
    let exits = chain.p().view((0, h), (h, b));
    let lambda = exits.tr_mul(&gamma) + initial.rows(h, b);
    HittingDistribution { lambda }
}

/// `‖λ̂ − μ − γ̂ (P − I)‖_∞` with `γ̂` zero on `U ∪ E` and `λ̂` zero on `H`.
pub fn evolution_residual(
    initial: &DVector<f64>,
    occupation: &OccupationMeasure,
    hitting: &HittingDistribution,
    p: &DMatrix<f64>,
) -> Result<f64> {
    let n = initial.len();
    let h = occupation.gamma.len();
    if p.shape() != (n, n) || h + hitting.lambda.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "μ has {n} entries, γ {h}, λ {}, P is {:?}",
            hitting.lambda.len(),
            p.shape()
        )));
    }
    let mut gamma_full = DVector::zeros(n);
    gamma_full.rows_mut(0, h).copy_from(&occupation.gamma);
    let mut lambda_full = DVector::zeros(n);
    lambda_full.rows_mut(h, n - h).copy_from(&hitting.lambda);
    let generator = p - DMatrix::<f64>::identity(n, n);
    let flow = generator.tr_mul(&gamma_full);
    Ok((lambda_full - initial - flow).amax())
}

/// Point mass on `state`.
pub fn point_mass(n: usize, state: usize) -> DVector<f64> {
    let mut mu = DVector::zeros(n);
    mu[state] = 1.0;
    mu
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn m(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    fn ex1_chain() -> InducedChain {
        InducedChain::new(&fixtures::ex1(), &fixtures::ex1_policy(0, 1, 0)).unwrap()
    }

    #[test]
    fn ex1_blocks() {
        let chain = ex1_chain();
        assert_eq!(chain.blocks.q, m(3, 3, &[0., 0., 0., 0.8, 0., 0.2, 1., 0., 0.]));
        assert_eq!(chain.blocks.phu, m(3, 1, &[0.4, 0., 0.]));
        assert_eq!(chain.blocks.phe, m(3, 1, &[0.6, 0., 0.]));
    }

    #[test]
    fn identity_all_taboo() {
        let p = DMatrix::<f64>::identity(3, 3);
        let d = decompose(&p, &StatePartition::canonical(3, 0, 0)).unwrap();
        assert_eq!(d.q, p);
        assert_eq!(d.phu.shape(), (3, 0));
        assert_eq!(d.phe.shape(), (3, 0));
    }

    #[test]
    fn non_canonical_partition_rejected() {
        let part = StatePartition {
            taboo: vec![1],
            forbidden: vec![],
            target: vec![0],
        };
        assert!(matches!(
            decompose(&DMatrix::identity(2, 2), &part),
            Err(Error::OrderingMismatch)
        ));
    }

    #[test]
    fn transience_cases() {
        let t = check_transient(&ex1_chain().blocks.q);
        assert!(t.transient);
        assert_eq!(t.spectral_radius, 0.0);

        let t = check_transient(&m(1, 1, &[1.0]));
        assert!(!t.transient);
        assert!((t.spectral_radius - 1.0).abs() < 1e-12);

        let t = check_transient(&m(1, 1, &[0.5]));
        assert!(t.transient);
        assert!((t.spectral_radius - 0.5).abs() < 1e-12);

        // period-2 recurrent class
        let t = check_transient(&m(2, 2, &[0., 1., 1., 0.]));
        assert!(!t.transient);
        assert!((t.spectral_radius - 1.0).abs() < 1e-9);
    }

    #[test]
    fn green_closed_forms() {
        let g = green(&ex1_chain().blocks.q).unwrap().g;
        let expected = m(3, 3, &[1., 0., 0., 1., 1., 0.2, 1., 0., 1.]);
        assert!((g - expected).amax() < 1e-15);

        let g = green(&DMatrix::zeros(2, 2)).unwrap().g;
        assert_eq!(g, DMatrix::identity(2, 2));

        let g = green(&m(1, 1, &[0.5])).unwrap().g;
        assert!((g[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn green_rejects_recurrent_class() {
        let q = m(2, 2, &[0.5, 0.5, 0.0, 1.0]);
        assert!(matches!(green(&q), Err(Error::NotTransient { .. })));
    }

    #[test]
    fn neumann_matches_green() {
        let q = m(2, 2, &[0.3, 0.4, 0.5, 0.1]);
        let g = green(&q).unwrap().g;
        let (s, k) = neumann_series(&q, 1e-12, 10_000).unwrap();
        assert!(k > 10);
        assert!((g - s).amax() < 1e-8);
    }

    #[test]
    fn occupation_rows_of_green() {
        let model = fixtures::ex1();
        let pi = fixtures::ex1_policy(0, 1, 0);
        let g = occupation(&model, &pi, &point_mass(5, 1)).unwrap().gamma;
        assert!((g - DVector::from_vec(vec![1.0, 1.0, 0.2])).amax() < 1e-15);
        let g = occupation(&model, &pi, &point_mass(5, 2)).unwrap().gamma;
        assert!((g - DVector::from_vec(vec![1.0, 0.0, 1.0])).amax() < 1e-15);
        let g = occupation(&model, &pi, &point_mass(5, 4)).unwrap().gamma;
        assert_eq!(g, DVector::zeros(3));
    }

    #[test]
    fn hitting_cases() {
        let model = fixtures::ex1();
        let pi = fixtures::ex1_policy(0, 1, 0);
        for start in [0, 1] {
            let l = hitting(&model, &pi, &point_mass(5, start)).unwrap().lambda;
            assert!((l[0] - 0.4).abs() < 1e-15 && (l[1] - 0.6).abs() < 1e-15);
        }
        let l = hitting(&model, &pi, &point_mass(5, 4)).unwrap().lambda;
        assert_eq!(l, DVector::from_vec(vec![0.0, 1.0]));
    }

    #[test]
    fn evolution_residual_cases() {
        let model = fixtures::ex1();
        let pi = fixtures::ex1_policy(0, 1, 0);
        let chain = InducedChain::new(&model, &pi).unwrap();
        let mu = DVector::from_vec(vec![0.2, 0.3, 0.1, 0.15, 0.25]);
        let gamma = occupation_from(&chain, &mu);
        let mut lambda = hitting_from(&chain, &mu);
        let r = evolution_residual(&mu, &gamma, &lambda, chain.p()).unwrap();
        assert!(r <= 1e-10, "{r}");

        lambda.lambda[0] += 0.1;
        let r = evolution_residual(&mu, &gamma, &lambda, chain.p()).unwrap();
        assert!(r >= 0.1 - 1e-10);

        let mu = point_mass(5, 4);
        let gamma = OccupationMeasure { gamma: DVector::zeros(3) };
        let lambda = HittingDistribution { lambda: mu.rows(3, 2).into_owned() };
        assert_eq!(evolution_residual(&mu, &gamma, &lambda, chain.p()).unwrap(), 0.0);

        let short = HittingDistribution { lambda: DVector::zeros(1) };
        assert!(matches!(
            evolution_residual(&mu, &gamma, &short, chain.p()),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
