//! Class-partitioned dictionaries and the shared linear-algebra cache.

use std::collections::VecDeque;
use std::ops::Range;
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::{Cholesky, DMatrix, DVector, DVectorView, Dyn};

use crate::error::{invalid, Error, Result};

/// Factorizations kept per dictionary before the oldest is evicted.
const FACTOR_CAPACITY: usize = 64;
const POWER_ITERATIONS: usize = 100;

type Factor = Arc<Cholesky<f64, Dyn>>;

/// Atoms grouped contiguously by class: class `c` (0-based index) owns
/// columns `class_offsets[c]..class_offsets[c + 1]`.
#[derive(Debug)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
    class_offsets: Vec<usize>,
    labels_per_atom: Vec<usize>,
    cache: GramCache,
}

impl Clone for Dictionary {
    fn clone(&self) -> Self {
        Self {
            atoms: self.atoms.clone(),
            class_offsets: self.class_offsets.clone(),
            labels_per_atom: self.labels_per_atom.clone(),
            cache: GramCache::new(&self.atoms),
        }
    }
}

impl Dictionary {
    /// Groups the columns of `samples` by their class label, keeping the
    /// original order within a class. The class count is the largest label.
    pub fn assemble(samples: &DMatrix<f64>, labels: &[usize]) -> Result<Self> {
        let classes = labels.iter().copied().max().unwrap_or(0);
        Self::assemble_with_classes(samples, labels, classes)
    }

    /// As [`Dictionary::assemble`] with an explicit class count `C`; every
    /// class in `1..=C` must own at least one column.
    pub fn assemble_with_classes(
        samples: &DMatrix<f64>,
        labels: &[usize],
        classes: usize,
    ) -> Result<Self> {
        if labels.len() != samples.ncols() {
            return Err(Error::Dimension(format!(
                "{} labels for {} columns",
                labels.len(),
                samples.ncols()
            )));
        }
        if classes == 0 {
            return Err(Error::Empty("dictionary has no classes"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l > classes) {
            return Err(invalid("labels", format!("label {bad} outside 1..={classes}")));
        }
        if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                field: "atoms",
                index,
            });
        }
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.sort_by_key(|&j| labels[j]);

        let mut class_offsets = vec![0; classes + 1];
        for &l in labels {
            class_offsets[l] += 1;
        }
        for c in 0..classes {
            if class_offsets[c + 1] == 0 {
                return Err(Error::EmptyClass(c + 1));
            }
            class_offsets[c + 1] += class_offsets[c];
        }

        let atoms = samples.select_columns(&order);
        let labels_per_atom = order.iter().map(|&j| labels[j]).collect();
        let cache = GramCache::new(&atoms);
        Ok(Self {
            atoms,
            class_offsets,
            labels_per_atom,
            cache,
        })
    }

    /// `L x M` atom matrix.
    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    /// Signal dimension `L`.
    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    /// Atom count `M`.
    pub fn len(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.ncols() == 0
    }

    /// Class count `C`.
    pub fn classes(&self) -> usize {
        self.class_offsets.len() - 1
    }

    pub fn class_offsets(&self) -> &[usize] {
        &self.class_offsets
    }

    /// Class id (1-based) of every atom.
    pub fn labels_per_atom(&self) -> &[usize] {
        &self.labels_per_atom
    }

    /// Column range owned by the class at 0-based index `class_index`.
    pub fn class_range(&self, class_index: usize) -> Range<usize> {
        self.class_offsets[class_index]..self.class_offsets[class_index + 1]
    }

    /// The sub-dictionary `D_i` for 0-based class index `class_index`.
    pub fn sub_dictionary(&self, class_index: usize) -> DMatrix<f64> {
        let r = self.class_range(class_index);
        self.atoms.columns(r.start, r.len()).into_owned()
    }

    pub fn cache(&self) -> &GramCache {
        &self.cache
    }

    /// `Dᵀx`.
    pub fn correlate(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_signal(x)?;
        Ok(self.atoms.tr_mul(x))
    }

    /// `Dα`.
    pub fn synthesize(&self, code: &DVector<f64>) -> DVector<f64> {
        &self.atoms * code
    }

    /// Solves `(DᵀD + ρI) w = rhs`.
    pub fn solve_regularized(&self, rho: f64, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        self.cache.solve_regularized(rho, rhs)
    }

    pub(crate) fn check_signal(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "signal has {} entries, dictionary atoms have {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Precomputed `DᵀD` plus a store of `(DᵀD + ρI)` Cholesky factors keyed by
/// the exact bit pattern of `ρ`.
///
/// Reads are concurrent; a miss factorizes outside the lock and then
/// inserts, keeping whichever factor reached the store first.
#[derive(Debug)]
pub struct GramCache {
    gram: DMatrix<f64>,
    factors: RwLock<VecDeque<(u64, Factor)>>,
    lipschitz: OnceLock<f64>,
}

impl GramCache {
    pub fn new(atoms: &DMatrix<f64>) -> Self {
        let mut gram = atoms.tr_mul(atoms);
        // Exact symmetry regardless of summation order in the product.
        for i in 0..gram.nrows() {
            for j in 0..i {
                let v = gram[(i, j)];
                gram[(j, i)] = v;
            }
        }
        Self {
            gram,
            factors: RwLock::new(VecDeque::new()),
            lipschitz: OnceLock::new(),
        }
    }

    /// `DᵀD`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Number of factorizations currently stored.
    pub fn stored_factorizations(&self) -> usize {
        self.factors.read().unwrap().len()
    }

    pub fn clear(&self) {
        self.factors.write().unwrap().clear();
    }

    /// Largest eigenvalue of `DᵀD`, estimated by power iteration and
    /// computed once.
    pub fn lipschitz(&self) -> f64 {
        *self.lipschitz.get_or_init(|| power_iteration(&self.gram, POWER_ITERATIONS))
    }

    fn factor(&self, rho: f64) -> Result<Factor> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(invalid("rho", format!("{rho} must be positive and finite")));
        }
        let key = rho.to_bits();
        if let Some(f) = lookup(&self.factors.read().unwrap(), key) {
            return Ok(f);
        }
        let fresh = Arc::new(factorize(&self.gram, rho)?);
        let mut store = self.factors.write().unwrap();
        if let Some(f) = lookup(&store, key) {
            return Ok(f);
        }
        if store.len() == FACTOR_CAPACITY {
            store.pop_front();
        }
        store.push_back((key, Arc::clone(&fresh)));
        Ok(fresh)
    }

    /// Ensures factors for every `ρ` in `rhos` are stored, so parallel
    /// readers that follow all hit the store.
    pub fn prefactor(&self, rhos: &[f64]) -> Result<()> {
        for &rho in rhos {
            self.factor(rho)?;
        }
        Ok(())
    }

    /// Solves `(DᵀD + ρI) w = rhs`, factorizing at most once per distinct `ρ`
    /// while the factor stays in the store.
    pub fn solve_regularized(&self, rho: f64, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        if rhs.len() != self.gram.nrows() {
            return Err(Error::Dimension(format!(
                "right-hand side has {} entries, expected {}",
                rhs.len(),
                self.gram.nrows()
            )));
        }
        Ok(self.factor(rho)?.solve(rhs))
    }

    /// Solve against a factorization computed on the spot, bypassing the
    /// store.
    pub fn solve_uncached(&self, rho: f64, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(invalid("rho", format!("{rho} must be positive and finite")));
        }
        Ok(factorize(&self.gram, rho)?.solve(rhs))
    }
}

fn lookup(store: &VecDeque<(u64, Factor)>, key: u64) -> Option<Factor> {
    store
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, f)| Arc::clone(f))
}

fn factorize(gram: &DMatrix<f64>, rho: f64) -> Result<Cholesky<f64, Dyn>> {
    let mut m = gram.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += rho;
    }
    Cholesky::new(m).ok_or_else(|| Error::NotPositiveDefinite(format!("DᵀD + {rho}·I")))
}

pub(crate) fn power_iteration(gram: &DMatrix<f64>, iters: usize) -> f64 {
    let n = gram.nrows();
    if n == 0 {
        return 0.0;
    }
    // Deterministic start with no zero entries, so it is not orthogonal to
    // the dominant eigenvector of a nonnegative-spectrum Gram matrix by
    // construction.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_75).fract());
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..iters {
        let w = gram * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        estimate = v.dot(&w);
        v = w / norm;
    }
    estimate.max((gram * &v).dot(&v))
}

/// Solves the normal equations of `D_S` restricted to `support`, returning
/// the least-squares coefficients in support order.
pub(crate) fn least_squares_on_support(
    dict: &Dictionary,
    support: &[usize],
    x: DVectorView<'_, f64>,
) -> DVector<f64> {
    let k = support.len();
    if k == 0 {
        return DVector::zeros(0);
    }
    let gram = dict.cache.gram();
    let sub = DMatrix::from_fn(k, k, |i, j| gram[(support[i], support[j])]);
    let rhs = DVector::from_fn(k, |i, _| dict.atoms.column(support[i]).dot(&x));
    match Cholesky::new(sub.clone()) {
        Some(f) => f.solve(&rhs),
        None => {
            // Numerically dependent atoms: retry with a ridge scaled to the
            // sub-Gram trace.
            let ridge = f64::EPSILON * sub.trace().max(1.0);
            let mut reg = sub;
            for i in 0..k {
                reg[(i, i)] += ridge * 16.0;
            }
            Cholesky::new(reg)
                .map(|f| f.solve(&rhs))
                .unwrap_or_else(|| DVector::zeros(k))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{gaussian_matrix, normalize_columns};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_dict(l: usize, m: usize, seed: u64) -> Dictionary {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let atoms = gaussian_matrix(&mut rng, l, m);
        Dictionary::assemble(&atoms, &vec![1; m]).unwrap()
    }

    #[test]
    fn columns_are_grouped_by_class() {
        let samples = DMatrix::from_row_slice(1, 4, &[10.0, 20.0, 30.0, 40.0]);
        let d = Dictionary::assemble(&samples, &[2, 1, 2, 1]).unwrap();
        assert_eq!(d.class_offsets(), &[0, 2, 4]);
        assert_eq!(d.labels_per_atom(), &[1, 1, 2, 2]);
        assert_eq!(d.atoms().as_slice(), &[20.0, 40.0, 10.0, 30.0]);
        assert_eq!(d.class_range(1), 2..4);
    }

    #[test]
    fn single_class_offsets() {
        let d = Dictionary::assemble(&DMatrix::from_element(2, 3, 1.0), &[1, 1, 1]).unwrap();
        assert_eq!(d.class_offsets(), &[0, 3]);
    }

    #[test]
    fn assembly_errors() {
        let s = DMatrix::from_element(2, 2, 1.0);
        assert!(matches!(
            Dictionary::assemble_with_classes(&s, &[1, 3], 3),
            Err(Error::EmptyClass(2))
        ));
        assert!(Dictionary::assemble(&s, &[0, 1]).is_err());
        assert!(Dictionary::assemble_with_classes(&s, &[1, 4], 3).is_err());
    }

    #[test]
    fn sub_dictionaries_reconstitute_atoms() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples = gaussian_matrix(&mut rng, 5, 9);
        let labels = [3, 1, 2, 2, 3, 1, 1, 2, 3];
        let d = Dictionary::assemble(&samples, &labels).unwrap();
        let blocks: Vec<_> = (0..3).map(|c| d.sub_dictionary(c)).collect();
        let stacked = DMatrix::from_columns(
            &blocks
                .iter()
                .flat_map(|b| b.column_iter().map(|c| c.into_owned()).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        );
        assert_eq!(&stacked, d.atoms());
    }

    #[test]
    fn zero_dictionary_halves_rhs() {
        let d = Dictionary::assemble(&DMatrix::zeros(3, 4), &[1; 4]).unwrap();
        let b = DVector::from_vec(vec![1.0, -2.0, 3.0, 4.0]);
        // The Cholesky factor of 2I is sqrt(2)I, so allow a few ulps.
        assert!((d.solve_regularized(2.0, &b).unwrap() - &b / 2.0).amax() <= 1e-15);
    }

    #[test]
    fn orthonormal_dictionary_halves_rhs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = crate::synthetic::random_orthonormal(&mut rng, 6);
        let d = Dictionary::assemble(&q, &[1; 6]).unwrap();
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = d.solve_regularized(1.0, &b).unwrap();
        assert!((w - &b / 2.0).amax() < 1e-14);
    }

    #[test]
    fn rho_must_be_positive() {
        let d = random_dict(3, 4, 0);
        let b = DVector::zeros(4);
        assert!(d.solve_regularized(0.0, &b).is_err());
        assert!(d.solve_regularized(-1.0, &b).is_err());
        assert!(d.solve_regularized(f64::NAN, &b).is_err());
    }

    #[test]
    fn solve_matches_dense_lu_oracle() {
        let d = random_dict(30, 60, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for rho in [0.1, 1.0, 5.0] {
            let b = gaussian_matrix(&mut rng, 60, 1).column(0).into_owned();
            let w = d.solve_regularized(rho, &b).unwrap();
            let system = d.atoms().tr_mul(d.atoms()) + DMatrix::identity(60, 60) * rho;
            let oracle = system.clone().lu().solve(&b).unwrap();
            assert!((&system * &w - &b).norm() <= 1e-10 * b.norm());
            assert!((&w - &oracle).amax() <= 1e-9 * oracle.amax().max(1.0));
        }
        assert_eq!(d.cache().stored_factorizations(), 3);
    }

    #[test]
    fn gram_is_symmetric() {
        let d = random_dict(12, 20, 3);
        let g = d.cache().gram();
        assert_eq!(g, &g.transpose());
    }

    #[test]
    fn cached_and_fresh_solves_agree_bitwise() {
        let d = random_dict(10, 25, 5);
        let b = DVector::from_fn(25, |i, _| (i as f64).sin());
        let first = d.solve_regularized(0.7, &b).unwrap();
        let again = d.solve_regularized(0.7, &b).unwrap();
        let fresh = d.cache().solve_uncached(0.7, &b).unwrap();
        assert_eq!(first, again);
        assert_eq!(first, fresh);
        assert_eq!(d.cache().stored_factorizations(), 1);
    }

    #[test]
    fn store_is_bounded() {
        let d = random_dict(4, 6, 2);
        let b = DVector::from_element(6, 1.0);
        for i in 0..(FACTOR_CAPACITY + 10) {
            d.solve_regularized(1.0 + i as f64, &b).unwrap();
        }
        assert_eq!(d.cache().stored_factorizations(), FACTOR_CAPACITY);
    }

    #[test]
    fn lipschitz_matches_symmetric_eigen() {
        let d = random_dict(15, 30, 9);
        let eig = d.cache().gram().clone().symmetric_eigen();
        let top = eig.eigenvalues.max();
        assert!((d.cache().lipschitz() - top).abs() <= 1e-6 * top);
    }

    #[test]
    fn normalized_dictionary_has_unit_atoms() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut a = gaussian_matrix(&mut rng, 8, 5);
        normalize_columns(&mut a);
        let d = Dictionary::assemble(&a, &[1, 2, 1, 2, 1]).unwrap();
        for c in d.atoms().column_iter() {
            assert!((c.norm() - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn solve_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, rho in 0.05f64..5.0) {
            let d = random_dict(8, 12, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let b1 = gaussian_matrix(&mut rng, 12, 1).column(0).into_owned();
            let b2 = gaussian_matrix(&mut rng, 12, 1).column(0).into_owned();
            let lhs = d.solve_regularized(rho, &(&b1 * a + &b2)).unwrap();
            let rhs = d.solve_regularized(rho, &b1).unwrap() * a + d.solve_regularized(rho, &b2).unwrap();
            prop_assert!((lhs - rhs).amax() <= 1e-10);
        }
    }
}
