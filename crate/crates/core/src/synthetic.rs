//! Seeded synthetic generators: Gaussian and orthonormal matrices, planted
//! sparse codes, and class-per-subspace pixel sets.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::LabeledCube;
use crate::dictionary::Dictionary;

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    // Column-major fill keeps the stream order tied to column order.
    DMatrix::from_iterator(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)))
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| rng.sample(StandardNormal)))
}

/// Scales every nonzero column to unit Euclidean norm.
pub fn normalize_columns(m: &mut DMatrix<f64>) {
    for mut c in m.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
    }
}

/// Haar-ish random orthonormal `n x n` matrix (QR of a Gaussian matrix).
pub fn random_orthonormal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    random_orthonormal_columns(rng, n, n)
}

/// `rows x cols` matrix with orthonormal columns, `cols <= rows`.
pub fn random_orthonormal_columns<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
) -> DMatrix<f64> {
    assert!(cols <= rows);
    gaussian_matrix(rng, rows, cols).qr().q()
}

/// A `k`-sparse length-`m` vector whose support is uniform and whose
/// nonzeros have magnitude in `[0.5, 1.5]` with random signs.
pub fn planted_sparse<R: Rng + ?Sized>(rng: &mut R, m: usize, k: usize) -> DVector<f64> {
    let mut v = DVector::zeros(m);
    for j in sample(rng, m, k) {
        let mag: f64 = rng.random_range(0.5..1.5);
        v[j] = if rng.random::<bool>() { mag } else { -mag };
    }
    v
}

/// Pixels drawn from `classes` random subspaces of `R^dim`, one subspace of
/// dimension `rank` per class.
#[derive(Debug, Clone)]
pub struct SubspaceData {
    /// Orthonormal basis per class (`dim x rank`).
    pub bases: Vec<DMatrix<f64>>,
    pub dictionary: DMatrix<f64>,
    pub dictionary_labels: Vec<usize>,
    pub train: DMatrix<f64>,
    pub train_labels: Vec<usize>,
    pub test: DMatrix<f64>,
    pub test_labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct SubspaceSpec {
    pub classes: usize,
    pub dim: usize,
    pub rank: usize,
    pub atoms_per_class: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Standard deviation of additive Gaussian noise on train/test pixels,
    /// applied before normalization.
    pub noise: f64,
}

impl Default for SubspaceSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            dim: 50,
            rank: 5,
            atoms_per_class: 10,
            train_per_class: 60,
            test_per_class: 200,
            noise: 0.01,
        }
    }
}

impl SubspaceSpec {
    /// Draws the data set. The class subspaces are spanned by disjoint
    /// column blocks of a single random orthonormal matrix, so they are
    /// mutually orthogonal. All pixels are unit-norm.
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> SubspaceData {
        assert!(self.classes * self.rank <= self.dim);
        let q = random_orthonormal_columns(rng, self.dim, self.classes * self.rank);
        let bases: Vec<DMatrix<f64>> = (0..self.classes)
            .map(|c| q.columns(c * self.rank, self.rank).into_owned())
            .collect();

        let draw = |per_class: usize, noise: f64, rng: &mut R| {
            let mut cols = Vec::with_capacity(per_class * self.classes);
            let mut labels = Vec::with_capacity(per_class * self.classes);
            for (c, basis) in bases.iter().enumerate() {
                for _ in 0..per_class {
                    let mut x = basis * gaussian_vector(rng, self.rank);
                    if noise > 0.0 {
                        x += gaussian_vector(rng, self.dim) * noise;
                    }
                    let n = x.norm();
                    cols.push(x / n);
                    labels.push(c + 1);
                }
            }
            let m = if cols.is_empty() { DMatrix::zeros(self.dim, 0) } else { DMatrix::from_columns(&cols) };
            (m, labels)
        };
        let (dictionary, dictionary_labels) = draw(self.atoms_per_class, 0.0, rng);
        let (train, train_labels) = draw(self.train_per_class, self.noise, rng);
        let (test, test_labels) = draw(self.test_per_class, self.noise, rng);
        SubspaceData {
            bases,
            dictionary,
            dictionary_labels,
            train,
            train_labels,
            test,
            test_labels,
        }
    }
}

/// Packs columns into a `1 x n` labeled cube (one pixel per column).
pub fn cube_from_columns(pixels: &DMatrix<f64>, labels: &[usize], classes: usize) -> LabeledCube {
    let n = pixels.ncols();
    let bands = pixels.nrows();
    let mut data = vec![0.0; n * bands];
    for (p, col) in pixels.column_iter().enumerate() {
        for (b, &v) in col.iter().enumerate() {
            data[b * n + p] = v;
        }
    }
    LabeledCube::new(
        1,
        n,
        bands,
        classes,
        data,
        labels.iter().map(|&l| l as u32).collect(),
    )
    .expect("columns form a valid cube")
}

/// A seeded `dim x atoms` Gaussian dictionary with unit-norm columns split
/// evenly over `classes`, a Gaussian signal and a target class (0-based).
pub fn random_problem(seed: u64, dim: usize, atoms: usize, classes: usize) -> (Dictionary, DVector<f64>, usize) {
    assert!(classes >= 1 && atoms >= classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = gaussian_matrix(&mut rng, dim, atoms);
    normalize_columns(&mut a);
    let labels: Vec<usize> = (0..atoms).map(|j| 1 + j * classes / atoms).collect();
    let x = gaussian_vector(&mut rng, dim);
    let target = rng.random_range(0..classes);
    let dict = Dictionary::assemble(&a, &labels).expect("labels cover every class");
    (dict, x, target)
}
