//! Schmidt spectra of sums of product states.
//!
//! For `|Σ⟩ = Σ_i |x_A^i⟩ ⊗ |x_B^i⟩` the Schmidt values follow from the two
//! `N_Σ × N_Σ` Gram matrices `X_A`, `X_B` of region-restricted overlaps:
//! with `X_R = U_R D_R U_Rᵀ` (null directions dropped),
//! `M = D_A^{1/2} U_Aᵀ U_B D_B^{1/2}` has the unnormalized Schmidt values as
//! its singular values. Nothing of size `2^N` is ever formed, except by
//! [`dense_oracle`], which exists to check the Gram route on small systems.

use rayon::prelude::*;

use crate::dataset::{central_square, central_window_squares, top_half_partition, Partition};
use crate::embedding::{LogProduct, ProductState};
use crate::tensor::{eigh_truncated, singular_values, svd, DenseTensor, DEFAULT_EIGH_TOL};
use crate::{Error, Result};

/// Default relative truncation for Gram eigenvalues and Schmidt values.
pub const DEFAULT_TOL: f64 = DEFAULT_EIGH_TOL;

/// Largest lattice [`dense_oracle`] will materialize.
pub const DENSE_ORACLE_MAX_SITES: usize = 20;

/// Region-restricted Gram matrices `(X_A)_{ij} = ⟨x_A^i|x_A^j⟩` and likewise for `B`.
#[derive(Clone, Debug)]
pub struct GramPair {
    pub x_a: DenseTensor,
    pub x_b: DenseTensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchmidtResult {
    /// Retained Schmidt values of the normalized state, non-increasing, `Σ λ² = 1`.
    pub lambdas: Vec<f64>,
    pub rank: usize,
    /// `−Σ λ² ln λ²`, in nats.
    pub entropy: f64,
    /// Retained ranks of `X_A` and `X_B`.
    pub ranks_ab: (usize, usize),
    /// `⟨Σ|Σ⟩` before normalization: the sum of squared raw singular values.
    pub norm_sq: f64,
    pub tol: f64,
}

/// Checks state lengths against the partition.
fn check_states(states: &[ProductState], partition: &Partition) -> Result<()> {
    if states.is_empty() {
        return Err(Error::Input("need at least one state".into()));
    }
    if let Some((i, s)) = states.iter().enumerate().find(|(_, s)| s.len() != partition.n_sites) {
        return Err(Error::Dimension(format!(
            "state {i} has {} sites but the partition covers {}",
            s.len(),
            partition.n_sites
        )));
    }
    Ok(())
}

/// Symmetric matrix from the upper triangle, filled in parallel by rows.
fn symmetric(n: usize, entry: impl Fn(usize, usize) -> f64 + Sync) -> DenseTensor {
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|i| (i..n).map(|j| entry(i, j)).collect()).collect();
    let mut data = vec![0.0; n * n];
    for (i, row) in rows.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            data[i * n + i + k] = v;
            data[(i + k) * n + i] = v;
        }
    }
    DenseTensor::new(vec![n, n], data).expect("square shape")
}

fn region_gram(states: &[ProductState], region: &[usize]) -> DenseTensor {
    symmetric(states.len(), |i, j| states[i].log_overlap_on(&states[j], region).value())
}

/// `X_A` and `X_B` for a bipartition; products are accumulated in log space.
pub fn gram_matrices(states: &[ProductState], partition: &Partition) -> Result<GramPair> {
    check_states(states, partition)?;
    Ok(GramPair { x_a: region_gram(states, &partition.region_a), x_b: region_gram(states, &partition.region_b) })
}

/// Whole-lattice pair overlaps of one state list, so that for a small region
/// `A` only `X_A` has to be built site by site and `X_B = X_total / X_A`.
pub struct GramCache<'a> {
    states: &'a [ProductState],
    /// Upper triangle, row-major, starting at `row_start(n, i)` for row `i`.
    totals: Vec<LogProduct>,
}

impl<'a> GramCache<'a> {
    pub fn new(states: &'a [ProductState]) -> Result<Self> {
        let n_sites = states.first().map_or(0, ProductState::len);
        if let Some((i, s)) = states.iter().enumerate().find(|(_, s)| s.len() != n_sites) {
            return Err(Error::Dimension(format!("state {i} has {} sites, expected {n_sites}", s.len())));
        }
        let n = states.len();
        let totals = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| (i..n).map(move |j| states[i].log_overlap(&states[j])))
            .collect();
        Ok(Self { states, totals })
    }

    fn total(&self, i: usize, j: usize) -> LogProduct {
        self.totals[row_start(self.states.len(), i) + j - i]
    }

    /// Grams for the first `count` states: the smaller region is computed
    /// directly and the other by dividing it out of the whole-lattice overlap.
    pub fn grams(&self, partition: &Partition, count: usize) -> Result<GramPair> {
        if count > self.states.len() {
            return Err(Error::Config(format!("cache holds {} states, asked for {count}", self.states.len())));
        }
        let states = &self.states[..count];
        check_states(states, partition)?;
        let (small, a_is_small) = if partition.region_a.len() <= partition.region_b.len() {
            (&partition.region_a, true)
        } else {
            (&partition.region_b, false)
        };
        let parts: Vec<Vec<(f64, f64)>> = (0..count)
            .into_par_iter()
            .map(|i| {
                (i..count)
                    .map(|j| {
                        let part = states[i].log_overlap_on(&states[j], small);
                        (part.value(), self.total(i, j).without(&part).value())
                    })
                    .collect()
            })
            .collect();
        let mut small_data = vec![0.0; count * count];
        let mut rest_data = vec![0.0; count * count];
        for (i, row) in parts.iter().enumerate() {
            for (k, &(s, r)) in row.iter().enumerate() {
                let j = i + k;
                small_data[i * count + j] = s;
                small_data[j * count + i] = s;
                rest_data[i * count + j] = r;
                rest_data[j * count + i] = r;
            }
        }
        let small_m = DenseTensor::new(vec![count, count], small_data)?;
        let rest_m = DenseTensor::new(vec![count, count], rest_data)?;
        Ok(if a_is_small {
            GramPair { x_a: small_m, x_b: rest_m }
        } else {
            GramPair { x_a: rest_m, x_b: small_m }
        })
    }
}

/// Index of `(i, i)` in a row-major upper triangle of an `n × n` matrix.
fn row_start(n: usize, i: usize) -> usize {
    i * n - i * i.saturating_sub(1) / 2
}

/// `−Σ λ² ln λ²` with `0 · ln 0 = 0`. The input must satisfy `Σ λ² = 1` to 1e-8.
pub fn entropy(lambdas: &[f64]) -> Result<f64> {
    let total: f64 = lambdas.iter().map(|l| l * l).sum();
    if !((total - 1.0).abs() <= 1e-8) {
        return Err(Error::Input(format!("Schmidt values are not normalized: Σλ² = {total}")));
    }
    Ok(lambdas
        .iter()
        .map(|l| l * l)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum())
}

/// Normalizes raw singular values, keeping those above `tol · s_max`.
fn finish(raw: &[f64], tol: f64, ranks_ab: (usize, usize)) -> Result<SchmidtResult> {
    let norm_sq: f64 = raw.iter().map(|s| s * s).sum();
    let s_max = raw.iter().copied().fold(0.0, f64::max);
    if !(s_max > 0.0) || !norm_sq.is_finite() {
        return Err(Error::Degenerate("the summed state is the zero vector".into()));
    }
    let kept: Vec<f64> = raw.iter().copied().filter(|&s| s > tol * s_max).collect();
    let kept_norm = kept.iter().map(|s| s * s).sum::<f64>().sqrt();
    let lambdas: Vec<f64> = kept.iter().map(|s| s / kept_norm).collect();
    let entropy = entropy(&lambdas)?;
    Ok(SchmidtResult { rank: lambdas.len(), lambdas, entropy, ranks_ab, norm_sq, tol })
}

struct GramFactors {
    /// `U_R D_R^{1/2}` per region, `N × m`.
    half_a: DenseTensor,
    half_b: DenseTensor,
    eig_a: crate::tensor::TruncatedEigh,
    eig_b: crate::tensor::TruncatedEigh,
}

fn factor(grams: &GramPair, tol: f64) -> Result<GramFactors> {
    let n = grams.x_a.nrows();
    for (name, x) in [("X_A", &grams.x_a), ("X_B", &grams.x_b)] {
        if x.rank() != 2 || x.nrows() != n || x.ncols() != n {
            return Err(Error::Dimension(format!("{name} has shape {:?}, expected {n}x{n}", x.shape())));
        }
    }
    let eig_a = eigh_truncated(&grams.x_a, tol)?;
    let eig_b = eigh_truncated(&grams.x_b, tol)?;
    if eig_a.rank() == 0 || eig_b.rank() == 0 {
        return Err(Error::Degenerate("a Gram matrix has no eigenvalue above the cut".into()));
    }
    let scale = |e: &crate::tensor::TruncatedEigh| {
        let m = e.rank();
        let mut u = e.eigvecs.clone();
        for row in u.data_mut().chunks_mut(m) {
            for (x, d) in row.iter_mut().zip(&e.eigvals) {
                *x *= d.sqrt();
            }
        }
        u
    };
    Ok(GramFactors { half_a: scale(&eig_a), half_b: scale(&eig_b), eig_a, eig_b })
}

/// `M = D_A^{1/2} U_Aᵀ U_B D_B^{1/2}`; its singular values are the raw Schmidt values.
fn schmidt_matrix(f: &GramFactors) -> Result<DenseTensor> {
    crate::tensor::matmul_tn(&f.half_a, &f.half_b)
}

/// Schmidt values and entropy from the two Gram matrices.
///
/// Gram eigenvalues at or below `tol · max(λ_max, 1)` are dropped, and so are
/// singular values of `M` at or below `tol` times the largest one.
pub fn schmidt_from_grams(grams: &GramPair, tol: f64) -> Result<SchmidtResult> {
    let f = factor(grams, tol)?;
    let raw = singular_values(&schmidt_matrix(&f)?)?;
    finish(&raw, tol, (f.eig_a.rank(), f.eig_b.rank()))
}

/// Coefficients of the Schmidt vectors in the spanning sets:
/// `|φ_α^A⟩ = Σ_i C_A[i, α] |x_A^i⟩` with `C_A = U_A D_A^{-1/2} V_A`, and likewise for `B`.
/// Both matrices are `N_Σ × rank`.
pub fn schmidt_vectors(grams: &GramPair, result: &SchmidtResult) -> Result<(DenseTensor, DenseTensor)> {
    let f = factor(grams, result.tol)?;
    let decomposition = svd(&schmidt_matrix(&f)?)?;
    let rank = result.rank;
    if decomposition.s.len() < rank {
        return Err(Error::Dimension(format!("result has rank {rank} but M has {} singular values", decomposition.s.len())));
    }
    let coefficients = |e: &crate::tensor::TruncatedEigh, v: &dyn Fn(usize, usize) -> f64| {
        let (n, m) = (e.eigvecs.nrows(), e.rank());
        let u = e.eigvecs.data();
        let mut out = vec![0.0; n * rank];
        for i in 0..n {
            for k in 0..m {
                let w = u[i * m + k] / e.eigvals[k].sqrt();
                for a in 0..rank {
                    out[i * rank + a] += w * v(k, a);
                }
            }
        }
        DenseTensor::new(vec![n, rank], out)
    };
    let (u, vt) = (&decomposition.u, &decomposition.vt);
    let k = decomposition.s.len();
    let c_a = coefficients(&f.eig_a, &|row, a| u.data()[row * k + a])?;
    let c_b = coefficients(&f.eig_b, &|row, a| vt.data()[a * vt.ncols() + row])?;
    Ok((c_a, c_b))
}

/// Schmidt decomposition by materializing `|Σ⟩` as a `2^N` vector. Only for
/// `N ≤` [`DENSE_ORACLE_MAX_SITES`].
pub fn dense_oracle(states: &[ProductState], partition: &Partition, tol: f64) -> Result<SchmidtResult> {
    check_states(states, partition)?;
    let n = partition.n_sites;
    if n > DENSE_ORACLE_MAX_SITES {
        return Err(Error::Input(format!(
            "dense oracle refuses {n} sites (limit {DENSE_ORACLE_MAX_SITES})"
        )));
    }
    // site 0 is the most significant bit of the basis index
    let mut sum = vec![0.0; 1 << n];
    for state in states {
        let mut v = vec![1.0];
        for site in state.sites() {
            v = v.iter().flat_map(|&a| [a * site[0], a * site[1]]).collect();
        }
        sum.iter_mut().zip(&v).for_each(|(s, x)| *s += x);
    }
    let bit = |index: usize, site: usize| (index >> (n - 1 - site)) & 1;
    let (a, b) = (&partition.region_a, &partition.region_b);
    let (rows, cols) = (1usize << a.len(), 1usize << b.len());
    let mut matrix = vec![0.0; rows * cols];
    for (index, &amp) in sum.iter().enumerate() {
        let r = a.iter().fold(0, |acc, &s| (acc << 1) | bit(index, s));
        let c = b.iter().fold(0, |acc, &s| (acc << 1) | bit(index, s));
        matrix[r * cols + c] = amp;
    }
    let raw = singular_values(&DenseTensor::new(vec![rows, cols], matrix)?)?;
    let rank = raw.iter().filter(|&&s| s > tol * raw[0]).count();
    finish(&raw, tol, (rank, rank))
}

/// One Schmidt spectrum of a scan.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumRow {
    pub n_sigma: usize,
    pub result: SchmidtResult,
}

fn leading(m: &DenseTensor, k: usize) -> DenseTensor {
    let n = m.ncols();
    let data = (0..k).flat_map(|i| m.data()[i * n..i * n + k].iter().copied()).collect();
    DenseTensor::new(vec![k, k], data).expect("leading block shape")
}

/// Spectra of `Σ_{i < N_Σ} |x^i⟩` for each requested `N_Σ`, taking states in
/// list order. The Gram matrices are built once for the largest size.
pub fn spectrum_scan(states: &[ProductState], partition: &Partition, sizes: &[usize], tol: f64) -> Result<Vec<SpectrumRow>> {
    let largest = sizes.iter().copied().max().ok_or_else(|| Error::Config("no sizes requested".into()))?;
    if sizes.contains(&0) {
        return Err(Error::Config("sizes must be at least 1".into()));
    }
    if largest > states.len() {
        return Err(Error::Config(format!("need {largest} states but only {} are available", states.len())));
    }
    let grams = gram_matrices(&states[..largest], partition)?;
    sizes
        .iter()
        .map(|&k| {
            let sub = GramPair { x_a: leading(&grams.x_a, k), x_b: leading(&grams.x_b, k) };
            Ok(SpectrumRow { n_sigma: k, result: schmidt_from_grams(&sub, tol)? })
        })
        .collect()
}

/// Top half against bottom half of an image lattice.
pub fn half_partition_scan(
    states: &[ProductState],
    dims: (usize, usize),
    sizes: &[usize],
    tol: f64,
) -> Result<Vec<SpectrumRow>> {
    spectrum_scan(states, &top_half_partition(dims)?, sizes, tol)
}

/// The centered `l × l` square against the rest of the image.
pub fn central_square_scan(
    states: &[ProductState],
    dims: (usize, usize),
    l: usize,
    sizes: &[usize],
    tol: f64,
) -> Result<Vec<SpectrumRow>> {
    spectrum_scan(states, &central_square(dims, l)?, sizes, tol)
}

/// Entropy statistics over every `L × L` square of the central window.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyRow {
    pub l: usize,
    pub mean: f64,
    /// Population standard deviation over the squares.
    pub std: f64,
    pub n_partitions: usize,
    pub entropies: Vec<f64>,
}

/// Mean entanglement entropy of `L × L` squares inside the central
/// `window × window` region, for each `L` in `ls`, using all `states`.
pub fn window_entropy_scan(
    states: &[ProductState],
    dims: (usize, usize),
    window: usize,
    ls: &[usize],
    tol: f64,
) -> Result<Vec<EntropyRow>> {
    let cache = GramCache::new(states)?;
    ls.iter()
        .map(|&l| {
            let partitions = central_window_squares(dims, window, l)?;
            let entropies: Vec<f64> = partitions
                .par_iter()
                .map(|p| Ok(schmidt_from_grams(&cache.grams(p, states.len())?, tol)?.entropy))
                .collect::<Result<_>>()?;
            let count = entropies.len() as f64;
            let mean = entropies.iter().sum::<f64>() / count;
            let var = entropies.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / count;
            Ok(EntropyRow { l, mean, std: var.sqrt(), n_partitions: entropies.len(), entropies })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(bits: &[usize]) -> ProductState {
        ProductState::new(bits.iter().map(|&b| if b == 0 { [1.0, 0.0] } else { [0.0, 1.0] }).collect()).unwrap()
    }

    #[test]
    fn entropy_closed_forms() {
        assert_eq!(entropy(&[1.0]).unwrap(), 0.0);
        let flat = vec![0.5; 4];
        assert!((entropy(&flat).unwrap() - 4f64.ln()).abs() < 1e-15);
        let l = [0.9f64.sqrt(), 0.1f64.sqrt()];
        let want = -0.9 * 0.9f64.ln() - 0.1 * 0.1f64.ln();
        assert!((entropy(&l).unwrap() - want).abs() < 1e-15);
        assert!(entropy(&[0.5, 0.5]).is_err());
    }

    #[test]
    fn identical_and_orthogonal_states() {
        let p = Partition::new(4, [0, 1]).unwrap();
        let same = vec![basis(&[0, 1, 1, 0]); 3];
        let g = gram_matrices(&same, &p).unwrap();
        assert!(g.x_a.data().iter().all(|&v| v == 1.0));
        let r = schmidt_from_grams(&g, DEFAULT_TOL).unwrap();
        assert_eq!(r.rank, 1);
        assert!((r.lambdas[0] - 1.0).abs() < 1e-12 && r.entropy.abs() < 1e-12);
        assert!((r.norm_sq - 9.0).abs() < 1e-12);

        let two = vec![basis(&[0, 0, 0, 0]), basis(&[1, 1, 1, 1])];
        let r = schmidt_from_grams(&gram_matrices(&two, &p).unwrap(), DEFAULT_TOL).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(r.lambdas.iter().all(|l| (l - h).abs() < 1e-12));
        assert!((r.entropy - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cache_matches_direct_grams() {
        let states: Vec<ProductState> = (0..5)
            .map(|i| {
                ProductState::normalized((0..6).map(|s| [1.0 + (i * s) as f64 * 0.1, 0.3 * s as f64 + 0.2]).collect())
                    .unwrap()
            })
            .collect();
        let cache = GramCache::new(&states).unwrap();
        for region in [vec![0, 1], vec![1, 2, 3, 4, 5], vec![2, 3, 5]] {
            let p = Partition::new(6, region).unwrap();
            let direct = gram_matrices(&states[..4], &p).unwrap();
            let cached = cache.grams(&p, 4).unwrap();
            for (a, b) in direct.x_a.data().iter().zip(cached.x_a.data()) {
                assert!((a - b).abs() < 1e-14);
            }
            for (a, b) in direct.x_b.data().iter().zip(cached.x_b.data()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dense_oracle_refuses_large_lattices() {
        let states = vec![basis(&[0; 21])];
        let p = Partition::new(21, [0]).unwrap();
        assert!(matches!(dense_oracle(&states, &p, DEFAULT_TOL), Err(Error::Input(_))));
    }
}
