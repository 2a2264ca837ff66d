//! Exact contraction of an `n × n` grid of bond tensors (no physical legs)
//! by row-major boundary sweeping, plus reverse-mode gradients.
//!
//! Each site tensor is stored row-major with axes `(up, left, down, right)`.
//! The sweep keeps a frontier of `n` vertical bonds and one horizontal bond,
//! so its size is at most `chi^(n+1)`.

/// Bond dims of a site tensor, `(up, left, down, right)`.
pub(crate) type SiteDims = [usize; 4];

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct GridShape {
    pub n: usize,
    pub dims: Vec<SiteDims>,
    pub offsets: Vec<usize>,
    pub total: usize,
}

impl GridShape {
    /// Open-boundary PEPS: bonds leaving the block have dim 1, interior bonds `chi`.
    pub fn peps(n: usize, chi: usize) -> Self {
        let dims = (0..n * n)
            .map(|s| {
                let (r, c) = (s / n, s % n);
                let bond = |edge: bool| if edge { 1 } else { chi };
                [bond(r == 0), bond(c == 0), bond(r + 1 == n), bond(c + 1 == n)]
            })
            .collect();
        Self::from_dims(n, dims)
    }

    fn from_dims(n: usize, dims: Vec<SiteDims>) -> Self {
        let mut offsets = Vec::with_capacity(dims.len());
        let mut total = 0;
        for d in &dims {
            offsets.push(total);
            total += d.iter().product::<usize>();
        }
        Self { n, dims, offsets, total }
    }

    /// Shape of the ket-bra double layer: every bond dim squared.
    pub fn squared(&self) -> Self {
        Self::from_dims(self.n, self.dims.iter().map(|d| d.map(|x| x * x)).collect())
    }

    pub fn site_len(&self, s: usize) -> usize {
        self.dims[s].iter().product()
    }

    pub fn site<'a>(&self, buf: &'a [f64], s: usize) -> &'a [f64] {
        &buf[self.offsets[s]..self.offsets[s] + self.site_len(s)]
    }
}

/// Reusable buffers for sweeping one grid shape.
pub(crate) struct Sweep {
    shape: GridShape,
    states: Vec<Vec<f64>>,
    slots: Vec<Vec<usize>>,
    adj: Vec<f64>,
    adj_next: Vec<f64>,
}

struct Frame {
    pre: usize,
    mid: usize,
    dims: SiteDims,
}

impl Sweep {
    pub fn new(shape: GridShape) -> Self {
        let sites = shape.n * shape.n;
        let mut slots = Vec::with_capacity(sites + 1);
        let mut current = vec![1; shape.n + 1];
        slots.push(current.clone());
        for (s, d) in shape.dims.iter().enumerate() {
            let c = s % shape.n;
            debug_assert_eq!(current[c], d[0]);
            debug_assert_eq!(current[shape.n], d[1]);
            current[c] = d[2];
            current[shape.n] = d[3];
            slots.push(current.clone());
        }
        Self { states: vec![Vec::new(); sites + 1], slots, shape, adj: Vec::new(), adj_next: Vec::new() }
    }

    fn frame(&self, s: usize) -> Frame {
        let n = self.shape.n;
        let c = s % n;
        let before = &self.slots[s];
        Frame {
            pre: before[..c].iter().product(),
            mid: before[c + 1..n].iter().product(),
            dims: self.shape.dims[s],
        }
    }

    /// Contracts the whole grid; `tensors` holds every site back to back.
    pub fn value(&mut self, tensors: &[f64]) -> f64 {
        self.states[0].clear();
        self.states[0].push(1.0);
        for s in 0..self.shape.n * self.shape.n {
            let f = self.frame(s);
            let t = self.shape.site(tensors, s);
            let (done, rest) = self.states.split_at_mut(s + 1);
            absorb(&done[s], &f, t, &mut rest[0]);
        }
        self.states[self.shape.n * self.shape.n][0]
    }

    /// Adds `seed · ∂value/∂tensors` into `grads` (same layout as `tensors`).
    /// Must follow a call to [`Sweep::value`] with the same tensors.
    pub fn backward(&mut self, seed: f64, tensors: &[f64], grads: &mut [f64]) {
        let sites = self.shape.n * self.shape.n;
        self.adj.clear();
        self.adj.push(seed);
        for s in (0..sites).rev() {
            let f = self.frame(s);
            let t = self.shape.site(tensors, s);
            let off = self.shape.offsets[s];
            let g = &mut grads[off..off + t.len()];
            absorb_backward(&self.states[s], &f, t, &self.adj, &mut self.adj_next, g);
            std::mem::swap(&mut self.adj, &mut self.adj_next);
        }
    }
}

/// `out[p, d, m, r] = Σ_{u,l} state[p, u, m, l] · t[u, l, d, r]`
fn absorb(state: &[f64], f: &Frame, t: &[f64], out: &mut Vec<f64>) {
    let [du, dl, dd, dr] = f.dims;
    out.clear();
    out.resize(f.pre * dd * f.mid * dr, 0.0);
    for p in 0..f.pre {
        for m in 0..f.mid {
            for u in 0..du {
                for l in 0..dl {
                    let v = state[((p * du + u) * f.mid + m) * dl + l];
                    if v == 0.0 {
                        continue;
                    }
                    let row = &t[(u * dl + l) * dd * dr..(u * dl + l + 1) * dd * dr];
                    for d in 0..dd {
                        let o = ((p * dd + d) * f.mid + m) * dr;
                        for r in 0..dr {
                            out[o + r] += v * row[d * dr + r];
                        }
                    }
                }
            }
        }
    }
}

fn absorb_backward(state: &[f64], f: &Frame, t: &[f64], adj_out: &[f64], adj_state: &mut Vec<f64>, dt: &mut [f64]) {
    let [du, dl, dd, dr] = f.dims;
    adj_state.clear();
    adj_state.resize(f.pre * du * f.mid * dl, 0.0);
    for p in 0..f.pre {
        for m in 0..f.mid {
            for u in 0..du {
                for l in 0..dl {
                    let si = ((p * du + u) * f.mid + m) * dl + l;
                    let v = state[si];
                    let base = (u * dl + l) * dd * dr;
                    let mut acc = 0.0;
                    for d in 0..dd {
                        let o = ((p * dd + d) * f.mid + m) * dr;
                        for r in 0..dr {
                            let a = adj_out[o + r];
                            acc += t[base + d * dr + r] * a;
                            dt[base + d * dr + r] += v * a;
                        }
                    }
                    adj_state[si] = acc;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Sums over every bond configuration explicitly.
    fn brute_force(shape: &GridShape, tensors: &[f64]) -> f64 {
        let n = shape.n;
        // bond ids: horizontal (r, c)-(r, c+1) then vertical (r, c)-(r+1, c)
        let h = |r: usize, c: usize| r * (n - 1) + c;
        let v = |r: usize, c: usize| n * (n - 1) + r * n + c;
        let nbonds = 2 * n * (n - 1);
        let mut bond_dims = vec![1; nbonds];
        for s in 0..n * n {
            let (r, c) = (s / n, s % n);
            if c + 1 < n {
                bond_dims[h(r, c)] = shape.dims[s][3];
            }
            if r + 1 < n {
                bond_dims[v(r, c)] = shape.dims[s][2];
            }
        }
        let total: usize = bond_dims.iter().product();
        let mut sum = 0.0;
        let mut cfg = vec![0; nbonds];
        for _ in 0..total {
            let mut prod = 1.0;
            for s in 0..n * n {
                let (r, c) = (s / n, s % n);
                let [_, dl, dd, dr] = shape.dims[s];
                let u = if r > 0 { cfg[v(r - 1, c)] } else { 0 };
                let l = if c > 0 { cfg[h(r, c - 1)] } else { 0 };
                let d = if r + 1 < n { cfg[v(r, c)] } else { 0 };
                let rr = if c + 1 < n { cfg[h(r, c)] } else { 0 };
                prod *= shape.site(tensors, s)[((u * dl + l) * dd + d) * dr + rr];
            }
            sum += prod;
            for k in 0..nbonds {
                cfg[k] += 1;
                if cfg[k] < bond_dims[k] {
                    break;
                }
                cfg[k] = 0;
            }
        }
        sum
    }

    fn random(shape: &GridShape, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..shape.total).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn sweep_matches_brute_force() {
        for (n, chi) in [(1, 2), (2, 2), (2, 3), (3, 2)] {
            let shape = GridShape::peps(n, chi);
            let t = random(&shape, 7 + n as u64);
            let mut sweep = Sweep::new(shape.clone());
            let got = sweep.value(&t);
            let want = brute_force(&shape, &t);
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "n={n} chi={chi}: {got} vs {want}");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let shape = GridShape::peps(3, 2);
        let t = random(&shape, 3);
        let mut sweep = Sweep::new(shape.clone());
        sweep.value(&t);
        let mut g = vec![0.0; t.len()];
        sweep.backward(1.5, &t, &mut g);
        for k in (0..t.len()).step_by(7) {
            let h = 1e-6;
            let mut tp = t.clone();
            tp[k] += h;
            let mut tm = t.clone();
            tm[k] -= h;
            let fd = 1.5 * (sweep.value(&tp) - sweep.value(&tm)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8, "coordinate {k}: {fd} vs {}", g[k]);
        }
    }
}
