//! Model scores against brute-force block amplitudes.

mod common;

use blockstate::dataset::tile;
use blockstate::embedding::ProductState;
use blockstate::models::{
    init_model_with, Classifier, InitOptions, Model, ModelKind, NnbpsModel, SbpsModel, TrainableModel,
};

/// Full `2^(n²)` amplitude vector of one NNBPS block and class, by summing
/// over every assignment of the bond indices.
fn nnbps_amplitudes(m: &NnbpsModel, block: usize, class: usize) -> Vec<f64> {
    let n = m.layout().n;
    let sites = n * n;
    let tensors: Vec<_> = (0..sites).map(|s| m.site_tensor(block, class, s)).collect();
    // bonds: horizontal (r, c)-(r, c+1) then vertical (r, c)-(r+1, c)
    let h = |r: usize, c: usize| r * (n - 1) + c;
    let v = |r: usize, c: usize| n * (n - 1) + r * n + c;
    let bonds = 2 * n * (n - 1);
    let chi = m.chi();
    let mut amps = vec![0.0; 1 << sites];
    let mut bond = vec![0usize; bonds];
    loop {
        for (config, amp) in amps.iter_mut().enumerate() {
            let mut prod = 1.0;
            for r in 0..n {
                for c in 0..n {
                    let s = r * n + c;
                    let p = (config >> (sites - 1 - s)) & 1;
                    let up = if r > 0 { bond[v(r - 1, c)] } else { 0 };
                    let left = if c > 0 { bond[h(r, c - 1)] } else { 0 };
                    let down = if r + 1 < n { bond[v(r, c)] } else { 0 };
                    let right = if c + 1 < n { bond[h(r, c)] } else { 0 };
                    prod *= tensors[s].get(&[p, up, left, down, right]);
                }
            }
            *amp += prod;
        }
        // next bond assignment
        let mut k = 0;
        while k < bonds {
            bond[k] += 1;
            if bond[k] < chi {
                break;
            }
            bond[k] = 0;
            k += 1;
        }
        if k == bonds {
            return amps;
        }
    }
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (rows, inner, cols) = (a.len(), b.len(), b[0].len());
    (0..rows).map(|i| (0..cols).map(|j| (0..inner).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
}

fn slice(t: &blockstate::tensor::DenseTensor, first: usize) -> Vec<Vec<f64>> {
    let (l, r) = (t.shape()[1], t.shape()[2]);
    (0..l).map(|i| (0..r).map(|j| t.get(&[first, i, j])).collect()).collect()
}

/// SBPS block amplitudes as traces of matrix products along the snake.
fn sbps_amplitudes(m: &SbpsModel, block: usize, class: usize) -> Vec<f64> {
    let n = m.layout().n;
    let sites = n * n;
    let snake = m.snake();
    let label = slice(&m.label_tensor(block), class);
    (0..1usize << sites)
        .map(|config| {
            let bit = |s: usize| (config >> (sites - 1 - s)) & 1;
            let mut mats = Vec::new();
            for q in 0..sites {
                if q == m.label_position() {
                    mats.push(label.clone());
                }
                mats.push(slice(&m.site_tensor(block, q), bit(snake[q])));
            }
            if m.label_position() == sites {
                mats.push(label.clone());
            }
            let prod = mats[1..].iter().fold(mats[0].clone(), |acc, x| matmul(&acc, x));
            (0..prod.len()).map(|i| prod[i][i]).sum()
        })
        .collect()
}

fn block_vector(x: &ProductState, sites: &[usize]) -> Vec<f64> {
    let mut v = vec![1.0];
    for &s in sites {
        let [a, b] = x.sites()[s];
        v = v.iter().flat_map(|&w| [w * a, w * b]).collect();
    }
    v
}

fn check_against(model: &Model, amplitudes: &dyn Fn(usize, usize) -> Vec<f64>) {
    let layout = model.layout().clone();
    let samples = common::random_samples(layout.image_height, layout.image_width, 4, 10, 21);
    for class in 0..model.num_classes() {
        let mut log_z = 0.0;
        let blocks: Vec<Vec<f64>> = (0..layout.num_blocks()).map(|b| amplitudes(b, class)).collect();
        for psi in &blocks {
            log_z += psi.iter().map(|a| a * a).sum::<f64>().ln();
        }
        let got = model.log_norm(class).unwrap();
        assert!((got - log_z).abs() < 1e-10 * log_z.abs().max(1.0), "log Z: {got} vs {log_z}");

        for s in &samples {
            let mut expected = 0.0;
            for (b, psi) in blocks.iter().enumerate() {
                let x = block_vector(&s.state, &layout.blocks[b]);
                let overlap: f64 = psi.iter().zip(&x).map(|(p, q)| p * q).sum();
                let term = (overlap * overlap).ln();
                let single = model.block_log_overlap(b, &s.state, class).unwrap();
                assert!((single - term).abs() < 1e-10 * term.abs().max(1.0));
                expected += term;
            }
            let got = model.log_overlap(&s.state, class).unwrap();
            assert!((got - expected).abs() < 1e-10 * expected.abs().max(1.0), "{got} vs {expected}");
        }
    }
}

fn options(classes: usize) -> InitOptions {
    InitOptions { num_classes: classes, ..InitOptions::default() }
}

#[test]
fn nnbps_matches_brute_force_amplitudes() {
    for (n, dims, chi) in [(1, (3, 2), 1), (2, (4, 4), 2), (2, (4, 2), 3), (3, (3, 6), 2)] {
        let model = init_model_with(ModelKind::Nnbps, tile(dims, n).unwrap(), chi, 5, &options(3)).unwrap();
        let Model::Nnbps(inner) = &model else { unreachable!() };
        check_against(&model, &|b, c| nnbps_amplitudes(inner, b, c));
    }
}

#[test]
fn sbps_matches_brute_force_amplitudes() {
    for (n, dims, chi, edge, label) in
        [(2, (4, 4), 3, 1, None), (2, (2, 4), 2, 2, Some(0)), (2, (2, 2), 2, 1, Some(4)), (3, (3, 3), 2, 2, None)]
    {
        let opts = InitOptions { num_classes: 3, edge_bond_dim: edge, label_position: label, ..InitOptions::default() };
        let model = init_model_with(ModelKind::Sbps, tile(dims, n).unwrap(), chi, 8, &opts).unwrap();
        let Model::Sbps(inner) = &model else { unreachable!() };
        check_against(&model, &|b, c| sbps_amplitudes(inner, b, c));
    }
}

#[test]
fn scores_are_block_local() {
    for kind in [ModelKind::Nnbps, ModelKind::Sbps] {
        let model = init_model_with(kind, tile((4, 4), 2).unwrap(), 2, 3, &options(2)).unwrap();
        let samples = common::random_samples(4, 4, 2, 2, 9);
        let (x, y) = (&samples[0].state, &samples[1].state);
        // y agrees with x outside block 0
        let block0 = &model.layout().blocks[0];
        let mixed: Vec<[f64; 2]> =
            (0..16).map(|s| if block0.contains(&s) { y.sites()[s] } else { x.sites()[s] }).collect();
        let mixed = ProductState::new(mixed).unwrap();
        for class in 0..2 {
            for b in 1..model.layout().num_blocks() {
                assert_eq!(
                    model.block_log_overlap(b, x, class).unwrap(),
                    model.block_log_overlap(b, &mixed, class).unwrap()
                );
            }
            let delta = model.log_overlap(&mixed, class).unwrap() - model.log_overlap(x, class).unwrap();
            let block_delta = model.block_log_overlap(0, &mixed, class).unwrap()
                - model.block_log_overlap(0, x, class).unwrap();
            assert!((delta - block_delta).abs() < 1e-10);
        }
    }
}

#[test]
fn product_model_is_one_site_blocks() {
    let model = init_model_with(ModelKind::Product, tile((3, 3), 1).unwrap(), 1, 2, &options(2)).unwrap();
    assert_eq!(model.kind(), ModelKind::Product);
    assert_eq!(model.params().len(), 9 * 2 * 2);
    assert!(init_model_with(ModelKind::Product, tile((4, 4), 2).unwrap(), 1, 2, &options(2)).is_err());
}
