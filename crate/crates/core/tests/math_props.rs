//! Property tests for the tensor graph: finite-difference agreement for every
//! trainable operator, softmax/layer-norm invariants, matmul associativity,
//! and seeded determinism.

use aliasim_core::math::graph::{multi_head_attention, Graph};
use aliasim_core::math::{grad_check, ParamStore, RngState, Tensor};
use proptest::prelude::*;

fn random_tensor(rng: &mut RngState, rows: usize, cols: usize) -> Tensor {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

/// Scalar objective exercising every differentiable operator once.
fn omnibus_loss(store: &ParamStore) -> aliasim_core::math::Result<f64> {
    let mut g = Graph::new();
    let a = g.param(store, store.id_of("a").unwrap()); // 3x4
    let b = g.param(store, store.id_of("b").unwrap()); // 4x4
    let row = g.param(store, store.id_of("row").unwrap()); // 1x4
    let gain = g.param(store, store.id_of("gain").unwrap()); // 1x4
    let bias = g.param(store, store.id_of("bias").unwrap()); // 1x4
    let gate = g.param(store, store.id_of("gate").unwrap()); // 1x1
    let wq = g.param(store, store.id_of("wq").unwrap()); // 4x4
    let wk = g.param(store, store.id_of("wk").unwrap());
    let wv = g.param(store, store.id_of("wv").unwrap());
    let wo = g.param(store, store.id_of("wo").unwrap());

    let mm = g.matmul(a, b)?; // 3x4
    let mmt = g.transpose(mm); // 4x3
    let back = g.transpose(mmt); // 3x4
    let biased = g.add_row(back, row)?;
    let ln = g.layer_norm(biased, gain, bias, 1e-5)?;
    let sm = g.softmax_rows(ln);
    let th = g.tanh(sm);
    let sg = g.sigmoid(gate);
    let gated = g.mul_scalar(th, sg)?;
    let attn = multi_head_attention(&mut g, gated, ln, ln, wq, wk, wv, wo, 2)?;
    let mixed = g.mul(attn, back)?;
    let summed = g.add(mixed, back)?;
    let diff = g.sub(summed, back)?;
    let top = g.slice_rows(diff, 0, 2)?;
    let left = g.slice_cols(diff, 0, 2)?;
    let right = g.slice_cols(diff, 2, 4)?;
    let re_cols = g.concat_cols(&[left, right])?;
    let re_rows = g.concat_rows(&[top, re_cols])?; // 5x4
    let pooled = g.mean_rows(re_rows); // 1x4
    let scaled = g.scale(pooled, 1.7);
    let loss = g.sum_sq(scaled)?;
    Ok(g.scalar_value(loss))
}

fn omnibus_store(seed: u64) -> ParamStore {
    let mut rng = RngState::new(seed);
    let mut store = ParamStore::new();
    for (name, r, c) in [
        ("a", 3, 4),
        ("b", 4, 4),
        ("row", 1, 4),
        ("gain", 1, 4),
        ("bias", 1, 4),
        ("gate", 1, 1),
        ("wq", 4, 4),
        ("wk", 4, 4),
        ("wv", 4, 4),
        ("wo", 4, 4),
    ] {
        store.add(name, random_tensor(&mut rng, r, c), true);
    }
    store
}

#[test]
fn every_operator_matches_finite_differences() {
    let mut store = omnibus_store(11);
    // Analytic gradients via one backward pass.
    let mut g = Graph::new();
    {
        // Rebuild the same objective on a graph bound to the store so the
        // backward pass scatters into the param grad slots.
        store.zero_grads();
        let loss_val = {
            let a = g.param(&store, store.id_of("a").unwrap());
            let b = g.param(&store, store.id_of("b").unwrap());
            let row = g.param(&store, store.id_of("row").unwrap());
            let gain = g.param(&store, store.id_of("gain").unwrap());
            let bias = g.param(&store, store.id_of("bias").unwrap());
            let gate = g.param(&store, store.id_of("gate").unwrap());
            let wq = g.param(&store, store.id_of("wq").unwrap());
            let wk = g.param(&store, store.id_of("wk").unwrap());
            let wv = g.param(&store, store.id_of("wv").unwrap());
            let wo = g.param(&store, store.id_of("wo").unwrap());
            let mm = g.matmul(a, b).unwrap();
            let mmt = g.transpose(mm);
            let back = g.transpose(mmt);
            let biased = g.add_row(back, row).unwrap();
            let ln = g.layer_norm(biased, gain, bias, 1e-5).unwrap();
            let sm = g.softmax_rows(ln);
            let th = g.tanh(sm);
            let sg = g.sigmoid(gate);
            let gated = g.mul_scalar(th, sg).unwrap();
            let attn = multi_head_attention(&mut g, gated, ln, ln, wq, wk, wv, wo, 2).unwrap();
            let mixed = g.mul(attn, back).unwrap();
            let summed = g.add(mixed, back).unwrap();
            let diff = g.sub(summed, back).unwrap();
            let top = g.slice_rows(diff, 0, 2).unwrap();
            let left = g.slice_cols(diff, 0, 2).unwrap();
            let right = g.slice_cols(diff, 2, 4).unwrap();
            let re_cols = g.concat_cols(&[left, right]).unwrap();
            let re_rows = g.concat_rows(&[top, re_cols]).unwrap();
            let pooled = g.mean_rows(re_rows);
            let scaled = g.scale(pooled, 1.7);
            let loss = g.sum_sq(scaled).unwrap();
            g.backward_into(loss, &mut store).unwrap();
            g.scalar_value(loss)
        };
        assert!(loss_val.is_finite());
    }
    let analytic = store.flat_grads();
    let report = grad_check(&mut store, &analytic, omnibus_loss, 1e-5).unwrap();
    assert!(
        report.max_rel_err < 1e-4,
        "max rel err {} at {:?}",
        report.max_rel_err,
        report.worst
    );
    // Cross-check the objective values agree between the two builders.
    assert_eq!(report.coords_checked, store.trainable_coords());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(seed in 0u64..10_000, rows in 1usize..5, cols in 1usize..9) {
        let mut rng = RngState::new(seed);
        let mut g = Graph::new();
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform_in(-30.0, 30.0)).collect();
        let x = g.constant(&Tensor::new(vec![rows, cols], data).unwrap());
        let y = g.softmax_rows(x);
        for i in 0..rows {
            let s: f64 = g.data(y)[i * cols..(i + 1) * cols].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12, "row sum {s}");
            prop_assert!(g.data(y)[i * cols..(i + 1) * cols].iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn layer_norm_rows_standardized(seed in 0u64..10_000, rows in 1usize..4, cols in 4usize..12) {
        let mut rng = RngState::new(seed);
        let mut g = Graph::new();
        // Spread inputs well above eps so the variance target is meaningful.
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform_in(-5.0, 5.0)).collect();
        let x = g.constant(&Tensor::new(vec![rows, cols], data).unwrap());
        let gain = g.constant(&Tensor::full(1, cols, 1.0));
        let bias = g.constant(&Tensor::zeros(1, cols));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        for i in 0..rows {
            let row = &g.data(y)[i * cols..(i + 1) * cols];
            let mean: f64 = row.iter().sum::<f64>() / cols as f64;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            prop_assert!(mean.abs() < 1e-10, "mean {mean}");
            prop_assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn matmul_associative_on_chains(seed in 0u64..10_000) {
        let mut rng = RngState::new(seed);
        let a = random_tensor(&mut rng, 3, 4);
        let b = random_tensor(&mut rng, 4, 2);
        let c = random_tensor(&mut rng, 2, 5);
        let mut g = Graph::new();
        let (an, bn, cn) = (g.constant(&a), g.constant(&b), g.constant(&c));
        let ab = g.matmul(an, bn).unwrap();
        let ab_c = g.matmul(ab, cn).unwrap();
        let bc = g.matmul(bn, cn).unwrap();
        let a_bc = g.matmul(an, bc).unwrap();
        let left = g.value(ab_c);
        let right = g.value(a_bc);
        prop_assert!(left.max_abs_diff(&right) < 1e-9);
    }

    #[test]
    fn forward_values_seed_deterministic(seed in 0u64..10_000) {
        let run = |seed: u64| -> Vec<f64> {
            let mut rng = RngState::new(seed);
            let x = random_tensor(&mut rng, 3, 6);
            let w = random_tensor(&mut rng, 6, 6);
            let mut g = Graph::new();
            let (xn, wn) = (g.constant(&x), g.constant(&w));
            let h = g.matmul(xn, wn).unwrap();
            let y = g.tanh(h);
            g.data(y).to_vec()
        };
        prop_assert_eq!(run(seed), run(seed));
    }
}
