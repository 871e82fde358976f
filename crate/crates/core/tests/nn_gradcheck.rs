//! Finite-difference checks of every tape primitive in 64-bit mode.

use pexsynth::nn::{grad_check, seeded_rng, ParamStore, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = seeded_rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

/// Projects a tensor-valued output to a scalar with a fixed random weight.
fn project(t: &mut Tape<f64>, y: Var, seed: u64) -> Var {
    let shape = t.value(y).shape.clone();
    let w = t.leaf(random(&shape, seed ^ 0xabc));
    let p = t.mul(y, w).unwrap();
    t.sum(p)
}

fn store(entries: &[(&str, &[usize])], seed: u64) -> ParamStore<f64> {
    let mut s = ParamStore::new(seed);
    for (i, (name, shape)) in entries.iter().enumerate() {
        s.insert(*name, random(shape, seed + i as u64));
    }
    s
}

fn assert_passes<F>(params: &ParamStore<f64>, f: F)
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Var,
{
    let r = grad_check(params, EPS, 64, f);
    assert!(r.max_rel_err <= TOL, "max rel err {} at {:?}", r.max_rel_err, r.worst);
    assert!(r.checked > 0);
}

#[test]
fn matmul_transpose_add() {
    let s = store(&[("a", &[3, 4]), ("b", &[4, 2]), ("c", &[2, 3])], 1);
    assert_passes(&s, |t, s| {
        let a = t.param(s, "a");
        let b = t.param(s, "b");
        let c = t.param(s, "c");
        let ab = t.matmul(a, b).unwrap();
        let ct = t.transpose(c);
        let y = t.add(ab, ct).unwrap();
        project(t, y, 1)
    });
}

#[test]
fn linear_layer() {
    let mut s = store(&[("x", &[5, 4])], 2);
    s.init_linear("l", 4, 3, &mut seeded_rng(2));
    s.get_mut("l.b").unwrap().data = vec![0.1, -0.2, 0.3];
    assert_passes(&s, |t, s| {
        let x = t.param(s, "x");
        let y = t.linear(s, "l", x).unwrap();
        project(t, y, 2)
    });
}

#[test]
fn mul_scale_sum() {
    let s = store(&[("a", &[2, 3]), ("b", &[2, 3])], 3);
    assert_passes(&s, |t, s| {
        let a = t.param(s, "a");
        let b = t.param(s, "b");
        let y = t.mul(a, b).unwrap();
        let z = t.scale(y, -0.7);
        t.sum(z)
    });
}

#[test]
fn concat_slice_reshape() {
    let s = store(&[("a", &[3, 2]), ("b", &[3, 4])], 4);
    assert_passes(&s, |t, s| {
        let a = t.param(s, "a");
        let b = t.param(s, "b");
        let c = t.concat_cols(&[a, b, a]).unwrap();
        let sl = t.slice_cols(c, 1, 7).unwrap();
        let r = t.reshape(sl, &[2, 9]).unwrap();
        project(t, r, 4)
    });
}

#[test]
fn embedding_lookup() {
    let s = store(&[("e", &[6, 3])], 5);
    assert_passes(&s, |t, s| {
        let e = t.param(s, "e");
        let y = t.gather(e, &[0, 5, 2, 5, 5]).unwrap();
        project(t, y, 5)
    });
}

#[test]
fn nonlinearities() {
    let s = store(&[("a", &[4, 5])], 6);
    assert_passes(&s, |t, s| {
        let a = t.param(s, "a");
        let p = t.softmax_rows(a);
        let q = t.sigmoid(a);
        let r = t.selu(a);
        let u = t.relu(a);
        let c = t.concat_cols(&[p, q, r, u]).unwrap();
        project(t, c, 6)
    });
}

#[test]
fn layer_norm() {
    let s = store(&[("x", &[3, 6]), ("g", &[1, 6]), ("b", &[1, 6])], 7);
    assert_passes(&s, |t, s| {
        let x = t.param(s, "x");
        let g = t.param(s, "g");
        let b = t.param(s, "b");
        let y = t.layer_norm(x, g, b).unwrap();
        project(t, y, 7)
    });
}

#[test]
fn group_mean_and_dropout() {
    let s = store(&[("x", &[6, 4])], 8);
    assert_passes(&s, |t, s| {
        let x = t.param(s, "x");
        let m = t.group_mean(x, 3).unwrap();
        let d = t.dropout(m, 0.3, &mut seeded_rng(99));
        project(t, d, 8)
    });
}

#[test]
fn cross_entropy_and_bce() {
    let s = store(&[("x", &[3, 5])], 9);
    let targets = Tensor::matrix(3, 5, (0..15).map(|i| (i % 2) as f64).collect());
    assert_passes(&s, move |t, s| {
        let x = t.param(s, "x");
        let ce = t.cross_entropy(x, &[4, 0, 2]).unwrap();
        let bce = t.bce_with_logits(x, &targets).unwrap();
        t.add(ce, bce).unwrap()
    });
}

#[test]
fn softmax_rows_are_distributions() {
    let mut t = Tape::<f32>::new();
    let x = t.leaf(random(&[10, 7], 11).cast());
    let y = t.softmax_rows(x);
    let v = t.value(y);
    for r in 0..10 {
        let row = v.row_slice(r);
        assert!(row.iter().all(|&p| p >= 0.0));
        assert!((row.iter().sum::<f32>() - 1.0).abs() <= 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_mlp_shapes_pass(rows in 1usize..5, inner in 1usize..6, out in 2usize..6, seed in 0u64..1000) {
        let mut s = store(&[("x", &[rows, inner])], seed);
        s.init_linear("l1", inner, out, &mut seeded_rng(seed));
        s.init_layer_norm("ln", out);
        let targets: Vec<usize> = (0..rows).map(|r| r % out).collect();
        let r = grad_check(&s, EPS, 32, |t, s| {
            let x = t.param(s, "x");
            let h = t.linear(s, "l1", x).unwrap();
            let h = t.selu(h);
            let g = t.param(s, "ln.gamma");
            let b = t.param(s, "ln.beta");
            let h = t.layer_norm(h, g, b).unwrap();
            t.cross_entropy(h, &targets).unwrap()
        });
        prop_assert!(r.max_rel_err <= 1e-5, "{:?}", r);
    }

    #[test]
    fn f32_gradients_within_one_in_a_thousand(seed in 0u64..1000) {
        // 32-bit analytic gradients against the 64-bit oracle.
        let s = store(&[("x", &[3, 4]), ("w", &[4, 3])], seed);
        let f = |t: &mut Tape<f64>, s: &ParamStore<f64>| {
            let x = t.param(s, "x");
            let w = t.param(s, "w");
            let h = t.matmul(x, w).unwrap();
            let h = t.sigmoid(h);
            t.cross_entropy(h, &[0, 1, 2]).unwrap()
        };
        let mut t64 = Tape::new();
        let l = f(&mut t64, &s);
        let g64 = t64.backward(l).by_name(&t64);
        let s32 = s.cast::<f32>();
        let mut t32 = Tape::<f32>::new();
        let x = t32.param(&s32, "x");
        let w = t32.param(&s32, "w");
        let h = t32.matmul(x, w).unwrap();
        let h = t32.sigmoid(h);
        let l = t32.cross_entropy(h, &[0, 1, 2]).unwrap();
        let g32 = t32.backward(l).by_name(&t32);
        for (name, g) in &g64 {
            for (a, b) in g.data.iter().zip(&g32[name].data) {
                prop_assert!(pexsynth::nn::rel_err(*a, *b as f64) <= 1e-3);
            }
        }
    }
}
