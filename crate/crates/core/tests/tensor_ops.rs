use qac_core::tensor::gradcheck::{grad_check, relative_error, GradCheckOptions};
use qac_core::tensor::{Graph, ParamStore, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Reduces any fragment to a scalar with fixed random weights so every
/// output entry contributes a distinct gradient.
fn reduce(g: &mut Graph<'_>, out: Var, seed: u64) -> Result<Var, TensorError> {
    let t = g.value(out);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let w = random(&mut rng, t.rows(), t.cols());
    g.weighted_sum(out, w)
}

fn check<F>(store: &ParamStore, seed: u64, f: F) -> f64
where
    F: Fn(&mut Graph<'_>) -> Result<Var, TensorError>,
{
    let opts = GradCheckOptions {
        seed,
        ..GradCheckOptions::default()
    };
    let report = grad_check(store, |g| {
        let out = f(g)?;
        reduce(g, out, seed)
    }, &opts)
    .unwrap();
    assert!(report.probed > 0);
    report.max_rel_error
}

fn store_with(rng: &mut ChaCha8Rng, shapes: &[(&str, usize, usize)]) -> ParamStore {
    let mut s = ParamStore::new();
    for &(name, r, c) in shapes {
        s.insert(name, random(rng, r, c)).unwrap();
    }
    s
}

#[test]
fn every_primitive_matches_finite_differences() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = store_with(
            &mut rng,
            &[
                ("a", 4, 3),
                ("b", 3, 5),
                ("c", 4, 3),
                ("row", 1, 3),
                ("col", 4, 1),
                ("gamma", 1, 3),
                ("beta", 1, 3),
            ],
        );
        let p = |g: &mut Graph<'_>, n: &str| g.param(g.store().id(n).unwrap());
        let tol = 1e-4;
        let cases: Vec<(&str, Box<dyn Fn(&mut Graph<'_>) -> Result<Var, TensorError>>)> = vec![
            ("matmul", Box::new(|g| {
                let (a, b) = (p(g, "a"), p(g, "b"));
                g.matmul(a, b)
            })),
            ("matmul_t", Box::new(|g| {
                let (a, c) = (p(g, "a"), p(g, "c"));
                g.matmul_t(a, c)
            })),
            ("add_sub_mul", Box::new(|g| {
                let (a, c) = (p(g, "a"), p(g, "c"));
                let s = g.add(a, c)?;
                let d = g.sub(s, c)?;
                g.mul(d, c)
            })),
            ("add_row", Box::new(|g| {
                let (a, r) = (p(g, "a"), p(g, "row"));
                g.add_row(a, r)
            })),
            ("broadcast_mul_col", Box::new(|g| {
                let (r, c) = (p(g, "row"), p(g, "col"));
                let b = g.broadcast_rows(r, 4)?;
                g.mul_col(b, c)
            })),
            ("tanh_scale", Box::new(|g| {
                let a = p(g, "a");
                let t = g.tanh(a);
                Ok(g.scale(t, 1.7))
            })),
            ("concat_slice", Box::new(|g| {
                let (a, c, b) = (p(g, "a"), p(g, "c"), p(g, "b"));
                let cc = g.concat_cols(&[a, c])?;
                let sl = g.slice_cols(cc, 2, 3)?;
                let bb = g.slice_cols(b, 0, 3)?;
                g.concat_rows(&[sl, bb])
            })),
            ("gather", Box::new(|g| {
                let b = p(g, "b");
                g.gather_rows(b, &[2, 0, 2, 1])
            })),
            ("softmax_masked", Box::new(|g| {
                let a = p(g, "a");
                let mask = [true, false, true, true, true, true, false, true, false, true, true, true];
                g.softmax_rows(a, Some(&mask))
            })),
            ("masked_max_pool", Box::new(|g| {
                let a = p(g, "a");
                g.masked_max_pool(a, 2, &[true, true, true, false])
            })),
            ("segment_max_sum", Box::new(|g| {
                let a = p(g, "a");
                let m = g.segment_max(a, &[3, 1])?;
                let s = g.segment_sum(a, &[(0, 2), (2, 2), (1, 0)])?;
                g.concat_rows(&[m, s])
            })),
            ("layer_norm", Box::new(|g| {
                let (a, ga, be) = (p(g, "a"), p(g, "gamma"), p(g, "beta"));
                g.layer_norm(a, ga, be)
            })),
            ("cosine", Box::new(|g| {
                let (a, c) = (p(g, "a"), p(g, "c"));
                g.cosine_rows(a, c)
            })),
            ("attention", Box::new(|g| {
                let (a, c) = (p(g, "a"), p(g, "c"));
                let (b, row) = (p(g, "b"), p(g, "row"));
                let b = g.slice_cols(b, 0, 3)?;
                let v = g.concat_rows(&[b, row])?;
                let q = g.tanh(a);
                // two sequences of length 2, heads of width 1 and 2 are not
                // allowed (3 % 2), so use 3 heads of width 1
                g.self_attention(q, c, v, 2, 3, &[true, true, true, false])
            })),
            ("softmax_bce", Box::new(|g| {
                let b = p(g, "b");
                let logits = g.slice_cols(b, 1, 2)?;
                g.softmax_bce(logits, &[1.0, 0.0, 1.0])
            })),
        ];
        for (name, f) in &cases {
            let err = check(&s, seed, f);
            assert!(err < tol, "{name} seed {seed}: rel err {err}");
        }
    }
}

#[test]
fn relu_away_from_kink() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for x in &mut data {
            if x.abs() < 1e-3 {
                *x = 0.5;
            }
        }
        let mut s = ParamStore::new();
        s.insert("x", Tensor::matrix(3, 4, data).unwrap()).unwrap();
        let err = check(&s, seed, |g| {
            let x = g.param(g.store().id("x").unwrap());
            Ok(g.relu(x))
        });
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn linear_layer_gradient_is_tight() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = store_with(&mut rng, &[("w", 6, 4), ("b", 1, 4)]);
    let x = random(&mut rng, 5, 6);
    let err = check(&s, 3, |g| {
        let xv = g.input(x.clone());
        let w = g.param(g.store().id("w").unwrap());
        let b = g.param(g.store().id("b").unwrap());
        let h = g.matmul(xv, w)?;
        g.add_row(h, b)
    });
    assert!(err < 1e-7, "{err}");
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let s = ParamStore::new();
    let mut g = Graph::new(&s);
    let x = g.input(Tensor::row_vector(vec![1.0, 1.0, 1.0]));
    let y = g.softmax_rows(x, None).unwrap();
    for &v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn masked_softmax_rows_sum_to_one_and_masked_are_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s = ParamStore::new();
    let mut g = Graph::new(&s);
    let x = g.input(random(&mut rng, 6, 7));
    let mask: Vec<bool> = (0..42).map(|i| i % 3 != 1 || i % 7 == 0).collect();
    let y = g.softmax_rows(x, Some(&mask)).unwrap();
    let t = g.value(y);
    for r in 0..6 {
        let sum: f64 = t.row(r).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        for c in 0..7 {
            if !mask[r * 7 + c] {
                assert_eq!(t.get(r, c), 0.0);
            }
        }
    }
}

#[test]
fn max_over_time_picks_the_largest_step() {
    let s = ParamStore::new();
    let mut g = Graph::new(&s);
    // one feature observed at three time steps: [[1],[5],[2]]
    let x = g.input(Tensor::matrix(3, 1, vec![1.0, 5.0, 2.0]).unwrap());
    let y = g.segment_max(x, &[3]).unwrap();
    assert_eq!(g.value(y).data(), &[5.0]);
}

#[test]
fn shape_errors_name_the_op() {
    let s = ParamStore::new();
    let mut g = Graph::new(&s);
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
}

#[test]
fn relative_error_formula() {
    assert_eq!(relative_error(1.0, 1.0), 0.0);
    assert!((relative_error(1.0, 3.0) - 0.5).abs() < 1e-15);
    assert_eq!(relative_error(0.0, 0.0), 0.0);
}
