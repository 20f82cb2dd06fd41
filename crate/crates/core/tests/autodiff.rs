use hgtree::tensor::{Graph, Grads, ParamId, ParamStore, Var};
use hgtree::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Var;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Max relative error between analytic and central-difference gradients,
/// measured per parameter as ||a - n|| / max(||a||, ||n||, 1e-8).
fn fd_check(shapes: &[Vec<usize>], seed: u64, build: &Build) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (i, s) in shapes.iter().enumerate() {
        let n = s.iter().product();
        store.add(format!("p{i}"), s, rand_vec(&mut rng, n), false);
    }
    let eval = |store: &ParamStore<f64>| {
        let mut g = Graph::new(store);
        let vars: Vec<Var> = store.ids().map(|id| g.param(id)).collect();
        let out = build(&mut g, &vars);
        g.scalar(out)
    };
    let mut grads = Grads::zeros_like(&store);
    {
        let mut g = Graph::new(&store);
        let vars: Vec<Var> = store.ids().map(|id| g.param(id)).collect();
        let out = build(&mut g, &vars);
        g.backward(out, &mut grads).unwrap();
    }
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for id in store.ids().collect::<Vec<ParamId>>() {
        let mut num = vec![0.0; store.value(id).len()];
        for j in 0..num.len() {
            let orig = store.value(id)[j];
            store.value_mut(id)[j] = orig + h;
            let fp = eval(&store);
            store.value_mut(id)[j] = orig - h;
            let fm = eval(&store);
            store.value_mut(id)[j] = orig;
            num[j] = (fp - fm) / (2.0 * h);
        }
        let ana = grads.get(id);
        let diff = ana.iter().zip(&num).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let na = ana.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = num.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(diff / na.max(nn).max(1e-8));
    }
    worst
}

/// Projects a matrix output to a scalar through fixed pseudo-random weights
/// so every element's gradient is exercised.
fn project(g: &mut Graph<f64>, x: Var) -> Var {
    let [r, c] = g.shape(x);
    let w: Vec<f64> = (0..r * c).map(|i| ((i * 7919 % 101) as f64 / 50.0) - 1.0).collect();
    let w = g.input(w, r, c).unwrap();
    let y = g.mul(x, w).unwrap();
    g.sum(y)
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let err = fd_check(&[vec![5, 4], vec![4, 3]], 1, &|g, v| {
        let y = g.matmul(v[0], v[1]).unwrap();
        project(g, y)
    });
    assert!(err <= 1e-6, "matmul rel err {err}");
}

#[test]
fn sum_of_squares_gradient_is_twice_w() {
    let mut store = ParamStore::new();
    let id = store.add("w", &[2], vec![1.0, 2.0], false);
    let mut grads = Grads::zeros_like(&store);
    let mut g = Graph::new(&store);
    let w = g.param(id);
    let sq = g.mul(w, w).unwrap();
    let loss = g.sum(sq);
    g.backward(loss, &mut grads).unwrap();
    assert_eq!(grads.get(id), &[2.0, 4.0]);
    assert!(matches!(g.backward(loss, &mut grads), Err(Error::Autodiff(_))));
}

#[test]
fn constant_loss_gives_zero_gradients() {
    let mut store = ParamStore::new();
    let id = store.add("w", &[3], vec![1.0, 2.0, 3.0], false);
    let mut grads = Grads::zeros_like(&store);
    let mut g = Graph::new(&store);
    let _w = g.param(id);
    let c = g.input(vec![4.0], 1, 1).unwrap();
    let loss = g.sum(c);
    g.backward(loss, &mut grads).unwrap();
    assert!(grads.get(id).iter().all(|&x| x == 0.0));
}

#[test]
fn non_scalar_backward_is_rejected() {
    let mut store = ParamStore::new();
    let id = store.add("w", &[3], vec![1.0, 2.0, 3.0], false);
    let mut grads = Grads::zeros_like(&store);
    let mut g = Graph::new(&store);
    let w = g.param(id);
    assert!(matches!(g.backward(w, &mut grads), Err(Error::Autodiff(_))));
}

#[test]
fn shape_errors_name_both_shapes() {
    let mut store = ParamStore::new();
    let a = store.add("a", &[2, 3], vec![0.0; 6], false);
    let b = store.add("b", &[2, 3], vec![0.0; 6], false);
    let mut g = Graph::new(&store);
    let (a, b) = (g.param(a), g.param(b));
    let msg = g.matmul(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
}

#[test]
fn chained_layernorm_gelu_matmul() {
    let err = fd_check(&[vec![6, 8], vec![8], vec![8], vec![8, 5]], 2, &|g, v| {
        let n = g.layer_norm(v[0], v[1], v[2]).unwrap();
        let a = g.gelu(n);
        let y = g.matmul(a, v[3]).unwrap();
        project(g, y)
    });
    assert!(err <= 1e-4, "rel err {err}");
}

#[test]
fn every_op_passes_randomized_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut cases = 0;
    for trial in 0..24 {
        let r = 4 * rng.random_range(1..4usize);
        let c = rng.random_range(2..7usize);
        let h = [1, 2][trial % 2];
        let d = h * rng.random_range(1..4usize);
        let seed = 1000 + trial as u64;
        let checks: Vec<(&str, Vec<Vec<usize>>, Box<Build>)> = vec![
            ("linear", vec![vec![r, c], vec![c, 3], vec![3]], Box::new(|g, v| {
                let y = g.linear(v[0], v[1], Some(v[2])).unwrap();
                project(g, y)
            })),
            ("add/mul", vec![vec![r, c], vec![r, c]], Box::new(|g, v| {
                let s = g.add(v[0], v[1]).unwrap();
                let y = g.mul(s, v[0]).unwrap();
                project(g, y)
            })),
            ("row ops", vec![vec![r, c], vec![c], vec![c]], Box::new(|g, v| {
                let s = g.mul_row(v[0], v[1]).unwrap();
                let y = g.add_row(s, v[2]).unwrap();
                let y = g.scale(y, 0.7);
                project(g, y)
            })),
            ("layer_norm", vec![vec![r, c], vec![c], vec![c]], Box::new(|g, v| {
                let y = g.layer_norm(v[0], v[1], v[2]).unwrap();
                project(g, y)
            })),
            ("gelu", vec![vec![r, c]], Box::new(|g, v| {
                let y = g.gelu(v[0]);
                project(g, y)
            })),
            ("softmax", vec![vec![r, c]], Box::new(|g, v| {
                let y = g.softmax(v[0]);
                project(g, y)
            })),
            ("embedding", vec![vec![7, c]], Box::new(move |g, v| {
                let y = g.embedding(v[0], &[3, 0, 3, 6, 1]).unwrap();
                project(g, y)
            })),
            ("masked_fill", vec![vec![r, c]], Box::new(move |g, v| {
                let mask: Vec<bool> = (0..r * c).map(|i| i % 3 == 0).collect();
                let y = g.masked_fill(v[0], &mask, -2.0).unwrap();
                project(g, y)
            })),
            ("pool/repeat", vec![vec![r, c]], Box::new(|g, v| {
                let p = g.mean_pool(v[0], 4).unwrap();
                let y = g.repeat(p, 2);
                project(g, y)
            })),
            ("concat/slice", vec![vec![r, c], vec![2, c]], Box::new(move |g, v| {
                let s = g.slice_rows(v[0], 1, r - 1).unwrap();
                let y = g.concat_rows(&[v[1], s]).unwrap();
                project(g, y)
            })),
            ("causal attention", vec![vec![r, d], vec![r, d], vec![r, d]], Box::new(move |g, v| {
                let y = g.attention(v[0], v[1], v[2], h, true).unwrap();
                project(g, y)
            })),
            ("cross attention", vec![vec![3, d], vec![r, d], vec![r, d]], Box::new(move |g, v| {
                let y = g.attention(v[0], v[1], v[2], h, false).unwrap();
                project(g, y)
            })),
            ("cross_entropy", vec![vec![r, c]], Box::new(move |g, v| {
                let targets: Vec<usize> = (0..r).map(|i| (i * 5) % c).collect();
                let weights: Vec<f64> = (0..r).map(|i| if i % 4 == 1 { 0.0 } else { 1.0 }).collect();
                g.cross_entropy(v[0], &targets, &weights).unwrap()
            })),
        ];
        for (name, shapes, build) in checks {
            let err = fd_check(&shapes, seed, build.as_ref());
            assert!(err <= 1e-4, "{name} shapes {shapes:?}: rel err {err}");
            cases += 1;
        }
    }
    assert!(cases >= 20 * 13);
}

#[test]
fn softmax_rows_sum_to_one_and_zeros_are_uniform() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let z = g.zeros(1, 4);
    let s = g.softmax(z);
    assert_eq!(g.value(s), &[0.25; 4]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = g.input((0..60).map(|_| rng.random_range(-30.0..30.0)).collect(), 6, 10).unwrap();
    let s = g.softmax(x);
    for row in g.value(s).chunks(10) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn mean_pool_example_and_projection_idempotence() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let x = g.input((1..=8).map(f64::from).collect(), 8, 1).unwrap();
    let p = g.mean_pool(x, 4).unwrap();
    assert_eq!(g.value(p), &[2.5, 6.5]);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = g.input(rand_vec(&mut rng, 16 * 3), 16, 3).unwrap();
    let once = {
        let p = g.mean_pool(x, 4).unwrap();
        g.repeat(p, 4)
    };
    let twice = {
        let p = g.mean_pool(once, 4).unwrap();
        g.repeat(p, 4)
    };
    for (a, b) in g.value(once).iter().zip(g.value(twice)) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(g.mean_pool(x, 5).is_err());
}

#[test]
fn causal_attention_masks_future_and_single_token_is_identity() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let q = g.input(rand_vec(&mut rng, 5 * 4), 5, 4).unwrap();
    let k = g.input(rand_vec(&mut rng, 5 * 4), 5, 4).unwrap();
    let v = g.input(rand_vec(&mut rng, 5 * 4), 5, 4).unwrap();
    let first = g.attention(q, k, v, 2, true).unwrap();
    // Row 0 sees only itself, so it equals v's row 0.
    assert_eq!(&g.value(first)[..4], &g.value(v)[..4]);
    // Changing the last key/value leaves earlier outputs untouched.
    let mut v2 = g.value(v).to_vec();
    v2[16..].iter_mut().for_each(|x| *x += 10.0);
    let v2 = g.input(v2, 5, 4).unwrap();
    let second = g.attention(q, k, v2, 2, true).unwrap();
    assert_eq!(&g.value(first)[..16], &g.value(second)[..16]);
}
