use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rogat_core::gat::{infer, EdgeAttention, NodeFeatures};
use rogat_core::rogat::{revised_attention, rogat_infer, train_rogat, RevisedState, RogatConfig};
use rogat_core::{train_gat, EdgeIndex, GatConfig, GatParams, Graph, Masks, Trainer};

fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.2 * v
    }
}

fn elu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        v.exp_m1()
    }
}

/// Straight-line evaluation of a two-layer attention network with learned
/// edge weights `w(u, v)`; self-loops included with weight 1.
fn brute_force(params: &GatParams<f64>, x: &Array2<f64>, adj: &Array2<f64>, w: impl Fn(usize, usize) -> f64) -> Array2<f64> {
    let n = x.nrows();
    let mut h = x.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let f = layer.out_dim;
        let wh = h.dot(&layer.weight);
        let mut out = Array2::zeros((n, layer.heads * f));
        for head in 0..layer.heads {
            let score = |m: &Array2<f64>, i: usize| (0..f).map(|k| wh[[i, head * f + k]] * m[[k, head]]).sum::<f64>();
            for v in 0..n {
                let nbrs: Vec<usize> = (0..n).filter(|&u| u == v || adj[[u, v]] > 0.0).collect();
                let logits: Vec<f64> = nbrs
                    .iter()
                    .map(|&u| leaky(score(&layer.att_dst, v) + score(&layer.att_src, u)))
                    .collect();
                let z: f64 = logits.iter().map(|e| e.exp()).sum();
                for (&u, e) in nbrs.iter().zip(&logits) {
                    let coef = e.exp() / z * if u == v { 1.0 } else { w(u, v) };
                    for k in 0..f {
                        out[[v, head * f + k]] += coef * wh[[u, head * f + k]];
                    }
                }
            }
        }
        h = if l + 1 < params.layers.len() {
            out.mapv(elu)
        } else {
            let mut avg = Array2::zeros((n, f));
            for head in 0..layer.heads {
                avg += &out.slice(ndarray::s![.., head * f..(head + 1) * f]);
            }
            avg / layer.heads as f64
        };
    }
    for mut row in h.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.mapv(|v| (v - m).exp()).sum().ln();
        row.mapv_inplace(|v| v - lse);
    }
    h
}

fn triangle() -> Graph<f64> {
    let x = array![[0.5, -1.0, 0.2], [1.5, 0.3, -0.7], [-0.4, 0.9, 1.1]];
    Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)], x, vec![Some(0), Some(1), Some(0)])
        .unwrap()
        .with_masks(Masks::from_indices(3, &[0, 1], &[2], &[]).unwrap())
        .unwrap()
}

fn small_cfg() -> GatConfig {
    GatConfig {
        heads: vec![2, 2],
        hidden_dim: 3,
        ..Default::default()
    }
}

fn assert_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) {
    assert_eq!(a.dim(), b.dim());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{x} vs {y}");
    }
}

fn three_node_gat_matches_brute_force() {
    let g = triangle();
    let params = GatParams::init(&small_cfg(), 3, 2, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let edges = EdgeIndex::from_graph(&g, true);
    let got = infer(&params, &NodeFeatures::new(g.features().clone()), &edges, None, 0.2).unwrap();
    assert_close(&got, &brute_force(&params, g.features(), g.adjacency(), |_, _| 1.0), 1e-10);
}

fn three_node_revised_attention_matches_brute_force() {
    let g = triangle();
    let params = GatParams::init(&small_cfg(), 3, 2, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let mut state = RevisedState::init(&g, true).unwrap();
    state.set_weight(0, 1, 0.35).unwrap();
    state.set_weight(1, 2, 0.8).unwrap();
    state.set_weight(0, 2, 0.05).unwrap();
    let got = rogat_infer(&params, &state, 0.2).unwrap();
    let w = |u, v| state.weight(u, v).unwrap();
    assert_close(&got, &brute_force(&params, g.features(), g.adjacency(), w), 1e-10);
}

fn revised_attention_at_initialization_is_plain_attention() {
    let g = triangle();
    let params = GatParams::init(&small_cfg(), 3, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let state = RevisedState::init(&g, true).unwrap();
    for att in params.attention(g.features(), state.base_edges(), 0.2).unwrap() {
        assert_eq!(revised_attention(&att, &state).unwrap(), att);
    }
    let other = EdgeAttention {
        edges: EdgeIndex::new(4, &[(0, 1)], true),
        coefficients: Array2::<f64>::ones((6, 1)),
    };
    assert!(revised_attention(&other, &state).is_err());
}

fn initial_state_reproduces_plain_logits() {
    let g = triangle();
    let params = GatParams::init(&small_cfg(), 3, 2, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let state = RevisedState::init(&g, true).unwrap();
    let edges = EdgeIndex::from_graph(&g, true);
    let plain = infer(&params, &NodeFeatures::new(g.features().clone()), &edges, None, 0.2).unwrap();
    assert_eq!(rogat_infer(&params, &state, 0.2).unwrap(), plain);
}

fn fully_silenced_graph_is_a_per_node_network() {
    let g = triangle();
    let params = GatParams::init(&small_cfg(), 3, 2, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let mut state = RevisedState::init(&g, true).unwrap();
    state.a_bar_mut().fill(0.0);
    let empty = Graph::from_edges(3, &[], g.features().clone(), vec![Some(0); 3]).unwrap();
    let isolated = infer(
        &params,
        &NodeFeatures::new(g.features().clone()),
        &EdgeIndex::from_graph(&empty, true),
        None,
        0.2,
    )
    .unwrap();
    assert_eq!(rogat_infer(&params, &state, 0.2).unwrap(), isolated);
    // Each row depends on its own features only.
    let mut x = g.features().clone();
    x.row_mut(2).fill(9.0);
    let mut moved = RevisedState::init(&g.with_features(x).unwrap(), true).unwrap();
    moved.a_bar_mut().fill(0.0);
    let after = rogat_infer(&params, &moved, 0.2).unwrap();
    assert_eq!(after.row(0), isolated.row(0));
    assert_eq!(after.row(1), isolated.row(1));
}

fn ring(n: usize) -> Graph<f64> {
    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).map(|(a, b)| (a.min(b), a.max(b))).collect();
    edges.push((0, n / 2));
    let x = Array2::from_shape_fn((n, 4), |(i, j)| ((i * 5 + j * 3) % 7) as f64 / 7.0);
    let labels = (0..n).map(|i| Some(i % 3)).collect();
    let train: Vec<usize> = (0..n).step_by(3).collect();
    let val: Vec<usize> = (1..n).step_by(3).collect();
    let test: Vec<usize> = (2..n).step_by(3).collect();
    Graph::from_edges(n, &edges, x, labels)
        .unwrap()
        .with_masks(Masks::from_indices(n, &train, &val, &test).unwrap())
        .unwrap()
}

fn silencing_equals_deletion() {
    let g = ring(9);
    let cfg = small_cfg();
    let mut state = RevisedState::init(&g, true).unwrap();
    state.set_weight(2, 3, 0.0).unwrap();
    state.set_weight(0, 4, 0.0).unwrap();
    state.set_weight(5, 6, 0.4).unwrap();

    let kept: Vec<(usize, usize)> = g.edges().into_iter().filter(|&e| e != (2, 3) && e != (0, 4)).collect();
    let deleted = Graph::from_edges(9, &kept, g.features().clone(), g.labels().to_vec())
        .unwrap()
        .with_masks(g.masks().clone())
        .unwrap();
    let mut other = RevisedState::init(&deleted, true).unwrap();
    other.set_weight(5, 6, 0.4).unwrap();

    let params = GatParams::init(&cfg, 4, 3, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(rogat_infer(&params, &state, 0.2).unwrap(), rogat_infer(&params, &other, 0.2).unwrap());

    // Training steps, dropout included, follow the same trajectory.
    let (ea, wa) = state.attention_support();
    let (eb, wb) = other.attention_support();
    let x = NodeFeatures::new(g.features().clone());
    let mut ta = Trainer::new(&g, &cfg).unwrap();
    let mut tb = Trainer::new(&deleted, &cfg).unwrap();
    for _ in 0..5 {
        assert_eq!(
            ta.epoch(&x, &ea, wa.as_deref()).unwrap(),
            tb.epoch(&x, &eb, wb.as_deref()).unwrap()
        );
    }
    assert_eq!(ta.params(), tb.params());
}

fn relabeling_nodes_permutes_outputs() {
    let g = ring(8);
    let perm = [3, 7, 0, 5, 1, 6, 2, 4];
    let edges: Vec<(usize, usize)> = g
        .edges()
        .into_iter()
        .map(|(i, j)| (perm[i].min(perm[j]), perm[i].max(perm[j])))
        .collect();
    let mut x = Array2::zeros(g.features().dim());
    for (i, &pi) in perm.iter().enumerate() {
        x.row_mut(pi).assign(&g.features().row(i));
    }
    let h = Graph::from_edges(8, &edges, x.clone(), vec![Some(0); 8]).unwrap();
    let params = GatParams::init(&small_cfg(), 4, 3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let a = infer(&params, &NodeFeatures::new(g.features().clone()), &EdgeIndex::from_graph(&g, true), None, 0.2).unwrap();
    let b = infer(&params, &NodeFeatures::new(x), &EdgeIndex::from_graph(&h, true), None, 0.2).unwrap();
    for (i, &pi) in perm.iter().enumerate() {
        for (p, q) in a.row(i).iter().zip(b.row(pi)) {
            assert!((p - q).abs() <= 1e-12);
        }
    }
}

fn training_is_bit_reproducible() {
    let g = ring(12);
    let cfg = GatConfig { epochs: 15, ..small_cfg() };
    let (a, b) = (train_gat(&g, &cfg).unwrap(), train_gat(&g, &cfg).unwrap());
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);

    let rcfg = RogatConfig { t1: 3, t2: 4, gat: cfg, ..Default::default() };
    let (a, b) = (train_rogat(&g, &rcfg, None).unwrap(), train_rogat(&g, &rcfg, None).unwrap());
    assert_eq!(a.epochs, b.epochs);
    assert_eq!(a.params, b.params);
    assert_eq!(a.final_state, b.final_state);
}

fn disabled_refinement_reduces_to_plain_training() {
    let g = ring(12);
    let t2 = 20;
    let gat = GatConfig { epochs: t2, patience: t2, ..small_cfg() };
    let plain = train_gat(&g, &gat).unwrap();
    let cfg = RogatConfig {
        t1: 1,
        t2,
        lambda: 1.0,
        enable_structure: false,
        enable_feature: false,
        gat,
        ..Default::default()
    };
    let revised = train_rogat(&g, &cfg, None).unwrap();
    assert_eq!(revised.epochs, plain.history);
    assert_eq!(revised.final_state, RevisedState::init(&g, true).unwrap());
}

/// Random two-class graph with edge probability `p` and features in `[-1, 1)`.
fn random_graph(n: usize, p: f64, seed: u64) -> Graph<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let x = Array2::from_shape_simple_fn((n, 3), || rng.random_range(-1.0..1.0));
    Graph::from_edges(n, &edges, x, (0..n).map(|i| Some(i % 2)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

        fn attention_sums_to_one(n in 2usize..10, p in 0.0f64..0.7, seed in any::<u64>()) {
        let g = random_graph(n, p, seed);
        let cfg = GatConfig { heads: vec![3, 2], hidden_dim: 4, ..Default::default() };
        let params = GatParams::init(&cfg, 3, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let edges = EdgeIndex::from_graph(&g, true);
        for layer in params.attention(g.features(), &edges, 0.2).unwrap() {
            for s in layer.destination_sums() {
                prop_assert!((s - 1.0).abs() <= 1e-12);
            }
        }
    }

        fn projections_are_idempotent(n in 2usize..10, p in 0.2f64..0.8, seed in any::<u64>()) {
        let g = random_graph(n, p, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut s = RevisedState::init(&g, true).unwrap();
        for w in s.a_bar_mut() {
            *w = rng.random_range(-1.0..2.0);
        }
        s.x_bar_mut().mapv_inplace(|v| v * rng.random_range(-3.0..3.0));
        s.project_structure();
        s.project_features();
        let once = s.clone();
        s.project_structure();
        s.project_features();
        prop_assert_eq!(once, s);
    }

        fn structure_steps_keep_weights_symmetric_and_bounded(
        n in 2usize..10,
        p in 0.2f64..0.8,
        alpha in 0.0f64..5.0,
        eta in 0.0f64..0.5,
        seed in any::<u64>(),
    ) {
        let g = random_graph(n, p, seed);
        let mut s = RevisedState::init(&g, true).unwrap();
        for _ in 0..5 {
            s.structure_step(alpha, eta);
            let a = s.a_bar_dense();
            prop_assert_eq!(&a, &a.t());
            prop_assert!(s.a_bar().iter().all(|&w| (0.0..=1.0).contains(&w)));
            for (&(i, j), &w) in s.edges().iter().zip(s.a_bar()) {
                prop_assert_eq!(s.weight(i, j), Some(w));
                prop_assert_eq!(s.weight(j, i), Some(w));
            }
        }
    }
}

register! {
    three_node_gat_matches_brute_force,
    three_node_revised_attention_matches_brute_force,
    revised_attention_at_initialization_is_plain_attention,
    initial_state_reproduces_plain_logits,
    fully_silenced_graph_is_a_per_node_network,
    silencing_equals_deletion,
    relabeling_nodes_permutes_outputs,
    training_is_bit_reproducible,
    disabled_refinement_reduces_to_plain_training,
    attention_sums_to_one,
    projections_are_idempotent,
    structure_steps_keep_weights_symmetric_and_bounded,
}
