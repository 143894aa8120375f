//! Central finite differences against reverse-mode gradients.

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rogat_core::gat::{forward, ForwardSpec, Input, Trainer};
use rogat_core::graph::EdgeIndex;
use rogat_core::rogat::{RevisedState, RogatConfig};
use rogat_core::tensor::CsrMatrix;
use rogat_core::{GatConfig, Graph, Masks, Result, Tape, Var};

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
const TRIALS: u64 = 5;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

/// Random inputs whose entries all satisfy `|x| >= margin`, keeping
/// kinked ops away from their kinks.
fn away_from_zero(rows: usize, cols: usize, margin: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    random(rows, cols, rng).mapv(|v| if v.abs() < margin { v.signum() * margin + v } else { v })
}

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= REL_TOL * analytic.abs().max(numeric.abs()) + 1e-8
}

/// Builds `Σ out ⊙ probe` from `build`, differentiates it, and compares every
/// input gradient with central differences.
fn check<F>(name: &str, inputs: &[Array2<f64>], build: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let loss = |values: &[Array2<f64>], grads: bool| -> (f64, Vec<Array2<f64>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.param(v.clone())).collect();
        let out = build(&mut tape, &vars).unwrap();
        let (r, c) = tape.shape(out);
        let probe = Array2::from_shape_fn((r, c), |(i, j)| 0.3 + 0.7 * ((i * 7 + j * 3) % 5) as f64 / 5.0);
        let probe = tape.constant(probe);
        let weighted = tape.mul(out, probe).unwrap();
        let total = tape.sum(weighted);
        let value = tape.value(total)[[0, 0]];
        if !grads {
            return (value, Vec::new());
        }
        tape.backward(total).unwrap();
        let g = vars
            .iter()
            .map(|&v| tape.grad(v).cloned().unwrap_or_else(|| Array2::zeros(tape.shape(v))))
            .collect();
        (value, g)
    };
    let (_, analytic) = loss(inputs, true);
    for (k, input) in inputs.iter().enumerate() {
        for idx in ndarray::indices(input.dim()) {
            let mut plus = inputs.to_vec();
            plus[k][idx] += H;
            let mut minus = inputs.to_vec();
            minus[k][idx] -= H;
            let numeric = (loss(&plus, false).0 - loss(&minus, false).0) / (2.0 * H);
            let a = analytic[k][idx];
            assert!(
                close(a, numeric),
                "{name}: input {k} at {idx:?}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

fn small_edges() -> EdgeIndex {
    EdgeIndex::new(5, &[(0, 1), (1, 2), (2, 3), (0, 3), (3, 4)], true)
}

fn matmul_gradients() {
    for t in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(t);
        let (a, b) = (random(4, 3, &mut rng), random(3, 5, &mut rng));
        check("matmul", &[a, b], |tape, v| tape.matmul(v[0], v[1]));
    }
}

fn sparse_left_operand_gradient() {
    for t in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(t);
        let mut a = Array2::zeros((6, 8));
        a[[0, 2]] = 1.0;
        a[[3, 7]] = 0.5;
        a[[5, 1]] = -2.0;
        let sparse = Arc::new(CsrMatrix::from_dense(&a));
        let b = random(8, 3, &mut rng);
        check("sparse_matmul", &[b], |tape, v| tape.sparse_matmul(Arc::clone(&sparse), v[0]));
        // The dense product picks the sparse kernel on its own at this density.
        check("matmul_autodetect", &[a.clone(), random(8, 3, &mut rng)], |tape, v| {
            tape.matmul(v[0], v[1])
        });
    }
}

fn elementwise_gradients() {
    for t in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(t);
        let (a, b) = (random(3, 4, &mut rng), random(3, 4, &mut rng));
        check("add", &[a.clone(), b.clone()], |tape, v| tape.add(v[0], v[1]));
        check("mul", &[a.clone(), b.clone()], |tape, v| tape.mul(v[0], v[1]));
        check("scale", std::slice::from_ref(&a), |tape, v| Ok(tape.scale(v[0], -1.7)));
        check("sum", std::slice::from_ref(&a), |tape, v| Ok(tape.sum(v[0])));
        check("exp", std::slice::from_ref(&a), |tape, v| Ok(tape.exp(v[0])));
        let k = away_from_zero(3, 4, 1e-3, &mut rng);
        check("leaky_relu", std::slice::from_ref(&k), |tape, v| Ok(tape.leaky_relu(v[0], 0.2)));
        check("elu", &[k], |tape, v| Ok(tape.elu(v[0])));
    }
}

fn column_gradients() {
    for t in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(t);
        let (a, b) = (random(3, 2, &mut rng), random(3, 4, &mut rng));
        check("concat_cols", &[a, b.clone()], |tape, v| tape.concat_cols(&[v[0], v[1]]));
        check("slice_cols", &[b], |tape, v| tape.slice_cols(v[0], 1, 3));
    }
}

fn softmax_and_loss_gradients() {
    for t in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(t);
        let a = random(4, 3, &mut rng);
        check("row_log_softmax", std::slice::from_ref(&a), |tape, v| Ok(tape.row_log_softmax(v[0])));
        check("masked_nll_loss", &[a], |tape, v| {
            let lp = tape.row_log_softmax(v[0]);
            tape.masked_nll_loss(lp, &[2, 0], &[0, 3])
        });
        let edges = small_edges();
        let logits = random(edges.n_edges(), 2, &mut rng);
        check("segment_softmax", &[logits], |tape, v| {
            tape.segment_softmax(v[0], edges.offsets_shared())
        });
    }
}

fn edge_gradients() {
    let edges = small_edges();
    for t in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(t);
        let x = random(5, 6, &mut rng);
        check("gather_rows", std::slice::from_ref(&x), |tape, v| tape.gather_rows(v[0], edges.src_shared()));
        let att = random(3, 2, &mut rng);
        check("head_scores", &[x.clone(), att], |tape, v| tape.head_scores(v[0], v[1]));
        let w = random(edges.n_edges(), 2, &mut rng);
        check("edge_aggregate", &[w, x], |tape, v| {
            tape.edge_aggregate(v[0], v[1], edges.src_shared(), edges.dst_shared())
        });
    }
}

fn full_forward_gradients() {
    let edges = small_edges();
    let weight: Vec<f64> = (0..edges.n_edges()).map(|e| 0.2 + 0.1 * (e % 7) as f64).collect();
    let cfg = GatConfig {
        heads: vec![2, 2],
        hidden_dim: 3,
        ..Default::default()
    };
    for t in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(t);
        let x = random(5, 4, &mut rng);
        let params = rogat_core::GatParams::init(&cfg, 4, 3, &mut rng).unwrap();
        let mut inputs = vec![x];
        inputs.extend(params.tensors().into_iter().cloned());
        for w in [None, Some(weight.as_slice())] {
            check("gat_forward", &inputs, |tape, v| {
                let mut p = params.clone();
                for (dst, &var) in p.tensors_mut().into_iter().zip(&v[1..]) {
                    *dst = tape.value(var).clone();
                }
                let vars = rogat_core::gat::ParamVars {
                    layers: v[1..]
                        .chunks(3)
                        .map(|c| rogat_core::gat::LayerVars {
                            weight: c[0],
                            att_src: c[1],
                            att_dst: c[2],
                        })
                        .collect(),
                };
                let spec = ForwardSpec {
                    edges: &edges,
                    edge_weight: w,
                    dropout: 0.0,
                    negative_slope: 0.2,
                    training: false,
                };
                let out = forward(tape, &p, &vars, Input::Dense(v[0]), &spec, &mut ChaCha8Rng::seed_from_u64(0))?;
                Ok(out.log_probs)
            });
        }
    }
}

/// Four nodes, a 4-cycle plus one chord, with all three splits populated.
fn four_node_graph(rng: &mut ChaCha8Rng) -> Graph<f64> {
    let x = random(4, 3, rng);
    let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 3), (0, 2)], x, vec![Some(0), Some(1), Some(0), Some(1)]).unwrap();
    g.with_masks(Masks::from_indices(4, &[0, 1], &[2], &[3]).unwrap()).unwrap()
}

fn structure_gradient_matches_dense_objective() {
    // ‖A − Ā‖²_F + α·½ Σ_ij Ā_ij ‖x̄_i − x̄_j‖², perturbing one directed entry.
    let dense_objective = |a: &Array2<f64>, a_bar: &Array2<f64>, x: &Array2<f64>, alpha: f64| {
        let mut total = 0.0;
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                let d2: f64 = (&x.row(i) - &x.row(j)).mapv(|v| v * v).sum();
                total += (a[[i, j]] - a_bar[[i, j]]).powi(2) + alpha * 0.5 * a_bar[[i, j]] * d2;
            }
        }
        total
    };
    for t in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + t);
        let g = four_node_graph(&mut rng);
        let mut state = RevisedState::init(&g, true).unwrap();
        for w in state.a_bar_mut() {
            *w = rng.random_range(0.1..0.9);
        }
        let alpha = rng.random_range(0.5..2.0);
        let grad = state.structure_gradient(alpha);
        let a_bar = state.a_bar_dense();
        for (k, &(i, j)) in state.edges().iter().enumerate() {
            let mut plus = a_bar.clone();
            plus[[i, j]] += H;
            let mut minus = a_bar.clone();
            minus[[i, j]] -= H;
            let numeric = (dense_objective(g.adjacency(), &plus, state.x_bar(), alpha)
                - dense_objective(g.adjacency(), &minus, state.x_bar(), alpha))
                / (2.0 * H);
            assert!(close(grad[k], numeric), "edge {k}: {} vs {numeric}", grad[k]);
        }
    }
}

fn feature_gradient_matches_composite_objective() {
    for t in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + t);
        let g = four_node_graph(&mut rng);
        let cfg = RogatConfig {
            beta: rng.random_range(0.5..1.5),
            gamma: rng.random_range(0.5..1.5),
            lambda: rng.random_range(0.5..1.5),
            gat: GatConfig {
                heads: vec![2, 1],
                hidden_dim: 3,
                seed: t,
                ..Default::default()
            },
            ..Default::default()
        };
        let trainer = Trainer::new(&g, &cfg.gat).unwrap();
        let mut state = RevisedState::init(&g, true).unwrap();
        for w in state.a_bar_mut() {
            *w = rng.random_range(0.1..1.0);
        }
        state.x_bar_mut().scaled_add(0.1, &random(4, 3, &mut rng));
        let (_, grad) = state.feature_gradient(&cfg, &trainer).unwrap();
        let objective = |s: &RevisedState<f64>| {
            let (edges, weight) = s.attention_support();
            let (loss, _) = trainer.input_gradient(s.x_bar(), &edges, weight.as_deref()).unwrap();
            s.feature_objective(cfg.beta, cfg.gamma) + cfg.lambda * loss
        };
        for idx in ndarray::indices(state.x_bar().dim()) {
            let mut plus = state.clone();
            plus.x_bar_mut()[idx] += H;
            let mut minus = state.clone();
            minus.x_bar_mut()[idx] -= H;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * H);
            assert!(close(grad[idx], numeric), "{idx:?}: {} vs {numeric}", grad[idx]);
        }
    }
}

register! {
    matmul_gradients,
    sparse_left_operand_gradient,
    elementwise_gradients,
    column_gradients,
    softmax_and_loss_gradients,
    edge_gradients,
    full_forward_gradients,
    structure_gradient_matches_dense_objective,
    feature_gradient_matches_composite_objective,
}
