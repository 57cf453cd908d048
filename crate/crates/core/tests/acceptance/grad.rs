use concept_lm::diffusion::NoiseSchedule;
use concept_lm::model::{ConceptModel, ModelConfig, TwoTowerModel};
use concept_lm::nn::gradcheck::{finite_difference, max_relative_error};
use concept_lm::nn::{Graph, KeyMask, Mat, Var};
use concept_lm::trainloop::{batch_loss, StepNoise, TrainItem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const H: f64 = 1e-5;
const FLOOR: f64 = 1e-6;

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_vec(
        r,
        c,
        (0..r * c).map(|_| rng.sample(StandardNormal)).collect(),
    )
    .unwrap()
}

type Build = fn(&mut Graph<'static>, &[Var]) -> Var;

struct Primitive {
    name: &'static str,
    shapes: &'static [(usize, usize)],
    build: Build,
}

fn primitives() -> Vec<Primitive> {
    vec![
        Primitive {
            name: "matmul",
            shapes: &[(3, 4), (4, 2)],
            build: |g, v| g.matmul(v[0], v[1]).unwrap(),
        },
        Primitive {
            name: "add",
            shapes: &[(3, 4), (3, 4)],
            build: |g, v| g.add(v[0], v[1]).unwrap(),
        },
        Primitive {
            name: "sub",
            shapes: &[(3, 4), (3, 4)],
            build: |g, v| g.sub(v[0], v[1]).unwrap(),
        },
        Primitive {
            name: "mul",
            shapes: &[(3, 4), (3, 4)],
            build: |g, v| g.mul(v[0], v[1]).unwrap(),
        },
        Primitive {
            name: "add_row",
            shapes: &[(3, 4), (1, 4)],
            build: |g, v| g.add_row(v[0], v[1]).unwrap(),
        },
        Primitive {
            name: "scale",
            shapes: &[(3, 4)],
            build: |g, v| g.scale(v[0], -1.7).unwrap(),
        },
        Primitive {
            name: "add_const",
            shapes: &[(3, 4)],
            build: |g, v| g.add_const(v[0], 0.3).unwrap(),
        },
        Primitive {
            name: "linear",
            shapes: &[(3, 4), (4, 5), (1, 5)],
            build: |g, v| g.linear(v[0], v[1], Some(v[2])).unwrap(),
        },
        Primitive {
            name: "layer_norm",
            shapes: &[(3, 6), (1, 6), (1, 6)],
            build: |g, v| g.layer_norm(v[0], Some(v[1]), Some(v[2])).unwrap(),
        },
        Primitive {
            name: "gelu",
            shapes: &[(3, 4)],
            build: |g, v| g.gelu(v[0]).unwrap(),
        },
        Primitive {
            name: "silu",
            shapes: &[(3, 4)],
            build: |g, v| g.silu(v[0]).unwrap(),
        },
        Primitive {
            name: "softmax",
            shapes: &[(3, 5)],
            build: |g, v| g.softmax(v[0]).unwrap(),
        },
        Primitive {
            name: "causal_self_attention",
            shapes: &[(5, 4), (5, 4), (5, 4)],
            build: |g, v| {
                g.causal_self_attention(v[0], v[1], v[2], 2, &[2, 3])
                    .unwrap()
            },
        },
        Primitive {
            name: "cross_attention",
            shapes: &[(3, 4), (4, 4), (4, 4)],
            build: |g, v| {
                let mask = KeyMask::new(4, vec![vec![0..1], vec![0..3], vec![0..1, 2..4]]).unwrap();
                g.cross_attention(v[0], v[1], v[2], 2, &mask).unwrap()
            },
        },
        Primitive {
            name: "gather_rows",
            shapes: &[(4, 3)],
            build: |g, v| g.gather_rows(v[0], &[2, 0, 2, 3]).unwrap(),
        },
        Primitive {
            name: "concat_rows",
            shapes: &[(2, 3), (3, 3)],
            build: |g, v| g.concat_rows(&[v[0], v[1]]).unwrap(),
        },
        Primitive {
            name: "slice_cols",
            shapes: &[(3, 6)],
            build: |g, v| g.slice_cols(v[0], 1, 3).unwrap(),
        },
        Primitive {
            name: "mse",
            shapes: &[(3, 4), (3, 4)],
            build: |g, v| g.mse(v[0], v[1]).unwrap(),
        },
        Primitive {
            name: "sum",
            shapes: &[(3, 4)],
            build: |g, v| g.sum(v[0]).unwrap(),
        },
    ]
}

/// Scalar probe `sum(op(inputs) ⊙ weights)`.
fn probe(
    p: &Primitive,
    inputs: &[Mat],
    weights: &Mat,
    want_grad: Option<usize>,
) -> (f64, Option<Mat>) {
    let mut g = Graph::standalone();
    let vars: Vec<Var> = inputs.iter().map(|m| g.input(m.clone(), true)).collect();
    let out = (p.build)(&mut g, &vars);
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w).unwrap();
    let loss = g.sum(prod).unwrap();
    let value = g.scalar(loss);
    let grad = want_grad.map(|i| {
        let grads = g.backward(loss).unwrap();
        grads
            .wrt(vars[i])
            .cloned()
            .unwrap_or_else(|| Mat::zeros(inputs[i].rows(), inputs[i].cols()))
    });
    (value, grad)
}

/// Returns (draws, worst relative error).
pub fn primitive_checks(draws_per_primitive: usize) -> Result<(usize, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut draws = 0;
    for p in primitives() {
        for _ in 0..draws_per_primitive {
            let inputs: Vec<Mat> = p
                .shapes
                .iter()
                .map(|&(r, c)| randn(&mut rng, r, c))
                .collect();
            let out_shape = {
                let mut g = Graph::standalone();
                let vars: Vec<Var> = inputs.iter().map(|m| g.input(m.clone(), true)).collect();
                let o = (p.build)(&mut g, &vars);
                g.shape(o)
            };
            let weights = randn(&mut rng, out_shape.0, out_shape.1);
            for i in 0..inputs.len() {
                let (_, analytic) = probe(&p, &inputs, &weights, Some(i));
                let numeric = finite_difference(&inputs[i], H, |x| {
                    let mut probe_inputs = inputs.clone();
                    probe_inputs[i] = x.clone();
                    probe(&p, &probe_inputs, &weights, None).0
                });
                let err = max_relative_error(&analytic.unwrap(), &numeric, FLOOR);
                if err >= 1e-4 {
                    return Err(format!("{} input {i}: relative error {err:.2e}", p.name));
                }
                worst = worst.max(err);
            }
            draws += 1;
        }
    }
    Ok((draws, worst))
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_embedding: 4,
        d_model: 8,
        n_ctx_layers: 1,
        n_den_layers: 1,
        n_heads: 2,
        max_positions: 8,
        t_train: 10,
        cfg_drop_prob: 0.3,
        init_std: 0.3,
    }
}

/// Full training loss against every parameter element of a tiny model.
pub fn end_to_end_checks(draws: usize) -> Result<(usize, f64), String> {
    let sched = NoiseSchedule::cosine(10).unwrap();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for draw in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + draw as u64);
        let mut model = TwoTowerModel::new(tiny_config(), draw as u64).unwrap();
        let items: Vec<TrainItem> = (0..2)
            .map(|k| {
                let n = 3 + k;
                TrainItem {
                    id: format!("s{k}"),
                    embeddings: randn(&mut rng, n, 4),
                    targets: (1..n).collect(),
                }
            })
            .collect();
        let refs: Vec<&TrainItem> = items.iter().collect();
        let noise = StepNoise {
            sched: &sched,
            seed: draw as u64,
            step: 1,
            cfg_drop_prob: 0.3,
        };
        let loss_of = |m: &TwoTowerModel| {
            let mut g = Graph::inference(m.params());
            let l = batch_loss(m, &mut g, &refs, &noise).unwrap();
            g.scalar(l)
        };
        let grads = {
            let mut g = Graph::new(model.params());
            let l = batch_loss(&model, &mut g, &refs, &noise).unwrap();
            g.backward(l).unwrap()
        };
        let ids: Vec<_> = model
            .params()
            .iter()
            .map(|(id, t)| (id, t.name.clone()))
            .collect();
        for (id, name) in ids {
            let value = model.params().value(id).clone();
            let analytic = grads
                .param(id)
                .cloned()
                .unwrap_or_else(|| Mat::zeros(value.rows(), value.cols()));
            let numeric = finite_difference(&value, H, |x| {
                *model.params_mut().get_mut(id).value_mut() = x.clone();
                loss_of(&model)
            });
            *model.params_mut().get_mut(id).value_mut() = value;
            let err = max_relative_error(&analytic, &numeric, FLOOR);
            if err >= 1e-3 {
                return Err(format!(
                    "draw {draw} parameter {name}: relative error {err:.2e}"
                ));
            }
            worst = worst.max(err);
        }
        checked += 1;
    }
    Ok((checked, worst))
}

pub fn check() -> Result<String, String> {
    let (p, pw) = primitive_checks(6)?;
    let (e, ew) = end_to_end_checks(10)?;
    Ok(format!(
        "{p} primitive draws (worst {pw:.1e}), {e} end-to-end draws (worst {ew:.1e})"
    ))
}
