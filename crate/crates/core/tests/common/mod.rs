//! Oracles shared by the integration tests. Nothing here calls into the
//! crate's environment or differentiation code paths being checked.

#![allow(dead_code)]

use plsm_lab::tape::{Tape, Var};
use plsm_lab::tensor::Tensor;

/// Finite-difference step for the five-point stencil.
pub const FD_STEP: f64 = 1e-4;

/// Largest relative error between the tape gradient and a fourth-order
/// central finite difference, over every entry of every input. Entries where both
/// derivatives are below `1e-7` in magnitude count as agreeing.
pub fn max_rel_grad_error(inputs: &[Tensor], build: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let eval = |vals: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().enumerate().map(|(i, t)| tape.param(t.clone(), i)).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).data()[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().enumerate().map(|(i, t)| tape.param(t.clone(), i)).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).expect("backward");
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[i]);
        for j in 0..input.numel() {
            let at = |k: f64| {
                let mut v = inputs.to_vec();
                v[i] = perturb(&v[i], j, k * FD_STEP);
                eval(&v)
            };
            let numeric = (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * FD_STEP);
            let a = analytic.data()[j];
            let scale = a.abs().max(numeric.abs());
            if scale > 1e-7 {
                let e = (a - numeric).abs() / scale;
                worst = worst.max(e);
            }
        }
    }
    worst
}

fn perturb(t: &Tensor, j: usize, by: f64) -> Tensor {
    let mut data = t.data().to_vec();
    data[j] += by;
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

/// Deterministic pseudo-random values in `[-1, 1)`, kept at least `gap`
/// away from zero in magnitude so kinks are not straddled.
pub fn values(seed: u64, n: usize, gap: f64) -> Vec<f64> {
    let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        let v = (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
        if v.abs() >= gap {
            out.push(v);
        }
    }
    out
}

pub fn tensor(seed: u64, shape: &[usize], gap: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), values(seed, n, gap)).unwrap()
}

/// Independent reference for the shapes rules on an occupancy grid:
/// moving object `obj` one cell in direction `dir` (0 north, 1 east,
/// 2 south, 3 west) succeeds only if the target cell is on the grid and
/// empty.
pub fn shapes_rule(positions: &[(usize, usize)], n: usize, obj: usize, dir: usize) -> Vec<(usize, usize)> {
    let mut grid = vec![vec![false; n]; n];
    for &(r, c) in positions {
        grid[r][c] = true;
    }
    let (r, c) = positions[obj];
    let target = match dir {
        0 if r > 0 => Some((r - 1, c)),
        1 if c + 1 < n => Some((r, c + 1)),
        2 if r + 1 < n => Some((r + 1, c)),
        3 if c > 0 => Some((r, c - 1)),
        _ => None,
    };
    let mut out = positions.to_vec();
    if let Some((tr, tc)) = target {
        if !grid[tr][tc] {
            out[obj] = (tr, tc);
        }
    }
    out
}

/// One-hot occupancy rendering `[slots, n, n]`, flattened.
pub fn render_rule(positions: &[(usize, usize)], slots: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; slots * n * n];
    for (k, &(r, c)) in positions.iter().enumerate() {
        out[k * n * n + r * n + c] = 1.0;
    }
    out
}

/// Displacement of a heart-env move: eight compass directions clockwise
/// from north; any move whose target leaves the grid is cancelled.
pub fn heart_rule(r: usize, c: usize, n: usize, dir: usize) -> (isize, isize) {
    const D: [(isize, isize); 8] = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)];
    let (dr, dc) = D[dir];
    let (tr, tc) = (r as isize + dr, c as isize + dc);
    if tr < 0 || tc < 0 || tr >= n as isize || tc >= n as isize {
        (0, 0)
    } else {
        (dr, dc)
    }
}

/// Finite-difference error of every differentiable tape op and of three
/// randomly shaped composed networks, as `(name, max relative error)`.
pub fn gradient_suite() -> Vec<(String, f64)> {
    use plsm_lab::model::{ModelConfig, Variant, WorldModel};
    use plsm_lab::training::{objective, Batch, Negatives, TrainConfig};

    type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;
    // Reduce any op output to a scalar through a fixed weighting so that
    // every entry's gradient differs.
    fn reduce(tape: &mut Tape, v: Var) -> Var {
        let shape = tape.value(v).shape().to_vec();
        let w = tensor(991, &shape, 0.1);
        let w = tape.constant(w);
        let p = tape.mul(v, w).unwrap();
        tape.sum(p).unwrap()
    }
    let g = 0.05;
    let cases: Vec<(&str, Vec<Tensor>, Build)> = vec![
        ("matmul", vec![tensor(1, &[3, 4], g), tensor(2, &[4, 2], g)], Box::new(|t, v| {
            let o = t.matmul(v[0], v[1]).unwrap();
            reduce(t, o)
        })),
        ("add", vec![tensor(3, &[3, 4], g), tensor(4, &[3, 4], g)], Box::new(|t, v| {
            let o = t.add(v[0], v[1]).unwrap();
            reduce(t, o)
        })),
        ("add_broadcast_row", vec![tensor(5, &[3, 4], g), tensor(6, &[1, 4], g)], Box::new(|t, v| {
            let o = t.add(v[0], v[1]).unwrap();
            reduce(t, o)
        })),
        ("sub", vec![tensor(7, &[3, 4], g), tensor(8, &[3, 4], g)], Box::new(|t, v| {
            let o = t.sub(v[0], v[1]).unwrap();
            reduce(t, o)
        })),
        ("mul", vec![tensor(9, &[3, 4], g), tensor(10, &[3, 4], g)], Box::new(|t, v| {
            let o = t.mul(v[0], v[1]).unwrap();
            reduce(t, o)
        })),
        ("relu", vec![tensor(11, &[3, 4], g)], Box::new(|t, v| {
            let o = t.relu(v[0]).unwrap();
            reduce(t, o)
        })),
        ("concat", vec![tensor(12, &[3, 2], g), tensor(13, &[3, 3], g)], Box::new(|t, v| {
            let o = t.concat(v[0], v[1]).unwrap();
            reduce(t, o)
        })),
        ("slice", vec![tensor(14, &[3, 5], g)], Box::new(|t, v| {
            let o = t.slice(v[0], 1, 4).unwrap();
            reduce(t, o)
        })),
        ("sum", vec![tensor(15, &[3, 4], g)], Box::new(|t, v| {
            let s = t.square(v[0]).unwrap();
            t.sum(s).unwrap()
        })),
        ("mean", vec![tensor(16, &[3, 4], g)], Box::new(|t, v| {
            let s = t.square(v[0]).unwrap();
            t.mean(s).unwrap()
        })),
        ("square", vec![tensor(17, &[3, 4], g)], Box::new(|t, v| {
            let o = t.square(v[0]).unwrap();
            reduce(t, o)
        })),
        ("abs", vec![tensor(18, &[3, 4], g)], Box::new(|t, v| {
            let o = t.abs(v[0]).unwrap();
            reduce(t, o)
        })),
        ("max_const", vec![tensor(19, &[3, 4], g)], Box::new(|t, v| {
            let o = t.max_const(v[0], 0.0).unwrap();
            reduce(t, o)
        })),
        ("affine", vec![tensor(20, &[3, 4], g)], Box::new(|t, v| {
            let o = t.affine(v[0], -1.5, 0.25).unwrap();
            reduce(t, o)
        })),
        ("row_sqnorm", vec![tensor(21, &[3, 4], g)], Box::new(|t, v| {
            let o = t.row_sqnorm(v[0]).unwrap();
            reduce(t, o)
        })),
        ("row_l1norm", vec![tensor(22, &[3, 4], g)], Box::new(|t, v| {
            let o = t.row_l1norm(v[0]).unwrap();
            reduce(t, o)
        })),
        ("row_normalize", vec![tensor(28, &[3, 4], g)], Box::new(|t, v| {
            let o = t.row_normalize(v[0]).unwrap();
            reduce(t, o)
        })),
        ("topk", vec![Tensor::from_rows(&[vec![0.9, -0.1, 0.5, -0.7], vec![0.2, 0.8, -0.6, 0.35]]).unwrap()], Box::new(|t, v| {
            let o = t.topk(v[0], 2).unwrap();
            reduce(t, o)
        })),
        ("gather_rows", vec![tensor(23, &[4, 3], g)], Box::new(|t, v| {
            let o = t.gather_rows(v[0], &[2, 0, 2, 3]).unwrap();
            reduce(t, o)
        })),
        ("pairwise_sqdist", vec![tensor(24, &[3, 4], g), tensor(25, &[2, 4], g)], Box::new(|t, v| {
            let o = t.pairwise_sqdist(v[0], v[1]).unwrap();
            reduce(t, o)
        })),
        ("hinge_composite", vec![tensor(26, &[4, 3], g), tensor(27, &[4, 3], g)], Box::new(|t, v| {
            let d = t.sub(v[0], v[1]).unwrap();
            let n = t.row_sqnorm(d).unwrap();
            let m = t.affine(n, -1.0, 1.0).unwrap();
            let h = t.max_const(m, 0.0).unwrap();
            t.mean(h).unwrap()
        })),
    ];
    let mut out: Vec<(String, f64)> = cases
        .into_iter()
        .map(|(name, inputs, build)| (name.to_string(), max_rel_grad_error(&inputs, &*build)))
        .collect();

    // Whole objectives with respect to every model parameter, for three
    // randomly sized networks.
    let shapes = [(Variant::Plsm, 5, 3, 6), (Variant::Hybrid, 7, 4, 5), (Variant::LatentL1, 4, 2, 9)];
    for (i, &(variant, obs, act, hidden)) in shapes.iter().enumerate() {
        let config = ModelConfig {
            variant,
            latent_dim: 4,
            query_dim: 3,
            hidden_units: hidden,
            hidden_layers: 1 + i % 2,
            ..ModelConfig::default()
        };
        let model = WorldModel::new(config, obs, act, 40 + i as u64).unwrap();
        let batch = Batch {
            obs: tensor(50 + i as u64, &[5, obs], 0.0),
            actions: tensor(60 + i as u64, &[5, act], 0.0),
            next_obs: tensor(70 + i as u64, &[5, obs], 0.0),
        };
        let train = TrainConfig {
            beta: 0.3,
            margin: 4.0,
            ..TrainConfig::default()
        };
        let inputs: Vec<Tensor> = model.params().iter().map(|(_, t)| t.clone()).collect();
        let build = move |tape: &mut Tape, vars: &[Var]| {
            let mut m = model.clone();
            for (id, v) in vars.iter().enumerate() {
                *m.params_mut().get_mut(id) = tape.value(*v).clone();
            }
            let bound = plsm_lab::model::BoundModel {
                params: vars.to_vec(),
                target: None,
            };
            let negatives = Negatives::Permutation(vec![1, 2, 3, 4, 0]);
            objective(&m, tape, &bound, &batch, &train, &negatives).unwrap().total
        };
        out.push((format!("network_{}_{}", i, variant), max_rel_grad_error(&inputs, &build)));
    }
    out
}

/// Walks at least `min_transitions` transitions of a generated shapes
/// dataset and counts those whose next state or rendering disagrees with
/// the reference rules. Returns `(checked, mismatches)`.
pub fn shapes_oracle_check(min_transitions: usize, seed: u64) -> (usize, usize) {
    use plsm_lab::envs::{generate_dataset, EnvConfig};
    let config = EnvConfig::shapes(5).with_seed(seed);
    let per = config.episode_length - 1;
    let ds = generate_dataset(&config, min_transitions.div_ceil(per)).unwrap();
    let n = config.grid_size;
    let (mut checked, mut bad) = (0, 0);
    for e in 0..ds.episodes() {
        for t in 0..ds.episode_length() - 1 {
            let a = ds.action_index(e, t);
            let before = ds.state(e, t).positions;
            let expected = shapes_rule(&before, n, a / 4, a % 4);
            let after = ds.state(e, t + 1).positions;
            let rendered = render_rule(&after, 5, n);
            if after != expected || ds.observation(e, t + 1) != rendered.as_slice() {
                bad += 1;
            }
            checked += 1;
        }
    }
    (checked, bad)
}

/// Distinct ground-truth displacements appearing in a generated heart
/// dataset, after checking each one against the reference rule. `None`
/// if any transition disagrees.
pub fn heart_dataset_deltas(episodes: usize, seed: u64) -> Option<std::collections::BTreeSet<(isize, isize)>> {
    use plsm_lab::envs::{generate_dataset, EnvConfig};
    let config = EnvConfig::heart().with_seed(seed);
    let ds = generate_dataset(&config, episodes).unwrap();
    let mut seen = std::collections::BTreeSet::new();
    for e in 0..ds.episodes() {
        for t in 0..ds.episode_length() - 1 {
            let (r, c) = ds.state(e, t).positions[0];
            let (r2, c2) = ds.state(e, t + 1).positions[0];
            let d = (r2 as isize - r as isize, c2 as isize - c as isize);
            if d != heart_rule(r, c, config.grid_size, ds.action_index(e, t)) {
                return None;
            }
            seen.insert(d);
        }
    }
    Some(seen)
}
