mod common;

use common::{micro_batch, micro_config, random_params, random_targets};
use gobert::model::{gradients, loss, ModelConfig, ModelParameters};

const EPS: f64 = 1e-3;
const REL_TOL: f64 = 1e-4;
/// Absolute floor under which both values count as zero.
const ABS_FLOOR: f64 = 1e-9;

fn flat(p: &ModelParameters<f64>) -> Vec<(String, f64)> {
    p.blocks()
        .into_iter()
        .flat_map(|b| {
            let name = b.name.clone();
            b.data.iter().enumerate().map(move |(i, &v)| (format!("{name}[{i}]"), v)).collect::<Vec<_>>()
        })
        .collect()
}

fn set(p: &mut ModelParameters<f64>, mut k: usize, value: f64) {
    for b in p.blocks_mut() {
        if k < b.data.len() {
            b.data[k] = value;
            return;
        }
        k -= b.data.len();
    }
    panic!("coordinate out of range");
}

fn check(config: ModelConfig, lambda: f64, eps: f64) -> (usize, f64) {
    let params = random_params(config.clone(), 21);
    let targets = random_targets(config.vocab_size, config.label_size, 4);
    let batch = micro_batch();
    let seed = 77;
    let rho = config.neg_downsample;
    let (grad, _) = gradients(&params, &batch, Some(&targets), lambda, rho, seed).unwrap();
    let analytic = flat(&grad);
    let base = flat(&params);
    let mut worst = 0.0f64;
    let mut p = params.clone();
    for (k, (name, v)) in base.iter().enumerate() {
        set(&mut p, k, v + eps);
        let up = loss(&p, &batch, Some(&targets), lambda, rho, seed).unwrap().total;
        set(&mut p, k, v - eps);
        let down = loss(&p, &batch, Some(&targets), lambda, rho, seed).unwrap().total;
        set(&mut p, k, *v);
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[k].1;
        let scale = a.abs().max(numeric.abs());
        let err = if scale < ABS_FLOOR { 0.0 } else { (a - numeric).abs() / scale };
        worst = worst.max(err);
        assert!(err <= REL_TOL, "lambda {lambda}: {name} analytic {a:e} numeric {numeric:e} rel {err:e}");
    }
    (base.len(), worst)
}

#[test]
fn micro_model_matches_finite_differences() {
    for lambda in [0.0, 0.5, 1.0] {
        let (n, worst) = check(micro_config(), lambda, EPS);
        eprintln!("lambda {lambda}: {n} coordinates, worst relative error {worst:e}");
    }
}

#[test]
fn multi_head_projection_model_matches_finite_differences() {
    let config = ModelConfig { hidden: 8, layers: 2, heads: 2, ffn_dim: 12, proj_in: Some(5), ..micro_config() };
    // Deeper stack with smaller gradients; a finer step keeps truncation
    // error below the tolerance.
    let (n, worst) = check(config, 0.5, 1e-4);
    eprintln!("projected model: {n} coordinates, worst relative error {worst:e}");
}

#[test]
fn mlm_only_leaves_neighbour_head_untouched() {
    let config = micro_config();
    let params = random_params(config.clone(), 2);
    let targets = random_targets(12, 12, 1);
    let (g, l) = gradients(&params, &micro_batch(), Some(&targets), 0.0, 1.0, 5).unwrap();
    let head = g.neighbor_head.unwrap();
    assert!(head.weight.iter().chain(head.bias.iter()).all(|&v| v == 0.0));
    assert!(l.neighbor.is_some());

    let (g, _) = gradients(&params, &micro_batch(), Some(&targets), 1.0, 1.0, 5).unwrap();
    assert!(g.mlm_head.weight.iter().chain(g.mlm_head.bias.iter()).all(|&v| v == 0.0));
}

#[test]
fn repeated_examples_give_identical_gradients() {
    let config = micro_config();
    let params = random_params(config, 8);
    let targets = random_targets(12, 12, 3);
    let single = micro_batch();
    let mut rows = Vec::new();
    for b in 0..single.batch {
        rows.push(single.row(&single.input_ids, b).iter().copied().filter(|&t| t != 0).collect::<Vec<_>>());
    }
    let mut doubled_rows = rows.clone();
    doubled_rows.extend(rows.clone());
    let mut doubled = gobert::masking::MaskedBatch::from_rows(&doubled_rows);
    for copy in 0..2 {
        for b in 0..single.batch {
            for s in 0..single.seq {
                let src = b * single.seq + s;
                let dst = (copy * single.batch + b) * doubled.seq + s;
                doubled.labels[dst] = single.labels[src];
                doubled.original_ids[dst] = single.original_ids[src];
            }
        }
    }
    let (g1, l1) = gradients(&params, &single, Some(&targets), 0.5, 1.0, 1).unwrap();
    let (g2, l2) = gradients(&params, &doubled, Some(&targets), 0.5, 1.0, 1).unwrap();
    assert!((l1.total - l2.total).abs() < 1e-12);
    for (a, b) in g1.blocks().iter().zip(g2.blocks().iter()) {
        for (x, y) in a.data.iter().zip(b.data) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{}", a.name);
        }
    }
}

#[test]
fn removed_head_still_trains() {
    let config = ModelConfig { neighborhood_head: false, ..micro_config() };
    let params = random_params(config, 3);
    let (g, l) = gradients(&params, &micro_batch(), None, 0.0, 1.0, 0).unwrap();
    assert!(g.neighbor_head.is_none());
    assert!(l.neighbor.is_none());
    assert_eq!(Some(l.total), l.mlm);
}


