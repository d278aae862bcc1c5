//! End-to-end runs through the public API: train backbones, merge, evaluate,
//! and persist, each compared with a result derived by hand.

use bonesoup::harness::{fronts_csv, generate_grid, parse_fronts, run_sweep, ExperimentConfig};
use bonesoup::rewards::{Curvature, SoftmaxPolicy};
use bonesoup::{
    build_circulant, merge, train_backbones, ParamVector, QuadraticReward, TrainerConfig, World,
};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// With one curvature shared by every reward and no regularizer, the maximizer
// of Σ wᵢ rᵢ is Σ wᵢ θᵢ / Σ wᵢ. Backbones are then affine in their column, so
// the merge for μ lands exactly on Σ μⱼ θⱼ.
#[test]
fn shared_curvature_merge_hits_the_weighted_peak() {
    let k = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.2, 0.0, 0.2, 1.5]);
    let peaks = [[1.0, -2.0, 0.5], [-3.0, 0.0, 2.0], [0.0, 4.0, -1.0]];
    let rewards = peaks
        .iter()
        .map(|p| {
            QuadraticReward::new(
                0.0,
                ParamVector::new(p.to_vec()).unwrap(),
                Curvature::Full(k.clone()),
            )
            .unwrap()
        })
        .collect();
    let world = World::quadratic(rewards, ParamVector::zeros(3)).unwrap();
    let config = TrainerConfig {
        eta: 0.0,
        ..TrainerConfig::default()
    };
    let set = train_backbones(&build_circulant(3, 0.7).unwrap(), &world, &config).unwrap();
    for mu in generate_grid(3, 0.1).unwrap() {
        let got = merge(&set, &mu).unwrap();
        let m = mu.as_slice();
        for (d, x) in got.as_slice().iter().enumerate() {
            let want: f64 = (0..3).map(|j| m[j] * peaks[j][d]).sum();
            assert!((x - want).abs() < 1e-10, "{m:?}");
        }
    }
}

fn gibbs(reference: &[f64], rewards: &[f64], eta: f64) -> Vec<f64> {
    let z: Vec<f64> = reference
        .iter()
        .zip(rewards)
        .map(|(l, r)| l + r / eta)
        .collect();
    let top = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - top).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

// Optimal logits are log ρ + μᵀR/η up to a per-context shift, linear in μ, so
// merged Bone backbones reproduce the Gibbs policy of every preference.
#[test]
fn bandit_merge_reproduces_gibbs_policy() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let world = World::random_bandit(&mut rng, 2, 2, 4).unwrap();
    let World::Bandit(b) = &world else {
        unreachable!()
    };
    let eta = 0.2;
    let config = TrainerConfig {
        eta,
        learning_rate: 50.0,
        ..TrainerConfig::default()
    };
    let set = train_backbones(&build_circulant(2, 0.65).unwrap(), &world, &config).unwrap();
    for mu in generate_grid(2, 0.1).unwrap() {
        let merged = merge(&set, &mu).unwrap();
        let policy = SoftmaxPolicy::new(2, 4, merged).unwrap();
        let m = mu.as_slice();
        for s in 0..2 {
            let table: Vec<f64> = (0..4)
                .map(|a| m[0] * b.env.reward(0, s, a) + m[1] * b.env.reward(1, s, a))
                .collect();
            let want = gibbs(
                &b.reference.logits().as_slice()[s * 4..(s + 1) * 4],
                &table,
                eta,
            );
            for (x, y) in policy.context_probs(s).iter().zip(&want) {
                assert!((x - y).abs() < 1e-7, "mu {m:?} s {s}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn sweep_fronts_survive_a_csv_round_trip() {
    let config = ExperimentConfig::from_json(
        r#"{
            "world": {"kind": "random_quadratic", "dim": 3, "k_range": [0.5, 2.0], "theta_bound": 3.0},
            "objectives": 3,
            "methods": ["bone_soup(0.7)", "rewarded_soup", "aba(0.7)", "random_matrix(2)"],
            "grid": {"three_obj_step": 0.1},
            "trainer": {"eta": 0.1},
            "seed": 5
        }"#,
    )
    .unwrap();
    let result = run_sweep(&config).unwrap();
    let text = String::from_utf8(fronts_csv(&result).unwrap()).unwrap();
    let fronts = parse_fronts(&text).unwrap();
    assert_eq!(fronts.len(), 4);
    for (method, front) in fronts {
        let original = result.front(&method);
        assert_eq!(front.len(), 66);
        assert_eq!(front, original, "{method}");
    }
}
