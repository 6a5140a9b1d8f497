#![allow(dead_code)]

use modiff::conditioning::Conditioning;
use modiff::data::{synth_sequence, SyntheticSpec};
use modiff::diffusion::NoiseSchedule;
use modiff::losses::LossWeights;
use modiff::motion::Skeleton;
use modiff::nn::{ConditioningConfig, DenoiserModel, ModelConfig};
use modiff::trainer::{sample_gradients, ModelHyper, TrainSample};
use modiff::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Smallest network that still has every block type.
pub fn micro_config(in_channels: usize, conditioning: ConditioningConfig) -> ModelConfig {
    ModelConfig {
        in_channels,
        base_channels: 4,
        channel_mults: vec![1],
        heads: 1,
        attn_dim: 4,
        context_dim: 4,
        time_dim: 4,
        groups: 2,
        ff_mult: 1,
        conditioning,
    }
}

/// Network used by the training-based acceptance checks. The top level
/// keeps at least as many channels as the toy skeleton has (24) so noise
/// can pass through unattenuated.
pub fn small_hyper() -> ModelHyper {
    ModelHyper {
        base_channels: 32,
        channel_mults: vec![1, 2],
        heads: 2,
        attn_dim: 32,
        context_dim: 32,
        time_dim: 32,
        groups: 8,
        ff_mult: 2,
        text_layers: 1,
        text_heads: 2,
    }
}

pub fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(&mut *rng);
        scale * z
    })
}

pub struct GradCheck {
    pub params: usize,
    pub checked: usize,
    pub passed: usize,
    pub worst: f64,
}

/// Relative error below this absolute gradient scale is measured against
/// the floor instead, since both estimates are then dominated by rounding.
pub const GRAD_FLOOR: f64 = 1e-8;
pub const FD_STEP: f64 = 1e-5;

/// Central differences against the analytic gradient of the full training
/// loss (every kinematic term on) for every scalar parameter of a
/// randomly perturbed micro model on an 8-frame toy motion.
pub fn gradient_check(seed: u64, tolerance: f64) -> GradCheck {
    let skel = Skeleton::toy8();
    let spec = SyntheticSpec::default();
    let motion = synth_sequence(&spec, seed, 0).unwrap().motion.slice(3, 8).unwrap();
    let sample = TrainSample {
        motion: motion.frames().clone(),
        condition: Conditioning::None,
    };
    let mut model = DenoiserModel::new(micro_config(skel.channels(), ConditioningConfig::None), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, p) in model.params_mut().iter_mut() {
        let noise = normal(&mut rng, p.rows(), p.cols(), 0.3);
        p.add_assign(&noise);
    }
    let eps = normal(&mut rng, 8, skel.channels(), 1.0);
    let sched = NoiseSchedule::standard();
    let weights = LossWeights::default();
    let t = 40;
    let (_, grads) = sample_gradients(&model, &sample, t, &eps, &skel, &sched, &weights).unwrap();
    let loss = |m: &DenoiserModel| {
        sample_gradients(m, &sample, t, &eps, &skel, &sched, &weights).unwrap().0.total
    };
    let mut out = GradCheck {
        params: model.params().scalar_count(),
        checked: 0,
        passed: 0,
        worst: 0.0,
    };
    let names: Vec<String> = grads.names().cloned().collect();
    for name in names {
        let g = grads.get(&name).unwrap().clone();
        for k in 0..g.len() {
            let orig = model.params().get(&name).unwrap().data()[k];
            model.params_mut().get_mut(&name).unwrap().data_mut()[k] = orig + FD_STEP;
            let up = loss(&model);
            model.params_mut().get_mut(&name).unwrap().data_mut()[k] = orig - FD_STEP;
            let down = loss(&model);
            model.params_mut().get_mut(&name).unwrap().data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * FD_STEP);
            let a = g.data()[k];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(GRAD_FLOOR);
            out.checked += 1;
            if rel < tolerance {
                out.passed += 1;
            }
            out.worst = out.worst.max(rel);
        }
    }
    out
}
