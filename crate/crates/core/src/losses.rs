//! Training objectives: the noise-prediction term and the kinematic suite
//! (bone-length consistency, left/right symmetry, clean-motion
//! reconstruction), weighted by the signal level of the sampled step.

use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::motion::{bone_lengths_raw, Skeleton};
use crate::tape::{Tape, Var};
use crate::tensor::Mat;

/// Kinematic term weights and switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_a: f64,
    pub lambda_m: f64,
    pub skeleton: bool,
    pub symmetry: bool,
    pub motion: bool,
}

impl Default for LossWeights {
    /// Every term on, `lambda_a = lambda_m = 1`.
    fn default() -> Self {
        LossWeights {
            lambda_a: 1.0,
            lambda_m: 1.0,
            skeleton: true,
            symmetry: true,
            motion: true,
        }
    }
}

impl LossWeights {
    /// Only the noise-prediction term.
    pub fn data_only() -> Self {
        LossWeights {
            skeleton: false,
            symmetry: false,
            motion: false,
            ..Self::default()
        }
    }

    pub fn any_kinematic(&self) -> bool {
        self.skeleton || self.symmetry || self.motion
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_a", self.lambda_a), ("lambda_m", self.lambda_m)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-term values of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub data: f64,
    pub skeleton: f64,
    pub symmetry: f64,
    pub motion: f64,
    /// Weight applied to the kinematic sum (`alpha_bar_t`).
    pub kinematic_weight: f64,
    pub lambda_a: f64,
    pub lambda_m: f64,
}

impl LossBreakdown {
    /// Element-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut acc = LossBreakdown::default();
        for b in items {
            acc.total += b.total / n;
            acc.data += b.data / n;
            acc.skeleton += b.skeleton / n;
            acc.symmetry += b.symmetry / n;
            acc.motion += b.motion / n;
            acc.kinematic_weight += b.kinematic_weight / n;
        }
        if let Some(first) = items.first() {
            acc.lambda_a = first.lambda_a;
            acc.lambda_m = first.lambda_m;
        }
        acc
    }
}

/// Result of [`loss_symmetry`]; `no_pairs` flags a skeleton without
/// mirrored bones, in which case `value` is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetryLoss {
    pub value: f64,
    pub no_pairs: bool,
}

fn mse(a: &Mat, b: &Mat, what: &str) -> Result<f64> {
    a.ensure_shape(b, what)?;
    let ss: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum();
    Ok(ss / a.len().max(1) as f64)
}

/// Mean squared error between true and predicted noise.
pub fn loss_data(eps: &Mat, eps_hat: &Mat) -> Result<f64> {
    mse(eps, eps_hat, "loss_data")
}

/// Mean squared error between estimated and true clean motion.
pub fn loss_motion(m0_hat: &Mat, m0: &Mat) -> Result<f64> {
    mse(m0_hat, m0, "loss_motion")
}

/// Mean over bones of the unbiased temporal variance of each bone length.
pub fn loss_skeleton(motion: &Mat, skel: &Skeleton) -> Result<f64> {
    if motion.rows() < 2 {
        return Err(Error::InsufficientFrames {
            needed: 2,
            got: motion.rows(),
        });
    }
    let bl = bone_lengths_raw(motion, skel)?;
    if bl.cols() == 0 {
        return Ok(0.0);
    }
    let n = bl.rows() as f64;
    let mut total = 0.0;
    for b in 0..bl.cols() {
        let mean = (0..bl.rows()).map(|i| bl.get(i, b)).sum::<f64>() / n;
        let ss: f64 = (0..bl.rows()).map(|i| (bl.get(i, b) - mean).powi(2)).sum();
        total += ss / (n - 1.0);
    }
    Ok(total / bl.cols() as f64)
}

/// RMS over frames and mirrored bone pairs of the length difference.
pub fn loss_symmetry(motion: &Mat, skel: &Skeleton) -> Result<SymmetryLoss> {
    let bl = bone_lengths_raw(motion, skel)?;
    let pairs = skel.symmetric_bone_pairs();
    if pairs.is_empty() {
        log::warn!("skeleton has no mirrored bone pairs; symmetry loss is 0");
        return Ok(SymmetryLoss {
            value: 0.0,
            no_pairs: true,
        });
    }
    let mut ss = 0.0;
    for i in 0..bl.rows() {
        for &(a, b) in &pairs {
            ss += (bl.get(i, a) - bl.get(i, b)).powi(2);
        }
    }
    Ok(SymmetryLoss {
        value: (ss / (bl.rows() * pairs.len()) as f64).sqrt(),
        no_pairs: false,
    })
}

/// `L_da + alpha_bar_t (L_s + lambda_a L_a + lambda_m L_m)` with the
/// kinematic terms evaluated on `m0_hat`.
pub fn total_loss(
    eps: &Mat,
    eps_hat: &Mat,
    m0: &Mat,
    m0_hat: &Mat,
    skel: &Skeleton,
    t: usize,
    sched: &NoiseSchedule,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    weights.validate()?;
    sched.check_step(t)?;
    let w = sched.alpha_bar()[t];
    let data = loss_data(eps, eps_hat)?;
    let skeleton = if weights.skeleton {
        loss_skeleton(m0_hat, skel)?
    } else {
        0.0
    };
    let symmetry = if weights.symmetry {
        loss_symmetry(m0_hat, skel)?.value
    } else {
        0.0
    };
    let motion = if weights.motion {
        loss_motion(m0_hat, m0)?
    } else {
        0.0
    };
    let total = if weights.any_kinematic() {
        data + w * (skeleton + weights.lambda_a * symmetry + weights.lambda_m * motion)
    } else {
        data
    };
    Ok(LossBreakdown {
        total,
        data,
        skeleton,
        symmetry,
        motion,
        kinematic_weight: w,
        lambda_a: weights.lambda_a,
        lambda_m: weights.lambda_m,
    })
}

/// Tape handles of a recorded [`total_loss`].
#[derive(Debug, Clone, Copy)]
pub struct TapeLoss {
    pub total: Var,
    pub data: Var,
    pub skeleton: Option<Var>,
    pub symmetry: Option<Var>,
    pub motion: Option<Var>,
    pub kinematic_weight: f64,
}

impl TapeLoss {
    pub fn breakdown(&self, tape: &Tape, weights: &LossWeights) -> LossBreakdown {
        let get = |v: Option<Var>| v.map_or(0.0, |v| tape.scalar(v));
        LossBreakdown {
            total: tape.scalar(self.total),
            data: tape.scalar(self.data),
            skeleton: get(self.skeleton),
            symmetry: get(self.symmetry),
            motion: get(self.motion),
            kinematic_weight: self.kinematic_weight,
            lambda_a: weights.lambda_a,
            lambda_m: weights.lambda_m,
        }
    }
}

fn tape_mse(tape: &mut Tape, a: Var, b: Var) -> Var {
    let d = tape.sub(a, b);
    tape.mean_square(d)
}

/// Records [`total_loss`] on a tape. Every operand is a tape value so the
/// kinematic terms differentiate through `m0_hat`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss_tape(
    tape: &mut Tape,
    eps: Var,
    eps_hat: Var,
    m0: Var,
    m0_hat: Var,
    skel: &Skeleton,
    alpha_bar: f64,
    weights: &LossWeights,
) -> Result<TapeLoss> {
    weights.validate()?;
    tape.value(eps).ensure_shape(tape.value(eps_hat), "loss_data")?;
    tape.value(m0).ensure_shape(tape.value(m0_hat), "loss_motion")?;
    crate::motion::check_skeleton(tape.value(m0_hat), skel)?;
    let data = tape_mse(tape, eps, eps_hat);
    let mut kin: Option<Var> = None;
    let mut accumulate = |tape: &mut Tape, term: Var, scale: f64| {
        let term = if scale == 1.0 { term } else { tape.scale(term, scale) };
        kin = Some(match kin {
            Some(k) => tape.add(k, term),
            None => term,
        });
    };

    let mut skeleton = None;
    let mut symmetry = None;
    let needs_lengths = weights.skeleton || weights.symmetry;
    let lengths = needs_lengths.then(|| tape.bone_lengths(m0_hat, skel.bones()));
    if weights.skeleton {
        let n = tape.value(m0_hat).rows();
        if n < 2 {
            return Err(Error::InsufficientFrames { needed: 2, got: n });
        }
        let bl = lengths.expect("lengths recorded");
        let v = if skel.bones().is_empty() {
            tape.constant(Mat::zeros(1, 1))
        } else {
            let var = tape.col_variance(bl);
            tape.mean_all(var)
        };
        skeleton = Some(v);
        accumulate(tape, v, 1.0);
    }
    if weights.symmetry {
        let pairs = skel.symmetric_bone_pairs();
        let v = if pairs.is_empty() {
            log::warn!("skeleton has no mirrored bone pairs; symmetry loss is 0");
            tape.constant(Mat::zeros(1, 1))
        } else {
            let bl = lengths.expect("lengths recorded");
            let left: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let right: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let l = tape.select_cols(bl, &left);
            let r = tape.select_cols(bl, &right);
            let ms = tape_mse(tape, l, r);
            tape.sqrt(ms)
        };
        symmetry = Some(v);
        accumulate(tape, v, weights.lambda_a);
    }
    let mut motion = None;
    if weights.motion {
        let v = tape_mse(tape, m0_hat, m0);
        motion = Some(v);
        accumulate(tape, v, weights.lambda_m);
    }
    let total = match kin {
        Some(k) => {
            let k = tape.scale(k, alpha_bar);
            tape.add(data, k)
        }
        None => data,
    };
    Ok(TapeLoss {
        total,
        data,
        skeleton,
        symmetry,
        motion,
        kinematic_weight: alpha_bar,
    })
}
