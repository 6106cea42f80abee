use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::captioner::{CaptionModel, Mode, ModelConfig, TrainingExample, Variant, VideoInput};
use crate::error::Result;
use crate::lang::{TokenSequence, BOS, EOS};
use crate::params::Parameters;
use crate::proposals::ProposalFeatureSet;
use crate::semantics::SemanticSubset;
use crate::tensor::{finite_diff_grad, relative_error};

pub const FD_STEP: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-4;

/// Tiny 64-bit model and a random example whose target unrolls `steps`
/// predictions.
pub fn tiny_problem(
    variant: Variant,
    seed: u64,
    steps: usize,
) -> Result<(CaptionModel<f64>, TrainingExample<f64>)> {
    let vocab = 7;
    let mut cfg = ModelConfig::new(variant, 4);
    cfg.hidden = 3;
    cfg.embedding = 3;
    cfg.attention = 3;
    cfg.init_range = 0.5;
    cfg.seed = seed;
    if variant.uses_semantic() {
        cfg = cfg.with_semantic(
            SemanticSubset {
                svo: true,
                cls: true,
                det: false,
            },
            3,
        );
    }
    let model = CaptionModel::build(&cfg, vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000));
    let rows: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let features = ProposalFeatureSet::from_valid_rows(&rows, 4, 4, vec![0, 1, 2])?;
    let semantic = variant
        .uses_semantic()
        .then(|| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect());
    let mut ids = vec![BOS];
    ids.extend((0..steps.saturating_sub(1)).map(|_| rng.random_range(3..vocab)));
    ids.push(EOS);
    Ok((
        model,
        TrainingExample {
            video_id: format!("check{seed}"),
            input: VideoInput { features, semantic },
            target: TokenSequence(ids),
        },
    ))
}

/// Largest relative error between the analytic gradient and central finite
/// differences, with dropout active under a fixed mask.
pub fn max_relative_error(
    model: &CaptionModel<f64>,
    example: &TrainingExample<f64>,
) -> Result<f64> {
    let mode = Mode::Train { seed: 5 };
    let (_, grads) = model.loss_and_grad(example, mode)?;
    let analytic = grads.flatten();
    let mut probe = model.clone();
    let numeric = finite_diff_grad(
        |x: &[f64]| {
            probe.assign(x);
            probe
                .forward_sentence(&example.input, &example.target, mode)
                .map(|f| f.loss)
                .unwrap_or(f64::NAN)
        },
        &model.flatten(),
        FD_STEP,
    )?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n, REL_FLOOR))
        .fold(0.0, f64::max))
}
