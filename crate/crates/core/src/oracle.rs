//! Random small instances and the branch-and-bound versus exhaustive
//! agreement check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::{AccumulatorSet, Hypothesis, RayGrid};
use crate::field_model::FieldModel;
use crate::geometry::{Point2, VanishingPoint};
use crate::inference::{infer, infer_exhaustive};
use crate::potentials::{Scene, Tying, WeightVector, NUM_FEATURES};

/// Random per-cell counts (0..9 per class) on an `n × n` grid with two
/// finite vanishing points outside a 100×80 image.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize) -> Result<(AccumulatorSet, RayGrid)> {
    let counts: Vec<Vec<u64>> = (0..5)
        .map(|_| (0..n * n).map(|_| rng.random_range(0..9)).collect())
        .collect();
    let acc = AccumulatorSet::from_cell_counts(
        n,
        n,
        [&counts[0], &counts[1], &counts[2], &counts[3], &counts[4]],
    );
    let grid = RayGrid::new(
        VanishingPoint::finite(Point2::new(rng.random_range(600.0..3000.0), 30.0)),
        VanishingPoint::finite(Point2::new(50.0, -rng.random_range(500.0..3000.0))),
        (100, 80),
        n,
        n,
        0.1,
    )?;
    Ok((acc, grid))
}

/// Untied weights uniform in `[-1, 1)`.
pub fn random_weights<R: Rng>(rng: &mut R) -> WeightVector {
    let full: [f64; NUM_FEATURES] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    WeightVector::from_full(Tying::Untied, &full).expect("finite weights")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub trial: usize,
    pub bbound: (Hypothesis, f64),
    pub exhaustive: (Hypothesis, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub trials: usize,
    pub grid: usize,
    pub matched: usize,
    pub mean_iterations: f64,
    pub mismatches: Vec<Mismatch>,
}

/// Run `trials` random instances through both searches; a match needs the
/// same hypothesis and a bit-equal score.
pub fn oracle_check(
    trials: usize,
    n: usize,
    seed: u64,
    model: &FieldModel,
) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = Vec::new();
    let mut iterations = 0u64;
    for trial in 0..trials {
        let (acc, grid) = random_instance(&mut rng, n)?;
        let w = random_weights(&mut rng);
        let scene = Scene::new(&acc, &grid, model)?;
        let a = infer(&w, &scene)?;
        let b = infer_exhaustive(&w, &scene)?;
        iterations += a.iterations;
        if a.y != b.y || a.score.to_bits() != b.score.to_bits() {
            mismatches.push(Mismatch {
                trial,
                bbound: (a.y, a.score),
                exhaustive: (b.y, b.score),
            });
        }
    }
    Ok(OracleReport {
        trials,
        grid: n,
        matched: trials - mismatches.len(),
        mean_iterations: if trials == 0 {
            0.0
        } else {
            iterations as f64 / trials as f64
        },
        mismatches,
    })
}
