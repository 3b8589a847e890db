//! Best-first branch and bound over hypothesis boxes, the exhaustive scan
//! it is checked against, and the homography of a hypothesis.
//!
//! Queue order is (bound desc, lexicographically smallest hypothesis in the
//! box asc, insertion order asc). With exact admissible bounds the first
//! singleton popped is the lexicographically smallest maximizer, which is
//! also what the exhaustive scan returns.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Hypothesis, RayGrid};
use crate::field_model::FieldModel;
use crate::geometry::{dlt_homography, Homography};
use crate::potentials::{HypothesisBox, Scene, WeightVector, NUM_FEATURES};

pub const DEFAULT_MAX_ITERATIONS: u64 = 10_000_000;
pub const EXHAUSTIVE_LIMIT: u128 = 100_000_000;

/// A function over hypotheses with an admissible box bound.
pub trait BoxObjective {
    fn score(&self, y: &Hypothesis) -> f64;
    /// Must satisfy `bound(b) >= score(y)` for every valid `y` in `b`, and
    /// `bound({y}) == score(y)`.
    fn bound(&self, b: &HypothesisBox) -> f64;
}

/// `w·φ(x, y)`.
pub struct LinearObjective<'a> {
    pub scene: Scene<'a>,
    pub w: &'a WeightVector,
    signs: [i8; NUM_FEATURES],
}

impl<'a> LinearObjective<'a> {
    pub fn new(scene: Scene<'a>, w: &'a WeightVector) -> Self {
        Self {
            scene,
            w,
            signs: w.feature_signs(),
        }
    }
}

impl BoxObjective for LinearObjective<'_> {
    fn score(&self, y: &Hypothesis) -> f64 {
        self.bound(&HypothesisBox::singleton(y))
    }

    fn bound(&self, b: &HypothesisBox) -> f64 {
        self.scene.bound_with_signs(self.w, &self.signs, b)
    }
}

/// Split the widest interval at its midpoint; the lower half keeps the
/// middle element and width ties go to the lowest dimension.
pub fn branch(b: &HypothesisBox) -> Result<(HypothesisBox, HypothesisBox)> {
    if b.is_singleton() {
        return Err(Error::CannotBranch);
    }
    let d = (0..4)
        .max_by(|&i, &j| {
            (b.hi[i] - b.lo[i])
                .cmp(&(b.hi[j] - b.lo[j]))
                .then(j.cmp(&i))
        })
        .expect("four dimensions");
    let mid = b.lo[d] + (b.hi[d] - b.lo[d]) / 2;
    let (mut a, mut c) = (*b, *b);
    a.hi[d] = mid;
    c.lo[d] = mid + 1;
    Ok((a, c))
}

/// Drop interval ends that no valid hypothesis uses. `None` if the box
/// holds no valid hypothesis.
fn tighten(mut b: HypothesisBox) -> Option<HypothesisBox> {
    for d in [0, 2] {
        if b.hi[d + 1] == 0 {
            return None;
        }
        b.hi[d] = b.hi[d].min(b.hi[d + 1] - 1);
        b.lo[d + 1] = b.lo[d + 1].max(b.lo[d] + 1);
        if b.lo[d] > b.hi[d] || b.lo[d + 1] > b.hi[d + 1] {
            return None;
        }
    }
    Some(b)
}

struct Node {
    bound: f64,
    first: Hypothesis,
    seq: u64,
    b: HypothesisBox,
}

impl PartialEq for Node {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Node {
    fn cmp(&self, o: &Self) -> Ordering {
        self.bound
            .total_cmp(&o.bound)
            .then_with(|| o.first.cmp(&self.first))
            .then_with(|| o.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SearchOptions {
    pub max_iterations: u64,
    /// Record the bound of every popped node.
    pub trace: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub y: Hypothesis,
    pub score: f64,
    /// Nodes popped from the queue.
    pub iterations: u64,
    /// `false` when the iteration cap stopped the search.
    pub certified: bool,
    pub popped_bounds: Vec<f64>,
}

/// Maximize `obj` over the valid hypotheses of `root`.
pub fn branch_and_bound<O: BoxObjective + ?Sized>(
    obj: &O,
    root: &HypothesisBox,
    opts: &SearchOptions,
) -> Result<SearchOutcome> {
    let root = tighten(*root).ok_or(Error::EmptyBox)?;
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |heap: &mut BinaryHeap<Node>, b: HypothesisBox| {
        let first = b.first_valid().expect("tightened boxes are nonempty");
        heap.push(Node {
            bound: obj.bound(&b),
            first,
            seq,
            b,
        });
        seq += 1;
    };
    push(&mut heap, root);
    let mut iterations = 0u64;
    let mut popped_bounds = Vec::new();
    while let Some(node) = heap.pop() {
        iterations += 1;
        if opts.trace {
            popped_bounds.push(node.bound);
        }
        if node.b.is_singleton() {
            return Ok(SearchOutcome {
                y: node.first,
                score: node.bound,
                iterations,
                certified: true,
                popped_bounds,
            });
        }
        if iterations >= opts.max_iterations {
            // Greedy descent to a singleton for a usable answer.
            let mut b = node.b;
            while !b.is_singleton() {
                let (l, r) = branch(&b)?;
                b = match (tighten(l), tighten(r)) {
                    (Some(l), Some(r)) => {
                        if obj.bound(&r) > obj.bound(&l) {
                            r
                        } else {
                            l
                        }
                    }
                    (Some(l), None) => l,
                    (None, Some(r)) => r,
                    (None, None) => return Err(Error::EmptyBox),
                };
            }
            let y = b.first_valid().ok_or(Error::EmptyBox)?;
            return Ok(SearchOutcome {
                y,
                score: obj.score(&y),
                iterations,
                certified: false,
                popped_bounds,
            });
        }
        let (l, r) = branch(&node.b)?;
        for child in [l, r].into_iter().filter_map(tighten) {
            push(&mut heap, child);
        }
    }
    Err(Error::EmptyBox)
}

/// Lexicographic scan keeping the first maximizer.
pub fn exhaustive<O: BoxObjective + ?Sized>(
    obj: &O,
    root: &HypothesisBox,
) -> Result<SearchOutcome> {
    let n = root.count_valid();
    if n == 0 {
        return Err(Error::EmptyBox);
    }
    if n > EXHAUSTIVE_LIMIT {
        return Err(Error::TooLarge(n));
    }
    let mut best: Option<(Hypothesis, f64)> = None;
    for y in root.hypotheses() {
        let s = obj.score(&y);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((y, s));
        }
    }
    let (y, score) = best.ok_or(Error::EmptyBox)?;
    Ok(SearchOutcome {
        y,
        score,
        iterations: n as u64,
        certified: true,
        popped_bounds: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub y: Hypothesis,
    pub score: f64,
    pub iterations: u64,
    /// Image to model.
    pub homography: Homography,
    pub certified: bool,
}

/// Image-to-model homography of a hypothesis: its four ray intersections
/// map to the model corners.
pub fn homography_from_hypothesis(
    y: &Hypothesis,
    grid: &RayGrid,
    model: &FieldModel,
) -> Result<Homography> {
    let img = grid.corners(y).map_err(|_| Error::DegenerateDlt)?;
    let mdl = model.corners();
    let pairs: Vec<_> = img.into_iter().zip(mdl).collect();
    dlt_homography(&pairs)
}

fn finish(scene: &Scene, out: SearchOutcome) -> Result<InferenceResult> {
    let homography = homography_from_hypothesis(&out.y, scene.grid, scene.model)?;
    let r = InferenceResult {
        y: out.y,
        score: out.score,
        iterations: out.iterations,
        homography,
        certified: out.certified,
    };
    if r.certified {
        Ok(r)
    } else {
        Err(Error::BudgetExceeded(Box::new(r)))
    }
}

/// Exact argmax of `w·φ(x, y)` over all valid hypotheses.
pub fn infer(w: &WeightVector, scene: &Scene) -> Result<InferenceResult> {
    infer_with(w, scene, &SearchOptions::default())
}

pub fn infer_with(
    w: &WeightVector,
    scene: &Scene,
    opts: &SearchOptions,
) -> Result<InferenceResult> {
    let root = HypothesisBox::root(scene.n_h(), scene.n_v())?;
    let obj = LinearObjective::new(*scene, w);
    finish(scene, branch_and_bound(&obj, &root, opts)?)
}

pub fn infer_exhaustive(w: &WeightVector, scene: &Scene) -> Result<InferenceResult> {
    let root = HypothesisBox::root(scene.n_h(), scene.n_v())?;
    let obj = LinearObjective::new(*scene, w);
    finish(scene, exhaustive(&obj, &root)?)
}
