//! Training objective: epoch labels broadcast to averaging windows and the
//! cross-entropy between window-averaged probabilities and those labels.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::stage::EPOCH_SECONDS;
use crate::tensor::Tensor;

/// Window lengths (seconds) that tile a 30-s epoch.
pub const WINDOW_GRID: [usize; 6] = [1, 3, 5, 10, 15, 30];

/// Epoch targets repeated once per averaging window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BroadcastLabels {
    pub targets: Vec<Option<usize>>,
    pub windows_per_epoch: usize,
}

impl BroadcastLabels {
    /// `tau` seconds per window; must divide the epoch length.
    pub fn new(epochs: &[Option<usize>], tau: usize) -> Result<Self> {
        if tau == 0 || EPOCH_SECONDS % tau != 0 {
            return Err(Error::InvalidArgument(format!("τ = {tau} s does not divide {EPOCH_SECONDS} s")));
        }
        let per = EPOCH_SECONDS / tau;
        let targets = epochs.iter().flat_map(|t| std::iter::repeat(*t).take(per)).collect();
        Ok(Self { targets, windows_per_epoch: per })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn scored(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }

    /// `[K, windows]` one-hot matrix; masked columns are all zero.
    pub fn one_hot<T: Real>(&self, classes: usize) -> Tensor<T> {
        let n = self.targets.len();
        let mut t = Tensor::zeros([classes, n]);
        for (j, c) in self.targets.iter().enumerate() {
            if let Some(c) = *c {
                t.data_mut()[c * n + j] = T::one();
            }
        }
        t
    }
}

/// Mean of consecutive `window`-column blocks of a `[K, N]` probability
/// matrix.
pub fn time_average_predictions<T: Real>(y: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    if y.ndim() != 2 {
        return Err(Error::InvalidArgument(format!("need [K, N], got {:?}", y.shape())));
    }
    let (k, n) = (y.shape()[0], y.shape()[1]);
    if window == 0 || n % window != 0 {
        return Err(Error::InvalidArgument(format!("window {window} does not divide {n} columns")));
    }
    let m = n / window;
    let inv = T::one() / T::from_usize_lossy(window);
    let d = y.data();
    Tensor::new(
        [k, m],
        (0..k * m)
            .map(|idx| {
                let (c, w) = (idx / m, idx % m);
                d[c * n + w * window..c * n + (w + 1) * window].iter().copied().sum::<T>() * inv
            })
            .collect(),
    )
}

/// Cross-entropy of a batch `y: [B, K, N]` of per-column probabilities,
/// averaged over `window` columns, against per-sequence labels. The sum is
/// scaled by `1 / scored windows`.
pub fn sequence_loss<T: Real>(tape: &mut Tape<T>, y: Var, labels: &[BroadcastLabels], window: usize) -> Result<Var> {
    let avg = tape.time_average(y, window)?;
    let targets: Vec<Option<usize>> = labels.iter().flat_map(|l| l.targets.iter().copied()).collect();
    let scored = targets.iter().filter(|t| t.is_some()).count();
    if scored == 0 {
        return Err(Error::InvalidArgument("every window is masked".into()));
    }
    tape.cross_entropy(avg, &targets, 1.0 / scored as f64)
}
