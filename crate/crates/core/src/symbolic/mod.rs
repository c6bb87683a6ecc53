//! Itinerary machinery: the partition P and its merge rule, bound periods,
//! the two interval processes, the refinement tree Q, and the distortion,
//! density and coherence verifiers built on them.
//!
//! All intervals live in the lift. Circle reduction happens only when a
//! region label is needed.

mod coherence;
mod density;
mod itinerary;
mod partition;
mod process;

use serde::{Deserialize, Serialize};

pub use coherence::{
    bound_period_coherence_check, reexpansion_check, shadowing_distances, CoherenceReport, ReexpansionReport,
};
pub use density::{density_profile, DensityProfile};
pub use itinerary::{
    derivative_growth_check, distortion_bound, distortion_check, distortion_survey, follow_leaf, itinerary_refinement, pullback,
    DistortionReport, DistortionSurvey, FollowedLeaf, GrowthReport, ItineraryAtom, ItineraryTree, LeafSelector, DEFAULT_K2,
    DEFAULT_LEAF_CAP,
};
pub use partition::{bound_period, build_p, refine_on_interval, BasePartitionP};
pub(crate) use process::run_unchecked;
pub use process::{
    run_interval_process, IntervalProcessState, ProcessMargins, ProcessMode, ProcessViolations, StepRecord, StopReason, Variant,
};

/// Closed interval `[lo, hi]` in the lift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    #[inline]
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    /// `c + [−r, r]`.
    #[inline]
    pub fn around(c: f64, r: f64) -> Self {
        Interval { lo: c - r, hi: c + r }
    }

    #[inline]
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }

    #[inline]
    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// Whether `other` lies in `self` up to an absolute slack.
    #[inline]
    pub fn covers(&self, other: &Interval, slack: f64) -> bool {
        other.lo >= self.lo - slack && other.hi <= self.hi + slack
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SymbolicError {
    #[error("B{level} component of length {length:e} cannot be split into atoms of length in [{unit:e}, 2·{unit:e}]")]
    BracketViolation { level: u32, length: f64, unit: f64 },
    #[error("refinement would produce {atoms} atoms, cap is {cap}")]
    TooManyAtoms { atoms: u64, cap: u64 },
    #[error("itinerary tree exceeds the leaf cap of {cap}")]
    LeafCapExceeded { cap: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
}
