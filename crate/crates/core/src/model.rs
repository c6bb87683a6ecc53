//! A fully constructed system: parameters, ψ, derived constants, region
//! partition and itinerary partition, built once and shared read-only.

use serde::Serialize;

use crate::phase_space::{
    build_partition, compute_derived_constants, CircleMap, DerivedConstants, PhaseError, PhasePartition, PsiSpec,
    SystemParams,
};
use crate::symbolic::{build_p, BasePartitionP, Interval, SymbolicError};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
}

#[derive(Clone, Debug, Serialize)]
pub struct Model {
    pub params: SystemParams,
    pub psi: PsiSpec,
    pub constants: DerivedConstants,
    pub partition: PhasePartition,
    pub fine: BasePartitionP,
    #[serde(skip)]
    pub map: CircleMap,
}

impl Model {
    pub fn new(params: SystemParams, psi: PsiSpec, grid_size: usize) -> Result<Model, ModelError> {
        let constants = compute_derived_constants(&psi, grid_size)?;
        Self::with_constants(params, psi, constants)
    }

    pub fn with_constants(params: SystemParams, psi: PsiSpec, constants: DerivedConstants) -> Result<Model, ModelError> {
        let partition = build_partition(&params, &constants)?;
        let fine = build_p(&partition, &params)?;
        let map = CircleMap::new(&params, &psi);
        Ok(Model { params, psi, constants, partition, fine, map })
    }

    /// `f̃(y)` and `f̃'(y)`.
    #[inline]
    pub fn lift(&self, y: f64) -> (f64, f64) {
        self.map.lift(y)
    }

    /// `κ = min{1/5, K1⁻¹}`.
    pub fn kappa(&self) -> f64 {
        (0.2f64).min(1.0 / self.constants.k1)
    }

    /// Whether some lift of a critical point lies in `[lo, hi]`.
    pub fn contains_critical(&self, lo: f64, hi: f64) -> bool {
        self.constants.critical_set.iter().any(|&c| c + (lo - c).ceil() <= hi)
    }

    /// `f̃_s([lo, hi]) = f̃([lo + s, hi + s])`, including interior extrema.
    pub fn image(&self, iv: Interval, shift: f64) -> Interval {
        let (a, _) = self.lift(iv.lo + shift);
        let (b, _) = self.lift(iv.hi + shift);
        let (mut lo, mut hi) = if a <= b { (a, b) } else { (b, a) };
        for &c in &self.constants.critical_set {
            if c + (iv.lo + shift - c).ceil() <= iv.hi + shift {
                let (v, _) = self.lift(c);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        Interval { lo, hi }
    }
}
