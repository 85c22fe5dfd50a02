//! Evidence, subjective-logic belief masses and Dirichlet parameters.
//!
//! For evidence `e` over `K` classes, `alpha = e + 1`, `S = Σ alpha`,
//! `b_n = e_n / S`, `u = K / S` and the expected probability is `alpha / S`.
//! A [`Gpma`] re-reads the uncertainty mass `u` as mass committed to the set of
//! all classes, which is what the fusion rules operate on.

use crate::error::{Error, Result};
use crate::numeric::{argmax, Scalar};

/// Masses with magnitude under this are snapped to zero when validated.
pub const MASS_FLOOR: f64 = 1e-15;
/// Tolerance on the simplex constraint `Σ b + u = 1`.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Non-negative, finite per-class evidence for one voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> EvidenceVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidEvidence(format!(
                "need at least 2 classes, got {}",
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < T::zero())
        {
            return Err(Error::InvalidEvidence(format!(
                "evidence[{i}] = {v:?} is negative or non-finite"
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn num_classes(&self) -> usize {
        self.values.len()
    }

    /// Dirichlet strength `S = Σ (e_n + 1)`.
    pub fn strength(&self) -> T {
        self.values.iter().fold(T::zero(), |acc, &e| acc + e + T::one())
    }
}

/// Belief masses `b` and uncertainty `u` on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefAssignment<T> {
    belief: Vec<T>,
    uncertainty: T,
}

fn snap_mass<T: Scalar>(v: T, what: &str) -> Result<T> {
    if !v.is_finite() {
        return Err(Error::InvalidMass(format!("{what} is not finite")));
    }
    let floor = T::lit(MASS_FLOOR);
    if v.abs() < floor {
        Ok(T::zero())
    } else if v < T::zero() {
        Err(Error::InvalidMass(format!("{what} = {v:?} is negative")))
    } else {
        Ok(v)
    }
}

fn check_simplex<T: Scalar>(masses: &[T], rest: T, tol: f64) -> Result<()> {
    let total = masses.iter().fold(rest, |acc, &b| acc + b);
    if (total - T::one()).abs() > T::lit(tol) {
        return Err(Error::InvalidMass(format!("masses sum to {total:?}, not 1")));
    }
    Ok(())
}

impl<T: Scalar> BeliefAssignment<T> {
    /// Validating constructor. Tiny negative round-off (under 1e-15) is snapped
    /// to zero; anything else off the simplex is rejected.
    pub fn new(belief: Vec<T>, uncertainty: T) -> Result<Self> {
        if belief.len() < 2 {
            return Err(Error::InvalidMass("need at least 2 classes".into()));
        }
        let belief = belief
            .into_iter()
            .map(|b| snap_mass(b, "belief"))
            .collect::<Result<Vec<_>>>()?;
        let uncertainty = snap_mass(uncertainty, "uncertainty")?;
        check_simplex(&belief, uncertainty, SIMPLEX_TOL)?;
        Ok(Self { belief, uncertainty })
    }

    /// The vacuous assignment: no belief, full uncertainty.
    pub fn vacuous(num_classes: usize) -> Self {
        Self {
            belief: vec![T::zero(); num_classes],
            uncertainty: T::one(),
        }
    }

    pub fn belief(&self) -> &[T] {
        &self.belief
    }

    pub fn uncertainty(&self) -> T {
        self.uncertainty
    }

    pub fn num_classes(&self) -> usize {
        self.belief.len()
    }
}

/// Dirichlet concentration `alpha = e + 1` with strength `S = Σ alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams<T> {
    alpha: Vec<T>,
    strength: T,
}

impl<T: Scalar> DirichletParams<T> {
    pub fn new(alpha: Vec<T>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::InvalidEvidence("need at least 2 classes".into()));
        }
        if let Some(a) = alpha.iter().find(|a| !a.is_finite() || **a < T::one()) {
            return Err(Error::OutOfRange(format!(
                "Dirichlet concentration {a:?} must be finite and >= 1"
            )));
        }
        let strength = alpha.iter().copied().sum();
        Ok(Self { alpha, strength })
    }

    pub fn alpha(&self) -> &[T] {
        &self.alpha
    }

    pub fn strength(&self) -> T {
        self.strength
    }

    pub fn num_classes(&self) -> usize {
        self.alpha.len()
    }

    /// Expected class probabilities `alpha / S`.
    pub fn expected_probability(&self) -> Vec<T> {
        self.alpha.iter().map(|&a| a / self.strength).collect()
    }
}

/// Generalized probability mass assignment: one mass per singleton class plus
/// one mass on the set of all classes, whose cardinality is `set_cardinality`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gpma<T> {
    singletons: Vec<T>,
    multiset: T,
    set_cardinality: usize,
}

impl<T: Scalar> Gpma<T> {
    /// Validating constructor; the masses must already be normalized.
    pub fn new(singletons: Vec<T>, multiset: T) -> Result<Self> {
        Self::with_tolerance(singletons, multiset, SIMPLEX_TOL)
    }

    pub(crate) fn with_tolerance(singletons: Vec<T>, multiset: T, tol: f64) -> Result<Self> {
        if singletons.len() < 2 {
            return Err(Error::InvalidMass("need at least 2 classes".into()));
        }
        let singletons = singletons
            .into_iter()
            .map(|b| snap_mass(b, "singleton mass"))
            .collect::<Result<Vec<_>>>()?;
        let multiset = snap_mass(multiset, "multi-set mass")?;
        check_simplex(&singletons, multiset, tol)?;
        let set_cardinality = singletons.len();
        Ok(Self {
            singletons,
            multiset,
            set_cardinality,
        })
    }

    /// Assembles masses the caller has just normalized; skips validation.
    pub(crate) fn from_normalized(singletons: Vec<T>, multiset: T) -> Self {
        let set_cardinality = singletons.len();
        Self {
            singletons,
            multiset,
            set_cardinality,
        }
    }

    pub fn vacuous(num_classes: usize) -> Self {
        Self::from_normalized(vec![T::zero(); num_classes], T::one())
    }

    /// Fully certain assignment on `class`.
    pub fn certain(num_classes: usize, class: usize) -> Self {
        let mut s = vec![T::zero(); num_classes];
        s[class] = T::one();
        Self::from_normalized(s, T::zero())
    }

    pub fn singletons(&self) -> &[T] {
        &self.singletons
    }

    pub fn multiset(&self) -> T {
        self.multiset
    }

    pub fn set_cardinality(&self) -> usize {
        self.set_cardinality
    }

    pub fn num_classes(&self) -> usize {
        self.singletons.len()
    }

    pub fn total_mass(&self) -> T {
        self.singletons
            .iter()
            .fold(self.multiset, |acc, &b| acc + b)
    }

    /// Singleton argmax, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.singletons).unwrap_or(0)
    }

    /// Drops the multi-set label, returning the plain belief assignment.
    pub fn to_belief(&self) -> BeliefAssignment<T> {
        BeliefAssignment {
            belief: self.singletons.clone(),
            uncertainty: self.multiset,
        }
    }
}

/// `b_n = e_n / S`, `u = K / S`.
pub fn evidence_to_belief<T: Scalar>(e: &EvidenceVector<T>) -> BeliefAssignment<T> {
    let s = e.strength();
    let k = T::from_usize_(e.num_classes());
    BeliefAssignment {
        belief: e.values().iter().map(|&v| v / s).collect(),
        uncertainty: k / s,
    }
}

/// `alpha_n = e_n + 1`.
pub fn evidence_to_dirichlet<T: Scalar>(e: &EvidenceVector<T>) -> DirichletParams<T> {
    let alpha: Vec<T> = e.values().iter().map(|&v| v + T::one()).collect();
    let strength = alpha.iter().copied().sum();
    DirichletParams { alpha, strength }
}

/// Lifts a belief assignment into a GPMA: the uncertainty becomes the mass on
/// the all-classes set, whose cardinality is `num_classes`.
pub fn belief_to_gpma<T: Scalar>(b: &BeliefAssignment<T>, num_classes: usize) -> Result<Gpma<T>> {
    if b.num_classes() != num_classes {
        return Err(Error::ClassMismatch(b.num_classes(), num_classes));
    }
    Ok(Gpma {
        singletons: b.belief.clone(),
        multiset: b.uncertainty,
        set_cardinality: num_classes,
    })
}
