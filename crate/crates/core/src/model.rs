//! Problem definition and the shared vocabulary of the solver.
//!
//! Bodies carry their original labels `0..n` in [`SystemSpec::masses`]. All
//! numerical work happens in the *sorted frame*: rank `i` is the body
//! `sigma[i]`, and an admissible path keeps ranks ordered on the line. The
//! ordering is applied only when data enters or leaves the crate.
//!
//! Units: the gravitational constant is 1, so masses, lengths and times are
//! related by `G = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when checking the mirror-mass condition.
pub const MIRROR_MASS_RTOL: f64 = 1e-12;

/// A permutation of `0..n`, stored as its image list `sigma[rank] = body`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    /// Builds a permutation from zero-based images.
    pub fn new(images: Vec<usize>) -> Result<Self> {
        let n = images.len();
        let mut seen = vec![false; n];
        for &image in &images {
            if image >= n || seen[image] {
                return Err(Error::BadPermutation(images.iter().map(|i| i + 1).collect()));
            }
            seen[image] = true;
        }
        Ok(Self(images))
    }

    /// Builds a permutation from the one-based image list `(σ(1), ..., σ(n))`.
    pub fn from_one_based(images: &[usize]) -> Result<Self> {
        if images.iter().any(|&i| i == 0) {
            return Err(Error::BadPermutation(images.to_vec()));
        }
        Self::new(images.iter().map(|i| i - 1).collect())
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The body carried by `rank`.
    pub fn image(&self, rank: usize) -> usize {
        self.0[rank]
    }

    pub fn images(&self) -> &[usize] {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (rank, &body) in self.0.iter().enumerate() {
            inv[body] = rank;
        }
        Self(inv)
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &j)| i == j)
    }
}

/// Problem definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    /// Masses by original body label.
    pub masses: Vec<f64>,
    /// Half period `T`; the orbit is `2T`-periodic.
    pub half_period: f64,
    /// Ordering on the line: rank `i` is body `sigma.image(i)`.
    pub sigma: Permutation,
    /// Restrict the search to paths with the mirror (dihedral) symmetry.
    pub symmetric_mode: bool,
}

impl SystemSpec {
    /// A validated spec with the identity ordering.
    pub fn new(masses: Vec<f64>, half_period: f64) -> Result<Self> {
        let n = masses.len();
        Self {
            masses,
            half_period,
            sigma: Permutation::identity(n),
            symmetric_mode: false,
        }
        .validate()
    }

    pub fn with_sigma(mut self, sigma: Permutation) -> Result<Self> {
        self.sigma = sigma;
        self.validate()
    }

    pub fn with_symmetric_mode(mut self, symmetric: bool) -> Result<Self> {
        self.symmetric_mode = symmetric;
        self.validate()
    }

    pub fn n(&self) -> usize {
        self.masses.len()
    }

    /// Checks every invariant and returns the spec unchanged.
    pub fn validate(self) -> Result<Self> {
        validate_spec(&self)?;
        Ok(self)
    }

    /// Masses by rank.
    pub fn sorted_masses(&self) -> Vec<f64> {
        to_sorted_frame(&self.masses, &self.sigma)
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }
}

/// Checks the invariants of a [`SystemSpec`].
pub fn validate_spec(spec: &SystemSpec) -> Result<()> {
    let n = spec.n();
    if n < 3 {
        return Err(Error::TooFewBodies(n));
    }
    for (index, &value) in spec.masses.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::NonPositiveMass { index, value });
        }
    }
    if !(spec.half_period > 0.0 && spec.half_period.is_finite()) {
        return Err(Error::NonPositivePeriod(spec.half_period));
    }
    if spec.sigma.len() != n {
        return Err(Error::BadPermutation(spec.sigma.to_one_based()));
    }
    // Re-run the bijection check; deserialized permutations bypass `new`.
    Permutation::new(spec.sigma.images().to_vec())?;
    if spec.symmetric_mode {
        check_mirror_masses(&spec.sorted_masses())?;
    }
    Ok(())
}

/// Checks `m[i] == m[n-1-i]` for sorted-frame masses.
pub fn check_mirror_masses(sorted: &[f64]) -> Result<()> {
    let n = sorted.len();
    for left in 0..n / 2 {
        let right = n - 1 - left;
        let (a, b) = (sorted[left], sorted[right]);
        if (a - b).abs() > MIRROR_MASS_RTOL * a.abs().max(b.abs()) {
            return Err(Error::SymmetryMassMismatch {
                left: left + 1,
                right: right + 1,
                left_mass: a,
                right_mass: b,
            });
        }
    }
    Ok(())
}

/// Reindexes per-body values so that entry `i` belongs to rank `i`.
pub fn to_sorted_frame<T: Clone>(values: &[T], sigma: &Permutation) -> Vec<T> {
    (0..sigma.len()).map(|rank| values[sigma.image(rank)].clone()).collect()
}

/// Inverse of [`to_sorted_frame`].
pub fn from_sorted_frame<T: Clone>(values: &[T], sigma: &Permutation) -> Vec<T> {
    let inv = sigma.inverse();
    (0..sigma.len()).map(|body| values[inv.image(body)].clone()).collect()
}

/// Positions and velocities of every body at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub time: f64,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
}

impl PhaseState {
    pub fn new(time: f64, positions: Vec<f64>, velocities: Vec<f64>) -> Self {
        debug_assert_eq!(positions.len(), velocities.len());
        Self {
            time,
            positions,
            velocities,
        }
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn is_finite(&self) -> bool {
        self.time.is_finite()
            && self.positions.iter().all(|x| x.is_finite())
            && self.velocities.iter().all(|v| v.is_finite())
    }
}

/// Total mass `Σ mᵢ` and total momentum `Σ mᵢ vᵢ`.
pub fn total_mass_and_momentum(state: &PhaseState, masses: &[f64]) -> (f64, f64) {
    let m0 = masses.iter().sum();
    let p = masses
        .iter()
        .zip(&state.velocities)
        .map(|(m, v)| m * v)
        .sum();
    (m0, p)
}

/// Newtonian potential `U = Σ_{i<j} mᵢmⱼ/|xᵢ−xⱼ|` without collision checks.
pub(crate) fn potential_unchecked(positions: &[f64], masses: &[f64]) -> f64 {
    let n = positions.len();
    let mut u = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            u += masses[i] * masses[j] / (positions[j] - positions[i]).abs();
        }
    }
    u
}

/// Total energy `K − U` of a phase state.
pub fn energy(state: &PhaseState, masses: &[f64]) -> f64 {
    let kinetic: f64 = masses
        .iter()
        .zip(&state.velocities)
        .map(|(m, v)| 0.5 * m * v * v)
        .sum();
    kinetic - potential_unchecked(&state.positions, masses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_masses_identity_is_valid() {
        let spec = SystemSpec::new(vec![1.0, 1.0, 1.0], 1.0).unwrap();
        assert_eq!(spec.clone().validate().unwrap(), spec);
    }

    #[test]
    fn mirror_masses_pass_symmetric_mode() {
        let spec = SystemSpec::new(vec![1.0, 2.0, 1.0], 1.0)
            .unwrap()
            .with_symmetric_mode(true);
        assert!(spec.is_ok());
    }

    #[test]
    fn unequal_mirror_masses_are_rejected() {
        let err = SystemSpec::new(vec![1.0, 2.0, 3.0], 1.0)
            .unwrap()
            .with_symmetric_mode(true)
            .unwrap_err();
        assert!(matches!(err, Error::SymmetryMassMismatch { .. }));
    }

    #[test]
    fn validation_errors() {
        assert_eq!(
            SystemSpec::new(vec![1.0, 1.0], 1.0).unwrap_err(),
            Error::TooFewBodies(2)
        );
        assert!(matches!(
            SystemSpec::new(vec![1.0, 0.0, 1.0], 1.0).unwrap_err(),
            Error::NonPositiveMass { index: 1, .. }
        ));
        assert!(matches!(
            SystemSpec::new(vec![1.0, 1.0, 1.0], -1.0).unwrap_err(),
            Error::NonPositivePeriod(_)
        ));
        assert!(Permutation::from_one_based(&[1, 1, 2]).is_err());
        assert!(Permutation::from_one_based(&[0, 1, 2]).is_err());
        assert!(Permutation::from_one_based(&[1, 2, 4]).is_err());
    }

    #[test]
    fn sorted_frame_reindexing() {
        let m = [5.0, 7.0, 9.0];
        assert_eq!(to_sorted_frame(&m, &Permutation::identity(3)), vec![5.0, 7.0, 9.0]);
        let sigma = Permutation::from_one_based(&[2, 3, 1]).unwrap();
        let sorted = to_sorted_frame(&m, &sigma);
        assert_eq!(sorted, vec![7.0, 9.0, 5.0]);
        assert_eq!(from_sorted_frame(&sorted, &sigma), m.to_vec());
    }

    #[test]
    fn momentum_examples() {
        let s = PhaseState::new(0.0, vec![0.0, 1.0], vec![1.0, -1.0]);
        assert_eq!(total_mass_and_momentum(&s, &[1.0, 1.0]), (2.0, 0.0));
        let s = PhaseState::new(0.0, vec![0.0, 1.0], vec![1.0, 1.0]);
        assert_eq!(total_mass_and_momentum(&s, &[2.0, 3.0]), (5.0, 5.0));
        let s = PhaseState::new(0.0, vec![0.0, 1.0, 2.0], vec![6.0, -3.0, 0.0]);
        assert_eq!(total_mass_and_momentum(&s, &[1.0, 2.0, 3.0]), (6.0, 0.0));
    }
}
