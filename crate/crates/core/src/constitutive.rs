//! Hyper-elastic and linear-elastic constitutive laws, plus conversions
//! between the four common stress measures.
//!
//! All functions are pure; a deformation gradient with det(F) at or below
//! [`MIN_DETERMINANT`] is reported as [`MpmError::SingularDeformation`]
//! instead of being clamped.

use serde::{Deserialize, Serialize};

use crate::error::{MpmError, Result};
use crate::scalar::Real;
use crate::tensor::MatN;

/// Smallest admissible det(F).
pub const MIN_DETERMINANT: f64 = 1e-10;

/// Lamé parameters together with the engineering constants they came from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialParams<S: Real> {
    pub youngs_modulus: S,
    pub poissons_ratio: S,
    /// Shear modulus μ.
    pub mu: S,
    pub lambda: S,
}

/// μ = E / (2(1+ν)), λ = Eν / ((1+ν)(1−2ν)).
pub fn lame_from_elastic<S: Real>(youngs_modulus: S, poissons_ratio: S) -> Result<MaterialParams<S>> {
    let e = youngs_modulus;
    let nu = poissons_ratio;
    if !(e.is_finite() && e > S::zero()) {
        return Err(MpmError::MaterialDomain(format!(
            "Young's modulus must be positive, got {e}"
        )));
    }
    if !(nu.is_finite() && nu > -S::one() && nu < S::lit(0.5)) {
        return Err(MpmError::MaterialDomain(format!(
            "Poisson's ratio must lie in (-1, 0.5), got {nu}"
        )));
    }
    let one = S::one();
    let two = S::lit(2.0);
    Ok(MaterialParams {
        youngs_modulus: e,
        poissons_ratio: nu,
        mu: e / (two * (one + nu)),
        lambda: e * nu / ((one + nu) * (one - two * nu)),
    })
}

impl<S: Real> MaterialParams<S> {
    /// P-wave modulus λ + 2μ, used by the time-step bound.
    pub fn p_wave_modulus(&self) -> S {
        self.lambda + S::lit(2.0) * self.mu
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstitutiveKind {
    NeoHookean,
    /// Small-strain Hooke's law with ε = sym(F) − I. Energy
    /// μ ε:ε + ½λ tr(ε)², so P = σ_lin(ε).
    LinearElastic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstitutiveModel<S: Real> {
    pub kind: ConstitutiveKind,
    pub params: MaterialParams<S>,
}

fn checked_det<S: Real>(f: &MatN<S>) -> Result<S> {
    let j = f.determinant();
    if !(j > S::lit(MIN_DETERMINANT)) {
        return Err(MpmError::SingularDeformation { det: j.to_f64_lossy() });
    }
    Ok(j)
}

/// Small strain ε = ½(F + Fᵀ) − I.
pub fn small_strain<S: Real>(f: &MatN<S>) -> MatN<S> {
    let d = f.dim();
    let half = S::lit(0.5);
    MatN::from_fn(d, |i, j| {
        let sym = half * (f[(i, j)] + f[(j, i)]);
        if i == j {
            sym - S::one()
        } else {
            sym
        }
    })
}

/// σ = λ tr(ε) I + 2μ ε
pub fn linear_elastic_stress<S: Real>(params: &MaterialParams<S>, eps: &MatN<S>) -> MatN<S> {
    let mut sigma = eps.scaled(S::lit(2.0) * params.mu);
    let bulk = params.lambda * eps.trace();
    for i in 0..eps.dim() {
        sigma[(i, i)] += bulk;
    }
    sigma
}

impl<S: Real> ConstitutiveModel<S> {
    pub fn new(kind: ConstitutiveKind, params: MaterialParams<S>) -> Self {
        ConstitutiveModel { kind, params }
    }

    pub fn neo_hookean(params: MaterialParams<S>) -> Self {
        Self::new(ConstitutiveKind::NeoHookean, params)
    }

    /// Ψ(F)
    pub fn energy_density(&self, f: &MatN<S>) -> Result<S> {
        let MaterialParams { mu, lambda, .. } = self.params;
        let half = S::lit(0.5);
        match self.kind {
            ConstitutiveKind::NeoHookean => {
                let j = checked_det(f)?;
                let log_j = j.ln();
                let d = S::from_usize_lossy(f.dim());
                Ok(half * mu * (f.contract(f) - d) - mu * log_j + half * lambda * log_j * log_j)
            }
            ConstitutiveKind::LinearElastic => {
                let eps = small_strain(f);
                let tr = eps.trace();
                Ok(mu * eps.contract(&eps) + half * lambda * tr * tr)
            }
        }
    }

    /// P = ∂Ψ/∂F
    pub fn first_pk_stress(&self, f: &MatN<S>) -> Result<MatN<S>> {
        match self.kind {
            ConstitutiveKind::NeoHookean => {
                let MaterialParams { mu, lambda, .. } = self.params;
                let j = checked_det(f)?;
                let f_inv_t = f.inverse()?.transpose();
                let mut p = (f - &f_inv_t).scaled(mu);
                p.axpy(lambda * j.ln(), &f_inv_t);
                Ok(p)
            }
            ConstitutiveKind::LinearElastic => Ok(linear_elastic_stress(&self.params, &small_strain(f))),
        }
    }

    /// P Fᵀ (the Kirchhoff stress τ = Jσ), the per-particle factor of the
    /// internal force.
    pub fn kirchhoff_stress(&self, f: &MatN<S>) -> Result<MatN<S>> {
        Ok(self.first_pk_stress(f)?.matmul(&f.transpose()))
    }

    /// Cauchy stress. Neo-Hookean uses the closed form
    /// (1/J)[μ(FFᵀ − I) + λ log(J) I]; linear elastic goes through
    /// (1/J) P Fᵀ.
    pub fn cauchy_stress(&self, f: &MatN<S>) -> Result<MatN<S>> {
        let j = checked_det(f)?;
        match self.kind {
            ConstitutiveKind::NeoHookean => {
                let MaterialParams { mu, lambda, .. } = self.params;
                let mut sigma = f.matmul(&f.transpose());
                let diag_shift = lambda * j.ln() - mu;
                sigma = sigma.scaled(mu);
                for i in 0..f.dim() {
                    sigma[(i, i)] += diag_shift;
                }
                Ok(sigma.scaled(S::one() / j))
            }
            ConstitutiveKind::LinearElastic => self.cauchy_stress_from_pk1(f),
        }
    }

    /// σ = (1/J) P Fᵀ, independent of any closed form.
    pub fn cauchy_stress_from_pk1(&self, f: &MatN<S>) -> Result<MatN<S>> {
        let j = checked_det(f)?;
        Ok(self.kirchhoff_stress(f)?.scaled(S::one() / j))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StressMeasure {
    /// σ
    Cauchy,
    /// τ = Jσ
    Kirchhoff,
    /// P
    FirstPiola,
    /// S = F⁻¹P
    SecondPiola,
}

impl StressMeasure {
    pub const ALL: [StressMeasure; 4] = [
        StressMeasure::Cauchy,
        StressMeasure::Kirchhoff,
        StressMeasure::FirstPiola,
        StressMeasure::SecondPiola,
    ];
}

/// Converts `stress` given as measure `from` into measure `to` for the
/// deformation gradient `f`. Each of the twelve pairs uses its own direct
/// formula.
pub fn stress_convert<S: Real>(
    from: StressMeasure,
    to: StressMeasure,
    stress: &MatN<S>,
    f: &MatN<S>,
) -> Result<MatN<S>> {
    use StressMeasure::*;
    if stress.dim() != f.dim() {
        return Err(MpmError::DimensionMismatch {
            expected: f.dim(),
            got: stress.dim(),
        });
    }
    let j = checked_det(f)?;
    if from == to {
        return Ok(stress.clone());
    }
    let ft = f.transpose();
    let f_inv = f.inverse()?;
    let f_inv_t = f_inv.transpose();
    let inv_j = S::one() / j;
    let out = match (from, to) {
        (Kirchhoff, Cauchy) => stress.scaled(inv_j),
        (FirstPiola, Cauchy) => stress.matmul(&ft).scaled(inv_j),
        (SecondPiola, Cauchy) => f.matmul(stress).matmul(&ft).scaled(inv_j),

        (Cauchy, Kirchhoff) => stress.scaled(j),
        (FirstPiola, Kirchhoff) => stress.matmul(&ft),
        (SecondPiola, Kirchhoff) => f.matmul(stress).matmul(&ft),

        (Cauchy, FirstPiola) => stress.matmul(&f_inv_t).scaled(j),
        (Kirchhoff, FirstPiola) => stress.matmul(&f_inv_t),
        (SecondPiola, FirstPiola) => f.matmul(stress),

        (Cauchy, SecondPiola) => f_inv.matmul(stress).matmul(&f_inv_t).scaled(j),
        (Kirchhoff, SecondPiola) => f_inv.matmul(stress).matmul(&f_inv_t),
        (FirstPiola, SecondPiola) => f_inv.matmul(stress),

        (Cauchy, Cauchy)
        | (Kirchhoff, Kirchhoff)
        | (FirstPiola, FirstPiola)
        | (SecondPiola, SecondPiola) => unreachable!("identity handled above"),
    };
    Ok(out)
}
