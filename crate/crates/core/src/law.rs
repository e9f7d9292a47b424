//! Scalar conservation laws, the Rusanov flux and the test problems.

use crate::error::{Error, Result};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LawKind {
    Advection1d,
    Advection2d,
    Advection3d,
    Burgers2d,
}

impl LawKind {
    pub fn name(self) -> &'static str {
        match self {
            LawKind::Advection1d => "adv1d",
            LawKind::Advection2d => "adv2d",
            LawKind::Advection3d => "adv3d",
            LawKind::Burgers2d => "burgers2d",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adv1d" | "advection1d" => Ok(LawKind::Advection1d),
            "adv2d" | "advection2d" => Ok(LawKind::Advection2d),
            "adv3d" | "advection3d" => Ok(LawKind::Advection3d),
            "burgers2d" | "burgers" => Ok(LawKind::Burgers2d),
            _ => Err(Error::invalid(
                "problem",
                format!("unknown problem `{s}` (expected adv1d, adv2d, adv3d or burgers2d)"),
            )),
        }
    }

    pub fn dim(self) -> usize {
        match self {
            LawKind::Advection1d => 1,
            LawKind::Advection2d | LawKind::Burgers2d => 2,
            LawKind::Advection3d => 3,
        }
    }
}

/// `q_t + div F(q) = 0` with either unit-speed advection along every axis or
/// Burgers flux `q^2/2` along every axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConservationLaw {
    pub kind: LawKind,
    pub dim: usize,
}

impl ConservationLaw {
    pub fn new(kind: LawKind) -> Self {
        ConservationLaw {
            kind,
            dim: kind.dim(),
        }
    }

    pub fn is_linear(&self) -> bool {
        !matches!(self.kind, LawKind::Burgers2d)
    }

    /// Flux component along `axis`.
    #[inline]
    pub fn flux_axis(&self, q: f64, _axis: usize) -> f64 {
        match self.kind {
            LawKind::Burgers2d => 0.5 * q * q,
            _ => q,
        }
    }

    /// Flux Jacobian component along `axis`.
    #[inline]
    pub fn jacobian_axis(&self, q: f64, _axis: usize) -> f64 {
        match self.kind {
            LawKind::Burgers2d => q,
            _ => 1.0,
        }
    }

    #[inline]
    pub fn wave_speed(&self, q: f64, axis: usize) -> f64 {
        self.jacobian_axis(q, axis).abs()
    }

    pub fn flux(&self, q: f64) -> Vec<f64> {
        (0..self.dim).map(|a| self.flux_axis(q, a)).collect()
    }

    pub fn flux_jacobian(&self, q: f64) -> Vec<f64> {
        (0..self.dim).map(|a| self.jacobian_axis(q, a)).collect()
    }
}

pub fn flux(law: &ConservationLaw, q: f64) -> Vec<f64> {
    law.flux(q)
}

/// Rusanov flux through a face normal to `axis` with orientation `sign`
/// (+1 or -1). `q_minus` is the interior trace, `q_plus` the exterior one.
#[inline]
pub fn rusanov(law: &ConservationLaw, q_plus: f64, q_minus: f64, axis: usize, sign: f64, lambda: f64) -> f64 {
    0.5 * (law.flux_axis(q_plus, axis) + law.flux_axis(q_minus, axis)) * sign - 0.5 * lambda * (q_plus - q_minus)
}

/// Compactly supported C-infinity bump `exp(1/(r^2 - w^2))` for `r < w`.
pub fn bump_ic(x: &[f64], center: &[f64], radius: f64) -> f64 {
    let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
    let w2 = radius * radius;
    if r2 < w2 {
        (1.0 / (r2 - w2)).exp()
    } else {
        0.0
    }
}

/// Smooth periodic Burgers data on the unit square.
pub fn burgers_ic(x: &[f64]) -> f64 {
    0.25 * (1.0 - (2.0 * PI * x[0]).cos()) * (1.0 - (2.0 * PI * x[1]).cos())
}

/// A law together with its initial data, final time and (if known) exact
/// solution on the unit box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemSetup {
    pub law: ConservationLaw,
    pub final_time: f64,
}

pub const BUMP_RADIUS: f64 = 1.0 / 3.0;

impl ProblemSetup {
    pub fn new(kind: LawKind) -> Self {
        let final_time = match kind {
            LawKind::Burgers2d => 0.1,
            _ => 1.0,
        };
        ProblemSetup {
            law: ConservationLaw::new(kind),
            final_time,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Ok(Self::new(LawKind::parse(name)?))
    }

    pub fn with_final_time(mut self, t: f64) -> Self {
        self.final_time = t;
        self
    }

    pub fn dim(&self) -> usize {
        self.law.dim
    }

    pub fn domain(&self) -> Vec<(f64, f64)> {
        vec![(0.0, 1.0); self.dim()]
    }

    pub fn initial(&self, x: &[f64]) -> f64 {
        match self.law.kind {
            LawKind::Burgers2d => burgers_ic(x),
            _ => bump_ic(x, &vec![0.5; self.dim()], BUMP_RADIUS),
        }
    }

    pub fn has_exact(&self) -> bool {
        self.law.is_linear()
    }

    /// Exact solution for advection: the initial data shifted periodically.
    pub fn exact(&self, x: &[f64], t: f64) -> Option<f64> {
        if !self.has_exact() {
            return None;
        }
        let shifted: Vec<f64> = x.iter().map(|&xi| (xi - t).rem_euclid(1.0)).collect();
        Some(self.initial(&shifted))
    }
}
