//! Training-set size bounds and data-sharing benefit criteria.
//!
//! Precision and recall of a model trained on `q` samples with label-noise
//! rate `nu` follow coupon-collector style bounds:
//!
//! ```text
//! precision ≈ 1 - c0 · exp(-2 q (1 - nu))
//! recall   <= 1 - c1 · exp(-q (1 - nu))
//! ```
//!
//! Both are clamped to `[0, 1]`; for small `q` and constants ≥ 1 the raw
//! expressions go negative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::PartnerId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouponCollectorParams {
    pub c0: f64,
    pub c1: f64,
    /// |D|, descriptive only.
    pub domain_size: u64,
    /// |R|, descriptive only.
    pub range_size: u64,
}

impl CouponCollectorParams {
    pub fn new(c0: f64, c1: f64, domain_size: u64, range_size: u64) -> Result<Self> {
        let params = Self {
            c0,
            c1,
            domain_size,
            range_size,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return Err(Error::Domain(format!("c0 must be positive, got {}", self.c0)));
        }
        if !(self.c1 > 0.0 && self.c1.is_finite()) {
            return Err(Error::Domain(format!("c1 must be positive, got {}", self.c1)));
        }
        if self.domain_size == 0 || self.range_size == 0 {
            return Err(Error::Domain("domain and range sizes must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for CouponCollectorParams {
    fn default() -> Self {
        Self {
            c0: 1.0,
            c1: 1.0,
            domain_size: 1,
            range_size: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartnerDataStats {
    pub partner_id: PartnerId,
    pub q: u64,
    pub nu: f64,
}

impl PartnerDataStats {
    pub fn new(partner_id: impl Into<PartnerId>, q: u64, nu: f64) -> Result<Self> {
        check_nu(nu)?;
        Ok(Self {
            partner_id: partner_id.into(),
            q,
            nu,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnionStats {
    pub k: f64,
    pub nu_agg: f64,
    pub effective_q: u64,
}

fn check_nu(nu: f64) -> Result<()> {
    if (0.0..=1.0).contains(&nu) {
        Ok(())
    } else {
        Err(Error::Domain(format!("noise parameter must lie in [0, 1], got {nu}")))
    }
}

fn clamp_probability(p: f64) -> f64 {
    p.clamp(0.0, 1.0)
}

pub fn precision_bound(params: &CouponCollectorParams, q: u64, nu: f64) -> Result<f64> {
    params.validate()?;
    check_nu(nu)?;
    let raw = 1.0 - params.c0 * (-2.0 * q as f64 * (1.0 - nu)).exp();
    Ok(clamp_probability(raw))
}

/// Upper bound on recall.
pub fn recall_bound(params: &CouponCollectorParams, q: u64, nu: f64) -> Result<f64> {
    params.validate()?;
    check_nu(nu)?;
    let raw = 1.0 - params.c1 * (-(q as f64) * (1.0 - nu)).exp();
    Ok(clamp_probability(raw))
}

/// Size and aggregate noise of the deduplicated union, relative to `reference`.
pub fn effective_union(
    all_partners: &[PartnerDataStats],
    dedup_count: u64,
    reference: &str,
) -> Result<UnionStats> {
    let reference_stats = all_partners
        .iter()
        .find(|p| p.partner_id == reference)
        .ok_or_else(|| Error::UndefinedReference(reference.to_string()))?;
    if reference_stats.q == 0 {
        return Err(Error::UndefinedReference(reference.to_string()));
    }
    for p in all_partners {
        check_nu(p.nu)?;
    }
    let q_ref = reference_stats.q as f64;
    let k = dedup_count as f64 / q_ref;
    if k == 0.0 {
        return Err(Error::Domain("dedup_count must be positive".into()));
    }
    let noisy: f64 = all_partners.iter().map(|p| p.nu * p.q as f64).sum();
    Ok(UnionStats {
        k,
        nu_agg: noisy / (k * q_ref),
        effective_q: dedup_count,
    })
}

/// Outcome of a benefit criterion; `beneficial` is `margin > 0`, ties lose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Benefit {
    pub beneficial: bool,
    pub margin: f64,
}

impl Benefit {
    fn from_margin(margin: f64) -> Self {
        Self {
            beneficial: margin > 0.0,
            margin,
        }
    }
}

/// `k (1 - nu_agg) > 1 - nu_own`
pub fn sharing_benefit(union: &UnionStats, own: &PartnerDataStats) -> Benefit {
    Benefit::from_margin(union.k * (1.0 - union.nu_agg) - (1.0 - own.nu))
}

/// `Q_new (1 - nu_new) > Q_old (1 - nu_old)`
pub fn incremental_benefit(new: &PartnerDataStats, old: &PartnerDataStats) -> Benefit {
    Benefit::from_margin(new.q as f64 * (1.0 - new.nu) - old.q as f64 * (1.0 - old.nu))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(c0: f64, c1: f64) -> CouponCollectorParams {
        CouponCollectorParams::new(c0, c1, 10, 10).unwrap()
    }

    fn stats(id: &str, q: u64, nu: f64) -> PartnerDataStats {
        PartnerDataStats::new(id, q, nu).unwrap()
    }

    #[test]
    fn precision_examples() {
        assert_eq!(precision_bound(&params(1.0, 1.0), 0, 0.0).unwrap(), 0.0);
        let p = precision_bound(&params(1.0, 1.0), 1, 0.0).unwrap();
        assert!((p - 0.8646647167633873).abs() < 1e-12);
        assert_eq!(precision_bound(&params(1.0, 1.0), 10, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_bound(&params(1.0, 1.0), 0, 0.0).unwrap(), 0.0);
        let r = recall_bound(&params(1.0, 1.0), 2, 0.0).unwrap();
        assert!((r - 0.8646647167633873).abs() < 1e-12);
        let r = recall_bound(&params(1.0, 0.5), 1, 0.5).unwrap();
        assert!((r - 0.6967346701436833).abs() < 1e-12);
    }

    #[test]
    fn bounds_clamp_negative_raw_values() {
        assert_eq!(precision_bound(&params(5.0, 5.0), 0, 0.0).unwrap(), 0.0);
        assert_eq!(recall_bound(&params(5.0, 5.0), 1, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn noise_outside_unit_interval_is_rejected() {
        assert!(matches!(
            precision_bound(&params(1.0, 1.0), 1, 1.5),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            recall_bound(&params(1.0, 1.0), 1, -0.1),
            Err(Error::Domain(_))
        ));
        assert!(CouponCollectorParams::new(0.0, 1.0, 1, 1).is_err());
    }

    #[test]
    fn effective_union_examples() {
        let u = effective_union(&[stats("1", 100, 0.1), stats("2", 100, 0.1)], 200, "1").unwrap();
        assert_eq!(u.k, 2.0);
        assert!((u.nu_agg - 0.1).abs() < 1e-12);

        let u = effective_union(&[stats("1", 100, 0.0), stats("2", 300, 0.2)], 400, "1").unwrap();
        assert_eq!(u.k, 4.0);
        assert!((u.nu_agg - 0.15).abs() < 1e-12);
        assert_eq!(u.effective_q, 400);

        let u = effective_union(&[stats("1", 50, 0.3)], 50, "1").unwrap();
        assert_eq!(u.k, 1.0);
        assert_eq!(u.nu_agg, 0.3);
    }

    #[test]
    fn effective_union_rejects_bad_reference() {
        assert!(matches!(
            effective_union(&[stats("1", 0, 0.1)], 10, "1"),
            Err(Error::UndefinedReference(_))
        ));
        assert!(matches!(
            effective_union(&[stats("1", 10, 0.1)], 10, "7"),
            Err(Error::UndefinedReference(_))
        ));
    }

    #[test]
    fn sharing_benefit_examples() {
        let own = stats("1", 100, 0.1);
        let b = sharing_benefit(&UnionStats { k: 2.0, nu_agg: 0.1, effective_q: 200 }, &own);
        assert!(b.beneficial);
        assert!((b.margin - 0.9).abs() < 1e-12);

        let b = sharing_benefit(&UnionStats { k: 1.0, nu_agg: 0.1, effective_q: 100 }, &own);
        assert!(!b.beneficial);
        assert_eq!(b.margin, 0.0);

        let own = stats("1", 100, 0.0);
        let b = sharing_benefit(&UnionStats { k: 4.0, nu_agg: 0.15, effective_q: 400 }, &own);
        assert!(b.beneficial);
        assert!((b.margin - 2.4).abs() < 1e-12);
    }

    #[test]
    fn incremental_benefit_examples() {
        let b = incremental_benefit(&stats("n", 150, 0.2), &stats("o", 100, 0.0));
        assert!(b.beneficial);
        assert!((b.margin - 20.0).abs() < 1e-9);

        let same = stats("o", 100, 0.25);
        let b = incremental_benefit(&same, &same);
        assert!(!b.beneficial);
        assert_eq!(b.margin, 0.0);

        let b = incremental_benefit(&stats("n", 110, 0.5), &stats("o", 100, 0.0));
        assert!(!b.beneficial);
        assert!((b.margin + 45.0).abs() < 1e-9);
    }
}
