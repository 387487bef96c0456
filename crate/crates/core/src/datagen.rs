//! Seeded synthetic scenarios: region-skewed curve data, class-skewed
//! classification data, lexicon perturbation and label-noise injection.
//!
//! Site `i` always draws from `rng::stream(seed, i)`, so adding a site leaves
//! the other sites' rows untouched.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LabelSpec, Schema};
use crate::error::{Error, Result};
use crate::infometrics::{GroundTruth, Oracle};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyPiece {
    pub lo: f64,
    pub hi: f64,
    /// Ascending powers of `x`.
    pub coeffs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewisePolynomial {
    pub pieces: Vec<PolyPiece>,
}

impl PiecewisePolynomial {
    pub fn single(lo: f64, hi: f64, coeffs: Vec<f64>) -> Self {
        Self {
            pieces: vec![PolyPiece { lo, hi, coeffs }],
        }
    }

    /// Evaluates the first piece whose `[lo, hi]` holds `x`; points outside
    /// every piece use the nearest end piece.
    pub fn eval(&self, x: f64) -> f64 {
        let piece = self
            .pieces
            .iter()
            .find(|p| x >= p.lo && x <= p.hi)
            .or_else(|| {
                if self.pieces.first().is_some_and(|p| x < p.lo) {
                    self.pieces.first()
                } else {
                    self.pieces.last()
                }
            });
        piece.map_or(0.0, |p| p.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c))
    }

    pub fn domain(&self) -> Option<(f64, f64)> {
        let lo = self.pieces.iter().map(|p| p.lo).reduce(f64::min)?;
        let hi = self.pieces.iter().map(|p| p.hi).reduce(f64::max)?;
        Some((lo, hi))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurveSpec {
    pub truth: PiecewisePolynomial,
    pub domain: (f64, f64),
    pub site_windows: Vec<(f64, f64)>,
    pub site_ids: Vec<String>,
    pub samples_per_site: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl CurveSpec {
    /// Cubic `x³ - 4.5x² + 6x + 0.5` on `[0, 3]`, three sites on the unit
    /// windows, 200 samples each, σ = 0.05.
    pub fn reference() -> Self {
        Self {
            truth: PiecewisePolynomial::single(0.0, 3.0, vec![0.5, 6.0, -4.5, 1.0]),
            domain: (0.0, 3.0),
            site_windows: vec![(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)],
            site_ids: vec!["1".into(), "2".into(), "3".into()],
            samples_per_site: 200,
            noise_sigma: 0.05,
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.domain;
        if !(lo < hi) {
            return Err(Error::Config(format!("curve domain [{lo}, {hi}] is empty")));
        }
        if self.samples_per_site == 0 {
            return Err(Error::Config("samples_per_site must be >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be finite and >= 0".into()));
        }
        if self.site_windows.len() != self.site_ids.len() {
            return Err(Error::Config("one site id per window is required".into()));
        }
        for &(a, b) in &self.site_windows {
            if !(a <= b && a >= lo && b <= hi) {
                return Err(Error::Config(format!("site window [{a}, {b}] is not inside the domain")));
            }
        }
        Ok(())
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            oracle: Oracle::Curve {
                curve: self.truth.clone(),
            },
            domain: vec![self.domain],
        }
    }

    pub fn schema(&self) -> Schema {
        let (lo, hi) = self.ground_truth().label_range();
        Schema {
            format: "canonical".into(),
            fields: vec!["x".into()],
            labels: LabelSpec::Range { lo, hi },
        }
    }
}

impl Default for CurveSpec {
    fn default() -> Self {
        Self::reference()
    }
}

pub fn synth_curve(spec: &CurveSpec) -> Result<(Vec<Dataset>, GroundTruth)> {
    spec.validate()?;
    let schema = spec.schema();
    let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let sites = spec
        .site_windows
        .iter()
        .zip(&spec.site_ids)
        .enumerate()
        .map(|(i, (&(a, b), id))| {
            let mut r = rng::stream(spec.seed, i as u64);
            let mut xs = Vec::with_capacity(spec.samples_per_site);
            let mut ys = Vec::with_capacity(spec.samples_per_site);
            for _ in 0..spec.samples_per_site {
                let x = if a == b { a } else { r.random_range(a..=b) };
                let noise = if spec.noise_sigma > 0.0 { normal.sample(&mut r) } else { 0.0 };
                xs.push(vec![x]);
                ys.push(spec.truth.eval(x) + noise);
            }
            Dataset::from_rows(schema.clone(), xs, ys, id)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((sites, spec.ground_truth()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassSkewSpec {
    pub class_names: Vec<String>,
    /// One row per site; zeros mark classes the site never sees.
    pub priors: Vec<Vec<f64>>,
    /// Class centroid per class.
    pub means: Vec<Vec<f64>>,
    /// Half-width of the uniform box drawn around each centroid.
    pub spread: f64,
    pub samples_per_site: usize,
    pub site_ids: Vec<String>,
    pub seed: u64,
}

impl ClassSkewSpec {
    /// `k` classes on a circle of radius 3 in the plane, uniform priors.
    pub fn balanced(k: usize, sites: usize, seed: u64) -> Self {
        let means = (0..k)
            .map(|c| {
                let t = std::f64::consts::TAU * c as f64 / k as f64;
                vec![3.0 * t.cos(), 3.0 * t.sin()]
            })
            .collect();
        Self {
            class_names: (0..k).map(|c| format!("c{c}")).collect(),
            priors: vec![vec![1.0 / k as f64; k]; sites],
            means,
            spread: 1.0,
            samples_per_site: 100,
            site_ids: (1..=sites).map(|i| i.to_string()).collect(),
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.class_names.len();
        if k < 2 {
            return Err(Error::Config("at least two classes are required".into()));
        }
        if self.means.len() != k || self.means.iter().any(|m| m.len() != self.dim()) || self.dim() == 0 {
            return Err(Error::Config("one centroid of a common dimension per class is required".into()));
        }
        if self.priors.len() != self.site_ids.len() {
            return Err(Error::Config("one prior row per site is required".into()));
        }
        for (i, row) in self.priors.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.len() != k || row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("prior row {i} is not a distribution over {k} classes")));
            }
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return Err(Error::Config("spread must be positive".into()));
        }
        if self.samples_per_site == 0 {
            return Err(Error::Config("samples_per_site must be >= 1".into()));
        }
        Ok(())
    }

    pub fn schema(&self) -> Schema {
        Schema {
            format: "canonical".into(),
            fields: (0..self.dim()).map(|d| format!("x{d}")).collect(),
            labels: LabelSpec::Classes(self.class_names.clone()),
        }
    }

    /// Nearest-centroid oracle over the bounding box of all class boxes.
    pub fn ground_truth(&self) -> GroundTruth {
        let domain = (0..self.dim())
            .map(|d| {
                let lo = self.means.iter().map(|m| m[d]).fold(f64::INFINITY, f64::min);
                let hi = self.means.iter().map(|m| m[d]).fold(f64::NEG_INFINITY, f64::max);
                (lo - self.spread, hi + self.spread)
            })
            .collect();
        GroundTruth {
            oracle: Oracle::NearestCentroid {
                centroids: self.means.clone(),
            },
            domain,
        }
    }

    fn sample_rows(&self, r: &mut impl Rng, prior: &[f64], n: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let pick = WeightedIndex::new(prior).map_err(|e| Error::Config(e.to_string()))?;
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let c = pick.sample(r);
            xs.push(
                self.means[c]
                    .iter()
                    .map(|&m| r.random_range(m - self.spread..=m + self.spread))
                    .collect(),
            );
            ys.push(c as f64);
        }
        Ok((xs, ys))
    }

    /// `n` rows with uniform class priors, drawn from a stream no site uses.
    pub fn validation_set(&self, n: usize) -> Result<Dataset> {
        self.validate()?;
        let k = self.class_names.len();
        let mut r = rng::stream(self.seed, rng::STREAM_VALIDATION);
        let (xs, ys) = self.sample_rows(&mut r, &vec![1.0 / k as f64; k], n)?;
        Dataset::from_rows(self.schema(), xs, ys, "validation")
    }
}

impl Default for ClassSkewSpec {
    fn default() -> Self {
        Self::balanced(3, 3, 7)
    }
}

pub fn synth_classification(spec: &ClassSkewSpec) -> Result<Vec<Dataset>> {
    spec.validate()?;
    let schema = spec.schema();
    spec.priors
        .iter()
        .zip(&spec.site_ids)
        .enumerate()
        .map(|(i, (prior, id))| {
            let mut r = rng::stream(spec.seed, i as u64);
            let (xs, ys) = spec.sample_rows(&mut r, prior, spec.samples_per_site)?;
            Dataset::from_rows(schema.clone(), xs, ys, id)
        })
        .collect()
}

/// Renames class names and field names; unmapped names and all values stay.
pub fn lexicon_perturb(
    data: &Dataset,
    label_map: &BTreeMap<String, String>,
    field_map: &BTreeMap<String, String>,
) -> Dataset {
    let rename = |map: &BTreeMap<String, String>, s: &String| map.get(s).cloned().unwrap_or_else(|| s.clone());
    let mut out = data.clone();
    out.schema.fields = data.schema.fields.iter().map(|f| rename(field_map, f)).collect();
    if let LabelSpec::Classes(classes) = &data.schema.labels {
        out.schema.labels = LabelSpec::Classes(classes.iter().map(|c| rename(label_map, c)).collect());
    }
    out
}

/// Corrupts each row independently with probability `nu` and records which
/// rows were hit in `noise_marks` (or-ed with any existing marks).
pub fn inject_noise(data: &Dataset, nu: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&nu) {
        return Err(Error::Domain(format!("noise rate {nu} is outside [0, 1]")));
    }
    let mut r = rng::stream(seed, 0);
    let mut out = data.clone();
    let mut marks = data.noise_marks.clone().unwrap_or_else(|| vec![false; data.len()]);
    for (i, label) in out.labels.iter_mut().enumerate() {
        if r.random::<f64>() >= nu {
            continue;
        }
        *label = match &data.schema.labels {
            LabelSpec::Classes(classes) => {
                let k = classes.len();
                if k < 2 {
                    continue;
                }
                let old = *label as usize;
                let pick = r.random_range(0..k - 1);
                (if pick >= old { pick + 1 } else { pick }) as f64
            }
            LabelSpec::Range { lo, hi } => r.random_range(*lo..=*hi),
        };
        marks[i] = true;
    }
    out.noise_marks = Some(marks);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn noise_free_curve_is_exact() {
        let spec = CurveSpec {
            noise_sigma: 0.0,
            ..CurveSpec::reference()
        };
        let (sites, truth) = synth_curve(&spec).unwrap();
        for site in &sites {
            for (x, &y) in site.features.iter().zip(&site.labels) {
                assert_eq!(y, truth.label(x));
            }
        }
    }

    #[test]
    fn sites_stay_inside_their_windows() {
        let spec = CurveSpec::reference();
        let (sites, _) = synth_curve(&spec).unwrap();
        for (site, &(a, b)) in sites.iter().zip(&spec.site_windows) {
            let bounds = site.feature_bounds().unwrap();
            assert!(bounds[0].0 >= a && bounds[0].1 <= b);
            // sampling extremes close to the window edges
            assert!(bounds[0].0 - a < 0.05 && b - bounds[0].1 < 0.05);
        }
    }

    #[test]
    fn adding_a_site_keeps_existing_sites() {
        let base = CurveSpec::reference();
        let mut more = base.clone();
        more.site_windows.push((0.5, 2.5));
        more.site_ids.push("4".into());
        let (a, _) = synth_curve(&base).unwrap();
        let (b, _) = synth_curve(&more).unwrap();
        assert_eq!(a[..], b[..3]);
    }

    #[test]
    fn reference_cubic_values() {
        let f = CurveSpec::reference().truth;
        assert_eq!(f.eval(0.0), 0.5);
        assert_eq!(f.eval(1.0), 3.0);
        assert_eq!(f.eval(2.0), 2.5);
        assert_eq!(f.eval(3.0), 5.0);
    }

    #[test]
    fn missing_classes_follow_priors() {
        let spec = ClassSkewSpec {
            priors: vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.5, 0.5]],
            site_ids: vec!["a".into(), "b".into()],
            ..ClassSkewSpec::balanced(3, 2, 1)
        };
        let sites = synth_classification(&spec).unwrap();
        assert!(sites[0].labels.iter().all(|&l| l == 0.0));
        let mut union = sites[0].clone();
        union.extend_from(&sites[1]).unwrap();
        assert_eq!(union.class_histogram().len(), 3);
    }

    #[test]
    fn uniform_priors_give_binomial_counts() {
        let spec = ClassSkewSpec {
            samples_per_site: 3000,
            ..ClassSkewSpec::balanced(3, 2, 9)
        };
        for site in synth_classification(&spec).unwrap() {
            let n = 3000.0;
            let p: f64 = 1.0 / 3.0;
            let sd = (n * p * (1.0 - p)).sqrt();
            for count in site.class_histogram().values() {
                assert!((*count as f64 - n * p).abs() < 3.0 * sd, "count {count}");
            }
        }
    }

    #[test]
    fn generated_labels_agree_with_the_oracle() {
        let spec = ClassSkewSpec::balanced(4, 2, 3);
        let truth = spec.ground_truth();
        for site in synth_classification(&spec).unwrap() {
            for (x, &y) in site.features.iter().zip(&site.labels) {
                assert_eq!(truth.label(x), y);
            }
        }
    }

    #[test]
    fn lexicon_perturb_renames_only_names() {
        let spec = ClassSkewSpec {
            class_names: vec!["car".into(), "truck".into(), "van".into()],
            ..ClassSkewSpec::balanced(3, 1, 2)
        };
        let site = synth_classification(&spec).unwrap().remove(0);
        let same = lexicon_perturb(&site, &BTreeMap::new(), &BTreeMap::new());
        assert_eq!(same, site);
        let labels = BTreeMap::from([("truck".to_string(), "lorry".to_string())]);
        let fields = BTreeMap::from([("x0".to_string(), "east".to_string())]);
        let out = lexicon_perturb(&site, &labels, &fields);
        assert_eq!(out.schema.labels.class_names(), ["car", "lorry", "van"]);
        assert_eq!(out.schema.fields, ["east", "x1"]);
        assert_eq!(out.features, site.features);
        assert_eq!(out.labels, site.labels);
    }

    #[test]
    fn noise_extremes_and_rate() {
        let spec = ClassSkewSpec {
            samples_per_site: 10_000,
            ..ClassSkewSpec::balanced(3, 1, 4)
        };
        let site = synth_classification(&spec).unwrap().remove(0);
        let none = inject_noise(&site, 0.0, 1).unwrap();
        assert_eq!(none.labels, site.labels);
        assert!(none.noise_marks.unwrap().iter().all(|&m| !m));
        let all = inject_noise(&site, 1.0, 1).unwrap();
        assert!(all.noise_marks.unwrap().iter().all(|&m| m));
        assert!(all.labels.iter().zip(&site.labels).all(|(a, b)| a != b));

        let some = inject_noise(&site, 0.2, 1).unwrap();
        let marked = some.noise_marks.unwrap().iter().filter(|&&m| m).count() as f64;
        let sd = (10_000.0f64 * 0.2 * 0.8).sqrt();
        assert!((marked - 2000.0).abs() < 3.0 * sd, "marked {marked}");

        assert!(inject_noise(&site, 1.5, 1).is_err());
    }

    #[test]
    fn regression_noise_stays_in_label_range() {
        let (sites, _) = synth_curve(&CurveSpec::reference()).unwrap();
        let noisy = inject_noise(&sites[0], 1.0, 3).unwrap();
        let LabelSpec::Range { lo, hi } = noisy.schema.labels else { unreachable!() };
        assert!(noisy.labels.iter().all(|&y| y >= lo && y <= hi));
    }

    #[test]
    fn bad_specs_are_rejected() {
        let mut c = CurveSpec::reference();
        c.site_windows[0] = (-1.0, 0.5);
        assert!(synth_curve(&c).is_err());
        let mut k = ClassSkewSpec::balanced(3, 1, 0);
        k.priors[0] = vec![0.5, 0.5, 0.5];
        assert!(synth_classification(&k).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn generators_are_deterministic_per_seed(seed in any::<u64>()) {
            let spec = CurveSpec { seed, samples_per_site: 20, ..CurveSpec::reference() };
            let (a, _) = synth_curve(&spec).unwrap();
            let (b, _) = synth_curve(&spec).unwrap();
            prop_assert_eq!(&a, &b);
            let other = CurveSpec { seed: seed.wrapping_add(1), ..spec };
            let (c, _) = synth_curve(&other).unwrap();
            prop_assert_ne!(&a, &c);

            let k = ClassSkewSpec { seed, samples_per_site: 20, ..ClassSkewSpec::balanced(3, 2, 0) };
            prop_assert_eq!(synth_classification(&k).unwrap(), synth_classification(&k).unwrap());
        }
    }
}
