//! Differentially private baseline generator.
//!
//! Each attribute gets an independent marginal histogram whose counts are
//! perturbed with Laplace noise of scale `1 / eps_a`, where `eps_a` is the
//! attribute's share of the total budget. A count query has sensitivity 1
//! when neighbouring datasets differ by adding or removing one record, so
//! each histogram is `eps_a`-DP and the whole release is `epsilon`-DP by
//! sequential composition. Rows are then sampled attribute by attribute from
//! the normalized noisy histograms.
//!
//! Randomness comes from ChaCha20 with one stream per attribute ordinal, so
//! the output depends only on the seed, never on thread scheduling.
//!
//! Numeric bins span the observed `[min, max]` of the real column and the
//! category list is taken from the real column. Both leak the domain; that is
//! a known limitation of this baseline.

use std::collections::BTreeSet;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::{min_max, Column, Dataset, DatasetError};

pub const DEFAULT_NUM_BINS: usize = 32;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("row count must be at least 1")]
    ZeroRows,
    #[error("number of bins must be at least 1")]
    ZeroBins,
    #[error("cannot synthesize from an empty dataset")]
    EmptyInput,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Total budget split evenly across attributes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub attributes: usize,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, attributes: usize) -> Result<Self, SynthError> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(SynthError::InvalidEpsilon(epsilon));
        }
        if attributes == 0 {
            return Err(SynthError::EmptyInput);
        }
        Ok(PrivacyBudget {
            epsilon,
            attributes,
        })
    }

    /// Per-attribute shares. All but the last are `epsilon / m`; the last
    /// takes the remainder so that summing the shares in order gives back
    /// `epsilon` exactly.
    pub fn allocations(&self) -> Vec<f64> {
        let share = self.epsilon / self.attributes as f64;
        let mut out = vec![share; self.attributes - 1];
        let spent: f64 = out.iter().sum();
        out.push(self.epsilon - spent);
        out
    }
}

/// One draw from Laplace(0, scale) by inverting the CDF at a uniform point
/// strictly inside (-1/2, 1/2).
pub fn laplace_sample(rng: &mut impl RngCore, scale: f64) -> f64 {
    let u = open_unit(rng) - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Uniform in (0, 1): 53 random bits, centred in their cell.
fn open_unit(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Uniform in [0, 1).
fn unit(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bins {
    Categories(Vec<String>),
    /// Strictly increasing edges; bin i is `[edges[i], edges[i + 1])`, the
    /// last bin closed on the right.
    Edges(Vec<f64>),
    /// Constant numeric column.
    Point(f64),
}

impl Bins {
    pub fn len(&self) -> usize {
        match self {
            Bins::Categories(c) => c.len(),
            Bins::Edges(e) => e.len() - 1,
            Bins::Point(_) => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoisyHistogram {
    pub attribute: String,
    pub bins: Bins,
    /// Noisy counts after clamping at zero.
    pub noisy_counts: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl NoisyHistogram {
    /// Draws one bin index by inverse transform over the cumulative
    /// probabilities.
    fn draw_bin(&self, rng: &mut impl RngCore) -> usize {
        let u = unit(rng);
        let mut acc = 0.0;
        for (i, p) in self.probabilities.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // rounding left the total just under 1; take the last non-empty bin
        self.probabilities
            .iter()
            .rposition(|&p| p > 0.0)
            .unwrap_or(0)
    }

    fn sample_column(&self, n: usize, rng: &mut impl RngCore) -> Column {
        match &self.bins {
            Bins::Categories(cats) => {
                Column::categorical((0..n).map(|_| cats[self.draw_bin(rng)].as_str()))
            }
            Bins::Edges(edges) => Column::Numerical(
                (0..n)
                    .map(|_| {
                        let b = self.draw_bin(rng);
                        let (lo, hi) = (edges[b], edges[b + 1]);
                        (lo + unit(rng) * (hi - lo)).clamp(lo, hi)
                    })
                    .collect(),
            ),
            Bins::Point(v) => Column::Numerical(vec![*v; n]),
        }
    }
}

/// Clamps noisy counts at zero and normalizes. An all-zero histogram becomes
/// uniform.
pub fn clamp_and_normalize(counts: &[f64], noise: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let clamped: Vec<f64> = counts
        .iter()
        .zip(noise)
        .map(|(c, z)| (c + z).max(0.0))
        .collect();
    let total: f64 = clamped.iter().sum();
    let probabilities = if total > 0.0 && total.is_finite() {
        clamped.iter().map(|c| c / total).collect()
    } else {
        vec![1.0 / clamped.len() as f64; clamped.len()]
    };
    (clamped, probabilities)
}

fn equal_width_edges(lo: f64, hi: f64, num_bins: usize) -> Vec<f64> {
    let width = hi - lo;
    let mut edges: Vec<f64> = (0..num_bins)
        .map(|i| (lo + width * i as f64 / num_bins as f64).min(hi))
        .collect();
    edges.push(hi);
    // very narrow ranges can collapse neighbouring edges
    edges.dedup();
    edges
}

fn bin_of(edges: &[f64], v: f64) -> usize {
    let last = edges.len() - 2;
    edges
        .partition_point(|&e| e <= v)
        .saturating_sub(1)
        .min(last)
}

/// Exact (noise-free) counts and bins of one column.
fn exact_histogram(column: &Column, num_bins: usize) -> (Bins, Vec<f64>) {
    match column {
        Column::Categorical(values) => {
            let cats: Vec<String> = values
                .iter()
                .map(|v| v.to_string())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let mut counts = vec![0.0; cats.len()];
            for v in values {
                let i = cats
                    .binary_search_by(|c| c.as_str().cmp(v))
                    .expect("collected above");
                counts[i] += 1.0;
            }
            (Bins::Categories(cats), counts)
        }
        Column::Numerical(values) => {
            let (lo, hi) = min_max(values).expect("non-empty column");
            if lo == hi {
                return (Bins::Point(lo), vec![values.len() as f64]);
            }
            let edges = equal_width_edges(lo, hi, num_bins);
            let mut counts = vec![0.0; edges.len() - 1];
            for &v in values {
                counts[bin_of(&edges, v)] += 1.0;
            }
            (Bins::Edges(edges), counts)
        }
    }
}

fn attribute_rng(seed: u64, ordinal: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(ordinal as u64);
    rng
}

/// Laplace-noised marginal of one attribute. `eps_a` may be `f64::INFINITY`
/// for a noise-free histogram.
pub fn build_noisy_histogram(
    ds: &Dataset,
    attr: &str,
    eps_a: f64,
    num_bins: usize,
    rng: &mut impl RngCore,
) -> Result<NoisyHistogram, SynthError> {
    if eps_a.is_nan() || eps_a <= 0.0 {
        return Err(SynthError::InvalidEpsilon(eps_a));
    }
    if num_bins == 0 {
        return Err(SynthError::ZeroBins);
    }
    let column = ds.column(attr)?;
    if column.is_empty() {
        return Err(SynthError::EmptyInput);
    }
    let (bins, counts) = exact_histogram(column, num_bins);
    let scale = 1.0 / eps_a;
    let noise: Vec<f64> = counts.iter().map(|_| laplace_sample(rng, scale)).collect();
    let (noisy_counts, probabilities) = clamp_and_normalize(&counts, &noise);
    Ok(NoisyHistogram {
        attribute: attr.to_string(),
        bins,
        noisy_counts,
        probabilities,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SynthParams {
    pub epsilon: f64,
    pub n: usize,
    pub num_bins: usize,
    pub seed: u64,
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(SynthError::InvalidEpsilon(self.epsilon));
        }
        if self.n == 0 {
            return Err(SynthError::ZeroRows);
        }
        if self.num_bins == 0 {
            return Err(SynthError::ZeroBins);
        }
        Ok(())
    }
}

/// Histograms and the sampled dataset.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub dataset: Dataset,
    pub histograms: Vec<NoisyHistogram>,
    pub budget: PrivacyBudget,
}

pub fn synthesize(
    ds: &Dataset,
    epsilon: f64,
    n: usize,
    num_bins: usize,
    seed: u64,
) -> Result<Dataset, SynthError> {
    synthesize_with_histograms(
        ds,
        &SynthParams {
            epsilon,
            n,
            num_bins,
            seed,
        },
    )
    .map(|s| s.dataset)
}

pub fn synthesize_with_histograms(
    ds: &Dataset,
    params: &SynthParams,
) -> Result<Synthesis, SynthError> {
    params.validate()?;
    if ds.row_count() == 0 {
        return Err(SynthError::EmptyInput);
    }
    let budget = PrivacyBudget::new(params.epsilon, ds.schema().len())?;
    let shares = budget.allocations();

    let parts: Vec<(NoisyHistogram, Column)> = ds
        .schema()
        .attributes()
        .par_iter()
        .zip(shares.par_iter())
        .enumerate()
        .map(|(ordinal, (attr, &eps_a))| {
            let mut rng = attribute_rng(params.seed, ordinal);
            let hist = build_noisy_histogram(ds, &attr.name, eps_a, params.num_bins, &mut rng)?;
            let column = hist.sample_column(params.n, &mut rng);
            Ok((hist, column))
        })
        .collect::<Result<_, SynthError>>()?;

    let (histograms, columns): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    let name = format!("{}_dp_eps{}_seed{}", ds.name(), params.epsilon, params.seed);
    let dataset = Dataset::new(name, ds.schema().clone(), columns)?;
    Ok(Synthesis {
        dataset,
        histograms,
        budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Attribute, AttributeRole, Schema};
    use crate::utility::boundary_adherence;
    use proptest::prelude::*;

    fn two_category(n_a: usize, n_b: usize) -> Dataset {
        let schema = Schema::new(vec![Attribute::categorical("c", AttributeRole::Qi)]).unwrap();
        let values = std::iter::repeat_n("A", n_a).chain(std::iter::repeat_n("B", n_b));
        Dataset::new("two", schema, vec![Column::categorical(values)]).unwrap()
    }

    fn mixed(n: usize) -> Dataset {
        let schema = Schema::new(vec![
            Attribute::numerical("age", AttributeRole::Qi),
            Attribute::categorical("home", AttributeRole::Qi),
            Attribute::numerical("flat", AttributeRole::NonQi),
        ])
        .unwrap();
        let ages = (0..n).map(|i| 18.0 + (i * 7 % 60) as f64).collect();
        let homes = (0..n).map(|i| ["RENT", "OWN", "MORTGAGE"][i % 3]);
        Dataset::new(
            "mixed",
            schema,
            vec![
                Column::Numerical(ages),
                Column::categorical(homes),
                Column::Numerical(vec![2.5; n]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn clamp_example() {
        let (counts, probs) = clamp_and_normalize(&[10.0, 0.0], &[0.0, -5.0]);
        assert_eq!(counts, vec![10.0, 0.0]);
        assert_eq!(probs, vec![1.0, 0.0]);
        let (_, probs) = clamp_and_normalize(&[1.0, 2.0], &[-5.0, -5.0]);
        assert_eq!(probs, vec![0.5, 0.5]);
    }

    #[test]
    fn infinite_budget_gives_empirical_frequencies() {
        let ds = two_category(7, 3);
        let mut rng = attribute_rng(1, 0);
        let h = build_noisy_histogram(&ds, "c", f64::INFINITY, 8, &mut rng).unwrap();
        assert_eq!(h.probabilities, vec![0.7, 0.3]);
        assert_eq!(h.bins, Bins::Categories(vec!["A".into(), "B".into()]));
    }

    #[test]
    fn single_category_is_certain() {
        let ds = two_category(5, 0);
        for eps in [0.01, 1.0, 100.0] {
            let mut rng = attribute_rng(9, 0);
            let h = build_noisy_histogram(&ds, "c", eps, 8, &mut rng).unwrap();
            assert_eq!(h.probabilities, vec![1.0]);
        }
    }

    #[test]
    fn numeric_bins_cover_range() {
        let ds = mixed(100);
        let mut rng = attribute_rng(3, 0);
        let h = build_noisy_histogram(&ds, "age", f64::INFINITY, 4, &mut rng).unwrap();
        match &h.bins {
            Bins::Edges(e) => {
                assert_eq!(e.len(), 5);
                assert_eq!(e[0], 18.0);
                assert_eq!(e[4], 77.0);
                assert!(e.windows(2).all(|w| w[0] < w[1]));
            }
            other => panic!("unexpected bins {other:?}"),
        }
        assert_eq!(h.noisy_counts.iter().sum::<f64>(), 100.0);
        let h = build_noisy_histogram(&ds, "flat", 1.0, 4, &mut rng).unwrap();
        assert_eq!(h.bins, Bins::Point(2.5));
        assert_eq!(h.probabilities, vec![1.0]);
    }

    #[test]
    fn bin_assignment_edges() {
        let edges = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(bin_of(&edges, 0.0), 0);
        assert_eq!(bin_of(&edges, 0.999), 0);
        assert_eq!(bin_of(&edges, 1.0), 1);
        assert_eq!(bin_of(&edges, 3.0), 2);
    }

    #[test]
    fn histogram_errors() {
        let ds = mixed(10);
        let mut rng = attribute_rng(0, 0);
        assert!(matches!(
            build_noisy_histogram(&ds, "nope", 1.0, 4, &mut rng),
            Err(SynthError::Dataset(_))
        ));
        assert!(matches!(
            build_noisy_histogram(&ds, "age", 0.0, 4, &mut rng),
            Err(SynthError::InvalidEpsilon(_))
        ));
        assert!(matches!(
            build_noisy_histogram(&ds, "age", 1.0, 0, &mut rng),
            Err(SynthError::ZeroBins)
        ));
    }

    #[test]
    fn synthesize_contract() {
        let ds = mixed(200);
        let out = synthesize(&ds, 1.0, 321, 16, 5).unwrap();
        assert_eq!(out.row_count(), 321);
        assert_eq!(out.schema(), ds.schema());
        assert!(matches!(
            synthesize(&ds, 1.0, 0, 16, 5),
            Err(SynthError::ZeroRows)
        ));
        assert!(matches!(
            synthesize(&ds, -1.0, 5, 16, 5),
            Err(SynthError::InvalidEpsilon(_))
        ));
        let empty = ds.select_rows(&[]).unwrap();
        assert!(matches!(
            synthesize(&empty, 1.0, 5, 16, 5),
            Err(SynthError::EmptyInput)
        ));
    }

    #[test]
    fn same_seed_same_bytes() {
        let ds = mixed(300);
        let bytes = |seed| {
            let mut buf = Vec::new();
            synthesize(&ds, 0.5, 500, 32, seed)
                .unwrap()
                .write_csv(&mut buf)
                .unwrap();
            buf
        };
        assert_eq!(bytes(11), bytes(11));
        assert_ne!(bytes(11), bytes(12));
    }

    #[test]
    fn thread_count_does_not_matter() {
        let ds = mixed(300);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| synthesize(&ds, 0.2, 400, 8, 77).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn tiny_epsilon_output_is_valid() {
        let ds = mixed(300);
        let s = synthesize_with_histograms(
            &ds,
            &SynthParams {
                epsilon: 0.01,
                n: 1000,
                num_bins: 32,
                seed: 2,
            },
        )
        .unwrap();
        for h in &s.histograms {
            assert!(h.probabilities.iter().all(|&p| p >= 0.0));
            assert!((h.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(h.probabilities.len(), h.bins.len());
        }
        let real = ds.numeric_column("age").unwrap();
        let synth = s.dataset.numeric_column("age").unwrap();
        assert_eq!(boundary_adherence(real, synth).unwrap(), 1.0);
    }

    #[test]
    fn laplace_moments() {
        // E[X] = 0, E|X| = b, Var = 2 b^2
        let mut rng = attribute_rng(42, 0);
        let b = 3.0;
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| laplace_sample(&mut rng, b)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let mean_abs = draws.iter().map(|x| x.abs()).sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((mean_abs - b).abs() < 0.05, "mean abs {mean_abs}");
        assert!((var - 2.0 * b * b).abs() < 0.5, "var {var}");
    }

    #[test]
    fn laplace_cdf_matches_closed_form() {
        // Kolmogorov-Smirnov distance against F(x) = 1/2 + sgn(x)/2 (1 - e^{-|x|/b})
        let mut rng = attribute_rng(7, 3);
        let b = 1.5;
        let n = 50_000;
        let mut draws: Vec<f64> = (0..n).map(|_| laplace_sample(&mut rng, b)).collect();
        draws.sort_by(f64::total_cmp);
        let cdf = |x: f64| 0.5 + 0.5 * x.signum() * (1.0 - (-x.abs() / b).exp());
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n as f64)
                    .abs()
                    .max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        // 1.63 / sqrt(n) is the 1% critical value
        assert!(ks < 1.63 / (n as f64).sqrt(), "ks {ks}");
    }

    proptest! {
        #[test]
        fn budget_shares_sum_exactly(eps in 1e-4f64..1e3, m in 1usize..40) {
            let b = PrivacyBudget::new(eps, m).unwrap();
            let shares = b.allocations();
            prop_assert_eq!(shares.len(), m);
            prop_assert!(shares.iter().all(|&s| s > 0.0));
            prop_assert_eq!(shares.iter().sum::<f64>(), eps);
        }

        #[test]
        fn probabilities_form_a_distribution(eps in prop_oneof![Just(0.01), 0.01f64..10.0], seed in any::<u64>()) {
            let ds = mixed(60);
            for (ordinal, attr) in ["age", "home", "flat"].iter().enumerate() {
                let mut rng = attribute_rng(seed, ordinal);
                let h = build_noisy_histogram(&ds, attr, eps, 8, &mut rng).unwrap();
                prop_assert!(h.probabilities.iter().all(|&p| p >= 0.0));
                prop_assert!((h.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert_eq!(h.probabilities.len(), h.bins.len());
            }
        }

        #[test]
        fn numeric_samples_stay_in_range(eps in 0.01f64..10.0, seed in any::<u64>()) {
            let ds = mixed(80);
            let out = synthesize(&ds, eps, 200, 7, seed).unwrap();
            let real = ds.numeric_column("age").unwrap();
            prop_assert_eq!(boundary_adherence(real, out.numeric_column("age").unwrap()).unwrap(), 1.0);
            prop_assert_eq!(boundary_adherence(ds.numeric_column("flat").unwrap(), out.numeric_column("flat").unwrap()).unwrap(), 1.0);
        }
    }
}
