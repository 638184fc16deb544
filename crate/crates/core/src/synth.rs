//! Synthetic award corpora with a planted relational signal.
//!
//! Each company gets one topic (Zipf popularity) and one agency (uniform).
//! Its chance of reaching phase II is
//! `sigmoid(b + t[topic] + a[agency] + mixing * m)`, where `m` is the mean
//! propensity `sigmoid(t + a)` of the other companies sharing its topic. None of
//! the effects show up in a company's own tabular features, so only models
//! that see the topic/agency structure can exploit them. The intercept `b` is
//! solved so the expected positive rate hits the target.
//!
//! Names, phases, amounts and agencies are written with the kind of noise the
//! ingest stage is built to absorb.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson, StandardNormal, Zipf};
use serde::{Deserialize, Serialize};

use crate::ingest::RawAwardRecord;
use crate::{math, rng, Error, Result};

const TOPIC_CODES: [&str; 40] = [
    "AF", "A", "N", "CBD", "DHA", "DTRA", "MDA", "SOCOM", "OSD", "NGA", "NIH", "NSF", "DOE", "NASA", "NOAA", "EPA",
    "USDA", "DHS", "DOT", "ED", "HR", "AQ", "BT", "CE", "DM", "EN", "FT", "GS", "IH", "JX", "KR", "LM", "MV", "NP",
    "OQ", "PS", "QT", "RW", "SX", "TY",
];
const AGENCIES: [&str; 8] = ["DOD", "NSF", "DOE", "HHS", "NASA", "USDA", "DHS", "EPA"];
const ADJECTIVES: [&str; 16] = [
    "ADVANCED", "APPLIED", "BLUE", "BRIGHT", "COASTAL", "DYNAMIC", "FIRST", "GLOBAL", "INTEGRATED", "LUNAR", "NOVEL",
    "OPTICAL", "PRECISE", "QUANTUM", "SUMMIT", "VECTOR",
];
const NOUNS: [&str; 16] = [
    "ANALYTICS", "BIOSCIENCES", "CIRCUITS", "DEVICES", "DYNAMICS", "ENERGY", "FUSION", "LABS", "MATERIALS", "OPTICS",
    "PHOTONICS", "RESEARCH", "ROBOTICS", "SENSORS", "SYSTEMS", "TECHNOLOGIES",
];
const SUFFIXES: [&str; 8] = [", Inc.", " Inc", " LLC", ", LLC", " Corp.", " Corporation", " Ltd", " Co."];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_companies: usize,
    pub n_topics: usize,
    pub n_agencies: usize,
    pub first_year: i32,
    pub last_year: i32,
    /// Mean of the Poisson number of extra phase I awards (each company has at least one).
    pub extra_awards_mean: f64,
    pub zipf_exponent: f64,
    pub topic_effect_sd: f64,
    pub agency_effect_sd: f64,
    /// Weight of the same-topic mean propensity.
    pub mixing: f64,
    pub target_positive_rate: f64,
    pub median_amount: f64,
    pub horizon_years: i32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_companies: 2000,
            n_topics: 20,
            n_agencies: 5,
            first_year: 2005,
            last_year: 2023,
            extra_awards_mean: 1.8,
            zipf_exponent: 1.1,
            topic_effect_sd: 1.0,
            agency_effect_sd: 0.5,
            mixing: 0.7,
            target_positive_rate: 0.42,
            median_amount: 120_000.0,
            horizon_years: 5,
            seed: 42,
        }
    }
}

impl SynthConfig {
    /// Same corpus shape with every effect switched off.
    pub fn no_signal(self) -> Self {
        Self {
            topic_effect_sd: 0.0,
            agency_effect_sd: 0.0,
            mixing: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_companies == 0 || self.n_companies > 9999 * ADJECTIVES.len() {
            return fail(format!("n_companies {} out of range", self.n_companies));
        }
        if self.n_topics == 0 || self.n_topics > TOPIC_CODES.len() {
            return fail(format!("n_topics must be in 1..={}", TOPIC_CODES.len()));
        }
        if self.n_agencies == 0 || self.n_agencies > AGENCIES.len() {
            return fail(format!("n_agencies must be in 1..={}", AGENCIES.len()));
        }
        if self.first_year > self.last_year {
            return fail("first_year after last_year".into());
        }
        if !(self.extra_awards_mean > 0.0 && self.zipf_exponent > 0.0 && self.median_amount > 0.0) {
            return fail("award mean, zipf exponent and median amount must be positive".into());
        }
        if !(self.topic_effect_sd >= 0.0 && self.agency_effect_sd >= 0.0 && self.mixing.is_finite()) {
            return fail("effect sizes must be non-negative and finite".into());
        }
        if !(self.target_positive_rate > 0.0 && self.target_positive_rate < 1.0) {
            return fail("target_positive_rate must lie in (0, 1)".into());
        }
        if self.horizon_years < 0 {
            return fail("horizon_years must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthCompany {
    /// Name as entity resolution should recover it.
    pub key: String,
    pub topic: String,
    pub agency: String,
    pub first_p1_year: i32,
    pub propensity: f64,
    pub label: u8,
    pub phase_two_year: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub config: SynthConfig,
    pub intercept: f64,
    pub topic_effects: BTreeMap<String, f64>,
    pub agency_effects: BTreeMap<String, f64>,
    pub positive_rate: f64,
    pub companies: Vec<TruthCompany>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub records: Vec<RawAwardRecord>,
    pub truth: SynthTruth,
}

/// Intercept `b` with `mean(sigmoid(b + x_i)) = target`, by bisection.
pub fn solve_intercept(logits: &[f64], target: f64) -> f64 {
    let rate = |b: f64| logits.iter().map(|x| math::sigmoid(b + x)).sum::<f64>() / logits.len() as f64;
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Generates a corpus. All randomness comes from one stream keyed by the seed.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut r = rng::stream(cfg.seed, 0x5EED);
    let n = cfg.n_companies;

    let topics = &TOPIC_CODES[..cfg.n_topics];
    let agencies = &AGENCIES[..cfg.n_agencies];
    let topic_effects: Vec<f64> = (0..cfg.n_topics).map(|_| cfg.topic_effect_sd * normal(&mut r)).collect();
    let agency_effects: Vec<f64> = (0..cfg.n_agencies).map(|_| cfg.agency_effect_sd * normal(&mut r)).collect();

    let zipf = Zipf::new(cfg.n_topics as f64, cfg.zipf_exponent).map_err(|e| Error::Config(e.to_string()))?;
    let company_topic: Vec<usize> = (0..n).map(|_| zipf.sample(&mut r) as usize - 1).collect();
    let company_agency: Vec<usize> = (0..n).map(|_| r.random_range(0..cfg.n_agencies)).collect();
    let first_years: Vec<i32> = (0..n).map(|_| r.random_range(cfg.first_year..=cfg.last_year)).collect();

    let own: Vec<f64> = (0..n)
        .map(|i| topic_effects[company_topic[i]] + agency_effects[company_agency[i]])
        .collect();
    let mut topic_sum = vec_f64(cfg.n_topics);
    let mut topic_count = alloc::vec![0usize; cfg.n_topics];
    for i in 0..n {
        topic_sum[company_topic[i]] += math::sigmoid(own[i]);
        topic_count[company_topic[i]] += 1;
    }
    let neighbour_mean: Vec<f64> = (0..n)
        .map(|i| {
            let t = company_topic[i];
            let others = topic_count[t] - 1;
            if others == 0 {
                0.0
            } else {
                (topic_sum[t] - math::sigmoid(own[i])) / others as f64
            }
        })
        .collect();
    let logits: Vec<f64> = (0..n).map(|i| own[i] + cfg.mixing * neighbour_mean[i]).collect();
    let intercept = solve_intercept(&logits, cfg.target_positive_rate);

    let extra = Poisson::new(cfg.extra_awards_mean).map_err(|e| Error::Config(e.to_string()))?;
    let amount = LogNormal::new(math::ln(cfg.median_amount), 0.5).map_err(|e| Error::Config(e.to_string()))?;
    let phase_two_amount =
        LogNormal::new(math::ln(cfg.median_amount * 6.0), 0.4).map_err(|e| Error::Config(e.to_string()))?;

    let mut records = Vec::new();
    let mut companies = Vec::with_capacity(n);
    let mut positives = 0usize;
    for i in 0..n {
        let key = base_name(i);
        let topic = topics[company_topic[i]];
        let agency = agencies[company_agency[i]];
        let first = first_years[i];
        let span = (cfg.last_year - first).min(4);
        let awards = 1 + extra.sample(&mut r) as usize;
        for k in 0..awards {
            let year = if k == 0 { first } else { first + r.random_range(0..=span) };
            records.push(RawAwardRecord {
                company: dirty_name(&key, &mut r),
                amount: dirty_amount(amount.sample(&mut r), &mut r),
                year: year.to_string(),
                phase: dirty_phase(false, &mut r).into(),
                agency: dirty_agency(agency, &mut r),
                topic: topic_code(topic, year, &mut r),
            });
        }
        let propensity = math::sigmoid(intercept + logits[i]);
        let success = r.random::<f64>() < propensity;
        let phase_two_year = success.then(|| {
            let last = (first + cfg.horizon_years).min(cfg.last_year);
            r.random_range(first..=last)
        });
        if let Some(year) = phase_two_year {
            positives += 1;
            records.push(RawAwardRecord {
                company: dirty_name(&key, &mut r),
                amount: dirty_amount(phase_two_amount.sample(&mut r), &mut r),
                year: year.to_string(),
                phase: dirty_phase(true, &mut r).into(),
                agency: dirty_agency(agency, &mut r),
                topic: topic_code(topic, year, &mut r),
            });
        }
        companies.push(TruthCompany {
            key,
            topic: topic.into(),
            agency: agency.into(),
            first_p1_year: first,
            propensity,
            label: u8::from(success),
            phase_two_year,
        });
    }

    Ok(SynthCorpus {
        records,
        truth: SynthTruth {
            config: cfg.clone(),
            intercept,
            topic_effects: topics.iter().map(|t| t.to_string()).zip(topic_effects).collect(),
            agency_effects: agencies.iter().map(|a| a.to_string()).zip(agency_effects).collect(),
            positive_rate: positives as f64 / n as f64,
            companies,
        },
    })
}

fn vec_f64(n: usize) -> Vec<f64> {
    alloc::vec![0.0; n]
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

/// Unique resolved name; the trailing number keeps it clear of legal suffixes.
fn base_name(i: usize) -> String {
    let adj = ADJECTIVES[i % ADJECTIVES.len()];
    let noun = NOUNS[(i / ADJECTIVES.len()) % NOUNS.len()];
    format!("{adj} {noun} {i:04}")
}

fn dirty_name(base: &str, r: &mut ChaCha8Rng) -> String {
    let cased = match r.random_range(0..3) {
        0 => base.to_string(),
        1 => base.to_lowercase(),
        _ => base
            .split(' ')
            .map(|w| {
                let mut cs = w.chars();
                match cs.next() {
                    Some(c) => format!("{c}{}", cs.as_str().to_lowercase()),
                    None => String::new(),
                }
            })
            .collect::<Vec<_>>()
            .join(" "),
    };
    let spaced = if r.random_bool(0.3) { cased.replace(' ', "  ") } else { cased };
    let suffix = if r.random_bool(0.6) {
        *SUFFIXES.choose(r).expect("non-empty")
    } else {
        ""
    };
    let pad = if r.random_bool(0.2) { " " } else { "" };
    format!("{pad}{spaced}{suffix}{pad}")
}

fn dirty_amount(v: f64, r: &mut ChaCha8Rng) -> String {
    let whole = libm::round(v) as u64;
    match r.random_range(0..3) {
        0 => whole.to_string(),
        1 => format!("${}", thousands(whole)),
        _ => format!("{}.00", thousands(whole)),
    }
}

fn thousands(v: u64) -> String {
    let digits = v.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn dirty_phase(two: bool, r: &mut ChaCha8Rng) -> &'static str {
    let options: [&str; 4] = if two {
        ["Phase II", "PHASE 2", "phase-ii", "2"]
    } else {
        ["Phase I", "PHASE 1", "phase-i", "1"]
    };
    options.choose(r).expect("non-empty")
}

fn dirty_agency(agency: &str, r: &mut ChaCha8Rng) -> String {
    match r.random_range(0..3) {
        0 => agency.to_string(),
        1 => agency.to_lowercase(),
        _ => format!(" {agency} "),
    }
}

fn topic_code(prefix: &str, year: i32, r: &mut ChaCha8Rng) -> String {
    format!("{prefix}{:02}-{:03}", year.rem_euclid(100), r.random_range(1..1000))
}
