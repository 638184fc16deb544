//! Phase II progression targets and the chronological cohort split.
//!
//! A company's cohort is fixed by the year of its first phase I award. Its
//! label is 1 when any phase II award falls within the horizon, counted in
//! whole years and inclusive at the far end.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ingest::{CleanAward, CompanyKey, Phase};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HorizonConfig {
    pub horizon_years: i32,
    /// Cohorts with first award year below this are training companies.
    pub train_end: i32,
    pub val_end: i32,
    pub test_end: i32,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self {
            horizon_years: 5,
            train_end: 2018,
            val_end: 2020,
            test_end: 2022,
        }
    }
}

impl HorizonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_years < 1 {
            return Err(Error::Config(format!("horizon_years must be >= 1, got {}", self.horizon_years)));
        }
        if !(self.train_end < self.val_end && self.val_end < self.test_end) {
            return Err(Error::Config(format!(
                "split boundaries must increase: {} < {} < {}",
                self.train_end, self.val_end, self.test_end
            )));
        }
        Ok(())
    }

    /// Exclusive upper bound on first-award years belonging to `split`.
    pub fn end_of(&self, split: Split) -> Option<i32> {
        match split {
            Split::Train => Some(self.train_end),
            Split::Val => Some(self.val_end),
            Split::Test => Some(self.test_end),
            Split::Excluded => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    Excluded,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Test, Split::Excluded];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Excluded => "excluded",
        }
    }

    pub fn from_name(name: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|s| s.as_str() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledCompany {
    pub company: CompanyKey,
    pub first_p1_year: i32,
    pub label: u8,
    pub split: Split,
}

/// Label for one company's awards.
pub fn compute_label<'a>(awards: impl IntoIterator<Item = &'a CleanAward>, cfg: &HorizonConfig) -> Result<u8> {
    let mut first_p1: Option<i32> = None;
    let mut p2_years = Vec::new();
    for a in awards {
        match a.phase {
            Phase::I => first_p1 = Some(first_p1.map_or(a.year, |y| y.min(a.year))),
            Phase::II => p2_years.push(a.year),
        }
    }
    let first = first_p1.ok_or(Error::NotAnAwardee)?;
    Ok(label_from(first, &p2_years, cfg))
}

fn label_from(first_p1: i32, p2_years: &[i32], cfg: &HorizonConfig) -> u8 {
    u8::from(p2_years.iter().any(|&y| y <= first_p1 + cfg.horizon_years))
}

pub fn assign_split(first_p1_year: i32, cfg: &HorizonConfig) -> Split {
    if first_p1_year < cfg.train_end {
        Split::Train
    } else if first_p1_year < cfg.val_end {
        Split::Val
    } else if first_p1_year < cfg.test_end {
        Split::Test
    } else {
        Split::Excluded
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub n: usize,
    pub n_pos: usize,
    /// Positive rate; zero for an empty split.
    pub rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub train: SplitCounts,
    pub val: SplitCounts,
    pub test: SplitCounts,
    pub excluded: SplitCounts,
    /// Companies that appear only in phase II rows and therefore get no label.
    pub without_phase_one: usize,
}

impl SplitSummary {
    pub fn get(&self, split: Split) -> &SplitCounts {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
            Split::Excluded => &self.excluded,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut SplitCounts {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
            Split::Excluded => &mut self.excluded,
        }
    }
}

/// One row per company holding at least one phase I award, sorted by key.
pub fn label_table(awards: &[CleanAward], cfg: &HorizonConfig) -> Result<(Vec<LabeledCompany>, SplitSummary)> {
    cfg.validate()?;
    let mut by_company: BTreeMap<&CompanyKey, (Option<i32>, Vec<i32>)> = BTreeMap::new();
    for a in awards {
        let entry = by_company.entry(&a.company).or_default();
        match a.phase {
            Phase::I => entry.0 = Some(entry.0.map_or(a.year, |y| y.min(a.year))),
            Phase::II => entry.1.push(a.year),
        }
    }
    let mut summary = SplitSummary::default();
    let mut rows = Vec::with_capacity(by_company.len());
    for (company, (first, p2)) in by_company {
        let Some(first) = first else {
            summary.without_phase_one += 1;
            continue;
        };
        let label = label_from(first, &p2, cfg);
        let split = assign_split(first, cfg);
        let counts = summary.get_mut(split);
        counts.n += 1;
        counts.n_pos += usize::from(label);
        rows.push(LabeledCompany {
            company: company.clone(),
            first_p1_year: first,
            label,
            split,
        });
    }
    for split in Split::ALL {
        let c = summary.get_mut(split);
        c.rate = if c.n == 0 { 0.0 } else { c.n_pos as f64 / c.n as f64 };
    }
    Ok((rows, summary))
}

/// Row positions (into `company_ids`) and labels of the companies in `split`.
///
/// Companies of the split that are missing from the id table are skipped and
/// counted in the returned `missing`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitRows {
    pub rows: Vec<usize>,
    pub labels: Vec<usize>,
    pub missing: usize,
}

pub fn split_rows<S: AsRef<str>>(table: &[LabeledCompany], company_ids: &[S], split: Split) -> SplitRows {
    let mut out = SplitRows::default();
    for row in table.iter().filter(|r| r.split == split) {
        match company_ids.binary_search_by(|id| id.as_ref().cmp(row.company.as_str())) {
            Ok(pos) => {
                out.rows.push(pos);
                out.labels.push(usize::from(row.label));
            }
            Err(_) => out.missing += 1,
        }
    }
    out
}
