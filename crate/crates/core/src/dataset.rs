//! Burst records: manifest parsing, label binarization, train/val/test
//! splitting (uniform over bursts or by camera site) and class balancing.
//!
//! File IO lives in the companion crate; this module works on text and
//! in-memory records so the logic stays pure and testable.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{CoreError, Result};
use crate::rng::{rng_for, Stage};

/// Which partition a burst belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One three-image burst as listed in a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct BurstRecord {
    pub burst_id: String,
    pub site_id: String,
    pub raw_label: String,
    pub frame_paths: [String; 3],
    /// 1 = animal, 0 = empty; set by [`binarize`].
    pub binary_label: Option<u8>,
    pub split: Option<Split>,
}

impl BurstRecord {
    pub fn label(&self) -> Result<u8> {
        self.binary_label
            .ok_or_else(|| CoreError::Contract(format!("burst {} not binarized", self.burst_id)))
    }
}

/// Split mode and fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Bursts sampled uniformly; every site can appear in every split.
    Uniform,
    /// Sites partitioned first; a burst inherits its site's split, so splits
    /// see mutually exclusive sites.
    SiteBased,
}

impl SplitMode {
    pub fn name(self) -> &'static str {
        match self {
            SplitMode::Uniform => "uniform",
            SplitMode::SiteBased => "site_based",
        }
    }

    pub fn parse(s: &str) -> Option<SplitMode> {
        match s {
            "uniform" => Some(SplitMode::Uniform),
            "site_based" => Some(SplitMode::SiteBased),
            _ => None,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fractions = [self.train_fraction, self.val_fraction, self.test_fraction];
        if fractions.iter().any(|f| *f <= 0.0) {
            return Err(CoreError::Config("split fractions must be positive".into()));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CoreError::Config(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

pub const MANIFEST_HEADER: &str = "burst_id,site_id,label,frame1,frame2,frame3";

/// Parse manifest text (simple comma-separated, header required, optional
/// trailing `split` column). Rows with fewer than 3 frame paths and rows
/// labeled unclassifiable are dropped.
pub fn parse_manifest(text: &str) -> Result<Vec<BurstRecord>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or(CoreError::Parse { line: 1, message: "empty manifest".to_string() })?;
    let header = header.trim_end();
    if header != MANIFEST_HEADER && header != "burst_id,site_id,label,frame1,frame2,frame3,split" {
        return Err(CoreError::Parse {
            line: 1,
            message: format!("unexpected header `{header}`"),
        });
    }
    let has_split = header.ends_with(",split");
    let mut records = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let expected = if has_split { 7 } else { 6 };
        if fields.len() != expected {
            return Err(CoreError::Parse {
                line: line_no,
                message: format!("expected {expected} fields, got {}", fields.len()),
            });
        }
        if fields.iter().take(3).any(|f| f.is_empty()) {
            return Err(CoreError::Parse {
                line: line_no,
                message: "empty id or label field".to_string(),
            });
        }
        // Bursts with fewer than three images are discarded.
        if fields[3..6].iter().any(|f| f.is_empty()) {
            continue;
        }
        let raw_label = fields[2].to_string();
        if raw_label.eq_ignore_ascii_case("unclassifiable") {
            continue;
        }
        let split = if has_split && !fields[6].is_empty() {
            Some(Split::parse(fields[6]).ok_or(CoreError::Parse {
                line: line_no,
                message: format!("unknown split `{}`", fields[6]),
            })?)
        } else {
            None
        };
        records.push(BurstRecord {
            burst_id: fields[0].to_string(),
            site_id: fields[1].to_string(),
            raw_label,
            frame_paths: [fields[3].to_string(), fields[4].to_string(), fields[5].to_string()],
            binary_label: None,
            split,
        });
    }
    Ok(records)
}

/// Serialize records back to manifest text (with the split column).
pub fn manifest_to_text(records: &[BurstRecord]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push_str(",split\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.burst_id,
            r.site_id,
            r.raw_label,
            r.frame_paths[0],
            r.frame_paths[1],
            r.frame_paths[2],
            r.split.map(|s| s.name()).unwrap_or("")
        ));
    }
    out
}

/// Parse species-map text: lines of `raw_label,binary_label`.
pub fn parse_species_map(text: &str) -> Result<Vec<(String, u8)>> {
    let mut map = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (label, value) = line.split_once(',').ok_or(CoreError::Parse {
            line: idx + 1,
            message: "expected `raw_label,binary_label`".to_string(),
        })?;
        let value: u8 = value.trim().parse().map_err(|_| CoreError::Parse {
            line: idx + 1,
            message: format!("binary label must be 0 or 1, got `{}`", value.trim()),
        })?;
        if value > 1 {
            return Err(CoreError::Parse {
                line: idx + 1,
                message: format!("binary label must be 0 or 1, got {value}"),
            });
        }
        map.push((label.trim().to_string(), value));
    }
    Ok(map)
}

/// Assign binary labels from the species map; any species maps to 1, empty
/// to 0. Unknown raw labels are an error naming the label.
pub fn binarize(records: &mut [BurstRecord], species_map: &[(String, u8)]) -> Result<()> {
    for r in records.iter_mut() {
        let value = species_map
            .iter()
            .find(|(label, _)| label == &r.raw_label)
            .map(|(_, v)| *v)
            .ok_or_else(|| {
                CoreError::Mapping(format!(
                    "raw label `{}` (burst {}) not in species map",
                    r.raw_label, r.burst_id
                ))
            })?;
        r.binary_label = Some(value);
    }
    Ok(())
}

/// Assign splits. Uniform mode shuffles bursts and cuts at floor boundaries
/// (val and test get their floors, train the remainder). Site-based mode
/// shuffles distinct sites, cuts the site list the same way, and every burst
/// inherits its site's split.
pub fn split(records: &mut [BurstRecord], spec: &SplitSpec) -> Result<()> {
    spec.validate()?;
    let mode_idx = match spec.mode {
        SplitMode::Uniform => 0u64,
        SplitMode::SiteBased => 1u64,
    };
    let mut rng = rng_for(spec.seed, Stage::Split, mode_idx);
    match spec.mode {
        SplitMode::Uniform => {
            let n = records.len();
            let n_val = (n as f64 * spec.val_fraction).floor() as usize;
            let n_test = (n as f64 * spec.test_fraction).floor() as usize;
            let n_train = n - n_val - n_test;
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            for (pos, &idx) in order.iter().enumerate() {
                records[idx].split = Some(if pos < n_train {
                    Split::Train
                } else if pos < n_train + n_val {
                    Split::Val
                } else {
                    Split::Test
                });
            }
        }
        SplitMode::SiteBased => {
            // Distinct sites in first-appearance order.
            let mut sites: Vec<&str> = Vec::new();
            for r in records.iter() {
                if !sites.contains(&r.site_id.as_str()) {
                    sites.push(&r.site_id);
                }
            }
            if sites.len() < 3 {
                return Err(CoreError::Config(format!(
                    "site-based split needs >= 3 distinct sites, got {}",
                    sites.len()
                )));
            }
            let s = sites.len();
            let s_val = (s as f64 * spec.val_fraction).floor() as usize;
            let s_test = (s as f64 * spec.test_fraction).floor() as usize;
            let s_train = s - s_val - s_test;
            let mut order: Vec<usize> = (0..s).collect();
            order.shuffle(&mut rng);
            let mut assignment: Vec<(String, Split)> = Vec::with_capacity(s);
            for (pos, &idx) in order.iter().enumerate() {
                let split = if pos < s_train {
                    Split::Train
                } else if pos < s_train + s_val {
                    Split::Val
                } else {
                    Split::Test
                };
                assignment.push((sites[idx].to_string(), split));
            }
            for r in records.iter_mut() {
                let split = assignment
                    .iter()
                    .find(|(site, _)| site == &r.site_id)
                    .map(|(_, sp)| *sp)
                    .expect("every record's site was collected");
                r.split = Some(split);
            }
        }
    }
    Ok(())
}

/// Balance one split's class counts. The training split oversamples the
/// minority class (duplicating records by reference, with replacement); val
/// and test downsample the majority class by random removal.
pub fn balance_split(records: &mut Vec<BurstRecord>, which: Split, seed: u64) -> Result<()> {
    let mode_idx = match which {
        Split::Train => 0u64,
        Split::Val => 1,
        Split::Test => 2,
    };
    let mut rng = rng_for(seed, Stage::Balance, mode_idx);
    let members: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.split == Some(which))
        .map(|(i, _)| i)
        .collect();
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for &i in &members {
        match records[i].label()? {
            1 => pos.push(i),
            _ => neg.push(i),
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(CoreError::Balance(format!(
            "{} split has {} animal and {} empty bursts; both classes required",
            which.name(),
            pos.len(),
            neg.len()
        )));
    }
    if pos.len() == neg.len() {
        return Ok(());
    }
    let (majority, minority) = if pos.len() > neg.len() { (pos, neg) } else { (neg, pos) };
    match which {
        Split::Train => {
            // Oversample the minority with replacement.
            let deficit = majority.len() - minority.len();
            for _ in 0..deficit {
                let pick = minority[rng.gen_range(0..minority.len())];
                let dup = records[pick].clone();
                records.push(dup);
            }
        }
        Split::Val | Split::Test => {
            // Randomly remove majority members down to the minority count.
            let mut keep = majority.clone();
            keep.shuffle(&mut rng);
            keep.truncate(minority.len());
            let mut remove: Vec<usize> =
                majority.into_iter().filter(|i| !keep.contains(i)).collect();
            remove.sort_unstable();
            for &i in remove.iter().rev() {
                records.remove(i);
            }
        }
    }
    Ok(())
}

/// Balance all three splits (train, then val, then test).
pub fn balance(records: &mut Vec<BurstRecord>, seed: u64) -> Result<()> {
    for which in [Split::Train, Split::Val, Split::Test] {
        balance_split(records, which, seed)?;
    }
    Ok(())
}

/// Count (animal, empty) in one split.
pub fn class_counts(records: &[BurstRecord], which: Split) -> (usize, usize) {
    let mut pos = 0;
    let mut neg = 0;
    for r in records {
        if r.split == Some(which) {
            match r.binary_label {
                Some(1) => pos += 1,
                Some(_) => neg += 1,
                None => {}
            }
        }
    }
    (pos, neg)
}
