//! Dataset model: subject metadata, manifest ingestion, train-set
//! standardization, cross-validation folds, and a synthetic-data generator
//! for desk-scale verification.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{icosphere, read_feature_field, FeatureField};

pub const PRETERM_THRESHOLD_WEEKS: f64 = 37.0;

pub const MANIFEST_HEADER: &str =
    "subject_id,split,ga_birth_weeks,pma_scan_weeks,sex,birthweight_kg,head_circumference_cm,feature_path";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Male,
    Female,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl Split {
    fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            "unassigned" => Some(Split::Unassigned),
            _ => None,
        }
    }

    fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectMeta {
    pub subject_id: String,
    pub ga_birth: Option<f64>,
    pub pma_scan: Option<f64>,
    pub sex: Sex,
    pub birthweight: Option<f64>,
    pub head_circumference: Option<f64>,
    pub split: Split,
}

impl SubjectMeta {
    pub fn is_preterm(&self) -> Option<bool> {
        self.ga_birth.map(|ga| ga < PRETERM_THRESHOLD_WEEKS)
    }

    fn validate(&self, line: usize) -> Result<()> {
        let range_err = |field: &str, value: f64, lo: f64, hi: f64| {
            Err(Error::Parse {
                line,
                message: format!(
                    "{field} = {value} outside ({lo}, {hi}) for subject {}",
                    self.subject_id
                ),
            })
        };
        if self.subject_id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty subject_id".into(),
            });
        }
        for (name, v) in [("ga_birth_weeks", self.ga_birth), ("pma_scan_weeks", self.pma_scan)] {
            if let Some(v) = v {
                if !(20.0 < v && v < 50.0) {
                    return range_err(name, v, 20.0, 50.0);
                }
            }
        }
        if let Some(bw) = self.birthweight {
            if !(0.0 < bw && bw < 10.0) {
                return range_err("birthweight_kg", bw, 0.0, 10.0);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: f64,
    pub std: f64,
}

impl TargetStats {
    pub fn standardize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn unstandardize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Per-channel and per-target mean/std fitted on the train split.
/// Standard deviations use the population divisor N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub channel_names: Vec<String>,
    pub channel_mean: Vec<f64>,
    pub channel_std: Vec<f64>,
    pub targets: BTreeMap<String, TargetStats>,
}

impl StandardizationStats {
    pub fn channel(&self, name: &str) -> Result<(f64, f64)> {
        let ix = self
            .channel_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Schema(format!("unknown channel {name}")))?;
        Ok((self.channel_mean[ix], self.channel_std[ix]))
    }

    pub fn target(&self, name: &str) -> Result<TargetStats> {
        self.targets
            .get(name)
            .copied()
            .ok_or_else(|| Error::Schema(format!("no standardization stats for target {name}")))
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub icosphere_order: u32,
    pub channel_names: Vec<String>,
    pub subjects: Vec<(SubjectMeta, FeatureField)>,
    pub stats: Option<StandardizationStats>,
}

impl Dataset {
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn expected_vertices(&self) -> usize {
        10 * 4usize.pow(self.icosphere_order) + 2
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.subjects
            .iter()
            .enumerate()
            .filter(|(_, (m, _))| m.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn preterm_count(&self) -> usize {
        self.subjects
            .iter()
            .filter(|(m, _)| m.is_preterm() == Some(true))
            .count()
    }
}

fn infer_order(n_vertices: usize) -> Result<u32> {
    for k in 0..=crate::mesh::MAX_ICOSPHERE_ORDER {
        if 10 * 4usize.pow(k) + 2 == n_vertices {
            return Ok(k);
        }
    }
    Err(Error::Schema(format!(
        "{n_vertices} vertices does not match any icosphere order"
    )))
}

fn parse_optional_f64(raw: &str, field: &str, line: usize) -> Result<Option<f64>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse::<f64>().map(Some).map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse {field} value '{raw}'"),
    })
}

/// Load a manifest CSV and every referenced ".sfeat" feature file.
/// Paths are resolved relative to the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::Parse {
            line: 1,
            message: format!("{}: {e}", path.display()),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let expected: Vec<&str> = MANIFEST_HEADER.split(',').collect();
    let actual: Vec<&str> = headers.iter().collect();
    if actual != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("bad manifest header: expected '{MANIFEST_HEADER}'"),
        });
    }

    let mut subjects = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    let mut order: Option<u32> = None;
    let mut channel_names: Option<Vec<String>> = None;

    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // 1-based, after the header
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |ix: usize| record.get(ix).unwrap_or("").trim().to_string();

        let subject_id = field(0);
        let split = Split::parse(&field(1)).ok_or_else(|| Error::Parse {
            line,
            message: format!("unknown split '{}'", field(1)),
        })?;
        let sex = match field(4).as_str() {
            "M" => Sex::Male,
            "F" => Sex::Female,
            "U" => Sex::Unknown,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown sex '{other}' (expected M, F, or U)"),
                })
            }
        };
        let meta = SubjectMeta {
            subject_id: subject_id.clone(),
            ga_birth: parse_optional_f64(&field(2), "ga_birth_weeks", line)?,
            pma_scan: parse_optional_f64(&field(3), "pma_scan_weeks", line)?,
            sex,
            birthweight: parse_optional_f64(&field(5), "birthweight_kg", line)?,
            head_circumference: parse_optional_f64(&field(6), "head_circumference_cm", line)?,
            split,
        };
        meta.validate(line)?;
        if !seen_ids.insert(subject_id.clone()) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate subject_id {subject_id}"),
            });
        }

        let feature_path = base.join(field(7));
        let features = read_feature_field(&feature_path)?;
        let this_order = infer_order(features.n_vertices())
            .map_err(|_| Error::Schema(format!(
                "subject {subject_id}: {} vertices does not match any icosphere order",
                features.n_vertices()
            )))?;
        match order {
            None => order = Some(this_order),
            Some(o) if o != this_order => {
                return Err(Error::Schema(format!(
                    "subject {subject_id}: icosphere order {this_order} differs from {o}"
                )))
            }
            _ => {}
        }
        match &channel_names {
            None => channel_names = Some(features.channel_names.clone()),
            Some(names) if *names != features.channel_names => {
                return Err(Error::Schema(format!(
                    "subject {subject_id}: channel ordering differs from the manifest's first row"
                )))
            }
            _ => {}
        }
        subjects.push((meta, features));
    }

    Ok(Dataset {
        icosphere_order: order.unwrap_or(0),
        channel_names: channel_names.unwrap_or_default(),
        subjects,
        stats: None,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write the manifest CSV and one ".sfeat" per subject into `dir`.
pub fn save_manifest(dataset: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join("manifest.csv");
    let mut rows = vec![MANIFEST_HEADER.to_string()];
    for (meta, features) in &dataset.subjects {
        let feat_name = format!("{}.sfeat", meta.subject_id);
        crate::mesh::write_feature_field(features, &dir.join(&feat_name))?;
        let sex = match meta.sex {
            Sex::Male => "M",
            Sex::Female => "F",
            Sex::Unknown => "U",
        };
        rows.push(format!(
            "{},{},{},{},{},{},{},{}",
            meta.subject_id,
            meta.split.as_str(),
            fmt_opt(meta.ga_birth),
            fmt_opt(meta.pma_scan),
            sex,
            fmt_opt(meta.birthweight),
            fmt_opt(meta.head_circumference),
            feat_name
        ));
    }
    std::fs::write(&manifest_path, rows.join("\n") + "\n")
        .map_err(|e| Error::io(&manifest_path, e))
}

/// Fit per-channel and per-target mean/std over the train split only,
/// with the population divisor N.
pub fn fit_standardization(dataset: &Dataset) -> Result<StandardizationStats> {
    let train = dataset.split_indices(Split::Train);
    if train.is_empty() {
        return Err(Error::invalid("train split is empty"));
    }
    let n_channels = dataset.channel_names.len();
    let mut sums = vec![0.0f64; n_channels];
    let mut count = 0usize;
    for &i in &train {
        let f = &dataset.subjects[i].1;
        for c in 0..n_channels {
            for v in 0..f.n_vertices() {
                sums[c] += f.values[[c, v]];
            }
        }
        count += f.n_vertices();
    }
    let means: Vec<f64> = sums.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0f64; n_channels];
    for &i in &train {
        let f = &dataset.subjects[i].1;
        for c in 0..n_channels {
            for v in 0..f.n_vertices() {
                let d = f.values[[c, v]] - means[c];
                sq[c] += d * d;
            }
        }
    }
    let stds: Vec<f64> = sq.iter().map(|s| (s / count as f64).sqrt()).collect();
    for (c, &s) in stds.iter().enumerate() {
        if s < 1e-12 {
            return Err(Error::Schema(format!(
                "degenerate channel '{}': standard deviation {s}",
                dataset.channel_names[c]
            )));
        }
    }

    let mut targets = BTreeMap::new();
    let target_values = |get: &dyn Fn(&SubjectMeta) -> Option<f64>| -> Vec<f64> {
        train
            .iter()
            .filter_map(|&i| get(&dataset.subjects[i].0))
            .collect()
    };
    let mut add_target = |name: &str, values: Vec<f64>| {
        if values.is_empty() {
            return;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        targets.insert(
            name.to_string(),
            TargetStats {
                mean,
                std: var.sqrt(),
            },
        );
    };
    add_target("ga_birth", target_values(&|m| m.ga_birth));
    add_target("pma_scan", target_values(&|m| m.pma_scan));
    add_target("birthweight", target_values(&|m| m.birthweight));

    Ok(StandardizationStats {
        channel_names: dataset.channel_names.clone(),
        channel_mean: means,
        channel_std: stds,
        targets,
    })
}

/// x -> (x - mean) / std per channel. Channels are matched by name.
pub fn apply_standardization(field: &FeatureField, stats: &StandardizationStats) -> Result<FeatureField> {
    let mut values = field.values.clone();
    for (c, name) in field.channel_names.iter().enumerate() {
        let (mean, std) = stats.channel(name)?;
        for v in 0..field.n_vertices() {
            values[[c, v]] = (values[[c, v]] - mean) / std;
        }
    }
    FeatureField::new(field.channel_names.clone(), values)
}

/// Inverse of `apply_standardization`.
pub fn invert_standardization(field: &FeatureField, stats: &StandardizationStats) -> Result<FeatureField> {
    let mut values = field.values.clone();
    for (c, name) in field.channel_names.iter().enumerate() {
        let (mean, std) = stats.channel(name)?;
        for v in 0..field.n_vertices() {
            values[[c, v]] = values[[c, v]] * std + mean;
        }
    }
    FeatureField::new(field.channel_names.clone(), values)
}

/// One fold's split assignment, aligned with `dataset.subjects` order.
pub type FoldAssignment = Vec<Split>;

/// Deterministic k-fold layout: subjects are shuffled by seed and cut into
/// k shards differing in size by at most 1. Fold i tests on shard i,
/// validates on shard (i+1) mod k, and trains on the rest.
pub fn make_cv_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<FoldAssignment>> {
    let n = dataset.n_subjects();
    if k < 2 {
        return Err(Error::invalid("k must be >= 2"));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds subject count {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates, fixed order for cross-run determinism.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let base = n / k;
    let extra = n % k;
    let mut shards: Vec<Vec<usize>> = Vec::with_capacity(k);
    let mut cursor = 0;
    for s in 0..k {
        let size = base + usize::from(s < extra);
        shards.push(order[cursor..cursor + size].to_vec());
        cursor += size;
    }
    let mut folds = Vec::with_capacity(k);
    for i in 0..k {
        let mut assignment = vec![Split::Train; n];
        for &ix in &shards[i] {
            assignment[ix] = Split::Test;
        }
        for &ix in &shards[(i + 1) % k] {
            assignment[ix] = Split::Val;
        }
        folds.push(assignment);
    }
    Ok(folds)
}

/// Apply a fold assignment, returning a dataset with rewritten splits.
pub fn with_splits(dataset: &Dataset, assignment: &[Split]) -> Dataset {
    let mut out = dataset.clone();
    for (i, (meta, _)) in out.subjects.iter_mut().enumerate() {
        meta.split = assignment[i];
    }
    out.stats = None;
    out
}

/// Preterm subjects can have two scans; scan-age regression keeps the
/// early scan and birth-age regression keeps the term-equivalent one.
/// Scans of one subject are linked by the id prefix before '_'.
pub fn exclude_duplicate_scans(metas: &[SubjectMeta], keep_earliest: bool) -> Vec<bool> {
    let base_id = |id: &str| id.split('_').next().unwrap_or(id).to_string();
    let mut keep = vec![true; metas.len()];
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, m) in metas.iter().enumerate() {
        groups.entry(base_id(&m.subject_id)).or_default().push(i);
    }
    for indices in groups.values() {
        if indices.len() < 2 {
            continue;
        }
        let chosen = indices
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let pa = metas[a].pma_scan.unwrap_or(f64::INFINITY);
                let pb = metas[b].pma_scan.unwrap_or(f64::INFINITY);
                let (pa, pb) = if keep_earliest { (pa, pb) } else { (-pa, -pb) };
                pa.partial_cmp(&pb).unwrap()
            })
            .unwrap();
        for &i in indices {
            keep[i] = i == chosen;
        }
    }
    keep
}

/// Parameters of the synthetic generator. The default shape follows the
/// real cohort: 530 subjects of which 111 are preterm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_subjects: usize,
    pub order: u32,
    pub seed: u64,
    /// Gaussian noise added to the regression target, in weeks.
    pub noise_sigma: f64,
    pub preterm_fraction: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl SyntheticSpec {
    pub fn new(n_subjects: usize, order: u32, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_subjects,
            order,
            seed,
            noise_sigma: 0.5,
            preterm_fraction: 111.0 / 530.0,
            train_fraction: 0.8,
            val_fraction: 0.1,
        }
    }
}

/// What the generator actually planted, for verification.
#[derive(Debug, Clone)]
pub struct SyntheticTruth {
    pub latent_ages: Vec<f64>,
    pub signal_channel: String,
    /// myelin vertex-mean = intercept + slope * latent age, exactly.
    pub slope: f64,
    pub intercept: f64,
}

pub const SYNTHETIC_CHANNELS: [&str; 4] = ["sulc", "curv", "thickness", "myelin"];

const MYELIN_SLOPE: f64 = 0.1;

/// A smooth scalar field on the sphere: a small bank of low-frequency
/// harmonics with the given coefficients.
fn smooth_field(v: [f64; 3], coeffs: &[f64; 6]) -> f64 {
    let (x, y, z) = (v[0], v[1], v[2]);
    coeffs[0] * (2.0 * x).sin()
        + coeffs[1] * (2.0 * y).cos()
        + coeffs[2] * (3.0 * z).sin()
        + coeffs[3] * x * y
        + coeffs[4] * (x + 2.0 * z).cos()
        + coeffs[5] * y * z
}

/// Generate a synthetic dataset on icosphere(order). The "myelin" channel
/// carries a smooth pattern whose vertex-mean is exactly linear in a latent
/// age drawn from a bimodal preterm/term distribution; the other channels
/// are smooth distractors. pma_scan = latent + noise, ga_birth < pma_scan.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, SyntheticTruth)> {
    if spec.n_subjects < 1 {
        return Err(Error::invalid("n_subjects must be >= 1"));
    }
    let mesh = icosphere(spec.order)?;
    let n_vertices = mesh.n_vertices();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal: Normal<f64> = Normal::new(0.0, 1.0).unwrap();

    let n = spec.n_subjects;
    let n_train = ((n as f64) * spec.train_fraction).round() as usize;
    let n_val = ((n as f64) * spec.val_fraction).round() as usize;

    // Fixed base pattern per channel.
    let base_coeffs: [[f64; 6]; 4] = [
        [0.8, -0.5, 0.3, 0.2, -0.4, 0.1],
        [-0.3, 0.6, -0.2, 0.5, 0.1, -0.6],
        [0.2, 0.1, 0.7, -0.3, 0.4, 0.2],
        [0.4, -0.2, 0.5, 0.1, -0.3, 0.3],
    ];
    let base_level = [0.0, 0.0, 1.5, 1.4];

    let mut subjects = Vec::with_capacity(n);
    let mut latent_ages = Vec::with_capacity(n);
    let mut intercept = 0.0;

    for s in 0..n {
        let preterm = rng.gen_range(0.0..1.0) < spec.preterm_fraction;
        let ga_birth = if preterm {
            (32.0 + 2.5 * normal.sample(&mut rng)).clamp(24.0, 36.5)
        } else {
            (40.0 + 1.2 * normal.sample(&mut rng)).clamp(37.5, 43.0)
        };
        // Scanned around term-equivalent age; the latent maturation age
        // drives the planted myelin signal.
        let latent = (40.5 + 1.5 * normal.sample(&mut rng)).clamp(36.0, 46.0);
        let latent = latent.max(ga_birth + 0.5);
        let pma_scan = (latent + spec.noise_sigma * normal.sample(&mut rng))
            .clamp(ga_birth + 0.1, 49.9);
        let birthweight = (0.25 * ga_birth - 6.5 + 0.3 * normal.sample(&mut rng)).clamp(0.4, 6.0);
        let head_circumference = (0.9 * pma_scan - 2.0 + 0.8 * normal.sample(&mut rng)).max(20.0);
        let sex = if rng.gen_range(0.0..1.0) < 0.5 {
            Sex::Male
        } else {
            Sex::Female
        };

        let mut values = Array2::zeros((4, n_vertices));
        for c in 0..4 {
            // Per-subject smooth perturbation with its vertex-mean removed,
            // so pooling sees only the planted linear signal.
            let coeffs: [f64; 6] = std::array::from_fn(|_| 0.15 * normal.sample(&mut rng));
            let mut col = vec![0.0f64; n_vertices];
            for (v, &p) in mesh.vertices.iter().enumerate() {
                col[v] = smooth_field(p, &base_coeffs[c]) + smooth_field(p, &coeffs);
            }
            let noise_mean: f64 = {
                let mut acc = 0.0;
                for (v, &p) in mesh.vertices.iter().enumerate() {
                    acc += col[v] - smooth_field(p, &base_coeffs[c]);
                }
                acc / n_vertices as f64
            };
            let age_term = if c == 3 {
                MYELIN_SLOPE * (latent - 40.0)
            } else {
                0.0
            };
            for v in 0..n_vertices {
                values[[c, v]] = base_level[c] + col[v] - noise_mean + age_term;
            }
        }
        if s == 0 {
            // The base pattern's vertex-mean is the same for every subject.
            let mut acc = 0.0;
            for &p in &mesh.vertices {
                acc += smooth_field(p, &base_coeffs[3]);
            }
            intercept = base_level[3] + acc / n_vertices as f64 - MYELIN_SLOPE * 40.0;
        }

        let split = if s < n_train {
            Split::Train
        } else if s < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        let meta = SubjectMeta {
            subject_id: format!("synth-{s:04}"),
            ga_birth: Some(ga_birth),
            pma_scan: Some(pma_scan),
            sex,
            birthweight: Some(birthweight),
            head_circumference: Some(head_circumference),
            split,
        };
        let field = FeatureField::new(
            SYNTHETIC_CHANNELS.iter().map(|s| s.to_string()).collect(),
            values,
        )?;
        subjects.push((meta, field));
        latent_ages.push(latent);
    }

    let dataset = Dataset {
        icosphere_order: spec.order,
        channel_names: SYNTHETIC_CHANNELS.iter().map(|s| s.to_string()).collect(),
        subjects,
        stats: None,
    };
    Ok((
        dataset,
        SyntheticTruth {
            latent_ages,
            signal_channel: "myelin".into(),
            slope: MYELIN_SLOPE,
            intercept,
        },
    ))
}
