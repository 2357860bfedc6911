//! Dataset ingestion: IDX image corpora (with binarization), attribute CSV
//! tables, JSONL text corpora, stratified splitting, and a bundled synthetic
//! digit corpus derived from an embedded 8×8 handwritten-digits fixture.
//!
//! Every loader is deterministic; the provenance block carried by a
//! [`Dataset`] is enough to reconstruct it bit-for-bit.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::core::{Instance, LabelSpace, Payload};
use crate::querysets::{text_to_stemset, QuerySet};
use crate::{Error, Result};

/// Where a dataset came from and how to rebuild it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub source: String,
    pub threshold: Option<f64>,
    pub vocab_hash: Option<String>,
    pub split_seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub instances: Vec<(Instance, usize)>,
    pub labelspace: LabelSpace,
    /// payload kind tag: "bits", "bitvector", or "stemset"
    pub kind: &'static str,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

// ---------------------------------------------------------------------
// IDX images

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::data(format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let slice = bytes
        .get(at..at + 4)
        .ok_or_else(|| Error::data("truncated IDX header"))?;
    Ok(u32::from_be_bytes(slice.try_into().unwrap()))
}

/// Parses an IDX image file (magic 0x00000803): (height, width, pixel rows).
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<Vec<u8>>)> {
    if be_u32(bytes, 0)? != IDX_IMAGES_MAGIC {
        return Err(Error::data(format!(
            "bad image magic {:#010x}, expected {IDX_IMAGES_MAGIC:#010x}",
            be_u32(bytes, 0)?
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let height = be_u32(bytes, 8)? as usize;
    let width = be_u32(bytes, 12)? as usize;
    let need = 16 + count * height * width;
    if bytes.len() < need {
        return Err(Error::data(format!(
            "truncated IDX image file: need {need} bytes, have {}",
            bytes.len()
        )));
    }
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let at = 16 + i * height * width;
        images.push(bytes[at..at + height * width].to_vec());
    }
    Ok((height, width, images))
}

/// Parses an IDX label file (magic 0x00000801).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    if be_u32(bytes, 0)? != IDX_LABELS_MAGIC {
        return Err(Error::data(format!(
            "bad label magic {:#010x}, expected {IDX_LABELS_MAGIC:#010x}",
            be_u32(bytes, 0)?
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    if bytes.len() < 8 + count {
        return Err(Error::data("truncated IDX label file"));
    }
    Ok(bytes[8..8 + count].to_vec())
}

/// Loads an IDX image/label pair and binarizes pixels: value 1 iff
/// p ≥ round(255·τ), τ ∈ (0, 1). Files may be gzip-compressed.
pub fn load_idx_images(images_path: &Path, labels_path: &Path, tau: f64) -> Result<Dataset> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid("binarization threshold must be in (0, 1)"));
    }
    let (height, width, images) = parse_idx_images(&read_maybe_gzip(images_path)?)?;
    let labels = parse_idx_labels(&read_maybe_gzip(labels_path)?)?;
    if images.len() != labels.len() {
        return Err(Error::data(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    if images.is_empty() {
        return Err(Error::data("empty IDX corpus"));
    }
    let cut = (255.0 * tau).round() as u8;
    let mut distinct: Vec<u8> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let labelspace = LabelSpace::new(distinct.iter().map(|l| l.to_string()))?;
    let stem = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    let instances = images
        .into_iter()
        .zip(&labels)
        .enumerate()
        .map(|(i, (pixels, label))| {
            let bits = pixels.iter().map(|&p| u8::from(p >= cut)).collect();
            let y = distinct.binary_search(label).unwrap();
            (
                Instance::new(format!("{stem}-{i}"), Payload::Bits { height, width, bits }),
                y,
            )
        })
        .collect();
    Ok(Dataset {
        instances,
        labelspace,
        kind: "bits",
        provenance: Provenance {
            source: images_path.display().to_string(),
            threshold: Some(tau),
            ..Default::default()
        },
    })
}

/// Writes grayscale images in IDX format (values 0/255 for binary data so a
/// τ = 0.5 reload reproduces the bits exactly).
pub fn write_idx_images(path: &Path, height: usize, width: usize, images: &[Vec<u8>]) -> Result<()> {
    let mut out = Vec::with_capacity(16 + images.len() * height * width);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(height as u32).to_be_bytes());
    out.extend_from_slice(&(width as u32).to_be_bytes());
    for img in images {
        if img.len() != height * width {
            return Err(Error::invalid("image size mismatch"));
        }
        out.extend_from_slice(img);
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------
// Attribute CSV

/// Loads a CSV with a header of attribute names plus a final label column.
/// Attribute cells must be 0 or 1.
pub fn load_attribute_csv(path: &Path) -> Result<Dataset> {
    Ok(load_attribute_csv_with_names(path)?.0)
}

/// As [`load_attribute_csv`], also returning the attribute column names in
/// column order (the canonical attribute query id order).
pub fn load_attribute_csv_with_names(path: &Path) -> Result<(Dataset, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::data(format!("csv: {e}")))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::data(format!("csv header: {e}")))?
        .clone();
    if headers.len() < 2 {
        return Err(Error::data("need at least one attribute column plus a label"));
    }
    let n_attrs = headers.len() - 1;
    let mut rows: Vec<(Vec<u8>, String)> = Vec::new();
    for (lineno, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::data(format!("csv row {}: {e}", lineno + 2)))?;
        let mut bits = Vec::with_capacity(n_attrs);
        for cell in record.iter().take(n_attrs) {
            match cell.trim() {
                "0" => bits.push(0),
                "1" => bits.push(1),
                other => {
                    return Err(Error::data(format!(
                        "row {}: non-binary attribute cell {other:?}",
                        lineno + 2
                    )));
                }
            }
        }
        rows.push((bits, record[n_attrs].trim().to_string()));
    }
    if rows.is_empty() {
        return Err(Error::data("empty attribute table"));
    }
    let mut names: Vec<String> = rows.iter().map(|(_, l)| l.clone()).collect();
    names.sort();
    names.dedup();
    let labelspace = LabelSpace::new(names.clone())?;
    let instances = rows
        .into_iter()
        .enumerate()
        .map(|(i, (bits, label))| {
            let y = names.binary_search(&label).unwrap();
            (Instance::new(format!("row-{i}"), Payload::BitVector(bits)), y)
        })
        .collect();
    let attribute_names: Vec<String> =
        headers.iter().take(n_attrs).map(str::to_string).collect();
    Ok((
        Dataset {
            instances,
            labelspace,
            kind: "bitvector",
            provenance: Provenance { source: path.display().to_string(), ..Default::default() },
        },
        attribute_names,
    ))
}

/// Majority-vote denoising: every attribute is set to its class-majority
/// value; an exact 50/50 split resolves to 0.
pub fn majority_vote_denoise(dataset: &Dataset) -> Result<Dataset> {
    let n_labels = dataset.labelspace.count();
    let n_attrs = match &dataset.instances.first() {
        Some((Instance { payload: Payload::BitVector(bits), .. }, _)) => bits.len(),
        _ => return Err(Error::invalid("majority voting applies to attribute datasets")),
    };
    let mut ones = vec![vec![0usize; n_attrs]; n_labels];
    let mut totals = vec![0usize; n_labels];
    for (inst, y) in &dataset.instances {
        let Payload::BitVector(bits) = &inst.payload else {
            return Err(Error::invalid("mixed payload kinds"));
        };
        totals[*y] += 1;
        for (j, &b) in bits.iter().enumerate() {
            ones[*y][j] += b as usize;
        }
    }
    let majority: Vec<Vec<u8>> = (0..n_labels)
        .map(|y| {
            (0..n_attrs)
                .map(|j| u8::from(2 * ones[y][j] > totals[y]))
                .collect()
        })
        .collect();
    let instances = dataset
        .instances
        .iter()
        .map(|(inst, y)| {
            (
                Instance::new(inst.id.clone(), Payload::BitVector(majority[*y].clone())),
                *y,
            )
        })
        .collect();
    Ok(Dataset {
        instances,
        labelspace: dataset.labelspace.clone(),
        kind: dataset.kind,
        provenance: dataset.provenance.clone(),
    })
}

// ---------------------------------------------------------------------
// Text corpora

/// Old-category → new-category mapping; `None` drops the record.
#[derive(Debug, Clone, Default)]
pub struct CategoryMap {
    map: BTreeMap<String, Option<String>>,
}

impl CategoryMap {
    /// Parses lines of `old<TAB>new` or `old<TAB>DROP`; blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((old, new)) = line.split_once('\t') else {
                return Err(Error::data(format!(
                    "category map line {}: expected old<TAB>new",
                    no + 1
                )));
            };
            let target = if new == "DROP" { None } else { Some(new.to_string()) };
            map.insert(old.to_string(), target);
        }
        Ok(CategoryMap { map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Maps a raw label; `Err` on labels missing from the map.
    fn apply(&self, label: &str) -> Result<Option<&str>> {
        match self.map.get(label) {
            Some(Some(new)) => Ok(Some(new)),
            Some(None) => Ok(None),
            None => Err(Error::data(format!("unknown label {label:?} (not in category map)"))),
        }
    }
}

/// Loads a JSONL corpus: one record per line with `text` and `label` string
/// fields. When a category map is given it is applied to every label
/// (dropping DROP-ed records); labels absent from the map are an error.
/// Returns the dataset plus the raw text of every kept record (for
/// vocabulary building).
pub fn load_text_jsonl(
    path: &Path,
    category_map: Option<&CategoryMap>,
) -> Result<(Dataset, Vec<String>)> {
    #[derive(serde::Deserialize)]
    struct Record {
        text: String,
        label: String,
    }
    let content = std::fs::read_to_string(path)?;
    let mut rows: Vec<(String, String)> = Vec::new();
    for (no, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line)
            .map_err(|e| Error::data(format!("line {}: {e}", no + 1)))?;
        let label = match category_map {
            Some(map) => match map.apply(&rec.label)? {
                Some(new) => new.to_string(),
                None => continue,
            },
            None => rec.label,
        };
        rows.push((rec.text, label));
    }
    if rows.is_empty() {
        return Err(Error::data("empty text corpus"));
    }
    let mut names: Vec<String> = rows.iter().map(|(_, l)| l.clone()).collect();
    names.sort();
    names.dedup();
    let labelspace = LabelSpace::new(names.clone())?;
    let mut texts = Vec::with_capacity(rows.len());
    let instances = rows
        .into_iter()
        .enumerate()
        .map(|(i, (text, label))| {
            let y = names.binary_search(&label).unwrap();
            let inst = Instance::new(format!("doc-{i}"), text_to_stemset(&text));
            texts.push(text);
            (inst, y)
        })
        .collect();
    Ok((
        Dataset {
            instances,
            labelspace,
            kind: "stemset",
            provenance: Provenance { source: path.display().to_string(), ..Default::default() },
        },
        texts,
    ))
}

/// Mean number of vocabulary words present per document (presence, not
/// counts) — the corpus statistic reported by the text loader.
pub fn mean_present_words(dataset: &Dataset, qset: &QuerySet) -> Result<f64> {
    let mut total = 0usize;
    for (inst, _) in &dataset.instances {
        total += qset
            .slot_vector(inst)?
            .iter()
            .filter(|&&v| v == 1)
            .count();
    }
    Ok(total as f64 / dataset.len() as f64)
}

/// FNV-1a hash of the vocabulary, recorded in provenance.
pub fn vocab_hash(vocab: &[String]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for word in vocab {
        for b in word.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    format!("{h:016x}")
}

// ---------------------------------------------------------------------
// Splitting

/// Deterministic stratified split: per class, a seeded shuffle, then
/// round(n_c · fraction) goes to train (clamped so both sides stay
/// nonempty). Errors if any class has fewer than 2 instances.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid("train fraction must be in (0, 1)"));
    }
    let n_labels = dataset.labelspace.count();
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); n_labels];
    for (i, (_, y)) in dataset.instances.iter().enumerate() {
        per_class[*y].push(i);
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (y, mut idx) in per_class.into_iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::invalid(format!(
                "class {y} has {} instance(s); need at least 2 to split",
                idx.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(y as u64));
        // Fisher-Yates
        for i in (1..idx.len()).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        let n_train = ((idx.len() as f64 * train_fraction).round() as usize)
            .clamp(1, idx.len() - 1);
        train_idx.extend_from_slice(&idx[..n_train]);
        test_idx.extend_from_slice(&idx[n_train..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |indices: &[usize]| Dataset {
        instances: indices.iter().map(|&i| dataset.instances[i].clone()).collect(),
        labelspace: dataset.labelspace.clone(),
        kind: dataset.kind,
        provenance: Provenance {
            split_seed: Some(seed),
            ..dataset.provenance.clone()
        },
    };
    Ok((pick(&train_idx), pick(&test_idx)))
}

// ---------------------------------------------------------------------
// Synthetic digit corpus
//
// The embedded fixture is the classic 8×8 handwritten-digits corpus (1797
// images, 10 classes, pixel values 0..16). Each class contributes a bank of
// soft stroke templates (random mild affine placements of base images,
// upsampled to 28×28); an instance samples one template and draws every
// pixel independently from its Bernoulli parameter. The corpus is therefore
// an exact per-class Bernoulli mixture at 28×28 scale with realistic digit
// shapes, which makes desk-scale classification behave like binarized-MNIST
// while staying fully self-contained and seed-reproducible.

static DIGITS_IMAGES: &[u8] = include_bytes!("../assets/digits-8x8-images.idx");
static DIGITS_LABELS: &[u8] = include_bytes!("../assets/digits-8x8-labels.idx");

/// Templates per class in the synthetic generator.
pub const SYNTH_COMPONENTS: usize = 8;
/// Background/foreground noise floor: Bernoulli parameters live in
/// [NOISE, 1 − NOISE].
pub const SYNTH_NOISE: f64 = 0.12;
const SYNTH_SIZE: usize = 28;
const TEMPLATE_SEED: u64 = 12;

pub struct DigitTemplates {
    /// per class, per component: 784 Bernoulli parameters
    banks: Vec<Vec<Vec<f64>>>,
}

fn bilinear_8x8(img: &[u8], sx: f64, sy: f64) -> f64 {
    let x0 = sx.floor() as isize;
    let y0 = sy.floor() as isize;
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let at = |yy: isize, xx: isize| -> f64 {
        if (0..8).contains(&yy) && (0..8).contains(&xx) {
            img[(yy * 8 + xx) as usize] as f64
        } else {
            0.0
        }
    };
    at(y0, x0) * (1.0 - fx) * (1.0 - fy)
        + at(y0, x0 + 1) * fx * (1.0 - fy)
        + at(y0 + 1, x0) * (1.0 - fx) * fy
        + at(y0 + 1, x0 + 1) * fx * fy
}

impl DigitTemplates {
    /// Builds the fixed template banks from the embedded fixture.
    pub fn build() -> Result<Self> {
        let (h, w, images) = parse_idx_images(DIGITS_IMAGES)?;
        let labels = parse_idx_labels(DIGITS_LABELS)?;
        debug_assert_eq!((h, w), (8, 8));
        let mut rng = ChaCha8Rng::seed_from_u64(TEMPLATE_SEED);
        let mut banks = Vec::with_capacity(10);
        for class in 0..10u8 {
            let sources: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == class)
                .map(|(i, _)| i)
                .collect();
            let mut bank = Vec::with_capacity(SYNTH_COMPONENTS);
            for t in 0..SYNTH_COMPONENTS {
                // spread base images evenly through the class
                let pick = sources[t * (sources.len() - 1) / (SYNTH_COMPONENTS - 1).max(1)];
                let ang = rng.random_range(-0.2..0.2);
                let sc = rng.random_range(0.85..1.05);
                let tx = rng.random_range(-0.6..0.6);
                let ty = rng.random_range(-0.6..0.6);
                bank.push(template(&images[pick], ang, sc, tx, ty));
            }
            banks.push(bank);
        }
        Ok(DigitTemplates { banks })
    }

    pub fn bernoulli_params(&self, class: usize, component: usize) -> &[f64] {
        &self.banks[class][component]
    }

    /// Samples `n` labelled binary images.
    pub fn sample(&self, n: usize, seed: u64, id_prefix: &str) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut instances = Vec::with_capacity(n);
        for i in 0..n {
            let y = rng.random_range(0..10usize);
            let m = rng.random_range(0..SYNTH_COMPONENTS);
            let params = &self.banks[y][m];
            let bits: Vec<u8> = params
                .iter()
                .map(|&p| u8::from(rng.random_range(0.0..1.0) < p))
                .collect();
            instances.push((
                Instance::new(
                    format!("{id_prefix}-{i}"),
                    Payload::Bits { height: SYNTH_SIZE, width: SYNTH_SIZE, bits },
                ),
                y,
            ));
        }
        Dataset {
            instances,
            labelspace: LabelSpace::new((0..10).map(|d| d.to_string())).unwrap(),
            kind: "bits",
            provenance: Provenance {
                source: format!("builtin:digits-8x8 seed={seed} n={n}"),
                split_seed: Some(seed),
                ..Default::default()
            },
        }
    }
}

fn template(img: &[u8], ang: f64, sc: f64, tx: f64, ty: f64) -> Vec<f64> {
    let (ca, sa) = (ang.cos(), ang.sin());
    let mut out = Vec::with_capacity(SYNTH_SIZE * SYNTH_SIZE);
    for r in 0..SYNTH_SIZE {
        for c in 0..SYNTH_SIZE {
            let yc = (r as f64 - 13.5) / 3.5;
            let xc = (c as f64 - 13.5) / 3.5;
            let sx = (ca * xc + sa * yc) / sc + 3.5 + tx;
            let sy = (-sa * xc + ca * yc) / sc + 3.5 + ty;
            let v = bilinear_8x8(img, sx, sy);
            let t = ((v - 3.0) / 9.0).clamp(0.0, 1.0);
            out.push(SYNTH_NOISE + (1.0 - 2.0 * SYNTH_NOISE) * t);
        }
    }
    out
}

/// Generates a train/test pair from the bundled digit fixture. Train and
/// test are sampled with distinct derived seeds, so they are disjoint draws
/// from the same distribution.
pub fn synthetic_digit_corpus(n_train: usize, n_test: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::invalid("corpus sizes must be positive"));
    }
    let templates = DigitTemplates::build()?;
    let train = templates.sample(n_train, seed.wrapping_mul(2).wrapping_add(1), "synth-train");
    let test = templates.sample(n_test, seed.wrapping_mul(2).wrapping_add(2), "synth-test");
    Ok((train, test))
}
