//! Integrated-gradients attribution with trapezoidal path quadrature,
//! completeness diagnostics and on-disk precomputation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{sha256_hex, write_len, ByteReader};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::netblocks::{model_fingerprint, Model};
use crate::nn::{log_softmax_with_temperature, softmax_with_temperature, Mode};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_STEPS: usize = 64;
pub const IG_MAGIC: &[u8; 5] = b"DFIG1";
/// Path points evaluated per forward/backward pass.
const POINT_CHUNK: usize = 32;
/// Residual denominators below this are reported as degenerate.
pub const DEGENERATE_DELTA: f64 = 1e-9;

/// Which scalar of the model output is attributed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetKind {
    #[default]
    Logit,
    LogProb,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Baseline {
    Zeros,
    Custom(Tensor<f64>),
}

impl Baseline {
    fn materialize(&self, shape: &[usize]) -> Result<Tensor<f64>> {
        match self {
            Baseline::Zeros => Ok(Tensor::zeros(shape.to_vec())),
            Baseline::Custom(t) => {
                t.expect_shape("ig baseline", shape)?;
                Ok(t.clone())
            }
        }
    }

    /// Short description written to manifests.
    pub fn describe(&self) -> String {
        match self {
            Baseline::Zeros => "zeros".into(),
            Baseline::Custom(t) => {
                let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
                format!("custom:{}", sha256_hex(&bytes))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IGConfig {
    pub steps: usize,
    pub baseline: Baseline,
    pub target: usize,
    pub target_kind: TargetKind,
}

impl IGConfig {
    pub fn new(target: usize) -> Self {
        Self {
            steps: DEFAULT_STEPS,
            baseline: Baseline::Zeros,
            target,
            target_kind: TargetKind::Logit,
        }
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }
}

/// A differentiable scalar-per-class function of single inputs.
pub trait Attributable {
    /// Shape of a single input, without the batch axis.
    fn sample_shape(&self) -> Vec<usize>;

    /// Target score for every row of `batch` (leading axis).
    fn scores(&mut self, batch: &Tensor<f64>, target: usize, kind: TargetKind) -> Result<Vec<f64>>;

    /// Gradient of each row's target score with respect to that row.
    fn score_gradients(
        &mut self,
        batch: &Tensor<f64>,
        target: usize,
        kind: TargetKind,
    ) -> Result<Tensor<f64>>;

    /// Identifies the function's parameters, when it has any worth recording.
    fn fingerprint(&self) -> Option<String> {
        None
    }
}

fn target_scores(logits: &Tensor<f64>, target: usize, kind: TargetKind) -> Result<Vec<f64>> {
    let k = logits.dim(1);
    if target >= k {
        return Err(Error::invalid(format!(
            "target class {target} out of range for {k} outputs"
        )));
    }
    let source = match kind {
        TargetKind::Logit => logits.clone(),
        TargetKind::LogProb => log_softmax_with_temperature(logits, 1.0)?,
    };
    Ok((0..logits.dim(0))
        .map(|i| source.outer(i)[target])
        .collect())
}

/// d score / d logits for every row.
fn score_seed<T: Real>(logits: &Tensor<T>, target: usize, kind: TargetKind) -> Result<Tensor<T>> {
    let (n, k) = (logits.dim(0), logits.dim(1));
    if target >= k {
        return Err(Error::invalid(format!(
            "target class {target} out of range for {k} outputs"
        )));
    }
    let mut g = match kind {
        TargetKind::Logit => Tensor::zeros(vec![n, k]),
        TargetKind::LogProb => softmax_with_temperature(logits, 1.0)?.map(|p| -p),
    };
    for i in 0..n {
        g.outer_mut(i)[target] += T::one();
    }
    Ok(g)
}

impl<T: Real> Attributable for Model<T> {
    fn sample_shape(&self) -> Vec<usize> {
        self.input_shape().to_vec()
    }

    fn scores(&mut self, batch: &Tensor<f64>, target: usize, kind: TargetKind) -> Result<Vec<f64>> {
        let logits = self.infer(&batch.cast())?.cast::<f64>();
        target_scores(&logits, target, kind)
    }

    fn score_gradients(
        &mut self,
        batch: &Tensor<f64>,
        target: usize,
        kind: TargetKind,
    ) -> Result<Tensor<f64>> {
        let logits = self.forward(&batch.cast(), Mode::Eval)?;
        let seed = score_seed(&logits, target, kind)?;
        let grad = self.backward(&seed, None);
        self.clear_cache();
        Ok(grad?.input.cast())
    }

    fn fingerprint(&self) -> Option<String> {
        model_fingerprint(&self.cast::<f32>()).ok()
    }
}

/// `scores = W·x + b` with one weight row per class.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearScorer {
    /// `K × sample_shape...`
    pub weight: Tensor<f64>,
    pub bias: Vec<f64>,
}

impl LinearScorer {
    pub fn new(weight: Tensor<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.rank() < 2 || weight.dim(0) != bias.len() {
            return Err(Error::shape("LinearScorer", weight.shape(), &[bias.len()]));
        }
        Ok(Self { weight, bias })
    }

    fn logits(&self, batch: &Tensor<f64>) -> Result<Tensor<f64>> {
        let d = self.weight.len() / self.weight.dim(0);
        if batch.rank() < 1 || batch.len() != batch.dim(0) * d {
            return Err(Error::shape(
                "LinearScorer",
                batch.shape(),
                self.weight.shape(),
            ));
        }
        let (n, k) = (batch.dim(0), self.weight.dim(0));
        Ok(Tensor::from_fn(vec![n, k], |idx| {
            let (i, c) = (idx / k, idx % k);
            self.bias[c]
                + batch
                    .outer(i)
                    .iter()
                    .zip(self.weight.outer(c))
                    .map(|(x, w)| x * w)
                    .sum::<f64>()
        }))
    }
}

impl Attributable for LinearScorer {
    fn sample_shape(&self) -> Vec<usize> {
        self.weight.shape()[1..].to_vec()
    }

    fn scores(&mut self, batch: &Tensor<f64>, target: usize, kind: TargetKind) -> Result<Vec<f64>> {
        target_scores(&self.logits(batch)?, target, kind)
    }

    fn score_gradients(
        &mut self,
        batch: &Tensor<f64>,
        target: usize,
        kind: TargetKind,
    ) -> Result<Tensor<f64>> {
        let logits = self.logits(batch)?;
        let seed = score_seed(&logits, target, kind)?;
        let (n, k) = (logits.dim(0), logits.dim(1));
        let d = self.weight.len() / k;
        let mut g = Tensor::zeros(batch.shape().to_vec());
        for i in 0..n {
            let row = g.outer_mut(i);
            for c in 0..k {
                let s = seed.outer(i)[c];
                if s != 0.0 {
                    for (r, w) in row.iter_mut().zip(&self.weight.data()[c * d..(c + 1) * d]) {
                        *r += s * w;
                    }
                }
            }
        }
        Ok(g)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributionMap {
    /// Signed attribution per input element, `C×H×W`.
    pub raw: Tensor<f64>,
    /// `Σ_c |raw|`, `H×W`.
    pub aggregated: Tensor<f64>,
    pub steps_used: usize,
    pub model_fingerprint: Option<String>,
    pub target_class: usize,
}

/// Trapezoid weights for `steps + 1` equally spaced points on `[0, 1]`.
pub fn trapezoid_weights(steps: usize) -> Vec<f64> {
    let m = steps as f64;
    (0..=steps)
        .map(|k| {
            if k == 0 || k == steps {
                0.5 / m
            } else {
                1.0 / m
            }
        })
        .collect()
}

/// Signed attributions only, without aggregation or metadata.
pub fn integrate_path(
    model: &mut impl Attributable,
    x: &Tensor<f64>,
    config: &IGConfig,
) -> Result<Tensor<f64>> {
    if config.steps == 0 {
        return Err(Error::invalid("integration steps must be at least 1"));
    }
    let shape = model.sample_shape();
    x.expect_shape("integrated_gradients", &shape)?;
    let baseline = config.baseline.materialize(&shape)?;
    let delta = x.sub(&baseline)?;
    let weights = trapezoid_weights(config.steps);
    let mut acc = vec![0.0f64; x.len()];
    if delta.data().iter().all(|&d| d == 0.0) {
        return Ok(Tensor::zeros(shape));
    }
    let mut batch_shape = vec![0];
    batch_shape.extend_from_slice(&shape);
    for start in (0..=config.steps).step_by(POINT_CHUNK) {
        let end = (start + POINT_CHUNK).min(config.steps + 1);
        let mut data = Vec::with_capacity((end - start) * x.len());
        for k in start..end {
            let beta = k as f64 / config.steps as f64;
            data.extend(
                baseline
                    .data()
                    .iter()
                    .zip(delta.data())
                    .map(|(b, d)| b + beta * d),
            );
        }
        batch_shape[0] = end - start;
        let points = Tensor::new(batch_shape.clone(), data)?;
        let grads = model.score_gradients(&points, config.target, config.target_kind)?;
        for (row, k) in (start..end).enumerate() {
            let g = grads.outer(row);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { step: k });
            }
            let w = weights[k];
            for (a, &gv) in acc.iter_mut().zip(g) {
                *a += w * gv;
            }
        }
    }
    let raw = acc.iter().zip(delta.data()).map(|(a, d)| a * d).collect();
    Tensor::new(shape, raw)
}

pub fn integrated_gradients(
    model: &mut impl Attributable,
    x: &Tensor<f64>,
    config: &IGConfig,
) -> Result<AttributionMap> {
    let raw = integrate_path(model, x, config)?;
    Ok(AttributionMap {
        aggregated: aggregate(&raw)?,
        raw,
        steps_used: config.steps,
        model_fingerprint: model.fingerprint(),
        target_class: config.target,
    })
}

/// `Σ_c |raw_c|` over the leading axis of a `C×H×W` map.
pub fn aggregate<T: Real>(raw: &Tensor<T>) -> Result<Tensor<T>> {
    raw.expect_rank("aggregate", 3)?;
    let (c, h, w) = (raw.dim(0), raw.dim(1), raw.dim(2));
    let mut out = Tensor::zeros(vec![h, w]);
    for ch in 0..c {
        for (o, &v) in out.data_mut().iter_mut().zip(raw.outer(ch)) {
            *o += v.abs();
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Completeness {
    /// `|Σ raw − ΔF| / |ΔF|`
    Residual(f64),
    /// `|ΔF|` was below [`DEGENERATE_DELTA`]; the absolute gap is reported.
    Degenerate { delta: f64, gap: f64 },
}

impl Completeness {
    pub fn residual(&self) -> Option<f64> {
        match *self {
            Completeness::Residual(r) => Some(r),
            Completeness::Degenerate { .. } => None,
        }
    }
}

pub fn completeness_check(
    model: &mut impl Attributable,
    x: &Tensor<f64>,
    config: &IGConfig,
) -> Result<Completeness> {
    let raw = integrate_path(model, x, config)?;
    let shape = model.sample_shape();
    let baseline = config.baseline.materialize(&shape)?;
    let pair = Tensor::stack(&[x, &baseline])?;
    let s = model.scores(&pair, config.target, config.target_kind)?;
    let delta = s[0] - s[1];
    let gap = (raw.sum() - delta).abs();
    if delta.abs() <= DEGENERATE_DELTA {
        return Ok(Completeness::Degenerate { delta, gap });
    }
    Ok(Completeness::Residual(gap / delta.abs()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Convergence {
    pub steps: usize,
    pub residual: f64,
    pub residual_doubled: f64,
    /// `residual_doubled / residual`; 0 when both are zero.
    pub ratio: f64,
    pub warn: bool,
}

/// Compares the completeness residual at `config.steps` and twice that.
/// Flags the configuration when doubling fails to halve the residual.
pub fn convergence_check(
    model: &mut impl Attributable,
    x: &Tensor<f64>,
    config: &IGConfig,
) -> Result<Option<Convergence>> {
    let base = completeness_check(model, x, config)?;
    let doubled_cfg = IGConfig {
        steps: config.steps * 2,
        ..config.clone()
    };
    let doubled = completeness_check(model, x, &doubled_cfg)?;
    let (Some(r1), Some(r2)) = (base.residual(), doubled.residual()) else {
        return Ok(None);
    };
    // below this the quadrature is already at rounding level
    const FLOOR: f64 = 1e-10;
    let ratio = if r1 <= FLOOR { 0.0 } else { r2 / r1 };
    let warn = r1 > FLOOR && ratio > 0.5;
    if warn {
        log::warn!(
            "IG residual only fell from {r1:.3e} to {r2:.3e} going from {} to {} steps",
            config.steps,
            config.steps * 2
        );
    }
    Ok(Some(Convergence {
        steps: config.steps,
        residual: r1,
        residual_doubled: r2,
        ratio,
        warn,
    }))
}

/// Provenance of a precomputed map file, stored next to it as
/// `<file>.manifest` in `key = value` lines.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IgManifest {
    pub model_fingerprint: String,
    pub steps: usize,
    pub baseline: String,
    pub target_kind: TargetKind,
    pub dataset_sha256: String,
    pub count: usize,
    /// Indices whose map was zeroed because the model misclassified them.
    pub excluded: Vec<usize>,
}

impl IgManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let kind = match self.target_kind {
            TargetKind::Logit => "logit",
            TargetKind::LogProb => "log_prob",
        };
        let excluded: Vec<String> = self.excluded.iter().map(usize::to_string).collect();
        writeln!(s, "model_fingerprint = {}", self.model_fingerprint).ok();
        writeln!(s, "steps = {}", self.steps).ok();
        writeln!(s, "baseline = {}", self.baseline).ok();
        writeln!(s, "target = true_label").ok();
        writeln!(s, "target_kind = {kind}").ok();
        writeln!(s, "dataset_sha256 = {}", self.dataset_sha256).ok();
        writeln!(s, "count = {}", self.count).ok();
        writeln!(s, "excluded = {}", excluded.join(",")).ok();
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Data(format!("manifest line {}: expected key = value", no + 1))
            })?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut take = |k: &str| {
            kv.remove(k)
                .ok_or_else(|| Error::Data(format!("manifest is missing {k}")))
        };
        let num = |k: &str, v: String| {
            v.parse::<usize>()
                .map_err(|_| Error::Data(format!("manifest {k} is not an integer: {v}")))
        };
        let model_fingerprint = take("model_fingerprint")?;
        let steps = num("steps", take("steps")?)?;
        let baseline = take("baseline")?;
        take("target")?;
        let target_kind = match take("target_kind")?.as_str() {
            "logit" => TargetKind::Logit,
            "log_prob" => TargetKind::LogProb,
            other => return Err(Error::Data(format!("unknown target_kind {other}"))),
        };
        let dataset_sha256 = take("dataset_sha256")?;
        let count = num("count", take("count")?)?;
        let excluded_raw = take("excluded")?;
        let excluded = excluded_raw
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| num("excluded", s.to_string()))
            .collect::<Result<Vec<_>>>()?;
        if let Some(k) = kv.keys().next() {
            return Err(Error::Data(format!("manifest has unknown key {k}")));
        }
        Ok(Self {
            model_fingerprint,
            steps,
            baseline,
            target_kind,
            dataset_sha256,
            count,
            excluded,
        })
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrecomputeOptions {
    pub steps: usize,
    pub baseline: Option<Tensor<f64>>,
    pub target_kind: TargetKind,
    /// Zero the maps of images the model misclassifies.
    pub exclude_misclassified: bool,
}

impl PrecomputeOptions {
    pub fn new(steps: usize) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }
}

/// Aggregated `H×W` maps, one per dataset image, index-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct IgStore {
    pub height: usize,
    pub width: usize,
    pub maps: Vec<f32>,
    pub manifest: IgManifest,
}

impl IgStore {
    pub fn len(&self) -> usize {
        self.manifest.count
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.count == 0
    }

    pub fn map(&self, index: usize) -> Result<&[f32]> {
        let plane = self.height * self.width;
        if index >= self.len() {
            return Err(Error::Data(format!(
                "no attribution map for index {index} (store has {})",
                self.len()
            )));
        }
        Ok(&self.maps[index * plane..(index + 1) * plane])
    }

    pub fn is_excluded(&self, index: usize) -> bool {
        self.manifest.excluded.binary_search(&index).is_ok()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::with_capacity(17 + self.maps.len() * 4);
        buf.extend_from_slice(IG_MAGIC);
        write_len(&mut buf, self.len())?;
        write_len(&mut buf, self.height)?;
        write_len(&mut buf, self.width)?;
        for v in &self.maps {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.encode()?)?;
        fs::write(manifest_path(path), self.manifest.to_text())?;
        Ok(())
    }

    /// Loads a map file and checks it was computed by the expected model on
    /// the expected data.
    pub fn load(
        path: &Path,
        expected_fingerprint: Option<&str>,
        dataset: Option<&Dataset>,
    ) -> Result<Self> {
        let manifest_text = fs::read_to_string(manifest_path(path))
            .map_err(|e| Error::Data(format!("{}: {e}", manifest_path(path).display())))?;
        let manifest = IgManifest::parse(&manifest_text)?;
        let mut r = ByteReader::new(fs::File::open(path)?, "DFIG1 map");
        r.expect_magic(IG_MAGIC)?;
        let count = r.read_len(1 << 28, "map count")?;
        let height = r.read_len(1 << 14, "height")?;
        let width = r.read_len(1 << 14, "width")?;
        let maps = r.read_f32s(count * height * width)?;
        r.expect_eof()?;
        let provenance = |reason: String| Error::Provenance {
            path: path.to_path_buf(),
            reason,
        };
        if manifest.count != count {
            return Err(provenance(format!(
                "manifest lists {} maps, file holds {count}",
                manifest.count
            )));
        }
        if let Some(fp) = expected_fingerprint {
            if manifest.model_fingerprint != fp {
                return Err(provenance(format!(
                    "maps were computed by model {}, expected {fp}",
                    manifest.model_fingerprint
                )));
            }
        }
        if let Some(ds) = dataset {
            let sum = ds.checksum();
            if manifest.dataset_sha256 != sum {
                return Err(provenance(format!(
                    "maps belong to dataset {}, this dataset is {sum}",
                    manifest.dataset_sha256
                )));
            }
            let [_, h, w] = ds.image_shape();
            if (h, w) != (height, width) {
                return Err(provenance(format!(
                    "maps are {height}×{width}, images are {h}×{w}"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            maps,
            manifest,
        })
    }
}

/// Attributes every image of `dataset` to its true label. Work fans out
/// across threads; results are assembled in index order.
pub fn precompute_dataset(
    model: &Model<f32>,
    dataset: &Dataset,
    options: &PrecomputeOptions,
) -> Result<IgStore> {
    let [c, h, w] = dataset.image_shape();
    if model.input_shape() != [c, h, w] {
        return Err(Error::shape(
            "precompute_dataset",
            &model.input_shape(),
            &[c, h, w],
        ));
    }
    let baseline = match &options.baseline {
        Some(t) => Baseline::Custom(t.clone()),
        None => Baseline::Zeros,
    };
    let excluded: Vec<usize> = if options.exclude_misclassified {
        let logits = crate::harness::batched_infer(model, &dataset.images, 256)?;
        (0..dataset.len())
            .filter(|&i| crate::harness::argmax(logits.outer(i)) != dataset.labels[i])
            .collect()
    } else {
        Vec::new()
    };
    let maps: Vec<Vec<f32>> = (0..dataset.len())
        .into_par_iter()
        .map_init(
            || model.cast::<f64>(),
            |m, i| -> Result<Vec<f32>> {
                if excluded.binary_search(&i).is_ok() {
                    return Ok(vec![0.0; h * w]);
                }
                let x = Tensor::new(
                    vec![c, h, w],
                    dataset.image(i).iter().map(|&v| v as f64).collect(),
                )?;
                let cfg = IGConfig {
                    steps: options.steps,
                    baseline: baseline.clone(),
                    target: dataset.labels[i],
                    target_kind: options.target_kind,
                };
                let raw = integrate_path(m, &x, &cfg)?;
                Ok(aggregate(&raw)?.data().iter().map(|&v| v as f32).collect())
            },
        )
        .collect::<Result<_>>()?;
    Ok(IgStore {
        height: h,
        width: w,
        maps: maps.concat(),
        manifest: IgManifest {
            model_fingerprint: model_fingerprint(model)?,
            steps: options.steps,
            baseline: baseline.describe(),
            target_kind: options.target_kind,
            dataset_sha256: dataset.checksum(),
            count: dataset.len(),
            excluded,
        },
    })
}
