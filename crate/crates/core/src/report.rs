//! Evaluation reports and sampling benchmarks.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{make_schedule, sample_arrays, Denoiser, SampleOptions};
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::layout::Layout;
use crate::mask::ConditionMask;
use crate::metrics::{alignment, feature_matrix, fid, max_iou, overlap, MetricReport};
use crate::nets::checkpoint::file_digest;

/// Printed at the top of every report.
pub const FID_NOTICE: &str = "FID uses a feature extractor trained by this tool; values are comparable only \
     between reports that share the same extractor checkpoint. Alignment is the unwarped six-axis \
     nearest-line distance.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generated: FileRef,
    pub reference: FileRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_extractor: Option<FileRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

impl FileRef {
    pub fn new(path: &Path) -> Result<Self> {
        Ok(Self { path: path.display().to_string(), sha256: file_digest(path)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub notice: String,
    pub metrics: MetricReport,
    pub provenance: Provenance,
}

/// Computes every metric that the inputs allow: MaxIoU needs equally sized
/// corpora, FID needs a feature extractor.
pub fn evaluate(gen: &[Layout], reference: &[Layout], fe: Option<&FeatureExtractor>) -> Result<MetricReport> {
    let maxiou = (gen.len() == reference.len()).then(|| max_iou(gen, reference)).transpose()?;
    let fid = match fe {
        Some(fe) => {
            let r = feature_matrix(&fe.features(reference)?)?;
            let g = feature_matrix(&fe.features(gen)?)?;
            Some(fid(&r, &g)?)
        }
        None => None,
    };
    Ok(MetricReport { fid, alignment: alignment(gen)?, overlap: overlap(gen)?, maxiou, t_per_sample_ms: None })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub steps: usize,
    pub batch: usize,
    pub reps: usize,
    pub t_per_sample_ms: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Wall-clock time per unconditional sample, median over `reps` batches,
/// for each chain length in `steps`. One untimed warm-up batch precedes
/// the timed runs for each length.
pub fn bench_sampling<G: Denoiser + ?Sized>(
    gen: &G,
    steps: &[usize],
    batch: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if batch == 0 || reps == 0 || steps.is_empty() {
        return Err(Error::Parameter("bench needs a positive batch, reps and at least one T".into()));
    }
    let conds = vec![ConditionMask::unconditional(gen.shape()); batch];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = SampleOptions::default();
    let schedules = steps.iter().map(|&t| make_schedule(t)).collect::<Result<Vec<_>>>()?;
    for s in &schedules {
        sample_arrays(gen, s, &conds, opts, &mut rng)?;
    }
    // Interleave T within each repetition so background load hits every T alike.
    let mut times = vec![Vec::with_capacity(reps); steps.len()];
    for _ in 0..reps {
        for (s, acc) in schedules.iter().zip(times.iter_mut()) {
            let start = Instant::now();
            sample_arrays(gen, s, &conds, opts, &mut rng)?;
            acc.push(start.elapsed().as_secs_f64() * 1e3 / batch as f64);
        }
    }
    let rows = steps
        .iter()
        .zip(times)
        .map(|(&t, ts)| BenchRow { steps: t, batch, reps, t_per_sample_ms: median(ts) })
        .collect();
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("T,batch,reps,t_per_sample_ms\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{:.6}\n", r.steps, r.batch, r.reps, r.t_per_sample_ms));
    }
    out
}
