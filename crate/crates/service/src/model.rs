//! Synchronous inference over one loaded checkpoint.

use std::path::Path;
use std::time::Instant;

use diffgan_api::{
    CanvasSpec, CompletionRequest, CompletionResponse, ElementSpec, GenerateRequest, GenerateTask, LayoutSpec,
    ModelMeta, MAX_SAMPLES,
};
use diffgan_core::corpus::ElementRecord;
use diffgan_core::diffusion::{sample_batch, SampleOptions, Schedule};
use diffgan_core::layout::{Canvas, Element, LabelMap, Layout};
use diffgan_core::mask::{locked_mask, make_mask, ConditionMask, Task};
use diffgan_core::nets::checkpoint::{self, file_digest, CheckpointMeta};
use diffgan_core::nets::Networks;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ServiceError;

/// An immutable model snapshot shared by request handlers.
#[derive(Debug)]
pub struct LoadedModel {
    nets: Networks,
    schedule: Schedule,
    labels: LabelMap,
    meta: ModelMeta,
}

impl LoadedModel {
    pub fn load(path: &Path) -> diffgan_core::Result<Self> {
        let (nets, ckpt) = checkpoint::load(path)?;
        Self::from_parts(nets, &ckpt, file_digest(path)?)
    }

    pub fn from_parts(nets: Networks, ckpt: &CheckpointMeta, checkpoint_hash: String) -> diffgan_core::Result<Self> {
        let labels = ckpt.label_map()?;
        let meta = ModelMeta {
            labels: labels.names().to_vec(),
            num_labels: labels.len(),
            max_elements: nets.shape().rows,
            steps: ckpt.schedule.steps(),
            dataset: ckpt.dataset.clone(),
            checkpoint_hash,
        };
        Ok(Self { nets, schedule: ckpt.schedule.clone(), labels, meta })
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    fn check_count(&self, n: usize) -> Result<(), ServiceError> {
        if (1..=MAX_SAMPLES).contains(&n) {
            Ok(())
        } else {
            Err(ServiceError::Invalid(format!("num_samples must be in 1..={MAX_SAMPLES}, got {n}")))
        }
    }

    fn check_capacity(&self, n: usize) -> Result<(), ServiceError> {
        let e = self.meta.max_elements;
        if n > e {
            return Err(ServiceError::TooManyElements(format!("{n} elements, the model holds at most {e}")));
        }
        Ok(())
    }

    fn element(&self, i: usize, label: &str, center: [f64; 2], size: [f64; 2]) -> Result<Element, ServiceError> {
        let rec = ElementRecord { label: label.to_string(), center, size };
        let e = rec
            .to_element(&self.labels)
            .map_err(|m| ServiceError::Invalid(format!("elements[{i}].{m}")))?;
        e.validate(self.labels.len()).map_err(|err| ServiceError::Invalid(format!("elements[{i}]: {err}")))?;
        Ok(e)
    }

    fn run(
        &self,
        conds: Vec<ConditionMask>,
        seed: Option<u64>,
        canvas: Canvas,
    ) -> Result<(Vec<Layout>, f64), ServiceError> {
        let seed = seed.unwrap_or_else(|| rand::rng().random());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = Instant::now();
        let mut out = sample_batch(&self.nets, &self.schedule, &conds, SampleOptions::default(), &mut rng)
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let ms = start.elapsed().as_secs_f64() * 1e3 / conds.len() as f64;
        out.iter_mut().for_each(|l| l.canvas = canvas);
        Ok((out, ms))
    }

    fn respond(&self, samples: &[Layout], timing_ms: f64) -> Result<CompletionResponse, ServiceError> {
        let samples = samples
            .iter()
            .map(|l| {
                Ok(LayoutSpec {
                    canvas: CanvasSpec { w: l.canvas.width, h: l.canvas.height },
                    elements: l
                        .elements
                        .iter()
                        .map(|e| {
                            let r = ElementRecord::from_element(e, &self.labels)?;
                            Ok(ElementSpec { label: r.label, center: r.center, size: r.size })
                        })
                        .collect::<diffgan_core::Result<_>>()?,
                })
            })
            .collect::<diffgan_core::Result<Vec<_>>>()
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        Ok(CompletionResponse { samples, timing_ms, model_meta: self.meta.clone() })
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, ServiceError> {
        self.check_count(req.num_samples)?;
        self.check_capacity(req.elements.len())?;
        let mut locked = Vec::new();
        for (i, e) in req.elements.iter().enumerate() {
            let el = self.element(i, &e.label, e.center, e.size)?;
            if e.locked {
                locked.push(el);
            }
        }
        let canvas = canvas(req.canvas);
        let cond = locked_mask(&locked, self.nets.shape(), canvas).map_err(|e| ServiceError::Invalid(e.to_string()))?;
        let (samples, ms) = self.run(vec![cond; req.num_samples], req.seed, canvas)?;
        for (s, sample) in samples.iter().enumerate() {
            let kept = sample.elements.len() >= locked.len()
                && sample.elements.iter().zip(&locked).all(|(a, b)| a == b);
            if !kept {
                return Err(ServiceError::Internal(format!("sample {s} lost a locked element")));
            }
        }
        self.respond(&samples, ms)
    }

    pub fn generate(&self, req: &GenerateRequest) -> Result<CompletionResponse, ServiceError> {
        self.check_count(req.num_samples)?;
        let canvas = canvas(req.canvas);
        let task = match req.task {
            GenerateTask::Uncond => Task::Uncond,
            GenerateTask::CToSp => Task::CToSp,
            GenerateTask::CsToP => Task::CsToP,
        };
        let layout = if task == Task::Uncond {
            Layout::new(Vec::new(), canvas)
        } else {
            let labels = req
                .labels
                .as_ref()
                .filter(|l| !l.is_empty())
                .ok_or_else(|| ServiceError::Invalid(format!("task {task} requires a non-empty labels list")))?;
            self.check_capacity(labels.len())?;
            let sizes = match (task, &req.sizes) {
                (Task::CsToP, Some(s)) if s.len() == labels.len() => s.clone(),
                (Task::CsToP, Some(s)) => {
                    return Err(ServiceError::Invalid(format!("{} sizes for {} labels", s.len(), labels.len())))
                }
                (Task::CsToP, None) => return Err(ServiceError::Invalid("task cs_to_p requires sizes".into())),
                _ => vec![[0.5, 0.5]; labels.len()],
            };
            let elements = labels
                .iter()
                .zip(&sizes)
                .enumerate()
                .map(|(i, (l, s))| self.element(i, l, [0.5, 0.5], *s))
                .collect::<Result<Vec<_>, _>>()?;
            Layout::new(elements, canvas)
        };
        // Label and size masks are deterministic, so the rng is unused here.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cond = make_mask(task, &layout, self.nets.shape(), &mut rng)
            .map_err(|e| ServiceError::Invalid(e.to_string()))?;
        let (samples, ms) = self.run(vec![cond; req.num_samples], req.seed, canvas)?;
        if task != Task::Uncond {
            let want = layout.label_multiset();
            if samples.iter().any(|s| s.label_multiset() != want) {
                return Err(ServiceError::Internal("sample label multiset differs from the condition".into()));
            }
        }
        self.respond(&samples, ms)
    }
}

fn canvas(spec: Option<CanvasSpec>) -> Canvas {
    spec.map_or_else(Canvas::default, |c| Canvas { width: c.w.max(1), height: c.h.max(1) })
}

