//! Alternating optimization of `D` and `(G, F)` with Adam, checkpointing
//! and a per-step metrics log.

mod adam;
mod checkpoint;
mod config;

pub use adam::{adam_tensor, adam_update, AdamConfig, AdamMoments};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{apply_override, DataSettings, DataSource, TrainConfig, TrainerSettings};

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::{batch_iterator, load_manifest, Dataset};
use crate::error::{Error, Result};
use crate::losses::{
    d_objective_graph, g_terms_graph, generate_all, record_reals, weighted_g_f_loss, GeneratedImages, RealImages,
    StepBatch,
};
use crate::networks::{bind, gradients, init_params, Discriminator, ModelParams, TranslatorNet};

/// One record of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepMetrics {
    /// 1-based count of completed steps.
    pub step: u64,
    /// 1-based epoch the step belongs to.
    pub epoch: u64,
    pub l_per: f32,
    pub l_cgan_g: f32,
    pub l_cgan_d: f32,
    pub l_trl: f32,
    pub g_f_loss: f32,
    pub d_loss: f32,
    /// Mean over occupations of `mean |G(y, p) - y|`; not part of any loss.
    pub l1_input_output: f32,
}

/// Optimizer state for the three networks.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelMoments {
    pub generator: AdamMoments,
    pub decoder: AdamMoments,
    pub discriminator: AdamMoments,
}

impl ModelMoments {
    pub fn zeros_like(params: &ModelParams) -> Self {
        ModelMoments {
            generator: AdamMoments::zeros_like(&params.generator),
            decoder: AdamMoments::zeros_like(&params.decoder),
            discriminator: AdamMoments::zeros_like(&params.discriminator),
        }
    }
}

/// Everything a run needs to continue: parameters, optimizer moments, the
/// step counter, the configuration and the metric history.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub moments: ModelMoments,
    pub step: u64,
    pub history: Vec<StepMetrics>,
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config.model, config.trainer.seed)?;
        Ok(TrainState {
            moments: ModelMoments::zeros_like(&params),
            params,
            config,
            step: 0,
            history: Vec::new(),
        })
    }

    fn adam(&self) -> AdamConfig {
        let t = &self.config.trainer;
        AdamConfig {
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.adam_eps,
        }
    }
}

/// The graph of one step, kept across both phases so the generator's
/// forward pass is recorded once.
pub struct StepGraph {
    pub graph: Graph,
    pub generator: TranslatorNet<Var>,
    pub young: Var,
    pub reals: RealImages,
    pub generated: GeneratedImages,
    /// Trainable `D` of the first phase.
    pub discriminator: Discriminator<Var>,
    /// Frozen, already-updated `D` of the second phase.
    pub frozen_discriminator: Option<Discriminator<Var>>,
    pub decoder: Option<TranslatorNet<Var>>,
    d_sum: f32,
}

fn finite(term: &str, value: f32, step: u64) -> Result<f32> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            term: term.to_owned(),
            step,
        })
    }
}

/// First phase: scores real and detached generated images, then updates `D`
/// alone.
pub fn discriminator_phase(state: &mut TrainState, batch: &StepBatch) -> Result<StepGraph> {
    batch.validate()?;
    let step = state.step + 1;
    let mut graph = Graph::new();
    let generator = bind(&state.params.generator, &mut graph, true);
    let young = graph.constant(batch.young.clone());
    let reals = record_reals(&mut graph, batch);
    let generated = generate_all(
        &mut graph,
        &generator,
        batch.occupation_count(),
        young,
        &batch.occupations,
    )?;
    let discriminator = bind(&state.params.discriminator, &mut graph, true);
    let d_sum = d_objective_graph(&mut graph, &discriminator, batch, &reals, &generated)?;
    let d_value = finite("L_CGAN(D)", graph.value(d_sum).item(), step)?;
    let d_loss = graph.scale(d_sum, state.config.weights.mu);
    graph.backward(d_loss)?;
    let grads = gradients(&discriminator, &graph);
    let adam = state.adam();
    adam_update(
        &mut state.params.discriminator,
        &grads,
        &mut state.moments.discriminator,
        step,
        &adam,
    )?;
    Ok(StepGraph {
        graph,
        generator,
        young,
        reals,
        generated,
        discriminator,
        frozen_discriminator: None,
        decoder: None,
        d_sum: d_value,
    })
}

/// Second phase: evaluates the generator-side objective against the updated,
/// frozen `D` and updates `G` and `F`. Completes the step.
pub fn generator_phase(state: &mut TrainState, batch: &StepBatch, sg: &mut StepGraph, epoch: u64) -> Result<StepMetrics> {
    let step = state.step + 1;
    let weights = state.config.weights;
    let graph = &mut sg.graph;
    let frozen = bind(&state.params.discriminator, graph, false);
    let decoder = bind(&state.params.decoder, graph, true);
    let terms = g_terms_graph(
        graph,
        &decoder,
        &frozen,
        batch,
        sg.young,
        &sg.reals,
        &sg.generated,
        weights.epsilon,
    )?;
    let l_per = finite("L_PER", graph.value(terms.personalized).item(), step)?;
    let l_cgan_g = finite("L_CGAN(G)", graph.value(terms.adversarial).item(), step)?;
    let l_trl = finite("L_TRL", graph.value(terms.triplet).item(), step)?;
    let g_f = weighted_g_f_loss(graph, &terms, &weights)?;
    let g_f_loss = finite("g_f_loss", graph.value(g_f).item(), step)?;
    graph.backward(g_f)?;
    let grad_g = gradients(&sg.generator, graph);
    let grad_f = gradients(&decoder, graph);
    let adam = state.adam();
    adam_update(&mut state.params.generator, &grad_g, &mut state.moments.generator, step, &adam)?;
    adam_update(&mut state.params.decoder, &grad_f, &mut state.moments.decoder, step, &adam)?;
    sg.frozen_discriminator = Some(frozen);
    sg.decoder = Some(decoder);

    let young = sg.graph.value(sg.young);
    let mut io = 0.0f32;
    for &o in &sg.generated.images {
        io += sg.graph.value(o).mean_abs_diff(young)?;
    }
    let l1_input_output = io / sg.generated.images.len() as f32;
    let metrics = StepMetrics {
        step,
        epoch,
        l1_input_output,
        l_per,
        l_cgan_g,
        l_cgan_d: sg.d_sum,
        l_trl,
        g_f_loss,
        d_loss: weights.mu * sg.d_sum,
    };
    state.step = step;
    state.history.push(metrics);
    Ok(metrics)
}

/// One alternating update: `D` first, then `G` and `F`. `epoch` is the
/// 1-based epoch recorded with the metrics.
pub fn train_step(state: &mut TrainState, batch: &StepBatch, epoch: u64) -> Result<StepMetrics> {
    let mut sg = discriminator_phase(state, batch)?;
    generator_phase(state, batch, &mut sg, epoch)
}

/// Builds the training pools named by the configuration.
pub fn load_dataset(config: &TrainConfig) -> Result<Dataset> {
    match config.data.source {
        DataSource::Synth => Dataset::from_synth(&config.data.synth),
        DataSource::Manifest => {
            let manifest = load_manifest(&config.data.manifest)?;
            if manifest.occupation_count() != config.model.occupations {
                return Err(Error::Config(format!(
                    "manifest lists {} occupations, model expects {}",
                    manifest.occupation_count(),
                    config.model.occupations
                )));
            }
            Dataset::from_manifest(&manifest, config.trainer.age_group, config.model.image_size)
        }
    }
}

pub const METRICS_FILE: &str = "metrics.ndjson";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn checkpoint_name(step: u64) -> String {
    format!("step-{step:08}.ckpt")
}

/// Where a run writes its metrics log and checkpoints.
pub struct RunOutput {
    dir: PathBuf,
    log: File,
}

impl RunOutput {
    /// Creates `dir` and rewrites its metrics log to hold exactly `history`.
    pub fn create(dir: &Path, history: &[StepMetrics]) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(METRICS_FILE);
        let mut log = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut text = String::new();
        for m in history {
            text.push_str(&metrics_line(m));
        }
        log.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
        Ok(RunOutput { dir: dir.to_path_buf(), log })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn record(&mut self, m: &StepMetrics) -> Result<()> {
        let path = self.dir.join(METRICS_FILE);
        self.log
            .write_all(metrics_line(m).as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// One metrics-log line, newline included.
pub fn metrics_line(m: &StepMetrics) -> String {
    let mut line = serde_json::to_string(m).expect("metrics serialize");
    line.push('\n');
    line
}

pub fn parse_metrics_log(text: &str) -> Result<Vec<StepMetrics>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Format(format!("metrics line {}: {e}", i + 1))))
        .collect()
}

/// Trains a fresh state for the configured number of epochs.
pub fn train_loop(
    config: &TrainConfig,
    data: &Dataset,
    output: Option<&Path>,
    progress: &mut dyn FnMut(&StepMetrics),
) -> Result<TrainState> {
    let state = TrainState::new(config.clone())?;
    resume(state, data, output, None, progress)
}

/// Continues `state` up to step `until` (default: the end of the last
/// epoch). Batches depend only on the seed and the step index, so resuming
/// reproduces an uninterrupted run exactly.
pub fn resume(
    mut state: TrainState,
    data: &Dataset,
    output: Option<&Path>,
    until: Option<u64>,
    progress: &mut dyn FnMut(&StepMetrics),
) -> Result<TrainState> {
    let t = state.config.trainer.clone();
    let sampler = batch_iterator(data, t.batch_size, t.seed, t.q_mode)?;
    let per_epoch = sampler.steps_per_epoch() as u64;
    let total = per_epoch * t.epochs as u64;
    let end = until.map_or(total, |u| u.min(total));
    let mut out = output.map(|dir| RunOutput::create(dir, &state.history)).transpose()?;
    while state.step < end {
        let (epoch, index) = (state.step / per_epoch, state.step % per_epoch);
        let batch = sampler.batch(epoch as usize, index as usize)?;
        let metrics = train_step(&mut state, &batch, epoch + 1)?;
        progress(&metrics);
        if let Some(out) = out.as_mut() {
            out.record(&metrics)?;
            if t.checkpoint_every > 0 && state.step.is_multiple_of(t.checkpoint_every) {
                save_checkpoint(&state, &out.dir().join(checkpoint_name(state.step)))?;
            }
        }
    }
    if let Some(out) = out.as_ref() {
        save_checkpoint(&state, &out.dir().join(FINAL_CHECKPOINT))?;
    }
    Ok(state)
}

/// Mean of `field` over each epoch's records, in epoch order.
pub fn epoch_means(history: &[StepMetrics], field: impl Fn(&StepMetrics) -> f32) -> Vec<f64> {
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for m in history {
        let e = (m.epoch as usize).saturating_sub(1);
        if sums.len() <= e {
            sums.resize(e + 1, (0.0, 0));
        }
        sums[e].0 += f64::from(field(m));
        sums[e].1 += 1;
    }
    sums.into_iter()
        .map(|(s, n)| if n == 0 { f64::NAN } else { s / n as f64 })
        .collect()
}
