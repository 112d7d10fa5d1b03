//! Cycle reconstruction, least-squares conditional adversarial and triplet
//! rank losses, and their weighted combination.
//!
//! Every loss has a graph-level builder used by the trainer and a
//! tensor-level wrapper that evaluates it on a fresh, gradient-free graph.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::networks::{
    bind, condition_cube_batch, discriminate_graph, generate_graph, reconstruct_graph, DecoderParams, Discriminator,
    DiscriminatorParams, GeneratorParams, Occupation, TranslatorNet,
};
use crate::tensor::Tensor;

/// Weights of the full objective and the triplet margin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Cycle reconstruction weight.
    pub lambda: f32,
    /// Adversarial weight.
    pub mu: f32,
    /// Triplet rank weight.
    pub nu: f32,
    /// Triplet margin in normalized pixel units.
    pub epsilon: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 10.0,
            mu: 1.0,
            nu: 0.1,
            epsilon: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f32| v.is_finite() && v >= 0.0;
        if !(ok(self.lambda) && ok(self.mu) && ok(self.nu)) {
            return Err(Error::Config(format!(
                "loss weights must be finite and >= 0, got lambda={} mu={} nu={}",
                self.lambda, self.mu, self.nu
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!("triplet margin must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// How many wrong occupations `q` each occupation `p` is contrasted with
/// per step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QMode {
    /// One `q != p`, drawn uniformly per step from the seeded stream.
    #[default]
    SampleOne,
    /// Every `q != p`.
    SumAll,
}

/// One training step's data: a batch of young faces, a batch of real aged
/// faces per occupation, and the wrong-occupation contrasts for each
/// active occupation.
#[derive(Clone, Debug, PartialEq)]
pub struct StepBatch {
    pub young: Tensor,
    /// Real aged images, indexed by occupation channel (`p - 1`).
    pub real: Vec<Tensor>,
    pub occupations: Vec<Occupation>,
    /// For each entry of `occupations`, the occupations `q != p` it is
    /// contrasted against.
    pub wrong: Vec<Vec<Occupation>>,
}

impl StepBatch {
    pub fn occupation_count(&self) -> usize {
        self.real.len()
    }

    pub fn real_of(&self, p: Occupation) -> &Tensor {
        &self.real[p.channel()]
    }

    fn position(&self, p: Occupation) -> Result<usize> {
        self.occupations
            .iter()
            .position(|&o| o == p)
            .ok_or_else(|| Error::Domain(format!("occupation {p} is not active in this batch")))
    }

    pub fn wrong_of(&self, p: Occupation) -> Result<&[Occupation]> {
        let pos = self.position(p)?;
        let wrong = &self.wrong[pos];
        if wrong.is_empty() {
            return Err(Error::Domain(format!("no wrong-occupation data for occupation {p}")));
        }
        Ok(wrong)
    }

    pub fn validate(&self) -> Result<()> {
        if self.occupations.is_empty() {
            return Err(Error::Domain("batch has no active occupations".into()));
        }
        if self.wrong.len() != self.occupations.len() {
            return Err(Error::Domain("wrong-occupation table does not match active occupations".into()));
        }
        let s = self.young.shape();
        for (i, r) in self.real.iter().enumerate() {
            let rs = r.shape();
            if (rs.c, rs.h, rs.w) != (s.c, s.h, s.w) {
                return Err(Error::dim(
                    "C/H/W",
                    format!("real batch of occupation {} is {rs}, young batch is {s}", i + 1),
                ));
            }
        }
        for (p, qs) in self.occupations.iter().zip(&self.wrong) {
            if qs.contains(p) {
                return Err(Error::Domain(format!("occupation {p} contrasted with itself")));
            }
        }
        Ok(())
    }
}

/// Condition layer at image resolution for a batch of `n`.
pub fn image_condition(graph: &mut Graph, p: Occupation, occupations: usize, image: Var) -> Result<Var> {
    let s = graph.value(image).shape();
    let cube = condition_cube_batch(p.index(), occupations, s.n, s.h, s.w)?;
    Ok(graph.constant(cube.tensor))
}

/// Condition cube at bottleneck resolution for a batch of young images.
pub fn bottleneck_condition(graph: &mut Graph, p: Occupation, occupations: usize, young: Var) -> Result<Var> {
    let s = graph.value(young).shape();
    let cube = condition_cube_batch(p.index(), occupations, s.n, s.h / 4, s.w / 4)?;
    Ok(graph.constant(cube.tensor))
}

/// `sum_p mean |F(G(y, l^p)) - y|`.
pub fn personalized_loss_graph(graph: &mut Graph, young: Var, reconstructed: &[Var]) -> Result<Var> {
    let terms = reconstructed
        .iter()
        .map(|&r| graph.l1_distance(r, young))
        .collect::<Result<Vec<_>>>()?;
    graph
        .sum(&terms)?
        .ok_or_else(|| Error::Domain("personalized loss needs at least one occupation".into()))
}

/// Least-squares discriminator loss for occupation `p`: real-correct
/// towards 1, generated and real-wrong towards 0. `generated` should be
/// detached by the caller.
pub fn adversarial_d_loss_graph(
    graph: &mut Graph,
    disc: &Discriminator<Var>,
    occupations: usize,
    p: Occupation,
    real_p: Var,
    generated: Var,
    real_wrong: &[Var],
) -> Result<Var> {
    if real_wrong.is_empty() {
        return Err(Error::Domain(format!("no wrong-occupation data for occupation {p}")));
    }
    let cond = image_condition(graph, p, occupations, real_p)?;
    let score_real = discriminate_graph(graph, disc, real_p, cond)?;
    let cond = image_condition(graph, p, occupations, generated)?;
    let score_fake = discriminate_graph(graph, disc, generated, cond)?;
    let mut score_wrong = Vec::with_capacity(real_wrong.len());
    for &wrong in real_wrong {
        let cond = image_condition(graph, p, occupations, wrong)?;
        score_wrong.push(discriminate_graph(graph, disc, wrong, cond)?);
    }
    lsgan_d_graph(graph, score_real, score_fake, &score_wrong)
}

/// Least-squares discriminator targets on patch-score maps: real-correct
/// towards 1, generated and every real-wrong towards 0.
pub fn lsgan_d_graph(graph: &mut Graph, score_real: Var, score_fake: Var, score_wrong: &[Var]) -> Result<Var> {
    let mut terms = vec![graph.squared_error(score_real, 1.0), graph.squared_error(score_fake, 0.0)];
    terms.extend(score_wrong.iter().map(|&s| graph.squared_error(s, 0.0)));
    Ok(graph.sum(&terms)?.expect("non-empty"))
}

/// Least-squares generator target on a patch-score map: towards 1.
pub fn lsgan_g_graph(graph: &mut Graph, score_fake: Var) -> Var {
    graph.squared_error(score_fake, 1.0)
}

/// Least-squares generator loss for occupation `p`: generated towards 1.
pub fn adversarial_g_loss_graph(
    graph: &mut Graph,
    disc: &Discriminator<Var>,
    occupations: usize,
    p: Occupation,
    generated: Var,
) -> Result<Var> {
    let cond = image_condition(graph, p, occupations, generated)?;
    let score = discriminate_graph(graph, disc, generated, cond)?;
    Ok(lsgan_g_graph(graph, score))
}

/// `max(0, eps + |mean(o^p) - mean(G)|_1 - |mean(o^q) - mean(G)|_1)` with
/// means over the batch and the distance averaged over pixels.
pub fn triplet_rank_graph(graph: &mut Graph, generated: Var, mean_real_p: Var, mean_real_q: Var, epsilon: f32) -> Result<Var> {
    let mean_generated = graph.batch_mean(generated);
    let d_p = graph.l1_distance(mean_real_p, mean_generated)?;
    let d_q = graph.l1_distance(mean_real_q, mean_generated)?;
    let diff = graph.sub(d_p, d_q)?;
    let shifted = graph.add_scalar(diff, epsilon);
    Ok(graph.relu(shifted))
}

/// Per-term values of the full objective. Totals are combined in `f64`
/// so weight identities hold beyond `f32` resolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    /// `L_PER`
    pub personalized: f64,
    /// Generator side of `L_CGAN`, summed over occupations.
    pub adversarial_g: f64,
    /// Discriminator side of `L_CGAN`, summed over occupations.
    pub adversarial_d: f64,
    /// `L_TRL`
    pub triplet: f64,
    /// `lambda * L_PER + mu * adversarial_g + nu * L_TRL`
    pub g_f_loss: f64,
    /// `mu * adversarial_d`
    pub d_loss: f64,
}

impl LossTerms {
    pub fn new(personalized: f32, adversarial_g: f32, adversarial_d: f32, triplet: f32, w: &LossWeights) -> Self {
        let (per, adv_g, adv_d, trl) = (
            f64::from(personalized),
            f64::from(adversarial_g),
            f64::from(adversarial_d),
            f64::from(triplet),
        );
        LossTerms {
            personalized: per,
            adversarial_g: adv_g,
            adversarial_d: adv_d,
            triplet: trl,
            g_f_loss: f64::from(w.lambda) * per + f64::from(w.mu) * adv_g + f64::from(w.nu) * trl,
            d_loss: f64::from(w.mu) * adv_d,
        }
    }
}

/// Graph handles for the generated images of one batch.
pub struct GeneratedImages {
    pub occupations: Vec<Occupation>,
    pub images: Vec<Var>,
}

pub fn generate_all(
    graph: &mut Graph,
    gen: &TranslatorNet<Var>,
    occupation_count: usize,
    young: Var,
    occupations: &[Occupation],
) -> Result<GeneratedImages> {
    let mut images = Vec::with_capacity(occupations.len());
    for &p in occupations {
        let cube = bottleneck_condition(graph, p, occupation_count, young)?;
        images.push(generate_graph(graph, gen, young, cube)?);
    }
    Ok(GeneratedImages {
        occupations: occupations.to_vec(),
        images,
    })
}

/// Real-image leaves of one batch, each recorded once on the graph.
pub struct RealImages {
    pub images: Vec<Var>,
    pub means: Vec<Var>,
}

pub fn record_reals(graph: &mut Graph, batch: &StepBatch) -> RealImages {
    let images: Vec<Var> = batch.real.iter().map(|t| graph.constant(t.clone())).collect();
    let means = images.iter().map(|&v| graph.batch_mean(v)).collect();
    RealImages { images, means }
}

/// Discriminator objective `sum_p` over the active occupations, with every
/// generated image detached.
pub fn d_objective_graph(
    graph: &mut Graph,
    disc: &Discriminator<Var>,
    batch: &StepBatch,
    reals: &RealImages,
    generated: &GeneratedImages,
) -> Result<Var> {
    let count = batch.occupation_count();
    let mut terms = Vec::with_capacity(batch.occupations.len());
    for (&p, &fake) in generated.occupations.iter().zip(&generated.images) {
        let fake = graph.detach(fake);
        let wrong: Vec<Var> = batch.wrong_of(p)?.iter().map(|q| reals.images[q.channel()]).collect();
        terms.push(adversarial_d_loss_graph(graph, disc, count, p, reals.images[p.channel()], fake, &wrong)?);
    }
    Ok(graph.sum(&terms)?.expect("validated non-empty"))
}

/// Unweighted generator-side terms: `(L_PER, sum_p adversarial_g, L_TRL)`.
pub struct GeneratorTerms {
    pub personalized: Var,
    pub adversarial: Var,
    pub triplet: Var,
}

#[allow(clippy::too_many_arguments)]
pub fn g_terms_graph(
    graph: &mut Graph,
    dec: &TranslatorNet<Var>,
    disc: &Discriminator<Var>,
    batch: &StepBatch,
    young: Var,
    reals: &RealImages,
    generated: &GeneratedImages,
    epsilon: f32,
) -> Result<GeneratorTerms> {
    let count = batch.occupation_count();
    let mut reconstructed = Vec::with_capacity(generated.images.len());
    let mut adversarial = Vec::new();
    let mut triplet = Vec::new();
    for (&p, &fake) in generated.occupations.iter().zip(&generated.images) {
        reconstructed.push(reconstruct_graph(graph, dec, fake)?);
        adversarial.push(adversarial_g_loss_graph(graph, disc, count, p, fake)?);
        for q in batch.wrong_of(p)? {
            triplet.push(triplet_rank_graph(
                graph,
                fake,
                reals.means[p.channel()],
                reals.means[q.channel()],
                epsilon,
            )?);
        }
    }
    let personalized = personalized_loss_graph(graph, young, &reconstructed)?;
    let adversarial = graph.sum(&adversarial)?.expect("non-empty");
    let triplet = graph.sum(&triplet)?.expect("non-empty");
    Ok(GeneratorTerms {
        personalized,
        adversarial,
        triplet,
    })
}

/// `lambda * L_PER + mu * adversarial + nu * L_TRL` as one scalar.
pub fn weighted_g_f_loss(graph: &mut Graph, terms: &GeneratorTerms, weights: &LossWeights) -> Result<Var> {
    let a = graph.scale(terms.personalized, weights.lambda);
    let b = graph.scale(terms.adversarial, weights.mu);
    let c = graph.scale(terms.triplet, weights.nu);
    let ab = graph.add(a, b)?;
    graph.add(ab, c)
}

struct Frozen {
    graph: Graph,
    gen: TranslatorNet<Var>,
    young: Var,
    reals: RealImages,
}

fn frozen(gen: &GeneratorParams, batch: &StepBatch) -> Result<Frozen> {
    batch.validate()?;
    let mut graph = Graph::new();
    let gen = bind(gen, &mut graph, false);
    let young = graph.constant(batch.young.clone());
    let reals = record_reals(&mut graph, batch);
    Ok(Frozen {
        graph,
        gen,
        young,
        reals,
    })
}

pub fn personalized_loss(gen: &GeneratorParams, dec: &DecoderParams, batch: &StepBatch) -> Result<f32> {
    let mut f = frozen(gen, batch)?;
    let dec = bind(dec, &mut f.graph, false);
    let generated = generate_all(&mut f.graph, &f.gen, batch.occupation_count(), f.young, &batch.occupations)?;
    let reconstructed = generated
        .images
        .iter()
        .map(|&o| reconstruct_graph(&mut f.graph, &dec, o))
        .collect::<Result<Vec<_>>>()?;
    let loss = personalized_loss_graph(&mut f.graph, f.young, &reconstructed)?;
    Ok(f.graph.value(loss).item())
}

pub fn adversarial_d_loss(disc: &DiscriminatorParams, gen: &GeneratorParams, batch: &StepBatch, p: Occupation) -> Result<f32> {
    let mut f = frozen(gen, batch)?;
    let wrong = batch.wrong_of(p)?.to_vec();
    let d = bind(disc, &mut f.graph, false);
    let generated = generate_all(&mut f.graph, &f.gen, batch.occupation_count(), f.young, &[p])?;
    let wrong_vars: Vec<Var> = wrong.iter().map(|q| f.reals.images[q.channel()]).collect();
    let loss = adversarial_d_loss_graph(
        &mut f.graph,
        &d,
        batch.occupation_count(),
        p,
        f.reals.images[p.channel()],
        generated.images[0],
        &wrong_vars,
    )?;
    Ok(f.graph.value(loss).item())
}

pub fn adversarial_g_loss(disc: &DiscriminatorParams, gen: &GeneratorParams, batch: &StepBatch, p: Occupation) -> Result<f32> {
    let mut f = frozen(gen, batch)?;
    let d = bind(disc, &mut f.graph, false);
    let generated = generate_all(&mut f.graph, &f.gen, batch.occupation_count(), f.young, &[p])?;
    let loss = adversarial_g_loss_graph(&mut f.graph, &d, batch.occupation_count(), p, generated.images[0])?;
    Ok(f.graph.value(loss).item())
}

pub fn triplet_rank_loss(gen: &GeneratorParams, batch: &StepBatch, p: Occupation, q: Occupation, epsilon: f32) -> Result<f32> {
    if p == q {
        return Err(Error::Domain(format!("triplet rank loss needs p != q, got {p} twice")));
    }
    let mut f = frozen(gen, batch)?;
    let generated = generate_all(&mut f.graph, &f.gen, batch.occupation_count(), f.young, &[p])?;
    let loss = triplet_rank_graph(
        &mut f.graph,
        generated.images[0],
        f.reals.means[p.channel()],
        f.reals.means[q.channel()],
        epsilon,
    )?;
    Ok(f.graph.value(loss).item())
}

/// Generator-side occupational loss: adversarial plus triplet terms over
/// the active occupations and their contrasts.
pub fn occupational_loss(gen: &GeneratorParams, disc: &DiscriminatorParams, batch: &StepBatch, epsilon: f32) -> Result<f32> {
    let mut total = 0.0f32;
    for &p in &batch.occupations {
        total += adversarial_g_loss(disc, gen, batch, p)?;
        for &q in batch.wrong_of(p)? {
            total += triplet_rank_loss(gen, batch, p, q, epsilon)?;
        }
    }
    Ok(total)
}

/// Evaluates every term of the full objective without recording gradients.
pub fn full_objective(
    gen: &GeneratorParams,
    dec: &DecoderParams,
    disc: &DiscriminatorParams,
    batch: &StepBatch,
    weights: &LossWeights,
) -> Result<LossTerms> {
    weights.validate()?;
    let mut f = frozen(gen, batch)?;
    let dec = bind(dec, &mut f.graph, false);
    let d = bind(disc, &mut f.graph, false);
    let generated = generate_all(&mut f.graph, &f.gen, batch.occupation_count(), f.young, &batch.occupations)?;
    let d_sum = d_objective_graph(&mut f.graph, &d, batch, &f.reals, &generated)?;
    let terms = g_terms_graph(&mut f.graph, &dec, &d, batch, f.young, &f.reals, &generated, weights.epsilon)?;
    let v = |var: Var| f.graph.value(var).item();
    Ok(LossTerms::new(
        v(terms.personalized),
        v(terms.adversarial),
        v(d_sum),
        v(terms.triplet),
        weights,
    ))
}
