//! Pixel-space evaluation of a trained generator: how well `F` undoes `G`,
//! how far apart the outputs for different occupations are, and (on
//! synthetic data) whether each output carries its occupation's texture.

use serde::{Deserialize, Serialize};

use crate::data::{texture_feature, NearestCentroid};
use crate::error::{Error, Result};
use crate::networks::{generate, reconstruct, DecoderParams, GeneratorParams, Occupation};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalMetadata {
    pub step: u64,
    pub inputs: usize,
    pub occupations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    /// Per occupation: mean `|F(G(y, p)) - y|` over the inputs.
    pub identity: Vec<f64>,
    /// `[p][q]`: mean `|G(y, p) - G(y, q)|` over the inputs.
    pub separation: Vec<Vec<f64>>,
    /// Per occupation: mean `|G(y, p) - y|` over the inputs.
    pub input_distance: Vec<f64>,
    /// Share of outputs the texture classifier assigns to their condition.
    pub fidelity: Option<f64>,
    pub metadata: EvalMetadata,
}

impl EvalReport {
    /// Mean of the off-diagonal separation entries.
    pub fn mean_separation(&self) -> f64 {
        let p = self.separation.len();
        let mut total = 0.0;
        for (i, row) in self.separation.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if i != j {
                    total += v;
                }
            }
        }
        total / (p * (p - 1)) as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("eval report: {e}")))
    }

    /// Human-readable summary.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "step {}  inputs {}  occupations {}\n",
            self.metadata.step, self.metadata.inputs, self.metadata.occupations
        );
        for (i, v) in self.identity.iter().enumerate() {
            s.push_str(&format!(
                "occupation {}: identity {:.4}  input distance {:.4}\n",
                i + 1,
                v,
                self.input_distance[i]
            ));
        }
        s.push_str("separation:\n");
        for row in &self.separation {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
            s.push_str(&format!("  {}\n", cells.join("  ")));
        }
        s.push_str(&format!("mean separation {:.4}\n", self.mean_separation()));
        if let Some(f) = self.fidelity {
            s.push_str(&format!("texture fidelity {:.1}%\n", 100.0 * f));
        }
        s
    }
}

/// Outputs of `G` for every input under every occupation, `[p][i]`.
pub fn generate_all_conditions(gen: &GeneratorParams, inputs: &[Tensor], occupations: usize) -> Result<Vec<Vec<Tensor>>> {
    Occupation::all(occupations)
        .map(|p| inputs.iter().map(|y| generate(gen, y, p.index())).collect())
        .collect()
}

/// Fraction of `outputs[p][i]` the classifier labels as occupation `p`.
pub fn classifier_accuracy(classifier: &NearestCentroid, outputs: &[Vec<Tensor>]) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (p, row) in outputs.iter().enumerate() {
        for o in row {
            hits += usize::from(classifier.predict(&texture_feature(o)?) == p);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Domain("no outputs to classify".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// Fits the texture classifier on real aged images, `aged[p]` for occupation `p + 1`.
pub fn fit_texture_classifier(aged: &[Vec<Tensor>]) -> Result<NearestCentroid> {
    let features = aged
        .iter()
        .map(|pool| pool.iter().map(texture_feature).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    NearestCentroid::fit(&features)
}

pub fn evaluate(
    gen: &GeneratorParams,
    dec: &DecoderParams,
    inputs: &[Tensor],
    classifier: Option<&NearestCentroid>,
    step: u64,
) -> Result<EvalReport> {
    evaluate_with(
        |y, p| generate(gen, y, p.index()),
        |o| reconstruct(dec, o),
        gen.condition_channels(),
        inputs,
        classifier,
        step,
    )
}

/// [`evaluate`] over arbitrary translators: `generate(y, p)` stands in for
/// `G` and `reconstruct(o)` for `F`.
pub fn evaluate_with(
    generate: impl Fn(&Tensor, Occupation) -> Result<Tensor>,
    reconstruct: impl Fn(&Tensor) -> Result<Tensor>,
    count: usize,
    inputs: &[Tensor],
    classifier: Option<&NearestCentroid>,
    step: u64,
) -> Result<EvalReport> {
    if inputs.is_empty() {
        return Err(Error::Domain("evaluation set is empty".into()));
    }
    if count < 2 {
        return Err(Error::Domain(format!("need at least two occupations, got {count}")));
    }
    let outputs = Occupation::all(count)
        .map(|p| inputs.iter().map(|y| generate(y, p)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let n = inputs.len() as f64;
    let mut identity = Vec::with_capacity(count);
    let mut input_distance = Vec::with_capacity(count);
    for row in &outputs {
        let mut id = 0.0;
        let mut dist = 0.0;
        for (o, y) in row.iter().zip(inputs) {
            id += f64::from(reconstruct(o)?.mean_abs_diff(y)?);
            dist += f64::from(o.mean_abs_diff(y)?);
        }
        identity.push(id / n);
        input_distance.push(dist / n);
    }
    let mut separation = vec![vec![0.0; count]; count];
    for p in 0..count {
        for q in p + 1..count {
            let mut total = 0.0;
            for (a, b) in outputs[p].iter().zip(&outputs[q]) {
                total += f64::from(a.mean_abs_diff(b)?);
            }
            separation[p][q] = total / n;
            separation[q][p] = total / n;
        }
    }
    let fidelity = classifier.map(|c| classifier_accuracy(c, &outputs)).transpose()?;
    let report = EvalReport {
        identity,
        separation,
        input_distance,
        fidelity,
        metadata: EvalMetadata {
            step,
            inputs: inputs.len(),
            occupations: count,
        },
    };
    let scores = report.identity.iter().chain(&report.input_distance).chain(report.separation.iter().flatten());
    if !scores.into_iter().all(|v| v.is_finite()) {
        return Err(Error::Domain("evaluation produced non-finite scores".into()));
    }
    Ok(report)
}
