//! Fixed 4-4-2-1 sigmoid perceptron controller and its flat genome.
//!
//! Genome layout, layer by layer: the row-major weight matrix
//! (`fan_out x fan_in`, one row per neuron) followed by the bias vector. For
//! the controller network that is 16 + 4, 8 + 2, 2 + 1 = 33 genes.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector4};

use crate::error::{Error, Result};
use crate::lqg::{reference_state, Estimator, LqgDesign};
use crate::plant::Measurement;

pub const LAYER_SIZES: [usize; 4] = [4, 4, 2, 1];
pub const GENOME_DIM: usize = 33;
pub const WEIGHT_LIMIT: f64 = 30.0;

/// Network shape and the physical ranges of its inputs and output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpArchitecture {
    pub layer_sizes: Vec<usize>,
    /// `[lo, hi]` per input, mapped onto `[-1, 1]`.
    pub input_ranges: Vec<(f64, f64)>,
    pub output_range: (f64, f64),
}

impl Default for MlpArchitecture {
    fn default() -> Self {
        Self {
            layer_sizes: LAYER_SIZES.to_vec(),
            input_ranges: vec![(-0.5, 0.5), (-5.0, 5.0), (-0.5, 0.5), (-5.0, 5.0)],
            output_range: (0.0, 5.0),
        }
    }
}

pub fn genome_dim(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Flat parameter vector searched by the genetic algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGenome(Vec<f64>);

impl MlpGenome {
    /// Builds a genome, clamping every gene to `[-WEIGHT_LIMIT, WEIGHT_LIMIT]`.
    pub fn new(genes: Vec<f64>) -> Result<Self> {
        if genes.len() != GENOME_DIM {
            return Err(Error::Codec(format!(
                "genome has {} genes, expected {GENOME_DIM}",
                genes.len()
            )));
        }
        if let Some(i) = genes.iter().position(|g| !g.is_finite()) {
            return Err(Error::Codec(format!("gene {i} is not finite")));
        }
        Ok(Self(
            genes
                .into_iter()
                .map(|g| g.clamp(-WEIGHT_LIMIT, WEIGHT_LIMIT))
                .collect(),
        ))
    }

    pub fn zeros() -> Self {
        Self(vec![0.0; GENOME_DIM])
    }

    pub fn genes(&self) -> &[f64] {
        &self.0
    }

    pub fn into_genes(self) -> Vec<f64> {
        self.0
    }

    /// One value per line, 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(GENOME_DIM * 26);
        for g in &self.0 {
            let _ = writeln!(out, "{g:.16e}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let genes = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .enumerate()
            .map(|(i, l)| {
                l.parse::<f64>()
                    .map_err(|e| Error::Codec(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(genes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_out x fan_in`
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    pub layers: Vec<Layer>,
}

pub fn decode_genome(genome: &MlpGenome) -> MlpWeights {
    let genes = genome.genes();
    let mut at = 0;
    let layers = LAYER_SIZES
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights =
                DMatrix::from_row_slice(fan_out, fan_in, &genes[at..at + fan_in * fan_out]);
            at += fan_in * fan_out;
            let bias = DVector::from_column_slice(&genes[at..at + fan_out]);
            at += fan_out;
            Layer { weights, bias }
        })
        .collect();
    MlpWeights { layers }
}

pub fn encode_weights(weights: &MlpWeights) -> Result<MlpGenome> {
    let mut genes = Vec::with_capacity(GENOME_DIM);
    for layer in &weights.layers {
        for row in layer.weights.row_iter() {
            genes.extend(row.iter());
        }
        genes.extend(layer.bias.iter());
    }
    MlpGenome::new(genes)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Maps the reference-relative state onto the normalized, clamped network
/// inputs.
pub fn normalize_inputs(arch: &MlpArchitecture, x_hat: &Vector4<f64>, r: f64) -> DVector<f64> {
    let e = x_hat - reference_state(r);
    DVector::from_iterator(
        4,
        e.iter()
            .zip(&arch.input_ranges)
            .map(|(v, (lo, hi))| (2.0 * (v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)),
    )
}

/// Network output voltage, strictly inside the output range.
pub fn mlp_forward(arch: &MlpArchitecture, w: &MlpWeights, x_hat: &Vector4<f64>, r: f64) -> f64 {
    let mut a = normalize_inputs(arch, x_hat, r);
    for layer in &w.layers {
        a = (&layer.weights * a + &layer.bias).map(sigmoid);
    }
    let (lo, hi) = arch.output_range;
    // the sigmoid rounds to exactly 0 or 1 for large |z|
    let inset = (hi - lo) * 1e-12;
    (lo + (hi - lo) * a[0]).clamp(lo + inset, hi - inset)
}

/// Neural controller sharing the LQG design's Kalman estimator.
#[derive(Debug, Clone)]
pub struct NeuralRuntime {
    pub arch: MlpArchitecture,
    pub weights: MlpWeights,
    pub design: LqgDesign,
    pub estimator: Estimator,
}

impl NeuralRuntime {
    pub fn new(weights: MlpWeights, design: LqgDesign, estimator: Estimator) -> Self {
        Self {
            arch: MlpArchitecture::default(),
            weights,
            design,
            estimator,
        }
    }

    pub fn step(&mut self, meas: &Measurement, r: f64) -> Result<f64> {
        let x_hat = self.estimator.update(&self.design, meas)?;
        let v = mlp_forward(&self.arch, &self.weights, &x_hat, r);
        self.estimator.commit(&self.design, v);
        Ok(v)
    }
}

/// Fraction of samples whose drive voltage sits more than `margin` volts away
/// from the neutral voltage.
pub fn bang_bang_fraction(voltages: &[f64], neutral: f64, margin: f64) -> f64 {
    if voltages.is_empty() {
        return 0.0;
    }
    voltages
        .iter()
        .filter(|v| (*v - neutral).abs() > margin)
        .count() as f64
        / voltages.len() as f64
}
