//! Weight forensics and experiment reports.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::datasets::{sinusoid_predictors, SinusoidParams, SINUSOID_BINS, SINUSOID_N};
use crate::error::{Error, Result};
use crate::layers::{Conv1d, Linear};
use crate::tensor::Tensor;
use crate::train::{stream_rng, Mlp};

/// A layer's weights as `[out, in + 1]` with the bias in column 0, plus the
/// display order of the rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightMap {
    pub matrix: Vec<Vec<f64>>,
    /// `order[i]` is the original index of displayed row `i`.
    pub order: Vec<usize>,
}

impl WeightMap {
    pub fn new(matrix: Vec<Vec<f64>>) -> Result<Self> {
        let cols = matrix.first().map_or(0, Vec::len);
        if matrix.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("weight rows differ in length"));
        }
        let order = (0..matrix.len()).collect();
        Ok(WeightMap { matrix, order })
    }

    pub fn from_linear(layer: &Linear) -> Result<Self> {
        Self::new(layer.weight_map()?)
    }

    /// Kernel-1 real convolution viewed as a fully connected layer.
    pub fn from_conv(layer: &Conv1d) -> Result<Self> {
        let c = &layer.config;
        if c.kernel != 1 || c.groups != 1 {
            return Err(Error::invalid("only ungrouped kernel-1 convolutions map to a matrix"));
        }
        let w = layer.weight.value.real_data()?;
        let b = match &layer.bias {
            Some(b) => b.value.real_data()?.to_vec(),
            None => vec![0.0; c.out_channels],
        };
        Self::new(
            (0..c.out_channels)
                .map(|o| {
                    std::iter::once(b[o])
                        .chain(w[o * c.in_channels..(o + 1) * c.in_channels].iter().copied())
                        .collect()
                })
                .collect(),
        )
    }

    pub fn rows(&self) -> usize {
        self.matrix.len()
    }

    pub fn cols(&self) -> usize {
        self.matrix.first().map_or(0, Vec::len)
    }

    /// Rows in display order.
    pub fn ordered(&self) -> Vec<&[f64]> {
        self.order.iter().map(|&i| self.matrix[i].as_slice()).collect()
    }

    /// Entries divided by the largest magnitude, so they lie in [−1, 1].
    pub fn normalized(&self) -> WeightMap {
        let m = self
            .matrix
            .iter()
            .flatten()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        let s = if m > 0.0 { 1.0 / m } else { 1.0 };
        WeightMap {
            matrix: self.matrix.iter().map(|r| r.iter().map(|v| v * s).collect()).collect(),
            order: self.order.clone(),
        }
    }

    /// Sign of the bias (column 0) of each displayed row.
    pub fn bias_signs(&self) -> Vec<i8> {
        self.ordered()
            .iter()
            .map(|r| match r.first() {
                Some(&b) if b > 0.0 => 1,
                Some(&b) if b < 0.0 => -1,
                _ => 0,
            })
            .collect()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Greedy chain ordering: start from the most similar pair of rows, then keep
/// appending the unplaced row most similar to the chain end. Ties go to the
/// lower index.
pub fn reorder_rows(w: &WeightMap) -> Result<WeightMap> {
    let n = w.rows();
    if n < 2 {
        return Err(Error::invalid("reordering needs at least two rows"));
    }
    let sim = |i: usize, j: usize| cosine(&w.matrix[i], &w.matrix[j]);
    let mut best = (0, 1, f64::NEG_INFINITY);
    for i in 0..n {
        for j in i + 1..n {
            let s = sim(i, j);
            if s > best.2 {
                best = (i, j, s);
            }
        }
    }
    let mut chain = vec![best.0, best.1];
    let mut placed = vec![false; n];
    placed[best.0] = true;
    placed[best.1] = true;
    while chain.len() < n {
        let end = *chain.last().expect("chain is never empty");
        let mut next = (usize::MAX, f64::NEG_INFINITY);
        for j in (0..n).filter(|&j| !placed[j]) {
            let s = sim(end, j);
            if s > next.1 {
                next = (j, s);
            }
        }
        placed[next.0] = true;
        chain.push(next.0);
    }
    Ok(WeightMap {
        matrix: w.matrix.clone(),
        order: chain,
    })
}

/// Inverts a row permutation.
pub fn invert_permutation(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (i, &o) in order.iter().enumerate() {
        inv[o] = i;
    }
    inv
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexBlock {
    /// Displayed rows `(r, r + 1)`.
    pub rows: (usize, usize),
    /// Matrix columns `(c, c + 1)`.
    pub cols: (usize, usize),
    pub w_r: f64,
    pub w_i: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComplexBlockReport {
    pub blocks: Vec<ComplexBlock>,
    /// Number of 2×2 blocks examined.
    pub scanned: usize,
}

/// Least-squares fit of `[[a, b], [c, d]]` to the template
/// `[[w_r, −w_i], [w_i, w_r]]`, returning `(w_r, w_i, residual)` with the
/// residual relative to the block norm (1 for an all-zero block).
pub fn fit_complex_block(a: f64, b: f64, c: f64, d: f64) -> (f64, f64, f64) {
    let wr = (a + d) / 2.0;
    let wi = (c - b) / 2.0;
    let norm = (a * a + b * b + c * c + d * d).sqrt();
    if norm == 0.0 {
        return (wr, wi, 1.0);
    }
    let res = ((a - wr).powi(2) + (b + wi).powi(2) + (c - wi).powi(2) + (d - wr).powi(2)).sqrt();
    (wr, wi, res / norm)
}

/// Scans every adjacent displayed row pair against every input column pair
/// `(2k + 1, 2k + 2)` (column 0 is the bias) and keeps blocks whose template
/// residual is below `tolerance`.
pub fn detect_complex_blocks(w: &WeightMap, tolerance: f64) -> Result<ComplexBlockReport> {
    if !(tolerance > 0.0 && tolerance < 1.0) {
        return Err(Error::invalid(format!("tolerance {tolerance} outside (0, 1)")));
    }
    let rows = w.ordered();
    let mut report = ComplexBlockReport::default();
    for r in 0..rows.len().saturating_sub(1) {
        let (top, bottom) = (rows[r], rows[r + 1]);
        let mut c = 1;
        while c + 1 < w.cols() {
            let (wr, wi, residual) = fit_complex_block(top[c], top[c + 1], bottom[c], bottom[c + 1]);
            report.scanned += 1;
            if residual < tolerance {
                report.blocks.push(ComplexBlock {
                    rows: (r, r + 1),
                    cols: (c, c + 1),
                    w_r: wr,
                    w_i: wi,
                    residual,
                });
            }
            c += 2;
        }
    }
    Ok(report)
}

/// Probability that a block with i.i.d. Gaussian entries passes `tolerance`:
/// its squared residual is uniform on [0, 1].
pub fn random_block_pass_rate(tolerance: f64) -> f64 {
    (tolerance * tolerance).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseProbe {
    pub a: f64,
    pub m: f64,
    pub phases: Vec<f64>,
    /// `traces[layer][unit][step]`.
    pub traces: Vec<Vec<Vec<f64>>>,
}

/// Feeds noise-free tones with fixed `a`, `m` and `steps` phases spread over
/// [−π, π] through `model`, recording every layer's outputs.
pub fn phase_sweep_probe(model: &Mlp, a: f64, m: f64, steps: usize) -> Result<PhaseProbe> {
    if steps == 0 {
        return Err(Error::invalid("phase sweep needs at least one step"));
    }
    let fft = FftPlanner::new().plan_fft_forward(SINUSOID_N);
    let mut rng = stream_rng(0, 0);
    let phases: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                0.0
            } else {
                -PI + 2.0 * PI * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut x = Vec::with_capacity(steps * 2 * SINUSOID_BINS);
    for &p in &phases {
        let params = SinusoidParams { a, m, p, noise: 0.0 };
        x.extend(sinusoid_predictors(&params, &mut rng, fft.as_ref()));
    }
    let layers = model.trace(&Tensor::real(vec![steps, 2 * SINUSOID_BINS], x)?)?;
    let traces = layers
        .iter()
        .map(|t| {
            let units = t.shape()[1];
            let v = t.real_data().expect("MLP activations are real");
            (0..units)
                .map(|u| (0..steps).map(|s| v[s * units + u]).collect())
                .collect()
        })
        .collect();
    Ok(PhaseProbe {
        a,
        m,
        phases,
        traces,
    })
}

fn diverging(v: f64) -> (u8, u8, u8) {
    let v = v.clamp(-1.0, 1.0);
    let lerp = |a: f64, b: f64, t: f64| (a + (b - a) * t).round() as u8;
    if v < 0.0 {
        let t = -v;
        (lerp(255.0, 59.0, t), lerp(255.0, 76.0, t), lerp(255.0, 192.0, t))
    } else {
        (lerp(255.0, 180.0, v), lerp(255.0, 4.0, v), lerp(255.0, 38.0, v))
    }
}

/// SVG heatmap of the normalised weights in display order, blue (−1) through
/// white (0) to red (+1).
pub fn render_heatmap(w: &WeightMap, cell: usize) -> String {
    let n = w.normalized();
    let cell = cell.max(1);
    let (rows, cols) = (n.rows(), n.cols());
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        cols * cell,
        rows * cell,
        cols * cell,
        rows * cell
    );
    for (r, row) in n.ordered().iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let (red, green, blue) = diverging(v);
            let _ = writeln!(
                svg,
                r##"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="#{red:02x}{green:02x}{blue:02x}"><title>{v:.3}</title></rect>"##,
                c * cell,
                r * cell
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// One trained model in a noise-condition comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// `None` for the noise-free condition.
    pub snr_db: Option<f64>,
    pub model: String,
    pub test_loss: f64,
    pub params: usize,
}

fn snr_label(snr: Option<f64>) -> String {
    snr.map_or_else(|| "none".to_string(), |s| format!("{s}"))
}

pub fn runs_csv(runs: &[RunRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["snr_db", "model", "test_loss", "params"])
        .map_err(|e| Error::invalid(e.to_string()))?;
    for r in runs {
        w.write_record([
            snr_label(r.snr_db),
            r.model.clone(),
            format!("{:.6}", r.test_loss),
            r.params.to_string(),
        ])
        .map_err(|e| Error::invalid(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn runs_markdown(runs: &[RunRecord]) -> String {
    let mut s = String::from("| SNR (dB) | Model | Test loss | Parameters |\n|---|---|---|---|\n");
    for r in runs {
        let _ = writeln!(
            s,
            "| {} | {} | {:.4} | {} |",
            snr_label(r.snr_db),
            r.model,
            r.test_loss,
            r.params
        );
    }
    s
}

/// Per-block activation choices of ranked architectures.
pub fn activations_csv(ranked: &[Vec<String>]) -> Result<String> {
    let blocks = ranked.iter().map(Vec::len).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = std::iter::once("rank".to_string())
        .chain((1..=blocks).map(|b| format!("block_{b}")))
        .collect();
    w.write_record(&header).map_err(|e| Error::invalid(e.to_string()))?;
    for (i, row) in ranked.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(row.iter().cloned());
        rec.resize(blocks + 1, String::new());
        w.write_record(&rec).map_err(|e| Error::invalid(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropPoint {
    pub ratio: f64,
    pub accuracy: f64,
    pub loss: f64,
}

/// −0.8 to 0.8 in steps of 0.1.
pub fn crop_ratios() -> Vec<f64> {
    (-8..=8).map(|i| i as f64 / 10.0).collect()
}

pub fn crop_csv(points: &[CropPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["crop_ratio", "accuracy", "test_loss"])
        .map_err(|e| Error::invalid(e.to_string()))?;
    for p in points {
        w.write_record([format!("{:.1}", p.ratio), format!("{:.6}", p.accuracy), format!("{:.6}", p.loss)])
            .map_err(|e| Error::invalid(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_block_is_detected() {
        let (wr, wi, res) = fit_complex_block(0.827, -0.986, 0.986, 0.819);
        assert!((wr - 0.823).abs() < 1e-12);
        assert!((wi - 0.986).abs() < 1e-12);
        assert!(res < 0.01);
    }

    #[test]
    fn exact_template_has_zero_residual() {
        assert_eq!(fit_complex_block(0.3, 0.7, -0.7, 0.3).2, 0.0);
        assert_eq!(fit_complex_block(0.0, 0.0, 0.0, 0.0).2, 1.0);
    }

    #[test]
    fn identical_rows_end_adjacent() {
        let w = WeightMap::new(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.01],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let r = reorder_rows(&w).unwrap();
        let pos = invert_permutation(&r.order);
        assert_eq!(pos[0].abs_diff(pos[2]), 1);
        let mut sorted = r.order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn single_cell_svg() {
        let svg = render_heatmap(&WeightMap::new(vec![vec![-0.5]]).unwrap(), 10);
        assert_eq!(svg.matches("<rect").count(), 1);
        assert!(svg.contains("fill=\"#3b4cc0\""));
    }

    #[test]
    fn table_layout() {
        let runs = vec![RunRecord {
            snr_db: Some(0.0),
            model: "HNN".into(),
            test_loss: 0.1,
            params: 18_000,
        }];
        let csv = runs_csv(&runs).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(runs_markdown(&runs).contains("| Test loss | Parameters |"));
        assert_eq!(crop_ratios().len(), 17);
    }
}
