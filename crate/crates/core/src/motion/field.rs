//! Per-splat position deltas from a hash-grid encoding followed by an MLP.
//!
//! Checkpoint layout, all little-endian:
//!
//! ```text
//! magic      b"GVMF"
//! version    u32 (1)
//! levels     u32
//! features   u32
//! log2_table u32
//! base_res   u32
//! max_res    u32
//! input_dim  u32
//! hidden     u32
//! bbox_min   3 x f64
//! extent     3 x f64
//! scale      f64
//! per level: entries u32, then entries * features x f32
//! mlp:       w1, b1, w2, b2, w3, b3 as f64
//! ```

use std::io::{Read, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::hashgrid::{level_corners, HashGridConfig, HashTables};
use super::mlp::{Activations, Mlp, HIDDEN, OUTPUT};
use crate::error::{Error, Result};
use crate::splat::Aabb;

const MAGIC: &[u8; 4] = b"GVMF";
const VERSION: u32 = 1;
const TABLE_INIT: f32 = 1e-4;
const CHUNK: usize = 128;
/// Floor on each bbox axis so flat clouds still normalize.
const MIN_EXTENT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct MotionField {
    pub tables: HashTables,
    pub mlp: Mlp,
    bbox_min: [f64; 3],
    extent: [f64; 3],
    /// Output multiplier and bound on `|Δx|`: the bbox diagonal.
    scale: f64,
}

impl MotionField {
    pub fn new(cfg: HashGridConfig, bbox: &Aabb, seed: u64) -> Result<MotionField> {
        let mut tables = HashTables::zeros(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in tables.data.iter_mut().flatten() {
            *v = rng.gen_range(-TABLE_INIT..TABLE_INIT);
        }
        let bbox_min = bbox.min.map(|v| v as f64);
        let extent = bbox.extent().map(|v| (v as f64).max(MIN_EXTENT));
        let scale = extent.iter().map(|e| e * e).sum::<f64>().sqrt();
        if !scale.is_finite() {
            return Err(Error::invalid("bounding box is not finite"));
        }
        Ok(MotionField {
            tables,
            mlp: Mlp::new(cfg.feature_dim(), seed ^ 0x9e37_79b9_7f4a_7c15),
            bbox_min,
            extent,
            scale,
        })
    }

    pub fn config(&self) -> &HashGridConfig {
        &self.tables.cfg
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn normalize(&self, p: [f32; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| ((p[a] as f64 - self.bbox_min[a]) / self.extent[a]).clamp(0.0, 1.0))
    }

    fn clamp_output(&self, o: [f64; OUTPUT]) -> ([f64; 3], f64) {
        let d = o.map(|v| v * self.scale);
        let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let k = if n > self.scale { self.scale / n } else { 1.0 };
        (d.map(|v| v * k), k)
    }

    pub fn delta(&self, p: [f32; 3]) -> [f64; 3] {
        let feat = super::hashgrid::hash_encode(self.normalize(p), &self.tables);
        self.clamp_output(self.mlp.forward(&feat).0).0
    }

    pub fn predict_delta(&self, points: &[[f32; 3]]) -> Vec<[f32; 3]> {
        points.par_iter().map(|p| self.delta(*p).map(|v| v as f32)).collect()
    }

    /// `x + Δx` for every point.
    pub fn warp(&self, points: &[[f32; 3]]) -> Vec<[f32; 3]> {
        points
            .par_iter()
            .map(|p| {
                let d = self.delta(*p);
                [0, 1, 2].map(|a| (p[a] as f64 + d[a]) as f32)
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = self.config();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            cfg.levels as u32,
            cfg.features as u32,
            cfg.log2_table_size,
            cfg.base_resolution,
            cfg.max_resolution,
            self.mlp.input as u32,
            HIDDEN as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.bbox_min.iter().chain(&self.extent).chain([&self.scale]) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for (l, level) in self.tables.data.iter().enumerate() {
            out.extend_from_slice(&(cfg.level_entries(l) as u32).to_le_bytes());
            for v in level {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for p in self.mlp.params() {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<MotionField> {
        let mut r = bytes;
        let bad = |m: &str| Error::Bitstream(format!("motion checkpoint: {m}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut u32s = [0u32; 8];
        for v in &mut u32s {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
            *v = u32::from_le_bytes(b);
        }
        let [version, levels, features, log2, base, max, input, hidden] = u32s;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let cfg = HashGridConfig {
            levels: levels as usize,
            features: features as usize,
            log2_table_size: log2,
            base_resolution: base,
            max_resolution: max,
        };
        cfg.validate()?;
        if hidden as usize != HIDDEN || input as usize != cfg.feature_dim() {
            return Err(bad("network shape does not match the grid"));
        }
        let mut f64s = [0.0f64; 7];
        for v in &mut f64s {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
            *v = f64::from_le_bytes(b);
        }
        let mut tables = HashTables::zeros(cfg)?;
        for (l, level) in tables.data.iter_mut().enumerate() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| bad("truncated table"))?;
            if u32::from_le_bytes(b) as usize != cfg.level_entries(l) {
                return Err(bad(&format!("level {l} size mismatch")));
            }
            for v in level.iter_mut() {
                r.read_exact(&mut b).map_err(|_| bad("truncated table"))?;
                *v = f32::from_le_bytes(b);
            }
        }
        let mut mlp = Mlp::new(cfg.feature_dim(), 0);
        for p in mlp.params_mut() {
            for v in p.iter_mut() {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(|_| bad("truncated network"))?;
                *v = f64::from_le_bytes(b);
            }
        }
        if !r.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(MotionField {
            tables,
            mlp,
            bbox_min: [f64s[0], f64s[1], f64s[2]],
            extent: [f64s[3], f64s[4], f64s[5]],
            scale: f64s[6],
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<MotionField> {
        MotionField::from_bytes(&std::fs::read(path)?)
    }
}

/// Scalar loss over predicted positions and its gradient per position.
pub trait MotionObjective: Sync {
    fn evaluate(&self, predicted: &[[f64; 3]]) -> Result<(f64, Vec<[f64; 3]>)>;
}

impl<F> MotionObjective for F
where
    F: Fn(&[[f64; 3]]) -> Result<(f64, Vec<[f64; 3]>)> + Sync,
{
    fn evaluate(&self, predicted: &[[f64; 3]]) -> Result<(f64, Vec<[f64; 3]>)> {
        self(predicted)
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

/// Mean squared distance to known per-point targets.
pub struct SupervisedL2 {
    targets: Vec<[f64; 3]>,
}

impl SupervisedL2 {
    pub fn new(targets: &[[f32; 3]]) -> Self {
        SupervisedL2 {
            targets: targets.iter().map(|p| p.map(|v| v as f64)).collect(),
        }
    }
}

impl MotionObjective for SupervisedL2 {
    fn evaluate(&self, predicted: &[[f64; 3]]) -> Result<(f64, Vec<[f64; 3]>)> {
        if predicted.len() != self.targets.len() {
            return Err(Error::LengthMismatch(predicted.len(), self.targets.len()));
        }
        let n = predicted.len() as f64;
        let loss = predicted.iter().zip(&self.targets).map(|(p, t)| dist2(p, t)).sum::<f64>() / n;
        let grad = predicted
            .iter()
            .zip(&self.targets)
            .map(|(p, t)| [0, 1, 2].map(|k| 2.0 * (p[k] - t[k]) / n))
            .collect();
        Ok((loss, grad))
    }
}

/// Symmetric squared chamfer distance to an unordered target cloud.
pub struct Chamfer {
    target: Vec<[f64; 3]>,
    tree: ImmutableKdTree<f64, 3>,
}

impl Chamfer {
    pub fn new(target: &[[f32; 3]]) -> Result<Self> {
        if target.is_empty() {
            return Err(Error::EmptyFrame);
        }
        let target: Vec<[f64; 3]> = target.iter().map(|p| p.map(|v| v as f64)).collect();
        let tree = ImmutableKdTree::new_from_slice(&target);
        Ok(Chamfer { target, tree })
    }

    pub fn distance(&self, points: &[[f64; 3]]) -> Result<f64> {
        Ok(self.evaluate(points)?.0)
    }
}

impl MotionObjective for Chamfer {
    fn evaluate(&self, predicted: &[[f64; 3]]) -> Result<(f64, Vec<[f64; 3]>)> {
        if predicted.is_empty() {
            return Err(Error::EmptyFrame);
        }
        let (n, m) = (predicted.len() as f64, self.target.len() as f64);
        let forward: Vec<(f64, usize)> = predicted
            .par_iter()
            .map(|p| {
                let nn = self.tree.nearest_one::<SquaredEuclidean>(p);
                (nn.distance, nn.item as usize)
            })
            .collect();
        let pred_tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(predicted);
        let backward: Vec<(f64, usize)> = self
            .target
            .par_iter()
            .map(|q| {
                let nn = pred_tree.nearest_one::<SquaredEuclidean>(q);
                (nn.distance, nn.item as usize)
            })
            .collect();
        let mut grad = vec![[0.0; 3]; predicted.len()];
        let mut loss = 0.0;
        for (i, (d, j)) in forward.iter().enumerate() {
            loss += d / n;
            for k in 0..3 {
                grad[i][k] += 2.0 * (predicted[i][k] - self.target[*j][k]) / n;
            }
        }
        for (j, (d, i)) in backward.iter().enumerate() {
            loss += d / m;
            for k in 0..3 {
                grad[*i][k] += 2.0 * (predicted[*i][k] - self.target[j][k]) / m;
            }
        }
        Ok((loss, grad))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub iterations: usize,
    pub lr_tables: f64,
    pub lr_mlp: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            iterations: 500,
            lr_tables: 1e-2,
            lr_mlp: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub field: MotionField,
    /// Loss before each update.
    pub losses: Vec<f64>,
    pub final_loss: f64,
    pub elapsed: Duration,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// One step with bias correction for step `t` (1-based).
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, t: i32, o: &FitOptions) {
        let c1 = 1.0 - o.beta1.powi(t);
        let c2 = 1.0 - o.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = o.beta1 * self.m[i] + (1.0 - o.beta1) * g;
            self.v[i] = o.beta2 * self.v[i] + (1.0 - o.beta2) * g * g;
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + o.eps);
        }
    }
}

/// Table entries reachable from a fixed point set, with each point's corners resolved to
/// compact slots.
struct Footprint {
    /// `(level, entry)` per slot.
    entries: Vec<(usize, u32)>,
    /// `n * levels * 8` slot ids.
    slots: Vec<u32>,
    weights: Vec<f64>,
}

impl Footprint {
    fn new(field: &MotionField, points: &[[f32; 3]]) -> Footprint {
        let cfg = *field.config();
        let per_point: Vec<Vec<([u32; 8], [f64; 8])>> = points
            .par_iter()
            .map(|p| {
                let x = field.normalize(*p);
                (0..cfg.levels).map(|l| level_corners(&cfg, l, x)).collect()
            })
            .collect();
        let mut entries = Vec::new();
        let mut slots = Vec::with_capacity(points.len() * cfg.levels * 8);
        let mut weights = Vec::with_capacity(points.len() * cfg.levels * 8);
        let mut maps: Vec<std::collections::HashMap<u32, u32>> = vec![Default::default(); cfg.levels];
        for corners in &per_point {
            for (l, (index, weight)) in corners.iter().enumerate() {
                for c in 0..8 {
                    let slot = *maps[l].entry(index[c]).or_insert_with(|| {
                        entries.push((l, index[c]));
                        (entries.len() - 1) as u32
                    });
                    slots.push(slot);
                    weights.push(weight[c]);
                }
            }
        }
        Footprint {
            entries,
            slots,
            weights,
        }
    }
}

/// Fits a motion field so that `x_prev + Δx` minimizes `objective`.
pub fn fit_motion(
    x_prev: &[[f32; 3]],
    objective: &dyn MotionObjective,
    cfg: HashGridConfig,
    opts: &FitOptions,
) -> Result<FitReport> {
    let start = Instant::now();
    let bbox = Aabb::from_points(x_prev).ok_or(Error::EmptyFrame)?;
    if x_prev.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite input position"));
    }
    let mut field = MotionField::new(cfg, &bbox, opts.seed)?;
    let fp = Footprint::new(&field, x_prev);
    let f = cfg.features;
    let levels = cfg.levels;
    let stride = levels * 8;
    let mut values: Vec<f64> = fp
        .entries
        .iter()
        .flat_map(|(l, e)| field.tables.entry(*l, *e).iter().map(|v| *v as f64).collect::<Vec<_>>())
        .collect();
    let mut table_adam = Adam::new(values.len());
    let mut mlp_adam: Vec<Adam> = field.mlp.params().iter().map(|p| Adam::new(p.len())).collect();
    let points: Vec<[f64; 3]> = x_prev.iter().map(|p| p.map(|v| v as f64)).collect();
    let n = points.len();

    let encode = |values: &[f64], i: usize| -> Vec<f64> {
        let mut feat = vec![0.0; levels * f];
        for l in 0..levels {
            for c in 0..8 {
                let k = i * stride + l * 8 + c;
                let s = fp.slots[k] as usize * f;
                let w = fp.weights[k];
                for j in 0..f {
                    feat[l * f + j] += w * values[s + j];
                }
            }
        }
        feat
    };

    let mut losses = Vec::with_capacity(opts.iterations);
    let total = opts.iterations.max(1) as f64;
    for it in 0..=opts.iterations {
        let mlp = &field.mlp;
        let forward: Vec<(Vec<f64>, Activations, [f64; 3], f64)> = (0..n)
            .into_par_iter()
            .with_min_len(CHUNK)
            .map(|i| {
                let feat = encode(&values, i);
                let (o, act) = mlp.forward(&feat);
                let (d, k) = field.clamp_output(o);
                (feat, act, d, k)
            })
            .collect();
        let predicted: Vec<[f64; 3]> = forward
            .iter()
            .zip(&points)
            .map(|((_, _, d, _), p)| [p[0] + d[0], p[1] + d[1], p[2] + d[2]])
            .collect();
        let (loss, grad) = objective.evaluate(&predicted)?;
        if !loss.is_finite() || grad.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { iteration: it, loss });
        }
        if it == opts.iterations {
            losses.shrink_to_fit();
            write_back(&mut field, &fp, &values);
            return Ok(FitReport {
                field,
                losses,
                final_loss: loss,
                elapsed: start.elapsed(),
            });
        }
        losses.push(loss);

        let scale = field.scale;
        let chunks: Vec<(Mlp, Vec<f64>)> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let lo = c * CHUNK;
                let hi = (lo + CHUNK).min(n);
                let mut g = mlp.zeros_like();
                let mut dfeat = vec![0.0; (hi - lo) * levels * f];
                for i in lo..hi {
                    let (feat, act, _, k) = &forward[i];
                    // the norm clamp factor is treated as a constant
                    let dout = grad[i].map(|v| v * scale * k);
                    mlp.backward(feat, act, dout, &mut g, &mut dfeat[(i - lo) * levels * f..(i - lo + 1) * levels * f]);
                }
                (g, dfeat)
            })
            .collect();
        let mut mlp_grad = mlp.zeros_like();
        let mut table_grad = vec![0.0; values.len()];
        for (c, (g, dfeat)) in chunks.iter().enumerate() {
            mlp_grad.add_assign(g);
            for (r, df) in dfeat.chunks_exact(levels * f).enumerate() {
                let i = c * CHUNK + r;
                for l in 0..levels {
                    let d = &df[l * f..(l + 1) * f];
                    if d.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    for cn in 0..8 {
                        let k = i * stride + l * 8 + cn;
                        let s = fp.slots[k] as usize * f;
                        let w = fp.weights[k];
                        for j in 0..f {
                            table_grad[s + j] += w * d[j];
                        }
                    }
                }
            }
        }

        let decay = 0.5 * (1.0 + (std::f64::consts::PI * it as f64 / total).cos());
        let t = it as i32 + 1;
        table_adam.step(&mut values, &table_grad, opts.lr_tables * decay, t, opts);
        values.iter_mut().for_each(|v| *v = *v as f32 as f64);
        for ((p, g), adam) in field.mlp.params_mut().into_iter().zip(mlp_grad.params()).zip(&mut mlp_adam) {
            adam.step(p, g, opts.lr_mlp * decay, t, opts);
        }
    }
    unreachable!("loop returns on its last iteration")
}

fn write_back(field: &mut MotionField, fp: &Footprint, values: &[f64]) {
    let f = field.config().features;
    for (s, (l, e)) in fp.entries.iter().enumerate() {
        let dst = &mut field.tables.data[*l][*e as usize * f..(*e as usize + 1) * f];
        for j in 0..f {
            dst[j] = values[s * f + j] as f32;
        }
    }
}
