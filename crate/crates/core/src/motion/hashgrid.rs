//! Multiresolution hash-grid encoding over the unit cube.

use crate::error::{Error, Result};

/// Spatial hash multipliers, one per axis.
pub const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashGridConfig {
    pub levels: usize,
    pub features: usize,
    pub log2_table_size: u32,
    pub base_resolution: u32,
    pub max_resolution: u32,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        HashGridConfig {
            levels: 16,
            features: 4,
            log2_table_size: 19,
            base_resolution: 16,
            max_resolution: 512,
        }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.features == 0 {
            return Err(Error::invalid("hash grid needs at least one level and one feature"));
        }
        if !(1..=26).contains(&self.log2_table_size) {
            return Err(Error::invalid(format!("log2 table size {} out of 1..=26", self.log2_table_size)));
        }
        if self.base_resolution == 0 || self.max_resolution < self.base_resolution {
            return Err(Error::invalid("need 1 <= base_resolution <= max_resolution"));
        }
        for l in 1..self.levels {
            if self.resolution(l) <= self.resolution(l - 1) {
                return Err(Error::invalid(format!(
                    "resolutions not strictly increasing at level {l} ({} -> {})",
                    self.resolution(l - 1),
                    self.resolution(l)
                )));
            }
        }
        Ok(())
    }

    pub fn table_size(&self) -> usize {
        1 << self.log2_table_size
    }

    pub fn feature_dim(&self) -> usize {
        self.levels * self.features
    }

    /// Per-level geometric growth factor.
    pub fn growth(&self) -> f64 {
        if self.levels == 1 {
            return 1.0;
        }
        ((self.max_resolution as f64).ln() - (self.base_resolution as f64).ln()) / (self.levels - 1) as f64
    }

    pub fn resolution(&self, level: usize) -> u32 {
        let r = self.base_resolution as f64 * (self.growth() * level as f64).exp();
        (r + 1e-9).floor() as u32
    }

    /// Coarse levels whose full vertex lattice fits in the table are indexed densely.
    pub fn is_dense(&self, level: usize) -> bool {
        let side = self.resolution(level) as u64 + 1;
        side * side * side <= self.table_size() as u64
    }

    pub fn level_entries(&self, level: usize) -> usize {
        if self.is_dense(level) {
            let side = self.resolution(level) as usize + 1;
            side * side * side
        } else {
            self.table_size()
        }
    }
}

/// Table entry for integer vertex `v` on `level`.
pub fn vertex_index(cfg: &HashGridConfig, level: usize, v: [u32; 3]) -> u32 {
    if cfg.is_dense(level) {
        let side = cfg.resolution(level) + 1;
        v[0] + side * (v[1] + side * v[2])
    } else {
        let h = v[0].wrapping_mul(PRIMES[0]) ^ v[1].wrapping_mul(PRIMES[1]) ^ v[2].wrapping_mul(PRIMES[2]);
        h & (cfg.table_size() as u32 - 1)
    }
}

/// The 8 cell vertices around `x` (in `[0,1]³`) with their trilinear weights.
///
/// Corner `c` is offset by bit 0 in x, bit 1 in y, bit 2 in z.
pub fn level_corners(cfg: &HashGridConfig, level: usize, x: [f64; 3]) -> ([u32; 8], [f64; 8]) {
    let res = cfg.resolution(level);
    let mut cell = [0u32; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let p = x[a].clamp(0.0, 1.0) * res as f64;
        let i = (p.floor() as u32).min(res - 1);
        cell[a] = i;
        frac[a] = p - i as f64;
    }
    let mut index = [0u32; 8];
    let mut weight = [0.0f64; 8];
    for c in 0..8 {
        let mut v = cell;
        let mut w = 1.0;
        for a in 0..3 {
            if c >> a & 1 == 1 {
                v[a] += 1;
                w *= frac[a];
            } else {
                w *= 1.0 - frac[a];
            }
        }
        index[c] = vertex_index(cfg, level, v);
        weight[c] = w;
    }
    (index, weight)
}

/// Per-level feature tables, `features` floats per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct HashTables {
    pub cfg: HashGridConfig,
    pub data: Vec<Vec<f32>>,
}

impl HashTables {
    pub fn zeros(cfg: HashGridConfig) -> Result<Self> {
        cfg.validate()?;
        let data = (0..cfg.levels).map(|l| vec![0.0; cfg.level_entries(l) * cfg.features]).collect();
        Ok(HashTables { cfg, data })
    }

    pub fn entry(&self, level: usize, index: u32) -> &[f32] {
        let f = self.cfg.features;
        &self.data[level][index as usize * f..(index as usize + 1) * f]
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().flatten().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

/// Concatenated per-level interpolated features, coarse to fine.
pub fn hash_encode(x: [f64; 3], tables: &HashTables) -> Vec<f64> {
    let cfg = &tables.cfg;
    let f = cfg.features;
    let mut out = vec![0.0; cfg.feature_dim()];
    for l in 0..cfg.levels {
        let (index, weight) = level_corners(cfg, l, x);
        let dst = &mut out[l * f..(l + 1) * f];
        for c in 0..8 {
            let e = tables.entry(l, index[c]);
            for k in 0..f {
                dst[k] += weight[c] * e[k] as f64;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> HashGridConfig {
        HashGridConfig {
            levels: 4,
            features: 2,
            log2_table_size: 10,
            base_resolution: 4,
            max_resolution: 32,
        }
    }

    fn random_tables(cfg: HashGridConfig, seed: u64) -> HashTables {
        let mut t = HashTables::zeros(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        t.data.iter_mut().flatten().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        t
    }

    #[test]
    fn default_schedule() {
        let cfg = HashGridConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.resolution(0), 16);
        assert_eq!(cfg.resolution(15), 512);
        assert_eq!(cfg.feature_dim(), 64);
        assert!(cfg.is_dense(0));
        assert!(!cfg.is_dense(15));
        assert!((0..16).all(|l| cfg.level_entries(l) <= cfg.table_size()));
        let flat = HashGridConfig { max_resolution: 16, ..cfg };
        assert!(flat.validate().is_err());
    }

    #[test]
    fn zero_tables_give_zero_features() {
        let t = HashTables::zeros(small()).unwrap();
        assert!(hash_encode([0.3, 0.7, 0.1], &t).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn vertex_reads_its_entry() {
        let cfg = small();
        let t = random_tables(cfg, 1);
        for x in [[0.0, 0.0, 0.0], [0.5, 0.25, 1.0], [1.0, 1.0, 1.0]] {
            let feat = hash_encode(x, &t);
            for l in 0..cfg.levels {
                let res = cfg.resolution(l) as f64;
                let v = x.map(|c| (c * res) as u32);
                let e = t.entry(l, vertex_index(&cfg, l, v));
                for k in 0..cfg.features {
                    assert!((feat[l * cfg.features + k] - e[k] as f64).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn cell_center_weights() {
        let cfg = small();
        let res = cfg.resolution(1) as f64;
        let x = [2.5 / res, 0.5 / res, 1.5 / res];
        let (_, w) = level_corners(&cfg, 1, x);
        for v in w {
            assert!((v - 0.125).abs() < 1e-12);
        }
    }

    #[test]
    fn hashed_index_uses_primes() {
        let cfg = HashGridConfig::default();
        let v = [3, 5, 7];
        let expect = (3u32 ^ 5u32.wrapping_mul(2_654_435_761) ^ 7u32.wrapping_mul(805_459_861)) & ((1 << 19) - 1);
        assert_eq!(vertex_index(&cfg, 15, v), expect);
    }

    proptest! {
        #[test]
        fn weights_form_a_partition(x in prop::array::uniform3(0.0f64..=1.0), level in 0usize..4) {
            let (_, w) = level_corners(&small(), level, x);
            prop_assert!(w.iter().all(|v| *v >= -1e-12));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn continuous_across_cells(axis in 0usize..3, cell in 1u32..4, y in prop::array::uniform3(0.0f64..1.0)) {
            let cfg = small();
            let t = random_tables(cfg, 2);
            let mut a = y;
            a[axis] = cell as f64 / cfg.resolution(0) as f64;
            let mut b = a;
            a[axis] -= 5e-7;
            b[axis] += 5e-7;
            let (fa, fb) = (hash_encode(a, &t), hash_encode(b, &t));
            let bound = 1e-4 * t.max_abs() as f64;
            for (p, q) in fa.iter().zip(&fb) {
                prop_assert!((p - q).abs() < bound);
            }
        }
    }
}
