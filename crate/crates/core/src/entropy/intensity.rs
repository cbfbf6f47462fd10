//! Intensity models conditioned on the previous decoded sweep.
//!
//! Each current point looks up its `k` nearest points in the aligned previous sweep. Every
//! neighbor becomes an 8-value feature: intensity/255, position normalized by the ROI, the
//! offset to the current point in meters (clamped to +-4), and the distance (clamped to 4).
//! Missing neighbors (empty previous sweep) use zeros and distance 4.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{IntensityVariant, ModelDims, OUTPUT_INIT_GAIN, SYMBOLS};
use crate::error::{Error, Result};
use crate::neighbors::SpatialIndex;
use crate::nn::{Checkpoint, ContinuousConv, Graph, Matrix, Mlp, ParamStore, Var};
use crate::pointcloud::{RegionOfInterest, Sweep, Vec3};

pub const INTENSITY_FEATURES: usize = 8;
const CLAMP: f64 = 4.0;

/// Previous decoded sweep (already in the current frame) prepared for neighbor queries.
#[derive(Debug, Clone)]
pub struct IntensityContext {
    index: SpatialIndex,
    intensities: Vec<u8>,
    roi: RegionOfInterest,
}

/// Batched neighbor features for a set of query points.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborBatch {
    pub k: usize,
    /// `n * k` rows of [`INTENSITY_FEATURES`].
    pub features: Matrix,
    /// `n * k` rows of clamped offsets in meters.
    pub offsets: Matrix,
}

impl IntensityContext {
    pub fn new(prev_aligned: &Sweep, roi: &RegionOfInterest) -> Self {
        IntensityContext {
            index: SpatialIndex::new(prev_aligned.positions()),
            intensities: prev_aligned.points.iter().map(|p| p.intensity).collect(),
            roi: *roi,
        }
    }

    pub fn empty(roi: &RegionOfInterest) -> Self {
        Self::new(&Sweep::new(Vec::new(), 0), roi)
    }

    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }

    pub fn neighbors(&self, queries: &[Vec3], k: usize) -> NeighborBatch {
        let n = queries.len();
        let mut features = Matrix::zeros(n * k, INTENSITY_FEATURES);
        let mut offsets = Matrix::zeros(n * k, 3);
        for (i, q) in queries.iter().enumerate() {
            let found = self.index.knn(q, k);
            for j in 0..k {
                let row = i * k + j;
                let f = features.row_mut(row);
                let Some(nb) = found.get(j) else {
                    f[7] = CLAMP;
                    continue;
                };
                f[0] = f64::from(self.intensities[nb.id]) / 255.0;
                for a in 0..3 {
                    f[1 + a] = (nb.position[a] - self.roi.center[a]) / self.roi.side;
                    f[4 + a] = (nb.position[a] - q[a]).clamp(-CLAMP, CLAMP);
                }
                f[7] = nb.dist_sq.sqrt().min(CLAMP);
                let d = [f[4], f[5], f[6]];
                offsets.row_mut(row).copy_from_slice(&d);
            }
        }
        NeighborBatch {
            k,
            features,
            offsets,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Nets {
    trunk: Mlp,
    kernel: Option<ContinuousConv>,
    head: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityModel {
    pub variant: IntensityVariant,
    pub dims: ModelDims,
    pub seed: u64,
    pub steps: u64,
    store: ParamStore,
    nets: Option<Nets>,
}

impl IntensityModel {
    pub fn new(variant: IntensityVariant, dims: ModelDims, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let nets = (variant != IntensityVariant::Passthrough).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = dims.intensity_hidden;
            let trunk = Mlp::new(
                &mut store,
                "int.trunk",
                &[INTENSITY_FEATURES, h, h, h, h],
                true,
                &mut rng,
            );
            let kernel = (variant == IntensityVariant::CC).then(|| {
                ContinuousConv::new(&mut store, "int.kernel", &dims.kernel_hidden, h, &mut rng)
            });
            let head = Mlp::new(&mut store, "int.head", &[h, SYMBOLS], false, &mut rng);
            head.scale_last(&mut store, OUTPUT_INIT_GAIN);
            Nets {
                trunk,
                kernel,
                head,
            }
        });
        IntensityModel {
            variant,
            dims,
            seed,
            steps: 0,
            store,
            nets,
        }
    }

    /// Neighbors consulted per point.
    pub fn k(&self) -> usize {
        match self.variant {
            IntensityVariant::Passthrough => 0,
            IntensityVariant::Mlp1 => 1,
            IntensityVariant::CC => self.dims.knn,
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Logits for `n` points whose neighbor batch is `nb`.
    pub fn logits(&self, g: &mut Graph, nb: &NeighborBatch, n: usize) -> Var {
        let nets = self.nets.as_ref().expect("learned variant");
        let x = g.input(nb.features.clone());
        let h = nets.trunk.forward(g, x);
        let z = match &nets.kernel {
            Some(cc) => {
                let d = g.input(nb.offsets.clone());
                let src = (0..(n * nb.k) as u32).map(Some).collect();
                let dst = (0..(n * nb.k) as u32).map(|e| e / nb.k as u32).collect();
                cc.forward(g, h, d, src, dst, n)
            }
            None => h,
        };
        nets.head.forward(g, z)
    }

    /// One distribution per query point.
    pub fn probs(&self, ctx: &IntensityContext, queries: &[Vec3]) -> Matrix {
        if self.nets.is_none() {
            return Matrix::filled(queries.len(), SYMBOLS, 1.0 / SYMBOLS as f64);
        }
        let nb = ctx.neighbors(queries, self.k());
        let mut g = Graph::new(&self.store);
        let l = self.logits(&mut g, &nb, queries.len());
        crate::nn::softmax(g.value(l))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::default();
        c.meta.insert("kind".into(), "intensity".into());
        c.meta.insert("variant".into(), self.variant.name().into());
        c.meta.insert("dims".into(), self.dims.to_meta());
        c.meta.insert("seed".into(), self.seed.to_string());
        c.meta.insert("step".into(), self.steps.to_string());
        c.tensors = self.store.to_named();
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.meta_str("kind")? != "intensity" {
            return Err(Error::Model("not an intensity checkpoint".into()));
        }
        let variant: IntensityVariant = c.meta_str("variant")?.parse()?;
        let dims = ModelDims::from_meta(c.meta_str("dims")?)?;
        let mut m = IntensityModel::new(variant, dims, c.meta_parse("seed")?);
        m.steps = c.meta_parse("step")?;
        m.store.load_from(&c.tensors)?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::Point;

    #[test]
    fn neighbor_features() {
        let roi = RegionOfInterest::new(10.0, [0.0; 3]).unwrap();
        let prev = Sweep::new(
            vec![
                Point::new([1.0, 0.0, 0.0], 255),
                Point::new([9.0, 0.0, 0.0], 0),
            ],
            0,
        );
        let ctx = IntensityContext::new(&prev, &roi);
        let nb = ctx.neighbors(&[[0.0, 0.0, 0.0]], 3);
        assert_eq!(
            nb.features.row(0),
            &[1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]
        );
        assert_eq!(
            nb.features.row(1),
            &[0.0, 0.9, 0.0, 0.0, 4.0, 0.0, 0.0, 4.0]
        );
        assert_eq!(
            nb.features.row(2),
            &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 4.0]
        );
        assert_eq!(nb.offsets.row(1), &[4.0, 0.0, 0.0]);
    }

    #[test]
    fn fresh_models_are_near_uniform() {
        let roi = RegionOfInterest::default();
        let prev = Sweep::new(vec![Point::new([1.0, 2.0, 0.0], 40)], 0);
        let ctx = IntensityContext::new(&prev, &roi);
        for v in IntensityVariant::ALL {
            let m = IntensityModel::new(v, ModelDims::compact(), 3);
            let p = m.probs(&ctx, &[[0.0; 3], [1.0, 1.0, 1.0]]);
            assert!(
                p.data().iter().all(|&x| (x * 256.0 - 1.0).abs() < 0.2),
                "{v}"
            );
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = IntensityModel::new(IntensityVariant::CC, ModelDims::compact(), 9);
        let back = IntensityModel::from_checkpoint(
            &Checkpoint::from_bytes(&m.to_checkpoint().to_bytes()).unwrap(),
        )
        .unwrap();
        assert_eq!(back, m);
    }
}
