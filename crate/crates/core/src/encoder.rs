//! Patch-transformer encoder: patch projection, learned positional table,
//! CLS token and a stack of pre-norm blocks.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::PatchGrid;
use crate::nn::{self, join, slice1, slice1_mut, slice2, slice2_mut, Block, BlockCache, Linear, Params};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub patch_dim: usize,
    pub num_patches: usize,
    pub init_std: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            dim: 128,
            heads: 4,
            mlp_ratio: 4,
            patch_dim: 256,
            num_patches: 512,
            init_std: 0.02,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::invalid("encoder.depth must be >= 1"));
        }
        if self.heads == 0 || self.dim == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::invalid("encoder.dim must be a positive multiple of encoder.heads"));
        }
        if self.mlp_ratio == 0 || self.patch_dim == 0 || self.num_patches == 0 {
            return Err(Error::invalid("encoder sizes must be positive"));
        }
        if !(self.init_std >= 0.0) {
            return Err(Error::invalid("encoder.init_std must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub patch_embed: Linear,
    /// Row 0 belongs to the CLS token, rows `1..=P` to the patches.
    pub pos_embed: Array2<f64>,
    pub cls_token: Array1<f64>,
    pub blocks: Vec<Block>,
}

impl Params for EncoderParams {
    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, Vec<usize>, &'a [f64])>) {
        self.patch_embed.named(&join(prefix, "patch_embed"), out);
        out.push((join(prefix, "pos_embed"), self.pos_embed.shape().to_vec(), slice2(&self.pos_embed)));
        out.push((join(prefix, "cls_token"), self.cls_token.shape().to_vec(), slice1(&self.cls_token)));
        for (i, b) in self.blocks.iter().enumerate() {
            b.named(&join(prefix, &format!("blocks.{i}")), out);
        }
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.patch_embed.tensors_mut(out);
        out.push(slice2_mut(&mut self.pos_embed));
        out.push(slice1_mut(&mut self.cls_token));
        for b in &mut self.blocks {
            b.tensors_mut(out);
        }
    }
}

/// Deterministic initialisation: truncated normal weights, identity norms,
/// zero biases.
pub fn init_params(config: &EncoderConfig, seed: u64) -> Result<EncoderParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = config.init_std;
    let d = config.dim;
    let patch_embed = Linear::new(&mut rng, config.patch_dim, d, std);
    let pos_embed = nn::trunc_normal(&mut rng, (config.num_patches + 1, d), std);
    let cls_token = nn::trunc_normal(&mut rng, (1, d), std).row(0).to_owned();
    let blocks = (0..config.depth)
        .map(|_| Block::new(&mut rng, d, config.heads, config.mlp_ratio, std))
        .collect();
    Ok(EncoderParams {
        config: config.clone(),
        patch_embed,
        pos_embed,
        cls_token,
        blocks,
    })
}

/// Encoder outputs for the retained patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbeddings {
    /// One row per retained patch, in ascending patch order.
    pub z: Array2<f64>,
    pub cls_out: Array1<f64>,
    /// Output of every block (patch rows only), first block first.
    pub per_layer: Vec<Array2<f64>>,
    /// Patch indices that were fed to the encoder.
    pub visible: Vec<usize>,
}

pub struct EncoderCache {
    visible: Vec<usize>,
    patch_input: Array2<f64>,
    blocks: Vec<BlockCache>,
}

/// Patch indices not covered by `mask`, ascending.
pub fn visible_indices(num_patches: usize, mask: Option<&[usize]>) -> Vec<usize> {
    match mask {
        None => (0..num_patches).collect(),
        Some(m) => {
            let mut hidden = vec![false; num_patches];
            for &i in m {
                if i < num_patches {
                    hidden[i] = true;
                }
            }
            (0..num_patches).filter(|&i| !hidden[i]).collect()
        }
    }
}

fn check_grid(grid: &PatchGrid, params: &EncoderParams) -> Result<()> {
    let cfg = &params.config;
    if grid.patches.nrows() + 1 != params.pos_embed.nrows() || grid.patches.ncols() != cfg.patch_dim {
        return Err(Error::shape(format!(
            "patch grid {}x{} does not match encoder ({} patches of {})",
            grid.patches.nrows(),
            grid.patches.ncols(),
            params.pos_embed.nrows() - 1,
            cfg.patch_dim
        )));
    }
    if grid.patches.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("encoder input".into()));
    }
    Ok(())
}

/// Full forward pass that keeps everything needed by [`backward`].
pub fn forward_train(
    patches: &ArrayView2<f64>,
    params: &EncoderParams,
    visible: &[usize],
) -> (PatchEmbeddings, EncoderCache) {
    let d = params.config.dim;
    let patch_input = patches.select(Axis(0), visible);
    let projected = params.patch_embed.forward(&patch_input.view());
    let mut x = Array2::zeros((visible.len() + 1, d));
    x.row_mut(0).assign(&(&params.cls_token + &params.pos_embed.row(0)));
    for (r, &p) in visible.iter().enumerate() {
        x.row_mut(r + 1)
            .assign(&(&projected.row(r) + &params.pos_embed.row(p + 1)));
    }
    let mut caches = Vec::with_capacity(params.blocks.len());
    let mut per_layer = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let (y, cache) = block.forward(&x.view());
        x = y;
        caches.push(cache);
        per_layer.push(x.slice(s![1.., ..]).to_owned());
    }
    let out = PatchEmbeddings {
        z: x.slice(s![1.., ..]).to_owned(),
        cls_out: x.row(0).to_owned(),
        per_layer,
        visible: visible.to_vec(),
    };
    let cache = EncoderCache {
        visible: visible.to_vec(),
        patch_input,
        blocks: caches,
    };
    (out, cache)
}

/// Backpropagates `d_tokens` (CLS row first, then one row per visible
/// patch, w.r.t. the final block output) into `grad`.
pub fn backward(params: &EncoderParams, cache: &EncoderCache, d_tokens: Array2<f64>, grad: &mut EncoderParams) {
    let mut dx = d_tokens;
    for ((block, bc), g) in params
        .blocks
        .iter()
        .zip(&cache.blocks)
        .zip(grad.blocks.iter_mut())
        .rev()
    {
        dx = block.backward(bc, &dx, g);
    }
    let dcls = dx.row(0);
    grad.cls_token += &dcls;
    {
        let mut pos0 = grad.pos_embed.row_mut(0);
        pos0 += &dcls;
    }
    for (r, &p) in cache.visible.iter().enumerate() {
        let mut pos = grad.pos_embed.row_mut(p + 1);
        pos += &dx.row(r + 1);
    }
    let dproj = dx.slice(s![1.., ..]).to_owned();
    params
        .patch_embed
        .backward(&cache.patch_input.view(), &dproj, &mut grad.patch_embed);
}

/// Encodes a patch grid; masked patches are dropped from the sequence.
pub fn forward(grid: &PatchGrid, params: &EncoderParams, mask: Option<&[usize]>) -> Result<PatchEmbeddings> {
    check_grid(grid, params)?;
    let visible = visible_indices(grid.num_patches(), mask);
    let (out, _) = forward_train(&grid.patches.view(), params, &visible);
    if out.z.iter().chain(out.cls_out.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("encoder output".into()));
    }
    Ok(out)
}

/// Mean over patch rows.
pub fn pool_embedding(z: &ArrayView2<f64>) -> Result<Array1<f64>> {
    z.mean_axis(Axis(0))
        .filter(|_| z.nrows() > 0)
        .ok_or_else(|| Error::invalid("cannot pool an empty patch set"))
}

const MAGIC: &[u8; 8] = b"ASDENC\0\0";
const VERSION: u32 = 1;

/// One named tensor of a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Flat binary checkpoint.
///
/// Layout (all integers `u32` little-endian): magic `ASDENC\0\0`, version,
/// tag length + UTF-8 tag, the six config fields (depth, dim, heads,
/// mlp_ratio, patch_dim, num_patches), blob count, then per blob: name
/// length, name bytes, rank, dims, `f32` little-endian payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tag: String,
    pub config: EncoderConfig,
    pub blobs: Vec<Blob>,
}

impl Checkpoint {
    pub fn new(tag: &str, config: &EncoderConfig) -> Self {
        Self {
            tag: tag.to_string(),
            config: config.clone(),
            blobs: Vec::new(),
        }
    }

    pub fn push_params<P: Params>(&mut self, prefix: &str, params: &P) {
        for (name, shape, data) in params.named_tensors() {
            self.blobs.push(Blob {
                name: join(prefix, &name),
                shape,
                data: data.iter().map(|&v| v as f32).collect(),
            });
        }
    }

    /// Fills every tensor of `params` from the blobs under `prefix`.
    pub fn load_params<P: Params>(&self, prefix: &str, params: &mut P) -> Result<()> {
        let wanted: Vec<(String, Vec<usize>)> = params
            .named_tensors()
            .into_iter()
            .map(|(n, s, _)| (join(prefix, &n), s))
            .collect();
        for ((name, shape), dst) in wanted.iter().zip(params.all_mut()) {
            let blob = self
                .blobs
                .iter()
                .find(|b| &b.name == name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))?;
            if &blob.shape != shape {
                return Err(Error::shape(format!(
                    "tensor {name}: checkpoint {:?}, model {:?}",
                    blob.shape, shape
                )));
            }
            for (d, &s) in dst.iter_mut().zip(&blob.data) {
                *d = s as f64;
            }
        }
        Ok(())
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        let p = format!("{prefix}.");
        self.blobs.iter().any(|b| b.name.starts_with(&p))
    }

    pub fn encoder(&self) -> Result<EncoderParams> {
        let mut cfg = self.config.clone();
        cfg.init_std = 0.0;
        let mut params = init_params(&cfg, 0)?;
        self.load_params("encoder", &mut params)?;
        params.config.init_std = EncoderConfig::default().init_std;
        Ok(params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        u32le(&mut out, self.tag.len());
        out.extend_from_slice(self.tag.as_bytes());
        let c = &self.config;
        for v in [c.depth, c.dim, c.heads, c.mlp_ratio, c.patch_dim, c.num_patches] {
            u32le(&mut out, v);
        }
        u32le(&mut out, self.blobs.len());
        for b in &self.blobs {
            u32le(&mut out, b.name.len());
            out.extend_from_slice(b.name.as_bytes());
            u32le(&mut out, b.shape.len());
            for &d in &b.shape {
                u32le(&mut out, d);
            }
            for v in &b.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err("bad magic".into());
        }
        let mut cur = std::io::Cursor::new(&bytes[8..]);
        let u32_at = |cur: &mut std::io::Cursor<&[u8]>| -> std::result::Result<usize, String> {
            let mut b = [0u8; 4];
            cur.read_exact(&mut b).map_err(|_| "truncated file".to_string())?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        let version = u32_at(&mut cur)?;
        if version != VERSION as usize {
            return Err(format!("unsupported version {version}"));
        }
        let read_string = |cur: &mut std::io::Cursor<&[u8]>, len: usize| -> std::result::Result<String, String> {
            let mut buf = vec![0u8; len];
            cur.read_exact(&mut buf).map_err(|_| "truncated file".to_string())?;
            String::from_utf8(buf).map_err(|_| "non-UTF-8 name".to_string())
        };
        let tag_len = u32_at(&mut cur)?;
        let tag = read_string(&mut cur, tag_len)?;
        let mut fields = [0usize; 6];
        for f in fields.iter_mut() {
            *f = u32_at(&mut cur)?;
        }
        let config = EncoderConfig {
            depth: fields[0],
            dim: fields[1],
            heads: fields[2],
            mlp_ratio: fields[3],
            patch_dim: fields[4],
            num_patches: fields[5],
            ..EncoderConfig::default()
        };
        let n_blobs = u32_at(&mut cur)?;
        let mut blobs = Vec::with_capacity(n_blobs);
        for _ in 0..n_blobs {
            let name_len = u32_at(&mut cur)?;
            let name = read_string(&mut cur, name_len)?;
            let rank = u32_at(&mut cur)?;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32_at(&mut cur)?);
            }
            let count: usize = shape.iter().product();
            let mut raw = vec![0u8; count * 4];
            cur.read_exact(&mut raw).map_err(|_| "truncated file".to_string())?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            blobs.push(Blob { name, shape, data });
        }
        if (cur.position() as usize) != bytes.len() - 8 {
            return Err("trailing bytes".into());
        }
        Ok(Self { tag, config, blobs })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        })
    }
}
