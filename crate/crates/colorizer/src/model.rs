//! The colorizer network: a small downsample / dilated-trunk / upsample
//! stack ending in a 1×1 head, plus Gaussian weight initialization and the
//! versioned binary checkpoint format.

use crate::error::{Error, Result};
use crate::nn::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, relu_backward,
    relu_forward, tanh_backward, tanh_forward, upsample_backward, upsample_forward,
    BatchNormCache, BnMode, Conv2dSpec, Tensor, UpsampleMode,
};
use crate::quantizer::ColorBinGrid;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ACLR";
pub const CHECKPOINT_VERSION: u32 = 1;
const BN_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_size: usize,
    pub head: Head,
    /// Bin count; used by classification heads only.
    pub q: usize,
    /// Squash regression outputs to ±1 normalized ab with a final tanh.
    pub tanh_squash: bool,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            head: Head::Regression,
            q: 0,
            tanh_squash: true,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "input_size must be a positive multiple of 4, got {}",
                self.input_size
            )));
        }
        if self.head == Head::Classification && self.q == 0 {
            return Err(Error::Config("classification head needs Q >= 1".into()));
        }
        Ok(())
    }

    pub fn output_size(&self) -> usize {
        self.input_size / 2
    }

    pub fn output_channels(&self) -> usize {
        match self.head {
            Head::Regression => 2,
            Head::Classification => self.q,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Block {
    Conv {
        spec: Conv2dSpec,
        weight: Tensor,
        bias: Tensor,
    },
    BatchNorm {
        gamma: Tensor,
        beta: Tensor,
        running_mean: Tensor,
        running_var: Tensor,
    },
    Relu,
    Tanh,
    Upsample {
        factor: usize,
        mode: UpsampleMode,
    },
}

#[derive(Debug, Clone)]
pub struct Network {
    pub config: NetConfig,
    pub blocks: Vec<Block>,
}

/// Per-block saved state from a forward pass, consumed by backward.
pub enum BlockCache {
    None,
    /// Block input (conv, relu) or output (tanh).
    Tensor(Tensor),
    /// Input spatial dims (upsample).
    Dims(usize, usize),
    Bn(BatchNormCache),
}

fn conv_spec(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize, dilation: usize) -> Conv2dSpec {
    Conv2dSpec {
        in_channels: in_c,
        out_channels: out_c,
        kernel: k,
        stride,
        pad,
        dilation,
    }
}

fn conv_block(spec: Conv2dSpec) -> Block {
    Block::Conv {
        weight: Tensor::zeros(spec.out_channels, spec.in_channels, spec.kernel, spec.kernel),
        bias: Tensor::zeros(1, spec.out_channels, 1, 1),
        spec,
    }
}

fn bn_block(channels: usize) -> Block {
    let mut gamma = Tensor::zeros(1, channels, 1, 1);
    gamma.data.iter_mut().for_each(|v| *v = 1.0);
    let mut running_var = Tensor::zeros(1, channels, 1, 1);
    running_var.data.iter_mut().for_each(|v| *v = 1.0);
    Block::BatchNorm {
        gamma,
        beta: Tensor::zeros(1, channels, 1, 1),
        running_mean: Tensor::zeros(1, channels, 1, 1),
        running_var,
    }
}

/// Assemble the default stack. Weights are zero until `init_weights` runs.
pub fn build_network(config: &NetConfig) -> Result<Network> {
    config.validate()?;
    let mut blocks = Vec::new();
    fn push_unit(blocks: &mut Vec<Block>, spec: Conv2dSpec) {
        let ch = spec.out_channels;
        blocks.push(conv_block(spec));
        blocks.push(bn_block(ch));
        blocks.push(Block::Relu);
    }
    push_unit(&mut blocks, conv_spec(1, 32, 3, 1, 1, 1));
    push_unit(&mut blocks, conv_spec(32, 32, 3, 2, 1, 1));
    push_unit(&mut blocks, conv_spec(32, 64, 3, 1, 1, 1));
    push_unit(&mut blocks, conv_spec(64, 64, 3, 2, 1, 1));
    push_unit(&mut blocks, conv_spec(64, 128, 3, 1, 2, 2));
    push_unit(&mut blocks, conv_spec(128, 128, 3, 1, 2, 2));
    blocks.push(Block::Upsample {
        factor: 2,
        mode: UpsampleMode::Nearest,
    });
    push_unit(&mut blocks, conv_spec(128, 64, 3, 1, 1, 1));
    blocks.push(conv_block(conv_spec(64, config.output_channels(), 1, 1, 0, 1)));
    if config.head == Head::Regression && config.tanh_squash {
        blocks.push(Block::Tanh);
    }
    Ok(Network {
        config: config.clone(),
        blocks,
    })
}

/// Seeded Gaussian initialization: conv weights ~ N(0, 2/fan_in), biases 0,
/// batch-norm gamma 1 and beta 0.
pub fn init_weights(net: &mut Network, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Box-Muller over the seeded uniform stream
    let mut normal = move || -> f32 {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
    };
    for block in &mut net.blocks {
        if let Block::Conv { spec, weight, bias } = block {
            let fan_in = spec.in_channels * spec.kernel * spec.kernel;
            let sigma = (2.0 / fan_in as f64).sqrt() as f32;
            for v in &mut weight.data {
                *v = normal() * sigma;
            }
            bias.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

impl Network {
    /// Forward pass. Train mode updates batch-norm running statistics.
    pub fn forward(&mut self, input: &Tensor, mode: BnMode) -> Result<(Tensor, Vec<BlockCache>)> {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut x = input.clone();
        for block in &mut self.blocks {
            match block {
                Block::Conv { spec, weight, bias } => {
                    let y = conv2d_forward(&x, weight, bias, spec)?;
                    caches.push(BlockCache::Tensor(x));
                    x = y;
                }
                Block::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    let (y, cache) =
                        batchnorm_forward(&x, gamma, beta, running_mean, running_var, BN_EPS, mode)?;
                    caches.push(BlockCache::Bn(cache));
                    x = y;
                }
                Block::Relu => {
                    let y = relu_forward(&x);
                    caches.push(BlockCache::Tensor(x));
                    x = y;
                }
                Block::Tanh => {
                    let y = tanh_forward(&x);
                    caches.push(BlockCache::Tensor(y.clone()));
                    x = y;
                }
                Block::Upsample { .. } => {
                    caches.push(BlockCache::Dims(x.h, x.w));
                    let Block::Upsample { factor, mode } = block else {
                        unreachable!()
                    };
                    let y = upsample_forward(&x, *factor, *mode);
                    x = y;
                }
            }
        }
        Ok((x, caches))
    }

    /// Convenience eval-mode forward that drops the caches.
    pub fn infer(&mut self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward(input, BnMode::Eval)?.0)
    }

    /// Backward pass; accumulates parameter gradients into each parameter's
    /// grad buffer and returns the gradient w.r.t. the network input.
    pub fn backward(&mut self, dout: &Tensor, caches: &[BlockCache]) -> Result<Tensor> {
        let mut d = dout.clone();
        for (block, cache) in self.blocks.iter_mut().zip(caches.iter()).rev() {
            match (block, cache) {
                (Block::Conv { spec, weight, bias }, BlockCache::Tensor(input)) => {
                    let (di, dw, db) = conv2d_backward(input, weight, &d, spec)?;
                    accumulate(weight.grad_mut(), &dw.data);
                    accumulate(bias.grad_mut(), &db.data);
                    d = di;
                }
                (Block::BatchNorm { gamma, beta, .. }, BlockCache::Bn(cache)) => {
                    let (di, dg, db) = batchnorm_backward(&d, gamma, cache);
                    accumulate(gamma.grad_mut(), &dg.data);
                    accumulate(beta.grad_mut(), &db.data);
                    d = di;
                }
                (Block::Relu, BlockCache::Tensor(input)) => {
                    d = relu_backward(input, &d);
                }
                (Block::Tanh, BlockCache::Tensor(output)) => {
                    d = tanh_backward(output, &d);
                }
                (Block::Upsample { factor, mode }, BlockCache::Dims(h, w)) => {
                    d = upsample_backward(&d, *factor, *mode, *h, *w);
                }
                _ => {
                    return Err(Error::Config(
                        "forward cache does not match network structure".into(),
                    ))
                }
            }
        }
        Ok(d)
    }

    /// All tensors in checkpoint order: trainable parameters and batch-norm
    /// running statistics.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            match block {
                Block::Conv { weight, bias, .. } => {
                    out.push((format!("block{i}.weight"), weight));
                    out.push((format!("block{i}.bias"), bias));
                }
                Block::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    out.push((format!("block{i}.gamma"), gamma));
                    out.push((format!("block{i}.beta"), beta));
                    out.push((format!("block{i}.running_mean"), running_mean));
                    out.push((format!("block{i}.running_var"), running_var));
                }
                _ => {}
            }
        }
        out
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, block) in self.blocks.iter_mut().enumerate() {
            match block {
                Block::Conv { weight, bias, .. } => {
                    out.push((format!("block{i}.weight"), weight));
                    out.push((format!("block{i}.bias"), bias));
                }
                Block::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    out.push((format!("block{i}.gamma"), gamma));
                    out.push((format!("block{i}.beta"), beta));
                    out.push((format!("block{i}.running_mean"), running_mean));
                    out.push((format!("block{i}.running_var"), running_var));
                }
                _ => {}
            }
        }
        out
    }

    /// Trainable parameters (running stats excluded), in a fixed order.
    pub fn trainable_params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for block in &mut self.blocks {
            match block {
                Block::Conv { weight, bias, .. } => {
                    out.push(weight);
                    out.push(bias);
                }
                Block::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
                _ => {}
            }
        }
        out
    }

    pub fn zero_grads(&mut self) {
        for p in self.trainable_params_mut() {
            p.zero_grad();
        }
    }
}

fn accumulate(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    net: NetConfig,
    grid: Option<ColorBinGrid>,
}

/// Write a checkpoint: magic "ACLR", then little-endian version, u32
/// length-prefixed JSON config, tensor count, and per tensor the u32
/// length-prefixed name, ndim, dims, and raw f32 values.
pub fn save_checkpoint(net: &Network, grid: Option<&ColorBinGrid>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);
    w.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION).map_err(io_err)?;
    let meta = CheckpointMeta {
        net: net.config.clone(),
        grid: grid.cloned(),
    };
    let json = serde_json::to_string(&meta)
        .map_err(|e| Error::CorruptCheckpoint(format!("config encode: {e}")))?;
    w.write_u32::<LittleEndian>(json.len() as u32).map_err(io_err)?;
    w.write_all(json.as_bytes()).map_err(io_err)?;
    let tensors = net.named_tensors();
    w.write_u32::<LittleEndian>(tensors.len() as u32).map_err(io_err)?;
    for (name, t) in tensors {
        w.write_u32::<LittleEndian>(name.len() as u32).map_err(io_err)?;
        w.write_all(name.as_bytes()).map_err(io_err)?;
        w.write_u32::<LittleEndian>(4).map_err(io_err)?;
        for d in [t.n, t.c, t.h, t.w] {
            w.write_u32::<LittleEndian>(d as u32).map_err(io_err)?;
        }
        for &v in &t.data {
            w.write_f32::<LittleEndian>(v).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

fn read_err(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::CorruptCheckpoint("file truncated".into())
    } else {
        Error::CorruptCheckpoint(e.to_string())
    }
}

/// Load a checkpoint written by `save_checkpoint`, rebuilding the network
/// and the bin grid (if one was stored).
pub fn load_checkpoint(path: &Path) -> Result<(Network, Option<ColorBinGrid>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(read_err)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.read_u32::<LittleEndian>().map_err(read_err)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let json_len = r.read_u32::<LittleEndian>().map_err(read_err)? as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json).map_err(read_err)?;
    let meta: CheckpointMeta = serde_json::from_slice(&json)
        .map_err(|e| Error::CorruptCheckpoint(format!("config decode: {e}")))?;
    let mut net = build_network(&meta.net)?;
    let count = r.read_u32::<LittleEndian>().map_err(read_err)? as usize;
    let mut expected = net.named_tensors_mut();
    if count != expected.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "checkpoint holds {count} tensors, network expects {}",
            expected.len()
        )));
    }
    for _ in 0..count {
        let name_len = r.read_u32::<LittleEndian>().map_err(read_err)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(read_err)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?;
        let ndim = r.read_u32::<LittleEndian>().map_err(read_err)? as usize;
        if ndim != 4 {
            return Err(Error::CorruptCheckpoint(format!(
                "tensor {name} has {ndim} dims, expected 4"
            )));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.read_u32::<LittleEndian>().map_err(read_err)? as usize;
        }
        let target = expected
            .iter_mut()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("unknown tensor {name}")))?;
        if target.1.shape() != (dims[0], dims[1], dims[2], dims[3]) {
            return Err(Error::CorruptCheckpoint(format!(
                "tensor {name} shape {dims:?} does not match network config"
            )));
        }
        for v in &mut target.1.data {
            *v = r.read_f32::<LittleEndian>().map_err(read_err)?;
        }
    }
    Ok((net, meta.grid))
}
