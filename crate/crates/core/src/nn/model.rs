use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, BatchNorm1d, BnCache, Conv1d,
    Dense, Param, SeBlock, SeCache, Slot, TensorKind, Visit,
};
use crate::error::{Error, Result};
use crate::record_io::N_SCORED;
use crate::tensor::Tensor;

const STEM_KERNEL: usize = 15;
const STEM_STRIDE: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SeResNetConfig {
    pub input_leads: usize,
    pub input_length: usize,
    pub stem_channels: usize,
    pub channels_per_stage: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub se_reduction: usize,
    /// Odd kernel width of the convolutions inside residual blocks.
    pub block_kernel: usize,
    pub n_classes: usize,
    pub seed: u64,
}

impl Default for SeResNetConfig {
    fn default() -> Self {
        SeResNetConfig {
            input_leads: 8,
            input_length: 15_000,
            stem_channels: 32,
            channels_per_stage: vec![32, 64, 128, 256],
            blocks_per_stage: vec![2, 2, 2, 2],
            se_reduction: 4,
            block_kernel: 7,
            n_classes: N_SCORED,
            seed: 0,
        }
    }
}

impl SeResNetConfig {
    /// About 19k parameters on 512-sample inputs, for tests and demos.
    pub fn tiny() -> Self {
        SeResNetConfig {
            input_length: 512,
            stem_channels: 16,
            channels_per_stage: vec![16, 32],
            blocks_per_stage: vec![1, 1],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_leads == 0 || self.input_length == 0 || self.stem_channels == 0 {
            return bad("leads, length and stem channels must be positive".into());
        }
        if self.channels_per_stage.is_empty()
            || self.channels_per_stage.len() != self.blocks_per_stage.len()
        {
            return bad(
                "channels_per_stage and blocks_per_stage must be non-empty and equally long".into(),
            );
        }
        if self.blocks_per_stage.contains(&0) {
            return bad("every stage needs at least one block".into());
        }
        if self.se_reduction == 0 {
            return bad("se_reduction must be positive".into());
        }
        if let Some(c) = self
            .channels_per_stage
            .iter()
            .find(|&&c| c == 0 || c % self.se_reduction != 0)
        {
            return bad(format!(
                "se_reduction {} does not divide {c}",
                self.se_reduction
            ));
        }
        if self.block_kernel.is_multiple_of(2) {
            return bad("block_kernel must be odd".into());
        }
        if self.n_classes != N_SCORED {
            return bad(format!("n_classes must be {N_SCORED}"));
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> String {
        let list = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut s = String::new();
        let _ = writeln!(s, "input_leads={}", self.input_leads);
        let _ = writeln!(s, "input_length={}", self.input_length);
        let _ = writeln!(s, "stem_channels={}", self.stem_channels);
        let _ = writeln!(s, "channels_per_stage={}", list(&self.channels_per_stage));
        let _ = writeln!(s, "blocks_per_stage={}", list(&self.blocks_per_stage));
        let _ = writeln!(s, "se_reduction={}", self.se_reduction);
        let _ = writeln!(s, "block_kernel={}", self.block_kernel);
        let _ = writeln!(s, "n_classes={}", self.n_classes);
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }

    /// Applies one `key=value` setting; `Ok(false)` for foreign keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = || Error::Config(format!("invalid {key} '{value}'"));
        let num = |v: &str| v.trim().parse::<usize>().map_err(|_| bad());
        match key {
            "input_leads" => self.input_leads = num(value)?,
            "input_length" => self.input_length = num(value)?,
            "stem_channels" => self.stem_channels = num(value)?,
            "channels_per_stage" => {
                self.channels_per_stage = value.split(',').map(num).collect::<Result<_>>()?
            }
            "blocks_per_stage" => {
                self.blocks_per_stage = value.split(',').map(num).collect::<Result<_>>()?
            }
            "se_reduction" => self.se_reduction = num(value)?,
            "block_kernel" => self.block_kernel = num(value)?,
            "n_classes" => self.n_classes = num(value)?,
            "seed" => self.seed = value.trim().parse().map_err(|_| bad())?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(lineno + 1, "expected key=value"))?;
            if !cfg.set(k.trim(), v.trim())? {
                return Err(Error::parse(
                    lineno + 1,
                    format!("unknown key '{}'", k.trim()),
                ));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Trainable scalar count, derived from the layer shapes alone.
    pub fn parameter_count(&self) -> usize {
        let conv = |i: usize, o: usize, k: usize| o * i * k + o;
        let dense = |i: usize, o: usize| o * i + o;
        let bn = |c: usize| 2 * c;
        let mut total = conv(self.input_leads, self.stem_channels, STEM_KERNEL);
        let mut cin = self.stem_channels;
        for (s, (&c, &n)) in self
            .channels_per_stage
            .iter()
            .zip(&self.blocks_per_stage)
            .enumerate()
        {
            for b in 0..n {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                total += bn(cin) + conv(cin, c, self.block_kernel) + bn(c);
                total += conv(c, c, self.block_kernel);
                total += dense(c, c / self.se_reduction) + dense(c / self.se_reduction, c);
                if stride != 1 || cin != c {
                    total += conv(cin, c, 1);
                }
                cin = c;
            }
        }
        total + bn(cin) + dense(cin, self.n_classes)
    }
}

/// Whether batch norm uses batch statistics (and updates its running
/// averages) or the stored running averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Pre-activation residual block ending in a squeeze-and-excitation gate.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub bn1: BatchNorm1d,
    pub conv1: Conv1d,
    pub bn2: BatchNorm1d,
    pub conv2: Conv1d,
    pub se: SeBlock,
    /// 1x1 projection when stride or width changes.
    pub shortcut: Option<Conv1d>,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    x: Tensor,
    bn1: BnCache,
    r0: Tensor,
    bn2: BnCache,
    r1: Tensor,
    c2: Tensor,
    se: SeCache,
}

impl ResidualBlock {
    pub fn new(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        reduction: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let pad = kernel / 2;
        Ok(ResidualBlock {
            bn1: BatchNorm1d::new(cin),
            conv1: Conv1d::new(cin, cout, kernel, stride, pad, rng),
            bn2: BatchNorm1d::new(cout),
            conv2: Conv1d::new(cout, cout, kernel, 1, pad, rng),
            se: SeBlock::new(cout, reduction, rng)?,
            shortcut: (stride != 1 || cin != cout)
                .then(|| Conv1d::new(cin, cout, 1, stride, 0, rng)),
        })
    }

    fn residual(&self, x: &Tensor, body: &Tensor) -> Result<Tensor> {
        let mut out = match &self.shortcut {
            Some(conv) => conv.forward(x)?,
            None => x.clone(),
        };
        out.add_assign(body)?;
        Ok(out)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let r0 = relu(&self.bn1.forward_eval(x)?);
        let c1 = self.conv1.forward(&r0)?;
        let r1 = relu(&self.bn2.forward_eval(&c1)?);
        let c2 = self.conv2.forward(&r1)?;
        let (gated, _) = self.se.forward(&c2)?;
        self.residual(x, &gated)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, BlockCache)> {
        let (a0, bn1) = self.bn1.forward_train(x)?;
        let r0 = relu(&a0);
        let c1 = self.conv1.forward(&r0)?;
        let (a1, bn2) = self.bn2.forward_train(&c1)?;
        let r1 = relu(&a1);
        let c2 = self.conv2.forward(&r1)?;
        let (gated, se) = self.se.forward(&c2)?;
        let out = self.residual(x, &gated)?;
        let cache = BlockCache {
            x: x.clone(),
            bn1,
            r0,
            bn2,
            r1,
            c2,
            se,
        };
        Ok((out, cache))
    }

    /// Trainable parameters in visiting order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.se.fc1.weight,
            &mut self.se.fc1.bias,
            &mut self.se.fc2.weight,
            &mut self.se.fc2.bias,
        ];
        if let Some(s) = &mut self.shortcut {
            out.push(&mut s.weight);
            out.push(&mut s.bias);
        }
        out
    }

    pub fn backward(&mut self, cache: &BlockCache, g: &Tensor) -> Result<Tensor> {
        let g_c2 = self.se.backward(&cache.c2, &cache.se, g)?;
        let g_r1 = self.conv2.backward(&cache.r1, &g_c2)?;
        let g_c1 = self
            .bn2
            .backward(&cache.bn2, &relu_backward(&cache.r1, &g_r1))?;
        let g_r0 = self.conv1.backward(&cache.r0, &g_c1)?;
        let mut g_x = self
            .bn1
            .backward(&cache.bn1, &relu_backward(&cache.r0, &g_r0))?;
        match &mut self.shortcut {
            Some(conv) => g_x.add_assign(&conv.backward(&cache.x, g)?)?,
            None => g_x.add_assign(g)?,
        }
        Ok(g_x)
    }
}

impl Visit for ResidualBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, TensorKind)) {
        self.bn1.visit(&format!("{prefix}.bn1"), f);
        self.conv1.visit(&format!("{prefix}.conv1"), f);
        self.bn2.visit(&format!("{prefix}.bn2"), f);
        self.conv2.visit(&format!("{prefix}.conv2"), f);
        self.se.visit(&format!("{prefix}.se"), f);
        if let Some(s) = &self.shortcut {
            s.visit(&format!("{prefix}.shortcut"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.bn1.visit_mut(&format!("{prefix}.bn1"), f);
        self.conv1.visit_mut(&format!("{prefix}.conv1"), f);
        self.bn2.visit_mut(&format!("{prefix}.bn2"), f);
        self.conv2.visit_mut(&format!("{prefix}.conv2"), f);
        self.se.visit_mut(&format!("{prefix}.se"), f);
        if let Some(s) = &mut self.shortcut {
            s.visit_mut(&format!("{prefix}.shortcut"), f);
        }
    }
}

/// Everything the backward pass needs from one training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    x: Tensor,
    blocks: Vec<BlockCache>,
    bn: BnCache,
    features: Tensor,
    pooled: Tensor,
}

/// Stem convolution, residual SE stages, batch norm, ReLU, global average
/// pooling and a dense head producing one logit per scored class.
#[derive(Debug, Clone, PartialEq)]
pub struct SeResNet {
    config: SeResNetConfig,
    pub stem: Conv1d,
    pub blocks: Vec<ResidualBlock>,
    pub bn: BatchNorm1d,
    pub head: Dense,
}

impl SeResNet {
    /// Seeded Kaiming-uniform initialization. Biases start at zero except
    /// the head, whose outputs start near a sparse label prior of
    /// `1 / (n_classes + 1)`.
    pub fn new(config: SeResNetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let stem = Conv1d::new(
            config.input_leads,
            config.stem_channels,
            STEM_KERNEL,
            STEM_STRIDE,
            STEM_KERNEL / 2,
            &mut rng,
        );
        let mut blocks = Vec::new();
        let mut cin = config.stem_channels;
        for (s, (&c, &n)) in config
            .channels_per_stage
            .iter()
            .zip(&config.blocks_per_stage)
            .enumerate()
        {
            for b in 0..n {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                blocks.push(ResidualBlock::new(
                    cin,
                    c,
                    config.block_kernel,
                    stride,
                    config.se_reduction,
                    &mut rng,
                )?);
                cin = c;
            }
        }
        let bn = BatchNorm1d::new(cin);
        let mut head = Dense::new(cin, config.n_classes, &mut rng);
        head.bias.value.fill(-(config.n_classes as f64).ln());
        Ok(SeResNet {
            config,
            stem,
            blocks,
            bn,
            head,
        })
    }

    pub fn config(&self) -> &SeResNetConfig {
        &self.config
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, leads, len) = x.dims3()?;
        if leads != self.config.input_leads || len != self.config.input_length {
            return Err(Error::Shape(format!(
                "model expects [B x {} x {}], got {:?}",
                self.config.input_leads,
                self.config.input_length,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Logits `[B x n_classes]`. Train mode updates batch-norm running stats.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Train => self.forward_train(x).map(|(logits, _)| logits),
            Mode::Eval => self.forward_eval(x),
        }
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = self.stem.forward(x)?;
        for block in &self.blocks {
            h = block.forward_eval(&h)?;
        }
        let features = relu(&self.bn.forward_eval(&h)?);
        self.head.forward(&global_avg_pool(&features)?)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, ForwardTrace)> {
        self.check_input(x)?;
        let mut h = self.stem.forward(x)?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            let (out, cache) = block.forward_train(&h)?;
            caches.push(cache);
            h = out;
        }
        let (a, bn) = self.bn.forward_train(&h)?;
        let features = relu(&a);
        let pooled = global_avg_pool(&features)?;
        let logits = self.head.forward(&pooled)?;
        let trace = ForwardTrace {
            x: x.clone(),
            blocks: caches,
            bn,
            features,
            pooled,
        };
        Ok((logits, trace))
    }

    /// Accumulates d(loss)/d(param) given d(loss)/d(logits).
    pub fn backward(&mut self, trace: &ForwardTrace, grad_logits: &Tensor) -> Result<()> {
        let g_pooled = self.head.backward(&trace.pooled, grad_logits)?;
        let t = trace.features.shape()[2];
        let g_feat = global_avg_pool_backward(&g_pooled, t)?;
        let mut g = self
            .bn
            .backward(&trace.bn, &relu_backward(&trace.features, &g_feat))?;
        for (block, cache) in self.blocks.iter_mut().zip(&trace.blocks).rev() {
            g = block.backward(cache, &g)?;
        }
        self.stem.backward(&trace.x, &g)?;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.for_each_param(&mut |_, p| p.zero_grad());
    }

    /// Visits trainable parameters in a fixed order.
    pub fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.visit_mut("", &mut |name, slot| {
            if let Slot::Param(p) = slot {
                f(name, p);
            }
        });
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t, kind| {
            if kind == TensorKind::Param {
                n += t.len();
            }
        });
        n
    }
}

impl Visit for SeResNet {
    fn visit(&self, _prefix: &str, f: &mut dyn FnMut(&str, &Tensor, TensorKind)) {
        self.stem.visit("stem", f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("blocks.{i}"), f);
        }
        self.bn.visit("bn", f);
        self.head.visit("head", f);
    }

    fn visit_mut(&mut self, _prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.stem.visit_mut("stem", f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("blocks.{i}"), f);
        }
        self.bn.visit_mut("bn", f);
        self.head.visit_mut("head", f);
    }
}
