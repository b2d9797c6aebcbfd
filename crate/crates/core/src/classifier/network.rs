use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::sigmoid;
use super::{ClassifierConfig, ClassifierError};
use crate::dataset::EmbeddedProgram;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }
}

/// Fixed-length network input, time-major (`len` rows of `channels`).
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub len: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

/// Keeps the first `len` rows of a program, zero-padding at the end when it
/// is shorter.
pub fn pad_or_truncate(program: &EmbeddedProgram, len: usize) -> Frame {
    let d = program.dim;
    let keep = program.rows().min(len);
    let mut data = vec![0.0; len * d];
    for (dst, &src) in data.iter_mut().zip(&program.data[..keep * d]) {
        *dst = src as f64;
    }
    Frame {
        len,
        channels: d,
        data,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub config: ClassifierConfig,
    /// Per conv layer: weight `[out, in, kernel]`, bias `[out]`; then per
    /// dense layer (output layer last): weight `[out, in]`, bias `[out]`.
    pub params: Vec<Tensor>,
}

struct ConvCache {
    input: Vec<f64>,
    in_len: usize,
    pre: Vec<f64>,
    out_len: usize,
    /// Index into `pre` (per output element) that won the max-pool.
    argmax: Vec<usize>,
}

struct DenseCache {
    input: Vec<f64>,
    pre: Vec<f64>,
}

pub(crate) struct Cache {
    conv: Vec<ConvCache>,
    dense: Vec<DenseCache>,
    pub(crate) logit: f64,
}

fn shapes(config: &ClassifierConfig) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut ch = config.channels;
    for c in &config.conv {
        out.push(vec![c.filters, ch, c.kernel]);
        out.push(vec![c.filters]);
        ch = c.filters;
    }
    let mut width = ch;
    for &w in config.dense.iter().chain(std::iter::once(&1)) {
        out.push(vec![w, width]);
        out.push(vec![w]);
        width = w;
    }
    out
}

fn conv_forward(x: &[f64], in_ch: usize, len: usize, w: &[f64], b: &[f64], kernel: usize) -> (Vec<f64>, usize) {
    let out_ch = b.len();
    let lo = len - kernel + 1;
    let mut y = vec![0.0; out_ch * lo];
    for o in 0..out_ch {
        let yrow = &mut y[o * lo..(o + 1) * lo];
        yrow.fill(b[o]);
        for c in 0..in_ch {
            for k in 0..kernel {
                let wv = w[(o * in_ch + c) * kernel + k];
                let xrow = &x[c * len + k..c * len + k + lo];
                for (yt, &xt) in yrow.iter_mut().zip(xrow) {
                    *yt += wv * xt;
                }
            }
        }
    }
    (y, lo)
}

/// ReLU then max over windows of `pool` (global when `None`). Returns the
/// pooled values and the winning indices into `pre`.
fn relu_pool(pre: &[f64], channels: usize, len: usize, pool: Option<usize>) -> (Vec<f64>, Vec<usize>, usize) {
    let width = pool.unwrap_or(len);
    let out_len = len / width;
    let mut out = Vec::with_capacity(channels * out_len);
    let mut idx = Vec::with_capacity(channels * out_len);
    for c in 0..channels {
        for t in 0..out_len {
            let start = c * len + t * width;
            let mut best = start;
            for i in start + 1..start + width {
                if pre[i] > pre[best] {
                    best = i;
                }
            }
            out.push(pre[best].max(0.0));
            idx.push(best);
        }
    }
    (out, idx, out_len)
}

impl ClassifierModel {
    /// He-uniform weights from the config seed, zero biases.
    pub fn init(config: &ClassifierConfig) -> Result<Self, ClassifierError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = shapes(config)
            .into_iter()
            .map(|shape| {
                let mut t = Tensor::zeros(shape);
                if t.shape.len() > 1 {
                    let fan_in: usize = t.shape[1..].iter().product();
                    let bound = (6.0 / fan_in as f64).sqrt();
                    for x in &mut t.data {
                        *x = rng.gen_range(-bound..bound);
                    }
                }
                t
            })
            .collect();
        Ok(ClassifierModel {
            config: config.clone(),
            params,
        })
    }

    /// Every parameter zero; outputs 0.5 for any input.
    pub fn zeros(config: &ClassifierConfig) -> Result<Self, ClassifierError> {
        config.validate()?;
        Ok(ClassifierModel {
            config: config.clone(),
            params: shapes(config).into_iter().map(Tensor::zeros).collect(),
        })
    }

    pub fn expected_shapes(config: &ClassifierConfig) -> Vec<Vec<usize>> {
        shapes(config)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    fn check_frame(&self, frame: &Frame) -> Result<(), ClassifierError> {
        let c = &self.config;
        if frame.len != c.input_length || frame.channels != c.channels || frame.data.len() != frame.len * frame.channels {
            return Err(ClassifierError::ShapeMismatch(format!(
                "frame is {}x{}, model expects {}x{}",
                frame.len, frame.channels, c.input_length, c.channels
            )));
        }
        Ok(())
    }

    pub(crate) fn forward_cached(&self, frame: &Frame) -> Result<Cache, ClassifierError> {
        self.check_frame(frame)?;
        let cfg = &self.config;
        // time-major -> channel-major
        let (len, ch) = (frame.len, frame.channels);
        let mut x = vec![0.0; len * ch];
        for t in 0..len {
            for c in 0..ch {
                x[c * len + t] = frame.data[t * ch + c];
            }
        }
        let mut in_ch = ch;
        let mut in_len = len;
        let mut conv = Vec::with_capacity(cfg.conv.len());
        for (i, spec) in cfg.conv.iter().enumerate() {
            let (w, b) = (&self.params[2 * i].data, &self.params[2 * i + 1].data);
            let (pre, out_len) = conv_forward(&x, in_ch, in_len, w, b, spec.kernel);
            let (pooled, argmax, pooled_len) = relu_pool(&pre, spec.filters, out_len, cfg.pool.get(i).copied());
            conv.push(ConvCache {
                input: std::mem::replace(&mut x, pooled),
                in_len,
                pre,
                out_len,
                argmax,
            });
            in_ch = spec.filters;
            in_len = pooled_len;
        }
        // global pooling leaves one value per filter
        let mut h = x;
        let base = 2 * cfg.conv.len();
        let n_dense = cfg.dense.len() + 1;
        let mut dense = Vec::with_capacity(n_dense);
        for j in 0..n_dense {
            let (w, b) = (&self.params[base + 2 * j], &self.params[base + 2 * j + 1].data);
            let (out, inp) = (w.shape[0], w.shape[1]);
            let pre: Vec<f64> = (0..out)
                .map(|o| b[o] + w.data[o * inp..(o + 1) * inp].iter().zip(&h).map(|(a, x)| a * x).sum::<f64>())
                .collect();
            let next = if j + 1 < n_dense {
                pre.iter().map(|&z| z.max(0.0)).collect()
            } else {
                pre.clone()
            };
            dense.push(DenseCache {
                input: std::mem::replace(&mut h, next),
                pre,
            });
        }
        Ok(Cache {
            conv,
            dense,
            logit: h[0],
        })
    }

    /// Pre-sigmoid score.
    pub fn logit(&self, frame: &Frame) -> Result<f64, ClassifierError> {
        Ok(self.forward_cached(frame)?.logit)
    }

    /// Probability that the frame is malicious.
    pub fn forward(&self, frame: &Frame) -> Result<f64, ClassifierError> {
        Ok(sigmoid(self.logit(frame)?))
    }

    /// Gradients of a scalar with respect to every parameter, given its
    /// derivative with respect to the logit.
    pub(crate) fn backward(&self, cache: &Cache, d_logit: f64) -> Vec<Tensor> {
        let cfg = &self.config;
        let mut grads: Vec<Tensor> = self.params.iter().map(|t| Tensor::zeros(t.shape.clone())).collect();
        let base = 2 * cfg.conv.len();
        let n_dense = cache.dense.len();

        let mut delta = vec![d_logit];
        for j in (0..n_dense).rev() {
            let dc = &cache.dense[j];
            if j + 1 < n_dense {
                for (d, &z) in delta.iter_mut().zip(&dc.pre) {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let w = &self.params[base + 2 * j];
            let (out, inp) = (w.shape[0], w.shape[1]);
            let mut d_in = vec![0.0; inp];
            {
                let gw = &mut grads[base + 2 * j].data;
                for o in 0..out {
                    for i in 0..inp {
                        gw[o * inp + i] = delta[o] * dc.input[i];
                        d_in[i] += w.data[o * inp + i] * delta[o];
                    }
                }
            }
            grads[base + 2 * j + 1].data.copy_from_slice(&delta);
            delta = d_in;
        }

        // delta is now d/d(pooled output of the last conv layer)
        for i in (0..cfg.conv.len()).rev() {
            let cc = &cache.conv[i];
            let spec = cfg.conv[i];
            let in_ch = if i == 0 { cfg.channels } else { cfg.conv[i - 1].filters };
            let mut d_pre = vec![0.0; cc.pre.len()];
            for (&src, &d) in cc.argmax.iter().zip(&delta) {
                if cc.pre[src] > 0.0 {
                    d_pre[src] += d;
                }
            }
            let lo = cc.out_len;
            let len = cc.in_len;
            let w = &self.params[2 * i].data;
            let need_input_grad = i > 0;
            let mut d_x = if need_input_grad { vec![0.0; in_ch * len] } else { Vec::new() };
            for o in 0..spec.filters {
                let drow = &d_pre[o * lo..(o + 1) * lo];
                grads[2 * i + 1].data[o] = drow.iter().sum();
                for c in 0..in_ch {
                    for k in 0..spec.kernel {
                        let xrow = &cc.input[c * len + k..c * len + k + lo];
                        let widx = (o * in_ch + c) * spec.kernel + k;
                        grads[2 * i].data[widx] = drow.iter().zip(xrow).map(|(d, x)| d * x).sum();
                        if need_input_grad {
                            let wv = w[widx];
                            let dxrow = &mut d_x[c * len + k..c * len + k + lo];
                            for (dx, &d) in dxrow.iter_mut().zip(drow) {
                                *dx += wv * d;
                            }
                        }
                    }
                }
            }
            if need_input_grad {
                // d_x is with respect to the previous layer's pooled output;
                // route it through that layer's pooling in the next iteration.
                delta = d_x;
            }
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ConvSpec;
    use crate::sequence::Label;

    fn tiny() -> ClassifierConfig {
        ClassifierConfig {
            input_length: 6,
            channels: 2,
            conv: vec![ConvSpec { filters: 1, kernel: 1 }],
            pool: vec![],
            dense: vec![],
            ..Default::default()
        }
    }

    fn constant_frame(len: usize, c: f64) -> Frame {
        Frame {
            len,
            channels: 2,
            data: vec![c; len * 2],
        }
    }

    #[test]
    fn pad_and_truncate() {
        let p = EmbeddedProgram::new(Label::Benign, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], "p");
        let f = pad_or_truncate(&p, 5);
        assert_eq!(f.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.0, 0.0, 0.0, 0.0]);
        let long = EmbeddedProgram::new(Label::Benign, 2, (0..14).map(|x| x as f32).collect(), "p");
        assert_eq!(pad_or_truncate(&long, 5).data, (0..10).map(|x| x as f64).collect::<Vec<_>>());
        let exact = EmbeddedProgram::new(Label::Benign, 2, (0..10).map(|x| x as f32).collect(), "p");
        assert_eq!(pad_or_truncate(&exact, 5).data, (0..10).map(|x| x as f64).collect::<Vec<_>>());
    }

    #[test]
    fn zero_network_outputs_half() {
        let cfg = ClassifierConfig {
            input_length: 64,
            ..Default::default()
        };
        let m = ClassifierModel::zeros(&cfg).unwrap();
        assert_eq!(m.forward(&constant_frame(64, 3.0)).unwrap(), 0.5);
    }

    #[test]
    fn hand_built_network() {
        let mut m = ClassifierModel::zeros(&tiny()).unwrap();
        m.params[0].data = vec![1.0, 1.0];
        m.params[2].data = vec![1.0];
        // conv sums both channels: 2c; relu; global max; identity dense
        let p = m.forward(&constant_frame(6, 0.5)).unwrap();
        assert!((p - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert_eq!(m.forward(&constant_frame(6, -1.0)).unwrap(), 0.5);
    }

    #[test]
    fn shape_mismatch() {
        let m = ClassifierModel::zeros(&tiny()).unwrap();
        assert!(matches!(
            m.forward(&constant_frame(7, 0.0)),
            Err(ClassifierError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn default_shapes() {
        let m = ClassifierModel::init(&ClassifierConfig::default()).unwrap();
        let shapes: Vec<_> = m.params.iter().map(|t| t.shape.clone()).collect();
        assert_eq!(
            shapes,
            vec![vec![16, 2, 8], vec![16], vec![32, 16, 8], vec![32], vec![1, 32], vec![1]]
        );
        assert_eq!(ClassifierConfig::default().stage_lengths().unwrap(), vec![510, 503]);
    }
}
