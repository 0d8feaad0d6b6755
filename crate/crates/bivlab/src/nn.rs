//! Fully connected network with ReLU hidden layers and a linear output, plus the
//! hand-written backward pass. Parameters live in one flat f64 buffer so the
//! optimizer and finite-difference checks can treat the model as a plain vector.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{BivError, Result};
use crate::rng;

/// Multi-layer perceptron. `sizes` lists layer widths input first, output last;
/// weights of layer l are row-major `[out][in]` inside the flat `params` buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
    // (weight offset, bias offset) per layer into params
    offsets: Vec<(usize, usize)>,
}

/// Everything backward needs from a forward evaluation: layer inputs and
/// pre-activation values for the ReLU masks.
pub struct ForwardPass {
    batch: usize,
    // post[0] is the input batch, post[l] the input to layer l, post[L] the output
    post: Vec<Vec<f64>>,
    // pre-activations of every layer, same length as the number of layers
    pre: Vec<Vec<f64>>,
}

impl ForwardPass {
    pub fn predictions(&self) -> &[f64] {
        self.post
            .last()
            .expect("forward pass holds the output batch")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl Mlp {
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(BivError::config(
                "network needs an input and an output layer",
            ));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(BivError::config(format!("zero-width layer in {sizes:?}")));
        }
        let mut offsets = Vec::with_capacity(sizes.len() - 1);
        let mut total = 0usize;
        for w in sizes.windows(2) {
            let (ins, outs) = (w[0], w[1]);
            offsets.push((total, total + ins * outs));
            total += ins * outs + outs;
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            params: vec![0.0; total],
            offsets,
        })
    }

    /// He-normal weights, std sqrt(2 / fan_in), zero biases. Draw order is fixed
    /// (layers in order, rows in order) so one seeded rng reproduces the model.
    pub fn init_he(&mut self, rng: &mut ChaCha8Rng) {
        for l in 0..self.layer_count() {
            let (ins, outs) = (self.sizes[l], self.sizes[l + 1]);
            let std = (2.0 / ins as f64).sqrt();
            let (w_off, b_off) = self.offsets[l];
            for i in 0..ins * outs {
                self.params[w_off + i] = std * rng::standard_normal(rng);
            }
            for i in 0..outs {
                self.params[b_off + i] = 0.0;
            }
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(BivError::Shape(format!(
                "parameter vector has {} entries, model needs {}",
                values.len(),
                self.params.len()
            )));
        }
        self.params.copy_from_slice(values);
        Ok(())
    }

    fn weight(&self, layer: usize) -> &[f64] {
        let (w_off, b_off) = self.offsets[layer];
        &self.params[w_off..b_off]
    }

    fn bias(&self, layer: usize) -> &[f64] {
        let (_, b_off) = self.offsets[layer];
        &self.params[b_off..b_off + self.sizes[layer + 1]]
    }

    /// Runs the batch through the network keeping intermediate activations.
    /// `x` is row-major `batch x input_dim`.
    pub fn forward(&self, x: &[f64], batch: usize) -> Result<ForwardPass> {
        if batch == 0 {
            return Err(BivError::Shape("empty batch".into()));
        }
        if x.len() != batch * self.input_dim() {
            return Err(BivError::Shape(format!(
                "input has {} values, expected {} x {}",
                x.len(),
                batch,
                self.input_dim()
            )));
        }
        let layers = self.layer_count();
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(layers + 1);
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(layers);
        post.push(x.to_vec());
        for l in 0..layers {
            let (ins, outs) = (self.sizes[l], self.sizes[l + 1]);
            let w = self.weight(l);
            let b = self.bias(l);
            let a_prev = &post[l];
            let mut z = vec![0.0; batch * outs];
            for bi in 0..batch {
                let xrow = &a_prev[bi * ins..(bi + 1) * ins];
                let zrow = &mut z[bi * outs..(bi + 1) * outs];
                for (o, zv) in zrow.iter_mut().enumerate() {
                    let wrow = &w[o * ins..(o + 1) * ins];
                    let mut acc = b[o];
                    for k in 0..ins {
                        acc += wrow[k] * xrow[k];
                    }
                    *zv = acc;
                }
            }
            if l + 1 < layers {
                // ReLU; the derivative at exactly zero is taken as zero
                let a = z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
                pre.push(z);
                post.push(a);
            } else {
                post.push(z.clone());
                pre.push(z);
            }
        }
        Ok(ForwardPass { batch, post, pre })
    }

    /// Output batch only, for evaluation loops.
    pub fn predict(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        let mut fwd = self.forward(x, batch)?;
        Ok(fwd.post.pop().expect("forward pass holds the output batch"))
    }

    /// Backpropagates `grad_out` (d loss / d output, row-major `batch x output_dim`)
    /// through the stored forward pass. Returns the flat parameter gradient.
    pub fn backward(&self, fwd: &ForwardPass, grad_out: &[f64]) -> Result<Vec<f64>> {
        let batch = fwd.batch;
        if grad_out.len() != batch * self.output_dim() {
            return Err(BivError::Shape(format!(
                "output gradient has {} values, expected {} x {}",
                grad_out.len(),
                batch,
                self.output_dim()
            )));
        }
        let layers = self.layer_count();
        let mut grads = vec![0.0; self.params.len()];
        // output layer is linear, so d loss / d pre = grad_out
        let mut dz = grad_out.to_vec();
        for l in (0..layers).rev() {
            let (ins, outs) = (self.sizes[l], self.sizes[l + 1]);
            let (w_off, _) = self.offsets[l];
            let a_prev = &fwd.post[l];
            {
                let (gw, rest) = grads[w_off..].split_at_mut(ins * outs);
                let gb = &mut rest[..outs];
                for bi in 0..batch {
                    let dzrow = &dz[bi * outs..(bi + 1) * outs];
                    let arow = &a_prev[bi * ins..(bi + 1) * ins];
                    for (o, &g) in dzrow.iter().enumerate() {
                        gb[o] += g;
                        if g == 0.0 {
                            continue;
                        }
                        let dwrow = &mut gw[o * ins..(o + 1) * ins];
                        for k in 0..ins {
                            dwrow[k] += g * arow[k];
                        }
                    }
                }
            }
            if l > 0 {
                let w = self.weight(l);
                let mut da = vec![0.0; batch * ins];
                for bi in 0..batch {
                    let dzrow = &dz[bi * outs..(bi + 1) * outs];
                    let darow = &mut da[bi * ins..(bi + 1) * ins];
                    for (o, &g) in dzrow.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let wrow = &w[o * ins..(o + 1) * ins];
                        for k in 0..ins {
                            darow[k] += g * wrow[k];
                        }
                    }
                }
                let z_prev = &fwd.pre[l - 1];
                for (dv, &zv) in da.iter_mut().zip(z_prev) {
                    if zv <= 0.0 {
                        *dv = 0.0;
                    }
                }
                dz = da;
            }
        }
        Ok(grads)
    }

    /// Writes sizes and raw f64 bit patterns; reloading restores the model exactly.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "mlp-checkpoint 1")?;
        let sizes: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        writeln!(out, "sizes {}", sizes.join(" "))?;
        for &p in &self.params {
            writeln!(out, "{:016x}", p.to_bits())?;
        }
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != "mlp-checkpoint 1" {
            return Err(BivError::data(format!(
                "unrecognized checkpoint header {header:?}"
            )));
        }
        let size_line = lines
            .next()
            .transpose()?
            .ok_or_else(|| BivError::data("checkpoint missing sizes line"))?;
        let sizes: Vec<usize> = size_line
            .trim()
            .strip_prefix("sizes")
            .ok_or_else(|| BivError::data("checkpoint missing sizes line"))?
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|e| BivError::data(format!("bad size {t:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        let mut model = Mlp::new(&sizes)?;
        let mut count = 0usize;
        for line in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if count >= model.params.len() {
                return Err(BivError::data(
                    "checkpoint holds more parameters than the layout",
                ));
            }
            let bits = u64::from_str_radix(t, 16)
                .map_err(|e| BivError::data(format!("bad parameter line {t:?}: {e}")))?;
            model.params[count] = f64::from_bits(bits);
            count += 1;
        }
        if count != model.params.len() {
            return Err(BivError::data(format!(
                "checkpoint holds {count} parameters, layout needs {}",
                model.params.len()
            )));
        }
        Ok(model)
    }
}
