use super::{prefixed, uniform_param, AffineLayer, Module};
use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::tensor::Tensor;

const GATES: [&str; 4] = ["input", "forget", "cell", "output"];

/// One LSTM layer. Each gate owns an input block (with bias) and a
/// recurrent block, eight weight matrices in total.
#[derive(Debug)]
pub struct LstmCell {
    input_blocks: Vec<AffineLayer>,
    hidden_blocks: Vec<Tensor>,
    hidden_size: usize,
    state: Option<(Tensor, Tensor)>,
}

impl LstmCell {
    /// Uniform init in `±sqrt(1/hidden)`, forget-gate bias shifted by +1.
    pub fn new(input_size: usize, hidden_size: usize, key: StreamKey) -> Self {
        let bound = (1.0 / hidden_size.max(1) as f64).sqrt();
        let input_blocks = (0..4)
            .map(|g| {
                let k = key.child(g as u64);
                let weight = uniform_param(k.child(0), &[hidden_size, input_size], bound);
                let bias = uniform_param(k.child(1), &[hidden_size], bound);
                if g == 1 {
                    bias.update_data(|b| b.iter_mut().for_each(|v| *v += 1.0));
                }
                AffineLayer { weight, bias }
            })
            .collect();
        let hidden_blocks = (0..4)
            .map(|g| uniform_param(key.child(10 + g as u64), &[hidden_size, hidden_size], bound))
            .collect();
        LstmCell {
            input_blocks,
            hidden_blocks,
            hidden_size,
            state: None,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn input_size(&self) -> usize {
        self.input_blocks[0].input_size()
    }

    /// Zero hidden and cell state for a fresh rollout of `batch` rows.
    pub fn reset(&mut self, batch: usize) {
        let zeros = Tensor::zeros(&[batch, self.hidden_size]);
        self.state = Some((zeros.clone(), zeros));
    }

    pub fn state(&self) -> Option<&(Tensor, Tensor)> {
        self.state.as_ref()
    }

    pub fn step(&mut self, x: &Tensor) -> Result<Tensor> {
        let (h, c) = self.state.as_ref().ok_or(Error::UninitializedState)?;
        let gate = |g: usize| -> Result<Tensor> {
            let from_x = self.input_blocks[g].forward(x)?;
            Ok(from_x.add(&h.linear(&self.hidden_blocks[g], None)?)?)
        };
        let i = gate(0)?.sigmoid();
        let f = gate(1)?.sigmoid();
        let g = gate(2)?.tanh();
        let o = gate(3)?.sigmoid();
        let c_next = f.mul(c)?.add(&i.mul(&g)?)?;
        let h_next = o.mul(&c_next.tanh())?;
        self.state = Some((h_next.clone(), c_next));
        Ok(h_next)
    }
}

impl Module for LstmCell {
    fn parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (name, block) in GATES.iter().zip(&self.input_blocks) {
            out.extend(prefixed(&format!("{name}.x"), block.parameters()));
        }
        for (name, w) in GATES.iter().zip(&self.hidden_blocks) {
            out.push((format!("{name}.h.weight"), w.clone()));
        }
        out
    }
}

/// Stacked LSTM; layer `k + 1` consumes the hidden output of layer `k`.
#[derive(Debug)]
pub struct Lstm {
    cells: Vec<LstmCell>,
}

impl Lstm {
    pub fn new(input_size: usize, hidden_size: usize, layers: usize, key: StreamKey) -> Self {
        let cells = (0..layers.max(1))
            .map(|l| {
                let inp = if l == 0 { input_size } else { hidden_size };
                LstmCell::new(inp, hidden_size, key.child(l as u64))
            })
            .collect();
        Lstm { cells }
    }

    pub fn hidden_size(&self) -> usize {
        self.cells[0].hidden_size()
    }

    pub fn cells(&self) -> &[LstmCell] {
        &self.cells
    }

    pub fn reset(&mut self, batch: usize) {
        self.cells.iter_mut().for_each(|c| c.reset(batch));
    }

    pub fn step(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for cell in &mut self.cells {
            h = cell.step(&h)?;
        }
        Ok(h)
    }
}

impl Module for Lstm {
    fn parameters(&self) -> Vec<(String, Tensor)> {
        self.cells
            .iter()
            .enumerate()
            .flat_map(|(i, c)| prefixed(&format!("cells.{i}"), c.parameters()))
            .collect()
    }
}
