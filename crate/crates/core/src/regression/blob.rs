//! Binary model cache: `HCDR1`, one kind byte, then a little-endian payload.
//!
//! Neighbor indexes are not stored; they are rebuilt from the training
//! inputs on load.

use std::io::{Read, Write};

use super::forest::{Forest, Node, Tree};
use super::gpr::{GprModel, Theta};
use super::hpt::{DistanceNormalization, HptModel, HptParams};
use super::svr::SvrModel;
use super::{FittedRegressor, FittedState, RegressorKind, Standardizer};
use crate::error::{Error, Result};
use crate::model::Matrix;

pub const MAGIC: &[u8; 5] = b"HCDR1";

#[derive(Default)]
struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|&x| self.f64(x));
    }
    fn matrix(&mut self, m: &Matrix) {
        self.u64(m.rows() as u64);
        self.u64(m.cols() as u64);
        m.data().iter().for_each(|&x| self.f64(x));
    }
    fn standardizer(&mut self, s: &Standardizer) {
        self.f64s(&s.mean);
        self.f64s(&s.scale);
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("model blob is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self, elem_size: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(elem_size) > self.buf.len() - self.pos {
            return Err(Error::Format("length field exceeds blob size".into()));
        }
        Ok(n)
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|n| n.saturating_mul(8) <= self.buf.len() - self.pos)
            .ok_or_else(|| Error::Format("matrix size exceeds blob size".into()))?;
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Matrix::new(rows, cols, data)
    }
    fn standardizer(&mut self) -> Result<Standardizer> {
        let mean = self.f64s()?;
        let scale = self.f64s()?;
        if mean.len() != scale.len() {
            return Err(Error::Format("standardizer length mismatch".into()));
        }
        Ok(Standardizer { mean, scale })
    }
}

pub fn to_bytes(model: &FittedRegressor) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.buf.extend_from_slice(MAGIC);
    w.u8(model.kind().tag());
    w.standardizer(&model.input_std);
    w.standardizer(&model.target_std);
    match &model.state {
        FittedState::Gpr(g) => {
            w.matrix(&g.inputs);
            w.f64s(&g.chol_lower);
            w.matrix(&g.alpha);
            w.f64(g.theta.signal_variance);
            w.f64(g.theta.length_scale);
            w.f64(g.theta.noise_variance);
            w.f64(g.jitter);
        }
        FittedState::Svr { model, converged } => {
            w.matrix(&model.centers);
            w.matrix(&model.coefficients);
            w.f64s(&model.bias);
            w.f64(model.rbf_width);
            w.u64(model.support.len() as u64);
            model.support.iter().for_each(|&i| w.u64(i as u64));
            w.u8(*converged as u8);
        }
        FittedState::Rfr(f) => {
            w.u32(f.inputs as u32);
            w.u32(f.outputs as u32);
            match f.oob_error {
                Some(e) => {
                    w.u8(1);
                    w.f64(e);
                }
                None => w.u8(0),
            }
            w.u64(f.trees.len() as u64);
            for t in &f.trees {
                w.u64(t.nodes.len() as u64);
                for node in &t.nodes {
                    match *node {
                        Node::Leaf { value } => {
                            w.u8(0);
                            w.u32(value);
                        }
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => {
                            w.u8(1);
                            w.u32(feature);
                            w.f64(threshold);
                            w.u32(left);
                            w.u32(right);
                        }
                    }
                }
                w.f64s(&t.values);
            }
        }
        FittedState::Hpt(h) => {
            w.u64(h.params.num_neighbors as u64);
            w.f64(h.params.kernel_decay);
            w.u8(match h.params.normalization {
                DistanceNormalization::Absolute => 0,
                DistanceNormalization::Relative => 1,
            });
            w.matrix(h.index.points());
            w.matrix(&h.targets);
        }
    }
    w.buf
}

pub fn from_bytes(bytes: &[u8]) -> Result<FittedRegressor> {
    let mut r = ByteReader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(Error::Format("not a model blob (bad magic)".into()));
    }
    let tag = r.u8()?;
    let kind = RegressorKind::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown model kind {tag}")))?;
    let input_std = r.standardizer()?;
    let target_std = r.standardizer()?;
    let (p, q) = (input_std.dim(), target_std.dim());
    let bad = |what: &str| Error::Format(format!("inconsistent model blob: {what}"));

    let state = match kind {
        RegressorKind::Gpr => {
            let inputs = r.matrix()?;
            let chol_lower = r.f64s()?;
            let alpha = r.matrix()?;
            let theta = Theta {
                signal_variance: r.f64()?,
                length_scale: r.f64()?,
                noise_variance: r.f64()?,
            };
            let jitter = r.f64()?;
            let m = inputs.rows();
            if inputs.cols() != p || alpha.rows() != m || alpha.cols() != q || chol_lower.len() != m * m {
                return Err(bad("gpr shapes"));
            }
            FittedState::Gpr(GprModel {
                inputs,
                chol_lower,
                alpha,
                theta,
                jitter,
            })
        }
        RegressorKind::Svr => {
            let centers = r.matrix()?;
            let coefficients = r.matrix()?;
            let bias = r.f64s()?;
            let rbf_width = r.f64()?;
            let n = r.len(8)?;
            let support = (0..n).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let converged = r.u8()? != 0;
            if centers.cols() != p || coefficients.rows() != centers.rows() || coefficients.cols() != q || bias.len() != q {
                return Err(bad("svr shapes"));
            }
            FittedState::Svr {
                model: SvrModel {
                    centers,
                    coefficients,
                    bias,
                    rbf_width,
                    support,
                },
                converged,
            }
        }
        RegressorKind::Rfr => {
            let inputs = r.u32()? as usize;
            let outputs = r.u32()? as usize;
            let oob_error = match r.u8()? {
                0 => None,
                _ => Some(r.f64()?),
            };
            if inputs != p || outputs != q || q == 0 {
                return Err(bad("forest dimensions"));
            }
            let num_trees = r.len(1)?;
            let mut trees = Vec::with_capacity(num_trees);
            for _ in 0..num_trees {
                let num_nodes = r.len(5)?;
                let mut nodes = Vec::with_capacity(num_nodes);
                for _ in 0..num_nodes {
                    nodes.push(match r.u8()? {
                        0 => Node::Leaf { value: r.u32()? },
                        1 => Node::Split {
                            feature: r.u32()?,
                            threshold: r.f64()?,
                            left: r.u32()?,
                            right: r.u32()?,
                        },
                        t => return Err(Error::Format(format!("unknown tree node tag {t}"))),
                    });
                }
                let values = r.f64s()?;
                // children must point forward so traversal always terminates
                let ok = !nodes.is_empty()
                    && values.len() % q == 0
                    && nodes.iter().enumerate().all(|(i, n)| match *n {
                        Node::Leaf { value } => value as usize + q <= values.len(),
                        Node::Split { feature, left, right, .. } => {
                            (feature as usize) < p
                                && (left as usize) > i
                                && (right as usize) > i
                                && (left as usize) < nodes.len()
                                && (right as usize) < nodes.len()
                        }
                    });
                if !ok {
                    return Err(bad("tree structure"));
                }
                trees.push(Tree {
                    nodes,
                    values,
                    outputs: q,
                });
            }
            if trees.is_empty() {
                return Err(bad("empty forest"));
            }
            FittedState::Rfr(Forest {
                trees,
                inputs,
                outputs,
                oob_error,
            })
        }
        RegressorKind::Hpt => {
            let params = HptParams {
                num_neighbors: r.u64()? as usize,
                kernel_decay: r.f64()?,
                normalization: match r.u8()? {
                    0 => DistanceNormalization::Absolute,
                    1 => DistanceNormalization::Relative,
                    t => return Err(Error::Format(format!("unknown normalization tag {t}"))),
                },
            };
            let inputs = r.matrix()?;
            let targets = r.matrix()?;
            if inputs.cols() != p || targets.cols() != q || inputs.rows() != targets.rows() || inputs.rows() == 0 || params.num_neighbors == 0 {
                return Err(bad("hpt shapes"));
            }
            FittedState::Hpt(HptModel::fit(inputs, targets, params))
        }
    };
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after model blob".into()));
    }
    Ok(FittedRegressor {
        input_std,
        target_std,
        state,
    })
}

pub fn write_model(model: &FittedRegressor, mut out: impl Write) -> Result<()> {
    out.write_all(&to_bytes(model))?;
    Ok(())
}

pub fn read_model(mut input: impl Read) -> Result<FittedRegressor> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    from_bytes(&buf)
}
